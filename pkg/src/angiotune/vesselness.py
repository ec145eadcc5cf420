"""Meijering, Frangi and Sato vesselness responses on Hessian eigenvalues.

Eigenvalues come from :func:`angiotune.imgcore.hessian_eigen` evaluated on the
raw (not inverted) image, where a dark vessel on a bright background has a
large *positive* eigenvalue across the vessel.  Each response has a sign gate:
Meijering keeps ``lam1 > 0`` and Sato keeps ``lam2 > 0`` (dark-ridge form),
while Frangi zeroes ``lam2 > 0`` (bright-ridge form).  With
``dark_vessels=True`` the eigenvalues are oriented per filter so that dark
vessels pass the gate; ``dark_vessels=False`` targets bright vessels.

Frangi and Sato take the eigenvalues ordered ``|lam1| <= |lam2|`` so that the
sign gate acts on the dominant (cross-vessel) eigenvalue, and their
anisotropy ratio is ``R_A = |lam2| / |lam1|`` (dominant over minor, large on a
tube).  The minor eigenvalue of an ideal tube is zero, so ``R_A`` is taken in
its limit: ``R_A = inf`` when ``lam1 == 0`` and ``lam2 != 0``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .imgcore import (
    BY_ABS_ASC,
    BY_ABS_DESC,
    EigenField,
    gaussian_hessian,
    hessian_eigen,
    normalize_minmax,
)

FILTERS = ("meijering", "frangi", "sato")

# eigen ordering consumed by each response
EIGEN_ORDER = {"meijering": BY_ABS_DESC, "frangi": BY_ABS_ASC, "sato": BY_ABS_ASC}

# multiplier applied to raw-image eigenvalues when vessels are dark
_DARK_SIGN = {"meijering": 1.0, "frangi": -1.0, "sato": 1.0}

MEIJERING_ALPHA = -0.5


@dataclass
class VesselnessResponse:
    data: np.ndarray
    sigma_used: tuple
    filter: str


def _oriented(eig: EigenField, filter: str, dark_vessels: bool, order: str):
    if eig.order != order:
        raise ValueError(f"{filter} expects eigenvalues ordered {order}, got {eig.order}")
    s = _DARK_SIGN[filter] if dark_vessels else -_DARK_SIGN[filter]
    return s * eig.lam1, s * eig.lam2


def _dominance_ratio(minor: np.ndarray, major: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        ra = np.abs(major) / np.abs(minor)
    ra[(minor == 0) & (major == 0)] = 0.0
    return ra


def meijering_response(eig: EigenField, alpha: float = MEIJERING_ALPHA, *,
                       dark_vessels: bool = True, sigma: Optional[float] = None) -> VesselnessResponse:
    """``V = max(0, lam1 + alpha * lam2)`` with ``|lam1| >= |lam2|``."""
    lam1, lam2 = _oriented(eig, "meijering", dark_vessels, BY_ABS_DESC)
    v = np.maximum(0.0, lam1 + alpha * lam2)
    return VesselnessResponse(v, (sigma,), "meijering")


def frangi_response(eig: EigenField, alpha: float, beta: float, *,
                    dark_vessels: bool = True, sigma: Optional[float] = None) -> VesselnessResponse:
    """Frangi-type response.

    ``V = 0`` where ``lam2 > 0``, else
    ``(1 - exp(-R_A^2 / 2 alpha^2)) * (1 - exp(-S^2 / 2 beta^2))`` with
    ``R_A = |lam2| / |lam1|`` and ``S = sqrt(lam1^2 + lam2^2)``.
    """
    if not (alpha > 0 and beta > 0):
        raise ValueError("alpha and beta must be positive")
    lam1, lam2 = _oriented(eig, "frangi", dark_vessels, BY_ABS_ASC)
    ra = _dominance_ratio(lam1, lam2)
    s2 = lam1 * lam1 + lam2 * lam2
    with np.errstate(over="ignore"):
        shape = -np.expm1(-(ra * ra) / (2.0 * alpha * alpha))
    v = shape * -np.expm1(-s2 / (2.0 * beta * beta))
    v[lam2 > 0] = 0.0
    return VesselnessResponse(v, (sigma,), "frangi")


def sato_response(eig: EigenField, sigma: float, *, dark_vessels: bool = True) -> VesselnessResponse:
    """Sato-type response with the scale reused as the sensitivity constant.

    ``V = 0`` where ``lam2 <= 0``, else
    ``(1 - exp(-R_A^2 / 2 s^2)) * exp(-R_B^2 / 2 s^2) * (1 - exp(-S^2 / 2 s^2))``
    with ``R_A = |lam2| / |lam1|`` (unbounded where ``lam1 == 0``, giving a
    shape factor of 1) and ``R_B = |lam1 + lam2| / S`` (0 where ``S == 0``).
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    lam1, lam2 = _oriented(eig, "sato", dark_vessels, BY_ABS_ASC)
    two_s2 = 2.0 * sigma * sigma
    ra = _dominance_ratio(lam1, lam2)
    smag = np.hypot(lam1, lam2)
    with np.errstate(divide="ignore", invalid="ignore"):
        rb = np.where(smag > 0, np.abs(lam1 + lam2) / smag, 0.0)
    with np.errstate(over="ignore"):
        v = -np.expm1(-(ra * ra) / two_s2)
    v = v * np.exp(-(rb * rb) / two_s2) * -np.expm1(-(smag * smag) / two_s2)
    v[lam2 <= 0] = 0.0
    return VesselnessResponse(v, (sigma,), "sato")


def response_from_eigen(eig: EigenField, filter: str, sigma: float, alpha: Optional[float] = None,
                        beta: Optional[float] = None, dark_vessels: bool = True) -> VesselnessResponse:
    """Dispatch to the raw (un-normalized) response of ``filter``."""
    if filter == "meijering":
        return meijering_response(eig, dark_vessels=dark_vessels, sigma=sigma)
    if filter == "frangi":
        return frangi_response(eig, alpha, beta, dark_vessels=dark_vessels, sigma=sigma)
    if filter == "sato":
        return sato_response(eig, sigma, dark_vessels=dark_vessels)
    raise ValueError(f"unknown filter {filter!r}; expected one of {FILTERS}")


def filter_eigen(img: np.ndarray, filter: str, sigma: float) -> EigenField:
    """Hessian eigenvalues of ``img`` at ``sigma`` in the order ``filter`` expects."""
    return hessian_eigen(gaussian_hessian(img, sigma), EIGEN_ORDER[filter])


def apply_filter(img: np.ndarray, params, *, dark_vessels: bool = True,
                 sigmas: Optional[Sequence[float]] = None) -> VesselnessResponse:
    """Min-max normalized vesselness response for ``params``.

    A single scale ``params.sigma`` is used unless ``sigmas`` is given, in
    which case the pixelwise maximum over those scales is taken before
    normalization.
    """
    scales = tuple(sigmas) if sigmas else (params.sigma,)
    raw = None
    for s in scales:
        eig = filter_eigen(img, params.filter, s)
        v = response_from_eigen(eig, params.filter, s, params.alpha, params.beta, dark_vessels).data
        raw = v if raw is None else np.maximum(raw, v)
    return VesselnessResponse(normalize_minmax(raw), scales, params.filter)
