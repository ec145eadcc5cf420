"""epsilon-SVR (RBF kernel) mapping image descriptors to pipeline hyperparameters.

The dual is solved by sequential minimal optimization on the usual 2l-variable
form::

    min  1/2 a^T Q a + p^T a     s.t.  y^T a = 0,  0 <= a <= C

with ``a = [alpha; alpha*]``, ``y = [+1...; -1...]``, ``p = [eps - z; eps + z]``
and ``Q_ij = y_i y_j K(x_i, x_j)``.  Working pairs are chosen by maximal
violation for the first index and second-order gain for the second.  The
regression function is ``f(x) = sum_i (alpha_i - alpha*_i) K(x_i, x) + b``.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .descriptor import LAYOUT_TAG
from .morphpost import AXES, FilterParams
from .tuner import OracleRecord, ParamGrid

log = logging.getLogger(__name__)

MODEL_FORMAT = "angiotune.svr-ensemble"
MODEL_VERSION = 1

C_GRID = (0.1, 1.0, 10.0, 100.0)
EPSILON_GRID = (0.01, 0.05, 0.1)
GAMMA_GRID = ("scale", 0.001, 0.01, 0.1)

_TAU = 1e-12


def rbf_kernel(X: np.ndarray, Y: np.ndarray, gamma: float) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    sq = (X * X).sum(1)[:, None] + (Y * Y).sum(1)[None, :] - 2.0 * X @ Y.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


@dataclass
class DualSolution:
    coef: np.ndarray  # alpha - alpha*, one per training sample
    bias: float
    objective: float
    iterations: int


def solve_svr_dual(K: np.ndarray, z: np.ndarray, C: float, epsilon: float, tol: float = 1e-4,
                   max_iter: Optional[int] = None) -> DualSolution:
    """SMO for the epsilon-SVR dual given a precomputed kernel matrix."""
    l = len(z)
    y = np.concatenate([np.ones(l), -np.ones(l)])
    p = np.concatenate([epsilon - z, epsilon + z])
    idx = np.concatenate([np.arange(l), np.arange(l)])
    Q = (y[:, None] * y[None, :]) * K[np.ix_(idx, idx)]
    QD = np.diag(Q).copy()
    a = np.zeros(2 * l)
    G = p.copy()
    max_iter = max_iter or max(10_000_000, 100 * l)

    it = 0
    while it < max_iter:
        up = ((y > 0) & (a < C)) | ((y < 0) & (a > 0))
        low = ((y < 0) & (a < C)) | ((y > 0) & (a > 0))
        minus_yG = -y * G
        if not up.any() or not low.any():
            break
        cand = np.where(up, minus_yG, -np.inf)
        i = int(np.argmax(cand))
        gmax = cand[i]
        gmax2 = np.max(np.where(low, -minus_yG, -np.inf))
        if gmax + gmax2 < tol:
            break
        # second index: largest decrease of the objective among violating pairs
        b = gmax - minus_yG
        quad = QD[i] + QD - 2.0 * y[i] * y * Q[i]
        quad = np.where(quad > 0, quad, _TAU)
        gain = np.where(low & (b > 0), -(b * b) / quad, np.inf)
        j = int(np.argmin(gain))
        if not np.isfinite(gain[j]):
            break
        it += 1

        ai_old, aj_old = a[i], a[j]
        if y[i] != y[j]:
            q = QD[i] + QD[j] + 2.0 * Q[i, j]
            delta = (-G[i] - G[j]) / max(q, _TAU)
            diff = ai_old - aj_old
            ai, aj = ai_old + delta, aj_old + delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0:
                if ai > C:
                    ai, aj = C, C - diff
            elif aj > C:
                aj, ai = C, C + diff
        else:
            q = QD[i] + QD[j] - 2.0 * Q[i, j]
            delta = (G[i] - G[j]) / max(q, _TAU)
            total = ai_old + aj_old
            ai, aj = ai_old - delta, aj_old + delta
            if total > C:
                if ai > C:
                    ai, aj = C, total - C
            elif aj < 0:
                aj, ai = 0.0, total
            if total > C:
                if aj > C:
                    aj, ai = C, total - C
            elif ai < 0:
                ai, aj = 0.0, total
        a[i], a[j] = ai, aj
        G += Q[i] * (ai - ai_old) + Q[j] * (aj - aj_old)

    # bias from free variables, else the midpoint of the feasible interval
    yG = y * G
    at_upper = a >= C
    at_lower = a <= 0
    free = ~at_upper & ~at_lower
    if free.any():
        rho = float(yG[free].mean())
    else:
        ub_mask = (at_upper & (y < 0)) | (at_lower & (y > 0))
        lb_mask = (at_upper & (y > 0)) | (at_lower & (y < 0))
        ub = yG[ub_mask].min() if ub_mask.any() else np.inf
        lb = yG[lb_mask].max() if lb_mask.any() else -np.inf
        rho = float(0.5 * (ub + lb))
    objective = float(0.5 * a @ (G - p) + p @ a)
    coef = a[:l] - a[l:]
    return DualSolution(coef, -rho, objective, it)


@dataclass
class SvrModel:
    support_vectors: np.ndarray  # in z-scored feature space
    dual_coef: np.ndarray
    bias: float
    gamma: float
    C: float
    epsilon: float
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    log_target: bool
    target_mean: float
    target_scale: float

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        """Prediction in standardized target units."""
        Xs = (np.atleast_2d(np.asarray(X, dtype=np.float64)) - self.feature_mean) / self.feature_scale
        if len(self.dual_coef) == 0:
            return np.full(len(Xs), self.bias)
        return rbf_kernel(Xs, self.support_vectors, self.gamma) @ self.dual_coef + self.bias

    def transform_target(self, y) -> np.ndarray:
        t = np.asarray(y, dtype=np.float64)
        if self.log_target:
            t = np.log(t)
        return (t - self.target_mean) / self.target_scale

    def predict(self, X: np.ndarray) -> np.ndarray:
        t = self.decision_function(X) * self.target_scale + self.target_mean
        return np.exp(t) if self.log_target else t

    def to_dict(self) -> dict:
        return {
            "support_vectors": self.support_vectors.tolist(),
            "dual_coef": self.dual_coef.tolist(),
            "bias": self.bias,
            "gamma": self.gamma,
            "C": self.C,
            "epsilon": self.epsilon,
            "feature_mean": self.feature_mean.tolist(),
            "feature_scale": self.feature_scale.tolist(),
            "target_transform": "log" if self.log_target else "identity",
            "target_mean": self.target_mean,
            "target_scale": self.target_scale,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SvrModel":
        n_feat = len(d["feature_mean"])
        return cls(
            support_vectors=np.asarray(d["support_vectors"], dtype=np.float64).reshape(-1, n_feat),
            dual_coef=np.asarray(d["dual_coef"], dtype=np.float64),
            bias=float(d["bias"]),
            gamma=float(d["gamma"]),
            C=float(d["C"]),
            epsilon=float(d["epsilon"]),
            feature_mean=np.asarray(d["feature_mean"], dtype=np.float64),
            feature_scale=np.asarray(d["feature_scale"], dtype=np.float64),
            log_target=d["target_transform"] == "log",
            target_mean=float(d["target_mean"]),
            target_scale=float(d["target_scale"]),
        )


def _scaler(a: np.ndarray):
    mean = a.mean(axis=0)
    scale = a.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return mean, scale


def scale_gamma(X: np.ndarray) -> float:
    """``1 / (d * var)`` of the z-scored features."""
    X = np.asarray(X, dtype=np.float64)
    mean, scale = _scaler(X)
    var = ((X - mean) / scale).var()
    return 1.0 / (X.shape[1] * var) if var > 0 else 1.0 / X.shape[1]


def train_svr(X, y, C: float = 1.0, epsilon: float = 0.1, gamma="scale", *, log_target: bool = False,
              tol: float = 1e-4) -> SvrModel:
    """Fit one epsilon-SVR on z-scored features and a standardized target."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y) or len(y) < 2:
        raise ValueError(f"need >= 2 samples with matching X/y, got X{X.shape}, y{y.shape}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite values in training data")
    if not (C > 0 and epsilon >= 0):
        raise ValueError("C must be positive and epsilon non-negative")
    if log_target and np.any(y <= 0):
        raise ValueError("log target transform needs strictly positive targets")
    if gamma == "scale":
        gamma = scale_gamma(X)
    gamma = float(gamma)
    if not gamma > 0:
        raise ValueError("gamma must be positive")

    fmean, fscale = _scaler(X)
    Xs = (X - fmean) / fscale
    t = np.log(y) if log_target else y
    tmean = float(t.mean())
    tscale = float(t.std())
    if not tscale > 0:
        tscale = 1.0
    z = (t - tmean) / tscale

    sol = solve_svr_dual(rbf_kernel(Xs, Xs, gamma), z, C, epsilon, tol)
    sv = sol.coef != 0
    return SvrModel(Xs[sv].copy(), sol.coef[sv].copy(), sol.bias, gamma, float(C), float(epsilon),
                    fmean, fscale, log_target, tmean, tscale)


# --- hyperparameter selection -------------------------------------------

@dataclass
class SvrSelection:
    C: float
    epsilon: float
    gamma: float
    cv_mae: float  # inner-CV MAE of the selected combination (standardized target)
    baseline_mae: float  # inner-CV MAE of predicting the training mean
    votes: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.C, self.epsilon, self.gamma))


def _folds(n: int, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    return [np.sort(f) for f in np.array_split(rng.permutation(n), k)]


def select_hyperparams(X, y, C_grid: Sequence[float] = C_GRID, epsilon_grid: Sequence[float] = EPSILON_GRID,
                       gamma_grid: Sequence = GAMMA_GRID, outer_folds: int = 5, inner_folds: int = 3, *,
                       seed: int = 0, log_target: bool = False, tol: float = 1e-4) -> SvrSelection:
    """Nested cross-validated choice of ``(C, epsilon, gamma)``.

    Each outer fold runs an inner CV that picks the combination with the
    lowest mean absolute error on the standardized target; the combination
    chosen by most outer folds is returned.  Ties (in MAE and in votes) prefer
    smaller C, then larger epsilon, then smaller gamma.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    min_inner_train = (n - math.ceil(n / outer_folds)) - math.ceil((n - math.ceil(n / outer_folds)) / inner_folds)
    if n < outer_folds or min_inner_train < 2:
        raise ValueError(f"{n} samples are too few for {outer_folds}x{inner_folds} nested cross-validation")

    g_scale = scale_gamma(X)
    gammas = sorted({float(g_scale if g == "scale" else g) for g in gamma_grid})
    cands = sorted({(float(c), float(e), g) for c in C_grid for e in epsilon_grid for g in gammas},
                   key=lambda t: (t[0], -t[1], t[2]))
    rng = np.random.default_rng(seed)
    t_all = np.log(y) if log_target else y

    votes: dict = {}
    inner_sum = np.zeros(len(cands))
    base_sum = 0.0
    for oi, test_idx in enumerate(_folds(n, outer_folds, rng)):
        train_idx = np.setdiff1d(np.arange(n), test_idx)
        t_tr = t_all[train_idx]
        tm, ts = t_tr.mean(), t_tr.std()
        ts = ts if ts > 0 else 1.0
        zt = (t_all - tm) / ts
        inner = _folds(len(train_idx), inner_folds, np.random.default_rng([seed, oi]))
        errs = np.zeros(len(cands))
        base = 0.0
        count = 0
        for val_local in inner:
            val = train_idx[val_local]
            fit = np.setdiff1d(train_idx, val)
            base += np.abs(zt[val] - zt[fit].mean()).sum()
            count += len(val)
            for ci, (c, e, g) in enumerate(cands):
                m = train_svr(X[fit], y[fit], c, e, g, log_target=log_target, tol=tol)
                pred = m.predict(X[val])
                pz = ((np.log(pred) if log_target else pred) - tm) / ts
                errs[ci] += np.abs(pz - zt[val]).sum()
        errs /= count
        inner_sum += errs
        base_sum += base / count
        best = int(np.argmin(errs))  # first minimum = preferred on ties
        votes[cands[best]] = votes.get(cands[best], 0) + 1

    top = max(votes.values())
    winner = next(c for c in cands if votes.get(c, 0) == top)
    wi = cands.index(winner)
    return SvrSelection(winner[0], winner[1], winner[2], float(inner_sum[wi] / outer_folds),
                        float(base_sum / outer_folds),
                        {f"C={c:g},eps={e:g},gamma={g:g}": v for (c, e, g), v in votes.items()})


# --- ensembles -----------------------------------------------------------

@dataclass
class SvrEnsemble:
    filter: str
    models: dict  # axis name -> SvrModel
    grid: ParamGrid
    layout: str = LAYOUT_TAG
    selection: dict = field(default_factory=dict)

    def __post_init__(self):
        missing = set(AXES[self.filter]) - set(self.models)
        if missing:
            raise ValueError(f"ensemble lacks models for axes {sorted(missing)}")

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "filter": self.filter,
            "descriptor_layout": self.layout,
            "grid": self.grid.to_dict(),
            "selection": self.selection,
            "models": {a: self.models[a].to_dict() for a in AXES[self.filter]},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SvrEnsemble":
        if d.get("format") != MODEL_FORMAT:
            raise ValueError("not an SVR ensemble model file")
        if d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {d.get('version')}")
        return cls(d["filter"], {a: SvrModel.from_dict(m) for a, m in d["models"].items()},
                   ParamGrid.from_dict(d["grid"]), d["descriptor_layout"], d.get("selection", {}))

    def save(self, path, config: Optional[Mapping] = None) -> None:
        d = self.to_dict()
        if config is not None:
            d["config"] = config
        Path(path).write_text(json.dumps(d, indent=1, sort_keys=True))

    @classmethod
    def load(cls, path) -> "SvrEnsemble":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def predict_raw(self, phi: np.ndarray) -> dict:
        return {a: float(self.models[a].predict(phi)[0]) for a in AXES[self.filter]}


def predict_params(ensemble: SvrEnsemble, phi: np.ndarray, layout: str = LAYOUT_TAG) -> FilterParams:
    """Predict, invert the target transform, clip to bounds and snap to the grid."""
    if layout != ensemble.layout:
        raise ValueError(f"descriptor layout {layout!r} does not match model layout {ensemble.layout!r}")
    phi = np.asarray(phi, dtype=np.float64).ravel()
    if phi.size != ensemble.models[AXES[ensemble.filter][0]].feature_mean.size:
        raise ValueError(f"descriptor has {phi.size} entries, model expects "
                         f"{ensemble.models[AXES[ensemble.filter][0]].feature_mean.size}")
    return ensemble.grid.snap(ensemble.predict_raw(phi))


def train_ensemble(X, records: Sequence[OracleRecord], grid: ParamGrid, *,
                   C_grid=C_GRID, epsilon_grid=EPSILON_GRID, gamma_grid=GAMMA_GRID,
                   outer_folds: int = 5, inner_folds: int = 3, seed: int = 0, threads: int = 1,
                   tol: float = 1e-4) -> SvrEnsemble:
    """One nested-CV-tuned SVR per hyperparameter axis of ``grid.filter``."""
    X = np.asarray(X, dtype=np.float64)
    filt = grid.filter
    if len(records) != len(X):
        raise ValueError("need one descriptor per oracle record")
    if any(r.filter != filt for r in records):
        raise ValueError(f"all records must be for {filt}")

    def fit_axis(axis):
        y = np.array([float(getattr(r.params, axis.name)) for r in records])
        sel = select_hyperparams(X, y, C_grid, epsilon_grid, gamma_grid, outer_folds, inner_folds,
                                 seed=seed, log_target=axis.log_target, tol=tol)
        model = train_svr(X, y, sel.C, sel.epsilon, sel.gamma, log_target=axis.log_target, tol=tol)
        log.info("%s/%s: C=%g eps=%g gamma=%g cv_mae=%.4f baseline=%.4f", filt, axis.name,
                 sel.C, sel.epsilon, sel.gamma, sel.cv_mae, sel.baseline_mae)
        return axis.name, model, sel

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            fitted = list(pool.map(fit_axis, grid.axes))
    else:
        fitted = [fit_axis(a) for a in grid.axes]
    models = {name: m for name, m, _ in fitted}
    selection = {name: {"C": s.C, "epsilon": s.epsilon, "gamma": s.gamma, "cv_mae": s.cv_mae,
                        "baseline_mae": s.baseline_mae} for name, _, s in fitted}
    return SvrEnsemble(filt, models, grid, LAYOUT_TAG, selection)

