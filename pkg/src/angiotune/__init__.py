"""Hessian vesselness segmentation with per-image oracle and learned hyperparameter tuning."""

__version__ = "0.1.0"

from .cineselect import CineSequence, best_frame, frame_histogram
from .descriptor import DESCRIPTOR_DIM, extract_descriptor
from .evalharness import DatasetManifest, EvalReport, ingest_dca1, make_folds, run_experiment
from .imgcore import gaussian_hessian, hessian_eigen, load_image, load_mask, save_image, save_mask, strip_dark_borders
from .metrics import dice
from .morphpost import FilterParams, postprocess, segment
from .svrtune import SvrEnsemble, predict_params, train_ensemble, train_svr
from .tuner import ParamGrid, default_grid, mean_params, oracle_search, snap_to_grid
from .vesselness import FILTERS, apply_filter

__all__ = [
    "CineSequence", "best_frame", "frame_histogram",
    "DESCRIPTOR_DIM", "extract_descriptor",
    "DatasetManifest", "EvalReport", "ingest_dca1", "make_folds", "run_experiment",
    "gaussian_hessian", "hessian_eigen", "load_image", "load_mask", "save_image", "save_mask",
    "strip_dark_borders", "dice", "FilterParams", "postprocess", "segment",
    "SvrEnsemble", "predict_params", "train_ensemble", "train_svr",
    "ParamGrid", "default_grid", "mean_params", "oracle_search", "snap_to_grid",
    "FILTERS", "apply_filter",
]
