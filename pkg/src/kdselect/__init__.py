"""kdselect: learn which anomaly detector to run on each time series.

A compact toolkit that labels fixed-length windows with the measured
performance of a zoo of classical detectors, trains a small neural selector
on those labels (optionally with performance-derived soft targets, text
metadata alignment, and dynamic sample pruning), and serves selection,
detection, and evaluation over a CLI and HTTP API.
"""

__version__ = "0.1.0"

from kdselect.data import LabeledSeries, WindowSample, load_corpus, extract_windows
from kdselect.detectors import DETECTOR_NAMES, run_detector, score_all
from kdselect.metrics import auc_pr, label_windows
from kdselect.config import TrainConfig, ModuleFlags

__all__ = [
    "__version__",
    "LabeledSeries",
    "WindowSample",
    "load_corpus",
    "extract_windows",
    "DETECTOR_NAMES",
    "run_detector",
    "score_all",
    "auc_pr",
    "label_windows",
    "TrainConfig",
    "ModuleFlags",
]
