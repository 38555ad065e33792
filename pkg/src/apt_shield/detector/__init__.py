"""Deep-transfer-learning APT detector built on a numpy 1D-conv ResNet."""

from .estimator import DTLResNetClassifier, TransferClassifier, transfer, tune
from .metrics import Metrics, compute_metrics, evaluate, mmd, roc_auc
from .network import DESK_FILTERS, FULL_FILTERS, ModelConfig, ResNet1D
from .preprocessing import Dataset, MinMaxNormalizer, make_windows, pearson, preprocess
from .seal import DetectionStatus, detect, detect_and_seal, open_status
from .training import EpochRecord, train, write_history

__all__ = [
    "DESK_FILTERS", "FULL_FILTERS", "Dataset", "DetectionStatus", "DTLResNetClassifier",
    "EpochRecord", "Metrics", "MinMaxNormalizer", "ModelConfig", "ResNet1D",
    "TransferClassifier", "compute_metrics", "detect", "detect_and_seal", "evaluate",
    "make_windows", "mmd", "open_status", "pearson", "preprocess", "roc_auc", "train",
    "transfer", "tune", "write_history",
]
