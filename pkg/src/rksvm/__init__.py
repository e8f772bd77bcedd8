"""Two-step kernel SVM classifiers with robust counterparts under l_p input uncertainty."""

from rksvm.bounds import INF
from rksvm.dataset import Dataset, SplitSpec, TransformParams, load_csv
from rksvm.kernel import KernelSpec
from rksvm.svm import MulticlassClassifier, TrainedClassifier, train_binary, train_multiclass

__all__ = [
    "INF",
    "Dataset",
    "KernelSpec",
    "MulticlassClassifier",
    "SplitSpec",
    "TrainedClassifier",
    "TransformParams",
    "load_csv",
    "train_binary",
    "train_multiclass",
]

__version__ = "0.1.0"
