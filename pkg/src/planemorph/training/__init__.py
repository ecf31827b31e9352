# planemorph/training/__init__.py
"""
Training loop, evaluation and gradient checking.
"""
from .trainer import Trainer, RunArtifacts, train, split_dataset, select_supervised
from .evaluation import evaluate, evaluate_pair, aggregate, report_table
from .gradcheck import grad_check, relative_error

__all__ = [
    "Trainer",
    "RunArtifacts",
    "train",
    "split_dataset",
    "select_supervised",
    "evaluate",
    "evaluate_pair",
    "aggregate",
    "report_table",
    "grad_check",
    "relative_error",
]
