"""Partially blinded class unlearning for small softmax classifiers."""

from .classifier import (
    Checkpoint, Dataset, ModelSpec, TrainConfig, accuracy, load_checkpoint, save_checkpoint, train,
)
from .datasets import gen_blobs, gen_rings, load_csv, save_csv
from .errors import (
    CapacityError, ContaminationError, ContractError, DivergenceError, IntegrityError,
    ParseError, PBUError, ProbeError, ShapeError, TrainingError, UnsupportedVersionError,
)
from .estimators import MLPClassifier, PartiallyBlindedUnlearner
from .evaluation import MetricsReport, MiaConfig, class_split_accuracy, compare_report, mia_accuracy
from .fisher import FisherEstimate, fisher, fisher_diagonal, fisher_full
from .harness import ExperimentConfig, ablate_regularizer, run_experiment, sweep_alpha
from .unlearning import PBUConfig, UnlearnResult, pbu_loss, run_pbu

__version__ = "0.1.0"
