"""Ontology-aware cross-modal embedding training and zero-shot retrieval.

The package trains a small two-head network that embeds sketches and images
of the same classes into one space, regularized by a per-class ontology
memory, and evaluates it by retrieving images from sketch queries over
classes never seen in training.

Layers, bottom up:

- ``diffcore``: tape-based reverse-mode autodiff over 2-D float64 tensors.
- ``memory``: the per-class key dictionary with momentum updates.
- ``losses``: classification, semantic distillation, inter-class
  independence, and kernel-based consistency terms.
- ``model``: the trunk + two heads, and the frozen teacher.
- ``dataset`` / ``retrieval``: synthetic benchmark data, splits, storage,
  and mAP / Prec@K evaluation in real and sign-binarized modes.
- ``trainer``: the full training loop, checkpoints, zero-shot evaluation.
- ``estimator``: scikit-learn style ``fit``/``transform``/``predict`` facade.
- ``cli``: the ``oan`` command.
"""

from .dataset import (
    CrossModalDataset,
    SeenUnseenSplit,
    generate_synthetic,
    load_dataset,
    make_split,
    save_dataset,
)
from .diffcore import GradCheckReport, Tape, Tensor, grad_check
from .errors import (
    ConfigError,
    DegenerateVectorError,
    DeterminismError,
    DistributionError,
    EmptyBatchError,
    FormatError,
    InsufficientPairsError,
    LabelError,
    NumericError,
    OanError,
    ShapeError,
    VersionError,
)
from .estimator import OanEmbedder
from .losses import (
    HypersphereKernel,
    InterClassLossConfig,
    LossWeights,
    classification_loss,
    hcr_loss,
    hypersphere_similarity,
    inter_class_loss,
    self_distill_hcr,
    semantic_loss,
    teacher_student_hcr,
    total_loss,
)
from .memory import BatchValues, OntologyDictionary, init_dictionary
from .model import IMAGE, SKETCH, OanModel, TeacherModel, init_model
from .retrieval import (
    RetrievalReport,
    average_precision,
    evaluate_retrieval,
    precision_at_k,
)
from .trainer import (
    LoadedCheckpoint,
    TrainConfig,
    TrainResult,
    TrainState,
    evaluate_split,
    load_checkpoint,
    run_training,
    save_checkpoint,
)

__version__ = "0.1.0"

__all__ = [
    "BatchValues",
    "ConfigError",
    "CrossModalDataset",
    "DegenerateVectorError",
    "DeterminismError",
    "DistributionError",
    "EmptyBatchError",
    "FormatError",
    "GradCheckReport",
    "HypersphereKernel",
    "IMAGE",
    "InsufficientPairsError",
    "InterClassLossConfig",
    "LabelError",
    "LoadedCheckpoint",
    "LossWeights",
    "NumericError",
    "OanEmbedder",
    "OanError",
    "OanModel",
    "OntologyDictionary",
    "RetrievalReport",
    "SKETCH",
    "SeenUnseenSplit",
    "ShapeError",
    "Tape",
    "TeacherModel",
    "Tensor",
    "TrainConfig",
    "TrainResult",
    "TrainState",
    "VersionError",
    "average_precision",
    "classification_loss",
    "evaluate_retrieval",
    "evaluate_split",
    "generate_synthetic",
    "grad_check",
    "hcr_loss",
    "hypersphere_similarity",
    "init_dictionary",
    "init_model",
    "inter_class_loss",
    "load_checkpoint",
    "load_dataset",
    "make_split",
    "precision_at_k",
    "run_training",
    "save_checkpoint",
    "save_dataset",
    "self_distill_hcr",
    "semantic_loss",
    "teacher_student_hcr",
    "total_loss",
    "__version__",
]
