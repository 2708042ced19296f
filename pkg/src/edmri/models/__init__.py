from edmri.models.checkpoint import load_checkpoint, save_checkpoint
from edmri.models.estimators import (
    MODEL_KINDS,
    FusionClassifier,
    LinearSVMClassifier,
    LogisticRegressionClassifier,
    MLPClassifier,
    ModelConfig,
    MultitaskClassifier,
    fit_model,
)
from edmri.models.losses import (
    class_weights,
    mtl_loss,
    weighted_ce,
    weighted_ce_logits,
    weighted_hinge,
)
from edmri.models.networks import fusion_forward

__all__ = [
    "MODEL_KINDS",
    "FusionClassifier",
    "LinearSVMClassifier",
    "LogisticRegressionClassifier",
    "MLPClassifier",
    "ModelConfig",
    "MultitaskClassifier",
    "class_weights",
    "fit_model",
    "fusion_forward",
    "load_checkpoint",
    "mtl_loss",
    "save_checkpoint",
    "weighted_ce",
    "weighted_ce_logits",
    "weighted_hinge",
]
