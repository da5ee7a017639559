"""Supervised fix-at-zero learning."""

from .checkpoint import load_checkpoint, save_checkpoint
from .mlp import Adam, MlpStack, classifier_loss_and_grads, softmax2
from .prop import (
    FixSet,
    LabeledSet,
    PropFixer,
    WeightedMLPClassifier,
    build_reduced_mip,
    compute_weights,
    f1_zero_class,
    label_dataset,
    label_instance,
    normalized_rc,
    weighted_ce_loss,
)

__all__ = [
    "Adam", "FixSet", "LabeledSet", "MlpStack", "PropFixer", "WeightedMLPClassifier", "build_reduced_mip",
    "classifier_loss_and_grads", "compute_weights", "f1_zero_class", "label_dataset", "label_instance",
    "load_checkpoint", "normalized_rc", "save_checkpoint", "softmax2", "weighted_ce_loss",
]
