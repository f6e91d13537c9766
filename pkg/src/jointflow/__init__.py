"""Normalizing flows with rule-based and joint conditional training."""

from .autograd import AdamState, Node, adam_step, backward, finite_diff_check, no_grad
from .flows import FlowModel, image_model, load_model, save_model, toy_model, vector_model
from .objectives import CondObjectiveConfig, RuleLoss, loss_conditional, sample_conditional

__version__ = "0.1.0"

__all__ = [
    "AdamState", "CondObjectiveConfig", "FlowModel", "Node", "RuleLoss", "adam_step", "backward",
    "finite_diff_check", "image_model", "load_model", "loss_conditional", "no_grad", "sample_conditional",
    "save_model", "toy_model", "vector_model",
]
