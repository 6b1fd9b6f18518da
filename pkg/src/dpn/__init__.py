"""Deep Pattern Network for click-through-rate prediction, on a numpy autodiff core."""
from .data import Batch, BehaviorSequence, InteractionRecord, LabeledInstance, Vocabulary
from .model import DPN, TrainConfig
from .refinement import PretrainConfig, RefinementNetwork
from .synthetic import SyntheticSpec, Template

__version__ = "0.1.0"

__all__ = ["Batch", "BehaviorSequence", "InteractionRecord", "LabeledInstance", "Vocabulary", "DPN", "TrainConfig",
           "PretrainConfig", "RefinementNetwork", "SyntheticSpec", "Template"]
