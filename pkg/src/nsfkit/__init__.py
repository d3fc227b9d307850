"""Neural source-filter waveform models with a multi-resolution spectral loss."""
from .dsp import StftConfig, Waveform
from .loss import MultiResLossConfig, multi_res_loss, spectral_distance, spectral_distance_backward
from .models import FeatureSequence, ModelConfig, NSFModel, build_model, count_parameters
from .source import SourceConfig
from .train import AdamState, TrainConfig, adam_step, segment, train

__all__ = [
    "AdamState", "FeatureSequence", "ModelConfig", "MultiResLossConfig", "NSFModel",
    "SourceConfig", "StftConfig", "TrainConfig", "Waveform", "adam_step", "build_model",
    "count_parameters", "multi_res_loss", "segment", "spectral_distance",
    "spectral_distance_backward", "train",
]
__version__ = "0.1.0"
