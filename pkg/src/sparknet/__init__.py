"""SparkNet keyword spotting: MFCC frontend, sparse stochastic-gate binarizer and linear head."""

__version__ = "0.1.0"

from sparknet.audio import AudioClip, MfccConfig, compute_mfcc, load_wav
from sparknet.gates import GateConfig, sample_gates, sparsity_loss
from sparknet.model import ModelConfig, SparkNet, count_macs

__all__ = [
    "AudioClip",
    "GateConfig",
    "MfccConfig",
    "ModelConfig",
    "SparkNet",
    "compute_mfcc",
    "count_macs",
    "load_wav",
    "sample_gates",
    "sparsity_loss",
    "__version__",
]
