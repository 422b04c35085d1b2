"""Unsupervised anomalous sound detection for machine condition monitoring.

Two detectors built on a machine-activity auxiliary task (the detection
error itself, and GMM outlier scores on the model's embeddings), an
autoencoder baseline in labeled and label-free variants, score
standardization and ensembling, AUC evaluation across SNR conditions, and
a synthetic corpus generator with SNR-controlled noise mixing.
"""

__version__ = "0.1.0"

from .audio import AudioClip, mix_at_snr, read_wav, write_wav
from .config import ExperimentConfig, load_config
from .corpus import CorpusManifest, GenerationConfig, generate_corpus
from .features import FeatureConfig, FeatureMatrix, frame_labels, logmel, windows
from .pipeline import Experiment
from .synth import ActivityIntervals, SynthSpec, synth_machine_clip

__all__ = [
    "ActivityIntervals",
    "AudioClip",
    "CorpusManifest",
    "Experiment",
    "ExperimentConfig",
    "FeatureConfig",
    "FeatureMatrix",
    "GenerationConfig",
    "SynthSpec",
    "frame_labels",
    "generate_corpus",
    "load_config",
    "logmel",
    "mix_at_snr",
    "read_wav",
    "synth_machine_clip",
    "windows",
    "write_wav",
]
