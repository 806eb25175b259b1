"""Semi-recurrent convolutional VAE-GAN for sequences of piano-roll bars."""

from .generation import GenSpec, generate_sequence
from .losses import LossReport
from .mididata import PianoRollSequence, export_midi, load_dataset, parse_midi, save_dataset, to_piano_roll
from .model import Architecture, HybridModel, LatentParams, reparameterize
from .training import TrainConfig, train_loop, train_step

__version__ = "0.1.0"

__all__ = [
    "Architecture",
    "GenSpec",
    "HybridModel",
    "LatentParams",
    "LossReport",
    "PianoRollSequence",
    "TrainConfig",
    "export_midi",
    "generate_sequence",
    "load_dataset",
    "parse_midi",
    "reparameterize",
    "save_dataset",
    "to_piano_roll",
    "train_loop",
    "train_step",
]
