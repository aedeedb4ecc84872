"""Noisy-label learning with LID-weighted co-training and label correction."""
from .trainer import TrainConfig, Trainer

__version__ = "0.1.0"
__all__ = ["TrainConfig", "Trainer"]
