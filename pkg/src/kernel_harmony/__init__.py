"""Unpaired CT reconstruction-kernel harmonization with a multipath cycle GAN,
plus emphysema scoring and covariate ANOVA for evaluating it."""

__version__ = "0.1.0"

from .domains import (DomainRegistry, KernelDomain, TranslationPath, default_registry, enumerate_directions,
                      enumerate_paths, resolve_generator)
from .errors import (CheckpointError, CollinearityError, ConfigurationError, HarmonyError, IngestionError,
                     ScoringError, ShapeError, TrainingDivergedError, UnknownDomainError, WiringError)
from .losses import LossConfig, StepLosses
from .networks import ArchConfig, ModelBundle
from .trainer import TrainConfig, learning_rate

__all__ = [
    "ArchConfig", "CheckpointError", "CollinearityError", "ConfigurationError", "DomainRegistry", "HarmonyError",
    "IngestionError", "KernelDomain", "LossConfig", "ModelBundle", "ScoringError", "ShapeError", "StepLosses",
    "TrainConfig", "TrainingDivergedError", "TranslationPath", "UnknownDomainError", "WiringError",
    "default_registry", "enumerate_directions", "enumerate_paths", "learning_rate", "resolve_generator",
]
