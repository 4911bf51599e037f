"""Interlocutor-aware facial gesture generation with a conditional Glow."""
from .checkpoint import load_checkpoint, load_model, save_checkpoint
from .evaluation import CONDITIONS, LLTable, mismatch_table
from .features.dataset import SyntheticConfig, generate_synthetic_corpus, split_dataset, window_sessions
from .flow import ActNorm, AffineCoupling, GlowStack, InvertibleLinear
from .model import DyadFlowModel, GenerationConfig, ModelConfig
from .train import TrainConfig, Trainer

__all__ = [
    "ActNorm", "AffineCoupling", "CONDITIONS", "DyadFlowModel", "GenerationConfig",
    "GlowStack", "InvertibleLinear", "LLTable", "ModelConfig", "TrainConfig", "Trainer",
    "SyntheticConfig", "generate_synthetic_corpus", "load_checkpoint", "load_model", "mismatch_table",
    "save_checkpoint", "split_dataset", "window_sessions",
]
