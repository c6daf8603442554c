"""Synthetic cue/sign scenes."""

from .generator import CueType, GeneratorParams, Subset, SyntheticScene, generate, split

__all__ = ["CueType", "GeneratorParams", "Subset", "SyntheticScene", "generate", "split"]
