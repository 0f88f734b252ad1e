"""Embodiment-equivariant action spaces: codecs, audits and a toy diffusion policy."""

__version__ = "0.1.0"
