"""Effective elastic tensors from embedded-corrector energies."""

__version__ = "0.1.0"
