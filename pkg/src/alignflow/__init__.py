"""Desk-scale building blocks for alignment-based speech-synthesis training:
monotonic alignment search with annealed exploration noise, an adversarially
trained stochastic duration model, transformer-augmented coupling flows, and
a speaker-conditioned text encoder, all on a minimal float64 autodiff core.
"""

from . import alignment, duration, encoder, flows, harness, numerics
from .numerics import AdamW, AdamWConfig, Rng, Tensor, check_grad

__all__ = [
    "AdamW",
    "AdamWConfig",
    "Rng",
    "Tensor",
    "check_grad",
    "alignment",
    "duration",
    "encoder",
    "flows",
    "harness",
    "numerics",
]

__version__ = "0.1.0"
