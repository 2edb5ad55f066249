"""Training-kernel backend selection.

Prefers the compiled extension when it was built; otherwise falls back to
the pure-numpy implementation.  Set COALFED_KERNEL=pure to force the
fallback (used by the benchmark).
"""

import os

from . import pure
from .common import (
    OUTPUT_LINEAR,
    OUTPUT_SOFTMAX,
    init_weights,
    layer_slices,
    weight_count,
)

forward = pure.forward

if os.environ.get("COALFED_KERNEL") == "pure":
    BACKEND = "pure"
    train_steps = pure.train_steps
else:
    try:
        from coalfed import _fastkernels

        BACKEND = "cython"
        train_steps = _fastkernels.train_steps
    except ImportError:
        BACKEND = "pure"
        train_steps = pure.train_steps

__all__ = [
    "BACKEND",
    "OUTPUT_LINEAR",
    "OUTPUT_SOFTMAX",
    "forward",
    "init_weights",
    "layer_slices",
    "train_steps",
    "weight_count",
]
