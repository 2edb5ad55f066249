"""Shared definitions for the training kernels.

Both the compiled kernel and the pure-numpy fallback follow the same
contract so that a run is deterministic within one backend:

* ``sizes`` lists the layer widths ``[d_in, h1, ..., d_out]``.
* The flat weight vector holds, per layer, the row-major weight matrix
  ``(sizes[l], sizes[l+1])`` followed by the bias ``(sizes[l+1],)``.
* Hidden activation is tanh; the output is linear (MSE gradient) or
  softmax (cross-entropy gradient) depending on ``output_kind``.
* One "step" is one gradient update.  With ``batch <= 0`` or
  ``batch >= n`` every step uses the full data set.  Otherwise the row
  permutation is reshuffled every ``ceil(n / batch)`` steps with a
  Fisher-Yates pass driven by the 64-bit LCG below, and batches are
  consecutive slices of that permutation.

The LCG (Knuth's MMIX multiplier) is reimplemented verbatim in the
compiled kernel; keep the two in sync.
"""

import numpy as np

MASK64 = (1 << 64) - 1
LCG_MULT = 6364136223846793005
LCG_INC = 1442695040888963407

OUTPUT_LINEAR = 0
OUTPUT_SOFTMAX = 1


def lcg_next(state: int) -> int:
    return (state * LCG_MULT + LCG_INC) & MASK64


def lcg_shuffle(perm: np.ndarray, state: int) -> int:
    """In-place Fisher-Yates; returns the advanced LCG state."""
    n = perm.shape[0]
    for i in range(n - 1, 0, -1):
        state = lcg_next(state)
        j = state % (i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    return state


def weight_count(sizes) -> int:
    return sum(sizes[l] * sizes[l + 1] + sizes[l + 1] for l in range(len(sizes) - 1))


def layer_slices(sizes):
    """(W_slice, b_slice, n_in, n_out) per layer into the flat vector."""
    out = []
    off = 0
    for l in range(len(sizes) - 1):
        n_in, n_out = sizes[l], sizes[l + 1]
        w = slice(off, off + n_in * n_out)
        off += n_in * n_out
        b = slice(off, off + n_out)
        off += n_out
        out.append((w, b, n_in, n_out))
    return out


def init_weights(sizes, seed: int) -> np.ndarray:
    """Deterministic init: zeros for a single-layer (linear) model,
    LCG-driven uniform Glorot-style draws when hidden layers exist."""
    n = weight_count(sizes)
    w = np.zeros(n, dtype=np.float64)
    if len(sizes) <= 2:
        return w
    state = (seed & MASK64) or 1
    for wsl, bsl, n_in, n_out in layer_slices(sizes):
        scale = np.sqrt(6.0 / (n_in + n_out))
        block = np.empty(n_in * n_out, dtype=np.float64)
        for i in range(block.shape[0]):
            state = lcg_next(state)
            # top 53 bits -> uniform in [0, 1)
            block[i] = (state >> 11) * (1.0 / (1 << 53))
        w[wsl] = (2.0 * block - 1.0) * scale
        # biases stay zero
    return w
