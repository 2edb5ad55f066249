"""Pure-numpy training kernel (fallback when the compiled one is absent)."""

import numpy as np

from .common import (
    MASK64,
    OUTPUT_SOFTMAX,
    layer_slices,
    lcg_shuffle,
)


def _forward(X, W, B):
    """Returns the list of layer activations, input first."""
    acts = [X]
    h = X
    last = len(W) - 1
    for l, (w, b) in enumerate(zip(W, B)):
        h = h @ w + b
        if l < last:
            h = np.tanh(h)
        acts.append(h)
    return acts


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def train_steps(X, Y, sizes, w, lr, steps, batch, seed, output_kind):
    """Run ``steps`` gradient updates in place on the flat weight vector."""
    n = X.shape[0]
    slices = layer_slices(sizes)
    W = [w[wsl].reshape(n_in, n_out) for wsl, _, n_in, n_out in slices]
    B = [w[bsl] for _, bsl, _, _ in slices]

    full = batch <= 0 or batch >= n
    if not full:
        per_epoch = -(-n // batch)
        perm = np.arange(n, dtype=np.int64)
        state = (seed & MASK64) or 1

    for step in range(steps):
        if full:
            xb, yb = X, Y
        else:
            k = step % per_epoch
            if k == 0:
                state = lcg_shuffle(perm, state)
            idx = perm[k * batch:(k + 1) * batch]
            xb, yb = X[idx], Y[idx]

        acts = _forward(xb, W, B)
        m = xb.shape[0]
        if output_kind == OUTPUT_SOFTMAX:
            delta = (_softmax(acts[-1]) - yb) / m
        else:
            delta = 2.0 * (acts[-1] - yb) / m

        for l in range(len(W) - 1, -1, -1):
            gw = acts[l].T @ delta
            gb = delta.sum(axis=0)
            if l > 0:
                delta = (delta @ W[l].T) * (1.0 - acts[l] ** 2)
            W[l] -= lr * gw
            B[l] -= lr * gb
    return w


def forward(X, sizes, w, output_kind):
    """Model output for input rows (softmax probabilities for classifiers)."""
    slices = layer_slices(sizes)
    W = [w[wsl].reshape(n_in, n_out) for wsl, _, n_in, n_out in slices]
    B = [w[bsl] for _, bsl, _, _ in slices]
    out = _forward(np.asarray(X, dtype=np.float64), W, B)[-1]
    if output_kind == OUTPUT_SOFTMAX:
        out = _softmax(out)
    return out
