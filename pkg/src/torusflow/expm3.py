"""Batched matrix exponential for stacks of small matrices.

scipy's expm handles one matrix at a time; the integrator needs e^(dt M) for
every retained mode at once (about 10^4 matrices of size 3x3).  Scaling and
squaring with a Taylor core is accurate far beyond what the corrector flow
needs: after scaling to norm <= 1/4 the order-12 Taylor remainder is below
1e-19.
"""

from __future__ import annotations

import numpy as np

_TAYLOR_ORDER = 12


def expm_batch(A: np.ndarray) -> np.ndarray:
    """e^A for an array of square matrices, shape (..., d, d)."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise ValueError(f"expected a stack of square matrices, got shape {A.shape}")
    d = A.shape[-1]
    norm = np.max(np.sum(np.abs(A), axis=-1)) if A.size else 0.0
    squarings = max(0, int(np.ceil(np.log2(max(norm, 1e-300) / 0.25)))) if norm > 0.25 else 0
    B = A / float(2**squarings)
    eye = np.broadcast_to(np.eye(d), A.shape)
    out = np.array(np.broadcast_to(np.eye(d), A.shape))
    term = eye
    for i in range(1, _TAYLOR_ORDER + 1):
        term = np.matmul(term, B) / i
        out = out + term
    for _ in range(squarings):
        out = np.matmul(out, out)
    return out
