"""The Hilbert tensor and its matrix-free action.

The tensor has entries 1 / (i_1 + ... + i_d) with 1-based indices, the
d-mode generalization of the Hilbert matrix.  Its special structure makes the
action cheap without ever materializing entries: contracting all modes but
one reduces to a convolution of the saturating vectors followed by a
correlation against the reciprocal weights 1 / (d + t).
"""

from __future__ import annotations

import time
from functools import reduce

import numpy as np

from .core import ActionOracle, TensorTrain, _truncated_svd, tt_dense_error, tt_svd
from .errors import ShapeError

#: Mode sizes used by the compression experiment.
DEFAULT_DIMS = (41, 42, 43, 44, 45)


def hilbert_dense(dims):
    """Materialize the Hilbert tensor with the given mode sizes.

    Builds the index-sum grid in place, so the peak footprint is a single
    float64 array of ``prod(dims)`` entries.  The caller is responsible for
    choosing sizes that fit in memory.
    """
    dims = tuple(int(n) for n in dims)
    if len(dims) < 2 or any(n < 1 for n in dims):
        raise ShapeError(f"need at least 2 modes of positive size, got {dims}")
    out = np.zeros(dims)
    for k, n in enumerate(dims):
        shape = [1] * len(dims)
        shape[k] = n
        out += np.arange(1, n + 1, dtype=float).reshape(shape)
    np.divide(1.0, out, out=out)
    return out


def hilbert_oracle(dims):
    """Action oracle for the Hilbert tensor, never materializing entries.

    With 0-based offsets z_j = i_j - 1 an entry is 1 / (d + sum z_j), so the
    action in the free mode is

        out[z] = sum_s c[s] / (d + z + s),

    where c is the full convolution of the saturating vectors.  One action
    costs O(N^2) instead of the O(N^d) of a dense contraction.
    """
    dims = tuple(int(n) for n in dims)
    d = len(dims)

    def apply_fn(free_mode, vectors):
        conv = reduce(np.convolve, vectors)
        n_free = dims[free_mode - 1]
        weights = 1.0 / (d + np.arange(n_free + conv.size - 1, dtype=float))
        return np.correlate(weights, conv, mode="valid")

    return ActionOracle(dims, apply_fn)


def ttsvd_error_curve(dense, ranks):
    """Relative tensor-train SVD error at several uniform ranks.

    Equivalent to calling :func:`~ttaction.core.tt_svd` per rank: the first
    unfolding's factorization does not depend on the requested rank, so it is
    computed once at the largest rank and sliced.  The per-rank errors agree
    with direct calls to rounding while doing the expensive wide
    factorization once.

    Returns (curve, setup_seconds) where curve is a list of
    (rank, relative_error, seconds) triples covering the per-rank work and
    setup_seconds is the shared factorization time.
    """
    dense = np.asarray(dense, dtype=float)
    dims = dense.shape
    ranks = sorted(int(r) for r in ranks)
    top = ranks[-1]
    t0 = time.perf_counter()
    mat = dense.reshape(dims[0], -1)
    u, s, vt = _truncated_svd(mat, rank=top)
    setup_seconds = time.perf_counter() - t0
    curve = []
    for r in ranks:
        t0 = time.perf_counter()
        head = u[:, :r].reshape(1, dims[0], r)
        tail_mat = s[:r, None] * vt[:r]
        tail = tt_svd(
            tail_mat.reshape((r,) + dims[1:]), ranks=[r] * (len(dims) - 1)
        )
        # absorb the leading rank dimension: the tail train's first core is
        # (1, r, r'); fold it into the head boundary rank
        first = tail.cores[0][0]
        cores = [np.tensordot(head, first, axes=([2], [0]))] + tail.cores[1:]
        error = tt_dense_error(dense, TensorTrain(cores))
        curve.append((r, error, time.perf_counter() - t0))
    return curve, setup_seconds
