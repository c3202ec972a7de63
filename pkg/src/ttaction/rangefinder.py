"""Randomized range finding for vector-valued multilinear maps.

The object of study is a map F taking several input vectors to one output
vector and linear in each input.  Feeding independent Gaussian vectors into
every slot yields output samples whose span estimates the range of F; an SVD
of the sample matrix gives an orthonormal basis.  This generalizes the
randomized range finder for matrices, which is the one-input special case.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ConvergenceWarning, DegenerateRangeError, RankClampWarning, ShapeError
from .core import fix_signs

#: Default number of extra samples beyond the requested rank.
DEFAULT_OVERSAMPLING = 5


@dataclass
class RangeProblem:
    """A sampled multilinear map.

    Parameters
    ----------
    evaluate : callable
        ``evaluate(vectors) -> ndarray`` of length ``output_dim``; ``vectors``
        is one standard-normal vector per entry of ``input_dims``.
    input_dims : tuple of int
        Length of each random input vector.
    output_dim : int
        Length of the output samples.
    seed : int
        Root seed.  Sample ``i`` always draws its inputs from a generator
        keyed by ``(seed, i)``, so enlarging a sample set reuses earlier
        samples and results do not depend on evaluation order.
    """

    evaluate: object
    input_dims: tuple
    output_dim: int
    seed: int = 0

    def sample_inputs(self, index):
        """Standard-normal input vectors for sample ``index``."""
        rng = np.random.default_rng(np.random.SeedSequence((self.seed, index)))
        return [rng.standard_normal(n) for n in self.input_dims]


@dataclass
class RangeBasis:
    """Result of a range-finding pass.

    ``basis`` has orthonormal columns spanning the estimated range;
    ``samples`` keeps the raw outputs (one column per sample) so posterior
    error checks need no further evaluations.  ``singular_values`` are those
    of the sample matrix.  ``converged`` is False only when an adaptive
    search hit its rank ceiling without meeting the tolerance.
    """

    basis: np.ndarray
    samples: np.ndarray
    singular_values: np.ndarray
    oversampling: int
    converged: bool = True

    @property
    def rank(self):
        return self.basis.shape[1]


def _collect_samples(problem, indices, workers):
    """Evaluate the listed sample indices, always in index order."""

    def one(i):
        return np.asarray(problem.evaluate(problem.sample_inputs(i)), dtype=float)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cols = list(pool.map(one, indices))
    else:
        cols = [one(i) for i in indices]
    for c in cols:
        if c.shape != (problem.output_dim,):
            raise ShapeError(
                f"evaluate returned shape {c.shape}, expected ({problem.output_dim},)"
            )
    return cols


def _orthobasis(samples, rank):
    """Thin SVD of the sample matrix, truncated and sign-fixed."""
    u, s, _ = scipy.linalg.svd(samples, full_matrices=False, check_finite=False)
    if s.size == 0 or s[min(rank, s.size) - 1] == 0.0:
        raise DegenerateRangeError(
            f"sample matrix has a zero singular value within rank {rank}"
        )
    u = np.ascontiguousarray(u[:, :rank])
    fix_signs(u)
    return u, s


def randomized_range(problem, rank, oversampling=DEFAULT_OVERSAMPLING, workers=1):
    """Estimate an orthonormal range basis from ``rank + oversampling`` samples.

    Performs exactly ``rank + oversampling`` evaluations of the map.  The
    basis is the first ``rank`` left singular vectors of the sample matrix,
    each column signed so its largest-magnitude entry is positive.  A rank
    beyond the output dimension is clamped with a warning.
    """
    if rank < 1:
        raise ShapeError(f"rank must be positive, got {rank}")
    if oversampling < 0:
        raise ShapeError(f"oversampling must be nonnegative, got {oversampling}")
    if rank > problem.output_dim:
        warnings.warn(
            f"rank {rank} exceeds output dimension {problem.output_dim}; clamped",
            RankClampWarning,
            stacklevel=2,
        )
        rank = problem.output_dim
    n_samples = rank + oversampling
    cols = _collect_samples(problem, range(n_samples), workers)
    samples = np.column_stack(cols)
    basis, s = _orthobasis(samples, rank)
    return RangeBasis(basis, samples, s, oversampling)


def posterior_error(basis, samples, relative=False):
    """Worst-sample residual outside the span of ``basis``.

    Returns ``max_i ||y_i - U U^T y_i||`` over the sample columns, divided by
    ``max_i ||y_i||`` when ``relative`` is set.  Reuses the samples already
    paid for; no new evaluations.
    """
    u = basis.basis if isinstance(basis, RangeBasis) else np.asarray(basis)
    samples = np.asarray(samples, dtype=float)
    resid = samples - u @ (u.T @ samples)
    worst = float(np.linalg.norm(resid, axis=0).max())
    if not relative:
        return worst
    scale = float(np.linalg.norm(samples, axis=0).max())
    if scale == 0.0:
        raise DegenerateRangeError("all samples are zero; no relative error")
    return worst / scale


def adaptive_range(
    problem,
    tol,
    oversampling=DEFAULT_OVERSAMPLING,
    start_rank=2,
    max_rank=None,
    relative=True,
    workers=1,
):
    """Grow the rank one sample at a time until the posterior error meets ``tol``.

    Starts at ``start_rank`` (never below 2) and reuses all previous samples,
    so finishing at rank r costs exactly ``r + oversampling`` evaluations.
    If the ceiling ``max_rank`` (default: the output dimension) is reached
    without convergence the basis is returned with ``converged=False`` and a
    :class:`~ttaction.errors.ConvergenceWarning`.
    """
    if tol <= 0:
        raise ShapeError(f"tolerance must be positive, got {tol}")
    ceiling = problem.output_dim if max_rank is None else min(max_rank, problem.output_dim)
    rank = max(2, min(start_rank, ceiling))
    cols = _collect_samples(problem, range(rank + oversampling), workers)
    while True:
        samples = np.column_stack(cols)
        basis, s = _orthobasis(samples, rank)
        err = posterior_error(basis, samples, relative=relative)
        if err < tol:
            return RangeBasis(basis, samples, s, oversampling)
        if rank >= ceiling:
            warnings.warn(
                f"posterior error {err:.3e} above tolerance {tol:.3e} at the "
                f"rank ceiling {ceiling}",
                ConvergenceWarning,
                stacklevel=2,
            )
            return RangeBasis(basis, samples, s, oversampling, converged=False)
        rank += 1
        cols.extend(_collect_samples(problem, [len(cols)], workers))
