"""Hilbert tensor: entries, convolution-based action, error curves."""

import numpy as np
import pytest

from ttaction import BuildConfig, dense_action, tt_dense_error, tt_from_actions, tt_svd
from ttaction.errors import ShapeError
from ttaction.hilbert import DEFAULT_DIMS, hilbert_dense, hilbert_oracle, ttsvd_error_curve


def test_entries_one_based():
    t = hilbert_dense((3, 4))
    assert t[0, 0] == 0.5  # 1 / (1 + 1)
    assert t[1, 2] == 1.0 / 5.0
    five = hilbert_dense((2, 2, 2, 2, 2))
    assert five[0, 0, 0, 0, 0] == pytest.approx(0.2)
    assert five[1, 1, 1, 1, 1] == pytest.approx(0.1)


def test_default_dims():
    assert DEFAULT_DIMS == (41, 42, 43, 44, 45)


def test_dense_validation():
    with pytest.raises(ShapeError):
        hilbert_dense((7,))
    with pytest.raises(ShapeError):
        hilbert_dense((4, 0))


@pytest.mark.parametrize("dims", [(6, 7), (5, 6, 7), (4, 5, 4, 6)])
def test_oracle_matches_dense_action(dims):
    rng = np.random.default_rng(len(dims))
    dense = hilbert_dense(dims)
    oracle = hilbert_oracle(dims)
    for mode in range(1, len(dims) + 1):
        vectors = [rng.standard_normal(n) for j, n in enumerate(dims) if j != mode - 1]
        np.testing.assert_allclose(
            oracle.action(mode, vectors),
            dense_action(dense, mode, vectors),
            atol=1e-12,
        )
    assert oracle.action_count == len(dims)


def test_error_curve_matches_per_rank_tt_svd():
    dense = hilbert_dense((8, 9, 10))
    curve, setup = ttsvd_error_curve(dense, ranks=range(2, 7))
    assert setup >= 0.0
    assert [r for r, _, _ in curve] == [2, 3, 4, 5, 6]
    for rank, error, seconds in curve:
        direct = tt_dense_error(dense, tt_svd(dense, ranks=[rank, rank]))
        assert error == pytest.approx(direct, rel=1e-10, abs=1e-15)
        assert seconds >= 0.0


def test_error_curve_monotone_and_small():
    dense = hilbert_dense((10, 11, 12))
    curve, _ = ttsvd_error_curve(dense, ranks=range(2, 9))
    errors = [e for _, e, _ in curve]
    assert all(a >= b - 1e-14 for a, b in zip(errors, errors[1:]))
    assert errors[-1] < 1e-7  # fast singular value decay


def test_randomized_build_tracks_svd_error():
    dims = (10, 11, 12)
    dense = hilbert_dense(dims)
    oracle = hilbert_oracle(dims)
    built, report = tt_from_actions(oracle, BuildConfig(ranks=[4, 4], seed=0))
    rsvd_error = tt_dense_error(dense, built)
    svd_error = tt_dense_error(dense, tt_svd(dense, ranks=[4, 4]))
    assert rsvd_error < 10.0 * svd_error
    assert report.total_actions == oracle.action_count
