"""Spectral-error-targeted compression of whitened derivative tensors."""

import numpy as np
import pytest

from ttaction.errors import CapacityError, ShapeError
from ttaction.hovd import ReactionDiffusionModel, WhitenedMap, compress_derivative


def test_fixed_rank_mode_order_two():
    model = ReactionDiffusionModel(5)
    train, info = compress_derivative(model, order=2, rank=6, seed=0)
    assert train.dims == (model.n_m, model.n_m, model.n_q)
    assert max(train.ranks) <= 6
    assert info["rank"] == 6
    assert info["order"] == 2
    assert info["grid"] == 5
    assert info["eps"] is None
    assert 0.0 <= info["sigma1_rel_error"] < 1.0
    assert info["sigma1"] > 0.0
    assert info["forward_solves"] > 0
    assert info["adjoint_solves"] > 0
    assert info["newton_iterations"] > 0
    assert info["actions"] > 0
    assert info["seconds"] > 0.0
    assert info["trials"] == [
        {"rank": 6, "build_rank": 6, "sigma1_rel_error": info["sigma1_rel_error"]}
    ]


@pytest.mark.filterwarnings("ignore::ttaction.errors.ConvergenceWarning")
def test_order_one_uses_matrix_factors():
    # the full-rank difference is numerically zero, so the power iteration
    # cannot settle and legitimately warns
    model = ReactionDiffusionModel(5)
    full = min(model.n_m, model.n_q)
    train, info = compress_derivative(model, order=1, rank=full, seed=0)
    assert train.dims == (model.n_m, model.n_q)
    assert len(train.cores) == 2
    # full rank: the factorization is essentially exact
    assert info["sigma1_rel_error"] < 1e-8


def test_eps_mode_finds_small_rank():
    model = ReactionDiffusionModel(5)
    train, info = compress_derivative(model, order=2, eps=0.2, seed=0)
    assert info["rank"] >= 2
    assert info["sigma1_rel_error"] < 0.2
    assert max(train.ranks) <= info["rank"]
    ranks_tried = [t["rank"] for t in info["trials"]]
    assert ranks_tried[-1] == info["rank"]
    # every earlier trial at the final build rank failed the target
    final_build = info["trials"][-1]["build_rank"]
    for t in info["trials"][:-1]:
        if t["build_rank"] == final_build:
            assert t["sigma1_rel_error"] >= 0.2


def test_eps_mode_unreachable_raises():
    model = ReactionDiffusionModel(5)
    with pytest.raises(CapacityError):
        compress_derivative(model, order=2, eps=1e-12, max_rank=3, seed=0)


def test_validation():
    model = ReactionDiffusionModel(5)
    with pytest.raises(ShapeError):
        compress_derivative(model, order=2)
    with pytest.raises(ShapeError):
        compress_derivative(model, order=2, rank=4, eps=0.1)
    with pytest.raises(ShapeError):
        compress_derivative(model, order=0, rank=4)


def test_deterministic_given_seed():
    model = ReactionDiffusionModel(5)
    whitener = WhitenedMap(model)
    first, info_a = compress_derivative(
        model, order=2, rank=5, seed=11, whitener=whitener
    )
    second, info_b = compress_derivative(
        model, order=2, rank=5, seed=11, whitener=whitener
    )
    for a, b in zip(first.cores, second.cores):
        assert np.array_equal(a, b)
    assert info_a["sigma1_rel_error"] == info_b["sigma1_rel_error"]
