"""Dense actions, train algebra, compression, and serialization."""

import numpy as np
import pytest

import ttaction
from ttaction import (
    ActionOracle,
    TensorTrain,
    dense_action,
    fix_signs,
    frobenius,
    oracle_from_dense,
    oracle_from_tt,
    relative_error,
    tt_apply,
    tt_dense_error,
    tt_load,
    tt_load_json,
    tt_partial_apply,
    tt_round,
    tt_save,
    tt_save_json,
    tt_svd,
    tt_to_dense,
)
from ttaction.errors import (
    CapacityError,
    FormatError,
    RankClampWarning,
    ShapeError,
    VersionError,
)


def random_tt(rng, dims, ranks):
    bounds = (1,) + tuple(ranks) + (1,)
    return TensorTrain(
        [
            rng.standard_normal((bounds[k], dims[k], bounds[k + 1]))
            for k in range(len(dims))
        ]
    )


# ---------------------------------------------------------------------------
# dense actions


def test_dense_action_matches_einsum():
    rng = np.random.default_rng(0)
    t = rng.standard_normal((3, 4, 5))
    x, y, z = rng.standard_normal(3), rng.standard_normal(4), rng.standard_normal(5)
    np.testing.assert_allclose(
        dense_action(t, 1, [y, z]), np.einsum("ijk,j,k->i", t, y, z), atol=1e-13
    )
    np.testing.assert_allclose(
        dense_action(t, 2, [x, z]), np.einsum("ijk,i,k->j", t, x, z), atol=1e-13
    )
    np.testing.assert_allclose(
        dense_action(t, 3, [x, y]), np.einsum("ijk,i,j->k", t, x, y), atol=1e-13
    )


def test_dense_action_multilinearity():
    rng = np.random.default_rng(1)
    t = rng.standard_normal((4, 3, 6))
    a, b = rng.standard_normal(3), rng.standard_normal(3)
    z = rng.standard_normal(6)
    lhs = dense_action(t, 1, [2.0 * a - b, z])
    rhs = 2.0 * dense_action(t, 1, [a, z]) - dense_action(t, 1, [b, z])
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_dense_action_identity_matrix_case():
    # matrix action with a basis vector picks out a column
    t = np.arange(12.0).reshape(3, 4)
    np.testing.assert_allclose(dense_action(t, 1, [np.eye(4)[1]]), t[:, 1])


@pytest.mark.parametrize("free_mode", [0, 4, -1])
def test_dense_action_free_mode_out_of_range(free_mode):
    t = np.zeros((2, 2, 2))
    with pytest.raises(ShapeError):
        dense_action(t, free_mode, [np.zeros(2), np.zeros(2)])


def test_dense_action_wrong_vector_count_and_length():
    t = np.zeros((2, 3, 4))
    with pytest.raises(ShapeError):
        dense_action(t, 1, [np.zeros(3)])
    with pytest.raises(ShapeError):
        dense_action(t, 1, [np.zeros(4), np.zeros(3)])


# ---------------------------------------------------------------------------
# oracle wrapper


def test_oracle_counts_thread_safe():
    import threading

    t = np.random.default_rng(2).standard_normal((5, 6))
    oracle = oracle_from_dense(t)
    vec = np.ones(6)

    def hammer():
        for _ in range(50):
            oracle.action(1, [vec])

    threads = [threading.Thread(target=hammer) for _ in range(4)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    assert oracle.action_count == 200
    oracle.reset_count()
    assert oracle.action_count == 0


def test_oracle_validates_result_shape():
    oracle = ActionOracle((3, 4), lambda k, vs: np.zeros(2))
    with pytest.raises(ShapeError):
        oracle.action(1, [np.zeros(4)])


def test_oracle_rejects_degenerate_dims():
    with pytest.raises(ShapeError):
        ActionOracle((5,), lambda k, vs: np.zeros(5))
    with pytest.raises(ShapeError):
        ActionOracle((5, 0), lambda k, vs: np.zeros(5))


# ---------------------------------------------------------------------------
# tensor train container and contractions


def test_train_shape_validation():
    rng = np.random.default_rng(3)
    with pytest.raises(ShapeError):  # boundary rank not 1
        TensorTrain([rng.standard_normal((2, 3, 1))])
    with pytest.raises(ShapeError):  # bond mismatch
        TensorTrain(
            [rng.standard_normal((1, 3, 2)), rng.standard_normal((3, 4, 1))]
        )


def test_train_entry_is_product_of_slices():
    rng = np.random.default_rng(4)
    tt = random_tt(rng, (3, 4, 5), (2, 3))
    dense = tt_to_dense(tt)
    entry = tt.cores[0][:, 1, :] @ tt.cores[1][:, 2, :] @ tt.cores[2][:, 3, :]
    assert abs(dense[1, 2, 3] - entry[0, 0]) < 1e-12


def test_tt_apply_matches_dense_action_all_modes():
    rng = np.random.default_rng(5)
    dims, ranks = (4, 5, 3, 6), (3, 4, 2)
    tt = random_tt(rng, dims, ranks)
    dense = tt_to_dense(tt)
    vectors = [rng.standard_normal(n) for n in dims]
    for mode in range(1, 5):
        rest = [v for j, v in enumerate(vectors) if j != mode - 1]
        np.testing.assert_allclose(
            tt_apply(tt, mode, rest), dense_action(dense, mode, rest), atol=1e-11
        )


def test_tt_partial_apply_prefix_contraction():
    rng = np.random.default_rng(6)
    dims, ranks = (3, 4, 5), (2, 3)
    tt = random_tt(rng, dims, ranks)
    x, y = rng.standard_normal(3), rng.standard_normal(4)
    out = tt_partial_apply(tt, 2, [x, y])
    expect = np.einsum(
        "anb,n,bmc,m->c", tt.cores[0], x, tt.cores[1], y, optimize=True
    )
    np.testing.assert_allclose(out, expect, atol=1e-12)
    with pytest.raises(ShapeError):
        tt_partial_apply(tt, 3, [x, y, np.zeros(5)])


def test_oracle_from_tt_agrees_with_dense():
    rng = np.random.default_rng(7)
    tt = random_tt(rng, (4, 4, 4), (2, 2))
    dense = tt_to_dense(tt)
    o_tt, o_dense = oracle_from_tt(tt), oracle_from_dense(dense)
    vs = [rng.standard_normal(4) for _ in range(2)]
    np.testing.assert_allclose(o_tt.action(2, vs), o_dense.action(2, vs), atol=1e-11)


def test_entry_count_and_guard():
    tt = random_tt(np.random.default_rng(8), (50, 60, 70), (2, 2))
    # stored core entries, not the dense size
    assert tt.entry_count() == 1 * 50 * 2 + 2 * 60 * 2 + 2 * 70 * 1
    big = TensorTrain(
        [
            np.zeros((1, 100_000, 2)),
            np.zeros((2, 100_000, 2)),
            np.zeros((2, 100, 1)),
        ]
    )
    with pytest.raises(CapacityError):
        tt_to_dense(big)


# ---------------------------------------------------------------------------
# compression


def test_tt_svd_exact_reconstruction():
    rng = np.random.default_rng(9)
    dense = tt_to_dense(random_tt(rng, (5, 6, 4, 3), (2, 3, 2)))
    tt = tt_svd(dense)
    assert relative_error(dense, tt_to_dense(tt)) < 1e-12
    assert tt.left_orthogonality_defect() < 1e-12
    # a tolerance run recovers the exact ranks
    assert tt_svd(dense, tol=1e-10).ranks == (2, 3, 2)


def test_tt_svd_rank_truncation_monotone():
    rng = np.random.default_rng(10)
    dense = rng.standard_normal((6, 6, 6))
    errors = [
        relative_error(dense, tt_to_dense(tt_svd(dense, ranks=r)))
        for r in (1, 2, 4, 6)
    ]
    assert all(a >= b - 1e-14 for a, b in zip(errors, errors[1:]))


def test_tt_svd_tol_budget_met():
    rng = np.random.default_rng(11)
    dense = tt_to_dense(random_tt(rng, (7, 7, 7), (3, 3)))
    noisy = dense + 1e-8 * rng.standard_normal(dense.shape)
    tt = tt_svd(noisy, tol=1e-5)
    assert relative_error(noisy, tt_to_dense(tt)) < 1e-5
    assert tt.ranks == (3, 3)


def test_tt_svd_rank_clamp_warns():
    dense = np.random.default_rng(12).standard_normal((3, 4, 5))
    with pytest.warns(RankClampWarning):
        tt = tt_svd(dense, ranks=[10, 10])
    assert relative_error(dense, tt_to_dense(tt)) < 1e-12


def test_tt_round_identity_and_truncation_match_tt_svd():
    rng = np.random.default_rng(13)
    tt = random_tt(rng, (6, 7, 5), (4, 3))
    dense = tt_to_dense(tt)
    again = tt_round(tt)
    assert relative_error(dense, tt_to_dense(again)) < 1e-12
    assert again.left_orthogonality_defect() < 1e-12
    rounded = tt_round(tt, ranks=[2, 2])
    direct = tt_svd(dense, ranks=[2, 2])
    np.testing.assert_allclose(
        tt_to_dense(rounded), tt_to_dense(direct), atol=1e-10
    )


def test_tt_round_tol_mode():
    rng = np.random.default_rng(14)
    tt = random_tt(rng, (6, 6, 6), (4, 4))
    dense = tt_to_dense(tt)
    rounded = tt_round(tt, tol=1e-12)
    assert relative_error(dense, tt_to_dense(rounded)) < 1e-11


def test_tt_dense_error_matches_direct():
    rng = np.random.default_rng(15)
    tt = random_tt(rng, (5, 6, 7), (2, 3))
    dense = tt_to_dense(tt) + 1e-3 * rng.standard_normal((5, 6, 7))
    direct = relative_error(dense, tt_to_dense(tt))
    assert abs(tt_dense_error(dense, tt) - direct) < 1e-12
    with pytest.raises(ShapeError):
        tt_dense_error(dense[:, :, :4], tt)


def test_frobenius_and_relative_error():
    a = np.array([[3.0, 4.0]])
    assert abs(frobenius(a) - 5.0) < 1e-15
    assert relative_error(a, a) == 0.0


def test_fix_signs_deterministic_and_product_preserving():
    rng = np.random.default_rng(16)
    mat = rng.standard_normal((6, 4))
    u, s, vt = np.linalg.svd(mat, full_matrices=False)
    prod_before = u @ (s[:, None] * vt)
    fix_signs(u, vt)
    # each column's largest-magnitude entry is positive
    idx = np.abs(u).argmax(axis=0)
    assert (u[idx, np.arange(u.shape[1])] > 0).all()
    np.testing.assert_allclose(u @ (s[:, None] * vt), prod_before, atol=1e-12)


# ---------------------------------------------------------------------------
# serialization


def test_binary_roundtrip_bitexact(tmp_path):
    rng = np.random.default_rng(17)
    tt = random_tt(rng, (4, 6, 3, 5), (2, 4, 3))
    path = tmp_path / "train.bin"
    tt_save(tt, path)
    back = tt_load(path)
    assert back.dims == tt.dims and back.ranks == tt.ranks
    for a, b in zip(tt.cores, back.cores):
        assert np.array_equal(a, b)
    # identical content twice -> identical bytes
    path2 = tmp_path / "again.bin"
    tt_save(tt, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_json_roundtrip(tmp_path):
    rng = np.random.default_rng(18)
    tt = random_tt(rng, (3, 4, 5), (2, 2))
    path = tmp_path / "train.json"
    tt_save_json(tt, path)
    back = tt_load_json(path)
    for a, b in zip(tt.cores, back.cores):
        assert np.array_equal(a, b)


def test_load_rejects_bad_magic_and_version(tmp_path):
    rng = np.random.default_rng(19)
    tt = random_tt(rng, (3, 3), (2,))
    path = tmp_path / "train.bin"
    tt_save(tt, path)
    raw = bytearray(path.read_bytes())
    bad = tmp_path / "bad.bin"

    raw0 = raw.copy()
    raw0[:4] = b"NOPE"
    bad.write_bytes(bytes(raw0))
    with pytest.raises(FormatError) as err:
        tt_load(bad)
    assert err.value.offset == 0

    raw1 = raw.copy()
    raw1[4] = 99
    bad.write_bytes(bytes(raw1))
    with pytest.raises(VersionError):
        tt_load(bad)


def test_load_rejects_truncated_payload(tmp_path):
    rng = np.random.default_rng(20)
    tt = random_tt(rng, (3, 3), (2,))
    path = tmp_path / "train.bin"
    tt_save(tt, path)
    clipped = tmp_path / "clipped.bin"
    clipped.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(FormatError):
        tt_load(clipped)


def test_version_exported():
    assert ttaction.__version__
