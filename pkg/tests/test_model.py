"""Discretized model: residual, closed-form partials, adjoints, whitening."""

import numpy as np
import pytest
import scipy.sparse.linalg

from ttaction.hovd.model import ReactionDiffusionModel
from ttaction.errors import ShapeError


def make(n=6, seed=0):
    model = ReactionDiffusionModel(n)
    rng = np.random.default_rng(seed)
    m = 0.3 * rng.standard_normal(model.n_m)
    u = 0.5 * rng.standard_normal(model.n_u)
    return model, rng, m, u


def fd_partial(model, m, u, pairs, eps):
    """Nested central differences of the residual along the listed pairs."""
    if not pairs:
        return model.residual(m, u)
    (var, vec), rest = pairs[0], pairs[1:]
    vec = np.asarray(vec, dtype=float).ravel()
    if var == "m":
        hi = fd_partial(model, m + eps * vec, u, rest, eps)
        lo = fd_partial(model, m - eps * vec, u, rest, eps)
    else:
        hi = fd_partial(model, m, u + eps * vec, rest, eps)
        lo = fd_partial(model, m, u - eps * vec, rest, eps)
    return (hi - lo) / (2.0 * eps)


def test_residual_constant_state():
    model = ReactionDiffusionModel(5)
    c = 0.7
    u = np.full(model.n_u, c)
    m = np.random.default_rng(0).standard_normal(model.n_m)
    # constant state: no flux anywhere, residual is pure reaction minus source
    np.testing.assert_allclose(
        model.residual(m, u), c**3 - model.rho, atol=1e-12
    )


def test_source_shape():
    model = ReactionDiffusionModel(9)
    grid = model.rho_grid
    # radially increasing bump: smallest at the center, largest at corners
    assert grid[4, 4] == pytest.approx(1.0)
    assert grid[0, 0] == grid.max()
    assert grid[0, 0] == pytest.approx(np.exp(0.5 / (2 * 0.2**2)))


# step sizes grow with the order: nested central differences amplify
# roundoff by 1/eps per level
PAIR_CASES = [
    ([("m", 0)], 1e-6, 1e-7),
    ([("u", 0)], 1e-6, 1e-7),
    ([("m", 0), ("m", 1)], 1e-3, 1e-5),
    ([("m", 0), ("u", 1)], 1e-3, 1e-5),
    ([("u", 0), ("u", 1)], 1e-3, 1e-5),
    ([("m", 0), ("m", 1), ("u", 2)], 1e-2, 1e-3),
    ([("u", 0), ("u", 1), ("u", 2)], 1e-2, 1e-3),
    ([("m", 0), ("u", 1), ("u", 2)], 1e-2, 1e-3),
]


@pytest.mark.parametrize("case,eps,rtol", PAIR_CASES)
def test_partial_g_matches_finite_differences(case, eps, rtol):
    model, rng, m, u = make(6, seed=1)
    dirs = [rng.standard_normal(model.n_u) for _ in range(3)]
    pairs = [(var, dirs[i]) for var, i in case]
    exact = model.partial_g(m, u, pairs)
    approx = fd_partial(model, m, u, pairs, eps)
    scale = max(np.linalg.norm(exact), 1.0)
    assert np.linalg.norm(exact - approx) / scale < rtol


def test_partial_g_empty_pairs_is_residual():
    model, _, m, u = make(5, seed=2)
    np.testing.assert_allclose(
        model.partial_g(m, u, []), model.residual(m, u), rtol=1e-13, atol=1e-12
    )


def test_fourth_u_derivative_vanishes():
    model, rng, m, u = make(5, seed=3)
    pairs = [("u", rng.standard_normal(model.n_u)) for _ in range(4)]
    np.testing.assert_array_equal(model.partial_g(m, u, pairs), np.zeros(model.n_u))


def test_jacobian_u_matches_directional_partial():
    model, rng, m, u = make(6, seed=4)
    jac = model.jacobian_u(m, u)
    w = rng.standard_normal(model.n_u)
    np.testing.assert_allclose(
        jac @ w, model.partial_g(m, u, [("u", w)]), atol=1e-11
    )


def test_free_u_is_transpose():
    model, rng, m, u = make(6, seed=5)
    jac = model.jacobian_u(m, u)
    z = rng.standard_normal(model.n_u)
    np.testing.assert_allclose(
        model.partial_g(m, u, [], weight=z, free="u"), jac.T @ z, atol=1e-11
    )
    # and with extra differentiation directions already applied
    v = rng.standard_normal(model.n_m)
    w = rng.standard_normal(model.n_u)
    lhs = model.partial_g(m, u, [("m", v)], weight=z, free="u") @ w
    rhs = model.partial_g(m, u, [("m", v), ("u", w)]) @ z
    assert abs(lhs - rhs) < 1e-9 * max(abs(lhs), 1.0)


def test_free_m_is_dual_to_m_direction():
    model, rng, m, u = make(6, seed=6)
    v = rng.standard_normal(model.n_m)
    z = rng.standard_normal(model.n_u)
    lhs = model.partial_g(m, u, [], weight=z, free="m") @ v
    rhs = model.partial_g(m, u, [("m", v)]) @ z
    assert abs(lhs - rhs) < 1e-9 * max(abs(lhs), 1.0)


def test_observation_is_weighted_boundary_trace():
    model = ReactionDiffusionModel(5)
    u = np.arange(model.n_u, dtype=float)
    q = model.qoi(np.zeros(model.n_m), u)
    assert q.shape == (model.n_q,)
    np.testing.assert_allclose(q, model.h * u[model.boundary], atol=1e-15)
    # walk starts along the first row
    assert model.boundary[0] == 0 and model.boundary[1] == 1
    assert len(set(model.boundary.tolist())) == model.n_q


def test_observation_partials():
    model, rng, m, u = make(5, seed=7)
    w = rng.standard_normal(model.n_u)
    np.testing.assert_allclose(
        model.partial_f(m, u, [("u", w)]), model.qoi(m, w), atol=1e-14
    )
    # second u-derivative and any m-derivative vanish
    v = rng.standard_normal(model.n_m)
    assert not model.partial_f(m, u, [("u", w), ("u", w)]).any()
    assert not model.partial_f(m, u, [("m", v)]).any()
    # adjoint of the linear observation
    z = rng.standard_normal(model.n_q)
    lhs = model.partial_f(m, u, [], weight=z, free="u") @ w
    rhs = model.partial_f(m, u, [("u", w)]) @ z
    assert abs(lhs - rhs) < 1e-12 * max(abs(lhs), 1.0)
    assert not model.partial_f(m, u, [], weight=z, free="m").any()


def test_whitening_matrix_symmetric_positive_definite():
    model = ReactionDiffusionModel(6)
    w = model.whitening_matrix()
    assert (w != w.T).nnz == 0  # exactly symmetric
    dense = w.toarray()
    eigs = np.linalg.eigvalsh(dense)
    assert eigs.min() > 0.99  # Laplacian part is PSD, identity shifts by one
    # constants lie in the Laplacian nullspace
    np.testing.assert_allclose(w @ np.ones(model.n_m), np.ones(model.n_m), atol=1e-9)


def test_factorization_solves_both_transposes():
    model, rng, m, u = make(6, seed=8)
    jac = model.jacobian_u(m, u)
    b = rng.standard_normal(model.n_u)
    fac = model.factorize(m, u)
    np.testing.assert_allclose(jac @ fac.solve(b), b, atol=1e-8)
    np.testing.assert_allclose(jac.T @ fac.solve_t(b), b, atol=1e-8)


def test_factorization_shift():
    model, rng, m, u = make(5, seed=9)
    shifted = model.jacobian_u(m, u) + 2.5 * scipy.sparse.identity(model.n_u)
    b = rng.standard_normal(model.n_u)
    x = model.factorize(m, u, shift=2.5).solve(b)
    np.testing.assert_allclose(shifted @ x, b, atol=1e-8)


def test_validation():
    with pytest.raises(ShapeError):
        ReactionDiffusionModel(3)
    model, rng, m, u = make(5, seed=10)
    with pytest.raises(ShapeError):
        model.residual(m[:-1], u)
    with pytest.raises(ShapeError):
        model.partial_g(m, u, [("x", u)])
    with pytest.raises(ShapeError):
        model.partial_g(m, u, [], weight=u, free="q")
    with pytest.raises(ShapeError):
        model.partial_f(m, u, [], weight=u, free="q")
