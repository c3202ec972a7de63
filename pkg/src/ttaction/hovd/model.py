"""Nonlinear reaction-diffusion model with closed-form directional partials.

The state equation is  -div(e^m grad u) + u^3 = rho  on the unit square with
homogeneous Neumann walls, discretized by 5-point finite differences on an
n x n node grid.  Fluxes use e^m at cell edges, with the nodal log
coefficient averaged arithmetically onto each edge; wall conditions enter by
ghost-node reflection of both u and m.  The observed quantity is the state on
the 4(n-1) boundary nodes scaled by trapezoid weights along the perimeter.

Because the coefficient enters through e^m and the reaction is cubic, every
mixed directional partial of the residual has a short closed form: each
m-derivative multiplies the edge coefficients by the direction's edge
average, and u-derivatives beyond the third kill the reaction term.  The
``partial_g``/``partial_f`` entry points evaluate those forms for any list of
(variable, direction) pairs, optionally with one extra differentiation slot
left free and the output contracted against a weight vector; the free-slot
variants are what adjoint computations need.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from ..errors import ShapeError

#: Width of the source bump, in unit-square coordinates.
SOURCE_WIDTH = 0.2


def _pad(z):
    return np.pad(z, 1, mode="reflect")


def _nbrs(zp):
    """The four neighbor views (north, south, west, east) of a padded grid."""
    return (zp[:-2, 1:-1], zp[2:, 1:-1], zp[1:-1, :-2], zp[1:-1, 2:])


_PAD_SLICES = (
    (slice(None, -2), slice(1, -1)),
    (slice(2, None), slice(1, -1)),
    (slice(1, -1), slice(None, -2)),
    (slice(1, -1), slice(2, None)),
)


def _fold(gpad):
    """Adjoint of reflect padding: fold ghost contributions onto their sources."""
    out = gpad[1:-1, 1:-1].copy()
    out[1, :] += gpad[0, 1:-1]
    out[-2, :] += gpad[-1, 1:-1]
    out[:, 1] += gpad[1:-1, 0]
    out[:, -2] += gpad[1:-1, -1]
    return out


class ReactionDiffusionModel:
    """Discretized state equation plus boundary observation operator.

    Parameters
    ----------
    n : int
        Nodes per side, n >= 4.  Parameter and state both live on the full
        grid (n_m = n_u = n^2); the observation has 4(n-1) entries.
    """

    def __init__(self, n):
        n = int(n)
        if n < 4:
            raise ShapeError(f"grid needs at least 4 nodes per side, got {n}")
        self.n = n
        self.h = 1.0 / (n - 1)
        self.n_m = n * n
        self.n_u = n * n
        self.n_q = 4 * (n - 1)

        xs = np.linspace(0.0, 1.0, n)
        xg, yg = np.meshgrid(xs, xs, indexing="ij")
        r2 = (xg - 0.5) ** 2 + (yg - 0.5) ** 2
        self.rho_grid = np.exp(r2 / (2.0 * SOURCE_WIDTH**2))
        self.rho = self.rho_grid.ravel()

        # boundary walk, counterclockwise from the origin corner; every node
        # carries weight h because the perimeter is a closed polyline
        idx = []
        for j in range(n):
            idx.append((0, j))
        for i in range(1, n):
            idx.append((i, n - 1))
        for j in range(n - 2, -1, -1):
            idx.append((n - 1, j))
        for i in range(n - 2, 0, -1):
            idx.append((i, 0))
        self.boundary = np.array([i * n + j for i, j in idx], dtype=np.intp)
        self.boundary_weights = np.full(self.n_q, self.h)

        arange = np.arange(n)
        minus = np.abs(arange - 1)
        plus = np.where(arange + 1 > n - 1, n - 2, arange + 1)
        cols = arange[None, :].repeat(n, axis=0)
        rows = arange[:, None].repeat(n, axis=1)
        self._nbr_index = (
            (minus[:, None] * n + cols).ravel(),
            (plus[:, None] * n + cols).ravel(),
            (rows * n + minus[None, :]).ravel(),
            (rows * n + plus[None, :]).ravel(),
        )

    # -- grid plumbing ------------------------------------------------------

    def _grid(self, v, name):
        v = np.asarray(v, dtype=float)
        if v.shape == (self.n, self.n):
            return v
        if v.shape == (self.n * self.n,):
            return v.reshape(self.n, self.n)
        raise ShapeError(f"{name} has shape {v.shape}, expected ({self.n * self.n},)")

    def _edge_coeff(self, m2, vs2):
        """Per-direction edge factors exp(mean m) times each direction mean."""
        mn = _nbrs(_pad(m2))
        vns = [_nbrs(_pad(v2)) for v2 in vs2]
        coeffs = []
        for k in range(4):
            c = np.exp((m2 + mn[k]) * 0.5)
            for v2, vn in zip(vs2, vns):
                c = c * ((v2 + vn[k]) * 0.5)
            coeffs.append(c)
        return coeffs

    def _diffusion(self, m2, vs2, y2):
        """Edge-coefficient flux divergence applied to the grid field y."""
        yn = _nbrs(_pad(y2))
        out = np.zeros_like(y2)
        for c, ynk in zip(self._edge_coeff(m2, vs2), yn):
            out += c * (y2 - ynk)
        return out / self.h**2

    def _diffusion_free_u(self, m2, vs2, z2):
        """Transpose of the flux-divergence operator applied to z."""
        gpad = np.zeros((self.n + 2, self.n + 2))
        for c, sl in zip(self._edge_coeff(m2, vs2), _PAD_SLICES):
            w = z2 * c
            gpad[1:-1, 1:-1] += w
            gpad[sl] -= w
        return _fold(gpad) / self.h**2

    def _diffusion_free_m(self, m2, vs2, y2, z2):
        """Gradient in the coefficient of z^T (flux divergence of y)."""
        yn = _nbrs(_pad(y2))
        gpad = np.zeros((self.n + 2, self.n + 2))
        for c, ynk, sl in zip(self._edge_coeff(m2, vs2), yn, _PAD_SLICES):
            t = 0.5 * z2 * c * (y2 - ynk)
            gpad[1:-1, 1:-1] += t
            gpad[sl] += t
        return _fold(gpad) / self.h**2

    # -- public contract ----------------------------------------------------

    def residual(self, m, u):
        """G(m, u) as a flat vector."""
        m2, u2 = self._grid(m, "m"), self._grid(u, "u")
        out = self._diffusion(m2, [], u2) + u2**3 - self.rho_grid
        return out.ravel()

    def qoi(self, m, u):
        """Weighted boundary trace of the state."""
        u = np.asarray(u, dtype=float).ravel()
        return self.boundary_weights * u[self.boundary]

    def _split_pairs(self, pairs):
        vs, ws = [], []
        for var, vec in pairs:
            if var == "m":
                vs.append(self._grid(vec, "m direction"))
            elif var == "u":
                ws.append(self._grid(vec, "u direction"))
            else:
                raise ShapeError(f"unknown variable {var!r}; use 'm' or 'u'")
        return vs, ws

    def partial_g(self, m, u, pairs, weight=None, free=None):
        """Directional partial of the residual.

        ``pairs`` lists differentiation directions as ("m"|"u", vector).
        With ``free=None`` the contracted partial itself is returned (length
        n_u).  With ``free="u"`` or ``free="m"`` one further derivative is
        taken in that variable, the output slot is contracted with ``weight``
        and the new derivative slot is returned free, giving a vector in the
        corresponding space.  Empty ``pairs`` with ``free=None`` reproduces
        the residual.
        """
        m2, u2 = self._grid(m, "m"), self._grid(u, "u")
        vs, ws = self._split_pairs(pairs)
        j, s = len(vs), len(ws)
        if free is None:
            out = np.zeros_like(u2)
            if s == 0:
                out += self._diffusion(m2, vs, u2)
            elif s == 1:
                out += self._diffusion(m2, vs, ws[0])
            if j == 0:
                if s == 0:
                    out += u2**3 - self.rho_grid
                elif s == 1:
                    out += 3.0 * u2**2 * ws[0]
                elif s == 2:
                    out += 6.0 * u2 * ws[0] * ws[1]
                elif s == 3:
                    out += 6.0 * ws[0] * ws[1] * ws[2]
            return out.ravel()
        z2 = self._grid(weight, "weight")
        if free == "u":
            out = np.zeros_like(u2)
            if s == 0:
                out += self._diffusion_free_u(m2, vs, z2)
            if j == 0:
                if s == 0:
                    out += 3.0 * u2**2 * z2
                elif s == 1:
                    out += 6.0 * u2 * ws[0] * z2
                elif s == 2:
                    out += 6.0 * ws[0] * ws[1] * z2
            return out.ravel()
        if free == "m":
            if s == 0:
                return self._diffusion_free_m(m2, vs, u2, z2).ravel()
            if s == 1:
                return self._diffusion_free_m(m2, vs, ws[0], z2).ravel()
            return np.zeros(self.n_m)
        raise ShapeError(f"free must be None, 'u', or 'm', got {free!r}")

    def partial_f(self, m, u, pairs, weight=None, free=None):
        """Directional partial of the observation; same calling convention.

        The observation is linear in u with no explicit m dependence, so only
        the s <= 1 pure-u partials and the free-u gradient survive.
        """
        vs, ws = self._split_pairs(pairs)
        j, s = len(vs), len(ws)
        if free is None:
            if j == 0 and s == 0:
                return self.qoi(m, u)
            if j == 0 and s == 1:
                return self.boundary_weights * ws[0].ravel()[self.boundary]
            return np.zeros(self.n_q)
        if free == "u":
            out = np.zeros(self.n_u)
            if j == 0 and s == 0:
                w = np.asarray(weight, dtype=float).ravel()
                np.add.at(out, self.boundary, self.boundary_weights * w)
            return out
        if free == "m":
            return np.zeros(self.n_m)
        raise ShapeError(f"free must be None, 'u', or 'm', got {free!r}")

    def jacobian_u(self, m, u):
        """Sparse state Jacobian dG/du at (m, u)."""
        m2, u2 = self._grid(m, "m"), self._grid(u, "u")
        coeffs = self._edge_coeff(m2, [])
        inv_h2 = 1.0 / self.h**2
        node = np.arange(self.n_u)
        rows = [node]
        cols = [node]
        vals = [(3.0 * u2**2).ravel()]
        for c, nbr in zip(coeffs, self._nbr_index):
            cf = c.ravel() * inv_h2
            rows.append(node)
            cols.append(node)
            vals.append(cf)
            rows.append(node)
            cols.append(nbr)
            vals.append(-cf)
        mat = scipy.sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_u, self.n_u),
        )
        return mat.tocsc()

    def factorize(self, m, u, shift=0.0):
        """LU-factorized state Jacobian with forward and transpose solves.

        ``shift`` adds a multiple of the identity before factorizing; Newton
        damping uses this where the plain Jacobian is singular.
        """
        mat = self.jacobian_u(m, u)
        if shift:
            mat = (mat + shift * scipy.sparse.identity(self.n_u)).tocsc()
        return FactorizedJacobian(mat)

    def whitening_matrix(self):
        """Symmetric positive definite discretization of (-Laplace + I).

        Assembled edge by edge (graph Laplacian scaled by 1/h^2 plus the
        identity) so the operator, and hence its inverse, is exactly
        symmetric.
        """
        n = self.n
        inv_h2 = 1.0 / self.h**2
        rows, cols, vals = [], [], []

        def add_edges(a, b):
            rows.extend((a, b, a, b))
            cols.extend((a, b, b, a))
            vals.extend(
                (
                    np.full(a.size, inv_h2),
                    np.full(a.size, inv_h2),
                    np.full(a.size, -inv_h2),
                    np.full(a.size, -inv_h2),
                )
            )

        grid = np.arange(n * n).reshape(n, n)
        add_edges(grid[:, :-1].ravel(), grid[:, 1:].ravel())
        add_edges(grid[:-1, :].ravel(), grid[1:, :].ravel())
        lap = scipy.sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_m, self.n_m),
        )
        return (lap + scipy.sparse.identity(self.n_m)).tocsc()


class FactorizedJacobian:
    """Sparse LU of the state Jacobian, reusable for both transposes."""

    def __init__(self, mat):
        self._lu = scipy.sparse.linalg.splu(mat)

    def solve(self, b):
        return self._lu.solve(np.asarray(b, dtype=float))

    def solve_t(self, b):
        return self._lu.solve(np.asarray(b, dtype=float), trans="T")
