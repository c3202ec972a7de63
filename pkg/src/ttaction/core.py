"""Tensors given by their action, tensor-train containers, and dense references.

A d-th order tensor is used here only through its *action*: saturate every
mode but one with a vector and return the remaining fiber.  For d = 2 this is
the familiar matrix-vector product.  Mode numbers in the public interface are
1-based; storage is plain 0-based numpy.
"""

from __future__ import annotations

import base64
import json
import struct
import threading
import warnings

import numpy as np
import scipy.linalg

from .errors import (
    CapacityError,
    FormatError,
    RankClampWarning,
    ShapeError,
    VersionError,
    ZeroNormError,
)

#: Largest dense array, in entries, that densification helpers will allocate.
DENSE_GUARD = 100_000_000

_MAGIC = b"TTAC"
_FORMAT_VERSION = 1
_JSON_FORMAT = "ttaction-tt"


def _check_free_mode(free_mode, order):
    if not 1 <= free_mode <= order:
        raise ShapeError(f"free_mode must be in 1..{order}, got {free_mode}")


def _check_vectors(dims, free_mode, vectors):
    """Coerce the d-1 saturating vectors and verify their lengths."""
    other = [n for k, n in enumerate(dims, start=1) if k != free_mode]
    if len(vectors) != len(other):
        raise ShapeError(
            f"expected {len(other)} vectors for a {len(dims)}-mode tensor "
            f"with free mode {free_mode}, got {len(vectors)}"
        )
    out = []
    for n, v in zip(other, vectors):
        v = np.asarray(v, dtype=float)
        if v.shape != (n,):
            raise ShapeError(f"saturating vector has shape {v.shape}, expected ({n},)")
        out.append(v)
    return out


def dense_action(tensor, free_mode, vectors):
    """Action of a dense tensor: contract every mode but ``free_mode``.

    Parameters
    ----------
    tensor : ndarray
        Dense array of order >= 2.
    free_mode : int
        1-based index of the mode left free.
    vectors : sequence of ndarray
        One vector per saturated mode, in increasing mode order.

    Returns
    -------
    ndarray
        The free-mode fiber, shape ``(tensor.shape[free_mode - 1],)``.
    """
    tensor = np.asarray(tensor, dtype=float)
    d = tensor.ndim
    _check_free_mode(free_mode, d)
    vectors = _check_vectors(tensor.shape, free_mode, vectors)
    axes = [k for k in range(d) if k != free_mode - 1]
    out = tensor
    # contract highest axis first so the remaining axis numbers stay valid
    for ax, v in sorted(zip(axes, vectors), reverse=True, key=lambda t: t[0]):
        out = np.tensordot(out, v, axes=([ax], [0]))
    return out


class ActionOracle:
    """A tensor exposed only through its action, with a call counter.

    Parameters
    ----------
    dims : sequence of int
        Mode sizes (N_1, ..., N_d), d >= 2.
    apply_fn : callable
        ``apply_fn(free_mode, vectors) -> ndarray`` implementing the action.
        ``vectors`` arrive validated and in increasing mode order.

    Notes
    -----
    ``action`` may be invoked from several worker threads at once; the call
    counter is updated under a lock so concurrent use stays exact.
    """

    def __init__(self, dims, apply_fn):
        dims = tuple(int(n) for n in dims)
        if len(dims) < 2 or any(n < 1 for n in dims):
            raise ShapeError(f"need at least 2 modes of positive size, got {dims}")
        self.dims = dims
        self._apply = apply_fn
        self._count = 0
        self._lock = threading.Lock()

    @property
    def order(self):
        return len(self.dims)

    @property
    def action_count(self):
        """Number of actions performed since construction or the last reset."""
        return self._count

    def reset_count(self):
        with self._lock:
            self._count = 0

    def action(self, free_mode, vectors):
        """Saturate all modes but ``free_mode`` (1-based) and return the fiber."""
        _check_free_mode(free_mode, self.order)
        vectors = _check_vectors(self.dims, free_mode, vectors)
        with self._lock:
            self._count += 1
        out = np.asarray(self._apply(free_mode, vectors), dtype=float)
        if out.shape != (self.dims[free_mode - 1],):
            raise ShapeError(
                f"action returned shape {out.shape}, expected "
                f"({self.dims[free_mode - 1]},)"
            )
        return out


def oracle_from_dense(tensor):
    """Wrap a dense array as an :class:`ActionOracle`."""
    tensor = np.asarray(tensor, dtype=float)
    return ActionOracle(tensor.shape, lambda k, vs: dense_action(tensor, k, vs))


def oracle_from_tt(tt):
    """Wrap a :class:`TensorTrain` as an :class:`ActionOracle`."""
    return ActionOracle(tt.dims, lambda k, vs: tt_apply(tt, k, vs))


class TensorTrain:
    """Tensor train with cores stored as (left_rank, mode_size, right_rank).

    Boundary ranks are fixed to 1, so a d-mode train is the core chain
    (1, N_1, r_1), (r_1, N_2, r_2), ..., (r_{d-1}, N_d, 1).  The represented
    entry is the product of the selected core slices:
    ``T[i_1, ..., i_d] = C_1[:, i_1, :] @ C_2[:, i_2, :] @ ... @ C_d[:, i_d, :]``.
    """

    def __init__(self, cores):
        cores = [np.ascontiguousarray(c, dtype=float) for c in cores]
        if len(cores) < 2:
            raise ShapeError("a tensor train needs at least 2 cores")
        for k, c in enumerate(cores, start=1):
            if c.ndim != 3:
                raise ShapeError(f"core {k} must be 3-dimensional, got ndim={c.ndim}")
        if cores[0].shape[0] != 1 or cores[-1].shape[2] != 1:
            raise ShapeError("boundary ranks must be 1")
        for k in range(len(cores) - 1):
            if cores[k].shape[2] != cores[k + 1].shape[0]:
                raise ShapeError(
                    f"rank mismatch between cores {k + 1} and {k + 2}: "
                    f"{cores[k].shape[2]} vs {cores[k + 1].shape[0]}"
                )
        self.cores = cores

    @property
    def order(self):
        return len(self.cores)

    @property
    def dims(self):
        return tuple(c.shape[1] for c in self.cores)

    @property
    def ranks(self):
        """Internal ranks (r_1, ..., r_{d-1})."""
        return tuple(c.shape[2] for c in self.cores[:-1])

    def entry_count(self):
        """Total number of stored core entries."""
        return sum(c.size for c in self.cores)

    def left_orthogonality_defect(self):
        """Worst deviation of cores 1..d-1 from column-orthonormal unfoldings.

        Returns max over k < d of ``||Q_k^T Q_k - I||_max`` where Q_k is core k
        reshaped to (left_rank * mode_size, right_rank).
        """
        worst = 0.0
        for c in self.cores[:-1]:
            q = c.reshape(-1, c.shape[2])
            g = q.T @ q
            worst = max(worst, float(np.abs(g - np.eye(g.shape[0])).max()))
        return worst


def tt_apply(tt, free_mode, vectors):
    """Action of a tensor train without densifying it.

    Sweeps the saturating vectors through the cores from both ends and
    contracts them into the free core, costing O(d N r^2).
    """
    _check_free_mode(free_mode, tt.order)
    vectors = _check_vectors(tt.dims, free_mode, vectors)
    k = free_mode - 1
    left = np.ones(1)
    for j in range(k):
        # left (r_{j-1}) x core (r_{j-1}, N_j, r_j) x vector (N_j) -> (r_j)
        left = np.einsum("a,anb,n->b", left, tt.cores[j], vectors[j], optimize=True)
    right = np.ones(1)
    for j in range(tt.order - 1, k, -1):
        right = np.einsum(
            "anb,n,b->a", tt.cores[j], vectors[j - 1], right, optimize=True
        )
    return np.einsum("a,anb,b->n", left, tt.cores[k], right, optimize=True)


def tt_partial_apply(tt, k, vectors):
    """Contract cores 1..k with k vectors, returning a length-r_k vector.

    This is the partially built map used during interpolation: feeding the
    first k modes of the train and leaving the remaining chain untouched.
    ``k`` is 1-based and must be at most ``order - 1``.
    """
    if not 1 <= k <= tt.order - 1:
        raise ShapeError(f"k must be in 1..{tt.order - 1}, got {k}")
    if len(vectors) != k:
        raise ShapeError(f"expected {k} vectors, got {len(vectors)}")
    out = np.ones(1)
    for j in range(k):
        v = np.asarray(vectors[j], dtype=float)
        if v.shape != (tt.dims[j],):
            raise ShapeError(f"vector {j + 1} has shape {v.shape}, expected ({tt.dims[j]},)")
        out = np.einsum("a,anb,n->b", out, tt.cores[j], v, optimize=True)
    return out


def tt_to_dense(tt):
    """Materialize a tensor train as a dense array.

    Refuses trains above :data:`DENSE_GUARD` entries.
    """
    total = int(np.prod(tt.dims, dtype=np.int64))
    if total > DENSE_GUARD:
        raise CapacityError(
            f"refusing to densify {total} entries (budget {DENSE_GUARD})"
        )
    out = tt.cores[0].reshape(tt.dims[0], -1)
    for c in tt.cores[1:]:
        r = c.shape[0]
        out = out.reshape(-1, r) @ c.reshape(r, -1)
    return out.reshape(tt.dims)


def frobenius(array):
    """Frobenius norm of a dense array of any order."""
    return float(np.linalg.norm(np.asarray(array).ravel()))


def relative_error(reference, candidate):
    """Relative Frobenius distance ``||reference - candidate|| / ||reference||``."""
    reference = np.asarray(reference, dtype=float)
    candidate = np.asarray(candidate, dtype=float)
    if reference.shape != candidate.shape:
        raise ShapeError(
            f"shape mismatch: {reference.shape} vs {candidate.shape}"
        )
    denom = frobenius(reference)
    if denom == 0.0:
        raise ZeroNormError("reference tensor has zero norm")
    return frobenius(reference - candidate) / denom


def tt_dense_error(dense, tt):
    """Relative Frobenius distance between a dense tensor and a train.

    Streams over first-mode slabs so the train is never densified; only a
    (r_1 x prod(N_2..N_d)) composite of the trailing cores is formed.  Useful
    when the full tensor would trip :data:`DENSE_GUARD` arithmetic twice over.
    """
    dense = np.asarray(dense, dtype=float)
    if dense.shape != tt.dims:
        raise ShapeError(f"shape mismatch: {dense.shape} vs {tt.dims}")
    tail = int(np.prod(tt.dims[1:], dtype=np.int64))
    r1 = tt.cores[0].shape[2]
    if r1 * tail > DENSE_GUARD:
        raise CapacityError("trailing-core composite exceeds the entry budget")
    w = tt.cores[1].reshape(tt.cores[1].shape[0], -1)
    for c in tt.cores[2:]:
        r = c.shape[0]
        w = w.reshape(-1, r) @ c.reshape(r, -1)
    w = w.reshape(r1, tail)
    head = tt.cores[0].reshape(tt.dims[0], r1)
    err2 = 0.0
    ref2 = 0.0
    for i in range(tt.dims[0]):
        slab = dense[i].ravel()
        diff = slab - head[i] @ w
        err2 += float(diff @ diff)
        ref2 += float(slab @ slab)
    if ref2 == 0.0:
        raise ZeroNormError("reference tensor has zero norm")
    return float(np.sqrt(err2 / ref2))


def fix_signs(u, companion=None):
    """Force the largest-magnitude entry of each column of ``u`` positive.

    Makes SVD-derived bases deterministic.  If ``companion`` is given, its
    rows are flipped alongside so any factorization ``u @ companion`` is
    preserved; both arrays are modified in place and returned.
    """
    idx = np.abs(u).argmax(axis=0)
    flip = u[idx, np.arange(u.shape[1])] < 0
    u[:, flip] *= -1.0
    if companion is not None:
        companion[flip, :] *= -1.0
    return u, companion


def _truncated_svd(mat, rank=None, delta=None, warn_label="rank"):
    """Thin SVD of ``mat`` truncated by rank or Frobenius budget.

    Returns (U_r, s_r, V_r^T).  For very wide matrices the SVD is computed
    through a QR factorization of the transpose so the workspace stays at one
    extra copy of the input, and the large right factor is only formed for the
    retained rank.
    """
    m, n = mat.shape
    if n > max(8 * m, 65536):
        # mat^T = Q R  ->  mat = R^T Q^T; the (m x m) SVD of R^T is exact
        qt = np.array(mat.T, order="F", copy=True)
        q, r = scipy.linalg.qr(qt, mode="economic", overwrite_a=True, check_finite=False)
        del qt
        u, s, wt = scipy.linalg.svd(r.T, full_matrices=False, check_finite=False)
        keep = _truncation_index(s, rank, delta, min(m, n), warn_label)
        u = np.ascontiguousarray(u[:, :keep])
        vt = np.ascontiguousarray((q @ wt[:keep].T).T)
        del q
        s = s[:keep].copy()
    else:
        u, s, vt = scipy.linalg.svd(mat, full_matrices=False, check_finite=False)
        keep = _truncation_index(s, rank, delta, min(m, n), warn_label)
        u = np.ascontiguousarray(u[:, :keep])
        vt = np.ascontiguousarray(vt[:keep])
        s = s[:keep].copy()
    fix_signs(u, vt)
    return u, s, vt


def _truncation_index(s, rank, delta, full, warn_label):
    if rank is not None:
        if rank > full:
            warnings.warn(
                f"{warn_label} {rank} exceeds matrix capacity {full}; clamped",
                RankClampWarning,
                stacklevel=3,
            )
        return max(1, min(rank, full))
    if delta is None:
        return full
    tails = np.sqrt(np.cumsum(s[::-1] ** 2))[::-1]  # tails[k] = ||s[k:]||
    keep = full
    while keep > 1 and tails[keep - 1] <= delta:
        keep -= 1
    return keep


def tt_svd(tensor, ranks=None, tol=None):
    """Compress a dense tensor into a train by sequential thin SVDs.

    Parameters
    ----------
    tensor : ndarray
        Dense array of order >= 2.
    ranks : int or sequence of int, optional
        Internal ranks (r_1, ..., r_{d-1}); a scalar is broadcast.  Requested
        ranks beyond what an unfolding supports are clamped with a warning.
    tol : float, optional
        Relative Frobenius tolerance used when ``ranks`` is omitted; each
        unfolding is truncated against the budget ``tol * ||T|| / sqrt(d-1)``.

    Returns
    -------
    TensorTrain
        Cores 1..d-1 have column-orthonormal unfoldings.  With full ranks the
        reconstruction error is at machine precision.
    """
    tensor = np.asarray(tensor, dtype=float)
    d = tensor.ndim
    if d < 2:
        raise ShapeError("tensor must have at least 2 modes")
    if ranks is None and tol is None:
        ranks = [min(np.prod(tensor.shape[: k + 1], dtype=np.int64),
                     np.prod(tensor.shape[k + 1:], dtype=np.int64))
                 for k in range(d - 1)]
    if ranks is not None and np.isscalar(ranks):
        ranks = [int(ranks)] * (d - 1)
    if ranks is not None and len(ranks) != d - 1:
        raise ShapeError(f"need {d - 1} ranks, got {len(ranks)}")
    delta = None
    if ranks is None:
        delta = tol * frobenius(tensor) / np.sqrt(d - 1)
    dims = tensor.shape
    cores = []
    left = 1
    mat = tensor.reshape(dims[0], -1)
    for k in range(d - 1):
        mat = mat.reshape(left * dims[k], -1)
        u, s, vt = _truncated_svd(
            mat,
            rank=None if ranks is None else int(ranks[k]),
            delta=delta,
            warn_label=f"rank r_{k + 1}",
        )
        r = u.shape[1]
        cores.append(u.reshape(left, dims[k], r))
        mat = s[:, None] * vt
        left = r
    cores.append(mat.reshape(left, dims[d - 1], 1))
    return TensorTrain(cores)


def tt_round(tt, ranks=None, tol=None):
    """Truncate a train to lower ranks without densifying.

    Right-to-left orthogonalization sweep followed by a left-to-right SVD
    truncation sweep; ``ranks`` and ``tol`` behave as in :func:`tt_svd`.
    With neither given, only exact rank deadwood is removed.  Cores 1..d-1
    of the result have column-orthonormal unfoldings.
    """
    d = tt.order
    dims = tt.dims
    if ranks is not None and np.isscalar(ranks):
        ranks = [int(ranks)] * (d - 1)
    if ranks is not None and len(ranks) != d - 1:
        raise ShapeError(f"need {d - 1} ranks, got {len(ranks)}")
    cores = [np.asarray(c, dtype=float) for c in tt.cores]
    for k in range(d - 1, 0, -1):
        r_prev, n_k, r_k = cores[k].shape
        q, rr = scipy.linalg.qr(
            cores[k].reshape(r_prev, n_k * r_k).T,
            mode="economic",
            check_finite=False,
        )
        cores[k] = q.T.reshape(-1, n_k, r_k)
        cores[k - 1] = np.tensordot(cores[k - 1], rr.T, axes=(2, 0))
    delta = None
    if ranks is None and tol is not None:
        # cores 2..d are now row-orthonormal, so core 1 carries the norm
        delta = tol * float(np.linalg.norm(cores[0])) / np.sqrt(d - 1)
    out = []
    left = 1
    current = cores[0]
    for k in range(d - 1):
        u, s, vt = _truncated_svd(
            current.reshape(left * dims[k], -1),
            rank=None if ranks is None else int(ranks[k]),
            delta=delta,
            warn_label=f"rank r_{k + 1}",
        )
        r = u.shape[1]
        out.append(u.reshape(left, dims[k], r))
        current = np.tensordot(s[:, None] * vt, cores[k + 1], axes=(1, 0))
        left = r
    out.append(current)
    return TensorTrain(out)


# ---------------------------------------------------------------------------
# serialization


def _tt_header_bytes(tt):
    dims = tt.dims
    ranks = (1,) + tt.ranks + (1,)
    head = struct.pack("<4sII", _MAGIC, _FORMAT_VERSION, tt.order)
    head += struct.pack(f"<{len(dims)}Q", *dims)
    head += struct.pack(f"<{len(ranks)}Q", *ranks)
    return head


def tt_save(tt, path):
    """Write a train to ``path`` in the binary format.

    Layout: magic ``TTAC``, uint32 version, uint32 order, uint64 mode sizes,
    uint64 ranks (including the boundary 1s), then each core as row-major
    little-endian float64.  The format is platform independent.
    """
    with open(path, "wb") as fh:
        fh.write(_tt_header_bytes(tt))
        for c in tt.cores:
            fh.write(np.ascontiguousarray(c, dtype="<f8").tobytes())


def tt_load(path):
    """Read a train written by :func:`tt_save`.

    Raises :class:`~ttaction.errors.FormatError` with the byte offset on
    malformed input and :class:`~ttaction.errors.VersionError` on a format
    version this build does not understand.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    return _tt_from_bytes(blob)


def _tt_from_bytes(blob):
    if len(blob) < 12:
        raise FormatError("truncated header", offset=len(blob))
    magic, version, order = struct.unpack_from("<4sII", blob, 0)
    if magic != _MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0)
    if version != _FORMAT_VERSION:
        raise VersionError(f"unsupported format version {version}", offset=4)
    if order < 2:
        raise FormatError(f"order {order} out of range", offset=8)
    off = 12
    need = order * 8
    if len(blob) < off + need:
        raise FormatError("truncated mode sizes", offset=len(blob))
    dims = struct.unpack_from(f"<{order}Q", blob, off)
    off += need
    need = (order + 1) * 8
    if len(blob) < off + need:
        raise FormatError("truncated ranks", offset=len(blob))
    ranks = struct.unpack_from(f"<{order + 1}Q", blob, off)
    off += need
    if ranks[0] != 1 or ranks[-1] != 1:
        raise FormatError("boundary ranks must be 1", offset=off - need)
    cores = []
    for k in range(order):
        count = ranks[k] * dims[k] * ranks[k + 1]
        need = count * 8
        if len(blob) < off + need:
            raise FormatError(f"truncated core {k + 1}", offset=len(blob))
        data = np.frombuffer(blob, dtype="<f8", count=count, offset=off)
        cores.append(data.astype(float).reshape(ranks[k], dims[k], ranks[k + 1]))
        off += need
    if off != len(blob):
        raise FormatError("trailing bytes after last core", offset=off)
    return TensorTrain(cores)


def tt_save_json(tt, path):
    """Write a train as a JSON descriptor with base64 core payloads.

    Same fields as the binary format; meant for debugging and diffing.
    """
    doc = {
        "format": _JSON_FORMAT,
        "version": _FORMAT_VERSION,
        "order": tt.order,
        "dims": list(tt.dims),
        "ranks": [1, *tt.ranks, 1],
        "cores": [
            base64.b64encode(
                np.ascontiguousarray(c, dtype="<f8").tobytes()
            ).decode("ascii")
            for c in tt.cores
        ],
    }
    with open(path, "w", encoding="ascii") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def tt_load_json(path):
    """Read a train written by :func:`tt_save_json`."""
    with open(path, "r", encoding="ascii") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON: {exc}", offset=exc.pos) from exc
    if doc.get("format") != _JSON_FORMAT:
        raise FormatError(f"unexpected format tag {doc.get('format')!r}")
    if doc.get("version") != _FORMAT_VERSION:
        raise VersionError(f"unsupported format version {doc.get('version')}")
    try:
        order = doc["order"]
        dims = doc["dims"]
        ranks = doc["ranks"]
        payload = doc["cores"]
    except KeyError as exc:
        raise FormatError(f"missing field {exc}") from exc
    if not (len(dims) == order and len(ranks) == order + 1 and len(payload) == order):
        raise FormatError("inconsistent order/dims/ranks/cores lengths")
    cores = []
    for k in range(order):
        raw = base64.b64decode(payload[k])
        count = ranks[k] * dims[k] * ranks[k + 1]
        if len(raw) != count * 8:
            raise FormatError(f"core {k + 1} payload has {len(raw)} bytes, expected {count * 8}")
        data = np.frombuffer(raw, dtype="<f8", count=count)
        cores.append(data.astype(float).reshape(ranks[k], dims[k], ranks[k + 1]))
    return TensorTrain(cores)
