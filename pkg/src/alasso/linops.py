"""Matrix-free linear operators and analysis dictionaries.

Every operator carries an explicit adjoint so iterative solvers never need
a materialized matrix.  ``to_dense`` exists for desk-scale checks and exact
small computations and is guarded by an entry budget.
"""

from __future__ import annotations

import numpy as np
from scipy import fft as _fft

# Capacity guard for to_dense: rows * cols must stay below this.
DENSE_LIMIT = 4_000_000

_POWER_SEED = 0x5EED


class LinearMap:
    """A linear operator with explicit forward and adjoint actions.

    Parameters
    ----------
    rows, cols : int
        Output and input dimensions.
    apply_fn : callable
        Maps an array of shape (cols,) to an array of shape (rows,).
    adjoint_fn : callable
        Maps an array of shape (rows,) to an array of shape (cols,).
    kind : str
        Tag describing the operator family, informational only.
    """

    def __init__(self, rows, cols, apply_fn, adjoint_fn, kind="custom"):
        if rows < 0 or cols < 0:
            raise ValueError("operator dimensions must be nonnegative")
        self.rows = int(rows)
        self.cols = int(cols)
        self.kind = kind
        self._apply = apply_fn
        self._adjoint = adjoint_fn

    def apply(self, x):
        x = np.asarray(x, dtype=float).ravel()
        if x.shape != (self.cols,):
            raise ValueError(
                f"apply expects shape ({self.cols},), got {x.shape}")
        return np.asarray(self._apply(x), dtype=float)

    def adjoint(self, u):
        u = np.asarray(u, dtype=float).ravel()
        if u.shape != (self.rows,):
            raise ValueError(
                f"adjoint expects shape ({self.rows},), got {u.shape}")
        return np.asarray(self._adjoint(u), dtype=float)

    __call__ = apply

    @property
    def T(self):
        """Adjoint of this operator as a LinearMap view."""
        return LinearMap(self.cols, self.rows, self._adjoint, self._apply,
                         kind=self.kind)

    def to_dense(self, dense_limit=None):
        """Materialize the operator as a dense matrix.

        Raises ValueError when rows * cols exceeds the entry budget.
        """
        limit = DENSE_LIMIT if dense_limit is None else dense_limit
        if self.rows * self.cols > limit:
            raise ValueError(
                f"dense materialization of {self.rows}x{self.cols} exceeds "
                f"budget {limit}")
        # Build along the cheaper side.
        if self.rows <= self.cols:
            out = np.empty((self.rows, self.cols))
            e = np.zeros(self.rows)
            for i in range(self.rows):
                e[i] = 1.0
                out[i, :] = self.adjoint(e)
                e[i] = 0.0
        else:
            out = np.empty((self.rows, self.cols))
            e = np.zeros(self.cols)
            for j in range(self.cols):
                e[j] = 1.0
                out[:, j] = self.apply(e)
                e[j] = 0.0
        return out

    def __matmul__(self, other):
        if isinstance(other, LinearMap):
            return compose(self, other)
        return NotImplemented

    def __repr__(self):
        return f"LinearMap({self.rows}x{self.cols}, kind={self.kind!r})"


def compose(a, b):
    """Composition a o b, applying b first."""
    if a.cols != b.rows:
        raise ValueError(
            f"cannot compose {a.rows}x{a.cols} with {b.rows}x{b.cols}")
    return LinearMap(a.rows, b.cols,
                     lambda x: a.apply(b.apply(x)),
                     lambda u: b.adjoint(a.adjoint(u)),
                     kind="composition")


def scale(c, op):
    """The operator c * op for a real scalar c."""
    c = float(c)
    return LinearMap(op.rows, op.cols,
                     lambda x: c * op.apply(x),
                     lambda u: c * op.adjoint(u),
                     kind="scaled")


def identity(n):
    return LinearMap(n, n, lambda x: x.copy(), lambda u: u.copy(),
                     kind="identity")


def from_matrix(m):
    """Wrap an explicit matrix."""
    m = np.ascontiguousarray(np.asarray(m, dtype=float))
    if m.ndim != 2:
        raise ValueError("from_matrix expects a 2-d array")
    return LinearMap(m.shape[0], m.shape[1],
                     lambda x: m @ x,
                     lambda u: m.T @ u,
                     kind="dense")


def _selection(n, idx, kind):
    idx = np.asarray(idx, dtype=int)
    if idx.ndim != 1:
        raise ValueError("index set must be one dimensional")
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ValueError("selection indices out of range")
    if np.unique(idx).size != idx.size:
        raise ValueError("selection indices must be distinct")

    def ap(x):
        return x[idx]

    def adj(u):
        z = np.zeros(n)
        z[idx] = u
        return z

    m = LinearMap(idx.size, n, ap, adj, kind=kind)
    m.selected = idx
    return m


def mask(n, keep):
    """Keep the listed coordinates of a length-n vector, in sorted order."""
    keep = np.sort(np.asarray(keep, dtype=int))
    return _selection(n, keep, "mask")


def subsample(n, factor, offset=0):
    """Keep every factor-th entry of a length-n vector."""
    factor = int(factor)
    if factor < 1:
        raise ValueError("subsampling factor must be >= 1")
    if not 0 <= offset < factor:
        raise ValueError("offset must lie in [0, factor)")
    return _selection(n, np.arange(offset, n, factor), "subsample")


def subsample_rows(h, w, factor, offset=0):
    """Keep every factor-th row of an h x w image stored flat in row order."""
    factor = int(factor)
    if factor < 1:
        raise ValueError("subsampling factor must be >= 1")
    if not 0 <= offset < factor:
        raise ValueError("offset must lie in [0, factor)")
    rows = np.arange(offset, h, factor)
    idx = (rows[:, None] * w + np.arange(w)[None, :]).ravel()
    return _selection(h * w, idx, "subsample")


def _corr_indices(n, m):
    # fwd[k, i] = (i + k) mod n; the adjoint gathers at (i - k) mod n
    k = np.arange(m)[:, None]
    i = np.arange(n)[None, :]
    return (i + k) % n, (i - k) % n


def circular_conv(n, kernel):
    """Periodic correlation with a short kernel: y[i] = sum_k g[k] x[i+k]."""
    g = np.asarray(kernel, dtype=float).ravel()
    if g.size == 0 or g.size > n:
        raise ValueError("kernel length must be in [1, n]")
    fwd, rev = _corr_indices(n, g.size)
    return LinearMap(n, n,
                     lambda x: g @ x[fwd],
                     lambda u: g @ u[rev],
                     kind="circular_conv")


def partial_dct(n, q, seed):
    """Q rows of the orthonormal type-II DCT, chosen without replacement.

    Row selection is a seeded shuffle, so the same seed always yields the
    same rows.  The rows are orthonormal, hence the operator satisfies
    phi phi* = identity on R^q.
    """
    if not 1 <= q <= n:
        raise ValueError("need 1 <= q <= n")
    rng = np.random.default_rng(seed)
    rows = np.sort(rng.permutation(n)[:q])

    def ap(x):
        return _fft.dct(x, type=2, norm="ortho")[rows]

    def adj(u):
        z = np.zeros(n)
        z[rows] = u
        return _fft.idct(z, type=2, norm="ortho")

    m = LinearMap(q, n, ap, adj, kind="partial_dct")
    m.selected = rows
    return m


def operator_norm(op, iters=100, seed=_POWER_SEED):
    """Estimate the spectral norm of op by power iteration on op* op."""
    if op.cols == 0 or op.rows == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(op.cols)
    nv = np.linalg.norm(v)
    if nv == 0:
        return 0.0
    v /= nv
    lam = 0.0
    for _ in range(iters):
        w = op.adjoint(op.apply(v))
        lam = np.linalg.norm(w)
        if lam == 0.0:
            return 0.0
        v = w / lam
    return float(np.sqrt(lam))


class DictionarySpec:
    """An analysis dictionary: synthesis map and its adjoint.

    ``base`` is the synthesis operator D of shape (n, p); ``analysis`` is
    D* of shape (p, n).  Signals live in R^n, coefficients in R^p.
    """

    def __init__(self, base, analysis):
        if base.rows != analysis.cols or base.cols != analysis.rows:
            raise ValueError("base and analysis shapes are inconsistent")
        self.base = base
        self.analysis = analysis

    @property
    def n(self):
        return self.base.rows

    @property
    def p(self):
        return self.base.cols

    def columns(self, idx):
        """D restricted to the columns idx, as an (n, len(idx)) LinearMap."""
        idx = np.asarray(idx, dtype=int)
        if idx.size and (idx.min() < 0 or idx.max() >= self.p):
            raise ValueError("column indices out of range")
        p = self.p

        def ap(a):
            z = np.zeros(p)
            z[idx] = a
            return self.base.apply(z)

        def adj(v):
            return self.analysis.apply(v)[idx]

        return LinearMap(self.n, idx.size, ap, adj, kind="composition")

    def __repr__(self):
        return f"DictionarySpec(n={self.n}, p={self.p})"


def identity_dict(n):
    return DictionarySpec(identity(n), identity(n))


def dict_from_matrix(d):
    """Dictionary with explicit synthesis matrix d of shape (n, p)."""
    base = from_matrix(d)
    return DictionarySpec(base, base.T)


def finite_diff_1d(n):
    """Forward differences on a length-n signal; p = n - 1."""
    if n < 2:
        raise ValueError("need n >= 2")

    def an(x):
        return x[1:] - x[:-1]

    def an_adj(u):
        z = np.zeros(n)
        z[1:] += u
        z[:-1] -= u
        return z

    analysis = LinearMap(n - 1, n, an, an_adj, kind="finite_diff_1d")
    return DictionarySpec(analysis.T, analysis)


def finite_diff_2d(h, w):
    """Horizontal and vertical forward differences of an h x w image.

    The image is stored flat in row-major order.  Boundary handling is
    Neumann (differences are simply not formed across the border), so
    p = h (w - 1) + (h - 1) w and the kernel is the constant images.
    """
    if h < 2 or w < 2:
        raise ValueError("need h, w >= 2")
    ph = h * (w - 1)
    pv = (h - 1) * w

    def an(x):
        im = x.reshape(h, w)
        dh = im[:, 1:] - im[:, :-1]
        dv = im[1:, :] - im[:-1, :]
        return np.concatenate([dh.ravel(), dv.ravel()])

    def an_adj(u):
        z = np.zeros((h, w))
        uh = u[:ph].reshape(h, w - 1)
        uv = u[ph:].reshape(h - 1, w)
        z[:, 1:] += uh
        z[:, :-1] -= uh
        z[1:, :] += uv
        z[:-1, :] -= uv
        return z.ravel()

    analysis = LinearMap(ph + pv, h * w, an, an_adj, kind="finite_diff_2d")
    return DictionarySpec(analysis.T, analysis)


def haar_shift_invariant(n, levels):
    """Undecimated Haar detail bands at scales 1..levels, periodic.

    Each band is a circular correlation whose rows have unit l2 norm; the
    band at scale j averages 2**(j-1) samples against the next 2**(j-1).
    p = levels * n.
    """
    if n < 2 or (n & (n - 1)) != 0:
        raise ValueError("n must be a power of two")
    if not 1 <= levels <= int(np.log2(n)):
        raise ValueError("levels must lie in [1, log2(n)]")

    bands = []
    for j in range(1, levels + 1):
        m = 2 ** j
        c = 2.0 ** (-j / 2.0)
        g = np.full(m, -c)
        g[: m // 2] = c
        fwd, rev = _corr_indices(n, m)
        bands.append((g, fwd, rev))

    def an(x):
        return np.concatenate([g @ x[fwd] for g, fwd, _ in bands])

    def an_adj(u):
        z = np.zeros(n)
        for i, (g, _, rev) in enumerate(bands):
            z += g @ u[i * n:(i + 1) * n][rev]
        return z

    analysis = LinearMap(levels * n, n, an, an_adj,
                         kind="haar_shift_invariant")
    return DictionarySpec(analysis.T, analysis)
