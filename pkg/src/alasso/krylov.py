"""Iterative solvers for the symmetric linear systems used by the
constrained quadratic maps in this package.

``cg`` handles positive definite systems, ``minres`` symmetric indefinite
ones, and ``kkt_solve`` the equality-constrained normal equations

    [ phi* phi   d_j ] [ nu  ]   [ rhs ]
    [ d_j*        0  ] [ mult] = [  0  ]

whose nu block is the constrained least-squares direction.  All solvers
verify the true residual after the fact; failing the requested tolerance
raises ``KrylovError`` with the achieved residual attached, so callers can
distinguish a singular or ill-posed system from a converged one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .linops import LinearMap


@dataclass
class KrylovParams:
    tol: float = 1e-10
    max_iters: int = 20000


class KrylovError(RuntimeError):
    """Solver failed to reach the requested residual."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


def _as_scipy(op):
    if isinstance(op, LinearMap):
        return spla.LinearOperator((op.rows, op.cols), matvec=op.apply,
                                   rmatvec=op.adjoint, dtype=float)
    m = np.asarray(op, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("expected a square matrix or LinearMap")
    return spla.aslinearoperator(m)


def _residual(a, x, b):
    return float(np.linalg.norm(b - a.matvec(x)))


def cg(op, b, params=None):
    """Conjugate gradients for a symmetric positive definite system.

    Returns x with ||op(x) - b|| <= tol * ||b||.
    """
    params = params or KrylovParams()
    b = np.asarray(b, dtype=float).ravel()
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return np.zeros_like(b)
    a = _as_scipy(op)
    if a.shape[0] != a.shape[1] or a.shape[0] != b.size:
        raise ValueError("cg needs a square operator matching b")
    x = np.zeros_like(b)
    for rtol in (params.tol, params.tol * 1e-2):
        with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
            x, _ = spla.cg(a, b, x0=x, rtol=rtol, atol=0.0,
                           maxiter=params.max_iters)
        if not np.all(np.isfinite(x)):
            raise KrylovError("cg produced non-finite iterates", None)
        res = _residual(a, x, b)
        if res <= params.tol * nb:
            return x
    raise KrylovError(
        f"cg did not reach tol {params.tol:g}: residual {res / nb:.3e} "
        "relative; the system may be singular or indefinite", res)


def minres(op, b, params=None):
    """MINRES for a symmetric, possibly indefinite or singular system.

    For consistent systems this drives the true residual below
    tol * ||b||; inconsistency or loss of symmetry surfaces as KrylovError.
    """
    params = params or KrylovParams()
    b = np.asarray(b, dtype=float).ravel()
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return np.zeros_like(b)
    a = _as_scipy(op)
    if a.shape[0] != a.shape[1] or a.shape[0] != b.size:
        raise ValueError("minres needs a square operator matching b")
    x = np.zeros_like(b)
    # scipy's stopping tests can quit above the true-residual target, so
    # restart with a tighter rtol until the verified residual passes.
    for rtol in (params.tol, params.tol * 1e-2, params.tol * 1e-4):
        x, _ = spla.minres(a, b, x0=x, rtol=rtol, maxiter=params.max_iters)
        if not np.all(np.isfinite(x)):
            raise KrylovError("minres produced non-finite iterates", None)
        res = _residual(a, x, b)
        if res <= params.tol * nb:
            return x
    raise KrylovError(
        f"minres did not reach tol {params.tol:g}: residual {res / nb:.3e} "
        "relative; the system may be inconsistent (rank deficient)", res)


def kkt_solve(phi, d_j, rhs_top, params=None):
    """Solve the saddle system pairing phi* phi with the constraints d_j.

    Parameters
    ----------
    phi : LinearMap, shape (q, n)
    d_j : LinearMap, shape (n, m)
        Synthesis map restricted to the constrained columns; m may be 0.
    rhs_top : array, shape (n,)
    params : KrylovParams, optional

    Returns
    -------
    nu : array, shape (n,)
        Solution of the constrained system; satisfies d_j* nu ~ 0.
    mult : array, shape (m,)
        A set of multipliers (not unique when d_j is rank deficient).
    """
    params = params or KrylovParams()
    n = phi.cols
    m = d_j.cols
    rhs_top = np.asarray(rhs_top, dtype=float).ravel()
    if rhs_top.size != n:
        raise ValueError("rhs_top size does not match phi")
    nb = np.linalg.norm(rhs_top)
    if nb == 0.0:
        return np.zeros(n), np.zeros(m)

    if m == 0:
        normal = LinearMap(n, n,
                           lambda v: phi.adjoint(phi.apply(v)),
                           lambda v: phi.adjoint(phi.apply(v)),
                           kind="composition")
        nu = cg(normal, rhs_top, params)
        return nu, np.zeros(0)

    def ap(z):
        v, w = z[:n], z[n:]
        top = phi.adjoint(phi.apply(v)) + d_j.apply(w)
        bot = d_j.adjoint(v)
        return np.concatenate([top, bot])

    saddle = LinearMap(n + m, n + m, ap, ap, kind="composition")
    rhs = np.concatenate([rhs_top, np.zeros(m)])
    # minres verifies the true residual of the stacked system, which bounds
    # both block residuals by tol * ||rhs_top||.
    z = minres(saddle, rhs, params)
    return z[:n], z[n:]
