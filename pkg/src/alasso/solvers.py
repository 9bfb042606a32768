"""First-order solvers for the analysis-sparsity regression

    min_x  0.5 ||y - phi x||^2 + lam ||d* x||_1

The general case runs a relaxed primal-dual (Arrow-Hurwicz) scheme on the
splitting K x = (phi x, d* x).  Denoising (phi = identity) has a faster
dedicated path: the Fenchel dual is a box-constrained quadratic

    min_{||a||_inf <= lam}  || y + d a ||^2,      x* = y + d a*,

solved by projected gradient, optionally with two-step acceleration.

Non-convergence within the iteration budget is reported through the
``converged`` flag, never raised; NaN blowup raises FloatingPointError.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import krylov
from .linops import DictionarySpec, LinearMap, identity

log = logging.getLogger(__name__)

_TINY = 1e-30
_POWER_SEED = 0x5EED


@dataclass
class SolverParams:
    max_iters: int = 20000
    tol: float = 1e-10
    theta: float = 1.0
    step_scale: float = 0.9
    power_iters: int = 100
    accelerate: bool = False
    check_every: int = 10


@dataclass
class Problem:
    """One regression instance.  sigma is the noise level when known."""
    phi: LinearMap
    dictionary: DictionarySpec
    y: np.ndarray
    lam: float
    sigma: float | None = None
    x0: np.ndarray | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.y.size != self.phi.rows:
            raise ValueError("y does not match the operator output size")
        if self.phi.cols != self.dictionary.n:
            raise ValueError("operator and dictionary signal sizes differ")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")


@dataclass
class Solution:
    x: np.ndarray
    mu: np.ndarray
    coeffs: np.ndarray
    objective: float
    iterations: int
    primal_residual: float
    converged: bool
    duals: tuple = field(default=(), repr=False)


def objective(problem, x):
    """Value of the regularized least-squares objective at x."""
    x = np.asarray(x, dtype=float).ravel()
    r = problem.y - problem.phi.apply(x)
    c = problem.dictionary.analysis.apply(x)
    return 0.5 * float(r @ r) + problem.lam * float(np.sum(np.abs(c)))


def prox_l1(v, t):
    """Soft thresholding, the proximal map of t * ||.||_1."""
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def project_inf_ball(v, r):
    """Euclidean projection onto the centered sup-norm ball of radius r."""
    return np.clip(v, -r, r)


def _power_l2(apply_normal, n, iters, seed=_POWER_SEED):
    """Largest eigenvalue of a symmetric psd map by power iteration."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = apply_normal(v)
        lam = float(np.linalg.norm(w))
        if lam == 0.0:
            return 0.0
        v = w / lam
    return lam


def _finish(problem, x, iterations, crit, converged, duals=()):
    mu = problem.phi.apply(x)
    coeffs = problem.dictionary.analysis.apply(x)
    r = problem.y - mu
    obj = 0.5 * float(r @ r) + problem.lam * float(np.sum(np.abs(coeffs)))
    return Solution(x=x, mu=mu, coeffs=coeffs, objective=obj,
                    iterations=iterations, primal_residual=crit,
                    converged=converged, duals=duals)


def _least_squares(problem, params):
    # lam = 0 reduces to ordinary least squares; needs phi* phi invertible.
    phi = problem.phi
    if phi.cols <= 512:
        s = np.linalg.svd(phi.to_dense(), compute_uv=False)
        if phi.rows < phi.cols or s[-1] <= 1e-10 * s[0]:
            raise ValueError(
                "lam = 0 needs an operator with full column rank")
    count = [0]

    def normal(v):
        count[0] += 1
        return phi.adjoint(phi.apply(v))

    op = LinearMap(phi.cols, phi.cols, normal, normal, kind="composition")
    rhs = phi.adjoint(problem.y)
    try:
        x = krylov.cg(op, rhs, krylov.KrylovParams(tol=min(params.tol, 1e-10),
                                                   max_iters=params.max_iters))
    except krylov.KrylovError as exc:
        raise ValueError(
            "lam = 0 requires an invertible normal operator; conjugate "
            "gradients stalled") from exc
    return _finish(problem, x, count[0], 0.0, True)


def solve_primal_dual(problem, params=None, x_init=None, dual_init=None):
    """Relaxed primal-dual iteration for the general operator case.

    Parameters
    ----------
    problem : Problem
    params : SolverParams, optional
    x_init : array, optional
        Warm-start primal point (defaults to zero).
    dual_init : (q, p) pair, optional
        Warm-start dual points; p is re-projected onto the current
        feasible box, so warm starting across a lambda grid is safe.

    Stopping couples two relative tests over a ``check_every`` window: the
    change of x and the change of the objective must both fall below tol.
    """
    params = params or SolverParams()
    if problem.lam == 0.0:
        return _least_squares(problem, params)
    phi, dic, y, lam = (problem.phi, problem.dictionary, problem.y,
                        problem.lam)
    n, q_dim, p_dim = phi.cols, phi.rows, dic.p

    l2 = _power_l2(
        lambda v: phi.adjoint(phi.apply(v)) + dic.base.apply(
            dic.analysis.apply(v)),
        n, params.power_iters)
    if l2 == 0.0:
        # zero operator pair: everything is optimal at x = 0
        return _finish(problem, np.zeros(n), 0, 0.0, True)
    step = params.step_scale / np.sqrt(l2)
    tau = sigma_step = step

    x = np.zeros(n) if x_init is None else np.asarray(x_init, float).copy()
    if dual_init is None:
        q = np.zeros(q_dim)
        p = np.zeros(p_dim)
    else:
        q = np.asarray(dual_init[0], float).copy()
        p = project_inf_ball(np.asarray(dual_init[1], float), lam)
    x_bar = x.copy()

    prev_x = x.copy()
    prev_obj = objective(problem, x)
    crit = np.inf
    converged = False
    it = 0
    for it in range(1, params.max_iters + 1):
        q = (q + sigma_step * (phi.apply(x_bar) - y)) / (1.0 + sigma_step)
        p = project_inf_ball(p + sigma_step * dic.analysis.apply(x_bar), lam)
        x_new = x - tau * (phi.adjoint(q) + dic.base.apply(p))
        x_bar = x_new + params.theta * (x_new - x)
        x = x_new
        if it % params.check_every == 0:
            if not np.all(np.isfinite(x)):
                raise FloatingPointError(
                    "primal-dual iteration produced non-finite values")
            obj = objective(problem, x)
            rel_dx = (np.linalg.norm(x - prev_x)
                      / max(np.linalg.norm(x), _TINY))
            rel_dobj = abs(obj - prev_obj) / max(abs(obj), _TINY)
            crit = max(rel_dx, rel_dobj)
            if crit <= params.tol:
                converged = True
                break
            prev_x = x.copy()
            prev_obj = obj
    return _finish(problem, x, it, float(crit), converged, duals=(q, p))


def solve_denoising_dual(y, dictionary, lam, params=None, alpha_init=None):
    """Dual projected gradient for denoising (phi = identity).

    With the plain scheme (``params.accelerate`` false) the dual value
    ||y + d a||^2 decreases monotonically; the accelerated two-step
    variant is faster but not monotone.
    """
    params = params or SolverParams()
    y = np.asarray(y, dtype=float).ravel()
    n = dictionary.n
    if y.size != n:
        raise ValueError("y does not match the dictionary signal size")
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    problem = Problem(identity(n), dictionary, y, lam)
    if lam == 0.0:
        return _finish(problem, y.copy(), 0, 0.0, True)

    base, an = dictionary.base, dictionary.analysis
    l2 = _power_l2(lambda v: base.apply(an.apply(v)), n, params.power_iters)
    if l2 == 0.0:
        return _finish(problem, y.copy(), 0, 0.0, True)
    step = 1.0 / l2

    alpha = (np.zeros(dictionary.p) if alpha_init is None
             else project_inf_ball(np.asarray(alpha_init, float), lam))
    alpha_prev = alpha.copy()
    t_k = 1.0

    x = y + base.apply(alpha)
    prev_x = x.copy()
    prev_obj = objective(problem, x)
    crit = np.inf
    converged = False
    it = 0
    for it in range(1, params.max_iters + 1):
        if params.accelerate:
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_k * t_k))
            beta = (t_k - 1.0) / t_next
            z = alpha + beta * (alpha - alpha_prev)
            alpha_prev = alpha
            alpha = project_inf_ball(
                z - step * an.apply(y + base.apply(z)), lam)
            t_k = t_next
        else:
            alpha = project_inf_ball(
                alpha - step * an.apply(y + base.apply(alpha)), lam)
        if it % params.check_every == 0:
            x = y + base.apply(alpha)
            if not np.all(np.isfinite(x)):
                raise FloatingPointError(
                    "projected gradient produced non-finite values")
            obj = objective(problem, x)
            rel_dx = (np.linalg.norm(x - prev_x)
                      / max(np.linalg.norm(x), _TINY))
            rel_dobj = abs(obj - prev_obj) / max(abs(obj), _TINY)
            crit = max(rel_dx, rel_dobj)
            if crit <= params.tol:
                converged = True
                break
            prev_x = x.copy()
            prev_obj = obj
    x = y + base.apply(alpha)
    return _finish(problem, x, it, float(crit), converged, duals=(alpha,))
