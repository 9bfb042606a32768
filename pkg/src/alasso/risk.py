"""Degrees of freedom and generalized unbiased risk estimation.

For a solution with cosupport J satisfying the injectivity condition, the
prediction map y -> phi x*(y) is locally the orthogonal projector onto
phi(G_J), so its divergence is d = dim G_J.  That single number gives the
prediction-domain estimator

    sure_pred = ||y - mu*||^2 - q sigma^2 + 2 sigma^2 d.

Risk in other domains needs traces of the constrained inverse map: with
x_ml = phi* (phi phi*)^+ y and Pi the projector onto the row space,

    gsure_proj = ||x_ml - Pi x*||^2 - sigma^2 tr((phi phi*)^+)
                 + 2 sigma^2 tr(Pi A_J)
    gsure_est  = ||x_ml - x*||^2 - sigma^2 tr((phi* phi)^-1)
                 + 2 sigma^2 tr(A_J)

Traces are computed densely at desk scale and by a Monte Carlo probe
scheme otherwise; each probe costs one constrained linear solve.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import krylov
from .cosparse import (CosparseError, _AJSolver, certified_solve,
                       prediction_jacobian)
from .linops import LinearMap
from .solvers import Problem

log = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1
_DENSE_TRACE_LIMIT = 512


def _mix64(seed, index):
    """SplitMix64 finalizer over seed and a stream index.

    Gives a well-spread 64-bit value for (seed, index) pairs, so parallel
    or out-of-order evaluation of trials and probes stays reproducible.
    """
    z = (int(seed) + 0x9E3779B97F4A7C15 * (int(index) + 1)) & _MASK64
    z ^= z >> 30
    z = (z * 0xBF58476D1CE4E5B9) & _MASK64
    z ^= z >> 27
    z = (z * 0x94D049BB133111EB) & _MASK64
    z ^= z >> 31
    return z


@dataclass(frozen=True)
class ProbeStream:
    """A reproducible stream of standard normal probe vectors."""
    seed: int
    count: int
    dim: int

    def probe(self, i):
        if not 0 <= i < self.count:
            raise IndexError("probe index out of range")
        rng = np.random.default_rng(_mix64(self.seed, i))
        return rng.standard_normal(self.dim)

    def __iter__(self):
        return (self.probe(i) for i in range(self.count))


@dataclass
class MCTrace:
    value: float
    stderr: float | None
    used: int
    dropped: int


@dataclass
class RiskReport:
    """Risk quantities at one lambda; entries are None when not computed."""
    lam: float | None = None
    dof: int | None = None
    gsure_pred: float | None = None
    gsure_proj: float | None = None
    gsure_est: float | None = None
    se_pred: float | None = None
    se_proj: float | None = None
    se_est: float | None = None
    mc_probes: int = 0
    seed: int | None = None


def dof_estimate(model):
    """Unbiased degrees-of-freedom count for a detected cosupport."""
    if model.hJ_holds is None:
        raise ValueError(
            "injectivity flag unknown; detect the cosupport with the "
            "measurement operator or reduce first")
    if not model.hJ_holds:
        raise ValueError(
            "injectivity fails on this cosupport; apply reduce_to_HJ first")
    return int(model.d)


def sure_prediction(y, mu, sigma2, dof):
    """Prediction-domain unbiased risk estimate."""
    y = np.asarray(y, dtype=float).ravel()
    mu = np.asarray(mu, dtype=float).ravel()
    r = y - mu
    return float(r @ r) - y.size * sigma2 + 2.0 * sigma2 * dof


def x_ml(phi, y, params=None, route="auto"):
    """Maximum likelihood backprojection phi* (phi phi*)^+ y.

    The iterative route runs conjugate gradients on the small Gram system
    and suits full-row-rank operators; the dense route computes a
    pseudoinverse solution and handles rank deficiency.
    """
    params = params or krylov.KrylovParams()
    y = np.asarray(y, dtype=float).ravel()
    if route in ("auto", "cg"):
        gram = LinearMap(phi.rows, phi.rows,
                         lambda u: phi.apply(phi.adjoint(u)),
                         lambda u: phi.apply(phi.adjoint(u)),
                         kind="composition")
        try:
            return phi.adjoint(krylov.cg(gram, y, params))
        except krylov.KrylovError:
            if route == "cg":
                raise
    x, *_ = np.linalg.lstsq(phi.to_dense(), y, rcond=None)
    return x


def _xml_factor(phi, params=None):
    """The estimator factor A = phi* (phi phi*)^+ as a LinearMap."""
    def ap(z):
        return x_ml(phi, z, params)

    def adj(v):
        return _pinv_gram_apply(phi, phi.apply(v), params)

    return LinearMap(phi.cols, phi.rows, ap, adj, kind="composition")


def _pinv_gram_apply(phi, u, params=None):
    """(phi phi*)^+ u by conjugate gradients with a dense fallback."""
    params = params or krylov.KrylovParams()
    gram = LinearMap(phi.rows, phi.rows,
                     lambda z: phi.apply(phi.adjoint(z)),
                     lambda z: phi.apply(phi.adjoint(z)),
                     kind="composition")
    try:
        return krylov.cg(gram, u, params)
    except krylov.KrylovError:
        m = phi.to_dense()
        return np.linalg.pinv(m @ m.T) @ u


def _est_factor(phi, params=None):
    """The estimator factor A = (phi* phi)^-1 phi* as a LinearMap."""
    params = params or krylov.KrylovParams()
    normal = LinearMap(phi.cols, phi.cols,
                       lambda v: phi.adjoint(phi.apply(v)),
                       lambda v: phi.adjoint(phi.apply(v)),
                       kind="composition")

    def ap(z):
        return krylov.cg(normal, phi.adjoint(z), params)

    def adj(v):
        return phi.apply(krylov.cg(normal, v, params))

    return LinearMap(phi.cols, phi.rows, ap, adj, kind="composition")


def mc_trace(phi, dictionary, cosupport, a_factor, probes, params=None,
             route="auto", basis=None):
    """Monte Carlo estimate of tr(A phi A_J phi* A*).

    Each probe z costs one constrained solve nu(z) = A_J phi* z and one
    inner product <nu(z), phi* A* A z>.  Probes whose solve fails are
    dropped and counted.  The mean uses compensated summation so the
    result is independent of accumulation order; stderr is None for a
    single probe.
    """
    solver = _AJSolver(phi, dictionary, cosupport, params, route, basis)
    vals = []
    dropped = 0
    for i in range(probes.count):
        z = probes.probe(i)
        try:
            nu = solver.apply(phi.adjoint(z))
        except (krylov.KrylovError, CosparseError):
            dropped += 1
            continue
        w = a_factor.adjoint(a_factor.apply(z))
        vals.append(float(nu @ phi.adjoint(w)))
    if not vals:
        raise CosparseError("all trace probes failed to solve")
    k = len(vals)
    mean = math.fsum(vals) / k
    stderr = None
    if k >= 2:
        var = math.fsum((v - mean) ** 2 for v in vals) / (k - 1)
        stderr = math.sqrt(var / k)
    return MCTrace(value=mean, stderr=stderr, used=k, dropped=dropped)


def _dense_phi_svd(phi):
    m = phi.to_dense()
    u, s, _ = np.linalg.svd(m, full_matrices=False)
    return m, u, s


def trace_pinv_gram(phi, probes=None, params=None, rank_tol=1e-10):
    """tr((phi phi*)^+), dense at desk scale, probed otherwise."""
    if phi.rows <= _DENSE_TRACE_LIMIT:
        _, _, s = _dense_phi_svd(phi)
        keep = s > rank_tol * s[0]
        return float(np.sum(1.0 / s[keep] ** 2))
    if probes is None:
        raise ValueError("large operator: supply probes for the trace")
    vals = [float(z @ _pinv_gram_apply(phi, z, params)) for z in probes]
    return math.fsum(vals) / len(vals)


def trace_inv_normal(phi, rank_tol=1e-10):
    """tr((phi* phi)^-1); requires full column rank."""
    if phi.cols > _DENSE_TRACE_LIMIT:
        raise ValueError("dense trace beyond the desk-scale budget")
    _, _, s = _dense_phi_svd(phi)
    if phi.rows < phi.cols or s[-1] <= rank_tol * s[0]:
        raise ValueError("phi* phi is not invertible")
    return float(np.sum(1.0 / s ** 2))


def has_full_column_rank(phi, rank_tol=1e-10):
    if phi.rows < phi.cols:
        return False
    s = np.linalg.svd(phi.to_dense(), compute_uv=False)
    return bool(s[-1] > rank_tol * s[0])


def _dense_dev_proj(phi, model, rank_tol=1e-10):
    """tr(Pi A_J) through the cospace basis, all dense."""
    u = model.basis
    if u.shape[1] == 0:
        return 0.0
    m, lu, s = _dense_phi_svd(phi)
    keep = s > rank_tol * s[0]
    b = m @ u
    g = b.T @ b
    c = np.linalg.solve(g, b.T)
    w = (lu[:, keep] / s[keep] ** 2) @ (lu[:, keep].T @ b)
    return float(np.sum(w * c.T))


def _dense_dev_est(phi, model):
    """tr(A_J) = tr((U* phi* phi U)^-1) for an orthonormal basis U."""
    u = model.basis
    d = u.shape[1]
    if d == 0:
        return 0.0
    b = np.column_stack([phi.apply(u[:, i]) for i in range(d)])
    g = b.T @ b
    return float(np.trace(np.linalg.solve(g, np.eye(d))))


class RiskCache:
    """Per-problem quantities that do not depend on lambda."""

    def __init__(self, phi, params=None, probes=None):
        self.phi = phi
        self.params = params
        self.probes = probes
        self._xml = {}
        self._tr_pinv = None
        self._tr_inv_normal = None
        self._full_col_rank = None

    def xml(self, key, y):
        if key not in self._xml:
            self._xml[key] = x_ml(self.phi, y, self.params)
        return self._xml[key]

    def tr_pinv_gram(self):
        if self._tr_pinv is None:
            self._tr_pinv = trace_pinv_gram(self.phi, self.probes,
                                            self.params)
        return self._tr_pinv

    def tr_inv_normal(self):
        if self._tr_inv_normal is None:
            self._tr_inv_normal = trace_inv_normal(self.phi)
        return self._tr_inv_normal

    def full_column_rank(self):
        if self._full_col_rank is None:
            self._full_col_rank = has_full_column_rank(self.phi)
        return self._full_col_rank


def gsure_projection(problem, solution, model, sigma2, probes=None,
                     params=None, cache=None):
    """Projection-domain risk estimate; see the module docstring."""
    phi = problem.phi
    cache = cache or RiskCache(phi, params)
    xml_y = cache.xml("y", problem.y)
    pi_xstar = x_ml(phi, solution.mu, params)
    fit = xml_y - pi_xstar
    if probes is None:
        dev = _dense_dev_proj(phi, model)
    else:
        dev = mc_trace(phi, problem.dictionary, model.cosupport,
                       _xml_factor(phi, params), probes, params,
                       basis=model.basis).value
    return (float(fit @ fit) - sigma2 * cache.tr_pinv_gram()
            + 2.0 * sigma2 * dev)


def gsure_estimation(problem, solution, model, sigma2, probes=None,
                     params=None, cache=None):
    """Estimation-domain risk estimate; needs full column rank."""
    phi = problem.phi
    cache = cache or RiskCache(phi, params)
    if not cache.full_column_rank():
        raise ValueError(
            "estimation-domain risk needs an injective operator")
    xml_y = cache.xml("y", problem.y)
    fit = xml_y - solution.x
    if probes is None:
        dev = _dense_dev_est(phi, model)
    else:
        dev = mc_trace(phi, problem.dictionary, model.cosupport,
                       _est_factor(phi, params), probes, params,
                       basis=model.basis).value
    return (float(fit @ fit) - sigma2 * cache.tr_inv_normal()
            + 2.0 * sigma2 * dev)


def evaluate_risks(problem, solution, model, sigma2, risks=("pred",),
                   probes=None, params=None, cache=None, x0=None,
                   strict=True):
    """Assemble a RiskReport for one solve.

    ``risks`` lists the requested domains among pred, proj, est.  With
    strict=False a domain whose preconditions fail is left as None
    instead of raising.  When the clean signal x0 is supplied, squared
    errors in each requested domain are filled in alongside.
    """
    phi = problem.phi
    cache = cache or RiskCache(phi, params)
    report = RiskReport(lam=problem.lam, dof=dof_estimate(model),
                        mc_probes=probes.count if probes else 0,
                        seed=probes.seed if probes else None)
    for risk in risks:
        try:
            if risk == "pred":
                report.gsure_pred = sure_prediction(problem.y, solution.mu,
                                                    sigma2, report.dof)
                if x0 is not None:
                    d = solution.mu - phi.apply(x0)
                    report.se_pred = float(d @ d)
            elif risk == "proj":
                report.gsure_proj = gsure_projection(
                    problem, solution, model, sigma2, probes, params, cache)
                if x0 is not None:
                    d = x_ml(phi, solution.mu, params) - cache.xml(
                        "mu0", phi.apply(x0))
                    report.se_proj = float(d @ d)
            elif risk == "est":
                report.gsure_est = gsure_estimation(
                    problem, solution, model, sigma2, probes, params, cache)
                if x0 is not None:
                    d = solution.x - np.asarray(x0, dtype=float).ravel()
                    report.se_est = float(d @ d)
            else:
                raise ValueError(f"unknown risk domain {risk!r}")
        except ValueError:
            if strict:
                raise
            log.info("risk domain %s unavailable on this problem", risk)
    return report


@dataclass
class RiskStats:
    mean_gsure: float
    mean_se: float
    mean_diff: float
    stderr_diff: float
    z: float


@dataclass
class UnbiasReport:
    trials: int
    stats: dict
    nonconverged: int


def unbiasedness_mc(phi, dictionary, x0, lam, sigma, trials, seed,
                    risks=("pred",), solver_params=None, eps_rel=1e-5):
    """Empirical check that each GSURE matches its squared error in mean.

    Per trial: draw fresh noise from a seed mixed with the trial index,
    solve, detect and certify, evaluate the requested risks with dense
    traces, and record gsure - se.  Returns per-domain means and the
    z-score of the paired difference.
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    mu0 = phi.apply(x0)
    q = phi.rows
    sigma2 = sigma * sigma
    diffs = {r: [] for r in risks}
    gs = {r: [] for r in risks}
    ss = {r: [] for r in risks}
    nonconverged = 0
    for t in range(trials):
        rng = np.random.default_rng(_mix64(seed, t))
        y = mu0 + sigma * rng.standard_normal(q)
        problem = Problem(phi, dictionary, y, lam, sigma=sigma)
        sol, model, _ = certified_solve(problem, solver_params, eps_rel,
                                        warn_margin=False)
        if not sol.converged:
            nonconverged += 1
        report = evaluate_risks(problem, sol, model, sigma2, risks,
                                x0=x0, strict=True)
        pairs = {"pred": (report.gsure_pred, report.se_pred),
                 "proj": (report.gsure_proj, report.se_proj),
                 "est": (report.gsure_est, report.se_est)}
        for r in risks:
            g, s = pairs[r]
            gs[r].append(g)
            ss[r].append(s)
            diffs[r].append(g - s)
    stats = {}
    for r in risks:
        dv = np.asarray(diffs[r])
        mean_diff = float(np.mean(dv))
        stderr = float(np.std(dv, ddof=1) / np.sqrt(trials))
        stats[r] = RiskStats(mean_gsure=float(np.mean(gs[r])),
                             mean_se=float(np.mean(ss[r])),
                             mean_diff=mean_diff, stderr_diff=stderr,
                             z=mean_diff / stderr if stderr > 0 else 0.0)
    return UnbiasReport(trials=trials, stats=stats,
                        nonconverged=nonconverged)


@dataclass
class ReliabilityReport:
    sizes: list
    means: list
    stderrs: list
    slope: float
    # unnormalized two-route comparison at the smallest size, when run
    direct_value: float | None = None
    direct_stderr: float | None = None
    term_value: float | None = None
    term_stderr: float | None = None


def reliability_mc(problem_factory, lam_rule, sigma, sizes, trials, seed,
                   solver_params=None, eps_rel=1e-5, check_terms=False):
    """Normalized mean square gap between prediction GSURE and its risk.

    For each problem size q the estimate is E[((gsure - se) / (q s^2))^2]
    over fresh-noise trials; the report includes the log-log slope across
    sizes, which should be near -1 for a reliable estimator family.  With
    check_terms=True, the unnormalized gap at the smallest size is also
    evaluated through its exact variance decomposition (independent
    seeds) so two routes to the same expectation can be compared.
    """
    sigma2 = sigma * sigma
    sizes = sorted(sizes)
    means, stderrs = [], []
    smallest_vals = None
    for qi, q in enumerate(sizes):
        phi, dictionary, x0 = problem_factory(q)
        lam = lam_rule(q) if callable(lam_rule) else float(lam_rule)
        mu0 = phi.apply(np.asarray(x0, dtype=float).ravel())
        vals = []
        for t in range(trials):
            rng = np.random.default_rng(_mix64(seed + 7919 * qi, t))
            y = mu0 + sigma * rng.standard_normal(phi.rows)
            problem = Problem(phi, dictionary, y, lam, sigma=sigma)
            sol, model, _ = certified_solve(problem, solver_params,
                                            eps_rel, warn_margin=False)
            g = sure_prediction(y, sol.mu, sigma2, dof_estimate(model))
            se = float(np.sum((sol.mu - mu0) ** 2))
            vals.append(((g - se) / (q * sigma2)) ** 2)
        vals = np.asarray(vals)
        if qi == 0:
            smallest_vals = vals * (q * sigma2) ** 2
        means.append(float(np.mean(vals)))
        stderrs.append(float(np.std(vals, ddof=1) / np.sqrt(trials)))
    if len(sizes) >= 2:
        logq = np.log(np.asarray(sizes, dtype=float))
        logm = np.log(np.asarray(means))
        slope = float(np.polyfit(logq, logm, 1)[0])
    else:
        slope = float("nan")
    report = ReliabilityReport(sizes=list(sizes), means=means,
                               stderrs=stderrs, slope=slope)
    if check_terms:
        report.direct_value = float(np.mean(smallest_vals))
        report.direct_stderr = float(
            np.std(smallest_vals, ddof=1) / np.sqrt(len(smallest_vals)))
        phi, dictionary, x0 = problem_factory(sizes[0])
        lam = lam_rule(sizes[0]) if callable(lam_rule) else float(lam_rule)
        report.term_value, report.term_stderr = reliability_terms(
            phi, dictionary, x0, lam, sigma, trials,
            _mix64(seed, 1 << 20), solver_params, eps_rel)
    return report


def reliability_terms(phi, dictionary, x0, lam, sigma, trials, seed,
                      solver_params=None, eps_rel=1e-5):
    """Second route to E[(gsure - se)^2] through its exact decomposition.

    For the prediction domain the gap satisfies

      E (gsure - se)^2 = 2 s^4 q + 4 s^2 E||mu0 - mu*||^2
                         - 4 s^4 E tr[V (2 Id - V)]

    with V the prediction Jacobian.  The two expectations are estimated
    by Monte Carlo with dense Jacobians; returns (value, stderr).
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    mu0 = phi.apply(x0)
    q = phi.rows
    sigma2 = sigma * sigma
    vals = []
    for t in range(trials):
        rng = np.random.default_rng(_mix64(seed, t))
        y = mu0 + sigma * rng.standard_normal(q)
        problem = Problem(phi, dictionary, y, lam, sigma=sigma)
        sol, model, _ = certified_solve(problem, solver_params, eps_rel,
                                        warn_margin=False)
        v = prediction_jacobian(phi, dictionary, model.cosupport,
                                basis=model.basis)
        term2 = float(np.sum((mu0 - sol.mu) ** 2))
        term3 = float(np.trace(v @ (2.0 * np.eye(q) - v)))
        vals.append(4.0 * sigma2 * term2 - 4.0 * sigma2 ** 2 * term3)
    vals = np.asarray(vals)
    base = 2.0 * sigma2 ** 2 * q
    value = base + float(np.mean(vals))
    stderr = float(np.std(vals, ddof=1) / np.sqrt(trials))
    return value, stderr
