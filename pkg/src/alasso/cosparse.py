"""Cosupport analysis of solutions: detection, the constrained inverse
map attached to a cosupport, local solution formulas, optimality
certificates, and a desk-scale exhaustive solver used as an oracle.

Conventions.  For a solution x of the regularized problem, the support I
is the set of indices where d* x is nonzero and the cosupport J is its
complement.  G_J denotes the kernel of the rows of d* indexed by J.  The
injectivity condition "H_J" asks that the measurement operator be
injective on G_J; the global condition "H0" asks injectivity on the
kernel of the full analysis operator.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize as _opt

from . import krylov
from .linops import operator_norm
from .solvers import Problem, Solution, objective

log = logging.getLogger(__name__)

# Certificates with margin below this are reported but flagged as too
# close to a sign change to trust local conclusions.
REFUSAL_MARGIN = 1e-3

# Problems at or below this signal size take the dense reduced route.
_DENSE_N_LIMIT = 512

_RANK_TOL = 1e-10


class CosparseError(RuntimeError):
    pass


@dataclass
class CosupportModel:
    """Detected sign structure of d* x for one candidate solution.

    ``support`` and ``cosupport`` partition range(p); ``signs`` aligns
    with ``support``.  ``d`` is the dimension of the cospace G_J.
    ``hJ_holds`` is None when no measurement operator was supplied.
    ``basis`` is an orthonormal basis of G_J, shape (n, d).
    """
    support: np.ndarray
    cosupport: np.ndarray
    signs: np.ndarray
    d: int
    hJ_holds: bool | None
    ambiguous: np.ndarray
    basis: np.ndarray = field(repr=False, default=None)


@dataclass
class Certificate:
    """Dual certificate data at a candidate solution.

    ``sigma`` lives on the cosupport; ``residual`` is the norm of the
    first-order optimality equation after the best choice of sigma;
    ``inf_norm`` is max |sigma_j|.
    """
    sigma: np.ndarray
    residual: float
    inf_norm: float

    @property
    def margin(self):
        return 1.0 - self.inf_norm


def _dense_analysis_rows(dictionary, idx):
    """Dense matrix with the analysis rows idx, shape (len(idx), n)."""
    return dictionary.columns(idx).to_dense().T


def check_H0(phi, dictionary, rank_tol=_RANK_TOL):
    """True when ker(phi) and ker(d*) intersect only at zero."""
    stacked = np.vstack([phi.to_dense(), dictionary.analysis.to_dense()])
    if stacked.shape[0] < stacked.shape[1]:
        return False
    s = np.linalg.svd(stacked, compute_uv=False)
    return bool(s[-1] > rank_tol * s[0])


def cospace_basis(dictionary, cosupport, rank_tol=_RANK_TOL):
    """Orthonormal basis of G_J = ker(d_J*), shape (n, d)."""
    j = np.asarray(cosupport, dtype=int)
    n = dictionary.n
    if j.size == 0:
        return np.eye(n)
    rows = _dense_analysis_rows(dictionary, j)
    _, s, vt = np.linalg.svd(rows, full_matrices=True)
    if s.size == 0 or s[0] == 0.0:
        rank = 0
    else:
        rank = int(np.sum(s > rank_tol * s[0]))
    return vt[rank:].T


def _hj_from_basis(phi, basis, rank_tol=_RANK_TOL):
    d = basis.shape[1]
    if d == 0:
        return True
    if d > phi.rows:
        # more cospace directions than measurements: cannot be injective
        return False
    b = np.column_stack([phi.apply(basis[:, i]) for i in range(d)])
    s = np.linalg.svd(b, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return False
    return bool(s[-1] > rank_tol * s[0])


def detect_cosupport(x, dictionary, eps_rel=1e-5, phi=None,
                     rank_tol=_RANK_TOL, floor_rel=1e-8, scale=None):
    """Threshold d* x into support and cosupport.

    Entries above eps_rel times the largest magnitude count as support.
    A second cut at floor_rel times the signal scale ||d*|| ||x|| guards
    the exactly-cosparse case: there the raw coefficients are all solver
    noise, so a threshold relative to their own maximum keeps garbage.
    When the minimizer itself is zero, ||x|| is noise too and the guard
    collapses; callers that know the data pass ``scale`` (the magnitude x
    would need to explain the observation) to anchor the floor instead.
    Entries inside (eps, 10 eps] of the cut land in ``ambiguous``: they
    were kept but sit close enough to deserve suspicion.  When phi is
    given, the injectivity flag hJ_holds is evaluated.
    """
    x = np.asarray(x, dtype=float).ravel()
    c = dictionary.analysis.apply(x)
    amax = float(np.max(np.abs(c))) if c.size else 0.0
    floor = 0.0
    if amax > 0.0 and floor_rel > 0.0:
        dn = operator_norm(dictionary.analysis, iters=50)
        anchor = float(np.linalg.norm(x))
        if scale is not None:
            anchor = max(anchor, float(scale))
        floor = floor_rel * dn * anchor
    if amax <= floor or amax == 0.0:
        support = np.zeros(0, dtype=int)
        cosupport = np.arange(dictionary.p)
        ambiguous = np.zeros(0, dtype=int)
    else:
        thr = max(eps_rel * amax, floor)
        keep = np.abs(c) > thr
        support = np.flatnonzero(keep)
        cosupport = np.flatnonzero(~keep)
        ambiguous = support[np.abs(c[support]) <= 10.0 * thr]
    signs = np.sign(c[support])
    basis = cospace_basis(dictionary, cosupport, rank_tol)
    hj = _hj_from_basis(phi, basis, rank_tol) if phi is not None else None
    return CosupportModel(support=support, cosupport=cosupport, signs=signs,
                          d=basis.shape[1], hJ_holds=hj, ambiguous=ambiguous,
                          basis=basis)


def _data_scale(problem):
    # magnitude x would need to explain y; anchors detection floors at
    # minimizers that are themselves zero up to solver noise
    pn = operator_norm(problem.phi, iters=50)
    yn = float(np.linalg.norm(problem.y))
    return yn / pn if pn > 0.0 else yn


class _AJSolver:
    """Application of the inverse quadratic map restricted to G_J.

    route="reduced" materializes the cospace basis and solves the small
    SPD system with conjugate gradients; route="kkt" works matrix-free
    through the saddle system.  "auto" picks by signal size.
    """

    def __init__(self, phi, dictionary, cosupport, params=None,
                 route="auto", basis=None):
        self.phi = phi
        self.dictionary = dictionary
        self.cosupport = np.asarray(cosupport, dtype=int)
        self.params = params or krylov.KrylovParams()
        if route == "auto":
            route = "reduced" if dictionary.n <= _DENSE_N_LIMIT else "kkt"
        self.route = route
        if route == "reduced":
            u = basis if basis is not None else cospace_basis(
                dictionary, self.cosupport)
            self.basis = u
            d = u.shape[1]
            if d:
                if d > phi.rows:
                    raise CosparseError(
                        "cospace dimension exceeds the measurement count; "
                        "the injectivity condition cannot hold")
                b = np.column_stack(
                    [phi.apply(u[:, i]) for i in range(d)])
                s = np.linalg.svd(b, compute_uv=False)
                if s[0] == 0.0 or s[-1] <= _RANK_TOL * s[0]:
                    raise CosparseError(
                        "the operator is rank deficient on this cospace; "
                        "injectivity fails for the given cosupport")
                self.gram = b.T @ b
            else:
                self.gram = np.zeros((0, 0))
        elif route == "kkt":
            self.dj = dictionary.columns(self.cosupport)
        else:
            raise ValueError(f"unknown route {route!r}")

    def apply(self, rhs):
        rhs = np.asarray(rhs, dtype=float).ravel()
        if self.route == "reduced":
            if self.gram.shape[0] == 0:
                return np.zeros(self.dictionary.n)
            try:
                coeff = krylov.cg(self.gram, self.basis.T @ rhs, self.params)
            except krylov.KrylovError as exc:
                raise CosparseError(
                    "reduced system is singular; the injectivity condition "
                    "appears violated on this cosupport") from exc
            return self.basis @ coeff
        nu, _ = krylov.kkt_solve(self.phi, self.dj, rhs, self.params)
        return nu


def apply_AJ(phi, dictionary, cosupport, rhs, params=None, route="auto",
             basis=None):
    """Apply the constrained inverse map for cosupport J to one vector."""
    return _AJSolver(phi, dictionary, cosupport, params, route,
                     basis).apply(rhs)


def local_solution(phi, dictionary, cosupport, signs, y, lam, params=None,
                   route="auto", basis=None):
    """Closed-form solution attached to a sign pattern.

    Evaluates the affine map  A_J (phi* y - lam d_I s_I)  where I is the
    complement of J and s_I the given signs.  Valid as the actual
    minimizer while (y, lam) stays inside the region where the pattern
    is optimal.
    """
    cosupport = np.asarray(cosupport, dtype=int)
    signs = np.asarray(signs, dtype=float).ravel()
    support = np.setdiff1d(np.arange(dictionary.p), cosupport)
    if signs.size != support.size:
        raise ValueError("signs must align with the support")
    rhs = phi.adjoint(np.asarray(y, dtype=float).ravel())
    if support.size:
        rhs = rhs - lam * dictionary.columns(support).apply(signs)
    return _AJSolver(phi, dictionary, cosupport, params, route,
                     basis).apply(rhs)


def _min_inf_norm_refine(djm, sigma0):
    """Among sigma with d_J sigma fixed, pick one of least sup norm."""
    m = djm.shape[1]
    target = djm @ sigma0
    c = np.zeros(m + 1)
    c[-1] = 1.0
    a_ub = np.zeros((2 * m, m + 1))
    a_ub[:m, :m] = np.eye(m)
    a_ub[m:, :m] = -np.eye(m)
    a_ub[:, -1] = -1.0
    a_eq = np.zeros((djm.shape[0], m + 1))
    a_eq[:, :m] = djm
    res = _opt.linprog(c, A_ub=a_ub, b_ub=np.zeros(2 * m), A_eq=a_eq,
                       b_eq=target, bounds=[(None, None)] * m + [(0, None)],
                       method="highs")
    if not res.success:
        return None
    return res.x[:m]


def certificate(problem, x, model, refine=True):
    """First-order optimality data at x for the detected sign pattern.

    Solves min_sigma || phi*(phi x - y) + lam d_I s_I + lam d_J sigma ||
    by least squares.  When the least-squares sigma exceeds the unit box
    but the rows are redundant, an exact sup-norm reduction is attempted,
    since any representative with the same range component certifies.
    """
    if problem.lam <= 0:
        raise ValueError("certificates require lam > 0")
    x = np.asarray(x, dtype=float).ravel()
    dic = problem.dictionary
    r = problem.phi.adjoint(problem.phi.apply(x) - problem.y)
    if model.support.size:
        r = r + problem.lam * dic.columns(model.support).apply(model.signs)
    j = model.cosupport
    if j.size == 0:
        return Certificate(sigma=np.zeros(0),
                           residual=float(np.linalg.norm(r)), inf_norm=0.0)
    djm = dic.columns(j).to_dense()
    target = -r / problem.lam
    sigma, _, rank, _ = np.linalg.lstsq(djm, target, rcond=None)
    inf_norm = float(np.max(np.abs(sigma))) if sigma.size else 0.0
    if refine and inf_norm > 1.0 and rank < j.size:
        better = _min_inf_norm_refine(djm, sigma)
        if better is not None:
            new_inf = float(np.max(np.abs(better)))
            drift = np.linalg.norm(djm @ (better - sigma))
            if new_inf < inf_norm and drift <= 1e-8 * (
                    1.0 + np.linalg.norm(target)):
                sigma, inf_norm = better, new_inf
    residual = float(np.linalg.norm(problem.lam * (djm @ sigma) + r))
    return Certificate(sigma=sigma, residual=residual, inf_norm=inf_norm)


def certificate_valid(cert, problem, dict_norm=None, res_rel=1e-6,
                      inf_tol=1e-3):
    """Decide whether a certificate proves optimality at the given scales."""
    if dict_norm is None:
        dict_norm = operator_norm(problem.dictionary.base)
    return (cert.inf_norm <= 1.0 + inf_tol
            and cert.residual <= res_rel * problem.lam * dict_norm)


def prediction_jacobian(phi, dictionary, cosupport, basis=None,
                        rank_tol=_RANK_TOL):
    """Dense Jacobian of y -> phi x*(y) on the stability region of J.

    Equals the orthogonal projector onto phi(G_J); its trace is the
    cospace dimension.
    """
    u = basis if basis is not None else cospace_basis(dictionary, cosupport,
                                                      rank_tol)
    q = phi.rows
    d = u.shape[1]
    if d == 0:
        return np.zeros((q, q))
    b = np.column_stack([phi.apply(u[:, i]) for i in range(d)])
    g = b.T @ b
    s = np.linalg.svd(b, compute_uv=False)
    if s[0] == 0.0 or s[-1] <= rank_tol * s[0]:
        raise CosparseError(
            "injectivity fails on this cosupport; reduce it first")
    return b @ np.linalg.solve(g, b.T)


def reduce_to_HJ(problem, x, model, eps_rel=1e-5, rank_tol=_RANK_TOL):
    """Move to another minimizer whose cosupport satisfies injectivity.

    Walks along directions in ker(phi) intersected with G_J until enough
    coefficients vanish.  Each step preserves phi x and the objective
    (x must be a minimizer) and strictly shrinks the support.  Returns
    the possibly-unchanged pair (x, model).
    """
    dic = problem.dictionary
    xsc = _data_scale(problem)
    if model.hJ_holds is None:
        model = detect_cosupport(x, dic, eps_rel, phi=problem.phi,
                                 rank_tol=rank_tol, scale=xsc)
    x = np.asarray(x, dtype=float).copy()
    steps = 0
    while model.hJ_holds is False:
        steps += 1
        if steps > dic.p + 1:
            raise CosparseError("cosupport reduction failed to terminate")
        phim = problem.phi.to_dense()
        rows = _dense_analysis_rows(dic, model.cosupport)
        stacked = np.vstack([phim, rows]) if rows.size else phim
        _, s, vt = np.linalg.svd(stacked)
        if (stacked.shape[0] >= stacked.shape[1]
                and s[-1] > rank_tol * s[0]):
            raise CosparseError(
                "injectivity flag claimed a failure but the stacked map "
                "is injective; inconsistent tolerances")
        z = vt[-1]
        c = dic.analysis.apply(x)
        w = dic.analysis.apply(z)
        sup = model.support
        if sup.size == 0:
            raise CosparseError(
                "empty support with failing injectivity; the global "
                "condition H0 appears violated")
        wmax = float(np.max(np.abs(w[sup])))
        if wmax <= 1e-12:
            raise CosparseError(
                "reduction direction does not touch the support; the "
                "global condition H0 appears violated")
        cand = [-c[i] / w[i] for i in sup if abs(w[i]) > 1e-12 * wmax]
        cand = [t for t in cand if t != 0.0]
        if not cand:
            raise CosparseError("no sign boundary found along the "
                                "reduction direction")
        t0 = min(cand, key=abs)
        x = x + t0 * z
        new_model = detect_cosupport(x, dic, eps_rel, phi=problem.phi,
                                     rank_tol=rank_tol, scale=xsc)
        if new_model.support.size >= model.support.size:
            raise CosparseError(
                "reduction step did not shrink the support; detection "
                "tolerance needs escalation")
        log.info("cosupport reduction: support %d -> %d (d %d -> %d)",
                 model.support.size, new_model.support.size,
                 model.d, new_model.d)
        model = new_model
    return x, model


def _model_from_pattern(dictionary, support, signs, basis):
    p = dictionary.p
    support = np.asarray(support, dtype=int)
    cosupport = np.setdiff1d(np.arange(p), support)
    return CosupportModel(support=support, cosupport=cosupport,
                          signs=np.asarray(signs, dtype=float),
                          d=basis.shape[1], hJ_holds=True,
                          ambiguous=np.zeros(0, dtype=int), basis=basis)


def enumerate_exact_solve(problem, support_tol=1e-8, cert_inf_tol=1e-3,
                          cert_res_rel=1e-8, rank_tol=_RANK_TOL, max_p=12):
    """Exhaustive certified solver for desk-scale instances.

    Enumerates every cosupport and sign pattern, forms the candidate from
    the closed-form local solution, keeps those whose detected pattern
    matches the assumption and whose first-order certificate is valid,
    and returns the certified minimizer of least objective (ties broken
    by lexicographically smallest cosupport).  Exponential in p; refuses
    p beyond ``max_p``.
    """
    dic = problem.dictionary
    p, n = dic.p, dic.n
    if p > max_p:
        raise ValueError(f"enumeration needs p <= {max_p}, got {p}")
    if problem.lam <= 0:
        raise ValueError("enumeration requires lam > 0")
    lam = problem.lam
    phim = problem.phi.to_dense()
    dm = dic.base.to_dense()
    dstar = dm.T
    gram_phi = phim.T @ phim
    phity = phim.T @ problem.y
    d_norm = np.linalg.svd(dm, compute_uv=False)[0]
    res_cap = cert_res_rel * max(lam * d_norm, np.linalg.norm(phity), 1e-12)

    best = None
    indices = np.arange(p)
    for mask in range(2 ** p):
        jsel = np.array([(mask >> k) & 1 for k in range(p)], dtype=bool)
        jidx = indices[jsel]
        iidx = indices[~jsel]
        if jidx.size == 0:
            u = np.eye(n)
        else:
            _, s, vt = np.linalg.svd(dstar[jidx], full_matrices=True)
            rank = int(np.sum(s > rank_tol * s[0])) if s[0] > 0 else 0
            u = vt[rank:].T
        d = u.shape[1]
        if d:
            if d > phim.shape[0]:
                continue  # wide map cannot be injective
            b = phim @ u
            sb = np.linalg.svd(b, compute_uv=False)
            if sb[0] == 0.0 or sb[-1] <= rank_tol * sb[0]:
                continue  # injectivity fails for this cosupport
            g = b.T @ b
        for signs in itertools.product((-1.0, 1.0), repeat=iidx.size):
            svec = np.asarray(signs)
            rhs = phity - lam * (dm[:, iidx] @ svec) if iidx.size else phity
            x = u @ np.linalg.solve(g, u.T @ rhs) if d else np.zeros(n)
            c = dstar @ x
            # consistency threshold anchored to the signal scale, not to
            # max|c| alone, so exactly-cosparse candidates (c = roundoff)
            # are not rejected against their own noise
            cscale = max(float(np.max(np.abs(c))) if p else 0.0,
                         d_norm * float(np.linalg.norm(x)))
            thr = support_tol * cscale
            if cscale == 0.0:
                if iidx.size:
                    continue
            else:
                if jidx.size and np.max(np.abs(c[jidx])) > thr:
                    continue
                if iidx.size and np.min(c[iidx] * svec) <= thr:
                    continue
            r = gram_phi @ x - phity
            if iidx.size:
                r = r + lam * (dm[:, iidx] @ svec)
            if jidx.size:
                djm = dm[:, jidx]
                sigma, _, rank_dj, _ = np.linalg.lstsq(djm, -r / lam,
                                                       rcond=None)
                inf_norm = float(np.max(np.abs(sigma)))
                if inf_norm > 1.0 + cert_inf_tol and rank_dj < jidx.size:
                    better = _min_inf_norm_refine(djm, sigma)
                    if better is not None:
                        cand_inf = float(np.max(np.abs(better)))
                        if cand_inf < inf_norm:
                            sigma, inf_norm = better, cand_inf
                residual = float(np.linalg.norm(lam * (djm @ sigma) + r))
            else:
                sigma = np.zeros(0)
                inf_norm = 0.0
                residual = float(np.linalg.norm(r))
            if residual > res_cap or inf_norm > 1.0 + cert_inf_tol:
                continue
            obj = (0.5 * float(np.sum((problem.y - phim @ x) ** 2))
                   + lam * float(np.sum(np.abs(c))))
            key = tuple(jidx)
            if best is None:
                best = (obj, key, x, iidx, svec, u, sigma, residual,
                        inf_norm)
            else:
                tol = 1e-12 * max(1.0, abs(best[0]))
                if obj < best[0] - tol or (abs(obj - best[0]) <= tol
                                           and key < best[1]):
                    best = (obj, key, x, iidx, svec, u, sigma, residual,
                            inf_norm)
    if best is None:
        raise CosparseError(
            "no sign pattern could be certified; either H0 fails or the "
            "tolerances are too tight for this instance")
    obj, _, x, iidx, svec, u, sigma, residual, inf_norm = best
    mu = phim @ x
    coeffs = dstar @ x
    return Solution(x=x, mu=mu, coeffs=coeffs, objective=obj,
                    iterations=2 ** p, primal_residual=residual,
                    converged=True)


def _rebuild_solution(problem, sol, x):
    mu = problem.phi.apply(x)
    coeffs = problem.dictionary.analysis.apply(x)
    r = problem.y - mu
    obj = (0.5 * float(r @ r)
           + problem.lam * float(np.sum(np.abs(coeffs))))
    return Solution(x=x, mu=mu, coeffs=coeffs, objective=obj,
                    iterations=sol.iterations,
                    primal_residual=sol.primal_residual,
                    converged=sol.converged, duals=sol.duals)


def certified_solve(problem, params=None, eps_rel=1e-5, polish=True,
                    reduce=True, route="auto", warn_margin=True,
                    x_init=None, dual_init=None):
    """Solve, detect the sign pattern, optionally polish and certify.

    Polishing replays the closed-form local solution at the detected
    pattern and keeps it only when the pattern re-detects identically and
    the objective does not increase; this sharpens solver output to the
    accuracy of the linear algebra without changing what it certifies.

    warn_margin=False silences the near-boundary log line; Monte Carlo
    harnesses hit thin margins routinely and drown the log otherwise.

    x_init and dual_init warm-start the underlying solver; dual_init is
    the duals tuple of a previous Solution (lambda-grid sweeps hand the
    neighboring solve's duals over, which is safe because the solvers
    re-project them onto the current feasible box).

    Returns (solution, model, certificate).
    """
    from .solvers import solve_denoising_dual, solve_primal_dual

    if problem.phi.kind == "identity":
        alpha0 = dual_init[0] if dual_init else None
        sol = solve_denoising_dual(problem.y, problem.dictionary,
                                   problem.lam, params, alpha_init=alpha0)
    else:
        pd_init = dual_init if dual_init and len(dual_init) == 2 else None
        sol = solve_primal_dual(problem, params, x_init=x_init,
                                dual_init=pd_init)
    xsc = _data_scale(problem)
    model = detect_cosupport(sol.x, problem.dictionary, eps_rel,
                             phi=problem.phi, scale=xsc)
    x = sol.x
    if reduce and model.hJ_holds is False:
        x, model = reduce_to_HJ(problem, x, model, eps_rel)
        sol = _rebuild_solution(problem, sol, x)
    if polish and model.hJ_holds:
        try:
            xp = local_solution(problem.phi, problem.dictionary,
                                model.cosupport, model.signs, problem.y,
                                problem.lam, route=route, basis=model.basis)
            mp = detect_cosupport(xp, problem.dictionary, eps_rel,
                                  phi=problem.phi, scale=xsc)
            same = (np.array_equal(mp.support, model.support)
                    and np.array_equal(mp.signs, model.signs))
            if same and objective(problem, xp) <= sol.objective + 1e-12 * max(
                    1.0, abs(sol.objective)):
                x, model = xp, mp
                sol = _rebuild_solution(problem, sol, x)
        except (krylov.KrylovError, CosparseError):
            log.info("polish step skipped: local system not solvable")
    cert = certificate(problem, x, model)
    if warn_margin and cert.margin < REFUSAL_MARGIN:
        log.warning(
            "certificate margin %.3e below refusal threshold %.0e; the "
            "sign pattern may be unstable", cert.margin, REFUSAL_MARGIN)
    return sol, model, cert
