"""Cosupport machinery: detection, cospaces, certificates, local maps."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alasso import cosparse
from alasso.cosparse import (Certificate, CosparseError, apply_AJ,
                             certificate, certificate_valid, certified_solve,
                             check_H0, cospace_basis, detect_cosupport,
                             enumerate_exact_solve, local_solution,
                             prediction_jacobian, reduce_to_HJ)
from alasso.linops import (dict_from_matrix, finite_diff_1d, from_matrix,
                           identity, identity_dict)
from alasso.solvers import Problem, objective, solve_primal_dual


def _random_instance(seed, n=6, p=7, q=5, lam=0.3, noise=0.3):
    rng = np.random.default_rng(seed)
    phi = from_matrix(rng.standard_normal((q, n)))
    dic = dict_from_matrix(rng.standard_normal((n, p)))
    x0 = rng.standard_normal(n)
    y = phi.apply(x0) + noise * rng.standard_normal(q)
    return Problem(phi, dic, y, lam)


class TestH0:
    def test_identity_operator_always_true(self):
        assert check_H0(identity(5), finite_diff_1d(5))
        assert check_H0(identity(5), identity_dict(5))

    def test_sum_row_with_differences(self):
        # Ker of the dictionary analysis map is the constants, and the
        # sum row does not kill constants
        phi = from_matrix(np.ones((1, 4)))
        assert check_H0(phi, finite_diff_1d(4))

    def test_shared_kernel_fails(self):
        fd = finite_diff_1d(5)
        phi = from_matrix(fd.analysis.to_dense())
        assert not check_H0(phi, fd)


class TestDetect:
    def test_coordinate_case(self):
        model = detect_cosupport(np.array([2.0, 0.0, -1.0]),
                                 identity_dict(3))
        assert model.support.tolist() == [0, 2]
        assert model.cosupport.tolist() == [1]
        assert model.signs.tolist() == [1.0, -1.0]
        assert model.d == 2

    def test_constant_signal_tv(self):
        model = detect_cosupport(3.3 * np.ones(6), finite_diff_1d(6))
        assert model.support.size == 0
        assert model.cosupport.tolist() == list(range(5))
        assert model.d == 1

    def test_matches_dense_thresholding(self):
        rng = np.random.default_rng(8)
        dic = dict_from_matrix(rng.standard_normal((5, 9)))
        x = rng.standard_normal(5)
        c = dic.analysis.to_dense() @ x
        model = detect_cosupport(x, dic, eps_rel=1e-5)
        expect = np.flatnonzero(np.abs(c) > 1e-5 * np.max(np.abs(c)))
        assert model.support.tolist() == expect.tolist()

    def test_noise_floor_empties_support(self):
        # numerically constant signal: coefficients are pure roundoff
        x = np.ones(8) + 1e-14 * np.arange(8)
        model = detect_cosupport(x, finite_diff_1d(8))
        assert model.support.size == 0
        assert model.d == 1

    def test_hj_flag_with_operator(self):
        # one measurement row cannot be injective on a 2-dim cospace
        phi = from_matrix(np.ones((1, 3)))
        model = detect_cosupport(np.array([1.0, 0.0, -2.0]),
                                 identity_dict(3), phi=phi)
        assert model.hJ_holds is False


class TestCospaceBasis:
    def test_coordinate_cosupport(self):
        u = cospace_basis(identity_dict(3), [1])
        proj = u @ u.T
        assert np.allclose(proj, np.diag([1.0, 0.0, 1.0]), atol=1e-12)

    def test_tv_full_cosupport_is_constants(self):
        n = 7
        u = cospace_basis(finite_diff_1d(n), list(range(n - 1)))
        assert u.shape == (n, 1)
        assert np.allclose(np.abs(u), 1.0 / np.sqrt(n), atol=1e-12)

    def test_random_annihilation_and_orthonormality(self):
        rng = np.random.default_rng(21)
        dic = dict_from_matrix(rng.standard_normal((6, 10)))
        jidx = [0, 2, 3, 7]
        u = cospace_basis(dic, jidx)
        dj = dic.analysis.to_dense()[jidx]
        assert np.max(np.abs(dj @ u)) <= 1e-10
        assert np.allclose(u.T @ u, np.eye(u.shape[1]), atol=1e-12)

    def test_empty_cosupport_spans_everything(self):
        u = cospace_basis(identity_dict(4), [])
        assert u.shape == (4, 4)


class TestApplyAJ:
    def test_identity_empty_cosupport(self):
        rng = np.random.default_rng(2)
        u = rng.standard_normal(5)
        out = apply_AJ(identity(5), identity_dict(5), [], u)
        assert np.allclose(out, u, atol=1e-10)

    def test_identity_coordinate_projection(self):
        u = np.array([1.0, 2.0, 3.0])
        out = apply_AJ(identity(3), identity_dict(3), [1], u)
        assert np.allclose(out, [1.0, 0.0, 3.0], atol=1e-10)

    def test_matches_dense_formula(self):
        prob = _random_instance(31)
        jidx = [1, 4, 6]
        basis = cospace_basis(prob.dictionary, jidx)
        m = prob.phi.to_dense()
        b = m @ basis
        rng = np.random.default_rng(5)
        u = rng.standard_normal(6)
        ref = basis @ np.linalg.solve(b.T @ b, basis.T @ u)
        out = apply_AJ(prob.phi, prob.dictionary, jidx, u)
        assert np.allclose(out, ref, atol=1e-8)

    def test_routes_agree(self):
        prob = _random_instance(32)
        jidx = [0, 3]
        rng = np.random.default_rng(6)
        u = rng.standard_normal(6)
        a = apply_AJ(prob.phi, prob.dictionary, jidx, u, route="reduced")
        b = apply_AJ(prob.phi, prob.dictionary, jidx, u, route="kkt")
        assert np.allclose(a, b, atol=1e-8)

    def test_result_lies_in_cospace(self):
        prob = _random_instance(33)
        jidx = [2, 5]
        rng = np.random.default_rng(7)
        u = rng.standard_normal(6)
        out = apply_AJ(prob.phi, prob.dictionary, jidx, u)
        dj = prob.dictionary.analysis.to_dense()[jidx]
        assert np.linalg.norm(dj @ out) <= 1e-8 * np.linalg.norm(u)

    def test_injectivity_failure_raises(self):
        phi = from_matrix(np.ones((1, 3)))
        with pytest.raises((CosparseError, Exception)):
            apply_AJ(phi, identity_dict(3), [0], np.ones(3),
                     route="reduced")


class TestLocalSolution:
    def test_matches_solver_at_base_point(self):
        prob = _random_instance(41)
        sol = solve_primal_dual(prob)
        model = detect_cosupport(sol.x, prob.dictionary, phi=prob.phi)
        xloc = local_solution(prob.phi, prob.dictionary, model.cosupport,
                              model.signs, prob.y, prob.lam)
        assert np.allclose(xloc, sol.x, atol=1e-6)

    def test_coordinate_closed_form(self):
        y = np.array([3.0, 0.5, -2.0])
        lam = 1.0
        jidx = [1]
        signs = np.array([1.0, -1.0])
        x = local_solution(identity(3), identity_dict(3), jidx, signs,
                           y, lam)
        assert np.allclose(x, [2.0, 0.0, -1.0], atol=1e-10)

    def test_affine_in_observations(self):
        prob = _random_instance(42)
        sol = solve_primal_dual(prob)
        model = detect_cosupport(sol.x, prob.dictionary, phi=prob.phi)
        rng = np.random.default_rng(9)
        d1 = rng.standard_normal(5)
        d2 = rng.standard_normal(5)
        args = (prob.phi, prob.dictionary, model.cosupport, model.signs)
        base = local_solution(*args, prob.y, prob.lam)
        a = local_solution(*args, prob.y + d1, prob.lam) - base
        b = local_solution(*args, prob.y + d2, prob.lam) - base
        ab = local_solution(*args, prob.y + d1 + d2, prob.lam) - base
        assert np.allclose(ab, a + b, atol=1e-10)

    def test_linear_in_lambda(self):
        prob = _random_instance(43)
        sol = solve_primal_dual(prob)
        model = detect_cosupport(sol.x, prob.dictionary, phi=prob.phi)
        args = (prob.phi, prob.dictionary, model.cosupport, model.signs)
        lam = prob.lam
        xa = local_solution(*args, prob.y, lam)
        xb = local_solution(*args, prob.y, 2.0 * lam)
        xc = local_solution(*args, prob.y, 3.0 * lam)
        assert np.allclose(xc - xb, xb - xa, atol=1e-10)


class TestCertificate:
    def test_soft_threshold_certificate(self):
        y = np.array([3.0, 0.5, -2.0])
        lam = 1.0
        prob = Problem(identity(3), identity_dict(3), y, lam)
        x = np.array([2.0, 0.0, -1.0])
        model = detect_cosupport(x, prob.dictionary, phi=prob.phi)
        cert = certificate(prob, x, model)
        assert cert.residual <= 1e-12
        # on the cosupport the stationarity forces sigma = y_j / lam
        assert np.allclose(cert.sigma, [0.5], atol=1e-12)
        assert cert.inf_norm <= 1.0

    def test_zero_is_optimal_for_large_lam(self):
        rng = np.random.default_rng(51)
        n = 5
        y = rng.standard_normal(n)
        # for the identity dictionary 0 is optimal as soon as
        # lam >= ||y||_inf
        lam = float(np.max(np.abs(y))) * 1.5
        prob = Problem(identity(n), identity_dict(n), y, lam)
        x = np.zeros(n)
        model = detect_cosupport(x, prob.dictionary, phi=prob.phi)
        cert = certificate(prob, x, model)
        assert certificate_valid(cert, prob)

    def test_perturbed_point_fails(self):
        prob = _random_instance(52)
        sol = solve_primal_dual(prob)
        x_bad = sol.x + 0.05 * np.ones(6)
        model = detect_cosupport(x_bad, prob.dictionary, phi=prob.phi)
        cert = certificate(prob, x_bad, model)
        assert not certificate_valid(cert, prob)


class TestPredictionJacobian:
    def test_coordinate_indicator(self):
        x = np.array([2.0, 0.0, -1.0])
        model = detect_cosupport(x, identity_dict(3))
        m = prediction_jacobian(identity(3), identity_dict(3),
                                model.cosupport)
        assert np.allclose(m, np.diag([1.0, 0.0, 1.0]), atol=1e-10)

    def test_projector_laws_and_trace(self):
        prob = _random_instance(61)
        sol = solve_primal_dual(prob)
        model = detect_cosupport(sol.x, prob.dictionary, phi=prob.phi)
        m = prediction_jacobian(prob.phi, prob.dictionary, model.cosupport,
                                basis=model.basis)
        assert np.max(np.abs(m - m.T)) <= 1e-10
        assert np.max(np.abs(m @ m - m)) <= 1e-10
        assert abs(np.trace(m) - model.d) <= 1e-8

    def test_matches_finite_differences(self):
        prob = _random_instance(62)
        sol, model, cert = certified_solve(prob)
        assert cert.margin >= 1e-3
        m = prediction_jacobian(prob.phi, prob.dictionary, model.cosupport,
                                basis=model.basis)
        h = 1e-5
        q = prob.phi.rows
        fd = np.zeros((q, q))
        for k in range(q):
            e = np.zeros(q)
            e[k] = h
            up = solve_primal_dual(
                Problem(prob.phi, prob.dictionary, prob.y + e, prob.lam))
            dn = solve_primal_dual(
                Problem(prob.phi, prob.dictionary, prob.y - e, prob.lam))
            fd[:, k] = (up.mu - dn.mu) / (2 * h)
        rel = np.max(np.abs(fd - m)) / max(np.max(np.abs(m)), 1e-12)
        assert rel <= 1e-4


class TestReduce:
    def test_two_pixel_hand_instance(self):
        # one measurement summing two coordinates, coordinate dictionary:
        # moving along (1, -1) keeps both the observation and the l1 norm,
        # and t = 1 zeroes the second coordinate
        phi = from_matrix(np.array([[1.0, 1.0]]))
        dic = identity_dict(2)
        prob = Problem(phi, dic, np.array([2.0]), 0.5)
        x = np.array([1.0, 1.0])
        model = detect_cosupport(x, dic, phi=phi)
        assert model.hJ_holds is False
        v, reduced = reduce_to_HJ(prob, x, model)
        assert reduced.hJ_holds
        assert reduced.support.size < model.support.size
        assert np.allclose(np.sort(np.abs(v)), [0.0, 2.0], atol=1e-10)
        assert abs(phi.apply(v)[0] - 2.0) <= 1e-10
        assert abs(np.sum(np.abs(v)) - 2.0) <= 1e-10
        assert abs(objective(prob, v) - objective(prob, x)) <= 1e-10

    def test_noop_when_condition_holds(self):
        prob = _random_instance(71)
        sol = solve_primal_dual(prob)
        model = detect_cosupport(sol.x, prob.dictionary, phi=prob.phi)
        assert model.hJ_holds
        v, back = reduce_to_HJ(prob, sol.x, model)
        assert v is sol.x or np.array_equal(v, sol.x)
        assert back is model

    def test_strict_support_decrease_chain(self):
        # sum operator with three unknowns: the minimizer set is the
        # simplex face {x >= 0, sum x = 2.7}, every interior point of
        # which violates injectivity; reduction must walk to a vertex
        phi = from_matrix(np.ones((1, 3)))
        dic = identity_dict(3)
        prob = Problem(phi, dic, np.array([3.0]), 0.3)
        x = np.array([0.9, 0.9, 0.9])
        model = detect_cosupport(x, dic, phi=phi)
        assert model.hJ_holds is False
        v, reduced = reduce_to_HJ(prob, x, model)
        assert reduced.hJ_holds
        assert reduced.support.size < model.support.size
        assert np.allclose(phi.apply(v), phi.apply(x), atol=1e-10)
        # x is a minimizer, so the walk stays on the solution face and
        # both the l1 value and the objective are preserved
        assert abs(np.sum(np.abs(v)) - 2.7) <= 1e-10
        assert abs(objective(prob, v) - objective(prob, x)) <= 1e-10

    def test_random_nonsolution_preserves_observation_only(self):
        rng = np.random.default_rng(72)
        phi = from_matrix(rng.standard_normal((2, 4)))
        dic = identity_dict(4)
        prob = Problem(phi, dic, rng.standard_normal(2), 0.4)
        x = rng.standard_normal(4)
        model = detect_cosupport(x, dic, phi=phi)
        assert model.hJ_holds is False
        v, reduced = reduce_to_HJ(prob, x, model)
        assert reduced.hJ_holds
        assert reduced.support.size <= 2
        assert np.allclose(phi.apply(v), phi.apply(x), atol=1e-8)


class TestEnumeration:
    def test_soft_threshold_frozen(self):
        prob = Problem(identity(3), identity_dict(3),
                       np.array([3.0, 0.5, -2.0]), 1.0)
        sol = enumerate_exact_solve(prob)
        assert np.allclose(sol.x, [2.0, 0.0, -1.0], atol=1e-12)

    def test_large_lambda_gives_mean_for_tv(self):
        rng = np.random.default_rng(81)
        n = 5
        y = rng.standard_normal(n)
        dic = finite_diff_1d(n)
        for lam in (5.0, 9.0):
            sol = enumerate_exact_solve(Problem(identity(n), dic, y, lam))
            assert np.allclose(sol.x, np.mean(y) * np.ones(n), atol=1e-10)

    def test_certified_against_iterative(self):
        for seed in (82, 83):
            prob = _random_instance(seed)
            ref = enumerate_exact_solve(prob)
            sol = solve_primal_dual(prob)
            assert np.allclose(ref.mu, sol.mu, atol=1e-6)
            assert sol.objective >= ref.objective - 1e-10

    def test_enumeration_bound(self):
        rng = np.random.default_rng(84)
        dic = dict_from_matrix(rng.standard_normal((4, 13)))
        prob = Problem(identity(4), dic, rng.standard_normal(4), 1.0)
        with pytest.raises(ValueError):
            enumerate_exact_solve(prob)

    def test_lam_zero_rejected(self):
        prob = Problem(identity(3), identity_dict(3), np.ones(3), 0.0)
        with pytest.raises(ValueError):
            enumerate_exact_solve(prob)


class TestCertifiedSolve:
    def test_identity_routes_to_denoiser(self):
        rng = np.random.default_rng(91)
        y = rng.standard_normal(10)
        prob = Problem(identity(10), identity_dict(10), y, 0.6)
        sol, model, cert = certified_solve(prob)
        expect = np.sign(y) * np.maximum(np.abs(y) - 0.6, 0.0)
        assert np.allclose(sol.x, expect, atol=1e-8)
        assert certificate_valid(cert, prob)

    def test_polish_reaches_enumeration_exactly(self):
        prob = _random_instance(92)
        ref = enumerate_exact_solve(prob)
        sol, model, cert = certified_solve(prob)
        assert np.allclose(sol.x, ref.x, atol=1e-9)
        assert cert.inf_norm <= 1.0 + 1e-3

    def test_reduction_invoked_on_flat_problems(self):
        # fat operator plus identity dictionary often lands on patterns
        # with more support than measurements can pin down
        rng = np.random.default_rng(93)
        phi = from_matrix(rng.standard_normal((2, 4)))
        prob = Problem(phi, identity_dict(4), rng.standard_normal(2), 0.05)
        sol, model, cert = certified_solve(prob)
        assert model.hJ_holds


@settings(deadline=None, max_examples=20)
@given(st.integers(0, 2 ** 31 - 1))
def test_projector_laws_random(seed):
    prob = _random_instance(seed, n=5, p=6, q=4, lam=0.4)
    sol = solve_primal_dual(prob)
    model = detect_cosupport(sol.x, prob.dictionary, phi=prob.phi)
    if not model.hJ_holds:
        return
    m = prediction_jacobian(prob.phi, prob.dictionary, model.cosupport,
                            basis=model.basis)
    assert np.max(np.abs(m - m.T)) <= 1e-9
    assert np.max(np.abs(m @ m - m)) <= 1e-9
    assert abs(np.trace(m) - round(np.trace(m))) <= 1e-8
