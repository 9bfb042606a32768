"""Risk estimators: DOF, the three GSURE variants, MC traces, harnesses."""

import math

import numpy as np
import pytest

from alasso import risk
from alasso.cosparse import certified_solve, detect_cosupport
from alasso.linops import (LinearMap, dict_from_matrix, finite_diff_1d,
                           from_matrix, identity, identity_dict, partial_dct,
                           scale)
from alasso.solvers import Problem, solve_primal_dual


class TestProbeStream:
    def test_reproducible(self):
        a = risk.ProbeStream(seed=5, count=3, dim=4)
        b = risk.ProbeStream(seed=5, count=3, dim=4)
        for i in range(3):
            assert np.array_equal(a.probe(i), b.probe(i))

    def test_distinct_probes(self):
        s = risk.ProbeStream(seed=5, count=2, dim=16)
        assert not np.array_equal(s.probe(0), s.probe(1))

    def test_out_of_range(self):
        s = risk.ProbeStream(seed=1, count=2, dim=3)
        with pytest.raises(IndexError):
            s.probe(2)

    def test_iteration_matches_indexing(self):
        s = risk.ProbeStream(seed=9, count=4, dim=2)
        assert all(np.array_equal(z, s.probe(i))
                   for i, z in enumerate(s))


class TestDof:
    def test_soft_threshold_count(self):
        x = np.array([2.0, 0.0, -1.0])
        model = detect_cosupport(x, identity_dict(3), phi=identity(3))
        assert risk.dof_estimate(model) == 2

    def test_tv_counts_plateaus(self):
        x = np.array([1.0, 1.0, 3.0, 3.0, 3.0, -2.0])
        model = detect_cosupport(x, finite_diff_1d(6), phi=identity(6))
        assert risk.dof_estimate(model) == 3

    def test_equals_jacobian_trace(self):
        rng = np.random.default_rng(11)
        phi = from_matrix(rng.standard_normal((5, 6)))
        dic = dict_from_matrix(rng.standard_normal((6, 7)))
        y = rng.standard_normal(5)
        prob = Problem(phi, dic, y, 0.4)
        sol, model, _ = certified_solve(prob)
        from alasso.cosparse import prediction_jacobian
        m = prediction_jacobian(phi, dic, model.cosupport,
                                basis=model.basis)
        assert abs(risk.dof_estimate(model) - np.trace(m)) <= 1e-8

    def test_refuses_without_injectivity(self):
        phi = from_matrix(np.ones((1, 3)))
        model = detect_cosupport(np.array([1.0, 2.0, 3.0]),
                                 identity_dict(3), phi=phi)
        with pytest.raises(ValueError):
            risk.dof_estimate(model)


class TestSurePrediction:
    def test_interpolation(self):
        y = np.array([1.0, -2.0, 0.5])
        assert risk.sure_prediction(y, y, 0.25, 3) == pytest.approx(
            3 * 0.25, abs=1e-15)

    def test_zero_estimator(self):
        y = np.array([1.0, -2.0, 0.5])
        expect = float(y @ y) - 3 * 0.25
        assert risk.sure_prediction(y, np.zeros(3), 0.25, 0) == \
            pytest.approx(expect, abs=1e-15)

    def test_matches_scalar_soft_threshold_formula(self):
        # independent classical expression: sum min(y_i^2, lam^2)
        # - n s^2 + 2 s^2 #{|y_i| > lam}
        rng = np.random.default_rng(3)
        y = 2.0 * rng.standard_normal(10)
        lam, s2 = 0.9, 0.3
        mu = np.sign(y) * np.maximum(np.abs(y) - lam, 0.0)
        dof = int(np.sum(np.abs(y) > lam))
        classic = float(np.sum(np.minimum(y ** 2, lam ** 2))) \
            - 10 * s2 + 2 * s2 * dof
        assert risk.sure_prediction(y, mu, s2, dof) == pytest.approx(
            classic, rel=1e-12)


class TestXml:
    def test_identity(self):
        y = np.array([1.0, 2.0])
        assert np.allclose(risk.x_ml(identity(2), y), y, atol=1e-12)

    def test_tight_frame_rows(self):
        phi = partial_dct(16, 6, seed=2)
        rng = np.random.default_rng(4)
        y = rng.standard_normal(6)
        assert np.allclose(risk.x_ml(phi, y), phi.adjoint(y), atol=1e-10)

    def test_fat_operator_consistency_and_orthogonality(self):
        rng = np.random.default_rng(5)
        m = rng.standard_normal((4, 9))
        phi = from_matrix(m)
        y = rng.standard_normal(4)
        x = risk.x_ml(phi, y)
        assert np.allclose(m @ x, y, atol=1e-8)
        assert np.allclose(x, np.linalg.pinv(m) @ y, atol=1e-8)

    def test_dense_fallback_on_rank_deficiency(self):
        m = np.array([[1.0, 0.0], [1.0, 0.0]])  # rank 1, singular gram
        y = np.array([1.0, 1.0])
        x = risk.x_ml(from_matrix(m), y)
        assert np.allclose(x, np.linalg.pinv(m) @ y, atol=1e-10)


class TestTraces:
    def test_tight_frame_pinv_gram(self):
        phi = partial_dct(32, 10, seed=1)
        assert risk.trace_pinv_gram(phi) == pytest.approx(10.0, abs=1e-10)

    def test_scaled_identity_inverse_normal(self):
        c = 2.5
        phi = scale(c, identity(6))
        assert risk.trace_inv_normal(phi) == pytest.approx(
            6 / c ** 2, rel=1e-12)

    def test_inv_normal_requires_injectivity(self):
        rng = np.random.default_rng(6)
        phi = from_matrix(rng.standard_normal((3, 5)))
        with pytest.raises(ValueError):
            risk.trace_inv_normal(phi)


def _solved_instance(seed, q=7, n=9, p=8, lam=0.35, sigma=0.4):
    rng = np.random.default_rng(seed)
    phi = from_matrix(rng.standard_normal((q, n)))
    dic = dict_from_matrix(rng.standard_normal((n, p)))
    x0 = rng.standard_normal(n)
    y = phi.apply(x0) + sigma * rng.standard_normal(q)
    prob = Problem(phi, dic, y, lam, sigma=sigma)
    sol, model, cert = certified_solve(prob)
    return prob, sol, model, x0


class TestGsure:
    def test_tight_frame_projection_equals_prediction(self):
        rng = np.random.default_rng(21)
        n, q = 16, 8
        # seed chosen so the DC row is selected: the difference kernel
        # contains the constants, so without that row H0 would fail
        phi = partial_dct(n, q, seed=2)
        dic = finite_diff_1d(n)
        y = rng.standard_normal(q)
        prob = Problem(phi, dic, y, 0.3, sigma=0.5)
        sol, model, _ = certified_solve(prob)
        s2 = 0.25
        pred = risk.sure_prediction(y, sol.mu, s2, risk.dof_estimate(model))
        proj = risk.gsure_projection(prob, sol, model, s2)
        assert proj == pytest.approx(pred, abs=1e-10)

    def test_identity_case_all_three_coincide(self):
        rng = np.random.default_rng(22)
        n = 10
        y = rng.standard_normal(n) * 2
        prob = Problem(identity(n), identity_dict(n), y, 0.7, sigma=0.3)
        sol, model, _ = certified_solve(prob)
        s2 = 0.09
        pred = risk.sure_prediction(y, sol.mu, s2, risk.dof_estimate(model))
        assert risk.gsure_projection(prob, sol, model, s2) == \
            pytest.approx(pred, abs=1e-10)
        assert risk.gsure_estimation(prob, sol, model, s2) == \
            pytest.approx(pred, abs=1e-10)

    def test_projection_matches_full_dense_oracle(self):
        prob, sol, model, _ = _solved_instance(23)
        m = prob.phi.to_dense()
        u = model.basis
        aj = u @ np.linalg.solve(u.T @ (m.T @ m) @ u, u.T)
        pi = np.linalg.pinv(m) @ m
        s2 = 0.16
        xml = np.linalg.pinv(m) @ prob.y
        fit = xml - pi @ sol.x
        expect = float(fit @ fit) - s2 * np.trace(np.linalg.pinv(m @ m.T)) \
            + 2 * s2 * np.trace(pi @ aj)
        got = risk.gsure_projection(prob, sol, model, s2)
        assert got == pytest.approx(expect, abs=1e-8)

    def test_estimation_matches_full_dense_oracle(self):
        prob, sol, model, _ = _solved_instance(24, q=12, n=8)
        m = prob.phi.to_dense()
        u = model.basis
        aj = u @ np.linalg.solve(u.T @ (m.T @ m) @ u, u.T)
        s2 = 0.16
        xml = np.linalg.pinv(m) @ prob.y
        fit = xml - sol.x
        expect = float(fit @ fit) - s2 * np.trace(np.linalg.inv(m.T @ m)) \
            + 2 * s2 * np.trace(aj)
        got = risk.gsure_estimation(prob, sol, model, s2)
        assert got == pytest.approx(expect, abs=1e-8)

    def test_estimation_refuses_fat_operator(self):
        prob, sol, model, _ = _solved_instance(25, q=5, n=9)
        with pytest.raises(ValueError):
            risk.gsure_estimation(prob, sol, model, 0.1)

    def test_mc_route_agrees_with_dense(self):
        prob, sol, model, _ = _solved_instance(26)
        s2 = 0.16
        dense = risk.gsure_projection(prob, sol, model, s2)
        probes = risk.ProbeStream(seed=17, count=3000, dim=prob.phi.rows)
        mc = risk.gsure_projection(prob, sol, model, s2, probes=probes)
        tr = risk.mc_trace(prob.phi, prob.dictionary, model.cosupport,
                           risk._xml_factor(prob.phi), probes,
                           basis=model.basis)
        assert abs(mc - dense) <= 2 * s2 * 3 * tr.stderr


class TestMcTrace:
    def test_identity_projector_trace(self):
        n = 8
        x = np.array([3.0, 0.0, -1.0, 0.0, 2.0, 0.0, 0.0, 1.0])
        model = detect_cosupport(x, identity_dict(n), phi=identity(n))
        probes = risk.ProbeStream(seed=13, count=10000, dim=n)
        mt = risk.mc_trace(identity(n), identity_dict(n), model.cosupport,
                           identity(n), probes)
        assert abs(mt.value - model.d) <= 3 * mt.stderr
        assert mt.used == 10000 and mt.dropped == 0

    def test_single_probe_has_no_stderr(self):
        n = 6
        model = detect_cosupport(np.ones(n), identity_dict(n),
                                 phi=identity(n))
        probes = risk.ProbeStream(seed=2, count=1, dim=n)
        mt = risk.mc_trace(identity(n), identity_dict(n), model.cosupport,
                           identity(n), probes)
        assert mt.stderr is None
        assert mt.used == 1

    def test_zero_factor_gives_zero(self):
        n = 5
        model = detect_cosupport(np.ones(n), identity_dict(n),
                                 phi=identity(n))
        probes = risk.ProbeStream(seed=3, count=4, dim=n)
        zero = scale(0.0, identity(n))
        mt = risk.mc_trace(identity(n), identity_dict(n), model.cosupport,
                           zero, probes)
        assert mt.value == 0.0

    def test_bit_identical_given_seed(self):
        prob, sol, model, _ = _solved_instance(27)
        probes = risk.ProbeStream(seed=101, count=64, dim=prob.phi.rows)
        a = risk.mc_trace(prob.phi, prob.dictionary, model.cosupport,
                          identity(prob.phi.rows), probes,
                          basis=model.basis)
        b = risk.mc_trace(prob.phi, prob.dictionary, model.cosupport,
                          identity(prob.phi.rows), probes,
                          basis=model.basis)
        assert a.value == b.value


class TestEvaluateRisks:
    def test_strict_flag_controls_errors(self):
        prob, sol, model, x0 = _solved_instance(28, q=5, n=9)
        with pytest.raises(ValueError):
            risk.evaluate_risks(prob, sol, model, 0.1,
                                risks=("pred", "est"), strict=True)
        rep = risk.evaluate_risks(prob, sol, model, 0.1,
                                  risks=("pred", "est"), strict=False,
                                  x0=x0)
        assert rep.gsure_pred is not None
        assert rep.gsure_est is None
        assert rep.se_pred is not None

    def test_cache_reuses_lambda_independent_pieces(self):
        prob, sol, model, _ = _solved_instance(29)
        cache = risk.RiskCache(prob.phi)
        first = cache.tr_pinv_gram()
        assert cache.tr_pinv_gram() is first or \
            cache.tr_pinv_gram() == first


class TestHarnesses:
    def test_tiny_noise_matches_per_trial(self):
        # in the noiseless limit the estimator bias survives (lambda is
        # fixed) but gsure tracks the squared error trial by trial
        n = 16
        phi = identity(n)
        dic = finite_diff_1d(n)
        x0 = np.concatenate([np.ones(8), 3 * np.ones(8)])
        rep = risk.unbiasedness_mc(phi, dic, x0, lam=0.05, sigma=1e-5,
                                   trials=5, seed=1, risks=("pred",))
        st = rep.stats["pred"]
        assert abs(st.mean_diff) <= 1e-2 * st.mean_se

    def test_prediction_unbiased_small_run(self):
        n = 16
        phi = identity(n)
        dic = finite_diff_1d(n)
        x0 = np.concatenate([np.zeros(8), np.ones(8)])
        rep = risk.unbiasedness_mc(phi, dic, x0, lam=0.12, sigma=0.1,
                                   trials=300, seed=7, risks=("pred",))
        assert abs(rep.stats["pred"].z) <= 3.0

    def test_reliability_report_shape(self):
        def factory(q):
            x0 = np.zeros(q)
            x0[: q // 2] = 1.0
            return identity(q), finite_diff_1d(q), x0

        rep = risk.reliability_mc(factory, 0.1, 0.1, [8, 16], trials=40,
                                  seed=3, check_terms=True)
        assert len(rep.means) == 2
        assert rep.slope < 0
        assert rep.direct_value is not None and rep.term_value is not None

    def test_two_route_reliability_agreement(self):
        # the squared gap is heavy tailed, so the stderr needs a decent
        # trial count before the z comparison is calibrated
        def factory(q):
            x0 = np.zeros(q)
            x0[: q // 2] = 1.0
            return identity(q), finite_diff_1d(q), x0

        rep = risk.reliability_mc(factory, 0.1, 0.1, [8], trials=600,
                                  seed=3, check_terms=True)
        spread = 3 * math.hypot(rep.direct_stderr, rep.term_stderr)
        assert abs(rep.direct_value - rep.term_value) <= spread
