"""Shared oracle helpers for the test suite."""

import numpy as np

from alasso import linops


def adjoint_gap(op, rng, trials=5):
    """Max relative defect of <Ax, u> == <x, A*u> over random probes."""
    worst = 0.0
    for _ in range(trials):
        x = rng.standard_normal(op.cols)
        u = rng.standard_normal(op.rows)
        ax = op.apply(x)
        atu = op.adjoint(u)
        lhs = float(np.dot(ax, u))
        rhs = float(np.dot(x, atu))
        scale = (np.linalg.norm(ax) * np.linalg.norm(u)
                 + np.linalg.norm(x) * np.linalg.norm(atu) + 1e-300)
        worst = max(worst, abs(lhs - rhs) / scale)
    return worst


def dense_gap(op, rng, trials=5):
    """Max relative defect of apply/adjoint against the dense matrix."""
    m = op.to_dense()
    worst = 0.0
    for _ in range(trials):
        x = rng.standard_normal(op.cols)
        u = rng.standard_normal(op.rows)
        a = np.linalg.norm(op.apply(x) - m @ x)
        b = np.linalg.norm(op.adjoint(u) - m.T @ u)
        scale = np.linalg.norm(m) * (np.linalg.norm(x) + np.linalg.norm(u)) + 1e-300
        worst = max(worst, (a + b) / scale)
    return worst


def random_dense_pair(rng, n, p, q):
    """A dense random instance (phi, dictionary) for small exact tests."""
    phi = linops.from_matrix(rng.standard_normal((q, n)))
    d = linops.dict_from_matrix(rng.standard_normal((n, p)))
    return phi, d


def operator_zoo(seed=0):
    """A representative list of (name, LinearMap) pairs covering the zoo."""
    rng = np.random.default_rng(seed)
    ops = [
        ("identity", linops.identity(7)),
        ("dense", linops.from_matrix(rng.standard_normal((5, 9)))),
        ("mask", linops.mask(8, [0, 2, 5])),
        ("subsample", linops.subsample(12, 3)),
        ("subsample_rows", linops.subsample_rows(6, 4, 2)),
        ("circular_conv", linops.circular_conv(10, [0.5, 0.25, 0.25])),
        ("partial_dct", linops.partial_dct(16, 7, seed=123)),
        ("scaled", linops.scale(-2.5, linops.subsample(9, 2))),
        ("composition", linops.compose(
            linops.mask(6, [1, 3, 4]), linops.circular_conv(6, [1.0, -1.0]))),
        ("fd1d_analysis", linops.finite_diff_1d(9).analysis),
        ("fd2d_analysis", linops.finite_diff_2d(4, 5).analysis),
        ("haar_analysis", linops.haar_shift_invariant(16, 3).analysis),
        ("fd2d_base", linops.finite_diff_2d(3, 4).base),
        ("haar_base", linops.haar_shift_invariant(8, 2).base),
    ]
    return ops
