import numpy as np
import pytest
import sympy as sp

from naxray.metrics import (DomainError, bump_metric, euclidean_metric,
                            eval_metric, hyperbolic_metric, metric_from_json,
                            spherical_metric)


def symbolic_curvature(lam_expr, x, y):
    """Oracle: K = -e^{-2 lam} (lam_xx + lam_yy) by symbolic differentiation."""
    lap = sp.diff(lam_expr, x, 2) + sp.diff(lam_expr, y, 2)
    return sp.simplify(-sp.exp(-2 * lam_expr) * lap)


def test_flat_curvature_zero():
    m = euclidean_metric()
    for pt in [(0.0, 0.0), (0.3, -0.5), (0.9, 0.1)]:
        lam, grad, K = eval_metric(m, pt)
        assert lam == 0.0
        assert grad == (0.0, 0.0)
        assert K == 0.0


@pytest.mark.parametrize("scale_q", ["1/2", "4/5", "13/10"])
def test_spherical_curvature_symbolic(scale_q):
    s = sp.Rational(scale_q)
    scale = float(s)
    x, y = sp.symbols("x y", real=True)
    lam_expr = sp.log(2 * s) - sp.log(1 + s ** 2 * (x ** 2 + y ** 2))
    K_sym = symbolic_curvature(lam_expr, x, y)
    assert sp.simplify(K_sym - 1) == 0
    m = spherical_metric(scale)
    for pt in [(0.0, 0.0), (0.4, 0.2), (-0.7, 0.6)]:
        _, _, K = eval_metric(m, pt)
        assert abs(K - 1.0) < 1e-12


@pytest.mark.parametrize("scale_q", ["2/5", "1/2"])
def test_hyperbolic_curvature_symbolic(scale_q):
    s = sp.Rational(scale_q)
    scale = float(s)
    x, y = sp.symbols("x y", real=True)
    lam_expr = sp.log(2 * s) - sp.log(1 - s ** 2 * (x ** 2 + y ** 2))
    K_sym = symbolic_curvature(lam_expr, x, y)
    assert sp.simplify(K_sym + 1) == 0
    m = hyperbolic_metric(scale)
    for pt in [(0.0, 0.0), (0.5, 0.0), (0.3, -0.4)]:
        _, _, K = eval_metric(m, pt)
        assert abs(K + 1.0) < 1e-12


def test_hyperbolic_rejects_large_scale():
    with pytest.raises(ValueError):
        hyperbolic_metric(scale=0.95, epsilon=0.1)


def test_bump_gradient_and_laplacian_match_fd():
    m = bump_metric(seed=7)
    h = 1e-5
    for pt in [(0.2, 0.1), (-0.4, 0.5), (0.0, 0.0)]:
        x, y = pt
        g1, g2 = m.grad_lam(x, y)
        fd1 = (m.lam(x + h, y) - m.lam(x - h, y)) / (2 * h)
        fd2 = (m.lam(x, y + h) - m.lam(x, y - h)) / (2 * h)
        assert abs(g1 - fd1) < 1e-8
        assert abs(g2 - fd2) < 1e-8
        lap = m.laplacian_lam(x, y)
        fd_lap = (m.lam(x + h, y) + m.lam(x - h, y) + m.lam(x, y + h)
                  + m.lam(x, y - h) - 4 * m.lam(x, y)) / h ** 2
        assert abs(lap - fd_lap) < 1e-5


def test_domain_error_outside_engulfing_disc():
    m = euclidean_metric(epsilon=0.1)
    with pytest.raises(DomainError):
        eval_metric(m, (1.2, 0.0))
    # inside the margin is fine
    eval_metric(m, (1.05, 0.0))


def test_metric_from_json_round_trip():
    spec = {"family": "bumps", "params": {"count": 2, "amplitude": 0.05,
                                          "width": 0.5},
            "epsilon": 0.15, "seed": 3}
    m = metric_from_json(spec)
    assert m.family == "bumps"
    assert m.epsilon == 0.15
    m2 = metric_from_json(spec)
    assert m.lam(0.3, 0.2) == m2.lam(0.3, 0.2)
    with pytest.raises(ValueError):
        metric_from_json({"family": "nope"})


def test_boundary_geodesic_curvature_against_covariant_oracle():
    """Numeric oracle: k_g from the covariant acceleration of the
    unit-speed boundary curve, Christoffels from finite differences of
    lam only."""
    for m in (euclidean_metric(), spherical_metric(0.7), bump_metric(seed=2)):
        beta = 1.1
        h = 1e-4

        def lam(x, y):
            return float(m.lam(x, y))

        def christoffel(x, y):
            l1 = (lam(x + h, y) - lam(x - h, y)) / (2 * h)
            l2 = (lam(x, y + h) - lam(x, y - h)) / (2 * h)
            # conformal metric: Gamma^1 = [[l1, l2], [l2, -l1]],
            #                   Gamma^2 = [[-l2, l1], [l1, l2]]
            return np.array([[[l1, l2], [l2, -l1]],
                             [[-l2, l1], [l1, l2]]])

        def curve(b):
            return np.array([np.cos(b), np.sin(b)])

        # unit-speed reparametrization: ds/db = e^{lam}
        x, y = curve(beta)
        speed = np.exp(lam(x, y))
        db = 1e-4
        cp = (curve(beta + db) - curve(beta - db)) / (2 * db)
        cpp = (curve(beta + db) - 2 * curve(beta) + curve(beta - db)) / db ** 2
        # d/ds = (1/speed) d/db, plus the chain-rule term on the tangent
        T = cp / speed
        dspeed = (np.exp(lam(*curve(beta + db)))
                  - np.exp(lam(*curve(beta - db)))) / (2 * db)
        Tp = (cpp / speed - cp * dspeed / speed ** 2) / speed
        G = christoffel(x, y)
        acc = Tp + np.einsum("kij,i,j->k", G, T, T)
        # signed curvature against the inward normal of the metric frame
        nrm = -np.array([np.cos(beta), np.sin(beta)]) / speed
        g = np.exp(2 * lam(x, y))
        kg_oracle = g * float(acc @ nrm) / 1.0
        kg = float(m.boundary_geodesic_curvature(beta))
        assert abs(kg - kg_oracle) < 1e-5, (m.family, kg, kg_oracle)
