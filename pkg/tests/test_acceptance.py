"""Acceptance suite: every numbered criterion at its stated tolerance.

Each test prints one PASS/FAIL line (visible with `pytest -s` or on
failure).  Desk scale: n in {1, 2}, fourth-order transport at coarse
steps where the tolerance budget allows, reduced influx/bundle grids for
the heavy factorization experiments (the tolerances are unchanged).
"""

import numpy as np
import pytest

from naxray.factorization import (MatrixLoop, bauer_spectral_factor,
                                  factorize, factorize_fiber,
                                  mode_equation_residuals, spectral_factor,
                                  transform_attenuation,
                                  transform_conjugation_residual)
from naxray.fiber import FiberGrid, check_structure_equations, \
    random_band_limited_probe
from naxray.fields import constant_matrix_field, random_matrix_field, \
    random_vector_field
from naxray.geometry import (BoundaryCoordinate, PhasePoint, geodesic_flow,
                             influx_grid, integrate_fixed_time)
from naxray.metrics import bump_metric, euclidean_metric, hyperbolic_metric, \
    spherical_metric
from naxray.transport import (PairAttenuation, attenuated_transform,
                              endomorphism_action, integrating_factor,
                              rel_deviation, scattering_data,
                              scattering_minus_check)
from naxray.gauge import (GaugeElement, gauge_apply, plant_linear_kernel,
                          pseudo_linearization_residual, reconstruct_gauge,
                          unitarity_criterion)

from conftest import random_holomorphic_loop, random_unitary_loop

FAMILIES = {
    "euclidean": euclidean_metric(),
    "spherical": spherical_metric(0.7),
    "bumps": bump_metric(seed=2, amplitude=0.06),
}


def report(num, name, passed, detail):
    tag = "PASS" if passed else "FAIL"
    print(f"[criterion {num:2d}] {tag}  {name}: {detail}")
    assert passed, f"criterion {num} ({name}): {detail}"


def random_pair(metric, n=2, seed=0, scale=0.2, **kw):
    return PairAttenuation(
        metric, n,
        A1=random_matrix_field(n, seed=seed + 1, scale=scale, **kw),
        A2=random_matrix_field(n, seed=seed + 2, scale=scale, **kw),
        Phi=random_matrix_field(n, seed=seed + 3, scale=scale, **kw))


# -------------------------------------------------------------------- 1


def test_criterion_01_structure_equations():
    # sup residuals on polynomial-window probes (tame derivatives);
    # refinement order on plateau-window probes (numerically C-infinity,
    # so the fit sees the stencil order, not the window seam)
    worst = 0.0
    base = FiberGrid(64, 128, 32)
    per_family = {"euclidean": 4, "spherical": 3, "bumps": 3}
    for name, metric in FAMILIES.items():
        for i in range(per_family[name]):
            probe = random_band_limited_probe(metric, base, seed=10 + i,
                                              width=1.0, window="poly",
                                              hi=0.9)
            worst = max(worst,
                        check_structure_equations(metric, [probe]).max_residual)
    orders = []
    for name, metric in FAMILIES.items():
        fine = FiberGrid(128, 256, 32)
        r1 = check_structure_equations(
            metric, [random_band_limited_probe(metric, base, seed=33)]
        ).max_residual
        r2 = check_structure_equations(
            metric, [random_band_limited_probe(metric, fine, seed=33)]
        ).max_residual
        if r1 > 1e-12:
            orders.append(np.log2(max(r1, 1e-300) / max(r2, 1e-300)))
    order = min(orders)
    report(1, "structure equations", worst < 1e-4 and order > 3.4,
           f"max residual {worst:.3e} (tol 1e-4), refinement order {order:.2f}")


# -------------------------------------------------------------------- 2


def test_criterion_02_cocycle_and_liouville():
    metric = FAMILIES["spherical"]
    pair = random_pair(metric, seed=40, scale=0.3)
    rng = np.random.default_rng(7)
    N = 100
    r = 0.35 * np.sqrt(rng.uniform(size=N))
    ang = rng.uniform(0, 2 * np.pi, N)
    x1, x2 = r * np.cos(ang), r * np.sin(ang)
    th = rng.uniform(0, 2 * np.pi, N)
    t = rng.uniform(0.05, 0.25, N)
    s = rng.uniform(0.05, 0.25, N)

    def eye(n):
        E = np.zeros((N, 2, 2), complex)
        E[:, 0, 0] = E[:, 1, 1] = 1.0
        return E

    rhs = lambda a, b, c, C: -(pair.evaluate(a, b, c) @ C)
    _, _, _, Cts = integrate_fixed_time(metric, x1, x2, th, t + s, step=1e-3,
                                        extra=eye(2), extra_rhs=rhs)
    f1, f2, fth, Ct = integrate_fixed_time(metric, x1, x2, th, t, step=1e-3,
                                           extra=eye(2), extra_rhs=rhs)
    _, _, _, Cs = integrate_fixed_time(metric, f1, f2, fth, s, step=1e-3,
                                       extra=eye(2), extra_rhs=rhs)
    law = float(np.max(np.abs(Cts - Cs @ Ct)))

    tf = random_pair(metric, seed=43, scale=0.3, traceless=True)
    sd = scattering_data(metric, tf, influx_grid(metric, 12, 6, 0.2),
                         step=1e-3)
    det = float(np.max(np.abs(np.linalg.det(sd.values) - 1.0)))
    report(2, "cocycle law and Liouville", law < 1e-6 and det < 1e-7,
           f"cocycle residual {law:.3e} (tol 1e-6), |det C - 1| {det:.3e} "
           f"(tol 1e-7)")


# -------------------------------------------------------------------- 3


def test_criterion_03_gauge_invariance():
    worst = 0.0
    grid_counts = (12, 6)
    for fi, (name, metric) in enumerate(FAMILIES.items()):
        pair = random_pair(metric, seed=50 + fi, scale=0.25)
        grid = influx_grid(metric, *grid_counts, 0.2)
        base = scattering_data(metric, pair, grid, step=2e-3)
        for gi in range(5):
            g = GaugeElement.random_planted(2, seed=100 + 10 * fi + gi)
            moved = scattering_data(metric, gauge_apply(pair, g), grid,
                                    step=2e-3)
            worst = max(worst, rel_deviation(moved.values, base.values))
    report(3, "gauge invariance of scattering data", worst < 1e-5,
           f"max relative deviation {worst:.3e} (tol 1e-5), 5 gauges x 3 families")


# -------------------------------------------------------------------- 4


def test_criterion_04_pseudo_linearization():
    metric = FAMILIES["spherical"]
    pa = random_pair(metric, seed=60, scale=0.25)
    pb = random_pair(metric, seed=63, scale=0.2)
    grid = influx_grid(metric, 16, 8, 0.2)
    dev = pseudo_linearization_residual(metric, pa, pb, grid, step=2e-3)

    # abelian closed form: flat diameter, constants 0.3 and 0.1
    flat = FAMILIES["euclidean"]
    ca = PairAttenuation(flat, 1, Phi=constant_matrix_field([[0.3]]))
    cb = PairAttenuation(flat, 1, Phi=constant_matrix_field([[0.1]]))
    diam = [BoundaryCoordinate(np.pi, 0.0)]
    lhs = (scattering_data(flat, ca, diam, step=1e-3).values
           @ np.linalg.inv(scattering_data(flat, cb, diam, step=1e-3).values))
    src = lambda a, b, c: ca.evaluate(a, b, c) - cb.evaluate(a, b, c)
    W = attenuated_transform(flat, endomorphism_action(ca, cb), src, diam,
                             step=1e-3)
    ab_err = max(abs(lhs[0, 0, 0] - np.exp(0.4)),
                 abs(1 + W[0, 0, 0] - np.exp(0.4)))
    report(4, "pseudo-linearization", dev < 1e-5 and ab_err < 1e-8,
           f"max deviation {dev:.3e} (tol 1e-5), abelian closed form "
           f"{ab_err:.3e} (tol 1e-8)")


# -------------------------------------------------------------------- 5


def test_criterion_05_outflux_relation():
    metric = FAMILIES["spherical"]
    pair = random_pair(metric, seed=70, scale=0.25)
    res = scattering_minus_check(metric, pair,
                                 influx_grid(metric, 16, 8, 0.2), step=2e-3)
    report(5, "outflux/influx relation", res < 1e-5,
           f"residual {res:.3e} (tol 1e-5)")


# -------------------------------------------------------------------- 6


def test_criterion_06_loop_factorization():
    nt = 128
    theta = np.arange(nt) * 2 * np.pi / nt
    worst_pair = 0.0
    worst_recon = 0.0
    worst_hol = 0.0
    worst_unit = 0.0
    for seed in range(20):
        Fh = random_holomorphic_loop(theta, seed=seed)
        S = MatrixLoop(np.einsum("tij,tkj->tik", Fh, Fh.conj()))
        Fw = spectral_factor(S)
        Fb = bauer_spectral_factor(S)
        worst_pair = max(worst_pair,
                         float(np.max(np.abs(Fw.samples - Fb.samples))))
        Ut = random_unitary_loop(theta, seed=seed + 50)
        R = MatrixLoop(np.einsum("tij,tjk->tik", Fh, Ut))
        F, U, diag = factorize_fiber(R)
        worst_recon = max(worst_recon, diag["recon_res"])
        worst_hol = max(worst_hol, diag["holF"], diag["holFinv"])
        worst_unit = max(worst_unit, diag["unitU"])
    ok = (worst_recon < 1e-7 and worst_hol < 1e-8 and worst_unit < 1e-8
          and worst_pair < 1e-8)
    report(6, "loop factorization", ok,
           f"recon {worst_recon:.2e} (1e-7), neg-mode {worst_hol:.2e} (1e-8), "
           f"unitarity {worst_unit:.2e} (1e-8), Wilson-vs-Bauer "
           f"{worst_pair:.2e} (1e-8), 20 loops")


# ---------------------------------------------------------------- 7 & 8


MIRACLE_METRIC = spherical_metric(0.55, epsilon=0.2)


@pytest.fixture(scope="module")
def miracle_artifacts():
    metric = MIRACLE_METRIC
    pair = PairAttenuation(
        metric, 2,
        A1=random_matrix_field(2, seed=11, scale=0.2, decay=2.0),
        A2=random_matrix_field(2, seed=12, scale=0.2, decay=2.0),
        Phi=random_matrix_field(2, seed=13, scale=0.2, decay=2.0))
    grid = FiberGrid(32, 64, 128, r_max=1.08)
    R, pre = integrating_factor(metric, pair, grid, step=1e-2)
    fact = factorize(R, max_iter=120)
    b_atten, rep, _ = transform_attenuation(metric, pair, R, fact,
                                            fd_step=0.5 * grid.dr)
    return metric, pair, R, fact, b_atten, rep


def test_criterion_07_miracle_lemma(miracle_artifacts):
    metric, pair, R, fact, b_atten, rep = miracle_artifacts
    mer = mode_equation_residuals(metric, pair, fact.F, b_atten)
    ok = (rep["skew_defect"] < 1e-4 and rep["outband"] < 1e-4
          and rep["route_dev"] < 1e-4
          and mer["res_deg_minus1"] < 1e-4 and mer["res_deg_0"] < 1e-4
          and mer["solved_dev_minus1"] < 1e-4 and mer["solved_dev_0"] < 1e-4)
    report(7, "skew transformation of the attenuation", ok,
           f"skew {rep['skew_defect']:.2e}, outband {rep['outband']:.2e}, "
           f"routes {rep['route_dev']:.2e}, mode eqs "
           f"({mer['res_deg_minus1']:.2e}, {mer['res_deg_0']:.2e}), solved "
           f"({mer['solved_dev_minus1']:.2e}, {mer['solved_dev_0']:.2e}) "
           f"(all tol 1e-4)")


def test_criterion_07b_skew_structure(miracle_artifacts):
    # the lemma's mode structure: B_{-1}* = -B_1 and B_0* = -B_0
    _, _, _, _, b_atten, _ = miracle_artifacts
    keep = b_atten.coefficient_field(0).grid.r <= 1.0
    Bm1 = b_atten.coefficient_field(-1).values[keep, :, 0]
    B0 = b_atten.coefficient_field(0).values[keep, :, 0]
    B1 = b_atten.coefficient_field(1).values[keep, :, 0]
    sc = max(np.abs(Bm1).max(), np.abs(B1).max())
    d1 = np.max(np.abs(np.conj(np.swapaxes(Bm1, -1, -2)) + B1)) / sc
    d0 = np.max(np.abs(np.conj(np.swapaxes(B0, -1, -2)) + B0)) / \
        max(np.abs(B0).max(), 1e-30)
    report(7, "mode structure of the skew attenuation",
           d1 < 1e-4 and d0 < 1e-4,
           f"B(-1)*+B(1) {d1:.2e}, B(0)*+B(0) {d0:.2e} (tol 1e-4)")


def test_criterion_08_transform_conjugation(miracle_artifacts):
    metric, pair, R, fact, b_atten, _ = miracle_artifacts
    grid = influx_grid(metric, 12, 6, 0.2)
    worst = 0.0
    for seed in range(5):
        vf = random_vector_field(2, seed=80 + seed, degree=2, scale=0.5,
                                 boundary_power=0)

        def f_src(x1, x2, th, vf=vf, seed=seed):
            base = vf(x1, x2)
            mod = 1 + 0.4 * np.cos(th + 0.3 * seed) + 0.3 * np.sin(th)
            return base * np.asarray(mod)[..., None]

        worst = max(worst, transform_conjugation_residual(
            metric, pair, fact, b_atten, f_src, grid, step=5e-3))
    report(8, "transform conjugation through the factor", worst < 1e-4,
           f"max residual {worst:.3e} (tol 1e-4), 5 sources")


# -------------------------------------------------------------------- 9


def test_criterion_09_planted_kernel():
    metric = FAMILIES["spherical"]
    pair = random_pair(metric, seed=90, scale=0.25)
    influx = influx_grid(metric, 16, 8, 0.2)
    fib = FiberGrid(16, 32, 16)
    p = random_vector_field(2, seed=91, degree=2, scale=0.6, boundary_power=2)
    rep = plant_linear_kernel(metric, pair, p, influx, fib, step=4e-3).report
    ok = (rep["transform_sup"] < 1e-5 and rep["solution_plus_p_sup"] < 1e-3
          and rep["holo_ratio"] < 1e-6 and rep["antiholo_ratio_conj"] < 1e-6)
    report(9, "planted kernel of the linear transform", ok,
           f"transform {rep['transform_sup']:.2e} (1e-5), u+p "
           f"{rep['solution_plus_p_sup']:.2e} (1e-3), holo ratios "
           f"({rep['holo_ratio']:.2e}, {rep['antiholo_ratio_conj']:.2e}) (1e-6)")


# ------------------------------------------------------------------- 10


def test_criterion_10_planted_gauge_and_witness():
    metric = FAMILIES["spherical"]
    pair = random_pair(metric, seed=95, scale=0.25)
    influx = influx_grid(metric, 12, 6, 0.2)
    fib = FiberGrid(16, 32, 16)
    planted = GaugeElement.random_planted(2, seed=96, scale=0.5)
    pairB = gauge_apply(pair, planted)
    rec = reconstruct_gauge(metric, pair, pairB, fib, influx, step=5e-3)
    R_, P_, _ = fib.meshes()
    x1 = (R_ * np.cos(P_))[:, :, 0]
    x2 = (R_ * np.sin(P_))[:, :, 0]
    sup = float(np.max(np.abs(rec.u_values - planted.u(x1, x2))))
    fc = rec.defects["fiber_constancy"]

    bump = np.zeros((2, 2), complex)
    bump[0, 0] = 0.1
    base = pairB.Phi
    pairC = PairAttenuation(
        metric, 2, A1=pairB.A1, A2=pairB.A2,
        Phi=lambda a, b: np.asarray(base(a, b), complex) + bump)
    wit = reconstruct_gauge(metric, pair, pairC, fib, influx, step=5e-3)
    ok = (rec.verdict == "pass" and sup < 1e-3 and fc < 1e-4
          and wit.verdict == "not-equivalent"
          and wit.defects["scattering_mismatch"] > 1e-2)
    report(10, "planted gauge recovery and witness", ok,
           f"sup error {sup:.2e} (1e-3), fiber defect {fc:.2e} (1e-4), "
           f"witness mismatch {wit.defects['scattering_mismatch']:.2e} (>1e-2, "
           f"verdict {wit.verdict})")


# ------------------------------------------------------------------- 11


def test_criterion_11_unitarity_corollary():
    metric = FAMILIES["spherical"]
    grid = influx_grid(metric, 12, 6, 0.2)
    skew = random_matrix_field(2, seed=97, scale=0.35, skew_hermitian=True)
    rs = unitarity_criterion(metric, skew, grid, step=1e-3)
    herm = constant_matrix_field(np.diag([0.8, -0.5]))
    rh = unitarity_criterion(metric, herm, grid, step=1e-3)
    generic = random_matrix_field(2, seed=98, scale=0.3)
    rg = unitarity_criterion(metric, generic, grid, step=1e-3)
    ident = max(rs["conjugation_identity"], rh["conjugation_identity"],
                rg["conjugation_identity"])
    ok = (rs["unitarity_defect"] < 1e-7 and rh["unitarity_defect"] > 1e-2
          and ident < 1e-6)
    report(11, "unitarity detection from the boundary", ok,
           f"skew defect {rs['unitarity_defect']:.2e} (1e-7), hermitian "
           f"defect {rh['unitarity_defect']:.2e} (>1e-2), conjugation "
           f"identity {ident:.2e} (1e-6)")


# ------------------------------------------------------------------- 12


def test_criterion_12_engulfing_margin_insensitivity():
    cut = (0.55, 0.9, 0.7)
    scats = []
    b_fields = []
    for eps in (0.05, 0.1, 0.2):
        metric = spherical_metric(0.55, epsilon=eps)
        pair = PairAttenuation(
            metric, 2,
            A1=random_matrix_field(2, seed=121, scale=0.15, decay=2.0,
                                   cutoff=cut),
            A2=random_matrix_field(2, seed=122, scale=0.15, decay=2.0,
                                   cutoff=cut),
            Phi=random_matrix_field(2, seed=123, scale=0.15, decay=2.0,
                                    cutoff=cut))
        grid = influx_grid(metric, 12, 6, 0.2)
        scats.append(scattering_data(metric, pair, grid, step=2e-3).values)

        fib = FiberGrid(24, 48, 64, r_max=1.0)
        R, _ = integrating_factor(metric, pair, fib, step=1e-2,
                                  residual_probe=False)
        fact = factorize(R, max_iter=200, fail_tol=1e-2)
        b_atten, rep, _ = transform_attenuation(metric, pair, R, fact,
                                                pre_tol=10.0, cross_tol=1.0)
        stack = np.stack([b_atten.coefficient_field(k).values
                          for k in (-1, 0, 1)])
        b_fields.append(stack)

    n_keep = min(b.shape[1] for b in b_fields)
    scat_dev = max(rel_deviation(scats[i], scats[2]) for i in range(2))
    bscale = max(np.abs(b_fields[2][:, :n_keep]).max(), 1e-30)
    b_dev = max(float(np.max(np.abs(b_fields[i][:, :n_keep]
                                    - b_fields[2][:, :n_keep]))) / bscale
                for i in range(2))
    ok = scat_dev < 1e-5 and b_dev < 1e-5
    report(12, "engulfing margin insensitivity", ok,
           f"scattering dev {scat_dev:.3e} (1e-5), induced attenuation dev "
           f"{b_dev:.3e} (1e-5) over margins 0.05/0.1/0.2")
