import numpy as np
import pytest
from scipy.linalg import expm

from naxray.fields import constant_matrix_field, random_matrix_field
from naxray.fiber import FiberGrid
from naxray.geometry import (BoundaryCoordinate, PhasePoint, exit_time,
                             geodesic_flow, influx_grid, integrate_to_exit)
from naxray.metrics import euclidean_metric, spherical_metric
from naxray.transport import (GriddedAttenuation, ModeAttenuation,
                              PairAttenuation, ZeroAttenuation,
                              attenuated_transform, fundamental_solution,
                              integral_formula_check, integrating_factor,
                              matrix_action, scattering_data,
                              scattering_minus_check, solve_cocycle)

FLAT = euclidean_metric()
SPH = spherical_metric(0.8)


def random_pair(metric, n=2, seed=0, scale=0.25, **kw):
    return PairAttenuation(
        metric, n,
        A1=random_matrix_field(n, seed=seed + 1, scale=scale, **kw),
        A2=random_matrix_field(n, seed=seed + 2, scale=scale, **kw),
        Phi=random_matrix_field(n, seed=seed + 3, scale=scale, **kw))


def test_pair_mode_table_identities():
    pair = random_pair(SPH, seed=5, real=True)
    table = pair.mode_table()
    x1 = np.array([0.3, -0.2]); x2 = np.array([0.1, 0.55])
    # zero mode is the matrix field itself
    assert np.allclose(table[0](x1, x2), pair.Phi(x1, x2))
    # for real connection components the +-1 modes are conjugate partners
    assert np.allclose(table[-1](x1, x2), np.conj(table[1](x1, x2)))
    # synthesis through the mode table matches the fused evaluation
    th = np.array([0.7, 2.9])
    synth = sum(np.asarray(f(x1, x2)) * np.exp(1j * k * th)[:, None, None]
                for k, f in table.items())
    assert np.max(np.abs(synth - pair.evaluate(x1, x2, th))) < 1e-13
    assert pair.support() == (-1, 0, 1)


def test_cocycle_closed_forms():
    zero = ZeroAttenuation(2)
    p = PhasePoint(0.1, -0.2, 0.4)
    C = solve_cocycle(FLAT, zero, p, 0.7)
    assert np.max(np.abs(C - np.eye(2))) == 0.0

    c = 0.3 + 0.1j
    sc = PairAttenuation(FLAT, 1, Phi=constant_matrix_field([[c]]))
    C = solve_cocycle(FLAT, sc, p, 0.5, step=2e-3)
    assert abs(C[0, 0] - np.exp(-c * 0.5)) < 1e-12

    N = np.array([[0, 1], [0, 0]], complex)
    nil = PairAttenuation(FLAT, 2, Phi=constant_matrix_field(N))
    C = solve_cocycle(FLAT, nil, p, 0.8, step=2e-3)
    assert np.max(np.abs(C - (np.eye(2) - 0.8 * N))) < 1e-12


def test_cocycle_law_random_states(rng):
    pair = random_pair(SPH, seed=1)
    for _ in range(6):
        r = 0.5 * np.sqrt(rng.uniform())
        ang = rng.uniform(0, 2 * np.pi)
        p = PhasePoint(r * np.cos(ang), r * np.sin(ang),
                       rng.uniform(0, 2 * np.pi))
        t, s = rng.uniform(0.05, 0.4, size=2)
        lhs = solve_cocycle(SPH, pair, p, t + s)
        pt = geodesic_flow(SPH, p, t)
        rhs = solve_cocycle(SPH, pair, pt, s) @ solve_cocycle(SPH, pair, p, t)
        assert np.max(np.abs(lhs - rhs)) < 1e-6


def test_cocycle_negative_time_inverse():
    pair = random_pair(SPH, seed=3)
    p = PhasePoint(0.1, 0.2, 1.1)
    q = geodesic_flow(SPH, p, -0.3)
    Cm = solve_cocycle(SPH, pair, p, -0.3)
    Cf = solve_cocycle(SPH, pair, q, 0.3)
    assert np.max(np.abs(Cm @ Cf - np.eye(2))) < 1e-10


def test_det_liouville_trace_free():
    pair = random_pair(SPH, seed=7, traceless=True, scale=0.4)
    grid = influx_grid(SPH, 6, 3, 0.25)
    sd = scattering_data(SPH, pair, grid, step=1e-3)
    assert np.max(np.abs(np.linalg.det(sd.values) - 1.0)) < 1e-7


def test_unitarity_skew_hermitian():
    pair = random_pair(SPH, seed=9, skew_hermitian=True, scale=0.4)
    grid = influx_grid(SPH, 6, 3, 0.25)
    sd = scattering_data(SPH, pair, grid, step=1e-3)
    UU = np.conj(np.swapaxes(sd.values, -1, -2)) @ sd.values
    assert np.max(np.abs(UU - np.eye(2))) < 1e-7


def test_fundamental_solution_paths():
    grid_pt = BoundaryCoordinate(0.7, 0.2)
    zero = ZeroAttenuation(2)
    path = fundamental_solution(FLAT, zero, grid_pt, "minus")
    assert np.max(np.abs(path.U - np.eye(2))) == 0.0

    # scalar constant: U_plus(0) = e^{c L}
    c = 0.21
    sc = PairAttenuation(FLAT, 1, Phi=constant_matrix_field([[c]]))
    path = fundamental_solution(FLAT, sc, grid_pt, "plus", step=1e-3)
    L = exit_time(FLAT, grid_pt.influx_point())
    assert abs(path.ts[0]) < 1e-12
    assert abs(path.ts[-1] - L) < 1e-8
    assert np.max(np.abs(path.U[-1] - 1.0)) < 1e-12     # U(tau) = Id
    assert abs(path.U[0][0, 0] - np.exp(c * L)) < 1e-9  # intro formula
    assert path.ode_residual(sc) < 1e-4

    # rotation generator: U_plus(0) = exp(tau Phi)
    J = np.array([[0.0, 1.0], [-1.0, 0.0]])
    rot = PairAttenuation(FLAT, 2, Phi=constant_matrix_field(0.4 * J))
    path = fundamental_solution(FLAT, rot, grid_pt, "plus", step=1e-3)
    expect = expm(0.4 * J * L)
    assert np.max(np.abs(path.U[0] - expect)) < 1e-9
    with pytest.raises(ValueError):
        fundamental_solution(FLAT, rot, grid_pt, "sideways")


def test_scattering_flat_scalar_chord_oracle():
    c = 0.3 + 0.1j
    sc = PairAttenuation(FLAT, 1, Phi=constant_matrix_field([[c]]))
    grid = influx_grid(FLAT, 8, 4, 0.2)
    sd = scattering_data(FLAT, sc, grid, step=1e-3)
    mus = np.array([b.mu for b in grid])
    expect = np.exp(c * 2 * np.cos(mus))
    assert np.max(np.abs(sd.values[:, 0, 0] - expect)) < 1e-9
    assert sd.max_cond >= 1.0


def test_scattering_zero_is_identity_and_deterministic():
    grid = influx_grid(SPH, 6, 4, 0.25)
    sd = scattering_data(SPH, ZeroAttenuation(2), grid, step=2e-3)
    assert np.max(np.abs(sd.values - np.eye(2))) == 0.0
    pair = random_pair(SPH, seed=13)
    a = scattering_data(SPH, pair, grid, step=2e-3)
    b = scattering_data(SPH, pair, grid, step=2e-3, threads=3)
    assert np.array_equal(a.values, b.values)  # bit identical across pools


def test_scattering_minus_relation():
    grid = influx_grid(SPH, 6, 3, 0.25)
    assert scattering_minus_check(SPH, ZeroAttenuation(2), grid) < 1e-14
    c = 0.17
    sc = PairAttenuation(FLAT, 1, Phi=constant_matrix_field([[c]]))
    gridf = influx_grid(FLAT, 6, 3, 0.25)
    assert scattering_minus_check(FLAT, sc, gridf, step=1e-3) < 1e-8
    pair = random_pair(SPH, seed=15, skew_hermitian=True)
    assert scattering_minus_check(SPH, pair, grid, step=1e-3) < 1e-7


def test_attenuated_transform_closed_forms():
    grid = influx_grid(FLAT, 8, 4, 0.2)
    taus = np.array([exit_time(FLAT, b.influx_point()) for b in grid])

    one = lambda x1, x2, th: np.ones(np.broadcast(x1, th).shape + (1,), complex)
    vals = attenuated_transform(FLAT, matrix_action(ZeroAttenuation(1)), one,
                                grid, step=1e-3)
    assert np.max(np.abs(vals[:, 0] - taus)) < 1e-9

    a, c = 0.25, 0.7
    pa = PairAttenuation(FLAT, 1, Phi=constant_matrix_field([[a]]))
    fc = lambda x1, x2, th: c * np.ones(np.broadcast(x1, th).shape + (1,), complex)
    vals = attenuated_transform(FLAT, matrix_action(pa), fc, grid, step=1e-3)
    expect = (c / a) * (np.exp(a * taus) - 1.0)
    assert np.max(np.abs(vals[:, 0] - expect)) < 1e-9

    # fundamental theorem of calculus: f = dp(v) with p vanishing on the
    # boundary integrates to zero
    def f_grad(x1, x2, th):
        # p = (1 - |x|^2)^2, dp = -4 x (1 - |x|^2)
        w = 1.0 - x1 ** 2 - x2 ** 2
        d1 = -4.0 * x1 * w
        d2 = -4.0 * x2 * w
        return (d1 * np.cos(th) + d2 * np.sin(th))[..., None] + 0j

    vals = attenuated_transform(FLAT, matrix_action(ZeroAttenuation(1)),
                                f_grad, grid, step=1e-3)
    assert np.max(np.abs(vals)) < 1e-9


def test_integrating_factor_scalar_quadrature_oracle():
    g = FiberGrid(12, 16, 8)
    a = 0.3
    sc = PairAttenuation(FLAT, 1, Phi=constant_matrix_field([[a]]))
    R, res = integrating_factor(FLAT, sc, g, step=2e-3)
    R_, P_, T_ = g.meshes()
    x1 = (R_ * np.cos(P_)).ravel()
    x2 = (R_ * np.sin(P_)).ravel()
    th = T_.ravel()
    tau0, _, _, _, _, _ = integrate_to_exit(FLAT, x1, x2, th,
                                            FLAT.engulfing_radius, step=2e-3)
    expect = np.exp(a * tau0).reshape(R.values.shape[:3])
    assert np.max(np.abs(R.values[..., 0, 0] - expect)) < 1e-9
    assert res < 5e-3  # coarse grid; the residual is interpolation bound

    zeroR, _ = integrating_factor(FLAT, ZeroAttenuation(2), g, step=5e-3,
                                  residual_probe=False)
    assert np.max(np.abs(zeroR.values - np.eye(2))) == 0.0


def test_integral_formula_matches_transport():
    grid = influx_grid(SPH, 6, 3, 0.25)
    # zero attenuation: plain ray quadrature
    f = lambda x1, x2, th: np.stack(
        [x1 + 0.3 * np.cos(th), x2 - 0.1 * np.sin(th)], axis=-1).astype(complex)
    assert integral_formula_check(SPH, ZeroAttenuation(2), f, grid,
                                  step=1e-3) < 1e-8
    # scalar constant closed form
    a, c = 0.25, 0.7
    pa = PairAttenuation(FLAT, 1, Phi=constant_matrix_field([[a]]))
    fc = lambda x1, x2, th: c * np.ones(np.broadcast(x1, th).shape + (1,), complex)
    gridf = influx_grid(FLAT, 6, 3, 0.25)
    assert integral_formula_check(FLAT, pa, fc, gridf, step=1e-3) < 1e-6
    # generic pair, cross-validation of the two solvers
    pair = random_pair(SPH, seed=17)
    assert integral_formula_check(SPH, pair, f, grid, step=2e-3) < 1e-5


def test_step_halving_fourth_order():
    pair = random_pair(SPH, seed=19, scale=0.35)
    grid = influx_grid(SPH, 4, 2, 0.3)
    vals = {}
    for h in (0.04, 0.02, 0.01):
        vals[h] = scattering_data(SPH, pair, grid, step=h).values
    d1 = np.max(np.abs(vals[0.04] - vals[0.02]))
    d2 = np.max(np.abs(vals[0.02] - vals[0.01]))
    assert d1 / d2 > 10  # fourth order gives 16


def test_gridded_attenuation_roundtrip():
    g = FiberGrid(16, 32, 16)
    pair = random_pair(SPH, seed=21)
    R_, P_, _ = g.meshes()
    x1 = (R_ * np.cos(P_))[:, :, :1]
    x2 = (R_ * np.sin(P_))[:, :, :1]
    flat = FiberGrid(16, 32, 1)
    from naxray.fiber import FiberFunction
    tables = {}
    for k, fn in pair.mode_table().items():
        tables[k] = FiberFunction(SPH, flat, fn(x1[:, :, 0], x2[:, :, 0])[:, :, None])
    gridded = GriddedAttenuation(2, tables)
    pts = np.array([[0.3, 0.2, 1.0], [0.5, -0.4, 2.5], [0.05, 0.0, 0.3]])
    exact = pair.evaluate(pts[:, 0], pts[:, 1], pts[:, 2])
    approx = gridded.evaluate(pts[:, 0], pts[:, 1], pts[:, 2])
    assert np.max(np.abs(exact - approx)) < 2e-4


def test_integrating_factor_residual_random_pair():
    # flow-differenced residual of X R + A R on a production-size grid
    metric = spherical_metric(0.55, epsilon=0.2)
    pair = PairAttenuation(
        metric, 2,
        A1=random_matrix_field(2, seed=1, scale=0.15, decay=2.0),
        A2=random_matrix_field(2, seed=2, scale=0.15, decay=2.0),
        Phi=random_matrix_field(2, seed=3, scale=0.15, decay=2.0))
    g = FiberGrid(32, 64, 64, r_max=1.0)
    _, res = integrating_factor(metric, pair, g, step=1e-2)
    assert res < 1e-4
