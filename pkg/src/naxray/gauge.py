"""Gauge actions, pseudo-linearization and planted-solution experiments.

The gauge group consists of invertible matrix fields u on the disc with
u = Id on the boundary, acting on connection/field pairs by

    (A, Phi) . u = (u^{-1} du + u^{-1} A u,  u^{-1} Phi u).

Scattering data is invariant under this action; the experiments here
verify that numerically, reconstruct the gauge from two equivalent pairs
through the bundle function W = U_A U_B^{-1} - Id, and exercise the
injectivity statements with planted solutions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fiber import (FiberFunction, FiberGrid, interior_mask,
                    holomorphicity_ratio, antiholomorphic_ratio)
from .geometry import DEFAULT_STEP, grid_arrays, rk4_step
from .metrics import ConformalMetric
from .transport import (AttenuationField, PairAttenuation, ZeroAttenuation,
                        attenuated_transform, endomorphism_action,
                        matrix_action, rel_deviation, scattering_data,
                        transport_on_bundle)

__all__ = [
    "GaugeElement",
    "PlantedLinearKernel",
    "gauge_apply",
    "gauge_invariance_check",
    "pseudo_linearization_residual",
    "reconstruct_gauge",
    "plant_linear_kernel",
    "unitarity_criterion",
    "subgroup_preservation",
]


class GaugeElement:
    """Invertible matrix field equal to Id on the boundary circle.

    Carries exact evaluators for u and its partial derivatives.  The
    scalar-generator form u = exp(rho(x) T) keeps the matrix exponential
    batched through one eigendecomposition of the constant generator T.
    """

    def __init__(self, n, eval_u, eval_du):
        self.n = n
        self._u = eval_u
        self._du = eval_du

    def u(self, x1, x2):
        return self._u(np.asarray(x1, float), np.asarray(x2, float))

    def du(self, x1, x2):
        return self._du(np.asarray(x1, float), np.asarray(x2, float))

    def boundary_defect(self, n_samples: int = 256) -> float:
        beta = np.arange(n_samples) * 2.0 * np.pi / n_samples
        vals = self.u(np.cos(beta), np.sin(beta))
        return float(np.max(np.abs(vals - np.eye(self.n))))

    @classmethod
    def identity(cls, n: int) -> "GaugeElement":
        def ev(x1, x2):
            shape = np.broadcast(x1, x2).shape
            out = np.zeros(shape + (n, n), complex)
            out[...] = np.eye(n)
            return out

        def dv(x1, x2):
            shape = np.broadcast(x1, x2).shape
            z = np.zeros(shape + (n, n), complex)
            return z, z.copy()

        return cls(n, ev, dv)

    @classmethod
    def from_scalar_generator(cls, T, rho, drho) -> "GaugeElement":
        """u = exp(rho(x) T) for a constant matrix T and scalar rho.

        rho must vanish on the boundary circle; drho(x1, x2) returns the
        pair of exact partial derivatives.  The exponential and its
        differential T u drho are evaluated through the eigensystem of T.
        """
        T = np.asarray(T, complex)
        n = T.shape[0]
        w, V = np.linalg.eig(T)
        Vinv = np.linalg.inv(V)
        cond = np.linalg.cond(V)
        if cond > 1e8:
            raise ValueError("generator too close to non-diagonalizable")

        def ev(x1, x2):
            r = np.asarray(rho(x1, x2), complex)
            E = np.exp(r[..., None] * w)
            return np.einsum("ij,...j,jk->...ik", V, E, Vinv)

        def dv(x1, x2):
            U = ev(x1, x2)
            TU = np.einsum("ij,...jk->...ik", T, U)
            d1, d2 = drho(x1, x2)
            return (TU * np.asarray(d1)[..., None, None],
                    TU * np.asarray(d2)[..., None, None])

        return cls(n, ev, dv)

    @classmethod
    def from_generator(cls, n, G, dG) -> "GaugeElement":
        """u = exp(G(x)) for a matrix field G with exact differential dG.

        Uses the Frechet derivative of the matrix exponential pointwise;
        intended for spatial-grid evaluation, not inner solver loops.
        """
        from scipy.linalg import expm, expm_frechet

        def ev(x1, x2):
            x1 = np.atleast_1d(np.asarray(x1, float))
            x2 = np.atleast_1d(np.asarray(x2, float))
            shape = np.broadcast(x1, x2).shape
            Gv = np.broadcast_to(G(x1, x2), shape + (n, n))
            flat = Gv.reshape(-1, n, n)
            out = np.stack([expm(M) for M in flat])
            return out.reshape(shape + (n, n))

        def dv(x1, x2):
            x1 = np.atleast_1d(np.asarray(x1, float))
            x2 = np.atleast_1d(np.asarray(x2, float))
            shape = np.broadcast(x1, x2).shape
            Gv = np.broadcast_to(G(x1, x2), shape + (n, n)).reshape(-1, n, n)
            d1, d2 = dG(x1, x2)
            d1 = np.broadcast_to(d1, shape + (n, n)).reshape(-1, n, n)
            d2 = np.broadcast_to(d2, shape + (n, n)).reshape(-1, n, n)
            o1 = np.stack([expm_frechet(M, E, compute_expm=False)
                           for M, E in zip(Gv, d1)])
            o2 = np.stack([expm_frechet(M, E, compute_expm=False)
                           for M, E in zip(Gv, d2)])
            return o1.reshape(shape + (n, n)), o2.reshape(shape + (n, n))

        return cls(n, ev, dv)

    @classmethod
    def random_planted(cls, n: int, seed: int = 0,
                       scale: float = 0.5) -> "GaugeElement":
        """Seeded gauge exp((1-|x|^2)^2 q(x) T): identity on the boundary."""
        rng = np.random.default_rng(seed)
        T = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        T *= scale / max(1.0, np.linalg.norm(T))
        c = rng.normal(size=3)

        def rho(x1, x2):
            w = (1.0 - x1 * x1 - x2 * x2) ** 2
            return w * (c[0] + c[1] * x1 + c[2] * x2)

        def drho(x1, x2):
            w1 = 1.0 - x1 * x1 - x2 * x2
            q = c[0] + c[1] * x1 + c[2] * x2
            d1 = -4.0 * x1 * w1 * q + w1 ** 2 * c[1]
            d2 = -4.0 * x2 * w1 * q + w1 ** 2 * c[2]
            return d1, d2

        return cls.from_scalar_generator(T, rho, drho)

    def compose(self, other: "GaugeElement") -> "GaugeElement":
        """Pointwise product (self * other)(x) = self(x) other(x)."""
        if self.n != other.n:
            raise ValueError("dimension mismatch")

        def ev(x1, x2):
            return self.u(x1, x2) @ other.u(x1, x2)

        def dv(x1, x2):
            a = self.u(x1, x2)
            b = other.u(x1, x2)
            da1, da2 = self.du(x1, x2)
            db1, db2 = other.du(x1, x2)
            return da1 @ b + a @ db1, da2 @ b + a @ db2

        return GaugeElement(self.n, ev, dv)


def gauge_apply(pair: PairAttenuation, g: GaugeElement) -> PairAttenuation:
    """Transformed pair (u^{-1} du + u^{-1} A u, u^{-1} Phi u)."""
    if g.n != pair.n:
        raise ValueError("gauge dimension does not match the pair")
    metric = pair.metric
    n = pair.n

    def conj_field(f):
        if f is None:
            return None

        def ev(x1, x2):
            U = g.u(x1, x2)
            return np.linalg.inv(U) @ np.asarray(f(x1, x2), complex) @ U

        return ev

    def a_component(i):
        base = pair.A1 if i == 1 else pair.A2

        def ev(x1, x2):
            U = g.u(x1, x2)
            Uinv = np.linalg.inv(U)
            dU = g.du(x1, x2)[i - 1]
            out = Uinv @ dU
            if base is not None:
                out = out + Uinv @ np.asarray(base(x1, x2), complex) @ U
            return out

        return ev

    return PairAttenuation(metric, n, A1=a_component(1), A2=a_component(2),
                           Phi=conj_field(pair.Phi))


def gauge_invariance_check(metric, pair, g: GaugeElement, grid,
                           step=DEFAULT_STEP) -> float:
    """Relative deviation of scattering data under the gauge action."""
    defect = g.boundary_defect()
    if defect > 1e-8:
        raise ValueError(f"gauge is not Id on the boundary ({defect:.2e})")
    base = scattering_data(metric, pair, grid, step=step)
    moved = scattering_data(metric, gauge_apply(pair, g), grid, step=step)
    return rel_deviation(moved.values, base.values)


def pseudo_linearization_residual(metric, attenA, attenB, grid,
                                  step=DEFAULT_STEP) -> float:
    """Deviation in C_A C_B^{-1} = Id + transform of (A - B).

    The right side is the attenuated transform of the difference with the
    endomorphism action U -> A U - U B.
    """
    CA = scattering_data(metric, attenA, grid, step=step)
    CB = scattering_data(metric, attenB, grid, step=step)
    lhs = CA.values @ np.linalg.inv(CB.values)

    def src(x1, x2, th):
        return attenA.evaluate(x1, x2, th) - attenB.evaluate(x1, x2, th)

    W = attenuated_transform(metric, endomorphism_action(attenA, attenB),
                             src, grid, step=step)
    rhs = np.eye(attenA.n) + W
    return rel_deviation(lhs, rhs)


@dataclass
class GaugeReconstruction:
    u_values: np.ndarray          # (n_r, n_phi, n, n) recovered gauge field
    verdict: str                  # "pass" | "fail" | "not-equivalent"
    defects: dict
    grid: FiberGrid

    def gauge_interp(self, metric):
        flat = FiberGrid(self.grid.n_r, self.grid.n_phi, 1,
                         r_max=self.grid.r_max)
        fib = FiberFunction(metric, flat, self.u_values[:, :, None])

        def ev(x1, x2):
            x1 = np.atleast_1d(np.asarray(x1, float))
            s = x1.shape
            n = self.u_values.shape[-1]
            return fib.interp(x1.ravel(),
                              np.atleast_1d(np.asarray(x2, float)).ravel(),
                              np.zeros(x1.size)).reshape(s + (n, n))

        return ev


def reconstruct_gauge(metric, pairA, pairB, fib_grid, influx, step=DEFAULT_STEP,
                      input_tol: float = 1e-6, fiber_tol: float = 1e-4,
                      max_time=None) -> GaugeReconstruction:
    """Recover the gauge linking two pairs with matching scattering data.

    Builds W = U_A U_B^{-1} - Id from per-point bundle solves; for truly
    equivalent pairs W is fiber constant and Id + W_0 is the gauge.  A
    scattering mismatch beyond `input_tol` returns the "not-equivalent"
    verdict instead of reconstructing.
    """
    n = pairA.n
    CA = scattering_data(metric, pairA, influx, step=step)
    CB = scattering_data(metric, pairB, influx, step=step)
    mismatch = rel_deviation(CA.values, CB.values)
    defects = {"scattering_mismatch": mismatch}
    if mismatch > input_tol:
        return GaugeReconstruction(
            np.broadcast_to(np.eye(n), (fib_grid.n_r, fib_grid.n_phi, n, n)).copy(),
            "not-equivalent", defects, fib_grid)

    kw = {} if max_time is None else {"max_time": max_time}
    UA = transport_on_bundle(metric, pairA, fib_grid, step=step, radius=1.0, **kw)
    UB = transport_on_bundle(metric, pairB, fib_grid, step=step, radius=1.0, **kw)
    W = UA.copy_with(UA.values @ np.linalg.inv(UB.values)
                     - np.eye(n))

    spec = W.modes()
    off = float(np.sum(spec.energy[spec.modes != 0]))
    total = float(np.sum(spec.energy))
    # relative to max(1, |W|): degenerate (near-zero) W stays a pass
    defects["fiber_constancy"] = float(
        np.sqrt(max(off, 0.0)) / max(1.0, np.sqrt(total)))

    u_vals = np.eye(n) + W.mode_coefficient(0)
    rec = GaugeReconstruction(u_vals, "pass", defects, fib_grid)

    # verify the gauge action reproduces pairB on the spatial grid
    gauge = GaugeElement(n, rec.gauge_interp(metric), None)
    moved = _apply_gauge_gridded(metric, pairA, u_vals, fib_grid)
    ref = _pair_on_grid(pairB, fib_grid)
    got = _pair_on_grid(moved, fib_grid)
    keep = fib_grid.r <= 1.0
    keep &= interior_mask(fib_grid, pad_in=2, pad_out=2)
    diff = max(float(np.max(np.abs((a - b)[keep])))
               for a, b in zip(got, ref))
    defects["gauge_apply_error"] = diff

    if defects["fiber_constancy"] > fiber_tol:
        rec.verdict = "fail"
    rec.defects = defects
    return rec


def _pair_on_grid(pair, grid):
    R, P, _ = grid.meshes()
    x1 = (R * np.cos(P))[:, :, 0]
    x2 = (R * np.sin(P))[:, :, 0]
    n = pair.n
    zero = np.zeros(x1.shape + (n, n), complex)
    A1 = zero if pair.A1 is None else np.asarray(pair.A1(x1, x2), complex)
    A2 = zero if pair.A2 is None else np.asarray(pair.A2(x1, x2), complex)
    Phi = zero if pair.Phi is None else np.asarray(pair.Phi(x1, x2), complex)
    return A1, A2, Phi


def _apply_gauge_gridded(metric, pair, u_vals, grid):
    """Gauge action with du taken by spectral/FD derivatives of the grid."""
    n = pair.n
    flat = FiberGrid(grid.n_r, grid.n_phi, 1, r_max=grid.r_max)
    fib = FiberFunction(metric, flat, u_vals[:, :, None])
    from .fiber import _spatial_derivatives
    d1, d2 = _spatial_derivatives(fib)
    d1 = d1[:, :, 0]
    d2 = d2[:, :, 0]
    u = u_vals
    uinv = np.linalg.inv(u)
    A1, A2, Phi = _pair_on_grid(pair, grid)
    nA1 = uinv @ d1 + uinv @ A1 @ u
    nA2 = uinv @ d2 + uinv @ A2 @ u
    nPhi = uinv @ Phi @ u

    class _Gridded:
        pass

    out = _Gridded()
    out.n = n
    out.A1 = lambda x1, x2: nA1
    out.A2 = lambda x1, x2: nA2
    out.Phi = lambda x1, x2: nPhi
    return out


def transport_identity_residual(metric, attenA, attenB, W: FiberFunction,
                                h=None) -> float:
    """Max |XW + A W - W B + (A - B)|, X by 4th-order flow differencing."""
    grid = W.grid
    h = 0.5 * grid.dr if h is None else h
    vmax = metric.max_euclidean_speed()
    keep = (grid.r <= grid.r_max - 2.2 * h * vmax) & (grid.r >= 2 * grid.dr)
    idx = np.nonzero(keep)[0]
    R_, P_, T_ = grid.meshes()
    x1 = (R_ * np.cos(P_))[idx].ravel()
    x2 = (R_ * np.sin(P_))[idx].ravel()
    th = T_[idx].ravel()
    shape = (x1.size,) + W.vshape
    samples = []
    for s in (-2.0 * h, -h, h, 2.0 * h):
        a1, a2, at, _ = rk4_step(metric, x1, x2, th, s)
        samples.append(W.interp(a1, a2, at).reshape(shape))
    XW = (-samples[3] + 8.0 * samples[2] - 8.0 * samples[1]
          + samples[0]) / (12.0 * h)
    Wv = W.values[idx].reshape(shape)
    A = attenA.evaluate(x1, x2, th)
    B = attenB.evaluate(x1, x2, th)
    res = XW + A @ Wv - Wv @ B + (A - B)
    return float(np.max(np.abs(res)))


@dataclass
class PlantedLinearKernel:
    p_field: object
    pair: PairAttenuation
    report: dict

    def source(self):
        """f = Phi p + dp(v) + A(v) p with fiber modes {-1, 0, 1}."""
        pair = self.pair
        metric = pair.metric
        p = self.p_field

        def f(x1, x2, th):
            x1 = np.asarray(x1, float)
            x2 = np.asarray(x2, float)
            th = np.asarray(th, float)
            pv = np.asarray(p(x1, x2), complex)
            d1, d2 = p.grad(x1, x2)
            e = np.exp(-metric.lam(x1, x2))
            c = (e * np.cos(th))[..., None]
            s = (e * np.sin(th))[..., None]
            out = d1 * c + d2 * s
            if pair.Phi is not None:
                out = out + (np.asarray(pair.Phi(x1, x2), complex)
                             @ pv[..., None])[..., 0]
            if pair.A1 is not None:
                out = out + (np.asarray(pair.A1(x1, x2), complex)
                             @ pv[..., None])[..., 0] * c
            if pair.A2 is not None:
                out = out + (np.asarray(pair.A2(x1, x2), complex)
                             @ pv[..., None])[..., 0] * s
            return out

        return f


def plant_linear_kernel(metric, pair, p_field, influx, fib_grid,
                        step=DEFAULT_STEP, max_time=None) -> PlantedLinearKernel:
    """Plant p with p = 0 on the boundary and verify the kernel statements.

    Reports the transform sup-norm of f = Phi p + dp(v) + A(v) p, the
    deviation of the bundle solution from -p, and both holomorphicity
    ratios of the solution.
    """
    kernel = PlantedLinearKernel(p_field, pair, {})
    f = kernel.source()

    vals = attenuated_transform(metric, matrix_action(pair), f, influx,
                                step=step)
    transform_sup = float(np.max(np.abs(vals)))

    # bundle solution u^f: backward solves from the exit per grid point
    from .geometry import integrate_to_exit, integrate_fixed_time
    R_, P_, T_ = fib_grid.meshes()
    x1 = (R_ * np.cos(P_)).ravel()
    x2 = (R_ * np.sin(P_)).ravel()
    th = T_.ravel()
    kw = {} if max_time is None else {"max_time": max_time}
    tau, e1, e2, eth, _, _ = integrate_to_exit(metric, x1, x2, th, 1.0,
                                               step=step, **kw)
    n = pair.n

    def rhs(a, b, c, y):
        phys = c + np.pi
        A = pair.evaluate(a, b, phys)
        fv = np.asarray(f(a, b, phys), complex)
        return (A @ y[..., None])[..., 0] + fv

    y0 = np.zeros((x1.size, n), complex)
    _, _, _, y = integrate_fixed_time(metric, e1, e2, eth + np.pi, tau,
                                      step=step, extra=y0, extra_rhs=rhs)
    uf = FiberFunction(metric, fib_grid,
                       y.reshape(fib_grid.n_r, fib_grid.n_phi,
                                 fib_grid.n_theta, n))
    pv = np.asarray(p_field((R_ * np.cos(P_)), (R_ * np.sin(P_))), complex)
    dev = float(np.max(np.abs(uf.values + pv)))

    kernel.report = {
        "transform_sup": transform_sup,
        "solution_plus_p_sup": dev,
        "holo_ratio": holomorphicity_ratio(uf),
        "antiholo_ratio_conj": holomorphicity_ratio(
            uf.copy_with(np.conj(uf.values))),
    }
    return kernel


def unitarity_criterion(metric, Phi, grid, n=None, step=DEFAULT_STEP) -> dict:
    """Boundary detection of skew-hermitian matrix fields.

    Reports the unitarity defect of the data of (0, Phi), the pointwise
    skewness defect of Phi, and the residual of the conjugation identity
    relating the data of Phi and -Phi*.
    """
    probe = np.asarray(Phi(np.array([0.11]), np.array([-0.07])), complex)
    nn = probe.shape[-1] if n is None else n
    pair = PairAttenuation(metric, nn, Phi=Phi)
    C = scattering_data(metric, pair, grid, step=step)
    CC = np.conj(np.swapaxes(C.values, -1, -2)) @ C.values
    unit_defect = float(np.max(np.abs(CC - np.eye(nn))))

    rr = np.sqrt(np.linspace(0.0, 1.0, 24))
    pp = np.linspace(0.0, 2.0 * np.pi, 48, endpoint=False)
    Rm, Pm = np.meshgrid(rr, pp, indexing="ij")
    vals = np.asarray(Phi(Rm * np.cos(Pm), Rm * np.sin(Pm)), complex)
    skew_defect = float(np.max(np.abs(
        vals + np.conj(np.swapaxes(vals, -1, -2)))))

    def neg_star(x1, x2):
        V = np.asarray(Phi(x1, x2), complex)
        return -np.conj(np.swapaxes(V, -1, -2))

    C2 = scattering_data(metric, PairAttenuation(metric, nn, Phi=neg_star),
                         grid, step=step)
    ident = rel_deviation(np.conj(np.swapaxes(C.values, -1, -2)),
                          np.linalg.inv(C2.values))
    return {
        "unitarity_defect": unit_defect,
        "skewness_defect": skew_defect,
        "conjugation_identity": ident,
        "unitary": unit_defect < 1e-6,
    }


_SUBALGEBRAS = {
    "u(n)": lambda M: np.abs(M + np.conj(np.swapaxes(M, -1, -2))).max(),
    "so(n)": lambda M: max(np.abs(M + np.swapaxes(M, -1, -2)).max(),
                           np.abs(M.imag).max()),
    "sl(n)": lambda M: np.abs(np.trace(M, axis1=-2, axis2=-1)).max(),
}


def subgroup_preservation(metric, pair, tag: str, grid,
                          step=DEFAULT_STEP) -> dict:
    """Scattering values stay in the subgroup matching the pair's algebra.

    tag is one of "u(n)", "so(n)", "sl(n)"; the pair is first checked to
    take values in that subalgebra pointwise.
    """
    if tag not in _SUBALGEBRAS:
        raise ValueError(f"unknown subalgebra tag {tag!r}")
    rr = np.sqrt(np.linspace(0.0, 1.0, 16))
    pp = np.linspace(0.0, 2.0 * np.pi, 24, endpoint=False)
    Rm, Pm = np.meshgrid(rr, pp, indexing="ij")
    x1, x2 = Rm * np.cos(Pm), Rm * np.sin(Pm)
    worst = 0.0
    worst_name = None
    for name, f in (("A1", pair.A1), ("A2", pair.A2), ("Phi", pair.Phi)):
        if f is None:
            continue
        d = float(_SUBALGEBRAS[tag](np.asarray(f(x1, x2), complex)))
        if d > worst:
            worst, worst_name = d, name
    if worst > 1e-10:
        raise ValueError(
            f"pair not in {tag}: component {worst_name} defect {worst:.3e}")

    C = scattering_data(metric, pair, grid, step=step).values
    n = pair.n
    report = {"algebra_defect": worst}
    if tag == "u(n)":
        report["group_defect"] = float(np.max(np.abs(
            np.conj(np.swapaxes(C, -1, -2)) @ C - np.eye(n))))
    elif tag == "so(n)":
        report["group_defect"] = float(np.max(np.abs(
            np.swapaxes(C, -1, -2) @ C - np.eye(n))))
        report["imag_part"] = float(np.max(np.abs(C.imag)))
    else:
        report["group_defect"] = float(np.max(np.abs(np.linalg.det(C) - 1.0)))
    return report
