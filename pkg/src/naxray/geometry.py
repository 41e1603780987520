"""Geodesic flow on the unit circle bundle of a conformal disc metric.

Phase coordinates are (x1, x2, theta) with theta the angle between the
unit tangent vector and d/dx1.  The generator is

    dx1/dt = e^{-lam} cos(theta)
    dx2/dt = e^{-lam} sin(theta)
    dth/dt = e^{-lam} (-lam_x1 sin(theta) + lam_x2 cos(theta))

integrated with a classical fixed-step RK4 scheme.  Boundary crossings are
located by bisection on the step that brackets them.  All heavy routines
are batched over numpy arrays; matrix/vector payloads ride along as an
optional "extra" state with a caller-supplied linear right-hand side.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metrics import ConformalMetric, DomainError

__all__ = [
    "PhasePoint",
    "BoundaryCoordinate",
    "SimplicityReport",
    "FlowEscapeError",
    "NonTrappingError",
    "GlancingError",
    "geodesic_flow",
    "exit_time",
    "scattering_relation",
    "validate_simplicity",
    "influx_grid",
]

DEFAULT_STEP = 1e-3
ROOT_TOL = 1e-10
GLANCING_TOL = 1e-3
TIME_BUDGET = 50.0

TWO_PI = 2.0 * np.pi


class FlowEscapeError(RuntimeError):
    """A trajectory left the engulfing disc during a fixed-time flow."""

    def __init__(self, escape_time: float):
        super().__init__(f"trajectory escaped the engulfing disc near t={escape_time:.6g}")
        self.escape_time = escape_time


class NonTrappingError(RuntimeError):
    """The integration budget ran out before a boundary crossing."""


class GlancingError(ValueError):
    """Boundary direction too close to tangential for a stable solve."""


@dataclass(frozen=True)
class PhasePoint:
    x1: float
    x2: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", float(self.theta) % TWO_PI)

    def reversed(self) -> "PhasePoint":
        return PhasePoint(self.x1, self.x2, self.theta + np.pi)


@dataclass(frozen=True)
class BoundaryCoordinate:
    """(beta, mu): boundary point (cos beta, sin beta) plus direction offset.

    For an influx coordinate the direction angle is beta + pi + mu (mu
    measured from the inward normal, counterclockwise positive); for an
    outflux coordinate it is beta + mu (measured from the outward normal).
    With this convention reversing the outgoing vector of an outflux
    coordinate gives the influx coordinate with the same numbers.
    """

    beta: float
    mu: float

    def __post_init__(self):
        object.__setattr__(self, "beta", float(self.beta) % TWO_PI)
        object.__setattr__(self, "mu", float(self.mu))

    def influx_point(self) -> PhasePoint:
        return PhasePoint(np.cos(self.beta), np.sin(self.beta),
                          self.beta + np.pi + self.mu)

    def outflux_point(self) -> PhasePoint:
        return PhasePoint(np.cos(self.beta), np.sin(self.beta),
                          self.beta + self.mu)


@dataclass
class SimplicityReport:
    non_trapping: bool
    max_exit_time: float
    strictly_convex: bool
    min_boundary_curvature: float
    no_conjugate_points: bool
    min_jacobi: float
    samples_used: dict

    @property
    def simple(self) -> bool:
        return self.non_trapping and self.strictly_convex and self.no_conjugate_points

    def as_dict(self) -> dict:
        return {
            "non_trapping": self.non_trapping,
            "max_exit_time": self.max_exit_time,
            "strictly_convex": self.strictly_convex,
            "min_boundary_curvature": self.min_boundary_curvature,
            "no_conjugate_points": self.no_conjugate_points,
            "min_jacobi": self.min_jacobi,
            "samples_used": self.samples_used,
            "simple": self.simple,
        }


# ---------------------------------------------------------------------------
# batched RK4 core


def _flow_rhs(metric, x1, x2, th):
    lam = metric.lam(x1, x2)
    g1, g2 = metric.grad_lam(x1, x2)
    e = np.exp(-lam)
    c, s = np.cos(th), np.sin(th)
    return e * c, e * s, e * (-g1 * s + g2 * c)


def _expand(h, arr):
    """Broadcast a step-size vector against a trailing-dims payload."""
    h = np.asarray(h)
    if h.ndim == 0 or arr.ndim == h.ndim:
        return h
    return h.reshape(h.shape + (1,) * (arr.ndim - h.ndim))


def rk4_step(metric, x1, x2, th, h, extra=None, extra_rhs=None):
    """One RK4 step of size h (scalar or per-point array).

    `extra` is an optional complex payload of shape (N, ...) advanced
    jointly with the flow; `extra_rhs(x1, x2, th, extra)` returns its
    derivative.  h == 0 entries leave the state untouched, which is how
    finished trajectories are frozen inside batched loops.
    """
    a1, b1, c1 = _flow_rhs(metric, x1, x2, th)
    if extra is not None:
        e1 = extra_rhs(x1, x2, th, extra)
        he = _expand(h, extra)

    hh = 0.5 * h
    a2, b2, c2 = _flow_rhs(metric, x1 + hh * a1, x2 + hh * b1, th + hh * c1)
    if extra is not None:
        e2 = extra_rhs(x1 + hh * a1, x2 + hh * b1, th + hh * c1,
                       extra + 0.5 * he * e1)
    a3, b3, c3 = _flow_rhs(metric, x1 + hh * a2, x2 + hh * b2, th + hh * c2)
    if extra is not None:
        e3 = extra_rhs(x1 + hh * a2, x2 + hh * b2, th + hh * c2,
                       extra + 0.5 * he * e2)
    a4, b4, c4 = _flow_rhs(metric, x1 + h * a3, x2 + h * b3, th + h * c3)
    if extra is not None:
        e4 = extra_rhs(x1 + h * a3, x2 + h * b3, th + h * c3, extra + he * e3)

    x1n = x1 + (h / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    x2n = x2 + (h / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
    thn = th + (h / 6.0) * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
    if extra is None:
        return x1n, x2n, thn, None
    extran = extra + (he / 6.0) * (e1 + 2.0 * e2 + 2.0 * e3 + e4)
    return x1n, x2n, thn, extran


def integrate_fixed_time(metric, x1, x2, th, durations, step=DEFAULT_STEP,
                         extra=None, extra_rhs=None, check_escape=True):
    """Advance a batch for per-point durations (>= 0) at fixed step size.

    Finished trajectories are compacted out of the working arrays; the
    final partial step per point uses an h-vector, so every trajectory
    lands exactly on its requested time.  Results are scatter-assembled
    by index, so chunking or thread counts cannot change the values.
    """
    x1 = np.atleast_1d(np.array(x1, float))
    x2 = np.atleast_1d(np.array(x2, float))
    th = np.atleast_1d(np.array(th, float))
    rem = np.array(np.broadcast_to(durations, x1.shape), float, copy=True)
    if np.any(rem < 0):
        raise ValueError("durations must be non-negative")
    rad2 = metric.engulfing_radius ** 2 * (1.0 + 1e-12)

    out1, out2, outt = x1.copy(), x2.copy(), th.copy()
    out_extra = None if extra is None else np.array(extra, complex, copy=True)

    gidx = np.arange(x1.size)
    a1, a2, at = x1.copy(), x2.copy(), th.copy()
    aextra = None if extra is None else out_extra.copy()
    t = 0.0
    while gidx.size:
        h = np.minimum(step, rem)
        a1, a2, at, aextra = rk4_step(metric, a1, a2, at, h, aextra, extra_rhs)
        rem = rem - h
        t += step
        if check_escape and np.any(a1 * a1 + a2 * a2 > rad2):
            raise FlowEscapeError(t)
        fin = rem <= 0.0
        if fin.any():
            sel = gidx[fin]
            out1[sel] = a1[fin]
            out2[sel] = a2[fin]
            outt[sel] = at[fin]
            if aextra is not None:
                out_extra[sel] = aextra[fin]
            keep = ~fin
            gidx = gidx[keep]
            a1, a2, at, rem = a1[keep], a2[keep], at[keep], rem[keep]
            if aextra is not None:
                aextra = aextra[keep]
    return out1, out2, outt, out_extra


def integrate_to_exit(metric, x1, x2, th, radius, step=DEFAULT_STEP,
                      extra=None, extra_rhs=None, root_tol=ROOT_TOL,
                      max_time=TIME_BUDGET, raise_on_budget=True):
    """Run each trajectory until |x| crosses `radius`, refine by bisection.

    Returns (tau, x1e, x2e, the, extra_at_exit, stuck_mask).  `stuck_mask`
    flags points that never crossed within the budget (only present when
    raise_on_budget is False; otherwise NonTrappingError is raised).
    """
    x1 = np.atleast_1d(np.array(x1, float))
    x2 = np.atleast_1d(np.array(x2, float))
    th = np.atleast_1d(np.array(th, float))
    rad2 = float(radius) ** 2
    N = x1.size

    # anchors: last strictly-inside state per trajectory
    anch1, anch2, ancht = x1.copy(), x2.copy(), th.copy()
    anch_extra = None if extra is None else np.array(extra, complex, copy=True)
    t_anchor = np.zeros(N)
    done = np.zeros(N, bool)

    gidx = np.arange(N)
    a1, a2, at = x1.copy(), x2.copy(), th.copy()
    aextra = None if anch_extra is None else anch_extra.copy()
    t = 0.0
    max_steps = int(np.ceil(max_time / step)) + 1
    for _ in range(max_steps):
        if gidx.size == 0:
            break
        n1, n2, nt, nextra = rk4_step(metric, a1, a2, at, step,
                                      aextra, extra_rhs)
        out = n1 * n1 + n2 * n2 > rad2
        if out.any():
            sel = gidx[out]
            done[sel] = True
            anch1[sel] = a1[out]
            anch2[sel] = a2[out]
            ancht[sel] = at[out]
            t_anchor[sel] = t
            if aextra is not None:
                anch_extra[sel] = aextra[out]
            keep = ~out
            gidx = gidx[keep]
            a1, a2, at = n1[keep], n2[keep], nt[keep]
            if aextra is not None:
                aextra = nextra[keep]
        else:
            a1, a2, at, aextra = n1, n2, nt, nextra
        t += step

    if gidx.size:
        if raise_on_budget:
            raise NonTrappingError(
                f"{gidx.size} trajectories did not exit radius {radius} "
                f"within t={max_time}")
        anch1[gidx], anch2[gidx], ancht[gidx] = a1, a2, at
        t_anchor[gidx] = t
        if aextra is not None:
            anch_extra[gidx] = aextra
    stuck = ~done

    # bisection on the bracketing step: dt in [0, step], flow only
    lo = np.zeros(N)
    hi = np.full(N, step)
    n_bis = max(1, int(np.ceil(np.log2(step / root_tol))))
    for _ in range(n_bis):
        mid = 0.5 * (lo + hi)
        m1, m2, _, _ = rk4_step(metric, anch1, anch2, ancht, mid)
        out = m1 * m1 + m2 * m2 > rad2
        lo = np.where(out, lo, mid)
        hi = np.where(out, mid, hi)
    dt = 0.5 * (lo + hi)
    dt = np.where(stuck, 0.0, dt)
    e1, e2, et, eextra = rk4_step(metric, anch1, anch2, ancht, dt,
                                  anch_extra, extra_rhs)
    tau = t_anchor + dt
    return tau, e1, e2, et, eextra, stuck


# ---------------------------------------------------------------------------
# public single-point operations


def geodesic_flow(metric: ConformalMetric, p: PhasePoint, t: float,
                  step: float = DEFAULT_STEP) -> PhasePoint:
    """Flow p for time t (either sign); errors if the path escapes."""
    metric.check_inside(p.x1, p.x2)
    x1 = np.array([p.x1])
    x2 = np.array([p.x2])
    th = np.array([p.theta if t >= 0 else p.theta + np.pi])
    x1, x2, th, _ = integrate_fixed_time(metric, x1, x2, th, abs(t), step=step)
    ang = th[0] if t >= 0 else th[0] + np.pi
    return PhasePoint(float(x1[0]), float(x2[0]), float(ang))


def exit_time(metric: ConformalMetric, p: PhasePoint, radius: float = 1.0,
              step: float = DEFAULT_STEP, root_tol: float = ROOT_TOL,
              max_time: float = TIME_BUDGET) -> float:
    """Smallest t >= 0 with |x(phi_t(p))| = radius."""
    r0 = np.hypot(p.x1, p.x2)
    if r0 > radius * (1.0 + 1e-12):
        raise DomainError(f"start radius {r0:.6g} already beyond {radius}")
    tau, _, _, _, _, _ = integrate_to_exit(
        metric, [p.x1], [p.x2], [p.theta], radius, step=step,
        root_tol=root_tol, max_time=max_time)
    return float(tau[0])


def _outflux_coordinate(x1, x2, th):
    beta = np.arctan2(x2, x1) % TWO_PI
    mu = th - beta
    mu = (mu + np.pi) % TWO_PI - np.pi
    return beta, mu


def scattering_relation(metric: ConformalMetric, b: BoundaryCoordinate,
                        step: float = DEFAULT_STEP,
                        root_tol: float = ROOT_TOL) -> BoundaryCoordinate:
    """Outflux coordinate reached by the influx geodesic of b."""
    if abs(abs(b.mu) - np.pi / 2.0) < GLANCING_TOL:
        raise GlancingError(f"mu={b.mu:.6g} within {GLANCING_TOL} of glancing")
    p = b.influx_point()
    _, e1, e2, et, _, _ = integrate_to_exit(
        metric, [p.x1], [p.x2], [p.theta], 1.0, step=step, root_tol=root_tol)
    beta, mu = _outflux_coordinate(e1[0], e2[0], et[0])
    return BoundaryCoordinate(float(beta), float(mu))


def scattering_relation_batch(metric, betas, mus, step=DEFAULT_STEP,
                              root_tol=ROOT_TOL):
    betas = np.asarray(betas, float)
    mus = np.asarray(mus, float)
    x1, x2 = np.cos(betas), np.sin(betas)
    th = betas + np.pi + mus
    _, e1, e2, et, _, _ = integrate_to_exit(metric, x1, x2, th, 1.0,
                                            step=step, root_tol=root_tol)
    return _outflux_coordinate(e1, e2, et)


def influx_grid(metric: ConformalMetric, n_beta: int, n_mu: int,
                glancing_margin: float) -> list[BoundaryCoordinate]:
    """Beta-major tensor grid on the influx boundary, margins off glancing."""
    if glancing_margin <= 0:
        raise ValueError("glancing_margin must be positive")
    if n_beta < 1 or n_mu < 1:
        raise ValueError("grid counts must be >= 1")
    betas = np.arange(n_beta) * TWO_PI / n_beta
    lo, hi = -np.pi / 2.0 + glancing_margin, np.pi / 2.0 - glancing_margin
    if n_mu == 1:
        mus = np.array([0.5 * (lo + hi)])
    else:
        mus = np.linspace(lo, hi, n_mu)
    return [BoundaryCoordinate(b, m) for b in betas for m in mus]


def grid_arrays(grid: list[BoundaryCoordinate]):
    betas = np.array([b.beta for b in grid])
    mus = np.array([b.mu for b in grid])
    return betas, mus


def validate_simplicity(metric: ConformalMetric, n_beta: int = 24,
                        n_mu: int = 12, n_boundary: int = 256,
                        glancing_margin: float = 0.1,
                        step: float = DEFAULT_STEP,
                        max_time: float = TIME_BUDGET) -> SimplicityReport:
    """Sampled non-trapping, convexity and conjugate-point checks.

    The Jacobi scalar b with b(0)=0, b'(0)=1 solves b'' + K b = 0 along
    each sampled geodesic; a conjugate point shows up as b touching zero
    again before exit.
    """
    grid = influx_grid(metric, n_beta, n_mu, glancing_margin)
    betas, mus = grid_arrays(grid)
    x1 = np.cos(betas)
    x2 = np.sin(betas)
    th = betas + np.pi + mus

    def jacobi_rhs(px, py, pth, extra):
        K = metric.curvature(px, py)
        out = np.empty_like(extra)
        out[:, 0] = extra[:, 1]
        out[:, 1] = -K * extra[:, 0]
        return out

    extra0 = np.zeros((len(grid), 2), complex)
    extra0[:, 1] = 1.0

    # manual stepping so the running minimum of b is observed along the way
    cur1, cur2, curt = x1.copy(), x2.copy(), th.copy()
    extra = extra0
    done = np.zeros(len(grid), bool)
    t_anchor = np.zeros(len(grid))
    min_b = np.full(len(grid), np.inf)
    max_steps = int(np.ceil(max_time / step)) + 1
    for k in range(max_steps):
        if done.all():
            break
        n1, n2, nt, nextra = rk4_step(metric, cur1, cur2, curt, step,
                                      extra, jacobi_rhs)
        outside = n1 * n1 + n2 * n2 > 1.0
        newly = ~done & outside
        keep = done | newly
        cur1 = np.where(keep, cur1, n1)
        cur2 = np.where(keep, cur2, n2)
        curt = np.where(keep, curt, nt)
        extra = np.where(keep[:, None], extra, nextra)
        t_anchor = np.where(keep, t_anchor, t_anchor + step)
        active_b = np.where(done, np.inf, extra[:, 0].real)
        if k > 0:
            min_b = np.minimum(min_b, active_b)
        done |= newly

    non_trapping = bool(done.all())
    max_tau = float(np.max(t_anchor) + step) if non_trapping else float("inf")
    end_b = np.where(done, extra[:, 0].real, np.inf)
    min_b = np.minimum(min_b, end_b)
    no_conj = non_trapping and float(np.min(min_b)) > 0.0
    # reported modulus is the endpoint value b(tau); the boolean already
    # covers any interior sign change
    min_jacobi = float(np.min(end_b))

    bb = np.arange(n_boundary) * TWO_PI / n_boundary
    kg = metric.boundary_geodesic_curvature(bb)
    min_kg = float(np.min(kg))

    return SimplicityReport(
        non_trapping=non_trapping,
        max_exit_time=max_tau,
        strictly_convex=min_kg > 0.0,
        min_boundary_curvature=min_kg,
        no_conjugate_points=no_conj,
        min_jacobi=min_jacobi,
        samples_used={"geodesics": len(grid), "boundary": n_boundary},
    )
