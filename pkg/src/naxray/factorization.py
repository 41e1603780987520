"""Fiberwise loop factorization R = F U and the induced attenuation map.

F is holomorphic in the fiber angle with holomorphic inverse, U is
unitary with U = Id at theta = 0.  Writing S := R R*, unitarity of U
forces S = F F*, so the loop split reduces to spectral factorization of
the positive Hermitian loop S; the constant right unitary factor is then
pinned by matching R at theta = 0.  The production factorizer is a
Wilson-type Newton iteration on the fiber samples, cross-checked by a
Bauer block-Toeplitz Cholesky read-off grown until its coefficients
stabilize.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fiber import FiberFunction, FiberGrid, interior_mask, project_mode
from .geometry import rk4_step
from .transport import GriddedAttenuation, transport_residual

__all__ = [
    "MatrixLoop",
    "FactorizationResult",
    "FactorizationError",
    "spectral_factor",
    "bauer_spectral_factor",
    "factorize_fiber",
    "factorize_fiber_opposite",
    "factorize",
    "anti_factorize",
    "transform_attenuation",
    "mode_equation_residuals",
]


class FactorizationError(RuntimeError):
    pass


@dataclass
class MatrixLoop:
    """Smooth loop of invertible matrices sampled on a uniform angle grid."""

    samples: np.ndarray  # (n_theta, n, n)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, complex)
        if self.samples.ndim != 3 or self.samples.shape[1] != self.samples.shape[2]:
            raise ValueError("loop samples must have shape (n_theta, n, n)")

    @property
    def n_theta(self):
        return self.samples.shape[0]

    @property
    def n(self):
        return self.samples.shape[1]

    def fourier(self):
        return np.fft.fft(self.samples, axis=0) / self.n_theta

    def min_abs_det(self) -> float:
        return float(np.min(np.abs(np.linalg.det(self.samples))))

    def negative_mode_energy(self) -> float:
        return _neg_energy(self.samples[None])

    def reflected(self) -> "MatrixLoop":
        idx = (-np.arange(self.n_theta)) % self.n_theta
        return MatrixLoop(self.samples[idx])


def _neg_energy(batch) -> float:
    """Energy fraction in modes k < 0 for samples (..., n_theta, n, n)."""
    nt = batch.shape[-3]
    F = np.fft.fft(batch, axis=-3) / nt
    e = np.abs(F) ** 2
    e = e.sum(axis=(-2, -1))
    total = e.sum(axis=-1)
    neg = e[..., nt // 2 + 1:].sum(axis=-1) + 0.5 * e[..., nt // 2]
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(total > 0, neg / np.where(total > 0, total, 1.0), 0.0)
    return float(np.max(ratio))


def _hermitize(S):
    return 0.5 * (S + np.conj(np.swapaxes(S, -1, -2)))


def _lq_normalize(psi):
    """Right-multiply by a constant unitary so the 0th Fourier coefficient
    becomes lower triangular with positive real diagonal."""
    psi0 = psi.mean(axis=1)  # value of the holomorphic extension at z = 0
    Q, Rr = np.linalg.qr(np.conj(np.swapaxes(psi0, -1, -2)))
    d = np.einsum("...ii->...i", Rr)
    ph = d / np.abs(d)
    W = Q * ph[:, None, :]
    return np.einsum("btij,bjk->btik", psi, W)


def _wilson_batch(S, tol=1e-11, max_iter=60, fail_tol=1e-6):
    """Spectral factors psi with psi psi* = S for a batch of positive loops.

    S has shape (B, n_theta, n, n); returns (psi, iterations, residual).
    The iteration is quadratically convergent down to the band-truncation
    floor of S's own fiber spectrum; it stops at `tol` or on stagnation,
    and raises only if the achieved relative residual exceeds `fail_tol`.
    """
    S = _hermitize(np.asarray(S, complex))
    B, nt, n, _ = S.shape
    eigmin = np.min(np.linalg.eigvalsh(S))
    if not eigmin > 0:
        raise FactorizationError(
            f"loop is not positive definite (min eigenvalue {eigmin:.3e})")
    Ident = np.eye(n)
    scale = np.max(np.abs(S))

    S0 = _hermitize(S.mean(axis=1))
    psi = np.repeat(np.linalg.cholesky(S0)[:, None], nt, axis=1)

    resid = np.inf
    best = np.inf
    best_psi = psi
    stale = 0
    it = 0
    for it in range(1, max_iter + 1):
        psi_inv = np.linalg.inv(psi)
        g = np.einsum("btij,btjk,btlk->btil", psi_inv, S, np.conj(psi_inv))
        gp = g + Ident
        beta = np.fft.fft(gp, axis=1) / nt
        beta[:, 0] *= 0.5
        g0 = beta[:, 0].copy()
        beta[:, nt // 2:] = 0.0
        gplus = np.fft.ifft(beta * nt, axis=1)
        corr = np.triu(g0)
        corr = corr - np.conj(np.swapaxes(corr, -1, -2))
        psi = np.einsum("btij,btjk->btik", psi, gplus + corr[:, None])

        recon = np.einsum("btij,btkj->btik", psi, np.conj(psi))
        resid = float(np.max(np.abs(recon - S))) / scale
        if resid < best * 0.5:
            stale = 0
        else:
            stale += 1
        if resid < best:
            best = resid
            best_psi = psi
        if resid < tol or stale >= 8:
            break
    if best > fail_tol:
        raise FactorizationError(
            f"Wilson iteration stalled at relative residual {best:.3e} "
            f"(> {fail_tol:.1e}) after {it} steps; the loop's fiber "
            f"spectrum may exceed the stored band")
    return _lq_normalize(best_psi), it, best


def spectral_factor(S: MatrixLoop, tol: float = 1e-11, max_iter: int = 60,
                    fail_tol: float = 1e-6) -> MatrixLoop:
    """Holomorphic-invertible F0 with F0 F0* = S, canonical normalization."""
    psi, _, _ = _wilson_batch(S.samples[None], tol=tol, max_iter=max_iter,
                              fail_tol=fail_tol)
    return MatrixLoop(psi[0])


def bauer_spectral_factor(S: MatrixLoop, drift_tol: float = 1e-10,
                          n_start: int = 32, n_max: int = 1024) -> MatrixLoop:
    """Spectral factor via Cholesky of the truncated block-Toeplitz matrix.

    The bottom block row of the Cholesky factor converges to the factor
    coefficients; the truncation size grows until they stop drifting.
    """
    samples = S.samples
    nt, n, _ = samples.shape
    Sk = np.fft.fft(_hermitize(samples), axis=0) / nt
    kmax = nt // 2 - 1
    keep = min(kmax + 1, 48)

    prev = None
    N = n_start
    while N <= n_max:
        T = np.zeros((N, N, n, n), complex)
        for d in range(-min(N - 1, kmax), min(N - 1, kmax) + 1):
            i = np.arange(max(0, d), N + min(0, d))
            T[i, i - d] = Sk[d % nt]
        Tm = T.transpose(0, 2, 1, 3).reshape(N * n, N * n)
        L = np.linalg.cholesky(Tm).reshape(N, n, N, n)
        coeffs = np.stack([L[N - 1, :, N - 1 - j, :] for j in range(keep)])
        if prev is not None:
            drift = float(np.max(np.abs(coeffs - prev)))
            if drift < drift_tol:
                theta = np.arange(nt) * 2.0 * np.pi / nt
                phases = np.exp(1j * np.outer(np.arange(keep), theta))
                out = np.einsum("jik,jt->tik", coeffs, phases)
                return MatrixLoop(out)
        prev = coeffs
        N *= 2
    raise FactorizationError(
        f"Bauer read-off still drifting at block size {n_max}")


def _factor_batch(R, tol=1e-11, max_iter=60, q_tol=1e-6, fail_tol=1e-6):
    """Fiberwise factorization for a batch (B, n_theta, n, n)."""
    R = np.asarray(R, complex)
    S = np.einsum("btij,btkj->btik", R, np.conj(R))
    F0, _, resid = _wilson_batch(S, tol=tol, max_iter=max_iter,
                                 fail_tol=fail_tol)
    Q = np.einsum("bij,bjk->bik", np.linalg.inv(F0[:, 0]), R[:, 0])
    unit_defect = np.max(np.abs(
        np.einsum("bij,bkj->bik", Q, np.conj(Q)) - np.eye(R.shape[2])))
    # the alignment can only be as unitary as the achieved spectral split
    if unit_defect > max(q_tol, 50.0 * resid):
        raise FactorizationError(
            f"basepoint alignment is not unitary (defect {unit_defect:.3e})")
    F = np.einsum("btij,bjk->btik", F0, Q)
    U = np.einsum("btij,btjk->btik", np.linalg.inv(F), R)
    return F, U


def _loop_diagnostics(R, F, U):
    nt = R.shape[1]
    n = R.shape[2]
    recon = np.einsum("btij,btjk->btik", F, U) - R
    UU = np.einsum("btji,btjk->btik", np.conj(U), U)
    return {
        "recon_res": float(np.max(np.abs(recon))),
        "holF": _neg_energy(F),
        "holFinv": _neg_energy(np.linalg.inv(F)),
        "unitU": float(np.max(np.abs(UU - np.eye(n)))),
        "norm_res": float(np.max(np.abs(U[:, 0] - np.eye(n)))),
    }


def factorize_fiber(R_loop: MatrixLoop, tol: float = 1e-11,
                    max_iter: int = 60):
    """Split one loop as R = F U; returns (F, U, diagnostics)."""
    F, U = _factor_batch(R_loop.samples[None], tol=tol, max_iter=max_iter)
    diag = _loop_diagnostics(R_loop.samples[None], F, U)
    return MatrixLoop(F[0]), MatrixLoop(U[0]), diag


def factorize_fiber_opposite(R_loop: MatrixLoop, tol: float = 1e-11,
                             max_iter: int = 60):
    """Opposite-order split R = U' F' obtained through the transpose trick."""
    Rt = MatrixLoop(np.swapaxes(R_loop.samples, -1, -2))
    Ft, Ut, _ = factorize_fiber(Rt, tol=tol, max_iter=max_iter)
    Uo = MatrixLoop(np.swapaxes(Ut.samples, -1, -2))
    Fo = MatrixLoop(np.swapaxes(Ft.samples, -1, -2))
    diag = {"recon_res": float(np.max(np.abs(
        np.einsum("tij,tjk->tik", Uo.samples, Fo.samples) - R_loop.samples)))}
    return Uo, Fo, diag


@dataclass
class FactorizationResult:
    F: FiberFunction
    U: FiberFunction
    diagnostics: dict

    def require(self, recon=1e-7, hol=1e-8, unit=1e-8):
        d = self.diagnostics
        if d["recon_res"] > recon or d["holF"] > hol or d["holFinv"] > hol \
                or d["unitU"] > unit:
            raise FactorizationError(f"factorization out of tolerance: {d}")
        return self


def _spike_diagnostic(F_vals, dr):
    """Max fiber-to-fiber jump of F per unit radius (smoothness heuristic)."""
    jump = np.abs(np.diff(F_vals, axis=0)).max(axis=(1, 2, 3, 4))
    return float(np.max(jump) / dr)


def factorize(R: FiberFunction, tol: float = 1e-11, max_iter: int = 60,
              fail_tol: float = 1e-6) -> FactorizationResult:
    """Fiberwise holomorphic/unitary split over every spatial grid point."""
    grid = R.grid
    n = R.vshape[0]
    batch = R.values.reshape(grid.n_r * grid.n_phi, grid.n_theta, n, n)
    try:
        F, U = _factor_batch(batch, tol=tol, max_iter=max_iter,
                             fail_tol=fail_tol)
    except FactorizationError as exc:
        raise FactorizationError(f"fiber factorization failed: {exc}") from exc
    diag = _loop_diagnostics(batch, F, U)
    shape = (grid.n_r, grid.n_phi, grid.n_theta, n, n)
    Ff = FiberFunction(R.metric, grid, F.reshape(shape))
    Uf = FiberFunction(R.metric, grid, U.reshape(shape))
    diag["spike"] = _spike_diagnostic(Ff.values, grid.dr)
    return FactorizationResult(Ff, Uf, diag)


def anti_factorize(R: FiberFunction, tol: float = 1e-11,
                   max_iter: int = 60,
                   fail_tol: float = 1e-6) -> FactorizationResult:
    """Split with the anti-holomorphic factor, via fiber-angle reflection."""
    idx = (-np.arange(R.grid.n_theta)) % R.grid.n_theta
    refl = R.copy_with(R.values[:, :, idx])
    res = factorize(refl, tol=tol, max_iter=max_iter, fail_tol=fail_tol)
    Fb = res.F.values[:, :, idx]
    Ub = res.U.values[:, :, idx]
    diag = dict(res.diagnostics)
    diag["antiholF"] = diag.pop("holF")
    diag["antiholFinv"] = diag.pop("holFinv")
    return FactorizationResult(R.copy_with(Fb), R.copy_with(Ub), diag)


# ---------------------------------------------------------------------------
# the induced attenuation transform


def _flow_stencil(metric, grid, keep_r, h):
    """Bundle states flowed by -2h, -h, +h, +2h (single RK4 steps)."""
    R, P, T = grid.meshes()
    x1 = (R * np.cos(P))[keep_r].ravel()
    x2 = (R * np.sin(P))[keep_r].ravel()
    th = T[keep_r].ravel()
    states = []
    for s in (-2.0 * h, -h, h, 2.0 * h):
        states.append(rk4_step(metric, x1, x2, th, s)[:3])
    return (x1, x2, th), states


def _flow_diff(fib: FiberFunction, states, h, shape):
    sm2, sm1, sp1, sp2 = states
    vm2 = fib.interp(*sm2).reshape(shape)
    vm1 = fib.interp(*sm1).reshape(shape)
    vp1 = fib.interp(*sp1).reshape(shape)
    vp2 = fib.interp(*sp2).reshape(shape)
    return (-vp2 + 8.0 * vp1 - 8.0 * vm1 + vm2) / (12.0 * h)


def transform_attenuation(metric, atten, R: FiberFunction,
                          result: FactorizationResult, fd_step=None,
                          pre_tol: float = 1e-2, cross_tol: float = 1e-2):
    """Skew-hermitian attenuation induced by the factorization of R.

    Route one differentiates the unitary factor along the flow,
    B = -(XU) U^{-1}; route two evaluates F^{-1} X F + F^{-1} A F.  Both
    use central flow differencing with interpolation; their agreement,
    the skew defect and the fiber-mode content beyond {-1, 0, 1} are
    reported.  Returns (GriddedAttenuation over modes {-1,0,1}, report).
    """
    grid = R.grid
    n = R.vshape[0]
    h = 0.5 * grid.dr if fd_step is None else fd_step

    pre_res = transport_residual(metric, atten, R, h=h)
    scale = float(np.max(np.abs(R.values)))
    if pre_res > pre_tol * max(scale, 1.0):
        raise FactorizationError(
            f"input is not an integrating factor (residual {pre_res:.3e})")

    vmax = metric.max_euclidean_speed()
    keep_r = grid.r <= grid.r_max - 2.2 * h * vmax
    nk = int(np.sum(keep_r))
    if nk < 8:
        raise ValueError("grid too small for flow differencing")
    sub_grid = FiberGrid(nk, grid.n_phi, grid.n_theta, r_max=float(grid.r[nk - 1]))

    base, states = _flow_stencil(metric, grid, keep_r, h)
    shape = (nk, grid.n_phi, grid.n_theta, n, n)

    XU = _flow_diff(result.U, states, h, shape)
    U0 = result.U.values[keep_r]
    B1 = -np.einsum("...ij,...jk->...ik", XU, np.linalg.inv(U0))

    XF = _flow_diff(result.F, states, h, shape)
    F0 = result.F.values[keep_r]
    F0inv = np.linalg.inv(F0)
    Agrid = atten.evaluate(*base).reshape(shape)
    B2 = np.einsum("...ij,...jk->...ik", F0inv, XF) \
        + np.einsum("...ij,...jk,...kl->...il", F0inv, Agrid, F0)

    # defect statistics live on the physical bundle (r <= 1); the rings
    # beyond only exist so downstream interpolation reaches the boundary.
    # the absolute floor keeps ratios meaningful when the attenuation is
    # numerically zero (the differencing noise is ~1e-14)
    phys = sub_grid.r <= 1.0 + 1e-12
    bscale = max(float(np.max(np.abs(B1[phys]))), 1e-9)
    route_dev = float(np.max(np.abs((B1 - B2)[phys]))) / bscale
    if route_dev > cross_tol:
        raise FactorizationError(
            f"the two routes for the transformed attenuation disagree "
            f"({route_dev:.3e})")

    skew = float(np.max(np.abs(
        (B1 + np.conj(np.swapaxes(B1, -1, -2)))[phys]))) / bscale

    Bfib = FiberFunction(metric, sub_grid, B1)
    phys_fib = FiberFunction(metric,
                             FiberGrid(int(np.sum(phys)), grid.n_phi,
                                       grid.n_theta,
                                       r_max=float(sub_grid.r[phys][-1])),
                             B1[phys])
    if float(np.max(np.abs(B1[phys]))) < 1e-9:
        outband = 0.0
    else:
        outband = phys_fib.modes().energy_ratio(lambda k: np.abs(k) >= 2)

    tables = {}
    flat_grid = FiberGrid(nk, grid.n_phi, 1, r_max=sub_grid.r_max)
    for k in (-1, 0, 1):
        coeff = Bfib.mode_coefficient(k)[:, :, None]
        tables[k] = FiberFunction(metric, flat_grid, coeff)
    b_atten = GriddedAttenuation(n, tables)

    report = {
        "skew_defect": skew,
        "outband": outband,
        "route_dev": route_dev,
        "pre_residual": pre_res,
        "fd_step": h,
        "sub_r_max": sub_grid.r_max,
    }
    return b_atten, report, Bfib


def transform_conjugation_residual(metric, atten, result: FactorizationResult,
                                   b_atten: GriddedAttenuation, f_src, grid,
                                   step=1e-2) -> float:
    """Residual of conjugating the attenuated transform by the factor.

    Compares the transform of f under the original attenuation with
    F * (transform of F^{-1} f under the induced skew attenuation), the
    factor evaluated at the influx points.
    """
    from .transport import attenuated_transform, matrix_action
    from .geometry import grid_arrays

    n = atten.n
    direct = attenuated_transform(metric, matrix_action(atten), f_src, grid,
                                  step=step)

    F = result.F

    def conj_src(x1, x2, th):
        x1 = np.asarray(x1, float)
        Fv = F.interp(x1.ravel(), np.asarray(x2, float).ravel(),
                      np.asarray(th, float).ravel())
        Fv = Fv.reshape(x1.shape + (n, n))
        fv = np.asarray(f_src(x1, x2, th), complex)
        return np.linalg.solve(Fv, fv[..., None])[..., 0]

    inner = attenuated_transform(metric, matrix_action(b_atten), conj_src,
                                 grid, step=step)
    betas, mus = grid_arrays(grid)
    x1b, x2b = np.cos(betas), np.sin(betas)
    thb = betas + np.pi + mus
    Fb = F.interp(x1b, x2b, thb).reshape(len(grid), n, n)
    rhs = (Fb @ inner[..., None])[..., 0]
    scale = max(float(np.max(np.abs(direct))), 1.0)
    return float(np.max(np.abs(direct - rhs))) / scale


def mode_equation_residuals(metric, atten, F: FiberFunction,
                            b_atten: GriddedAttenuation,
                            det_tol: float = 1e-8, refine: int = 2):
    """Degree -1 and 0 components of X F + A F - F B = 0.

    The two displayed coefficient equations are evaluated on a spatially
    `refine`d resampling of the factor's grid (the ladder operator is a
    4th-order stencil, so the refinement keeps its truncation error well
    below the measured-mode accuracy).  The equations are additionally
    solved for the two lowest modes of B and compared with the supplied
    measured modes.
    """
    from .fiber import eta_minus

    grid = F.grid
    F0c = F.mode_coefficient(0)
    dets = np.abs(np.linalg.det(F0c))
    jmin = np.unravel_index(int(np.argmin(dets)), dets.shape)
    if dets[jmin] < det_tol:
        raise FactorizationError(
            f"zeroth factor coefficient is singular near grid point {jmin} "
            f"(|det| = {dets[jmin]:.3e})")

    bgrid = b_atten.coefficient_field(0).grid
    n = F.vshape[0]
    r_top = min(bgrid.r_max, 1.0)
    n_rf = refine * grid.n_r - 1
    fine = FiberGrid(n_rf, refine * grid.n_phi, 4,
                     r_max=float(grid.r_max))
    Rm, Pm, Tm = fine.meshes()
    x1 = (Rm * np.cos(Pm))[:, :, 0].ravel()
    x2 = (Rm * np.sin(Pm))[:, :, 0].ravel()
    sshape = (fine.n_r, fine.n_phi)

    def mode_on_fine(src: FiberFunction, k: int):
        coeff = src.mode_coefficient(k)
        flat = FiberFunction(metric, FiberGrid(src.grid.n_r, src.grid.n_phi,
                                               1, r_max=src.grid.r_max),
                             coeff[:, :, None])
        vals = flat.interp(x1, x2, np.zeros(x1.size))
        field = vals.reshape(sshape + (n, n))
        phase = np.exp(1j * k * fine.theta)[None, None, :, None, None]
        full = field[:, :, None] * phase
        return FiberFunction(metric, fine, full), field

    f0_fib, F0 = mode_on_fine(F, 0)
    f1_fib, F1 = mode_on_fine(F, 1)
    em0 = eta_minus(f0_fib).mode_coefficient(-1)
    em1 = eta_minus(f1_fib).mode_coefficient(0)

    xs1 = x1.reshape(sshape)
    xs2 = x2.reshape(sshape)
    table = atten.mode_table()
    zero = np.zeros(sshape + (n, n), complex)
    Am1 = np.asarray(table[-1](xs1, xs2), complex) if -1 in table else zero
    A0 = np.asarray(table[0](xs1, xs2), complex) if 0 in table else zero

    def b_on_fine(k):
        fib = b_atten.coefficient_field(k)
        rr = np.hypot(x1, x2)
        # points beyond the measured band are masked out of the statistics;
        # clamp them onto the stored rim so interpolation stays in range
        fac = np.minimum(1.0, fib.grid.r_max / np.maximum(rr, 1e-12))
        vals = fib.interp(x1 * fac, x2 * fac, np.zeros(x1.size))
        return vals.reshape(sshape + (n, n))

    Bm1 = b_on_fine(-1)
    B0 = b_on_fine(0)

    mask = interior_mask(fine, pad_in=2 * refine, pad_out=2 * refine)
    mask &= fine.r <= r_top

    def mm(A, B):
        return np.einsum("...ij,...jk->...ik", A, B)

    eq_m1 = em0 + mm(Am1, F0) - mm(F0, Bm1)
    eq_0 = em1 + mm(Am1, F1) + mm(A0, F0) - mm(F1, Bm1) - mm(F0, B0)

    scale = max(float(np.max(np.abs(F0))), 1.0)
    res_m1 = float(np.max(np.abs(eq_m1[mask]))) / scale
    res_0 = float(np.max(np.abs(eq_0[mask]))) / scale

    F0inv = np.linalg.inv(F0)
    Bm1_s = mm(F0inv, em0 + mm(Am1, F0))
    B0_s = mm(F0inv, em1 + mm(Am1, F1) + mm(A0, F0) - mm(F1, Bm1_s))
    bscale = max(float(np.max(np.abs(Bm1))), float(np.max(np.abs(B0))), 1e-9)
    dev_m1 = float(np.max(np.abs((Bm1_s - Bm1)[mask]))) / bscale
    dev_0 = float(np.max(np.abs((B0_s - B0)[mask]))) / bscale

    return {
        "res_deg_minus1": res_m1,
        "res_deg_0": res_0,
        "solved_dev_minus1": dev_m1,
        "solved_dev_0": dev_0,
        "min_det_F0": float(dets[jmin]),
    }
