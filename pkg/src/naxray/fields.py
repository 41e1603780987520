"""Closed-form matrix/vector fields on the disc with exact derivatives.

These are the building blocks for attenuation pairs, gauge generators and
planted sources.  Everything evaluates on broadcast numpy arrays; the
polynomial families carry their derivatives symbolically so downstream
identity checks never differentiate sampled data.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "smooth_cutoff",
    "PolyMatrixField",
    "PolyVectorField",
    "constant_matrix_field",
    "random_matrix_field",
    "random_vector_field",
]


def smooth_cutoff(r, lo: float = 0.55, hi: float = 0.9, sharp: float = 1.0):
    """C-infinity plateau: 1 for r <= lo, 0 for r >= hi.

    Uses the standard bump quotient f(1-u) / (f(u) + f(1-u)) with
    f(t) = exp(-sharp/t), whose derivatives vanish to all orders at both
    seams, so composed high-order stencils keep their full accuracy.
    """
    r = np.asarray(r, float)
    u = np.clip((r - lo) / (hi - lo), 0.0, 1.0)

    def f(t):
        t = np.maximum(t, 0.0)
        with np.errstate(divide="ignore", over="ignore"):
            val = np.where(t > 0.0, np.exp(-sharp / np.where(t > 0, t, 1.0)), 0.0)
        return val

    fa, fb = f(1.0 - u), f(u)
    return fa / (fa + fb)


class PolyMatrixField:
    """Matrix polynomial sum_{p,q} C[p,q] x1^p x2^q, optional radial cutoff.

    `coeffs` has shape (D+1, D+1, n, n).  The cutoff multiplies the whole
    field by smooth_cutoff(|x|); fields with a cutoff are still smooth on
    any disc and vanish identically (to machine precision) beyond `hi`.
    """

    def __init__(self, coeffs: np.ndarray, cutoff: tuple | None = None):
        self.coeffs = np.asarray(coeffs, complex)
        if self.coeffs.ndim != 4 or self.coeffs.shape[2] != self.coeffs.shape[3]:
            raise ValueError("coeffs must have shape (D+1, D+1, n, n)")
        self.n = self.coeffs.shape[2]
        self.cutoff = cutoff
        # active monomials, flattened for a single matmul per evaluation
        ps, qs = np.nonzero(np.abs(self.coeffs).sum(axis=(2, 3)) > 0)
        self._ps = ps
        self._qs = qs
        self._cmat = self.coeffs[ps, qs].reshape(len(ps), self.n * self.n)

    def __call__(self, x1, x2):
        x1 = np.asarray(x1, float)
        x2 = np.asarray(x2, float)
        shape = np.broadcast(x1, x2).shape
        if len(self._ps) == 0:
            return np.zeros(shape + (self.n, self.n), complex)
        f1 = np.broadcast_to(x1, shape).ravel()
        f2 = np.broadcast_to(x2, shape).ravel()
        dmax = int(max(self._ps.max(), self._qs.max())) + 1
        pow1 = [None] * dmax
        pow2 = [None] * dmax
        pow1[0] = pow2[0] = np.ones_like(f1)
        for d in range(1, dmax):
            pow1[d] = pow1[d - 1] * f1
            pow2[d] = pow2[d - 1] * f2
        out = np.zeros((f1.size, self.n * self.n), complex)
        for t, (p, q) in enumerate(zip(self._ps, self._qs)):
            out += (pow1[p] * pow2[q])[:, None] * self._cmat[t]
        out = out.reshape(shape + (self.n, self.n))
        if self.cutoff is not None:
            chi = smooth_cutoff(np.hypot(x1, x2), *self.cutoff)
            out = out * chi[..., None, None]
        return out

    def map_coeffs(self, fn) -> "PolyMatrixField":
        return PolyMatrixField(fn(self.coeffs), self.cutoff)


class PolyVectorField:
    """Vector polynomial with the boundary factor (1-|x|^2)^power.

    value(x)  = (1-|x|^2)^power * sum C[p,q] x1^p x2^q
    gradients are exact (product rule on the boundary factor).
    """

    def __init__(self, coeffs: np.ndarray, boundary_power: int = 0):
        self.coeffs = np.asarray(coeffs, complex)
        if self.coeffs.ndim != 3:
            raise ValueError("coeffs must have shape (D+1, D+1, n)")
        self.n = self.coeffs.shape[2]
        self.boundary_power = int(boundary_power)

    def _poly(self, x1, x2, dx: int = 0, dy: int = 0):
        shape = np.broadcast(x1, x2).shape
        f1 = np.broadcast_to(np.asarray(x1, float), shape).ravel()
        f2 = np.broadcast_to(np.asarray(x2, float), shape).ravel()
        dmax = self.coeffs.shape[0]
        terms = []
        rows = []
        for p in range(dx, dmax):
            for q in range(dy, dmax):
                c = self.coeffs[p, q]
                if not np.any(c):
                    continue
                fac = (p if dx else 1.0) * (q if dy else 1.0)
                terms.append(fac * f1 ** (p - dx) * f2 ** (q - dy))
                rows.append(c)
        if not terms:
            return np.zeros(shape + (self.n,), complex)
        mono = np.stack(terms, axis=1)
        return (mono @ np.stack(rows)).reshape(shape + (self.n,))

    def __call__(self, x1, x2):
        x1 = np.asarray(x1, float)
        x2 = np.asarray(x2, float)
        val = self._poly(x1, x2)
        if self.boundary_power:
            w = (1.0 - x1 * x1 - x2 * x2) ** self.boundary_power
            val = val * w[..., None]
        return val

    def grad(self, x1, x2):
        x1 = np.asarray(x1, float)
        x2 = np.asarray(x2, float)
        g1 = self._poly(x1, x2, dx=1)
        g2 = self._poly(x1, x2, dy=1)
        if self.boundary_power:
            k = self.boundary_power
            w = 1.0 - x1 * x1 - x2 * x2
            wk = w ** k
            dwk = k * w ** (k - 1)
            base = self._poly(x1, x2)
            g1 = wk[..., None] * g1 - (2.0 * x1 * dwk)[..., None] * base
            g2 = wk[..., None] * g2 - (2.0 * x2 * dwk)[..., None] * base
        return g1, g2


class StackedPolyEval:
    """Joint evaluation of several PolyMatrixFields on one monomial basis.

    Entries may be None; non-polynomial fields are not supported (callers
    fall back to separate evaluation).  One accumulation pass over the
    union of active monomials replaces one pass per field, which matters
    inside Runge-Kutta stage loops.
    """

    def __init__(self, fields_list):
        self.slots = []
        basis = {}
        for f in fields_list:
            if f is None:
                self.slots.append(None)
                continue
            if not isinstance(f, PolyMatrixField):
                raise TypeError("StackedPolyEval needs PolyMatrixFields")
            self.slots.append(f)
            for p, q in zip(f._ps, f._qs):
                basis.setdefault((int(p), int(q)), len(basis))
        self.n = next(f.n for f in self.slots if f is not None)
        self.k = len(fields_list)
        nn = self.n * self.n
        self._terms = sorted(basis, key=basis.get)
        C = np.zeros((len(self._terms), self.k * nn), complex)
        for j, f in enumerate(self.slots):
            if f is None:
                continue
            for t, (p, q) in enumerate(zip(f._ps, f._qs)):
                C[basis[(int(p), int(q))], j * nn:(j + 1) * nn] += f._cmat[t]
        self._C = C
        self._dmax = 1 + max((p for p, _ in self._terms), default=0)
        self._dmay = 1 + max((q for _, q in self._terms), default=0)
        self._cuts = [getattr(f, "cutoff", None) for f in self.slots]

    def __call__(self, f1, f2):
        """f1, f2 flat float arrays -> list of (N, n, n) arrays / None."""
        nn = self.n * self.n
        N = f1.size
        if not self._terms:
            flat = np.zeros((N, self.k * nn), complex)
        else:
            d = max(self._dmax, self._dmay)
            pow1 = [None] * d
            pow2 = [None] * d
            pow1[0] = pow2[0] = np.ones_like(f1)
            for i in range(1, d):
                pow1[i] = pow1[i - 1] * f1
                pow2[i] = pow2[i - 1] * f2
            flat = np.zeros((N, self.k * nn), complex)
            for t, (p, q) in enumerate(self._terms):
                flat += (pow1[p] * pow2[q])[:, None] * self._C[t]
        out = []
        r = None
        for j, f in enumerate(self.slots):
            if f is None:
                out.append(None)
                continue
            block = flat[:, j * nn:(j + 1) * nn].reshape(N, self.n, self.n)
            if self._cuts[j] is not None:
                if r is None:
                    r = np.hypot(f1, f2)
                block = block * smooth_cutoff(r, *self._cuts[j])[:, None, None]
            out.append(block)
        return out


def constant_matrix_field(M) -> PolyMatrixField:
    M = np.asarray(M, complex)
    coeffs = np.zeros((1, 1) + M.shape, complex)
    coeffs[0, 0] = M
    return PolyMatrixField(coeffs)


def _project(M, skew_hermitian=False, real=False, traceless=False):
    if real:
        M = M.real.astype(complex)
    if skew_hermitian:
        M = 0.5 * (M - np.conj(np.swapaxes(M, -1, -2)))
    if traceless:
        n = M.shape[-1]
        tr = np.trace(M, axis1=-2, axis2=-1) / n
        M = M - tr[..., None, None] * np.eye(n)
    return M


def random_matrix_field(n: int, degree: int = 2, scale: float = 0.3,
                        seed: int = 0, skew_hermitian: bool = False,
                        real: bool = False, traceless: bool = False,
                        cutoff: tuple | None = None,
                        decay: float = 1.0) -> PolyMatrixField:
    """Seeded random matrix polynomial; structure flags act per coefficient.

    Monomials are real, so projecting every coefficient into the requested
    subalgebra keeps the whole field inside it pointwise.  `decay` damps
    high-degree coefficients as (1 + p + q)^{-decay}; raise it when
    interpolation-based identity checks want spatially gentle data.
    """
    rng = np.random.default_rng(seed)
    shape = (degree + 1, degree + 1, n, n)
    C = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    if real:
        C = rng.normal(size=shape).astype(complex)
    for p in range(degree + 1):
        for q in range(degree + 1):
            if p + q > degree:
                C[p, q] = 0.0
            else:
                C[p, q] *= scale / (1.0 + p + q) ** decay
    C = _project(C, skew_hermitian, real, traceless)
    return PolyMatrixField(C, cutoff)


def random_vector_field(n: int, degree: int = 2, scale: float = 0.5,
                        seed: int = 0, boundary_power: int = 2,
                        real: bool = False) -> PolyVectorField:
    rng = np.random.default_rng(seed)
    shape = (degree + 1, degree + 1, n)
    C = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    if real:
        C = rng.normal(size=shape).astype(complex)
    for p in range(degree + 1):
        for q in range(degree + 1):
            if p + q > degree:
                C[p, q] = 0.0
            else:
                C[p, q] *= scale / (1.0 + p + q)
    return PolyVectorField(C, boundary_power=boundary_power)
