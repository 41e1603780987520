"""Conformal disc metrics g = e^{2*lam(x)} dx^2 with closed-form derivatives.

Every metric lives on a disc of radius 1 + epsilon (the engulfing margin),
so all flow operations on the closed unit disc have smooth room to spare.
The Gaussian curvature is K = -e^{-2*lam} * Laplacian(lam).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "ConformalMetric",
    "DomainError",
    "euclidean_metric",
    "spherical_metric",
    "hyperbolic_metric",
    "bump_metric",
    "metric_from_json",
]


class DomainError(ValueError):
    """A point was used outside the engulfing disc of the metric."""


@dataclass(frozen=True)
class ConformalMetric:
    """Closed-form conformal factor: lam, its gradient and Laplacian.

    The evaluators accept numpy arrays of any (matching) shape and
    broadcast; `lam` is the python-safe name for the log conformal factor
    (``lambda`` is a keyword).
    """

    family: str
    params: dict
    epsilon: float
    seed: int | None
    _lam: Callable = field(repr=False)
    _grad: Callable = field(repr=False)
    _lap: Callable = field(repr=False)

    def lam(self, x1, x2):
        return self._lam(np.asarray(x1, float), np.asarray(x2, float))

    def grad_lam(self, x1, x2):
        return self._grad(np.asarray(x1, float), np.asarray(x2, float))

    def laplacian_lam(self, x1, x2):
        return self._lap(np.asarray(x1, float), np.asarray(x2, float))

    def curvature(self, x1, x2):
        """Gaussian curvature K = -e^{-2 lam} Laplacian(lam)."""
        return -np.exp(-2.0 * self.lam(x1, x2)) * self.laplacian_lam(x1, x2)

    @property
    def engulfing_radius(self) -> float:
        return 1.0 + self.epsilon

    def check_inside(self, x1, x2, radius: float | None = None) -> None:
        """Raise DomainError when any point leaves the engulfing disc."""
        rad = self.engulfing_radius if radius is None else radius
        r2 = np.asarray(x1) ** 2 + np.asarray(x2) ** 2
        if np.any(r2 > rad * rad * (1.0 + 1e-12)):
            worst = float(np.sqrt(np.max(r2)))
            raise DomainError(
                f"point at radius {worst:.6g} outside disc of radius {rad:.6g}"
            )

    def max_euclidean_speed(self, radius: float | None = None) -> float:
        """Upper bound of e^{-lam} on the disc, from a dense sample."""
        rad = self.engulfing_radius if radius is None else radius
        rr = np.linspace(0.0, rad, 64)
        pp = np.linspace(0.0, 2.0 * np.pi, 128, endpoint=False)
        R, P = np.meshgrid(rr, pp, indexing="ij")
        sp = np.exp(-self.lam(R * np.cos(P), R * np.sin(P)))
        return float(np.max(sp)) * 1.05

    def boundary_geodesic_curvature(self, beta):
        """Geodesic curvature of the unit circle: e^{-lam} (1 + d lam/dr)."""
        beta = np.asarray(beta, float)
        x1, x2 = np.cos(beta), np.sin(beta)
        g1, g2 = self.grad_lam(x1, x2)
        dr = g1 * x1 + g2 * x2
        return np.exp(-self.lam(x1, x2)) * (1.0 + dr)


def euclidean_metric(epsilon: float = 0.1) -> ConformalMetric:
    """Flat metric, lam identically zero."""
    zero = lambda x1, x2: np.zeros(np.broadcast(x1, x2).shape)
    grad = lambda x1, x2: (np.zeros(np.broadcast(x1, x2).shape),
                           np.zeros(np.broadcast(x1, x2).shape))
    return ConformalMetric("euclidean", {}, epsilon, None, zero, grad, zero)


def spherical_metric(scale: float = 0.8, epsilon: float = 0.1) -> ConformalMetric:
    """Round-sphere cap: e^{2 lam} = 4 s^2 / (1 + s^2 r^2)^2, K = +1.

    The unit disc represents a geodesic ball of radius 2*arctan(scale); at
    scale >= 1 the cap reaches a hemisphere and the boundary stops being
    strictly convex.
    """
    s2 = float(scale) ** 2

    def lam(x1, x2):
        return np.log(2.0 * scale) - np.log1p(s2 * (x1 * x1 + x2 * x2))

    def grad(x1, x2):
        d = 1.0 + s2 * (x1 * x1 + x2 * x2)
        return (-2.0 * s2 * x1 / d, -2.0 * s2 * x2 / d)

    def lap(x1, x2):
        d = 1.0 + s2 * (x1 * x1 + x2 * x2)
        return -4.0 * s2 / (d * d)

    return ConformalMetric("spherical", {"scale": float(scale)}, epsilon, None,
                           lam, grad, lap)


def hyperbolic_metric(scale: float = 0.5, epsilon: float = 0.1) -> ConformalMetric:
    """Hyperbolic patch: e^{2 lam} = 4 s^2 / (1 - s^2 r^2)^2, K = -1.

    Needs scale * (1 + epsilon) < 1 so the factor is smooth on the
    engulfing disc.
    """
    if scale * (1.0 + epsilon) >= 1.0:
        raise ValueError("hyperbolic scale too large for the engulfing disc")
    s2 = float(scale) ** 2

    def lam(x1, x2):
        return np.log(2.0 * scale) - np.log1p(-s2 * (x1 * x1 + x2 * x2))

    def grad(x1, x2):
        d = 1.0 - s2 * (x1 * x1 + x2 * x2)
        return (2.0 * s2 * x1 / d, 2.0 * s2 * x2 / d)

    def lap(x1, x2):
        d = 1.0 - s2 * (x1 * x1 + x2 * x2)
        return 4.0 * s2 / (d * d)

    return ConformalMetric("hyperbolic", {"scale": float(scale)}, epsilon, None,
                           lam, grad, lap)


def bump_metric(count: int = 3, amplitude: float = 0.08, width: float = 0.45,
                seed: int = 0, epsilon: float = 0.1) -> ConformalMetric:
    """Sum of Gaussian bumps with seeded coefficients.

    Amplitudes are capped at `amplitude` so the default simplicity checks
    pass; centers stay inside radius 0.6 and widths near `width`.
    """
    rng = np.random.default_rng(seed)
    amps = amplitude * rng.uniform(-1.0, 1.0, size=count)
    angs = rng.uniform(0.0, 2.0 * np.pi, size=count)
    rads = 0.6 * np.sqrt(rng.uniform(0.0, 1.0, size=count))
    cx = rads * np.cos(angs)
    cy = rads * np.sin(angs)
    wid = width * rng.uniform(0.8, 1.2, size=count)

    def lam(x1, x2):
        out = np.zeros(np.broadcast(x1, x2).shape)
        for a, c1, c2, w in zip(amps, cx, cy, wid):
            q = ((x1 - c1) ** 2 + (x2 - c2) ** 2) / (2.0 * w * w)
            out = out + a * np.exp(-q)
        return out

    def grad(x1, x2):
        shape = np.broadcast(x1, x2).shape
        g1 = np.zeros(shape)
        g2 = np.zeros(shape)
        for a, c1, c2, w in zip(amps, cx, cy, wid):
            q = ((x1 - c1) ** 2 + (x2 - c2) ** 2) / (2.0 * w * w)
            e = a * np.exp(-q)
            g1 = g1 - e * (x1 - c1) / (w * w)
            g2 = g2 - e * (x2 - c2) / (w * w)
        return g1, g2

    def lap(x1, x2):
        out = np.zeros(np.broadcast(x1, x2).shape)
        for a, c1, c2, w in zip(amps, cx, cy, wid):
            d2 = (x1 - c1) ** 2 + (x2 - c2) ** 2
            e = a * np.exp(-d2 / (2.0 * w * w))
            out = out + e * (d2 / w ** 4 - 2.0 / (w * w))
        return out

    params = {"count": int(count), "amplitude": float(amplitude),
              "width": float(width)}
    return ConformalMetric("bumps", params, epsilon, int(seed), lam, grad, lap)


def metric_from_json(spec: dict) -> ConformalMetric:
    """Build a metric from {"family":..., "params":..., "epsilon":..., "seed":...}."""
    family = spec.get("family")
    params = dict(spec.get("params", {}))
    epsilon = float(spec.get("epsilon", 0.1))
    seed = spec.get("seed", 0)
    if family == "euclidean":
        return euclidean_metric(epsilon=epsilon)
    if family == "spherical":
        return spherical_metric(scale=float(params.get("scale", 0.8)),
                                epsilon=epsilon)
    if family == "hyperbolic":
        return hyperbolic_metric(scale=float(params.get("scale", 0.5)),
                                 epsilon=epsilon)
    if family == "bumps":
        return bump_metric(count=int(params.get("count", 3)),
                           amplitude=float(params.get("amplitude", 0.08)),
                           width=float(params.get("width", 0.45)),
                           seed=int(seed), epsilon=epsilon)
    raise ValueError(f"unknown metric family: {family!r}")


def eval_metric(metric: ConformalMetric, x) -> tuple:
    """Pointwise (lam, grad_lam, K); raises DomainError outside the disc."""
    x1, x2 = float(x[0]), float(x[1])
    metric.check_inside(x1, x2)
    return (float(metric.lam(x1, x2)),
            tuple(float(g) for g in metric.grad_lam(x1, x2)),
            float(metric.curvature(x1, x2)))
