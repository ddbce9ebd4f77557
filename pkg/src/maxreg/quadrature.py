"""Quadrature rules on graph-domain patches.

A patch is the part of a graph domain ``x3 > phi(x')`` that lies over the
disk ``|x'| < rho`` and below ``phi(x') + height``.  Volume nodes come from
the map ``(x', t) -> (x', phi(x') + t * height)`` with ``t`` in ``[0, 1]``,
so the bottom face is resolved exactly and no meshing is needed.  The disk
is covered in polar coordinates: composite Gauss-Legendre panels in the
radius (optionally graded towards the axis) and the periodic trapezoid rule
in the angle.  Nodes never sit on the axis ``x' = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable

import numpy as np

from .errors import SelfTestError

if TYPE_CHECKING:
    from .geometry import GraphFunction

# Maximum number of nodes handed to an integrand in one call.
CHUNK = 65536


@dataclass(frozen=True)
class QuadratureSpec:
    """Resolution and rule parameters shared by all integrals.

    ``resolution`` is the number of panels along the radius and along the
    vertical coordinate; the angle gets ``angular_factor * resolution *
    order`` equispaced points.  ``order`` is the number of Gauss points per
    panel.  ``radial_grading`` q > 1 maps ``r = rho * s**q`` which clusters
    nodes near the axis (used for integrands singular on ``x' = 0``).
    """

    resolution: int = 8
    order: int = 2
    fd_step: float = 1e-4
    radial_grading: float = 1.0
    angular_factor: int = 2

    def __post_init__(self) -> None:
        if self.resolution < 2:
            raise ValueError("resolution must be >= 2")
        if self.order < 1:
            raise ValueError("order must be >= 1")
        if self.fd_step <= 0:
            raise ValueError("fd_step must be positive")
        if self.radial_grading < 1.0:
            raise ValueError("radial_grading must be >= 1")

    @property
    def h(self) -> float:
        return 1.0 / self.resolution

    @property
    def n_theta(self) -> int:
        return max(8, self.angular_factor * self.resolution * self.order)

    def refined(self, factor: int = 2) -> QuadratureSpec:
        return QuadratureSpec(
            self.resolution * factor,
            self.order,
            self.fd_step,
            self.radial_grading,
            self.angular_factor,
        )

    def with_resolution(self, resolution: int) -> QuadratureSpec:
        return QuadratureSpec(
            resolution, self.order, self.fd_step, self.radial_grading, self.angular_factor
        )


def gauss_panels(a: float, b: float, panels: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes and weights on ``[a, b]``."""
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def disk_rule(rho: float, quad: QuadratureSpec) -> tuple[np.ndarray, np.ndarray]:
    """Nodes ``(n, 2)`` and weights ``(n,)`` integrating over ``|x'| < rho``."""
    s, ws = gauss_panels(0.0, 1.0, quad.resolution, quad.order)
    q = quad.radial_grading
    r = rho * s**q
    wr = ws * rho * q * s ** (q - 1.0) * r
    n_theta = quad.n_theta
    theta = (np.arange(n_theta) + 0.5) * (2.0 * np.pi / n_theta)
    wt = 2.0 * np.pi / n_theta
    rr, tt = np.meshgrid(r, theta, indexing="ij")
    pts = np.stack([rr * np.cos(tt), rr * np.sin(tt)], axis=-1).reshape(-1, 2)
    weights = np.repeat(wr * wt, n_theta)
    return pts, weights


def integrate_nodes(
    fn: Callable[[np.ndarray], np.ndarray],
    nodes: np.ndarray,
    weights: np.ndarray,
    chunk: int = CHUNK,
) -> complex | float | np.ndarray:
    """Sum ``weights * fn(nodes)`` chunk by chunk.

    ``fn`` returns shape ``(n,)`` or ``(n, k)``; in the second case an array
    of ``k`` integrals is returned.  Partial sums are combined with
    ``math.fsum`` so the result does not depend on the chunk size beyond
    roundoff.
    """
    parts: list[np.ndarray] = []
    for start in range(0, len(weights), chunk):
        sl = slice(start, start + chunk)
        vals = np.asarray(fn(nodes[sl]))
        w = weights[sl] if vals.ndim == 1 else weights[sl, None]
        parts.append(np.sum(vals * w, axis=0))
    stacked = np.array(parts)
    if np.iscomplexobj(stacked):
        re = _fsum_columns(stacked.real)
        im = _fsum_columns(stacked.imag)
        if np.all(im == 0.0):
            return re
        return re + 1j * im
    return _fsum_columns(stacked)


def _fsum_columns(parts: np.ndarray) -> float | np.ndarray:
    if parts.ndim == 1:
        return math.fsum(parts.tolist())
    return np.array([math.fsum(col) for col in parts.T.tolist()])


@dataclass(frozen=True)
class DomainPatch:
    """Graph domain truncated to the cylinder ``|x'| < rho``.

    The patch is ``{(x', x3): |x'| < rho, phi(x') < x3 < phi(x') + height}``.
    Its bottom face lies on the graph; the lateral and top faces are
    artificial and every identity in this package assumes the integrands
    vanish there (fields are cut off inside ``B_rho``).
    """

    graph: GraphFunction
    rho: float = 1.0
    height: float = 2.0
    quad: QuadratureSpec = QuadratureSpec()

    def __post_init__(self) -> None:
        if self.rho <= 0 or self.height <= 0:
            raise ValueError("rho and height must be positive")

    def with_quad(self, quad: QuadratureSpec) -> DomainPatch:
        return DomainPatch(self.graph, self.rho, self.height, quad)

    def with_graph(self, graph: GraphFunction) -> DomainPatch:
        return DomainPatch(graph, self.rho, self.height, self.quad)

    def base_rule(self) -> tuple[np.ndarray, np.ndarray]:
        return disk_rule(self.rho, self.quad)

    def volume_rule(self) -> tuple[np.ndarray, np.ndarray]:
        """Volume nodes ``(n, 3)`` and weights."""
        xp, wxp = self.base_rule()
        t, wt = gauss_panels(0.0, 1.0, self.quad.resolution, self.quad.order)
        base = self.graph(xp)
        x3 = base[:, None] + self.height * t[None, :]
        nodes = np.empty((len(xp), len(t), 3))
        nodes[..., 0] = xp[:, 0, None]
        nodes[..., 1] = xp[:, 1, None]
        nodes[..., 2] = x3
        weights = wxp[:, None] * wt[None, :] * self.height
        return nodes.reshape(-1, 3), weights.ravel()

    def surface_rule(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Bottom-face nodes, area-weighted weights and outward unit normals."""
        xp, wxp = self.base_rule()
        g = self.graph.gradient(xp)
        nodes = np.column_stack([xp, self.graph(xp)])
        area = np.sqrt(1.0 + np.sum(g * g, axis=1))
        normals = np.column_stack([g, -np.ones(len(xp))]) / area[:, None]
        return nodes, wxp * area, normals

    def integrate(self, fn: Callable[[np.ndarray], np.ndarray]) -> complex | float | np.ndarray:
        nodes, weights = self.volume_rule()
        return integrate_nodes(fn, nodes, weights)

    def integrate_surface(
        self, fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    ) -> complex | float | np.ndarray:
        """Integrate ``fn(points, normals)`` over the bottom face with ``dS``."""
        nodes, weights, normals = self.surface_rule()
        packed = np.concatenate([nodes, normals], axis=1)
        return integrate_nodes(lambda z: fn(z[:, :3], z[:, 3:]), packed, weights)

    def volume(self) -> float:
        return float(self.integrate(lambda x: np.ones(len(x))))

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        xp = points[:, :2]
        base = self.graph(xp)
        return (
            (np.sum(xp * xp, axis=1) < self.rho**2)
            & (points[:, 2] > base)
            & (points[:, 2] < base + self.height)
        )

    def self_test(self, levels: int = 2) -> list[float]:
        """Disk-rule errors for ``cos(x1)`` over ``|x'| < rho`` under refinement.

        The exact value is ``2 pi rho J1(rho)``.  Raises ``SelfTestError``
        if doubling the resolution increases the error (beyond roundoff).
        """
        from scipy.special import j1

        exact = 2.0 * np.pi * self.rho * j1(self.rho)
        errs = []
        quad = self.quad
        for _ in range(levels):
            xp, w = disk_rule(self.rho, quad)
            errs.append(abs(float(np.sum(w * np.cos(xp[:, 0]))) - exact))
            quad = quad.refined()
        for a, b in zip(errs, errs[1:]):
            if b > a and b > 1e-13 * abs(exact):
                raise SelfTestError(f"quadrature self-test error grew under refinement: {errs}")
        return errs


def convergence_order(values: list[tuple[float, float]]) -> float:
    """Least-squares slope of ``log err`` against ``log h``.

    ``values`` is a list of ``(h, err)`` pairs with ``h`` strictly
    decreasing and ``err > 0``.
    """
    if len(values) < 2:
        raise ValueError("need at least two (h, err) points")
    h = np.array([v[0] for v in values], dtype=float)
    err = np.array([v[1] for v in values], dtype=float)
    if np.any(err <= 0) or np.any(~np.isfinite(err)):
        raise ValueError("errors must be positive and finite")
    if np.any(np.diff(h) >= 0) or np.any(h <= 0):
        raise ValueError("h must be positive and strictly decreasing")
    slope, _ = np.polyfit(np.log(h), np.log(err), 1)
    return float(slope)
