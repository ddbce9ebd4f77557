"""Special Lipschitz graph domains and their local geometry.

A domain is ``{(x', x3) : x3 > phi(x')}`` for a scalar ``phi`` on the plane.
Everything here is vectorised over leading axes: ``xprime`` has shape
``(..., 2)`` and results keep the leading shape.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import CatalogError, PreconditionError
from .quadrature import DomainPatch

Array = np.ndarray


@dataclass(frozen=True)
class GraphFunction:
    """Scalar graph ``phi`` with optional derivative oracles.

    Missing oracles fall back to second-order central differences with step
    ``fd_step`` (error O(h^2)).  ``lipschitz_K`` is the Lipschitz constant
    on the working region (the whole plane for globally Lipschitz graphs,
    ``|x'| <= region`` for the catalog paraboloids).  ``smooth`` is False
    when the Hessian oracle misses a singular part (kinks, cusps).
    """

    evaluate: Callable[[Array], Array]
    grad_oracle: Callable[[Array], Array] | None = None
    hess_oracle: Callable[[Array], Array] | None = None
    lipschitz_K: float = 0.0
    fd_step: float = 1e-4
    name: str = "custom"
    params: dict = field(default_factory=dict, compare=False)
    smooth: bool = True

    def __call__(self, xprime: Array) -> Array:
        return self.evaluate(np.asarray(xprime, dtype=float))

    def gradient(self, xprime: Array) -> Array:
        xprime = np.asarray(xprime, dtype=float)
        if self.grad_oracle is not None:
            return self.grad_oracle(xprime)
        return self.fd_gradient(xprime, self.fd_step)

    def hessian(self, xprime: Array) -> Array:
        xprime = np.asarray(xprime, dtype=float)
        if self.hess_oracle is not None:
            return self.hess_oracle(xprime)
        return self.fd_hessian(xprime, self.fd_step)

    def fd_gradient(self, xprime: Array, h: float) -> Array:
        out = np.empty(xprime.shape, dtype=float)
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            out[..., i] = (self(xprime + e) - self(xprime - e)) / (2 * h)
        return out

    def fd_hessian(self, xprime: Array, h: float) -> Array:
        out = np.empty(xprime.shape + (2,), dtype=float)
        f0 = self(xprime)
        e = np.eye(2) * h
        for i in range(2):
            out[..., i, i] = (self(xprime + e[i]) - 2 * f0 + self(xprime - e[i])) / h**2
        mixed = (
            self(xprime + e[0] + e[1])
            - self(xprime + e[0] - e[1])
            - self(xprime - e[0] + e[1])
            + self(xprime - e[0] - e[1])
        ) / (4 * h**2)
        out[..., 0, 1] = mixed
        out[..., 1, 0] = mixed
        return out

    def without_oracles(self, fd_step: float | None = None) -> GraphFunction:
        return GraphFunction(
            self.evaluate,
            None,
            None,
            self.lipschitz_K,
            self.fd_step if fd_step is None else fd_step,
            self.name + "-fd",
            dict(self.params),
            self.smooth,
        )


# ---------------------------------------------------------------------------
# catalog


def _norm(xp: Array) -> Array:
    return np.sqrt(np.sum(xp * xp, axis=-1))


def flat() -> GraphFunction:
    return GraphFunction(
        lambda xp: np.zeros(xp.shape[:-1]),
        lambda xp: np.zeros(xp.shape),
        lambda xp: np.zeros(xp.shape + (2,)),
        0.0,
        name="flat",
    )


def linear(a: float = 1.0, b: float = 0.0) -> GraphFunction:
    c = np.array([a, b], dtype=float)
    return GraphFunction(
        lambda xp: xp @ c,
        lambda xp: np.broadcast_to(c, xp.shape).copy(),
        lambda xp: np.zeros(xp.shape + (2,)),
        float(np.hypot(a, b)),
        name="linear",
        params={"a": a, "b": b},
    )


def paraboloid(c: float = 1.0, region: float = 2.0) -> GraphFunction:
    """``c |x'|^2 / 2``; negative ``c`` gives a dome (non-convex domain)."""
    return GraphFunction(
        lambda xp: 0.5 * c * np.sum(xp * xp, axis=-1),
        lambda xp: c * xp,
        lambda xp: np.broadcast_to(c * np.eye(2), xp.shape + (2,)).copy(),
        abs(c) * region,
        name="paraboloid",
        params={"c": c, "region": region},
    )


def wedge(k: float = 1.0) -> GraphFunction:
    """``-k |x1|``: a re-entrant edge along the x2 axis."""

    def grad(xp: Array) -> Array:
        g = np.zeros(xp.shape)
        g[..., 0] = -k * np.sign(xp[..., 0])
        return g

    return GraphFunction(
        lambda xp: -k * np.abs(xp[..., 0]),
        grad,
        lambda xp: np.zeros(xp.shape + (2,)),
        abs(k),
        name="wedge",
        params={"k": k},
        smooth=False,
    )


def cone(c: float = 1.0) -> GraphFunction:
    """``c |x'|``, convex for ``c > 0``."""

    def grad(xp: Array) -> Array:
        r = _norm(xp)[..., None]
        return c * np.divide(xp, r, out=np.zeros(xp.shape), where=r > 0)

    def hess(xp: Array) -> Array:
        r = _norm(xp)
        safe = np.where(r > 0, r, np.inf)
        xh = xp / np.where(r > 0, r, 1.0)[..., None]
        return c * (np.eye(2) - xh[..., :, None] * xh[..., None, :]) / safe[..., None, None]

    return GraphFunction(
        lambda xp: c * _norm(xp), grad, hess, abs(c), name="abs", params={"c": c}, smooth=False
    )


def power(p: float = 1.5, c: float = 1.0, region: float = 2.0) -> GraphFunction:
    """``c |x'|^p`` for ``p >= 1``."""

    def grad(xp: Array) -> Array:
        r = _norm(xp)[..., None]
        fac = c * p * np.power(np.where(r > 0, r, 1.0), p - 2.0)
        return np.where(r > 0, fac * xp, 0.0)

    def hess(xp: Array) -> Array:
        r = _norm(xp)
        rs = np.where(r > 0, r, 1.0)
        xh = xp / rs[..., None]
        outer = xh[..., :, None] * xh[..., None, :]
        val = c * p * rs[..., None, None] ** (p - 2.0) * (np.eye(2) + (p - 2.0) * outer)
        return np.where((r > 0)[..., None, None], val, np.nan if p < 2 else 0.0)

    return GraphFunction(
        lambda xp: c * _norm(xp) ** p,
        grad,
        hess,
        abs(c) * p * region ** (p - 1.0),
        name="power",
        params={"p": p, "c": c, "region": region},
        smooth=p >= 2,
    )


def cusp32(sign: float = -1.0) -> GraphFunction:
    """``sign |x'|^{3/2}``; the default is the cusp domain straightened by
    ``(x', x3) -> (x', x3 + |x'|^{3/2})``."""
    g = power(1.5, sign)
    return GraphFunction(
        g.evaluate, g.grad_oracle, g.hess_oracle, g.lipschitz_K, name="cusp32",
        params={"sign": sign}, smooth=False,
    )


def ripple(a: float = 0.1) -> GraphFunction:
    """``|x'|^2/2 + a sin(2 x1) cos(x2)``; convex for ``|a| < 0.2``."""

    def val(xp: Array) -> Array:
        x1, x2 = xp[..., 0], xp[..., 1]
        return 0.5 * (x1**2 + x2**2) + a * np.sin(2 * x1) * np.cos(x2)

    def grad(xp: Array) -> Array:
        x1, x2 = xp[..., 0], xp[..., 1]
        return np.stack(
            [x1 + 2 * a * np.cos(2 * x1) * np.cos(x2), x2 - a * np.sin(2 * x1) * np.sin(x2)],
            axis=-1,
        )

    def hess(xp: Array) -> Array:
        x1, x2 = xp[..., 0], xp[..., 1]
        h11 = 1 - 4 * a * np.sin(2 * x1) * np.cos(x2)
        h12 = -2 * a * np.cos(2 * x1) * np.sin(x2)
        h22 = 1 - a * np.sin(2 * x1) * np.cos(x2)
        return np.stack([np.stack([h11, h12], -1), np.stack([h12, h22], -1)], -2)

    return GraphFunction(val, grad, hess, 2.0 + 3 * abs(a), name="ripple", params={"a": a})


def saddle() -> GraphFunction:
    return GraphFunction(
        lambda xp: xp[..., 0] * xp[..., 1],
        lambda xp: xp[..., ::-1].copy(),
        lambda xp: np.broadcast_to(np.array([[0.0, 1.0], [1.0, 0.0]]), xp.shape + (2,)).copy(),
        2.0,
        name="saddle",
    )


GRAPH_CATALOG: dict[str, Callable[..., GraphFunction]] = {
    "flat": flat,
    "linear": linear,
    "paraboloid": paraboloid,
    "wedge": wedge,
    "abs": cone,
    "cusp32": cusp32,
    "power": power,
    "ripple": ripple,
    "saddle": saddle,
}


def make_graph(name: str, **params: float) -> GraphFunction:
    try:
        factory = GRAPH_CATALOG[name]
    except KeyError:
        raise CatalogError(
            f"unknown domain {name!r}; valid names: {', '.join(sorted(GRAPH_CATALOG))}"
        ) from None
    return factory(**params)


# ---------------------------------------------------------------------------
# pointwise geometry


def second_difference(phi: GraphFunction, y: Array, z: Array) -> Array:
    """``phi(y+z) + phi(y-z) - 2 phi(y)``."""
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    return phi(y + z) + phi(y - z) - 2.0 * phi(y)


@dataclass(frozen=True)
class ConvexityReport:
    min_ratio: float
    witness_y: tuple[float, float]
    witness_z: tuple[float, float]
    samples: int


def _probe_pairs(rho: float, samples: int, rng: np.random.Generator) -> tuple[Array, Array]:
    # y in B_{rho/2}, |z| in [0.1, 1) * (rho - |y|), so y +- z stay in B_rho
    ry = 0.5 * rho * np.sqrt(rng.random(samples))
    ty = 2 * np.pi * rng.random(samples)
    y = np.column_stack([ry * np.cos(ty), ry * np.sin(ty)])
    rz = (rho - ry) * (0.1 + 0.9 * rng.random(samples)) * (1 - 1e-9)
    tz = 2 * np.pi * rng.random(samples)
    z = np.column_stack([rz * np.cos(tz), rz * np.sin(tz)])
    return y, z


def convexity_probe(phi: GraphFunction, rho: float, samples: int, seed: int = 0) -> ConvexityReport:
    """Minimum of ``second_difference / |z|^2`` over random pairs in ``B_rho``."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    y, z = _probe_pairs(rho, samples, rng)
    ratio = second_difference(phi, y, z) / np.sum(z * z, axis=1)
    k = int(np.argmin(ratio))
    return ConvexityReport(float(ratio[k]), tuple(y[k]), tuple(z[k]), samples)


def unit_normal(phi: GraphFunction, xprime: Array) -> Array:
    """Outward unit normal ``(d1 phi, d2 phi, -1) / sqrt(1 + |grad phi|^2)``."""
    g = phi.gradient(np.asarray(xprime, dtype=float))
    n = np.concatenate([g, -np.ones(g.shape[:-1] + (1,))], axis=-1)
    return n / np.sqrt(1.0 + np.sum(g * g, axis=-1))[..., None]


def area_element(phi: GraphFunction, xprime: Array) -> Array:
    g = phi.gradient(np.asarray(xprime, dtype=float))
    return np.sqrt(1.0 + np.sum(g * g, axis=-1))


def weingarten(phi: GraphFunction, xprime: Array) -> Array:
    """Weingarten matrix of the graph surface, padded to 3x3.

    ``A = D^2 phi / sqrt(1 + |grad phi|^2)`` in the upper-left block, zero
    third row and column.
    """
    xprime = np.asarray(xprime, dtype=float)
    hs = phi.hessian(xprime)
    a = area_element(phi, xprime)
    out = np.zeros(xprime.shape[:-1] + (3, 3))
    out[..., :2, :2] = hs / a[..., None, None]
    return out


def boundary_frame(phi: GraphFunction, xprime: Array) -> Array:
    """Frame matrix ``M`` with ``det M = 1 + |grad phi|^2``.

    Rows one and two of ``M u`` are the tangential components of ``u``
    (inner products with ``(1, 0, d1 phi)`` and ``(0, 1, d2 phi)``); row
    three is ``-<u, N>`` with ``N = (d1 phi, d2 phi, -1)``.
    """
    g = phi.gradient(np.asarray(xprime, dtype=float))
    m = np.zeros(g.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1.0
    m[..., 1, 1] = 1.0
    m[..., 2, 2] = 1.0
    m[..., 0, 2] = g[..., 0]
    m[..., 1, 2] = g[..., 1]
    m[..., 2, 0] = -g[..., 0]
    m[..., 2, 1] = -g[..., 1]
    return m


# ---------------------------------------------------------------------------
# external ball condition


@dataclass(frozen=True)
class EbcResult:
    point: tuple[float, float, float]
    radius: float
    capped: bool
    witness_center: tuple[float, float, float] | None

    def to_json(self) -> str:
        return json.dumps(
            {
                "point": list(self.point),
                "radius": self.radius,
                "capped": self.capped,
                "witness_center": None
                if self.witness_center is None
                else list(self.witness_center),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> EbcResult:
        d = json.loads(text)
        wc = d["witness_center"]
        return cls(tuple(d["point"]), d["radius"], d["capped"], None if wc is None else tuple(wc))


def _cone_directions(axis: Array, half_angle: float, rings: int, azimuths: int) -> Array:
    axis = axis / np.linalg.norm(axis)
    helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    dirs = [axis]
    for k in range(1, rings + 1):
        a = half_angle * k / rings
        for j in range(azimuths):
            b = 2 * np.pi * j / azimuths
            dirs.append(np.cos(a) * axis + np.sin(a) * (np.cos(b) * e1 + np.sin(b) * e2))
    return np.array(dirs)


def _ebc_samples(patch: DomainPatch, p2: Array) -> Array:
    """Domain sample points: volume nodes plus boundary points graded towards p2."""
    nodes, _ = patch.volume_rule()
    radii = np.geomspace(1e-6, 2 * patch.rho, 72)
    ang = (np.arange(64) + 0.5) * (2 * np.pi / 64)
    ring = p2 + np.stack(
        [np.outer(radii, np.cos(ang)).ravel(), np.outer(radii, np.sin(ang)).ravel()], -1
    )
    # include the two axis directions exactly: kinks of catalog graphs sit on them
    axes = p2 + np.concatenate(
        [np.outer(radii, d) for d in ([1, 0], [-1, 0], [0, 1], [0, -1])]
    )
    xp = np.concatenate([ring, axes])
    xp = xp[np.sum(xp * xp, axis=1) < patch.rho**2]
    surf = np.column_stack([xp, patch.graph(xp)])
    return np.concatenate([nodes, surf])


def ebc_radius(
    patch: DomainPatch,
    boundary_point: Array,
    R_max: float = 10.0,
    tol: float = 1e-3,
    half_angle: float = math.radians(60.0),
    rings: int = 4,
    azimuths: int = 8,
) -> EbcResult:
    """Largest touching exterior ball at ``(x', phi(x'))`` within the search family.

    Candidate centres lie at distance ``R`` from the boundary point along
    the outward normal or along directions in a cone around it.  ``R`` is
    found by bisection on ``[0, R_max]``; a radius is accepted when some
    candidate ball contains no domain sample point and its centre is not in
    the domain.  Admissibility is monotone in ``R`` for a fixed direction,
    so the bisection is well posed.
    """
    p2 = np.asarray(boundary_point, dtype=float).reshape(2)
    if R_max <= 0 or tol <= 0:
        raise ValueError("R_max and tol must be positive")
    if float(p2 @ p2) >= patch.rho**2:
        raise PreconditionError("boundary point must satisfy |x'| < rho")
    samples = _ebc_samples(patch, p2)
    if len(samples) == 0:
        raise PreconditionError("degenerate patch: no sample nodes")
    p = np.array([p2[0], p2[1], float(patch.graph(p2[None, :])[0])])
    nu = unit_normal(patch.graph, p2[None, :])[0]
    dirs = _cone_directions(nu, half_angle, rings, azimuths)

    def admissible(R: float) -> Array | None:
        centers = p[None, :] + R * dirs
        inside = patch.contains(centers)
        best = None
        for c, bad in zip(centers, inside):
            if bad:
                continue
            d2 = np.sum((samples - c) ** 2, axis=1)
            if d2.min() >= R * R * (1 - 1e-12):
                best = c
                break
        return best

    w = admissible(R_max)
    if w is not None:
        return EbcResult(tuple(p), float(R_max), True, tuple(w))
    lo, hi = 0.0, float(R_max)
    witness = None
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        c = admissible(mid)
        if c is None:
            hi = mid
        else:
            lo, witness = mid, c
    return EbcResult(tuple(p), lo, False, None if witness is None else tuple(witness))


def ebc_scan(
    patch: DomainPatch, samples: int, R_max: float = 10.0, tol: float = 1e-3, seed: int = 0
) -> list[EbcResult]:
    """``ebc_radius`` at the origin plus ``samples - 1`` random points in ``B_{rho/2}``."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    r = 0.5 * patch.rho * np.sqrt(rng.random(samples - 1))
    t = 2 * np.pi * rng.random(samples - 1)
    pts = np.concatenate([[[0.0, 0.0]], np.column_stack([r * np.cos(t), r * np.sin(t)])])
    return [ebc_radius(patch, q, R_max, tol) for q in pts]


def ebc_infimum(
    patch: DomainPatch, samples: int, R_max: float = 10.0, tol: float = 1e-3, seed: int = 0
) -> float:
    return min(res.radius for res in ebc_scan(patch, samples, R_max, tol, seed))
