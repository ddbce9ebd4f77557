"""Shifted mollification of graph functions.

For a kernel ``omega`` supported in a disk and a constant ``M``::

    phi_alpha(x') = M alpha + int omega(z) phi(x' - alpha z) dz

gives graphs that increase strictly with ``alpha``, keep the Lipschitz
constant of ``phi`` and stay convex when ``phi`` is.  The integral is
replaced by a fixed polar rule centred on the kernel whose weights are
normalised to sum to one, so ``phi_alpha`` is an exact convex combination
of values of ``phi``.  The Lipschitz, monotonicity and convexity checks
then hold for the discrete family without quadrature slack, with
``first_abs_moment`` taken from the same rule.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .errors import PreconditionError, SelfTestError
from .geometry import GraphFunction, _probe_pairs, second_difference
from .quadrature import DomainPatch, gauss_panels

Array = np.ndarray


def _bump_profile_integral(power: int) -> float:
    """``2 pi int_0^1 r^(1+power) exp(-1/(1-r^2)) dr`` by adaptive quadrature."""
    from scipy.integrate import quad

    val, _ = quad(lambda r: r ** (1 + power) * math.exp(-1.0 / (1.0 - r * r)), 0.0, 1.0,
                  epsabs=1e-15, epsrel=1e-13, limit=200)
    return 2.0 * math.pi * val


@dataclass(frozen=True)
class MollifierKernel:
    """Radial bump ``exp(-1 / (1 - |z/a|^2))`` on the disk of radius ``a``.

    ``evaluate`` uses the exact normalising constant; the discrete rule
    (``panels * order`` Gauss points in the radius, ``n_theta`` equispaced
    angles) is symmetric under ``z -> -z``.
    """

    support_radius: float = 1.0
    panels: int = 16
    order: int = 6
    n_theta: int = 64

    def __post_init__(self) -> None:
        if self.support_radius <= 0:
            raise ValueError("support_radius must be positive")
        if self.n_theta % 2:
            raise ValueError("n_theta must be even so the rule is symmetric")

    @cached_property
    def _norm1(self) -> float:
        return _bump_profile_integral(0)

    def _unit(self, z: Array) -> tuple[Array, Array, Array]:
        u = np.asarray(z, dtype=float) / self.support_radius
        g = 1.0 - np.sum(u * u, axis=-1)
        inside = g > 0
        gs = np.where(inside, g, 1.0)
        w = np.where(inside, np.exp(-1.0 / gs), 0.0) / self._norm1
        return u, gs, w

    def evaluate(self, z: Array) -> Array:
        _, _, w = self._unit(z)
        return w / self.support_radius**2

    def gradient(self, z: Array) -> Array:
        u, g, w = self._unit(z)
        return (-2.0 * w / g**2)[..., None] * u / self.support_radius**3

    def hessian(self, z: Array) -> Array:
        u, g, w = self._unit(z)
        uu = u[..., :, None] * u[..., None, :]
        g = g[..., None, None]
        h = w[..., None, None] * (4 * uu / g**4 - 2 * np.eye(2) / g**2 - 8 * uu / g**3)
        return h / self.support_radius**4

    @cached_property
    def _rule(self) -> tuple[Array, Array]:
        s, ws = gauss_panels(0.0, 1.0, self.panels, self.order)
        r = self.support_radius * s
        wr = ws * self.support_radius * r
        theta = (np.arange(self.n_theta) + 0.5) * (2 * np.pi / self.n_theta)
        rr, tt = np.meshgrid(r, theta, indexing="ij")
        nodes = np.stack([rr * np.cos(tt), rr * np.sin(tt)], -1).reshape(-1, 2)
        weights = np.repeat(wr * (2 * np.pi / self.n_theta), self.n_theta)
        return nodes, weights

    @cached_property
    def mass(self) -> float:
        """Quadrature of the kernel before discrete normalisation."""
        nodes, q = self._rule
        return math.fsum((q * self.evaluate(nodes)).tolist())

    @cached_property
    def nodes(self) -> Array:
        return self._rule[0]

    @cached_property
    def weights(self) -> Array:
        """Normalised discrete kernel weights (sum to one)."""
        nodes, q = self._rule
        return q * self.evaluate(nodes) / self.mass

    @cached_property
    def gradient_weights(self) -> Array:
        nodes, q = self._rule
        return q[:, None] * self.gradient(nodes) / self.mass

    @cached_property
    def hessian_weights(self) -> Array:
        nodes, q = self._rule
        return q[:, None, None] * self.hessian(nodes) / self.mass

    @cached_property
    def first_abs_moment(self) -> float:
        """``sum w_k |z_k|`` for the normalised discrete weights."""
        return math.fsum((self.weights * np.linalg.norm(self.nodes, axis=1)).tolist())

    def radial_first_moment(self) -> float:
        """Independent value of ``int omega |z| dz`` from a 1D radial integral."""
        return self.support_radius * _bump_profile_integral(1) / self._norm1

    def self_test(self, tol: float = 1e-6) -> None:
        if abs(self.mass - 1.0) > tol:
            raise SelfTestError(f"kernel mass {self.mass!r} differs from 1 by more than {tol}")


class ShiftConstant(NamedTuple):
    value: float
    free: bool  # True when K = 0 and any positive shift is admissible


def shift_constant(K: float, kernel: MollifierKernel, margin: float) -> ShiftConstant:
    """``K * first_abs_moment * (1 + margin)``."""
    if margin <= 0:
        raise ValueError("margin must be positive")
    if K < 0:
        raise ValueError("K must be nonnegative")
    return ShiftConstant(K * kernel.first_abs_moment * (1.0 + margin), K == 0)


@dataclass(frozen=True)
class SmoothingFamily:
    """The family ``phi_alpha`` for a base graph, kernel and shift ``M``."""

    base: GraphFunction
    kernel: MollifierKernel
    shift_M: float
    alphas: tuple[float, ...] = (0.4, 0.2, 0.1, 0.05)

    def __post_init__(self) -> None:
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        floor = self.base.lipschitz_K * self.kernel.first_abs_moment
        if not self.shift_M > floor:
            raise PreconditionError(
                f"shift M={self.shift_M} must exceed K * first_abs_moment = {floor}"
            )
        for a in self.alphas:
            if not 0 < a < 1:
                raise PreconditionError("alphas must lie in (0, 1)")
        object.__setattr__(self, "_memo", OrderedDict())

    def _cached(self, kind: str, alpha: float, xprime: Array, fn) -> Array:
        # quadrature rules hand the same node arrays over and over
        xprime = np.ascontiguousarray(xprime, dtype=float)
        key = (kind, alpha, xprime.shape, xprime.tobytes())
        memo = self._memo
        if key in memo:
            memo.move_to_end(key)
            return memo[key].copy()
        out = fn(alpha, xprime)
        memo[key] = out
        if len(memo) > 64:
            memo.popitem(last=False)
        return out.copy()

    @classmethod
    def build(
        cls,
        base: GraphFunction,
        kernel: MollifierKernel | None = None,
        alphas: tuple[float, ...] = (0.4, 0.2, 0.1, 0.05),
        margin: float = 0.1,
        free_shift: float = 0.1,
    ) -> SmoothingFamily:
        kernel = kernel or MollifierKernel()
        m = shift_constant(base.lipschitz_K, kernel, margin)
        return cls(base, kernel, free_shift if m.free else m.value, alphas)

    @property
    def margin(self) -> float:
        """Relative excess of ``M`` over ``K * first_abs_moment``."""
        floor = self.base.lipschitz_K * self.kernel.first_abs_moment
        return math.inf if floor == 0 else self.shift_M / floor - 1.0

    @property
    def rate_floor(self) -> float:
        """Lower bound ``M - K m1`` for the derivative in ``alpha``."""
        return self.shift_M - self.base.lipschitz_K * self.kernel.first_abs_moment

    @property
    def rate_ceiling(self) -> float:
        """Upper bound ``M + K m1`` for ``(phi_alpha - phi) / alpha``."""
        return self.shift_M + self.base.lipschitz_K * self.kernel.first_abs_moment

    def _shifted(self, alpha: float, xprime: Array) -> Array:
        xp = np.asarray(xprime, dtype=float).reshape(-1, 2)
        return xp[:, None, :] - alpha * self.kernel.nodes[None, :, :]

    def value(self, alpha: float, xprime: Array) -> Array:
        xprime = np.asarray(xprime, dtype=float)
        pts = self._shifted(alpha, xprime)
        vals = self.base(pts) @ self.kernel.weights
        return (self.shift_M * alpha + vals).reshape(xprime.shape[:-1])

    def gradient(self, alpha: float, xprime: Array) -> Array:
        """Gradient of ``phi_alpha``.

        With a base gradient oracle this is ``sum w_k grad phi(x' - alpha
        z_k)``, the exact derivative of the discrete family; otherwise the
        kernel is differentiated instead.
        """
        xprime = np.asarray(xprime, dtype=float)
        pts = self._shifted(alpha, xprime)
        if self.base.grad_oracle is not None:
            out = np.einsum("nkj,k->nj", self.base.gradient(pts), self.kernel.weights)
        else:
            out = self.base(pts) @ self.kernel.gradient_weights / alpha
        return out.reshape(xprime.shape)

    def hessian(self, alpha: float, xprime: Array) -> Array:
        """Hessian of ``phi_alpha``.

        Smooth bases use their Hessian oracle under the kernel.  Bases with
        kinks put one derivative on the kernel and one on the base
        gradient; with no oracles both derivatives go on the kernel.
        """
        xprime = np.asarray(xprime, dtype=float)
        pts = self._shifted(alpha, xprime)
        k = self.kernel
        if self.base.smooth and self.base.hess_oracle is not None:
            h = np.einsum("nkij,k->nij", self.base.hessian(pts), k.weights)
        elif self.base.grad_oracle is not None:
            h = np.einsum("ki,nkj->nij", k.gradient_weights, self.base.gradient(pts)) / alpha
            h = 0.5 * (h + np.swapaxes(h, 1, 2))
        else:
            h = np.einsum("nk,kij->nij", self.base(pts), k.hessian_weights) / alpha**2
        return h.reshape(xprime.shape + (2,))

    def graph(self, alpha: float) -> GraphFunction:
        if not 0 < alpha < 1:
            raise PreconditionError("alpha must lie in (0, 1)")
        return GraphFunction(
            lambda xp: self._cached("value", alpha, xp, self.value),
            lambda xp: self._cached("gradient", alpha, xp, self.gradient),
            lambda xp: self._cached("hessian", alpha, xp, self.hessian),
            self.base.lipschitz_K,
            self.base.fd_step,
            name=f"{self.base.name}-mollified",
            params={**self.base.params, "alpha": alpha, "M": self.shift_M},
        )


def mollify_phi(family: SmoothingFamily, alpha: float, xprime: Array) -> Array:
    if not 0 < alpha < 1:
        raise PreconditionError("alpha must lie in (0, 1)")
    family.kernel.self_test()
    return family.value(alpha, xprime)


# ---------------------------------------------------------------------------
# property checks


@dataclass(frozen=True)
class CheckRow:
    alpha: float
    check_name: str
    worst_value: float
    passed: bool
    witness: tuple[float, ...] = ()


@dataclass
class FamilyReport:
    rows: list[CheckRow] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def failures(self) -> list[CheckRow]:
        return [r for r in self.rows if not r.passed]

    def check(self, name: str) -> list[CheckRow]:
        return [r for r in self.rows if r.check_name == name]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["alpha", "check_name", "worst_value", "pass"])
        for r in self.rows:
            w.writerow([repr(r.alpha), r.check_name, repr(r.worst_value), str(r.passed).lower()])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(
            {
                "passed": self.passed,
                "failures": [
                    {"alpha": r.alpha, "check": r.check_name, "worst_value": r.worst_value,
                     "witness": list(r.witness)}
                    for r in self.failures()
                ],
            },
            sort_keys=True,
        )


def _disk_points(rng: np.random.Generator, n: int, radius: float) -> Array:
    r = radius * np.sqrt(rng.random(n))
    t = 2 * np.pi * rng.random(n)
    return np.column_stack([r * np.cos(t), r * np.sin(t)])


def family_checks(
    family: SmoothingFamily,
    samples: int = 200,
    seed: int = 0,
    rho: float = 1.0,
    lipschitz_tol: float = 1e-8,
    rate_tol: float = 1e-8,
    convexity_tol: float = 1e-10,
) -> FamilyReport:
    """Monotonicity, Lipschitz bound, convexity and nesting of the family.

    Sample points are the origin plus random points of ``B_rho``.  The
    monotonicity row for the smallest ``alpha`` compares against ``phi``
    itself (the ``alpha -> 0`` member).
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    alphas = sorted(family.alphas)
    if list(family.alphas) != alphas and list(family.alphas) != alphas[::-1]:
        raise PreconditionError("alphas must be sorted")
    family.kernel.self_test()
    rng = np.random.default_rng(seed)
    pts = np.concatenate([[[0.0, 0.0]], _disk_points(rng, samples - 1, rho)])
    a = _disk_points(rng, samples, rho)
    b = _disk_points(rng, samples, rho)
    y, z = _probe_pairs(rho, samples, rng)
    K = family.base.lipschitz_K
    report = FamilyReport()
    prev_alpha, prev_vals = 0.0, family.base(pts)
    base_vals = prev_vals
    for alpha in alphas:
        g = family.graph(alpha)
        vals = g(pts)
        quot = (vals - prev_vals) / (alpha - prev_alpha)
        k = int(np.argmin(quot))
        ok = quot[k] >= family.rate_floor - rate_tol and quot[k] > 0
        report.rows.append(CheckRow(alpha, "monotonicity", float(quot[k]), bool(ok), tuple(pts[k])))

        dist = np.linalg.norm(a - b, axis=1)
        lip = np.abs(g(a) - g(b)) / np.where(dist > 0, dist, np.inf)
        k = int(np.argmax(lip))
        report.rows.append(
            CheckRow(alpha, "lipschitz", float(lip[k]), bool(lip[k] <= K + lipschitz_tol),
                     tuple(a[k]) + tuple(b[k]))
        )

        ratio = second_difference(g, y, z) / np.sum(z * z, axis=1)
        k = int(np.argmin(ratio))
        report.rows.append(
            CheckRow(alpha, "convexity", float(ratio[k]), bool(ratio[k] >= -convexity_tol),
                     tuple(y[k]) + tuple(z[k]))
        )

        gap = np.minimum(vals - base_vals, vals - prev_vals)
        k = int(np.argmin(gap))
        report.rows.append(CheckRow(alpha, "nesting", float(gap[k]), bool(gap[k] > 0), tuple(pts[k])))
        prev_alpha, prev_vals = alpha, vals
    return report


@dataclass(frozen=True)
class UnionSlope:
    slope: float
    predicted: float
    gaps: tuple[float, ...]


def union_slope(family: SmoothingFamily, samples: int = 200, seed: int = 0, rho: float = 1.0) -> UnionSlope:
    """Fit ``max_x (phi_alpha - phi)`` against ``alpha`` through the origin.

    The bound ``phi_alpha - phi <= (M + K m1) alpha`` makes the maximal gap
    vanish linearly; the fitted slope is compared with ``M + K m1``.
    """
    rng = np.random.default_rng(seed)
    pts = np.concatenate([[[0.0, 0.0]], _disk_points(rng, samples - 1, rho)])
    base = family.base(pts)
    al = np.array(sorted(family.alphas))
    gaps = np.array([np.max(family.value(a, pts) - base) for a in al])
    slope = float(al @ gaps / (al @ al))
    return UnionSlope(slope, family.rate_ceiling, tuple(float(v) for v in gaps))


def sobolev_ratio_probe(patch: DomainPatch, u) -> float:
    """``|u|_{L6} / |grad u|_{L2}`` over the patch for a ``ScalarField`` u."""
    vals = patch.integrate(
        lambda x: np.column_stack([np.abs(u(x)) ** 6, np.sum(np.abs(u.gradient(x)) ** 2, axis=1)])
    )
    l6, g2 = float(vals[0]), float(vals[1])
    if g2 <= 1e-300 * max(1.0, l6):
        raise PreconditionError("gradient vanishes on the patch; ratio undefined")
    return l6 ** (1 / 6) / math.sqrt(g2)
