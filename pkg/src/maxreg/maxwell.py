"""Maxwell and extended Maxwell expressions, graph norms and estimate sweeps.

The extended field is ``X = (E, phi, H, eta)`` and::

    L X = (i eps^{-1} rot H + i grad eta,  -i div(mu H),
           -i mu^{-1} rot E - i grad phi,   i div(eps E))

Weighted L2 products use ``eps`` on the first block, ``mu`` on the third
and the identity on the two scalar blocks.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidCellBudgetError, PreconditionError
from .fields import (
    CoefficientField,
    ScalarField,
    VectorField,
    div_weighted,
    f_norm,
    make_normal_zero,
    make_tangential_zero,
    normal_trace_defect,
    rot_from_jac,
    sobolev_norm,
    tangential_trace_defect,
)
from .geometry import GraphFunction
from .mollify import SmoothingFamily
from .quadrature import DomainPatch, QuadratureSpec

Array = np.ndarray


def _zero_scalar() -> ScalarField:
    return ScalarField.constant(0.0)


def _zero_vector() -> VectorField:
    return VectorField.constant(np.zeros(3))


@dataclass(frozen=True)
class ExtendedField:
    E: VectorField = field(default_factory=_zero_vector)
    phi: ScalarField = field(default_factory=_zero_scalar)
    H: VectorField = field(default_factory=_zero_vector)
    eta: ScalarField = field(default_factory=_zero_scalar)


@dataclass(frozen=True)
class WeightedL2Spec:
    epsilon: CoefficientField
    mu: CoefficientField

    def check_bounds(self, x: Array) -> bool:
        return self.epsilon.check_bounds(x) and self.mu.check_bounds(x)


def _solve(s: Array, v: Array) -> Array:
    return np.linalg.solve(s, v[:, :, None])[:, :, 0]


def apply_maxwell(E: VectorField, H: VectorField, spec: WeightedL2Spec, x: Array) -> tuple[Array, Array]:
    """``(i eps^{-1} rot H, -i mu^{-1} rot E)`` at the points ``x``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    rh = rot_from_jac(H.jacobian(x))
    re = rot_from_jac(E.jacobian(x))
    return 1j * _solve(spec.epsilon(x), rh), -1j * _solve(spec.mu(x), re)


def apply_extended(X: ExtendedField, spec: WeightedL2Spec, x: Array) -> tuple[Array, Array, Array, Array]:
    """The four blocks of ``L X`` in the order ``(C^3, C, C^3, C)``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    a, c = apply_maxwell(X.E, X.H, spec, x)
    a = a + 1j * X.eta.gradient(x)
    b = -1j * div_weighted(spec.mu, X.H, x)
    c = c - 1j * X.phi.gradient(x)
    d = 1j * div_weighted(spec.epsilon, X.E, x)
    return a, b, c, d


def divergence_free_residual(
    E: VectorField, H: VectorField, spec: WeightedL2Spec, patch: DomainPatch
) -> tuple[float, float]:
    """``L2`` norms of ``div(eps E)`` and ``div(mu H)`` over the patch."""
    vals = patch.integrate(
        lambda x: np.column_stack(
            [np.abs(div_weighted(spec.epsilon, E, x)) ** 2, np.abs(div_weighted(spec.mu, H, x)) ** 2]
        )
    )
    return math.sqrt(max(float(vals[0]), 0.0)), math.sqrt(max(float(vals[1]), 0.0))


def _weighted_sq(s: Array, v: Array) -> Array:
    return np.einsum("nik,nk,ni->n", s, v, np.conj(v)).real


def _blocks(X: ExtendedField, x: Array) -> tuple[Array, Array, Array, Array]:
    return X.E(x), X.phi(x), X.H(x), X.eta(x)


def weighted_inner(
    P: tuple[Array, Array, Array, Array], Q: tuple[Array, Array, Array, Array], eps: Array, mu: Array
) -> Array:
    """Pointwise weighted product of two 8-component values."""
    return (
        np.einsum("nik,nk,ni->n", eps, P[0], np.conj(Q[0]))
        + P[1] * np.conj(Q[1])
        + np.einsum("nik,nk,ni->n", mu, P[2], np.conj(Q[2]))
        + P[3] * np.conj(Q[3])
    )


def extended_l2_norm(X: ExtendedField, spec: WeightedL2Spec, patch: DomainPatch) -> float:
    def integrand(x: Array) -> Array:
        b = _blocks(X, x)
        return weighted_inner(b, b, spec.epsilon(x), spec.mu(x)).real

    return math.sqrt(max(float(patch.integrate(integrand)), 0.0))


def graph_norm(X: ExtendedField, spec: WeightedL2Spec, patch: DomainPatch) -> float:
    """``(|L X|^2 + |X|^2)^(1/2)`` in the weighted ``L2`` norm."""

    def integrand(x: Array) -> Array:
        eps, mu = spec.epsilon(x), spec.mu(x)
        lx = apply_extended(X, spec, x)
        b = _blocks(X, x)
        return (weighted_inner(lx, lx, eps, mu) + weighted_inner(b, b, eps, mu)).real

    return math.sqrt(max(float(patch.integrate(integrand)), 0.0))


def weighted_pairing(X: ExtendedField, Y: ExtendedField, spec: WeightedL2Spec, patch: DomainPatch) -> complex:
    """``(L X, Y)`` in the weighted ``L2`` product."""

    def integrand(x: Array) -> Array:
        return weighted_inner(apply_extended(X, spec, x), _blocks(Y, x), spec.epsilon(x), spec.mu(x))

    return complex(patch.integrate(integrand))


def symmetry_defect(X: ExtendedField, Y: ExtendedField, spec: WeightedL2Spec, patch: DomainPatch) -> complex:
    """``(L X, Y) - (X, L Y)``; vanishes when both satisfy the boundary conditions."""
    return weighted_pairing(X, Y, spec, patch) - np.conj(weighted_pairing(Y, X, spec, patch))


def vanishing_on_graph(phi: GraphFunction, f: ScalarField) -> ScalarField:
    """``(x3 - phi(x')) f(x)``, a scalar that is zero on the graph."""

    def ev(x: Array) -> Array:
        return (x[:, 2] - phi(x[:, :2])) * f(x)

    def gr(x: Array) -> Array:
        d = np.column_stack([-phi.gradient(x[:, :2]), np.ones(len(x))])
        return d * f(x)[:, None] + (x[:, 2] - phi(x[:, :2]))[:, None] * f.gradient(x)

    return ScalarField(ev, gr, f.fd_step, f"vanish({f.name})")


# ---------------------------------------------------------------------------
# estimate sweeps


@dataclass(frozen=True)
class SweepCell:
    alpha: float
    field_id: str
    sobolev: float
    f_or_graph: float
    ratio: float
    valid: bool
    degenerate: bool = False


@dataclass
class SweepReport:
    mode: str
    cells: list[SweepCell] = field(default_factory=list)
    max_invalid_fraction: float = 0.1

    @property
    def invalid_count(self) -> int:
        return sum(1 for c in self.cells if not c.valid)

    @property
    def degenerate_count(self) -> int:
        return sum(1 for c in self.cells if c.degenerate)

    def max_ratio_per_alpha(self) -> dict[float, float]:
        out: dict[float, float] = {}
        for c in self.cells:
            if c.valid and not c.degenerate:
                out[c.alpha] = max(out.get(c.alpha, 0.0), c.ratio)
        return out

    @property
    def overall_max(self) -> float:
        vals = self.max_ratio_per_alpha().values()
        return max(vals) if vals else math.nan

    @property
    def variation(self) -> float:
        """Largest over smallest per-alpha maximum."""
        vals = list(self.max_ratio_per_alpha().values())
        return max(vals) / min(vals) if vals else math.nan

    @property
    def budget_ok(self) -> bool:
        return self.invalid_count <= self.max_invalid_fraction * len(self.cells)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["alpha", "field_id", "sobolev", "f_or_graph", "ratio", "valid"])
        for c in self.cells:
            w.writerow([repr(c.alpha), c.field_id, repr(c.sobolev), repr(c.f_or_graph),
                        repr(c.ratio), str(c.valid).lower()])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "mode": self.mode,
            "max_ratio_per_alpha": {repr(a): r for a, r in sorted(self.max_ratio_per_alpha().items())},
            "overall_max": self.overall_max,
            "variation": self.variation,
            "invalid_count": self.invalid_count,
            "degenerate_count": self.degenerate_count,
            "cells": len(self.cells),
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True)


MODES = ("magnetic", "electric", "extended")


def _cell(
    mode: str, g: VectorField, spec: WeightedL2Spec, patch: DomainPatch, trace_tol: float
) -> tuple[float, float, bool]:
    phi = patch.graph
    if mode == "magnetic":
        v = make_normal_zero(g, spec.mu, phi)
        valid = normal_trace_defect(v, patch, spec.mu) <= trace_tol
        return sobolev_norm(v, patch), f_norm(v, spec.mu, patch), valid
    if mode == "electric":
        u = make_tangential_zero(g, phi)
        valid = tangential_trace_defect(u, patch) <= trace_tol
        return sobolev_norm(u, patch), f_norm(u, spec.epsilon, patch), valid
    E = make_tangential_zero(g, phi)
    H = make_normal_zero(g, spec.mu, phi)
    valid = (
        tangential_trace_defect(E, patch) <= trace_tol
        and normal_trace_defect(H, patch, spec.mu) <= trace_tol
    )
    X = ExtendedField(E=E, H=H)
    sob = math.hypot(sobolev_norm(E, patch), sobolev_norm(H, patch))
    return sob, graph_norm(X, spec, patch), valid


def estimate_sweep(
    family: SmoothingFamily,
    spec: WeightedL2Spec,
    basket: list[VectorField],
    mode: str,
    rho: float = 1.0,
    height: float = 2.0,
    quad: QuadratureSpec = QuadratureSpec(),
    trace_tol: float = 1e-10,
    max_invalid_fraction: float = 0.1,
) -> SweepReport:
    """Sobolev norm over F-norm (or graph norm) for every ``(alpha, field)`` cell.

    Basket fields are made to satisfy the mode's boundary condition on each
    ``Omega_alpha`` before the norms are taken.  Cells whose boundary trace
    is above ``trace_tol`` are marked invalid and excluded; cells whose
    constructed field vanishes are marked degenerate and excluded.  Raises
    ``InvalidCellBudgetError`` (carrying the report) when more than
    ``max_invalid_fraction`` of the cells are invalid.
    """
    if mode not in MODES:
        raise PreconditionError(f"unknown sweep mode {mode!r}; valid modes: {', '.join(MODES)}")
    report = SweepReport(mode, max_invalid_fraction=max_invalid_fraction)
    for alpha in family.alphas:
        patch = DomainPatch(family.graph(alpha), rho, height, quad)
        for k, g in enumerate(basket):
            sob, den, valid = _cell(mode, g, spec, patch, trace_tol)
            degenerate = den <= 1e-12 * max(1.0, sob)
            ratio = sob / den if not degenerate else math.nan
            report.cells.append(SweepCell(alpha, f"{k}:{g.name}", sob, den, ratio, valid, degenerate))
    if not report.budget_ok:
        err = InvalidCellBudgetError(
            f"{report.invalid_count} of {len(report.cells)} cells violate the boundary condition"
        )
        err.report = report
        raise err
    return report
