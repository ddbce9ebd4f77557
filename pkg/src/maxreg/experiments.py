"""Experiment dispatch and run reports.

Every experiment turns an ``ExperimentConfig`` into a list of ``Row``s.  A
row is one checked quantity with its tolerance and the operation that
produced it.  Rows have a role: ``claim`` rows test the property named by
the experiment, ``check`` rows are sanity conditions that must hold
whatever the expected verdict.  A run passes when all ``check`` rows pass
and the claims hold exactly when the config says they should
(``expect = fail`` marks a counterexample).
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Callable

import numpy as np

from . import diffeo as dm
from . import fields as fm
from .config import ExperimentConfig
from .errors import CatalogError, ConfigError
from .geometry import GRAPH_CATALOG, ebc_radius, make_graph
from .matalg import invariance_defect, lemma31_sweep
from .maxwell import MODES, WeightedL2Spec, estimate_sweep
from .mollify import MollifierKernel, SmoothingFamily, family_checks, union_slope
from .quadrature import DomainPatch, QuadratureSpec, convergence_order

RELATIONS: dict[str, Callable[[float, float], bool]] = {
    "<=": lambda v, t: v <= t,
    ">=": lambda v, t: v >= t,
    "<": lambda v, t: v < t,
    ">": lambda v, t: v > t,
}


def package_version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "0+unknown"


@dataclass(frozen=True)
class Row:
    name: str
    value: float
    tolerance: float
    relation: str
    passed: bool
    source: str
    role: str = "claim"

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "value": self.value,
            "tolerance": self.tolerance,
            "relation": self.relation,
            "pass": self.passed,
            "source": self.source,
            "role": self.role,
        }


def row(name: str, value: float, relation: str, tolerance: float, source: str, role: str = "claim") -> Row:
    value = float(value)
    ok = math.isfinite(value) and RELATIONS[relation](value, tolerance)
    return Row(name, value, float(tolerance), relation, bool(ok), source, role)


@dataclass(frozen=True)
class Table:
    header: tuple[str, ...]
    rows: tuple[tuple, ...]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        for r in self.rows:
            w.writerow([_fmt(v) for v in r])
        return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return str(v)


ROW_HEADER = ("name", "value", "tolerance", "relation", "pass", "role", "source")


@dataclass
class RunReport:
    kind: str
    expect: str
    config: dict
    rows: list[Row] = field(default_factory=list)
    orders: dict[str, float] = field(default_factory=dict)
    tables: dict[str, Table] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    version: str = field(default_factory=package_version)
    wall_time: float = 0.0
    timestamp: str = ""

    @property
    def checks_pass(self) -> bool:
        return all(r.passed for r in self.rows if r.role == "check")

    @property
    def claims_hold(self) -> bool:
        return all(r.passed for r in self.rows if r.role == "claim")

    @property
    def overall_pass(self) -> bool:
        return self.checks_pass and self.claims_hold == (self.expect == "pass")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(ROW_HEADER)
        for r in self.rows:
            w.writerow([r.name, _fmt(r.value), _fmt(r.tolerance), r.relation, _fmt(r.passed), r.role, r.source])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "expect": self.expect,
            "version": self.version,
            "config": self.config,
            "rows": [r.as_dict() for r in self.rows],
            "orders": self.orders,
            "extra": self.extra,
            "claims_hold": self.claims_hold,
            "overall_pass": self.overall_pass,
            "timing": {"wall_time": self.wall_time, "timestamp": self.timestamp},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def write(self, prefix: Path) -> list[Path]:
        """Write ``prefix.csv``, ``prefix.json`` and one ``prefix.<table>.csv`` per table."""
        prefix.parent.mkdir(parents=True, exist_ok=True)
        out = [prefix.with_name(prefix.name + ".csv"), prefix.with_name(prefix.name + ".json")]
        out[0].write_text(self.to_csv())
        out[1].write_text(self.to_json() + "\n")
        for name, table in sorted(self.tables.items()):
            p = prefix.with_name(f"{prefix.name}.{name}.csv")
            p.write_text(table.to_csv())
            out.append(p)
        return out


# ---------------------------------------------------------------------------
# shared builders


def _call(factory, kind: str, params: dict):
    try:
        return factory(**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {kind}: {exc}") from None


def _graph(cfg: ExperimentConfig):
    return _call(lambda **p: make_graph(cfg.domain.name, **p), f"domain {cfg.domain.name}", cfg.domain.params)


def _coef(spec):
    return _call(lambda **p: fm.make_coefficient(spec.name, **p), f"coefficient {spec.name}", spec.params)


def _diffeo(cfg: ExperimentConfig):
    if cfg.diffeo is None:
        raise ConfigError(f"experiment {cfg.kind} needs a [diffeo] section")
    return _call(lambda **p: dm.make_diffeo(cfg.diffeo.name, **p), f"diffeo {cfg.diffeo.name}", cfg.diffeo.params)


def _quad(cfg: ExperimentConfig, resolution: int) -> QuadratureSpec:
    return QuadratureSpec(
        resolution,
        cfg.order,
        float(cfg.params.get("fd_step", 1e-4)),
        float(cfg.params.get("grading", 1.0)),
    )


def _patch(cfg: ExperimentConfig, graph, resolution: int) -> DomainPatch:
    patch = DomainPatch(graph, cfg.rho, cfg.height, _quad(cfg, resolution))
    patch.self_test()
    return patch


def _tol(cfg: ExperimentConfig, key: str, default: float) -> float:
    return float(cfg.tolerances.get(key, default))


def _summed_basket(cfg: ExperimentConfig) -> fm.VectorField:
    basket = fm.field_basket(cfg.rho, cfg.basket)
    out = basket[0]
    for g in basket[1:]:
        out = out + g
    return out


def _refinement_rows(
    rep: RunReport, cfg: ExperimentConfig, label: str, hs: list[float], errs: list[float], source: str
) -> None:
    """Decrease, measured order and finest relative residual of a refinement study.

    Levels already at roundoff (relative residual below ``1e-15``) carry no
    rate information and are left out of the decrease and order rows.
    """
    floor = 1e-15
    ratios = [b / a for a, b in zip(errs, errs[1:]) if a > floor and b > floor]
    if ratios:
        rep.rows.append(row(f"{label}_max_refinement_ratio", max(ratios), "<", 1.0, source))
    live = [(h, e) for h, e in zip(hs, errs) if e > floor]
    if len(live) >= 2:
        order = convergence_order(live)
        rep.orders[label] = order
        rep.rows.append(row(f"{label}_order", order, ">=", _tol(cfg, "order_min", 1.0), "quadrature.convergence_order"))
    rep.rows.append(row(f"{label}_finest_relative", errs[-1], "<=", _tol(cfg, "relative_max", 1e-4), source))


# ---------------------------------------------------------------------------
# experiments


def run_lemma31(cfg: ExperimentConfig, rep: RunReport) -> None:
    trials = int(cfg.params.get("trials", 1000))
    inv_trials = int(cfg.params.get("invariance_trials", min(trials, 10_000)))
    sweep = lemma31_sweep(trials, cfg.seed)
    rep.extra["sweep"] = json.loads(sweep.to_json())
    rep.rows.append(row("min_scaled_residual", sweep.min_scaled, ">=", -_tol(cfg, "residual", 1e-10),
                        "matalg.lemma31_sweep"))
    rep.rows.append(row("orthogonal_invariance_defect", invariance_defect(inv_trials, cfg.seed + 1), "<=",
                        _tol(cfg, "invariance", 1e-10), "matalg.invariance_defect"))


def run_ebc(cfg: ExperimentConfig, rep: RunReport) -> None:
    graph = _graph(cfg)
    patch = DomainPatch(graph, cfg.rho, cfg.height, _quad(cfg, cfg.resolutions[-1]))
    points = cfg.params.get("points", [(0.0, 0.0)])
    if points and not isinstance(points[0], (list, tuple)):
        points = [points]
    r_max = float(cfg.params.get("r_max", 10.0))
    tol = float(cfg.params.get("tol", 1e-3))
    min_radius = _tol(cfg, "min_radius", 0.01)
    expected = cfg.params.get("expected_radius")
    results = []
    for p in points:
        res = ebc_radius(patch, np.asarray(p, dtype=float), r_max, tol)
        results.append(json.loads(res.to_json()))
        tag = f"[{p[0]:g},{p[1]:g}]"
        rep.rows.append(row(f"radius{tag}", res.radius, ">", min_radius, "geometry.ebc_radius"))
        if expected is not None:
            rep.rows.append(row(f"radius_error{tag}", abs(res.radius - float(expected)), "<=",
                                _tol(cfg, "radius", 0.02), "geometry.ebc_radius"))
        if cfg.params.get("expect_cap"):
            rep.rows.append(row(f"capped{tag}", float(res.capped), ">=", 1.0, "geometry.ebc_radius"))
    rep.extra["ebc"] = results


def _kernel(cfg: ExperimentConfig) -> MollifierKernel:
    """Mollifier with the discrete rule from ``kernel_panels`` / ``kernel_order``; mass is self-tested."""
    kernel = _call(MollifierKernel, "kernel", {
        k: int(cfg.params[f"kernel_{k}"]) for k in ("panels", "order", "n_theta") if f"kernel_{k}" in cfg.params
    })
    kernel.self_test()
    return kernel


def run_mollify(cfg: ExperimentConfig, rep: RunReport) -> None:
    graph = _graph(cfg)
    kernel = _kernel(cfg)
    alphas = tuple(float(a) for a in cfg.params.get("alphas", (0.4, 0.2, 0.1, 0.05)))
    family = SmoothingFamily.build(graph, kernel, alphas, float(cfg.params.get("margin", 0.1)))
    samples = int(cfg.params.get("samples", 200))
    fam = family_checks(
        family,
        samples,
        cfg.seed,
        cfg.rho,
        lipschitz_tol=_tol(cfg, "lipschitz", 1e-8),
        rate_tol=_tol(cfg, "rate", 1e-8),
        convexity_tol=_tol(cfg, "convexity", 1e-10),
    )
    K = graph.lipschitz_K
    limits = {
        "monotonicity": (">=", family.rate_floor - _tol(cfg, "rate", 1e-8)),
        "lipschitz": ("<=", K + _tol(cfg, "lipschitz", 1e-8)),
        "convexity": (">=", -_tol(cfg, "convexity", 1e-10)),
        "nesting": (">", 0.0),
    }
    for r in fam.rows:
        rel, lim = limits[r.check_name]
        rep.rows.append(Row(f"{r.check_name}[alpha={r.alpha:g}]", r.worst_value, lim, rel, r.passed,
                            "mollify.family_checks"))
    sl = union_slope(family, samples, cfg.seed, cfg.rho)
    rep.rows.append(row("union_slope_relative_error", abs(sl.slope - sl.predicted) / sl.predicted, "<=",
                        _tol(cfg, "slope", 0.2), "mollify.union_slope"))
    rep.rows.append(row("kernel_moment_consistency", abs(kernel.first_abs_moment - kernel.radial_first_moment()),
                        "<=", 1e-6, "mollify.MollifierKernel", role="check"))
    rep.extra["family"] = {"shift_M": family.shift_M, "first_abs_moment": kernel.first_abs_moment,
                           "rate_floor": family.rate_floor, "rate_ceiling": family.rate_ceiling,
                           "slope": sl.slope, "gaps": list(sl.gaps)}
    rep.tables["family"] = Table(
        ("alpha", "check", "worst_value", "pass"),
        tuple((r.alpha, r.check_name, r.worst_value, r.passed) for r in fam.rows),
    )


def run_gaffney(cfg: ExperimentConfig, rep: RunReport) -> None:
    graph = _graph(cfg)
    identity = fm.make_coefficient("identity")
    w = fm.make_normal_zero(_summed_basket(cfg), identity, graph)
    levels, hs, errs = [], [], []
    for res in cfg.resolutions:
        patch = _patch(cfg, graph, res)
        r = fm.gaffney_residual(w, patch, _tol(cfg, "trace", 1e-10))
        levels.append((res, patch.quad.h, r.lhs, r.rhs, r.residual, r.relative))
        hs.append(patch.quad.h)
        errs.append(r.relative)
    rep.tables["levels"] = Table(("resolution", "h", "lhs", "rhs", "residual", "relative"), tuple(levels))
    rep.extra["levels"] = [dict(zip(rep.tables["levels"].header, lv)) for lv in levels]
    _refinement_rows(rep, cfg, "gaffney", hs, errs, "fields.gaffney_residual")


def run_electric(cfg: ExperimentConfig, rep: RunReport) -> None:
    graph = _graph(cfg)
    s = _coef(cfg.coefficient)
    u = fm.make_tangential_zero(_summed_basket(cfg), graph)
    levels, hs, errs = [], [], []
    for res in cfg.resolutions:
        patch = _patch(cfg, graph, res)
        r = fm.electric_identity_check(u, s, patch)
        levels.append((res, patch.quad.h, r.lhs, r.grad_term, r.boundary_term, r.defect, r.relative, r.needed_C))
        hs.append(patch.quad.h)
        errs.append(r.relative)
    header = ("resolution", "h", "lhs", "grad_term", "boundary_term", "defect", "relative", "needed_C")
    rep.tables["levels"] = Table(header, tuple(levels))
    rep.extra["levels"] = [dict(zip(header, lv)) for lv in levels]
    if s.constant:
        _refinement_rows(rep, cfg, "electric", hs, errs, "fields.electric_identity_check")
    else:
        budget = float(cfg.params.get("c_budget", math.inf))
        rep.rows.append(row("needed_C", levels[-1][-1], "<=" if math.isfinite(budget) else "<", budget,
                            "fields.electric_identity_check"))
    n = int(cfg.params.get("k_samples", 0))
    if n > 0:
        K, closed = fm.boundary_K_samples(n, cfg.seed)
        rep.rows.append(row("K_min", K.min(), ">=", -_tol(cfg, "k_floor", 1e-12), "fields.boundary_K"))
        err = np.abs(K - closed) / np.maximum(1.0, np.abs(closed))
        rep.rows.append(row("K_closed_form_error", err.max(), "<=", _tol(cfg, "k_closed", 1e-10),
                            "fields.boundary_K_closed_form"))


def _off_axis_points(rng: np.random.Generator, n: int, radius: float, gap: float) -> np.ndarray:
    r = radius * np.sqrt(rng.uniform((gap / radius) ** 2, 1.0, n))
    t = rng.uniform(0, 2 * np.pi, n)
    return np.column_stack([r * np.cos(t), r * np.sin(t), rng.uniform(-radius, radius, n)])


def run_pullback(cfg: ExperimentConfig, rep: RunReport) -> None:
    psi = _diffeo(cfg)
    fd = bool(cfg.params.get("fd_second", False))
    if fd:
        psi = psi.without_second(cfg.params.get("fd_step"))
    s = _coef(cfg.coefficient)
    rng = np.random.default_rng(cfg.seed)
    x = _off_axis_points(rng, int(cfg.params.get("samples", 200)), 0.8, float(cfg.params.get("axis_gap", 0.05)))
    profiles = [fm.profile_field(n) for n in cfg.basket]
    law_tol = _tol(cfg, "law", 1e-6 if fd else 1e-12)
    rot = max(float(np.max(dm.rot_transform_residual(psi, v, x))) for v in profiles)
    div = max(float(np.max(dm.div_transform_residual(psi, s, v, x))) for v in profiles)
    rep.rows.append(row("rot_law_residual", rot, "<=", law_tol, "diffeo.rot_transform_residual"))
    rep.rows.append(row("div_law_residual", div, "<=", law_tol, "diffeo.div_transform_residual"))

    other = dm.make_diffeo(str(cfg.params.get("compose_with", "polynomial")))
    both = dm.compose(psi, other)
    func = 0.0
    for v in profiles:
        a = dm.pullback_field(both, v)(x)
        b = dm.pullback_field(other, dm.pullback_field(psi, v))(x)
        func = max(func, float(np.max(np.abs(a - b))))
    rep.rows.append(row("functoriality", func, "<=", _tol(cfg, "functoriality", 1e-10), "diffeo.compose"))

    y = psi.forward(x)
    st = dm.coefficient_transform(psi, s, y)
    rep.rows.append(row("transformed_min_eigenvalue", st.beta0, ">", 0.0, "diffeo.coefficient_transform"))
    rep.extra["transformed_bounds"] = {"beta0": st.beta0, "beta1": st.beta1}

    target = cfg.params.get("target")
    if target is not None:
        target = dict(target)
        name = str(target.pop("name"))
        if name not in GRAPH_CATALOG:
            raise CatalogError(f"unknown domain {name!r}; valid names: {', '.join(sorted(GRAPH_CATALOG))}")
        t_rho = float(target.pop("rho", cfg.rho))
        t_height = float(target.pop("height", cfg.height))
        dst_graph = _call(lambda **p: make_graph(name, **p), f"domain {name}", target)
        res = cfg.resolutions[-1]
        src = _patch(cfg, _graph(cfg), res)
        dst = _patch(cfg, dst_graph, res)
        ratios = []
        for v in fm.field_basket(t_rho, cfg.basket):
            nr = dm.norm_equivalence_probe(psi.without_second() if fd else psi, s, v, src, dst)
            spread = max(nr.ratio_f, 1 / nr.ratio_f, nr.ratio_sob, 1 / nr.ratio_sob)
            rep.rows.append(row(f"norm_ratio_spread[{v.name}]", spread, "<=", nr.bound,
                                "diffeo.norm_equivalence_probe"))
            ratios.append((v.name, nr.ratio_f, nr.ratio_sob, nr.bound))
        rep.tables["ratios"] = Table(("field", "ratio_f", "ratio_sob", "bound"), tuple(ratios))


def run_sweep(cfg: ExperimentConfig, rep: RunReport) -> None:
    graph = _graph(cfg)
    alphas = tuple(float(a) for a in cfg.params.get("alphas", (0.4, 0.2, 0.1, 0.05)))
    family = SmoothingFamily.build(graph, _kernel(cfg), alphas, float(cfg.params.get("margin", 0.1)))
    eps = _coef(cfg.coefficient)
    mu = _coef(cfg.mu) if cfg.mu is not None else eps
    spec = WeightedL2Spec(eps, mu)
    mode = str(cfg.params.get("mode", "all"))
    modes = MODES if mode == "all" else (mode,)
    for m in modes:
        if m not in MODES:
            raise ConfigError(f"unknown sweep mode {m!r}; valid modes: all, {', '.join(MODES)}")
    basket = fm.field_basket(cfg.rho, cfg.basket)
    quad = _quad(cfg, cfg.resolutions[-1])
    DomainPatch(graph, cfg.rho, cfg.height, quad).self_test()
    budget = _tol(cfg, "invalid_fraction", 0.1)
    for m in modes:
        sweep = estimate_sweep(family, spec, basket, m, cfg.rho, cfg.height, quad,
                               _tol(cfg, "trace", 1e-10), budget)
        rep.rows.append(row(f"{m}_ratio_variation", sweep.variation, "<", _tol(cfg, "variation", 2.0),
                            "maxwell.estimate_sweep"))
        rep.rows.append(row(f"{m}_invalid_fraction", sweep.invalid_count / len(sweep.cells), "<=", budget,
                            "maxwell.estimate_sweep", role="check"))
        rep.extra[m] = sweep.summary()
        rep.tables[m] = Table(
            ("alpha", "field_id", "sobolev", "f_or_graph", "ratio", "valid", "degenerate"),
            tuple((c.alpha, c.field_id, c.sobolev, c.f_or_graph, c.ratio, c.valid, c.degenerate)
                  for c in sweep.cells),
        )


def run_w23(cfg: ExperimentConfig, rep: RunReport) -> None:
    psi = _diffeo(cfg)
    graph = _graph(cfg)
    patch = _patch(cfg, graph, cfg.resolutions[0])
    if len(cfg.resolutions) < 2:
        raise ConfigError("w23probe needs at least two resolutions")
    probes = dm.w23_refinement(psi, patch, list(cfg.resolutions), float(cfg.params.get("grading", 2.0)))
    vals = [p.int_D2_cubed for p in probes]
    changes = [abs(b - a) / abs(a) if a else math.inf for a, b in zip(vals, vals[1:])]
    growth = [b / a if a else math.inf for a, b in zip(vals, vals[1:])]
    rep.rows.append(row("finest_relative_change", changes[-1], "<", _tol(cfg, "change", 0.05),
                        "diffeo.w23_refinement"))
    rep.rows.append(row("sup_J", max(p.sup_J for p in probes), "<", math.inf, "diffeo.w23_membership_probe",
                        role="check"))
    rep.extra["growth"] = growth
    rep.tables["levels"] = Table(
        ("resolution", "sup_J", "int_D2_cubed"),
        tuple((r, p.sup_J, p.int_D2_cubed) for r, p in zip(cfg.resolutions, probes)),
    )


RUNNERS: dict[str, Callable[[ExperimentConfig, RunReport], None]] = {
    "lemma31": run_lemma31,
    "ebc": run_ebc,
    "mollify": run_mollify,
    "gaffney": run_gaffney,
    "electric": run_electric,
    "pullback": run_pullback,
    "estimate-sweep": run_sweep,
    "w23probe": run_w23,
}


def run(cfg: ExperimentConfig) -> RunReport:
    """Dispatch to the experiment named by ``cfg.kind`` and time it."""
    rep = RunReport(cfg.kind, cfg.expect, cfg.echo())
    t0 = time.perf_counter()
    RUNNERS[cfg.kind](cfg, rep)
    rep.wall_time = time.perf_counter() - t0
    rep.timestamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
    return rep
