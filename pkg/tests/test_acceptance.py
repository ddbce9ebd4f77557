"""Acceptance gate: one test per criterion, each printing a single PASS/FAIL line.

Shipped configs are run once per session (twice for the determinism check)
with outputs redirected to a temporary directory.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from maxreg.config import OUTPUT_ENV, load_config
from maxreg.diffeo import (
    affine,
    coefficient_transform,
    compose,
    cusp32,
    div_transform_residual,
    polynomial,
    pullback_field,
    rot_transform_residual,
    scaling,
)
from maxreg.experiments import run
from maxreg.fields import field_basket, make_coefficient, profile_field, trace_identity_errors
from maxreg.geometry import ebc_radius, make_graph, weingarten
from maxreg.matalg import invariance_defect, lemma31_sweep
from maxreg.mollify import SmoothingFamily, family_checks, union_slope
from maxreg.quadrature import DomainPatch, QuadratureSpec, convergence_order

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _gate(capsys, number, title, checks, detail=""):
    """Print one verdict line for the criterion, then fail on any unmet check."""
    failed = [name for name, ok in checks.items() if not ok]
    verdict = "PASS" if not failed else "FAIL"
    line = f"{verdict} criterion {number:2d}: {title}"
    if detail:
        line += f" ({detail})"
    if failed:
        line += f" unmet: {', '.join(failed)}"
    with capsys.disabled():
        print("\n" + line)
    assert not failed, line


def _rows(report):
    return {r.name: r for r in report.rows}


def _outputs(prefix):
    files = {}
    for p in sorted(prefix.parent.glob(prefix.name + ".*")):
        data = p.read_bytes()
        if p.suffix == ".json":
            doc = json.loads(data)
            doc.pop("timing")
            data = json.dumps(doc, sort_keys=True).encode()
        files[p.name] = data
    return files


@pytest.fixture(scope="session")
def config_runs(tmp_path_factory):
    """``name -> (report, first outputs, second outputs)`` for every shipped config."""
    base = tmp_path_factory.mktemp("acceptance")
    mp = pytest.MonkeyPatch()
    out = {}
    try:
        for path in sorted(CONFIGS.glob("*.ini")):
            runs = []
            for k in ("a", "b"):
                mp.setenv(OUTPUT_ENV, str(base / k))
                cfg = load_config(path)
                rep = run(cfg)
                rep.write(cfg.output_prefix())
                runs.append((rep, _outputs(cfg.output_prefix())))
            out[path.stem] = (runs[0][0], runs[0][1], runs[1][1])
    finally:
        mp.undo()
    return out


def test_criterion_01_trace_inequality_monte_carlo(capsys):
    t0 = time.perf_counter()
    res = lemma31_sweep(10**6, seed=2024)
    elapsed = time.perf_counter() - t0
    inv = invariance_defect(10**4, seed=5)
    _gate(capsys, 1, "trace inequality Monte Carlo", {
        "min scaled residual >= -1e-10": res.min_scaled >= -1e-10,
        "runtime < 60 s": elapsed < 60,
        "orthogonal invariance <= 1e-10": inv <= 1e-10,
    }, f"1e6 trials, min scaled {res.min_scaled:.3e}, {elapsed:.1f} s, invariance {inv:.1e} under real orthogonal Q")


def test_criterion_02_pointwise_trace_identities(capsys):
    rng = np.random.default_rng(8)
    x = rng.uniform(-1.0, 1.0, (1000, 3))
    worst = 0.0
    for u in field_basket(1.0):  # 10 fields x 1000 points
        e1, e2 = trace_identity_errors(u.jacobian(x))
        worst = max(worst, float(np.abs(e1).max()), float(np.abs(e2).max()))
    J = rng.standard_normal((10**4, 3, 3))
    e1, e2 = trace_identity_errors(J)
    worst_random = max(float(np.abs(e1).max()), float(np.abs(e2).max()))
    _gate(capsys, 2, "pointwise trace identities", {
        "basket fields <= 1e-12": worst <= 1e-12,
        "random Jacobians <= 1e-12": worst_random <= 1e-12,
    }, f"max error {max(worst, worst_random):.1e}")


def test_criterion_03_weingarten(capsys):
    A = weingarten(make_graph("paraboloid"), np.zeros((1, 2)))[0]
    para = make_graph("paraboloid")
    p0 = np.zeros((1, 2))
    fd_exact = max(float(np.abs(para.fd_hessian(p0, h) - para.hessian(p0)).max()) for h in (0.1, 0.01))
    # the paraboloid is quadratic, so the O(h^2) rate is measured on a non-quadratic graph
    ripple = make_graph("ripple")
    p = np.array([[0.3, -0.4]])
    errs = [(h, float(np.abs(ripple.fd_hessian(p, h) - ripple.hessian(p)).max())) for h in
            (0.1 / 2**k for k in range(5))]
    order = convergence_order(errs)
    _gate(capsys, 3, "Weingarten map and FD Hessian", {
        "A(0) = diag(1,1,0) to 1e-12": float(np.abs(A - np.diag([1.0, 1.0, 0.0])).max()) <= 1e-12,
        "paraboloid FD Hessian matches oracle": fd_exact <= 1e-12,
        "FD Hessian order >= 1.9": order >= 1.9,
    }, f"measured order {order:.3f}")


def test_criterion_04_gaffney(capsys, config_runs):
    checks, detail = {}, []
    for name in ("gaffney_flat", "gaffney_paraboloid"):
        rows = _rows(config_runs[name][0])
        order = rows["gaffney_order"].value
        fine = rows["gaffney_finest_relative"].value
        checks[f"{name} decreasing"] = rows["gaffney_max_refinement_ratio"].value < 1
        checks[f"{name} order >= 1"] = order >= 1.0
        checks[f"{name} finest <= 1e-4"] = fine <= 1e-4
        detail.append(f"{name} order {order:.2f} finest {fine:.1e}")
    _gate(capsys, 4, "Gaffney identity under refinement", checks, "; ".join(detail))


def test_criterion_05_electric_identity_and_K(capsys, config_runs):
    rows = _rows(config_runs["electric_aniso"][0])
    _gate(capsys, 5, "electric identity and boundary density", {
        "decreasing": rows["electric_max_refinement_ratio"].value < 1,
        "order >= 1": rows["electric_order"].value >= 1.0,
        "finest <= 1e-4": rows["electric_finest_relative"].value <= 1e-4,
        "K >= -1e-12 on 1e4 samples": rows["K_min"].value >= -1e-12,
        "K closed form to 1e-10": rows["K_closed_form_error"].value <= 1e-10,
    }, f"order {rows['electric_order'].value:.2f}, K_min {rows['K_min'].value:.3e}, "
       f"closed-form error {rows['K_closed_form_error'].value:.1e}")


def test_criterion_06_mollification_family(capsys):
    fam = SmoothingFamily.build(make_graph("abs"), alphas=(0.4, 0.2, 0.1, 0.05))
    rep = family_checks(fam, samples=400, seed=0, rho=1.0, lipschitz_tol=1e-6, rate_tol=1e-8)
    lip = max(r.worst_value for r in rep.check("lipschitz"))
    rate = min(r.worst_value for r in rep.check("monotonicity"))
    sl = union_slope(fam, rho=1.0)
    rel = abs(sl.slope - sl.predicted) / sl.predicted
    _gate(capsys, 6, "mollification family on |x'|", {
        "all four checks at every alpha": rep.passed and len(rep.rows) == 16,
        "Lipschitz <= 1 + 1e-6": lip <= 1 + 1e-6,
        "d phi_alpha / d alpha >= M - K m1 - 1e-8": rate >= fam.rate_floor - 1e-8,
        "linear slope within 20%": rel <= 0.2,
    }, f"Lipschitz {lip:.6f}, min rate {rate:.4f} vs floor {fam.rate_floor:.4f}, slope error {rel:.1e}")


def test_criterion_07_external_ball(capsys):
    origin = np.zeros(2)
    times = []

    def radius(graph, **params):
        patch = DomainPatch(make_graph(graph, **params), 1.0, 2.0, QuadratureSpec(8, 2))
        t0 = time.perf_counter()
        res = ebc_radius(patch, origin)
        times.append(time.perf_counter() - t0)
        return res

    dome = radius("paraboloid", c=-1.0)
    wedge = radius("wedge")
    flat = radius("flat")
    _gate(capsys, 7, "external ball radius", {
        "paraboloid R(0) = 1 +- 0.02": abs(dome.radius - 1.0) <= 0.02,
        "wedge R(0) <= 0.01": wedge.radius <= 0.01,
        "flat returns the cap": flat.capped,
        "runtime < 5 s per point": max(times) < 5.0,
    }, f"paraboloid {dome.radius:.4f}, wedge {wedge.radius:.1e}, slowest point {max(times):.2f} s")


def test_criterion_08_transformation_laws(capsys):
    rng = np.random.default_rng(12)
    x = rng.uniform(-0.7, 0.7, (200, 3))
    r = np.sqrt(np.sum(x[:, :2] ** 2, axis=1))
    off_axis = x[r > 0.2]
    v = profile_field("trig")
    s = make_coefficient("variable")
    aff = affine([[2.0, 0.3, 0.1], [0.0, 1.5, -0.2], [0.4, 0.0, 0.8]], [0.1, -0.2, 0.3])
    aff_res = max(float(rot_transform_residual(aff, v, x).max()),
                  float(div_transform_residual(aff, s, v, x).max()))
    cusp = cusp32().without_second(1e-4)
    cusp_res = max(float(rot_transform_residual(cusp, v, off_axis).max()),
                   float(div_transform_residual(cusp, s, v, off_axis).max()))
    p1, p2 = polynomial(0.3), aff
    direct = pullback_field(compose(p1, p2), v)
    stepwise = pullback_field(p2, pullback_field(p1, v))
    func = max(float(np.abs(direct(x) - stepwise(x)).max()),
               float(np.abs(direct.jacobian(x) - stepwise.jacobian(x)).max()))
    _gate(capsys, 8, "pullback transformation laws", {
        "affine <= 1e-12": aff_res <= 1e-12,
        "cusp off-axis with FD second derivatives <= 1e-6": cusp_res <= 1e-6,
        "functoriality <= 1e-10": func <= 1e-10,
    }, f"affine {aff_res:.1e}, cusp {cusp_res:.1e}, functoriality {func:.1e}")


def test_criterion_09_coefficient_transform(capsys, config_runs):
    x = np.random.default_rng(4).uniform(-0.7, 0.7, (100, 3))
    s_t = coefficient_transform(scaling(2.0), make_coefficient("identity"), x)
    exact = bool(np.array_equal(s_t(x), np.broadcast_to(np.eye(3) / 2, (100, 3, 3))))
    rows = _rows(config_runs["pullback_cusp"][0])
    spreads = {k: r for k, r in rows.items() if k.startswith("norm_ratio_spread")}
    worst = max(spreads.values(), key=lambda r: r.value / r.tolerance)
    _gate(capsys, 9, "coefficient transform and norm equivalence", {
        "psi = 2x, s = I gives I/2 exactly": exact,
        "cusp transform SPD": rows["transformed_min_eigenvalue"].passed,
        "10-field basket within Jacobian bound": len(spreads) == 10 and all(r.passed for r in spreads.values()),
    }, f"cusp min eigenvalue {rows['transformed_min_eigenvalue'].value:.3f}, "
       f"worst spread {worst.value:.2f} <= {worst.tolerance:.2f}")


def test_criterion_10_estimate_sweeps(capsys, config_runs):
    rep = config_runs["sweep_paraboloid"][0]
    rows = _rows(rep)
    checks = {}
    for m in ("magnetic", "electric", "extended"):
        checks[f"{m} variation < 2"] = rows[f"{m}_ratio_variation"].value < 2.0
        checks[f"{m} invalid <= 10%"] = rows[f"{m}_invalid_fraction"].value <= 0.1
        checks[f"{m} uses 10 fields x 4 alphas"] = rep.extra[m]["cells"] == 40
    checks["runtime < 10 min"] = rep.wall_time < 600
    detail = ", ".join(f"{m} {rows[f'{m}_ratio_variation'].value:.3f}" for m in ("magnetic", "electric", "extended"))
    _gate(capsys, 10, "estimate sweeps over the smoothing family", checks,
          f"variation {detail}; {rep.wall_time:.1f} s")


def test_criterion_11_w23_probe(capsys, config_runs):
    c32 = config_runs["w23_cusp32"][0]
    c12 = config_runs["w23_cusp12"][0]
    change = _rows(c32)["finest_relative_change"].value
    growth = c12.extra["growth"]
    _gate(capsys, 11, "W2,3 membership probe", {
        "cusp32 change < 5%": change < 0.05,
        "cusp12 grows > 2x per level": all(g > 2 for g in growth),
    }, f"cusp32 change {change:.1e}, cusp12 growth {', '.join(f'{g:.1f}' for g in growth)}")


def test_criterion_12_determinism(capsys, config_runs):
    differing = [name for name, (_, a, b) in config_runs.items() if a != b or not a]
    verdicts = {name: rep.overall_pass for name, (rep, _, _) in config_runs.items()}
    _gate(capsys, 12, "byte-identical reruns", {
        "all outputs identical": not differing,
        "every config meets its expected verdict": all(verdicts.values()),
    }, f"{len(config_runs)} configs" + (f", differing: {', '.join(differing)}" if differing else ""))
