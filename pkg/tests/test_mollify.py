import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import dblquad, quad

from maxreg.errors import PreconditionError, SelfTestError
from maxreg.fields import ScalarField
from maxreg.geometry import make_graph
from maxreg.mollify import (
    MollifierKernel,
    SmoothingFamily,
    family_checks,
    mollify_phi,
    shift_constant,
    sobolev_ratio_probe,
    union_slope,
)
from maxreg.quadrature import DomainPatch, QuadratureSpec

KERNEL = MollifierKernel()


def _radial(power):
    # independent of the kernel module: plain radial profile in scipy
    f = lambda r: r ** (1 + power) * math.exp(-1 / (1 - r * r)) if r < 1 else 0.0
    return 2 * math.pi * quad(f, 0, 1, epsabs=1e-14, epsrel=1e-12, limit=200)[0]


def test_kernel_has_unit_mass_dblquad():
    mass, _ = dblquad(lambda y, x: float(KERNEL.evaluate(np.array([x, y]))), -1, 1,
                      lambda x: -math.sqrt(1 - x * x), lambda x: math.sqrt(1 - x * x), epsabs=1e-10)
    assert abs(mass - 1.0) < 1e-8


def test_kernel_scaling_keeps_mass():
    k = MollifierKernel(support_radius=0.5)
    assert abs(k.mass - 1.0) < 1e-8
    assert float(k.evaluate(np.array([0.6, 0.0]))) == 0.0


def test_first_abs_moment_matches_radial_oracle():
    m1 = _radial(1) / _radial(0)
    assert abs(KERNEL.first_abs_moment - m1) < 1e-8
    assert abs(KERNEL.radial_first_moment() - m1) < 1e-12


def test_discrete_weights_normalised_and_symmetric():
    assert math.isclose(KERNEL.weights.sum(), 1.0, rel_tol=1e-14)
    np.testing.assert_allclose(KERNEL.weights @ KERNEL.nodes, 0.0, atol=1e-15)
    assert np.all(KERNEL.weights > 0)
    assert abs(KERNEL.mass - 1.0) < 1e-8
    KERNEL.self_test()


def test_self_test_rejects_coarse_rule():
    with pytest.raises(SelfTestError):
        MollifierKernel(panels=1, order=1, n_theta=4).self_test()


def test_kernel_derivatives_match_fd():
    z = np.array([[0.3, -0.2], [-0.5, 0.4], [0.1, 0.05]])
    h = 1e-5
    fd = np.stack([(KERNEL.evaluate(z + h * e) - KERNEL.evaluate(z - h * e)) / (2 * h) for e in np.eye(2)], -1)
    np.testing.assert_allclose(KERNEL.gradient(z), fd, rtol=1e-7, atol=1e-9)
    fdh = np.stack([(KERNEL.gradient(z + h * e) - KERNEL.gradient(z - h * e)) / (2 * h) for e in np.eye(2)], -1)
    np.testing.assert_allclose(KERNEL.hessian(z), fdh, rtol=1e-6, atol=1e-8)


def test_shift_constant():
    m = shift_constant(2.0, KERNEL, 0.5)
    assert math.isclose(m.value, 2.0 * KERNEL.first_abs_moment * 1.5)
    assert not m.free
    assert shift_constant(0.0, KERNEL, 0.1).free
    with pytest.raises(ValueError):
        shift_constant(1.0, KERNEL, 0.0)


def test_family_preconditions():
    phi = make_graph("abs")
    with pytest.raises(PreconditionError):
        SmoothingFamily(phi, KERNEL, KERNEL.first_abs_moment)  # M must exceed K m1
    with pytest.raises(PreconditionError):
        SmoothingFamily.build(phi, alphas=(0.5, 1.5))
    fam = SmoothingFamily.build(phi)
    with pytest.raises(PreconditionError):
        mollify_phi(fam, 0.0, np.zeros((1, 2)))


def test_quadratic_base_closed_form():
    # phi = c|x|^2/2: the symmetric rule gives phi_alpha = phi + c alpha^2 m2 / 2 + M alpha
    c = 0.8
    fam = SmoothingFamily.build(make_graph("paraboloid", c=c))
    m2 = float(KERNEL.weights @ np.sum(KERNEL.nodes**2, axis=1))
    assert abs(m2 - _radial(2) / _radial(0)) < 1e-8
    x = np.array([[0.2, -0.3], [0.0, 0.0], [0.5, 0.5]])
    for a in fam.alphas:
        expect = 0.5 * c * np.sum(x * x, axis=1) + 0.5 * c * a * a * m2 + fam.shift_M * a
        np.testing.assert_allclose(fam.value(a, x), expect, atol=1e-14)
        np.testing.assert_allclose(fam.gradient(a, x), c * x, atol=1e-14)
        np.testing.assert_allclose(fam.hessian(a, x), np.broadcast_to(c * np.eye(2), (3, 2, 2)), atol=1e-14)


@pytest.mark.parametrize("name", ["abs", "wedge", "ripple"])
def test_family_gradient_matches_fd(name):
    fam = SmoothingFamily.build(make_graph(name))
    x = np.array([[0.23, -0.31], [-0.4, 0.12]])
    g = fam.graph(0.2)
    np.testing.assert_allclose(g.gradient(x), g.fd_gradient(x, 1e-5), atol=1e-8)


def test_kinked_family_hessian_is_close_to_fd():
    # kinked bases: one derivative on the kernel; limited by the angular rule
    fam = SmoothingFamily.build(make_graph("abs"))
    x = np.array([[0.1, 0.05], [0.3, -0.2]])
    g = fam.graph(0.2)
    fd = g.fd_hessian(x, 1e-4)
    assert np.abs(g.hessian(x) - fd).max() < 2e-2 * np.abs(fd).max()


def test_abs_family_passes_all_checks():
    fam = SmoothingFamily.build(make_graph("abs"))
    rep = family_checks(fam, samples=200, seed=0, lipschitz_tol=1e-6)
    assert rep.passed, rep.to_json()
    assert {r.check_name for r in rep.rows} == {"monotonicity", "lipschitz", "convexity", "nesting"}
    assert len(rep.rows) == 16
    for r in rep.check("lipschitz"):
        assert r.worst_value <= 1 + 1e-6


def test_wedge_family_fails_convexity_only():
    fam = SmoothingFamily.build(make_graph("wedge"))
    rep = family_checks(fam, samples=200)
    assert {r.check_name for r in rep.failures()} == {"convexity"}


def test_flat_family_uses_free_shift():
    fam = SmoothingFamily.build(make_graph("flat"), free_shift=0.3)
    assert fam.shift_M == 0.3 and fam.margin == math.inf
    assert family_checks(fam, samples=50).passed


def test_union_slope_matches_rate_ceiling():
    fam = SmoothingFamily.build(make_graph("abs"))
    sl = union_slope(fam)
    assert abs(sl.slope - sl.predicted) <= 0.2 * sl.predicted
    assert math.isclose(sl.predicted, fam.shift_M + KERNEL.first_abs_moment)


def test_report_serialisation_deterministic():
    fam = SmoothingFamily.build(make_graph("wedge"))
    a = family_checks(fam, samples=30, seed=4)
    b = family_checks(fam, samples=30, seed=4)
    assert a.to_csv() == b.to_csv() and a.to_json() == b.to_json()
    assert a.to_csv().splitlines()[0] == "alpha,check_name,worst_value,pass"


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 0.9), st.floats(-0.9, 0.9), st.floats(-0.9, 0.9))
def test_family_lies_above_base(alpha, a, b):
    fam = SmoothingFamily.build(make_graph("abs"))
    x = np.array([[a, b]])
    assert fam.value(alpha, x)[0] > fam.base(x)[0]


def test_sobolev_ratio_probe():
    patch = DomainPatch(make_graph("paraboloid"), 1.0, 1.0, QuadratureSpec(8, 2))
    u = ScalarField(lambda x: x[:, 0], lambda x: np.tile([1.0, 0.0, 0.0], (len(x), 1)))
    r = sobolev_ratio_probe(patch, u)
    assert np.isfinite(r) and r > 0
    with pytest.raises(PreconditionError):
        sobolev_ratio_probe(patch, ScalarField.constant(1.0))
