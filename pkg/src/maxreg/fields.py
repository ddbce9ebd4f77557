"""Vector calculus on graph-domain patches.

Conventions: points have shape ``(n, 3)``; a vector field returns values
``(n, 3)`` and a Jacobian ``J[n, i, j] = d_j u_i``; a coefficient field
returns ``s[n, j, k]`` and its derivative ``ds[n, i, j, k] = d_i s_jk``.
Inner products are ``<a, b> = sum a_k conj(b_k)``.

Identities checked here assume every field vanishes on the lateral and top
faces of the patch, which the catalog guarantees by multiplying with a
radial cutoff supported in ``|x| < rho``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import CatalogError, PreconditionError
from .geometry import GraphFunction, weingarten
from .matalg import random_spd, sym_eigvals
from .quadrature import DomainPatch

Array = np.ndarray


# ---------------------------------------------------------------------------
# symbolic helpers (catalog entries are written in sympy and lambdified)


def _symbols():
    import sympy as sp

    return sp.symbols("x1 x2 x3", real=True)


def _canonical(expr):
    """Replace free symbols named x1, x2, x3 by the module's symbols.

    sympy distinguishes ``Symbol("x1")`` from ``Symbol("x1", real=True)``;
    without this a user expression would differentiate to zero.
    """
    import sympy as sp

    expr = sp.sympify(expr)
    by_name = {v.name: v for v in _symbols()}
    subs = {}
    for v in expr.free_symbols:
        if v.name not in by_name:
            raise ValueError(f"unexpected symbol {v.name!r}; expressions use x1, x2, x3")
        subs[v] = by_name[v.name]
    return expr.xreplace(subs)


def _lambdify_list(exprs, syms) -> Callable[[Array], Array]:
    import sympy as sp

    fns = [sp.lambdify(syms, e, "numpy") for e in exprs]

    def call(x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        n = len(x)
        cols = [np.broadcast_to(np.asarray(f(x[:, 0], x[:, 1], x[:, 2]), dtype=float), (n,))
                for f in fns]
        return np.stack(cols, axis=-1)

    return call


# ---------------------------------------------------------------------------
# field types


def _central(fn: Callable[[Array], Array], x: Array, h: float) -> Array:
    """Central differences; result has the derivative index last."""
    cols = []
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        cols.append((fn(x + e) - fn(x - e)) / (2 * h))
    return np.stack(cols, axis=-1)


def _fd(fn: Callable[[Array], Array], x: Array, h: float, richardson: bool) -> Array:
    d = _central(fn, x, h)
    if not richardson:
        return d
    return (4 * _central(fn, x, h / 2) - d) / 3


@dataclass(frozen=True)
class ScalarField:
    """Scalar field with optional gradient oracle (central differences otherwise)."""

    evaluate: Callable[[Array], Array]
    grad_oracle: Callable[[Array], Array] | None = None
    fd_step: float = 1e-4
    name: str = "scalar"

    def __call__(self, x: Array) -> Array:
        return self.evaluate(np.asarray(x, dtype=float))

    def gradient(self, x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        if self.grad_oracle is not None:
            return self.grad_oracle(x)
        return self.fd_gradient(x, self.fd_step)

    def fd_gradient(self, x: Array, h: float, richardson: bool = True) -> Array:
        return _fd(self, np.asarray(x, dtype=float), h, richardson)

    def __mul__(self, other: ScalarField) -> ScalarField:
        return ScalarField(
            lambda x: self(x) * other(x),
            lambda x: self.gradient(x) * other(x)[:, None] + self(x)[:, None] * other.gradient(x),
            self.fd_step,
            f"{self.name}*{other.name}",
        )

    @classmethod
    def from_sympy(cls, expr, name: str = "scalar") -> ScalarField:
        import sympy as sp

        syms = _symbols()
        expr = _canonical(expr)
        val = _lambdify_list([expr], syms)
        grad = _lambdify_list([sp.diff(expr, s) for s in syms], syms)
        return cls(lambda x: val(x)[:, 0], grad, name=name)

    @classmethod
    def constant(cls, c: complex) -> ScalarField:
        return cls(
            lambda x: np.full(len(x), c),
            lambda x: np.zeros((len(x), 3), dtype=np.result_type(c, float)),
            name=f"const({c})",
        )


@dataclass(frozen=True)
class VectorField:
    """Three-component field with optional Jacobian oracle.

    Without an oracle the Jacobian is a central difference with step
    ``fd_step`` and one Richardson extrapolation step (error O(h^4)).
    """

    evaluate: Callable[[Array], Array]
    jac_oracle: Callable[[Array], Array] | None = None
    fd_step: float = 1e-4
    richardson: bool = True
    name: str = "vector"

    def __call__(self, x: Array) -> Array:
        return self.evaluate(np.asarray(x, dtype=float))

    def jacobian(self, x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        if self.jac_oracle is not None:
            return self.jac_oracle(x)
        return self.fd_jacobian(x, self.fd_step, self.richardson)

    def fd_jacobian(self, x: Array, h: float, richardson: bool = True) -> Array:
        return _fd(self, np.asarray(x, dtype=float), h, richardson)

    def without_oracle(self, fd_step: float | None = None) -> VectorField:
        return VectorField(
            self.evaluate, None, self.fd_step if fd_step is None else fd_step,
            self.richardson, self.name + "-fd",
        )

    def __add__(self, other: VectorField) -> VectorField:
        return VectorField(
            lambda x: self(x) + other(x),
            lambda x: self.jacobian(x) + other.jacobian(x),
            self.fd_step,
            self.richardson,
            f"{self.name}+{other.name}",
        )

    def scaled(self, c: complex) -> VectorField:
        return VectorField(
            lambda x: c * self(x), lambda x: c * self.jacobian(x), self.fd_step, self.richardson,
            f"{c}*{self.name}",
        )

    def times(self, f: ScalarField) -> VectorField:
        """Product ``f u`` with the product rule for the Jacobian."""
        return VectorField(
            lambda x: f(x)[:, None] * self(x),
            lambda x: f(x)[:, None, None] * self.jacobian(x)
            + self(x)[:, :, None] * f.gradient(x)[:, None, :],
            self.fd_step,
            self.richardson,
            f"{f.name}*{self.name}",
        )

    @classmethod
    def from_sympy(cls, exprs, name: str = "vector") -> VectorField:
        import sympy as sp

        syms = _symbols()
        exprs = [_canonical(e) for e in exprs]
        val = _lambdify_list(exprs, syms)
        jac = _lambdify_list([sp.diff(e, s) for e in exprs for s in syms], syms)
        return cls(val, lambda x: jac(x).reshape(-1, 3, 3), name=name)

    @classmethod
    def constant(cls, c) -> VectorField:
        c = np.asarray(c)
        return cls(
            lambda x: np.broadcast_to(c, (len(x), 3)).copy(),
            lambda x: np.zeros((len(x), 3, 3), dtype=np.result_type(c, float)),
            name="const",
        )


@dataclass(frozen=True)
class CoefficientField:
    """Real symmetric matrix field with spectral bounds ``beta0 <= s <= beta1``."""

    evaluate: Callable[[Array], Array]
    deriv_oracle: Callable[[Array], Array] | None
    beta0: float
    beta1: float
    constant: bool = False
    fd_step: float = 1e-4
    name: str = "coefficient"
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if not 0 < self.beta0 <= self.beta1:
            raise PreconditionError("coefficient bounds must satisfy 0 < beta0 <= beta1")

    def __call__(self, x: Array) -> Array:
        s = self.evaluate(np.asarray(x, dtype=float))
        return 0.5 * (s + np.swapaxes(s, -1, -2))

    def derivative(self, x: Array) -> Array:
        """``ds[n, i, j, k] = d_i s_jk``."""
        x = np.asarray(x, dtype=float)
        if self.constant:
            return np.zeros((len(x), 3, 3, 3))
        if self.deriv_oracle is not None:
            return self.deriv_oracle(x)
        return self.fd_derivative(x, self.fd_step)

    def fd_derivative(self, x: Array, h: float) -> Array:
        d = _fd(self, np.asarray(x, dtype=float), h, True)  # [n, j, k, i]
        return np.moveaxis(d, -1, 1)

    def inverse(self, x: Array) -> Array:
        s = self(x)
        det = np.linalg.det(s)
        if np.any(np.abs(det) < 1e-300):
            raise PreconditionError("coefficient matrix is singular")
        return np.linalg.inv(s)

    def check_bounds(self, x: Array, slack: float = 1e-12) -> bool:
        lam = sym_eigvals(self(x))
        return bool(
            np.all(lam[:, 2] >= self.beta0 * (1 - slack)) and np.all(lam[:, 0] <= self.beta1 * (1 + slack))
        )

    @classmethod
    def from_sympy(cls, matrix, beta0: float, beta1: float, name: str, params=None) -> CoefficientField:
        import sympy as sp

        syms = _symbols()
        entries = [_canonical(matrix[j, k]) for j in range(3) for k in range(3)]
        val = _lambdify_list(entries, syms)
        der = _lambdify_list([sp.diff(e, s) for s in syms for e in entries], syms)
        const = all(sp.diff(e, s) == 0 for e in entries for s in syms)
        return cls(
            lambda x: val(x).reshape(-1, 3, 3),
            lambda x: der(x).reshape(-1, 3, 3, 3),
            beta0,
            beta1,
            const,
            name=name,
            params=dict(params or {}),
        )


@dataclass(frozen=True)
class CutoffField(ScalarField):
    """Radial cutoff: 1 on ``|x - c| <= inner``, 0 beyond ``outer``.

    The transition is the quintic smoothstep ``6t^5 - 15t^4 + 10t^3``, so
    the cutoff is C^2 with analytic gradient.
    """

    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    inner: float = 0.5
    outer: float = 1.0

    @classmethod
    def ball(cls, rho: float, center=(0.0, 0.0, 0.0)) -> CutoffField:
        c = np.asarray(center, dtype=float)
        inner = 0.5 * rho
        width = rho - inner

        def prof(x: Array) -> tuple[Array, Array, Array]:
            d = x - c
            r = np.sqrt(np.sum(d * d, axis=1))
            t = np.clip((r - inner) / width, 0.0, 1.0)
            val = 1.0 - t**3 * (10 - 15 * t + 6 * t * t)
            dval = -30 * t * t * (1 - t) ** 2 / width
            return d, r, val, dval

        def ev(x: Array) -> Array:
            return prof(x)[2]

        def gr(x: Array) -> Array:
            d, r, _, dv = prof(x)
            return (dv / np.where(r > 0, r, 1.0))[:, None] * d

        return cls(ev, gr, name=f"cutoff({rho})", center=tuple(c), inner=inner, outer=rho)


# ---------------------------------------------------------------------------
# pointwise operators


def rot_from_jac(J: Array) -> Array:
    return np.stack([J[:, 2, 1] - J[:, 1, 2], J[:, 0, 2] - J[:, 2, 0], J[:, 1, 0] - J[:, 0, 1]], -1)


def rot(u: VectorField, x: Array) -> Array:
    return rot_from_jac(u.jacobian(np.atleast_2d(x)))


def div(u: VectorField, x: Array) -> Array:
    return np.einsum("nii->n", u.jacobian(np.atleast_2d(x)))


def grad(f: ScalarField, x: Array) -> Array:
    return f.gradient(np.atleast_2d(x))


def weighted(s: CoefficientField, u: VectorField) -> VectorField:
    """The field ``s u``; its Jacobian is ``d_j(s_ik u_k) = d_j s_ik u_k + s_ik d_j u_k``."""

    def jac(x: Array) -> Array:
        return np.einsum("njik,nk->nij", s.derivative(x), u(x)) + np.einsum(
            "nik,nkj->nij", s(x), u.jacobian(x)
        )

    return VectorField(lambda x: np.einsum("nik,nk->ni", s(x), u(x)), jac, u.fd_step,
                       u.richardson, f"{s.name}*{u.name}")


def div_weighted(s: CoefficientField, u: VectorField, x: Array) -> Array:
    """``div(s u) = sum_ik (d_i s_ik) u_k + s_ik d_i u_k``."""
    x = np.atleast_2d(x)
    return np.einsum("niik,nk->n", s.derivative(x), u(x)) + np.einsum(
        "nik,nki->n", s(x), u.jacobian(x)
    )


# ---------------------------------------------------------------------------
# norms


def _sq(a: Array, axes: tuple[int, ...]) -> Array:
    return np.sum(np.abs(a) ** 2, axis=axes)


def l2_norm(u: VectorField, patch: DomainPatch, s: CoefficientField | None = None) -> float:
    """``(int <s u, u>)^(1/2)`` (``s = I`` when omitted)."""
    if s is None:
        val = patch.integrate(lambda x: _sq(u(x), (1,)))
    else:
        val = patch.integrate(
            lambda x: np.einsum("nik,nk,ni->n", s(x), u(x), np.conj(u(x))).real
        )
    return math.sqrt(max(float(val), 0.0))


def f_norm(u: VectorField, s: CoefficientField, patch: DomainPatch) -> float:
    """``(|rot u|^2 + |div(s u)|^2 + (s u, u))^(1/2)`` over the patch."""

    def integrand(x: Array) -> Array:
        val = u(x)
        J = u.jacobian(x)
        sx = s(x)
        dv = np.einsum("niik,nk->n", s.derivative(x), val) + np.einsum("nik,nki->n", sx, J)
        mass = np.einsum("nik,nk,ni->n", sx, val, np.conj(val)).real
        return _sq(rot_from_jac(J), (1,)) + np.abs(dv) ** 2 + mass

    return math.sqrt(max(float(patch.integrate(integrand)), 0.0))


def sobolev_norm(u: VectorField, patch: DomainPatch) -> float:
    """``(int |grad u|^2 + |u|^2)^(1/2)``."""
    val = patch.integrate(lambda x: _sq(u.jacobian(x), (1, 2)) + _sq(u(x), (1,)))
    return math.sqrt(max(float(val), 0.0))


# ---------------------------------------------------------------------------
# weak boundary conditions


def weak_tangential_residual(w: VectorField, h: VectorField, patch: DomainPatch) -> complex:
    """``int <w, rot h> - int <rot w, h>``.

    By the divergence theorem this equals ``int_S <w x nu, h> dS``; it
    vanishes for every ``h`` exactly when the tangential trace of ``w`` does.
    """

    def integrand(x: Array) -> Array:
        wv, hv = w(x), h(x)
        rh = rot_from_jac(h.jacobian(x))
        rw = rot_from_jac(w.jacobian(x))
        return np.sum(wv * np.conj(rh), axis=1) - np.sum(rw * np.conj(hv), axis=1)

    return complex(patch.integrate(integrand))


def weak_normal_residual(
    w: VectorField, s: CoefficientField, f: ScalarField, patch: DomainPatch
) -> complex:
    """``int <s w, grad f> + int div(s w) conj(f)``; equals ``int_S <s w, nu> conj(f) dS``."""
    sw = weighted(s, w)

    def integrand(x: Array) -> Array:
        v = sw(x)
        return np.sum(v * np.conj(f.gradient(x)), axis=1) + np.einsum(
            "nii->n", sw.jacobian(x)
        ) * np.conj(f(x))

    return complex(patch.integrate(integrand))


def _normal_and_derivative(phi: GraphFunction, x: Array) -> tuple[Array, Array]:
    """``N = (d1 phi, d2 phi, -1)`` and ``dN[n, i, j] = d_j N_i``."""
    # volume nodes repeat each x' across the vertical levels
    xp, inv = np.unique(x[:, :2], axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    g = phi.gradient(xp)[inv]
    H = phi.hessian(xp)[inv]
    N = np.column_stack([g, -np.ones(len(x))])
    dN = np.zeros((len(x), 3, 3))
    dN[:, :2, :2] = H
    return N, dN


def make_tangential_zero(g: VectorField, phi: GraphFunction) -> VectorField:
    """``<g, N> N / |N|^2``: parallel to the normal, so the tangential trace vanishes."""

    def parts(x: Array):
        N, dN = _normal_and_derivative(phi, x)
        gv = g(x)
        a = np.einsum("ni,ni->n", gv, N)
        n2 = np.einsum("ni,ni->n", N, N)
        return N, dN, gv, a, n2

    def ev(x: Array) -> Array:
        N, _, _, a, n2 = parts(x)
        return (a / n2)[:, None] * N

    def jac(x: Array) -> Array:
        N, dN, gv, a, n2 = parts(x)
        da = np.einsum("nij,ni->nj", g.jacobian(x), N) + np.einsum("ni,nij->nj", gv, dN)
        dn2 = 2 * np.einsum("ni,nij->nj", N, dN)
        return (
            (N[:, :, None] * da[:, None, :] + a[:, None, None] * dN) / n2[:, None, None]
            - (a / n2**2)[:, None, None] * N[:, :, None] * dn2[:, None, :]
        )

    return VectorField(ev, jac, g.fd_step, g.richardson, f"tan0({g.name})")


def make_normal_zero(g: VectorField, s: CoefficientField, phi: GraphFunction) -> VectorField:
    """``w = g - (<s g, N> / <s q, N>) q`` with ``q = s^{-1} N``, so ``<s w, N> = 0``."""

    def parts(x: Array):
        N, dN = _normal_and_derivative(phi, x)
        sx = s(x)
        if np.any(np.abs(np.linalg.det(sx)) < 1e-300):
            raise PreconditionError("coefficient matrix is singular")
        q = np.linalg.solve(sx, N[:, :, None])[:, :, 0]
        gv = g(x)
        a = np.einsum("nik,nk,ni->n", sx, gv, N)
        n2 = np.einsum("ni,ni->n", N, N)  # <s q, N> = |N|^2
        return N, dN, sx, q, gv, a, n2

    def ev(x: Array) -> Array:
        _, _, _, q, gv, a, n2 = parts(x)
        return gv - (a / n2)[:, None] * q

    def jac(x: Array) -> Array:
        N, dN, sx, q, gv, a, n2 = parts(x)
        ds = s.derivative(x)  # [n, j, i, k] = d_j s_ik
        Jg = g.jacobian(x)
        da = (
            np.einsum("nij,nik,nk->nj", dN, sx, gv)
            + np.einsum("ni,njik,nk->nj", N, ds, gv)
            + np.einsum("ni,nik,nkj->nj", N, sx, Jg)
        )
        # d_j q = s^{-1} (d_j N - (d_j s) q)
        rhs = dN - np.einsum("njik,nk->nij", ds, q)
        dq = np.linalg.solve(sx, rhs)
        dn2 = 2 * np.einsum("ni,nij->nj", N, dN)
        c = a / n2
        dc = da / n2[:, None] - (a / n2**2)[:, None] * dn2
        return Jg - q[:, :, None] * dc[:, None, :] - c[:, None, None] * dq

    return VectorField(ev, jac, g.fd_step, g.richardson, f"nor0({g.name})")


# ---------------------------------------------------------------------------
# integration-by-parts identities


@dataclass(frozen=True)
class IdentityReport:
    lhs: float
    rhs: float

    @property
    def residual(self) -> float:
        return self.lhs - self.rhs

    @property
    def relative(self) -> float:
        scale = max(abs(self.lhs), abs(self.rhs))
        return abs(self.residual) / scale if scale > 0 else 0.0


def normal_trace_defect(w: VectorField, patch: DomainPatch, s: CoefficientField | None = None) -> float:
    """``max |<s w, nu>| / max(1, max |w|)`` over the surface nodes."""
    nodes, _, normals = patch.surface_rule()
    wv = w(nodes)
    sw = wv if s is None else np.einsum("nik,nk->ni", s(nodes), wv)
    scale = max(1.0, float(np.max(np.abs(wv)))) if len(wv) else 1.0
    return float(np.max(np.abs(np.sum(sw * normals, axis=1)))) / scale


def tangential_trace_defect(u: VectorField, patch: DomainPatch) -> float:
    """``max |u x nu| / max(1, max |u|)`` over the surface nodes."""
    nodes, _, normals = patch.surface_rule()
    uv = u(nodes)
    scale = max(1.0, float(np.max(np.abs(uv)))) if len(uv) else 1.0
    return float(np.max(np.abs(np.cross(uv, normals)))) / scale


def gaffney_residual(w: VectorField, patch: DomainPatch, trace_tol: float = 1e-10) -> IdentityReport:
    """``int |rot w|^2 + |div w|^2`` against ``int |grad w|^2 + int_S <A w, w> dS``.

    ``A`` is the Weingarten matrix of the bottom face.  Raises
    ``PreconditionError`` if the normal trace of ``w`` is not zero on the
    surface nodes.
    """
    defect = normal_trace_defect(w, patch)
    if defect > trace_tol:
        raise PreconditionError(f"normal trace of w is {defect:.3e}, above {trace_tol:.1e}")

    def vol(x: Array) -> Array:
        J = w.jacobian(x)
        return np.column_stack(
            [_sq(rot_from_jac(J), (1,)) + np.abs(np.einsum("nii->n", J)) ** 2, _sq(J, (1, 2))]
        )

    def surf(x: Array, nu: Array) -> Array:
        A = weingarten(patch.graph, x[:, :2])
        wv = w(x)
        return np.einsum("nij,nj,ni->n", A, wv, np.conj(wv)).real

    lhs, grad_sq = patch.integrate(vol)
    bdry = patch.integrate_surface(surf)
    return IdentityReport(float(lhs), float(grad_sq) + float(bdry))


def boundary_K_complex(s: Array, nu: Array, grad_u: Array, u: Array) -> Array:
    """``s_jm s_kn (nu_k d_j u_m - nu_j d_k u_m) conj(u_n)`` with ``grad_u[i, j] = d_i u_j``.

    Accepts single arguments or stacks with a leading axis.
    """
    single = np.ndim(u) == 1
    s, nu, D, u = (np.asarray(a) for a in (s, nu, grad_u, u))
    if single:
        s, nu, D, u = s[None], nu[None], D[None], u[None]
    ub = np.conj(u)
    t1 = np.einsum("njm,nkl,nk,njm,nl->n", s, s, nu, D, ub)
    t2 = np.einsum("njm,nkl,nj,nkm,nl->n", s, s, nu, D, ub)
    out = t1 - t2
    return out[0] if single else out


def boundary_K(s: Array, nu: Array, grad_u: Array, u: Array) -> Array | float:
    """Real part of ``boundary_K_complex``."""
    out = np.real(boundary_K_complex(s, nu, grad_u, u))
    return float(out) if np.ndim(out) == 0 else out


def boundary_K_closed_form(s: Array, lam: Array, u3: complex) -> float:
    """``sum_{j=1,2} (s_jj s_33 - s_3j s_j3) lam_j |u3|^2``."""
    return float(
        sum((s[j, j] * s[2, 2] - s[2, j] * s[j, 2]) * lam[j] for j in range(2)) * abs(u3) ** 2
    )


def boundary_K_samples(n: int, seed: int = 0, lo: float = 0.1, hi: float = 10.0) -> tuple[Array, Array]:
    """``K`` and its closed form at ``n`` random convex boundary points.

    Each sample is a point where the outward normal is ``(0, 0, -1)`` and the
    principal curvatures ``lam_j >= 0`` sit on the coordinate axes.  The data
    are tangential-zero: ``u = (0, 0, u3)`` with ``d_i u_j = -delta_ij lam_j u3``
    for ``i, j`` in ``{1, 2}``; the remaining derivatives are random and do
    not enter ``K``.
    """
    rng = np.random.default_rng(seed)
    s = random_spd(rng, n, lo, hi)
    lam = rng.uniform(0.0, 5.0, (n, 2))
    u3 = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    D = rng.standard_normal((n, 3, 3)) + 1j * rng.standard_normal((n, 3, 3))
    D[:, :2, :2] = 0.0
    D[:, 0, 0] = -lam[:, 0] * u3
    D[:, 1, 1] = -lam[:, 1] * u3
    u = np.zeros((n, 3), dtype=complex)
    u[:, 2] = u3
    nu = np.broadcast_to([0.0, 0.0, -1.0], (n, 3))
    K = boundary_K(s, nu, D, u)
    closed = np.array([boundary_K_closed_form(s[k], lam[k], u3[k]) for k in range(n)])
    return np.atleast_1d(K), closed


@dataclass(frozen=True)
class ElectricReport:
    lhs: float
    grad_term: float
    boundary_term: float
    grad_u_sq: float
    l2_u_sq: float
    delta: float
    needed_C: float
    i3_bound_ok: bool

    @property
    def defect(self) -> float:
        """``I3``: what is left after the gradient and boundary terms."""
        return self.lhs - self.grad_term - self.boundary_term

    @property
    def residual(self) -> float:
        return abs(self.defect)

    @property
    def relative(self) -> float:
        scale = max(abs(self.lhs), abs(self.grad_term) + abs(self.boundary_term))
        return self.residual / scale if scale > 0 else 0.0


def electric_identity_check(
    u: VectorField,
    s: CoefficientField,
    patch: DomainPatch,
    delta: float | None = None,
    C: float | None = None,
) -> ElectricReport:
    """``int |rot(su)|^2 + |div(su)|^2`` minus ``int |grad(su)|^2 + int_S K dS``.

    For constant ``s`` the defect ``I3`` is zero and the residual measures
    quadrature error.  For variable ``s`` the defect is bounded against
    ``delta |grad u|^2 + C |u|^2``; ``needed_C`` is the smallest ``C`` that
    works for this field (``delta`` defaults to ``beta0^2 / 4``).
    """
    v = weighted(s, u)

    def vol(x: Array) -> Array:
        Jv = v.jacobian(x)
        return np.column_stack(
            [
                _sq(rot_from_jac(Jv), (1,)) + np.abs(np.einsum("nii->n", Jv)) ** 2,
                _sq(Jv, (1, 2)),
                _sq(u.jacobian(x), (1, 2)),
                _sq(u(x), (1,)),
            ]
        )

    def surf(x: Array, nu: Array) -> Array:
        grad_u = np.swapaxes(u.jacobian(x), 1, 2)
        return boundary_K(s(x), nu, grad_u, u(x))

    lhs, g2, gu2, l2 = (float(t) for t in patch.integrate(vol))
    kint = float(patch.integrate_surface(surf))
    delta = 0.25 * s.beta0**2 if delta is None else delta
    i3 = abs(lhs - g2 - kint)
    needed = max(0.0, (i3 - delta * gu2) / l2) if l2 > 0 else (0.0 if i3 <= delta * gu2 else math.inf)
    ok = math.isfinite(needed) and (C is None or needed <= C)
    return ElectricReport(lhs, g2, kint, gu2, l2, delta, needed, ok)


@dataclass(frozen=True)
class MinorTerms:
    lhs33: float
    lhs34: float
    grad_norm: float
    l2_norm: float


def minor_term_probe(s: CoefficientField, v: VectorField, patch: DomainPatch) -> MinorTerms:
    """Integrals of ``|d_i s_jk|^2 |v_l|^2`` and ``|s_ij d_k s_lm v_n d_p v_q|`` summed
    over all indices, with ``|grad v|`` and ``|v|`` in ``L2``."""

    def integrand(x: Array) -> Array:
        ds = s.derivative(x)
        vv = v(x)
        Jv = v.jacobian(x)
        a = np.sum(np.abs(s(x)), axis=(1, 2))
        b = np.sum(np.abs(ds), axis=(1, 2, 3))
        c = np.sum(np.abs(vv), axis=1)
        d = np.sum(np.abs(Jv), axis=(1, 2))
        return np.column_stack(
            [_sq(ds, (1, 2, 3)) * _sq(vv, (1,)), a * b * c * d, _sq(Jv, (1, 2)), _sq(vv, (1,))]
        )

    l33, l34, g2, v2 = (float(t) for t in patch.integrate(integrand))
    return MinorTerms(l33, l34, math.sqrt(g2), math.sqrt(v2))


def fit_minor_constant(probes: list[MinorTerms], delta: float, which: str = "33") -> float:
    """Smallest ``C`` with ``lhs <= delta |grad v|^2 + C |v|^2`` on every probe."""
    out = 0.0
    for p in probes:
        lhs = p.lhs33 if which == "33" else p.lhs34
        if p.l2_norm == 0:
            if lhs > delta * p.grad_norm**2:
                return math.inf
            continue
        out = max(out, (lhs - delta * p.grad_norm**2) / p.l2_norm**2)
    return out


def lemma33_check(s: CoefficientField, v: VectorField, patch: DomainPatch, C_budget: float) -> float:
    """``int |grad(sv)|^2 - |rot(sv)|^2 + beta1^2 |rot v|^2 - (beta0^2/2) |grad v|^2 + C |v|^2``."""
    sv = weighted(s, v)

    def integrand(x: Array) -> Array:
        Jsv = sv.jacobian(x)
        Jv = v.jacobian(x)
        return (
            _sq(Jsv, (1, 2))
            - _sq(rot_from_jac(Jsv), (1,))
            + s.beta1**2 * _sq(rot_from_jac(Jv), (1,))
            - 0.5 * s.beta0**2 * _sq(Jv, (1, 2))
            + C_budget * _sq(v(x), (1,))
        )

    return float(patch.integrate(integrand))


def trace_identity_errors(J: Array) -> tuple[Array, Array]:
    """Pointwise ``|grad v|^2 - tr(U U^*)`` and ``|grad v|^2 - |rot v|^2 - tr(U conj(U))``
    for real Jacobians ``J`` (``U = J``, ``U_kj = d_j v_k``)."""
    g2 = _sq(J, (1, 2))
    t2 = np.einsum("nij,nij->n", J, np.conj(J)).real
    t3 = np.einsum("nij,nji->n", J, np.conj(J)).real
    return g2 - t2, g2 - _sq(rot_from_jac(J), (1,)) - t3


# ---------------------------------------------------------------------------
# catalogs


def _coef_identity() -> CoefficientField:
    import sympy as sp

    return CoefficientField.from_sympy(sp.eye(3), 1.0, 1.0, "identity")


def _coef_scalar(c: float = 2.0) -> CoefficientField:
    import sympy as sp

    return CoefficientField.from_sympy(c * sp.eye(3), c, c, "scalar", {"c": c})


def _coef_aniso(
    a11: float = 2.0, a22: float = 1.5, a33: float = 1.0, a12: float = 0.3, a13: float = 0.2,
    a23: float = -0.1,
) -> CoefficientField:
    import sympy as sp

    m = np.array([[a11, a12, a13], [a12, a22, a23], [a13, a23, a33]], dtype=float)
    lam = sym_eigvals(m)
    if lam[2] <= 0:
        raise PreconditionError("anisotropic coefficient must be positive definite")
    return CoefficientField.from_sympy(
        sp.Matrix(m.tolist()), float(lam[2]), float(lam[0]), "aniso",
        {"a11": a11, "a22": a22, "a33": a33, "a12": a12, "a13": a13, "a23": a23},
    )


def _coef_sinscalar(amp: float = 0.1, k: float = 1.0) -> CoefficientField:
    import sympy as sp

    if not 0 <= amp < 1:
        raise PreconditionError("sinscalar amplitude must lie in [0, 1)")
    x1, _, _ = _symbols()
    return CoefficientField.from_sympy(
        (1 + amp * sp.sin(k * x1)) * sp.eye(3), 1 - amp, 1 + amp, "sinscalar", {"amp": amp, "k": k}
    )


def _coef_linear(c: float = 1.0, region: float = 0.9) -> CoefficientField:
    """``(1 + c x1) I``; the bounds hold for ``|x1| <= region``."""
    import sympy as sp

    if abs(c) * region >= 1:
        raise PreconditionError("linear coefficient must stay positive on the region")
    x1, _, _ = _symbols()
    return CoefficientField.from_sympy(
        (1 + c * x1) * sp.eye(3), 1 - abs(c) * region, 1 + abs(c) * region, "linear",
        {"c": c, "region": region},
    )


_S0 = np.array([[2.0, 0.3, 0.1], [0.3, 1.5, 0.2], [0.1, 0.2, 1.8]])
_S1 = np.array([[1.0, 0.5, 0.0], [0.5, -0.5, 0.3], [0.0, 0.3, 0.2]])
_S2 = np.array([[0.2, 0.0, 0.4], [0.0, 0.6, -0.2], [0.4, -0.2, -0.8]])


def _coef_variable(amp: float = 0.3) -> CoefficientField:
    """``S0 + amp (sin(x1 + x2) S1 + cos(x3) S2)``, anisotropic and variable."""
    import sympy as sp

    x1, x2, x3 = _symbols()
    m = sp.Matrix(_S0.tolist()) + amp * (
        sp.sin(x1 + x2) * sp.Matrix(_S1.tolist()) + sp.cos(x3) * sp.Matrix(_S2.tolist())
    )
    lam = sym_eigvals(_S0)
    spread = abs(amp) * (np.abs(sym_eigvals(_S1)).max() + np.abs(sym_eigvals(_S2)).max())
    if lam[2] - spread <= 0:
        raise PreconditionError("variable coefficient amplitude too large")
    return CoefficientField.from_sympy(
        m, float(lam[2] - spread), float(lam[0] + spread), "variable", {"amp": amp}
    )


COEFFICIENT_CATALOG: dict[str, Callable[..., CoefficientField]] = {
    "identity": _coef_identity,
    "scalar": _coef_scalar,
    "aniso": _coef_aniso,
    "sinscalar": _coef_sinscalar,
    "linear": _coef_linear,
    "variable": _coef_variable,
}


def make_coefficient(name: str, **params: float) -> CoefficientField:
    try:
        factory = COEFFICIENT_CATALOG[name]
    except KeyError:
        raise CatalogError(
            f"unknown coefficient {name!r}; valid names: {', '.join(sorted(COEFFICIENT_CATALOG))}"
        ) from None
    return factory(**params)


def _profiles():
    import sympy as sp

    x1, x2, x3 = _symbols()
    return {
        "e1": (1, 0, 0),
        "e2": (0, 1, 0),
        "e3": (0, 0, 1),
        "rotation": (-x2, x1, 0),
        "position": (x1, x2, x3),
        "trig": (sp.sin(x1), sp.cos(x2), x1 * x2),
        "mixed": (x3**2, x1 * x3, x2),
        "wave": (sp.cos(x1 + x3), sp.sin(x2), 1),
        "squares": (x1**2, x2**2, x3**2),
        "exp": (sp.exp(x1 / 2), x2 * x3, sp.sin(x3)),
    }


FIELD_PROFILES: tuple[str, ...] = (
    "e1", "e2", "e3", "rotation", "position", "trig", "mixed", "wave", "squares", "exp",
)


def profile_field(name: str) -> VectorField:
    """Closed-form polynomial/trigonometric field (no cutoff)."""
    table = _profiles()
    if name not in table:
        raise CatalogError(f"unknown field {name!r}; valid names: {', '.join(FIELD_PROFILES)}")
    return VectorField.from_sympy(table[name], name=name)


def field_basket(rho: float = 1.0, names: tuple[str, ...] = FIELD_PROFILES) -> list[VectorField]:
    """Catalog profiles multiplied by the cutoff of ``B_rho``."""
    chi = CutoffField.ball(rho)
    return [profile_field(n).times(chi) for n in names]
