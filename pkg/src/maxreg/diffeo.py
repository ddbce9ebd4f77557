"""Pullbacks of vector fields and coefficients under diffeomorphisms.

Jacobian convention: ``J[n, j, k] = d_j psi_k``, the transpose of the usual
derivative matrix ``D psi``.  With ``y = psi(x)`` the pullback of a field
``v`` on the image is ``u_j(x) = J_jk(x) v_k(psi(x))`` and::

    rot_x u = det J (J^{-1})^t (rot_y v)(y)
    div_x(s u) = |det J| div_y(J^t s J v / |det J|)(y)

Second derivatives are ``D[n, i, j, k] = d_i d_j psi_k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import CatalogError, PreconditionError
from .fields import (
    CoefficientField,
    VectorField,
    _fd,
    _canonical,
    _lambdify_list,
    _symbols,
    div_weighted,
    f_norm,
    rot_from_jac,
    sobolev_norm,
)
from .matalg import det3, sym_eigvals
from .quadrature import DomainPatch, QuadratureSpec

Array = np.ndarray

DET_FLOOR = 1e-12


@dataclass(frozen=True)
class Diffeomorphism:
    forward: Callable[[Array], Array]
    inverse: Callable[[Array], Array]
    jac_oracle: Callable[[Array], Array] | None = None
    second_oracle: Callable[[Array], Array] | None = None
    fd_step: float = 1e-4
    name: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    def __call__(self, x: Array) -> Array:
        return self.forward(np.asarray(x, dtype=float))

    def jacobian(self, x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        if self.jac_oracle is not None:
            return self.jac_oracle(x)
        return self.fd_jacobian(x, self.fd_step)

    def fd_jacobian(self, x: Array, h: float) -> Array:
        # _fd returns [n, k, j] = d_j psi_k
        return np.swapaxes(_fd(self, np.asarray(x, dtype=float), h, True), 1, 2)

    def second(self, x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        if self.second_oracle is not None:
            return self.second_oracle(x)
        return self.fd_second(x, self.fd_step)

    def fd_second(self, x: Array, h: float) -> Array:
        d = _fd(self.jacobian, np.asarray(x, dtype=float), h, True)  # [n, j, k, i]
        return np.moveaxis(d, -1, 1)

    def without_second(self, fd_step: float | None = None) -> Diffeomorphism:
        return Diffeomorphism(
            self.forward, self.inverse, self.jac_oracle, None,
            self.fd_step if fd_step is None else fd_step, self.name + "-fd2", dict(self.params),
        )

    def inverse_defect(self, x: Array) -> float:
        x = np.asarray(x, dtype=float)
        return float(np.max(np.abs(self.inverse(self(x)) - x)))

    @classmethod
    def from_sympy(cls, exprs, inverse_exprs, name: str, params=None) -> Diffeomorphism:
        import sympy as sp

        syms = _symbols()
        exprs = [_canonical(e) for e in exprs]
        inverse_exprs = [_canonical(e) for e in inverse_exprs]
        fwd = _lambdify_list(list(exprs), syms)
        inv = _lambdify_list(list(inverse_exprs), syms)
        jac = _lambdify_list([sp.diff(exprs[k], syms[j]) for j in range(3) for k in range(3)], syms)
        sec = _lambdify_list(
            [sp.diff(exprs[k], syms[i], syms[j]) for i in range(3) for j in range(3) for k in range(3)],
            syms,
        )
        return cls(
            fwd, inv, lambda x: jac(x).reshape(-1, 3, 3), lambda x: sec(x).reshape(-1, 3, 3, 3),
            name=name, params=dict(params or {}),
        )


def _checked_det(J: Array) -> Array:
    det = det3(J)
    if np.any(np.abs(det) < DET_FLOOR):
        raise PreconditionError("Jacobian determinant below 1e-12")
    return det


def compose(psi1: Diffeomorphism, psi2: Diffeomorphism) -> Diffeomorphism:
    """``psi1 o psi2``: ``x -> psi1(psi2(x))`` with ``J = J2 J1(psi2)``."""

    def jac(x: Array) -> Array:
        return psi2.jacobian(x) @ psi1.jacobian(psi2(x))

    def sec(x: Array) -> Array:
        y = psi2(x)
        J2 = psi2.jacobian(x)
        return np.einsum("nijl,nlk->nijk", psi2.second(x), psi1.jacobian(y)) + np.einsum(
            "njl,nim,nmlk->nijk", J2, J2, psi1.second(y)
        )

    return Diffeomorphism(
        lambda x: psi1(psi2(x)),
        lambda y: psi2.inverse(psi1.inverse(y)),
        jac,
        sec,
        min(psi1.fd_step, psi2.fd_step),
        f"{psi1.name}o{psi2.name}",
    )


def inverse_map(psi: Diffeomorphism) -> Diffeomorphism:
    """``psi^{-1}`` with Jacobian ``J(psi^{-1}(y))^{-1}``; second derivatives by FD."""
    return Diffeomorphism(
        psi.inverse,
        psi.forward,
        lambda y: np.linalg.inv(psi.jacobian(psi.inverse(y))),
        None,
        psi.fd_step,
        f"inv({psi.name})",
    )


def pullback_field(psi: Diffeomorphism, v: VectorField) -> VectorField:
    """``u(x) = J(x) v(psi(x))``; Jacobian by the chain rule.

    ``d_i u_j = D_ijk v_k + J_jk (d_l v_k)(psi) J_il``.
    """

    def ev(x: Array) -> Array:
        return np.einsum("njk,nk->nj", psi.jacobian(x), v(psi(x)))

    def jac(x: Array) -> Array:
        y = psi(x)
        J = psi.jacobian(x)
        Jv = v.jacobian(y)  # [n, k, l] = d_l v_k
        du = np.einsum("nijk,nk->nij", psi.second(x), v(y)) + np.einsum(
            "njk,nkl,nil->nij", J, Jv, J
        )
        return np.swapaxes(du, 1, 2)  # [n, j, i] = d_i u_j

    return VectorField(ev, jac, v.fd_step, v.richardson, f"pullback({psi.name},{v.name})")


def rot_transform_residual(psi: Diffeomorphism, v: VectorField, x: Array) -> Array:
    """``|rot_x u - det J (J^{-1})^t rot_y v(psi(x))|`` with ``u`` the pullback."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    J = psi.jacobian(x)
    det = _checked_det(J)
    u = pullback_field(psi, v)
    lhs = rot_from_jac(u.jacobian(x))
    rv = rot_from_jac(v.jacobian(psi(x)))
    rhs = det[:, None] * np.einsum("nkj,nk->nj", np.linalg.inv(J), rv)
    return np.linalg.norm(lhs - rhs, axis=1)


def _transfer_matrix(psi: Diffeomorphism, s: CoefficientField, x: Array) -> tuple[Array, Array]:
    """``T = J^t s J / |det J|`` and ``dT[n, m] = d_{x_m} T``."""
    J = psi.jacobian(x)
    det = np.abs(_checked_det(J))
    sx = s(x)
    D = psi.second(x)  # [n, m, j, k] = d_m J_jk
    ds = s.derivative(x)
    T = np.einsum("nji,njk,nkl->nil", J, sx, J) / det[:, None, None]
    Jinv = np.linalg.inv(J)
    dlogdet = np.einsum("nij,nmji->nm", Jinv, D)
    dT = (
        np.einsum("nmji,njk,nkl->nmil", D, sx, J)
        + np.einsum("nji,nmjk,nkl->nmil", J, ds, J)
        + np.einsum("nji,njk,nmkl->nmil", J, sx, D)
    ) / det[:, None, None, None] - dlogdet[:, :, None, None] * T[:, None, :, :]
    return T, dT


def div_transform_residual(psi: Diffeomorphism, s: CoefficientField, v: VectorField, x: Array) -> Array:
    """``|div_x(s u) - |det J| div_y(J^t s J v / |det J|)|`` at ``y = psi(x)``.

    The ``y``-derivative of ``T(x(y))`` uses ``d_{y_i} = (J^{-1})_{im} d_{x_m}``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    u = pullback_field(psi, v)
    lhs = div_weighted(s, u, x)
    y = psi(x)
    J = psi.jacobian(x)
    det = np.abs(_checked_det(J))
    T, dT = _transfer_matrix(psi, s, x)
    Jinv = np.linalg.inv(J)
    vy = v(y)
    Jv = v.jacobian(y)  # [n, k, i] = d_{y_i} v_k
    divy = np.einsum("nim,nmik,nk->n", Jinv, dT, vy) + np.einsum("nik,nki->n", T, Jv)
    return np.abs(lhs - det * divy)


def coefficient_transform(
    psi: Diffeomorphism, s: CoefficientField, samples: Array, fd_step: float = 1e-4
) -> CoefficientField:
    """``s~(y) = J^t s J / |det J|`` at ``x = psi^{-1}(y)``.

    Bounds are the extreme eigenvalues over ``samples`` (points ``y``); a
    nonpositive sampled eigenvalue raises ``PreconditionError``.
    """

    def ev(y: Array) -> Array:
        x = psi.inverse(np.asarray(y, dtype=float))
        J = psi.jacobian(x)
        det = np.abs(_checked_det(J))
        return np.einsum("nji,njk,nkl->nil", J, s(x), J) / det[:, None, None]

    lam = sym_eigvals(ev(np.atleast_2d(samples)))
    lo, hi = float(lam[:, 2].min()), float(lam[:, 0].max())
    if not lo > 0:
        raise PreconditionError(f"transformed coefficient has eigenvalue {lo} <= 0")
    return CoefficientField(ev, None, lo, hi, s.constant and psi.params.get("affine", False),
                            fd_step, f"transformed({s.name},{psi.name})")


@dataclass(frozen=True)
class NormRatios:
    ratio_f: float
    ratio_sob: float
    bound: float

    @property
    def within_bound(self) -> bool:
        lo, hi = 1.0 / self.bound, self.bound
        return lo <= self.ratio_f <= hi and lo <= self.ratio_sob <= hi


def jacobian_bound(psi: Diffeomorphism, patch: DomainPatch) -> float:
    """``(1 + max |J|)(1 + max |J^{-1}|)`` (operator norms) over the volume nodes."""
    nodes, _ = patch.volume_rule()
    J = psi.jacobian(nodes)
    a = np.linalg.norm(J, ord=2, axis=(1, 2)).max()
    b = np.linalg.norm(np.linalg.inv(J), ord=2, axis=(1, 2)).max()
    return float((1 + a) * (1 + b))


def norm_equivalence_probe(
    psi: Diffeomorphism,
    s: CoefficientField,
    v: VectorField,
    patch_src: DomainPatch,
    patch_dst: DomainPatch,
    vol_tol: float = 1e-6,
) -> NormRatios:
    """F-norm and Sobolev-norm ratios of ``v`` on the image against its pullback.

    ``patch_dst`` must be the image of ``patch_src``; this is checked by
    comparing its volume with ``int |det J|`` over the source.
    """
    vol_dst = patch_dst.volume()
    vol_img = float(patch_src.integrate(lambda x: np.abs(det3(psi.jacobian(x)))))
    if abs(vol_dst - vol_img) > vol_tol * max(1.0, vol_dst):
        raise PreconditionError(
            f"destination patch is not the image of the source (volumes {vol_dst} vs {vol_img})"
        )
    nodes, _ = patch_dst.volume_rule()
    s_t = coefficient_transform(psi, s, nodes)
    u = pullback_field(psi, v)
    rf = f_norm(v, s_t, patch_dst) / f_norm(u, s, patch_src)
    rs = sobolev_norm(v, patch_dst) / sobolev_norm(u, patch_src)
    return NormRatios(rf, rs, jacobian_bound(psi, patch_src))


@dataclass(frozen=True)
class W23Probe:
    sup_J: float
    int_D2_cubed: float


def w23_membership_probe(psi: Diffeomorphism, patch: DomainPatch) -> W23Probe:
    """Largest Frobenius norm of ``J`` and ``int |D^2 psi|^3`` over the patch."""
    nodes, _ = patch.volume_rule()
    sup_J = float(np.linalg.norm(psi.jacobian(nodes), axis=(1, 2)).max())
    val = patch.integrate(lambda x: np.sum(psi.second(x) ** 2, axis=(1, 2, 3)) ** 1.5)
    return W23Probe(sup_J, float(val))


def w23_refinement(
    psi: Diffeomorphism, patch: DomainPatch, resolutions: list[int], grading: float = 2.0
) -> list[W23Probe]:
    """``w23_membership_probe`` on radially graded rules of increasing resolution."""
    out = []
    for r in resolutions:
        q = patch.quad
        quad = QuadratureSpec(r, q.order, q.fd_step, grading, q.angular_factor)
        out.append(w23_membership_probe(psi, patch.with_quad(quad)))
    return out


# ---------------------------------------------------------------------------
# catalog


def identity() -> Diffeomorphism:
    d = affine()
    return Diffeomorphism(d.forward, d.inverse, d.jac_oracle, d.second_oracle, name="identity",
                          params={"affine": True})


def affine(A=None, b=None) -> Diffeomorphism:
    """``psi(x) = A x + b``; ``J = A^t`` in the ``d_j psi_k`` convention."""
    A = np.eye(3) if A is None else np.asarray(A, dtype=float).reshape(3, 3)
    b = np.zeros(3) if b is None else np.asarray(b, dtype=float).reshape(3)
    if abs(np.linalg.det(A)) < DET_FLOOR:
        raise PreconditionError("affine map must be invertible")
    Ainv = np.linalg.inv(A)
    return Diffeomorphism(
        lambda x: x @ A.T + b,
        lambda y: (y - b) @ Ainv.T,
        lambda x: np.broadcast_to(A.T, (len(x), 3, 3)).copy(),
        lambda x: np.zeros((len(x), 3, 3, 3)),
        name="affine",
        params={"A": A.tolist(), "b": b.tolist(), "affine": True},
    )


def scaling(c: float = 2.0) -> Diffeomorphism:
    d = affine(c * np.eye(3))
    return Diffeomorphism(d.forward, d.inverse, d.jac_oracle, d.second_oracle, name="scaling",
                          params={"c": c, "affine": True})


def _cusp(p, name: str) -> Diffeomorphism:
    x1, x2, x3 = _symbols()
    bump = (x1**2 + x2**2) ** (p / 2)
    return Diffeomorphism.from_sympy((x1, x2, x3 + bump), (x1, x2, x3 - bump), name, {"p": float(p)})


def cusp32() -> Diffeomorphism:
    """``(x', x3) -> (x', x3 + |x'|^{3/2})``: in W^2_3 and W^1_inf but not C^2."""
    import sympy as sp

    return _cusp(sp.Rational(3, 2), "cusp32")


def cusp12() -> Diffeomorphism:
    """``(x', x3) -> (x', x3 + |x'|^{1/2})``: second derivatives not in L3."""
    import sympy as sp

    return _cusp(sp.Rational(1, 2), "cusp12")


def polynomial(a: float = 0.3) -> Diffeomorphism:
    """``(x1, x2 + a x1^2, x3 + a x1 x2)`` with its explicit inverse."""
    x1, x2, x3 = _symbols()
    fwd = (x1, x2 + a * x1**2, x3 + a * x1 * x2)
    inv = (x1, x2 - a * x1**2, x3 - a * x1 * (x2 - a * x1**2))
    return Diffeomorphism.from_sympy(fwd, inv, "polynomial", {"a": a})


DIFFEO_CATALOG: dict[str, Callable[..., Diffeomorphism]] = {
    "identity": identity,
    "affine": affine,
    "scaling": scaling,
    "cusp32": cusp32,
    "cusp12": cusp12,
    "polynomial": polynomial,
}


def make_diffeo(name: str, **params) -> Diffeomorphism:
    try:
        factory = DIFFEO_CATALOG[name]
    except KeyError:
        raise CatalogError(
            f"unknown diffeomorphism {name!r}; valid names: {', '.join(sorted(DIFFEO_CATALOG))}"
        ) from None
    return factory(**params)
