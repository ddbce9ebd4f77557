"""3x3 trace inequality for a positive self-adjoint weight.

For self-adjoint ``B`` with ``beta0 <= B <= beta1`` and arbitrary complex
``U``::

    tr(B U conj(B U)) + beta1^2 (tr(U U^*) - tr(U conj(U))) >= beta0^2 tr(U U^*)

All functions accept single matrices or stacks with a leading batch axis.
Eigenvalues use a closed-form trigonometric solve of the characteristic
polynomial followed by Newton polishing and a 2x2 deflation, so no LAPACK
call sits on the hot path of the Monte Carlo sweep.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError


def det3(D: np.ndarray) -> np.ndarray:
    """Cofactor determinant of a stack of 3x3 matrices (exact for diagonal input)."""
    return (
        D[:, 0, 0] * (D[:, 1, 1] * D[:, 2, 2] - D[:, 1, 2] * D[:, 2, 1])
        - D[:, 0, 1] * (D[:, 1, 0] * D[:, 2, 2] - D[:, 1, 2] * D[:, 2, 0])
        + D[:, 0, 2] * (D[:, 1, 0] * D[:, 2, 1] - D[:, 1, 1] * D[:, 2, 0])
    ).real


def _trig_roots(detc: np.ndarray) -> np.ndarray:
    """Roots of ``x^3 - 3x - detc``: ``2 cos(theta + 2 pi k / 3)``."""
    phi = np.arccos(np.clip(detc / 2.0, -1.0, 1.0)) / 3.0
    k = np.array([0.0, 2.0, 4.0]) * np.pi / 3.0
    return 2.0 * np.cos(phi[:, None] + k[None, :])


def sym_eigvals(B: np.ndarray, polish: int = 3) -> np.ndarray:
    """Eigenvalues of Hermitian 3x3 matrices, sorted descending.

    The deviatoric part ``D = (B - q I) / p`` has the trigonometric roots
    ``2 cos(theta + 2 pi k / 3)``.  The root of largest modulus is always
    separated from the other two by at least ~1.5, so Newton polishing on
    it converges quadratically; its null vector (a cross product of two
    rows of ``D - lam I``) then deflates the problem to a 2x2 Hermitian
    block whose eigenvalues have a cancellation-free closed form.  The
    arccos alone loses half the digits near double roots.
    """
    B = np.asarray(B)
    single = B.ndim == 2
    B = B.reshape(-1, 3, 3)
    n = len(B)
    q = np.einsum("nii->n", B).real / 3.0
    D = B - q[:, None, None] * np.eye(3)
    p = np.sqrt(np.einsum("nij,nij->n", D, D.conj()).real / 6.0)
    deg = p <= 1e-300
    D = D / np.where(deg, 1.0, p)[:, None, None]
    # characteristic polynomial of traceless D with tr(D^2) = 6 is x^3 - 3x - det D
    det = det3(D)
    roots = _trig_roots(det)
    ks = np.argmax(np.abs(roots), axis=1)
    lam = roots[np.arange(n), ks]
    for _ in range(polish):
        der = 3.0 * lam**2 - 3.0
        lam = lam - (lam**3 - 3.0 * lam - det) / np.where(np.abs(der) > 1e-3, der, 1.0)
    A = D - lam[:, None, None] * np.eye(3)
    crosses = np.stack(
        [np.cross(A[:, 0], A[:, 1]), np.cross(A[:, 0], A[:, 2]), np.cross(A[:, 1], A[:, 2])],
        axis=1,
    )
    norms = np.linalg.norm(crosses, axis=2)
    best = np.argmax(norms, axis=1)
    v = crosses[np.arange(n), best] / norms[np.arange(n), best][:, None]
    lam = np.einsum("ni,nij,nj->n", v.conj(), D, v).real
    helper = np.eye(3)[np.argmin(np.abs(v), axis=1)]
    e1 = np.conj(np.cross(v, helper))
    e1 /= np.linalg.norm(e1, axis=1)[:, None]
    e2 = np.conj(np.cross(v, e1))
    e2 /= np.linalg.norm(e2, axis=1)[:, None]
    c11 = np.einsum("ni,nij,nj->n", e1.conj(), D, e1).real
    c22 = np.einsum("ni,nij,nj->n", e2.conj(), D, e2).real
    c12 = np.einsum("ni,nij,nj->n", e1.conj(), D, e2)
    m = 0.5 * (c11 + c22)
    rad = np.hypot(0.5 * (c11 - c22), np.abs(c12))
    out = np.stack([lam, m + rad, m - rad], axis=1)
    out = q[:, None] + p[:, None] * out
    out = np.where(deg[:, None], q[:, None], out)
    out = -np.sort(-out, axis=1)
    return out[0] if single else out


@dataclass(frozen=True)
class SymMatrix3:
    """Self-adjoint 3x3 matrix with cached spectral bounds."""

    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix)
        if m.shape != (3, 3):
            raise ValueError("expected a 3x3 matrix")
        object.__setattr__(self, "matrix", 0.5 * (m + m.conj().T))

    @classmethod
    def from_entries(cls, b11, b22, b33, b12, b13, b23) -> SymMatrix3:
        return cls(np.array([[b11, b12, b13], [b12, b22, b23], [b13, b23, b33]], dtype=float))

    @property
    def eigenvalues(self) -> np.ndarray:
        return sym_eigvals(self.matrix)

    @property
    def beta0(self) -> float:
        return float(self.eigenvalues[2])

    @property
    def beta1(self) -> float:
        return float(self.eigenvalues[0])


@dataclass(frozen=True)
class TraceForms:
    t1: np.ndarray | float
    t2: np.ndarray | float
    t3: np.ndarray | float


def trace_forms(B: np.ndarray, U: np.ndarray) -> TraceForms:
    """``Re tr(BU conj(BU))``, ``tr(U U^*)`` and ``Re tr(U conj(U))``."""
    B = np.asarray(B)
    U = np.asarray(U, dtype=complex)
    BU = B @ U
    t1 = np.einsum("...ij,...ji->...", BU, BU.conj()).real
    t2 = np.einsum("...ij,...ij->...", U, U.conj()).real
    t3 = np.einsum("...ij,...ji->...", U, U.conj()).real
    return TraceForms(t1, t2, t3)


def lemma31_residual(
    B: np.ndarray,
    U: np.ndarray,
    beta0: np.ndarray | float | None = None,
    beta1: np.ndarray | float | None = None,
) -> np.ndarray | float:
    """Left minus right side of the trace inequality; nonnegative in theory.

    ``beta0``/``beta1`` default to the extreme eigenvalues of ``B``; looser
    bounds may be passed.  Raises ``PreconditionError`` if ``B`` is not
    positive definite or the bounds do not enclose its spectrum.
    """
    B = np.asarray(B)
    lam = sym_eigvals(B)
    lo = lam[..., 2]
    hi = lam[..., 0]
    if np.any(lo <= 0):
        raise PreconditionError("B must be positive definite")
    b0 = lo if beta0 is None else np.asarray(beta0, dtype=float)
    b1 = hi if beta1 is None else np.asarray(beta1, dtype=float)
    slack = 1e-12 * np.abs(hi)
    if np.any(b0 <= 0) or np.any(b0 > lo + slack) or np.any(b1 < hi - slack):
        raise PreconditionError("beta bounds must satisfy 0 < beta0 <= B <= beta1")
    tf = trace_forms(B, U)
    out = tf.t1 + b1**2 * (tf.t2 - tf.t3) - b0**2 * tf.t2
    return float(out) if np.ndim(out) == 0 else out


def offdiag_inequality(
    lam_i: float, lam_j: float, beta0: float, beta1: float, wij: complex, wji: complex
) -> float:
    """Left minus right side of the two-index inequality for the pair (i, j)."""
    if not (beta0 > 0 and beta0 <= min(lam_i, lam_j) and max(lam_i, lam_j) <= beta1):
        raise PreconditionError("require beta1 >= lam_i, lam_j >= beta0 > 0")
    cross = 2.0 * (wij * np.conj(wji)).real
    sq = abs(wij) ** 2 + abs(wji) ** 2
    return float(lam_i * lam_j * cross + beta1**2 * (sq - cross) - beta0**2 * sq)


def diagonal_decomposition(lam: np.ndarray, W: np.ndarray, beta0: float, beta1: float) -> float:
    """Residual for ``B = diag(lam)`` rebuilt from diagonal and pair terms."""
    total = sum((lam[i] ** 2 - beta0**2) * abs(W[i, i]) ** 2 for i in range(3))
    for i, j in ((0, 1), (0, 2), (1, 2)):
        total += offdiag_inequality(lam[i], lam[j], beta0, beta1, W[i, j], W[j, i])
    return float(total)


# ---------------------------------------------------------------------------
# random instances


def random_orthogonal(rng: np.random.Generator, n: int, complex_: bool = False) -> np.ndarray:
    z = rng.standard_normal((n, 3, 3))
    if complex_:
        z = z + 1j * rng.standard_normal((n, 3, 3))
    q, r = np.linalg.qr(z)
    ph = np.diagonal(r, axis1=1, axis2=2)
    ph = ph / np.abs(ph)
    return q * ph[:, None, :]


def random_spd(rng: np.random.Generator, n: int, lo: float = 0.1, hi: float = 10.0) -> np.ndarray:
    q = random_orthogonal(rng, n)
    lam = rng.uniform(lo, hi, size=(n, 3))
    return np.einsum("nij,nj,nkj->nik", q, lam, q)


def random_complex(rng: np.random.Generator, n: int, max_norm: float = 10.0) -> np.ndarray:
    u = rng.standard_normal((n, 3, 3)) + 1j * rng.standard_normal((n, 3, 3))
    u /= np.linalg.norm(u, axis=(1, 2))[:, None, None]
    return u * (max_norm * rng.random(n))[:, None, None]


@dataclass(frozen=True)
class SweepResult:
    trials: int
    min_scaled: float
    mean_residual: float
    witness_B: list
    witness_U: list

    def to_json(self) -> str:
        return json.dumps(
            {
                "trials": self.trials,
                "min_scaled_residual": self.min_scaled,
                "mean_residual": self.mean_residual,
                "witness_B": self.witness_B,
                "witness_U": self.witness_U,
            },
            sort_keys=True,
        )


def lemma31_sweep(
    trials: int, seed: int = 0, chunk: int = 100_000, lo: float = 0.1, hi: float = 10.0,
    max_norm: float = 10.0,
) -> SweepResult:
    """Monte Carlo over random SPD ``B`` and complex ``U``.

    The reported minimum is the residual divided by ``|B|_F^2 |U|_F^2``.
    Each chunk draws from its own child of ``SeedSequence(seed)``, so the
    result depends only on ``(trials, seed, chunk)``.
    """
    children = np.random.SeedSequence(seed).spawn((trials + chunk - 1) // chunk)
    best = np.inf
    wB = wU = None
    total = 0.0
    done = 0
    for child in children:
        n = min(chunk, trials - done)
        rng = np.random.default_rng(child)
        B = random_spd(rng, n, lo, hi)
        U = random_complex(rng, n, max_norm)
        res = lemma31_residual(B, U)
        scale = np.sum(B * B, axis=(1, 2)) * np.sum(np.abs(U) ** 2, axis=(1, 2))
        scaled = res / np.where(scale > 0, scale, 1.0)
        k = int(np.argmin(scaled))
        if scaled[k] < best:
            best = float(scaled[k])
            wB = B[k]
            wU = U[k]
        total += float(np.sum(res))
        done += n
    return SweepResult(
        trials,
        best,
        total / trials,
        np.round(wB, 15).tolist(),
        [[[z.real, z.imag] for z in row] for row in wU.tolist()],
    )


def invariance_defect(trials: int, seed: int = 0, lo: float = 0.1, hi: float = 10.0,
                      max_norm: float = 10.0) -> float:
    """Largest change of the scaled residual under ``B, U -> Q B Q^T, Q U Q^T``.

    ``Q`` is real orthogonal.  The form ``tr(U conj(U))`` uses the entrywise
    conjugate, so it is invariant under real rotations but not under
    general complex unitaries.
    """
    rng = np.random.default_rng(seed)
    B = random_spd(rng, trials, lo, hi)
    U = random_complex(rng, trials, max_norm)
    Q = random_orthogonal(rng, trials)
    Qt = np.swapaxes(Q, 1, 2)
    r0 = lemma31_residual(B, U)
    r1 = lemma31_residual(Q @ B @ Qt, Q @ U @ Qt)
    scale = np.sum(B * B, axis=(1, 2)) * np.sum(np.abs(U) ** 2, axis=(1, 2))
    return float(np.max(np.abs(r1 - r0) / np.where(scale > 0, scale, 1.0)))
