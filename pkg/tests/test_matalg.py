import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from maxreg.errors import PreconditionError
from maxreg.matalg import (
    SymMatrix3,
    diagonal_decomposition,
    invariance_defect,
    lemma31_residual,
    lemma31_sweep,
    offdiag_inequality,
    random_complex,
    random_orthogonal,
    random_spd,
    sym_eigvals,
    trace_forms,
)

finite = st.floats(-10, 10, allow_nan=False)
mat3 = arrays(np.float64, (3, 3), elements=finite)


def test_sym_eigvals_against_lapack_random():
    rng = np.random.default_rng(0)
    B = random_spd(rng, 2000)
    ref = np.linalg.eigvalsh(B)[:, ::-1]
    np.testing.assert_allclose(sym_eigvals(B), ref, rtol=0, atol=1e-12)


def test_sym_eigvals_degenerate_cases():
    assert np.array_equal(sym_eigvals(2.5 * np.eye(3)), [2.5, 2.5, 2.5])
    np.testing.assert_allclose(sym_eigvals(np.diag([1.0, 1.0, 3.0])), [3, 1, 1], atol=1e-14)
    Q = random_orthogonal(np.random.default_rng(1), 1)[0]
    B = Q @ np.diag([4.0, 4.0 + 1e-9, 1.0]) @ Q.T
    np.testing.assert_allclose(sym_eigvals(B), [4.0 + 1e-9, 4.0, 1.0], atol=1e-13)


def test_sym_eigvals_complex_hermitian():
    rng = np.random.default_rng(2)
    Z = rng.standard_normal((50, 3, 3)) + 1j * rng.standard_normal((50, 3, 3))
    H = Z + np.conj(np.swapaxes(Z, 1, 2))
    np.testing.assert_allclose(sym_eigvals(H), np.linalg.eigvalsh(H)[:, ::-1], atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(mat3)
def test_sym_eigvals_property(M):
    B = M + M.T
    lam = sym_eigvals(B)
    scale = max(1.0, float(np.abs(B).max()))
    np.testing.assert_allclose(lam, np.linalg.eigvalsh(B)[::-1], atol=1e-11 * scale)
    assert math.isclose(lam.sum(), np.trace(B), abs_tol=1e-11 * scale)


def test_sym_matrix3_bounds():
    S = SymMatrix3.from_entries(2.0, 3.0, 4.0, 0.0, 0.0, 0.0)
    assert (S.beta0, S.beta1) == (2.0, 4.0)
    with pytest.raises(ValueError):
        SymMatrix3(np.eye(2))


def test_trace_forms_hand_values():
    U = np.array([[0, 1j, 0], [0, 0, 0], [0, 0, 0]])
    tf = trace_forms(np.eye(3), U)
    assert (tf.t1, tf.t2, tf.t3) == (0.0, 1.0, 0.0)
    U = np.array([[0, 1, 0], [-1, 0, 0], [0, 0, 0]])  # antisymmetric: U conj(U) = -I on the block
    tf = trace_forms(np.eye(3), U)
    assert (tf.t2, tf.t3) == (2.0, -2.0)


def test_residual_hand_value():
    B = np.diag([1.0, 2.0, 3.0])
    U = np.zeros((3, 3))
    U[0, 1] = 1.0
    # t1 = 0, t2 = 1, t3 = 0: 0 + 9 * 1 - 1 * 1
    assert lemma31_residual(B, U) == 8.0


@settings(max_examples=100, deadline=None)
@given(st.floats(0.1, 10), arrays(np.float64, (2, 3, 3), elements=finite))
def test_residual_vanishes_for_scalar_weight(b, parts):
    U = parts[0] + 1j * parts[1]
    res = lemma31_residual(b * np.eye(3), U)
    assert abs(res) <= 1e-12 * b**2 * max(1.0, np.sum(np.abs(U) ** 2))


@settings(max_examples=300, deadline=None)
@given(
    arrays(np.float64, 3, elements=st.floats(0.1, 10)),
    arrays(np.float64, (2, 3, 3), elements=finite),
    st.integers(0, 2**32 - 1),
)
def test_residual_nonnegative(lam, parts, seed):
    Q = random_orthogonal(np.random.default_rng(seed), 1)[0]
    B = Q @ np.diag(lam) @ Q.T
    U = parts[0] + 1j * parts[1]
    scale = np.sum(B * B) * np.sum(np.abs(U) ** 2)
    assert lemma31_residual(B, U) >= -1e-10 * max(scale, 1e-300)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.1, 10), st.floats(0.1, 10), st.floats(0, 5), st.floats(0, 5),
       st.complex_numbers(max_magnitude=10), st.complex_numbers(max_magnitude=10))
def test_offdiag_inequality_nonnegative(li, lj, lo_gap, hi_gap, wij, wji):
    b0 = min(li, lj) / (1 + lo_gap)
    b1 = max(li, lj) * (1 + hi_gap)
    val = offdiag_inequality(li, lj, b0, b1, wij, wji)
    assert val >= -1e-10 * b1**2 * (abs(wij) ** 2 + abs(wji) ** 2 + 1e-300)


def test_diagonal_decomposition_reassembles_residual():
    rng = np.random.default_rng(5)
    for _ in range(50):
        lam = rng.uniform(0.1, 10, 3)
        W = random_complex(rng, 1)[0]
        b0, b1 = lam.min() * 0.9, lam.max() * 1.1
        direct = lemma31_residual(np.diag(lam), W, b0, b1)
        assert math.isclose(diagonal_decomposition(lam, W, b0, b1), direct,
                            rel_tol=1e-12, abs_tol=1e-10)


def test_preconditions():
    with pytest.raises(PreconditionError):
        lemma31_residual(np.diag([1.0, -1.0, 2.0]), np.eye(3))
    with pytest.raises(PreconditionError):
        lemma31_residual(np.diag([1.0, 2.0, 3.0]), np.eye(3), beta0=1.5)
    with pytest.raises(PreconditionError):
        lemma31_residual(np.diag([1.0, 2.0, 3.0]), np.eye(3), beta1=2.0)
    with pytest.raises(PreconditionError):
        offdiag_inequality(1.0, 2.0, 1.5, 3.0, 1, 1)


def test_random_generators():
    rng = np.random.default_rng(3)
    Q = random_orthogonal(rng, 10, complex_=True)
    np.testing.assert_allclose(Q @ np.conj(np.swapaxes(Q, 1, 2)), np.broadcast_to(np.eye(3), Q.shape), atol=1e-14)
    lam = np.linalg.eigvalsh(random_spd(rng, 100, 0.1, 10.0))
    assert lam.min() >= 0.1 - 1e-12 and lam.max() <= 10.0 + 1e-12
    assert np.linalg.norm(random_complex(rng, 100, 10.0), axis=(1, 2)).max() <= 10.0


def test_sweep_deterministic_and_serialisable():
    a = lemma31_sweep(5000, seed=7, chunk=1000)
    b = lemma31_sweep(5000, seed=7, chunk=1000)
    assert a.to_json() == b.to_json()
    assert a.min_scaled >= -1e-10
    d = json.loads(a.to_json())
    assert set(d) == {"trials", "min_scaled_residual", "mean_residual", "witness_B", "witness_U"}


def test_invariance_defect_small():
    assert invariance_defect(2000, seed=1) <= 1e-10
