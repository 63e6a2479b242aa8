"""Indexing, steering vectors and the three-level Toeplitz operator pair."""

import numpy as np
import pytest

from isac.atoms import (ToeplitzTensor, decode_index, encode_index,
                        lag_class_means, lag_tables, measure,
                        measure_adjoint, measurement_matrix, steering_matrix,
                        steering_vector, toeplitz_adjoint, toeplitz_apply,
                        toeplitz_project, toeplitz_zeros, wrap_distance)

DIMS = (3, 4, 2)  # P, Q, N_r
L = 24


def test_index_roundtrip_all():
    P, Q, Nr = DIMS
    seen = set()
    for r in range(Nr):
        for q in range(Q):
            for p in range(P):
                n = encode_index(p, q, r, DIMS)
                assert n == p + P * q + P * Q * r
                assert decode_index(n, DIMS) == (p, q, r)
                seen.add(n)
    assert seen == set(range(L))


def test_index_bounds():
    with pytest.raises(ValueError):
        encode_index(3, 0, 0, DIMS)
    with pytest.raises(ValueError):
        decode_index(L, DIMS)
    with pytest.raises(ValueError):
        decode_index(-1, DIMS)


def test_steering_zero_is_ones():
    a = steering_vector((0.0, 0.0, 0.0), DIMS)
    np.testing.assert_allclose(a, np.ones(L))


def test_steering_half_tau():
    # tau = 0.5 flips sign with the subcarrier index q
    a = steering_vector((0.5, 0.0, 0.0), (2, 2, 1))
    np.testing.assert_allclose(a, [1, 1, -1, -1], atol=1e-15)


def test_steering_unit_modulus_and_norm():
    rng = np.random.default_rng(0)
    for _ in range(5):
        zeta = tuple(rng.uniform(0, 1, 3))
        a = steering_vector(zeta, DIMS)
        np.testing.assert_allclose(np.abs(a), 1.0, atol=1e-12)
        assert np.linalg.norm(a) ** 2 == pytest.approx(L, rel=1e-12)


def test_steering_entry_formula():
    rng = np.random.default_rng(1)
    for _ in range(100):
        zeta = rng.uniform(0, 1, 3)
        n = int(rng.integers(L))
        p, q, r = decode_index(n, DIMS)
        want = np.exp(2j * np.pi * (q * zeta[0] + p * zeta[1] + r * zeta[2]))
        got = steering_vector(tuple(zeta), DIMS)[n]
        assert abs(got - want) < 1e-12


def test_steering_matrix_columns():
    zetas = [(0.1, 0.2, 0.3), (0.7, 0.0, 0.5)]
    A = steering_matrix(zetas, DIMS)
    assert A.shape == (L, 2)
    for j, z in enumerate(zetas):
        np.testing.assert_allclose(A[:, j], steering_vector(z, DIMS))


def test_wrap_distance():
    assert wrap_distance(0.95, 0.05) == pytest.approx(0.1)
    assert wrap_distance(0.2, 0.2) == 0.0
    assert wrap_distance(0.0, 0.5) == pytest.approx(0.5)


# ---------------------------------------------------------------------------
# Toeplitz operator pair
# ---------------------------------------------------------------------------

def test_tensor_shape_validation():
    with pytest.raises(ValueError):
        ToeplitzTensor(np.zeros((3, 3, 3)), DIMS)


def test_apply_identity_generator():
    V = toeplitz_zeros(DIMS)
    V.entries[2, 3, 1] = 1.0  # the (0,0,0) lag slot for dims (3,4,2)
    np.testing.assert_allclose(toeplitz_apply(V), np.eye(L))


def test_apply_1x1():
    V = toeplitz_zeros((1, 1, 1))
    V.entries[0, 0, 0] = 2.5 + 1j
    T = toeplitz_apply(V)
    assert T.shape == (1, 1)
    assert T[0, 0] == 2.5 + 1j


def test_adjoint_of_identity():
    V = toeplitz_adjoint(np.eye(L), DIMS)
    _, _, zero_id, _ = lag_tables(DIMS)
    flatv = V.entries.ravel()
    assert flatv[zero_id] == L
    mask = np.ones(flatv.size, dtype=bool)
    mask[zero_id] = False
    assert np.abs(flatv[mask]).max() == 0.0


def test_adjoint_identity_random():
    rng = np.random.default_rng(2)
    P, Q, Nr = DIMS
    for _ in range(20):
        V = ToeplitzTensor(
            rng.standard_normal((2 * P - 1, 2 * Q - 1, 2 * Nr - 1))
            + 1j * rng.standard_normal((2 * P - 1, 2 * Q - 1, 2 * Nr - 1)),
            DIMS)
        M = rng.standard_normal((L, L)) + 1j * rng.standard_normal((L, L))
        lhs = np.vdot(toeplitz_apply(V), M)
        rhs = np.vdot(V.entries, toeplitz_adjoint(M, DIMS).entries)
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def test_adjoint_shape_error():
    with pytest.raises(ValueError):
        toeplitz_adjoint(np.zeros((3, 3)), DIMS)


def test_project_fixpoint_and_idempotence():
    rng = np.random.default_rng(3)
    P, Q, Nr = DIMS
    # Hermitian Toeplitz input: build from a conjugate-symmetric generator
    g = rng.standard_normal((2 * P - 1, 2 * Q - 1, 2 * Nr - 1)) \
        + 1j * rng.standard_normal((2 * P - 1, 2 * Q - 1, 2 * Nr - 1))
    g = 0.5 * (g + g[::-1, ::-1, ::-1].conj())
    T = toeplitz_apply(ToeplitzTensor(g, DIMS))
    np.testing.assert_allclose(toeplitz_project(T, DIMS), T, atol=1e-12)

    M = rng.standard_normal((L, L)) + 1j * rng.standard_normal((L, L))
    P1 = toeplitz_project(M, DIMS)
    np.testing.assert_allclose(toeplitz_project(P1, DIMS), P1, atol=1e-12)


def test_project_single_offdiagonal_entry():
    # L=4 line: a lone entry on the first superdiagonal spreads over the
    # 3-entry lag class and its Hermitian mirror: 1/3 class mean, halved.
    dims = (4, 1, 1)
    M = np.zeros((4, 4), dtype=complex)
    M[0, 1] = 1.0
    Pm = toeplitz_project(M, dims)
    want = np.zeros((4, 4), dtype=complex)
    for i in range(3):
        want[i, i + 1] = 1.0 / 6.0
        want[i + 1, i] = 1.0 / 6.0
    np.testing.assert_allclose(Pm, want, atol=1e-14)


def test_project_self_adjoint():
    # the Hermitian-symmetrization step conjugates, so the projection is
    # real-linear: self-adjointness holds for the real inner product
    rng = np.random.default_rng(4)
    M = rng.standard_normal((L, L)) + 1j * rng.standard_normal((L, L))
    N = rng.standard_normal((L, L)) + 1j * rng.standard_normal((L, L))
    lhs = np.vdot(toeplitz_project(M, DIMS), N).real
    rhs = np.vdot(M, toeplitz_project(N, DIMS)).real
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def test_atom_projection_is_rank_one():
    # a steering outer product is already Hermitian Toeplitz, so projecting
    # p*a a^H returns it untouched: PSD, rank 1, trace L*p
    rng = np.random.default_rng(5)
    zeta = tuple(rng.uniform(0, 1, 3))
    a = steering_vector(zeta, DIMS)
    p1 = 1.7
    V = lag_class_means(p1 * np.outer(a, a.conj()), DIMS)
    T = toeplitz_apply(V)
    np.testing.assert_allclose(T, p1 * np.outer(a, a.conj()), atol=1e-10)
    w = np.linalg.eigvalsh(T)
    assert w[-1] == pytest.approx(p1 * L, rel=1e-10)
    assert np.abs(w[:-1]).max() < 1e-9 * w[-1]
    assert np.trace(T).real == pytest.approx(p1 * L, rel=1e-12)


def test_mixture_is_psd():
    rng = np.random.default_rng(6)
    T = np.zeros((L, L), dtype=complex)
    for _ in range(4):
        a = steering_vector(tuple(rng.uniform(0, 1, 3)), DIMS)
        T += rng.uniform(0.2, 2.0) * np.outer(a, a.conj())
    w = np.linalg.eigvalsh(T)
    assert w.min() >= -1e-9 * np.abs(w).max()


# ---------------------------------------------------------------------------
# codebook measurement operators
# ---------------------------------------------------------------------------

def _random_codebook(rng, k):
    D = rng.standard_normal((L, k)) + 1j * rng.standard_normal((L, k))
    return D


def test_measurement_matrix_structure():
    rng = np.random.default_rng(7)
    D = _random_codebook(rng, 3)
    n = 5
    B = measurement_matrix(D, n)
    assert B.shape == (3, L)
    np.testing.assert_allclose(B[:, n], D[n, :].conj())
    B[:, n] = 0
    assert np.abs(B).max() == 0.0


def test_measurement_matrix_bounds():
    rng = np.random.default_rng(8)
    D = _random_codebook(rng, 2)
    with pytest.raises(ValueError):
        measurement_matrix(D, L)
    with pytest.raises(ValueError):
        measurement_matrix(D, -1)


def test_measurement_zero_row():
    rng = np.random.default_rng(9)
    D = _random_codebook(rng, 2)
    D[4, :] = 0
    assert np.abs(measurement_matrix(D, 4)).max() == 0.0


def test_ones_codebook_selects_entry():
    D = np.ones((L, 1))
    Z = np.arange(L, dtype=complex)[None, :] + 1j
    y = measure(Z, D)
    np.testing.assert_allclose(y, Z[0, :])


def test_measure_matches_trace_form():
    # <Z, B_n> under tr(B^H Z) must equal the fast vectorized map
    rng = np.random.default_rng(10)
    D = _random_codebook(rng, 3)
    Z = rng.standard_normal((3, L)) + 1j * rng.standard_normal((3, L))
    y = measure(Z, D)
    for n in range(L):
        B = measurement_matrix(D, n)
        assert abs(np.trace(B.conj().T @ Z) - y[n]) < 1e-10
        assert abs(D[n, :] @ Z[:, n] - y[n]) < 1e-10


def test_single_atom_measurement():
    # Z = f a^T observed at sample n gives [a]_n * (d_n^T f)
    rng = np.random.default_rng(11)
    D = _random_codebook(rng, 4)
    zeta = tuple(rng.uniform(0, 1, 3))
    a = steering_vector(zeta, DIMS)
    f = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    Z = np.outer(f, a)
    y = measure(Z, D)
    want = a * (D @ f)
    np.testing.assert_allclose(y, want, atol=1e-10)


def test_measure_adjoint_identity():
    rng = np.random.default_rng(12)
    D = _random_codebook(rng, 3)
    Z = rng.standard_normal((3, L)) + 1j * rng.standard_normal((3, L))
    v = rng.standard_normal(L) + 1j * rng.standard_normal(L)
    lhs = np.vdot(v, measure(Z, D))
    rhs = np.vdot(measure_adjoint(v, D), Z)
    assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))
    # and the adjoint really is sum_n v_n B_n
    acc = sum(v[n] * measurement_matrix(D, n) for n in range(L))
    np.testing.assert_allclose(measure_adjoint(v, D), acc, atol=1e-10)
