"""Sample indexing, steering vectors, codebook measurement operators, and
three-level Toeplitz structure utilities.

Everything in the package works over a sample grid of P OFDM blocks, Q
subcarriers and N_r receive antennas, flattened into a single index

    n = p + P*q + P*Q*r,    p in [0,P), q in [0,Q), r in [0,N_r).

A path with normalized delay/Doppler/angle ``zeta = (tau, nu, theta)`` on the
unit torus [0,1)^3 contributes the steering vector

    a_n(zeta) = exp(j*2*pi*(q*tau + p*nu + r*theta)).

Rank-one mixtures sum(p_l * a(zeta_l) a(zeta_l)^H) are Hermitian matrices that
are constant along three-level "lag" classes (p_m - p_n, q_m - q_n, r_m - r_n);
the helpers below build, adjoint and project that structure.

All functions here are pure and safe to call from worker processes.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "index_maps",
    "encode_index",
    "decode_index",
    "steering_vector",
    "steering_matrix",
    "hermitian_part",
    "ToeplitzTensor",
    "toeplitz_zeros",
    "toeplitz_apply",
    "toeplitz_adjoint",
    "lag_class_means",
    "toeplitz_project",
    "lag_tables",
    "measurement_matrix",
    "measure",
    "measure_adjoint",
    "wrap_distance",
]


def _check_dims(dims):
    P, Q, Nr = dims
    if P < 1 or Q < 1 or Nr < 1:
        raise ValueError(f"grid extents must all be >= 1, got {dims}")
    return int(P), int(Q), int(Nr)


@lru_cache(maxsize=None)
def index_maps(dims):
    """Per-sample (p, q, r) coordinate arrays under n = p + P*q + P*Q*r.

    Returns three read-only int arrays of length L = P*Q*N_r.
    """
    P, Q, Nr = _check_dims(dims)
    n = np.arange(P * Q * Nr)
    p = n % P
    q = (n // P) % Q
    r = n // (P * Q)
    for arr in (p, q, r):
        arr.flags.writeable = False
    return p, q, r


def encode_index(p, q, r, dims):
    """Flatten grid coordinates into the unified sample index."""
    P, Q, Nr = _check_dims(dims)
    p = np.asarray(p)
    q = np.asarray(q)
    r = np.asarray(r)
    if np.any(p < 0) or np.any(p >= P) or np.any(q < 0) or np.any(q >= Q) \
            or np.any(r < 0) or np.any(r >= Nr):
        raise ValueError("coordinate out of range for dims "
                         f"(P={P}, Q={Q}, N_r={Nr})")
    return p + P * q + P * Q * r


def decode_index(n, dims):
    """Invert :func:`encode_index`; returns (p, q, r)."""
    P, Q, Nr = _check_dims(dims)
    n = np.asarray(n)
    if np.any(n < 0) or np.any(n >= P * Q * Nr):
        raise ValueError("sample index out of range")
    return n % P, (n // P) % Q, n // (P * Q)


def steering_vector(zeta, dims):
    """Length-L steering vector for one (tau, nu, theta) triple.

    tau advances the phase across subcarriers q, nu across blocks p and
    theta across antennas r; each coordinate lives on the torus [0,1).
    """
    tau, nu, theta = float(zeta[0]), float(zeta[1]), float(zeta[2])
    p, q, r = index_maps(dims)
    return np.exp(2j * np.pi * (q * tau + p * nu + r * theta))


def steering_matrix(zetas, dims):
    """Stack steering vectors for an (m, 3) array of triples into (L, m).

    Each column is computed with exactly the same elementwise expression as
    :func:`steering_vector`, so the two agree bitwise.
    """
    zetas = np.atleast_2d(np.asarray(zetas, dtype=float))
    if zetas.shape[1] != 3:
        raise ValueError("zetas must have shape (m, 3)")
    p, q, r = index_maps(dims)
    phase = (q[:, None] * zetas[None, :, 0]
             + p[:, None] * zetas[None, :, 1]
             + r[:, None] * zetas[None, :, 2])
    return np.exp(2j * np.pi * phase)


def hermitian_part(M):
    """Orthogonal projection of a square matrix onto Hermitian matrices."""
    return 0.5 * (M + M.conj().T)


def wrap_distance(a, b):
    """Wrap-around distance on the unit torus, elementwise."""
    d = np.abs(np.asarray(a) - np.asarray(b)) % 1.0
    return np.minimum(d, 1.0 - d)


# ---------------------------------------------------------------------------
# three-level Toeplitz structure
# ---------------------------------------------------------------------------

@dataclass
class ToeplitzTensor:
    """Generator tensor of a three-level Toeplitz matrix.

    ``entries[k1 + P - 1, k2 + Q - 1, k3 + N_r - 1]`` holds the matrix value
    shared by every pair (m, n) whose coordinate lags are (k1, k2, k3).
    """

    entries: np.ndarray
    dims: tuple

    def __post_init__(self):
        P, Q, Nr = _check_dims(self.dims)
        self.dims = (P, Q, Nr)
        want = (2 * P - 1, 2 * Q - 1, 2 * Nr - 1)
        self.entries = np.asarray(self.entries, dtype=complex)
        if self.entries.shape != want:
            raise ValueError(
                f"generator tensor shape {self.entries.shape} does not match "
                f"dims {self.dims} (expected {want})")

    def at(self, k1, k2, k3):
        """Value at lag (k1, k2, k3)."""
        P, Q, Nr = self.dims
        return self.entries[k1 + P - 1, k2 + Q - 1, k3 + Nr - 1]

    def is_conjugate_symmetric(self, tol=1e-12):
        """True when V(-k) == conj(V(k)) up to ``tol`` (Hermitian case)."""
        flipped = self.entries[::-1, ::-1, ::-1].conj()
        scale = max(1.0, np.abs(self.entries).max())
        return np.abs(self.entries - flipped).max() <= tol * scale


def toeplitz_zeros(dims):
    P, Q, Nr = _check_dims(dims)
    return ToeplitzTensor(
        np.zeros((2 * P - 1, 2 * Q - 1, 2 * Nr - 1), dtype=complex), dims)


@lru_cache(maxsize=None)
def lag_tables(dims):
    """Lag bookkeeping for dims = (P, Q, N_r).

    Returns ``(flat, counts, zero_id, n_lags)`` where ``flat[m, n]`` is the
    flattened generator-tensor index of the lag of entry (m, n), ``counts``
    the number of matrix entries in each lag class and ``zero_id`` the index
    of the (0, 0, 0) class (the main diagonal).
    """
    P, Q, Nr = _check_dims(dims)
    p, q, r = index_maps(dims)
    l1 = p[:, None] - p[None, :]
    l2 = q[:, None] - q[None, :]
    l3 = r[:, None] - r[None, :]
    flat = ((l1 + P - 1) * (2 * Q - 1) + (l2 + Q - 1)) * (2 * Nr - 1) \
        + (l3 + Nr - 1)
    n_lags = (2 * P - 1) * (2 * Q - 1) * (2 * Nr - 1)
    counts = np.bincount(flat.ravel(), minlength=n_lags)
    zero_id = ((P - 1) * (2 * Q - 1) + (Q - 1)) * (2 * Nr - 1) + (Nr - 1)
    flat.flags.writeable = False
    counts.flags.writeable = False
    return flat, counts, int(zero_id), n_lags


def toeplitz_apply(V: ToeplitzTensor):
    """Expand a generator tensor into the full L-by-L matrix."""
    flat, _, _, _ = lag_tables(V.dims)
    return V.entries.ravel()[flat]


def toeplitz_adjoint(M, dims):
    """Adjoint of :func:`toeplitz_apply`: sum matrix entries per lag class.

    Satisfies <toeplitz_apply(V), M> == <V, toeplitz_adjoint(M)> exactly for
    the trace/elementwise inner products.
    """
    P, Q, Nr = _check_dims(dims)
    M = np.asarray(M)
    L = P * Q * Nr
    if M.shape != (L, L):
        raise ValueError(f"matrix shape {M.shape} does not match dims {dims}")
    flat, _, _, n_lags = lag_tables(dims)
    idx = flat.ravel()
    sums = (np.bincount(idx, weights=M.real.ravel(), minlength=n_lags)
            + 1j * np.bincount(idx, weights=M.imag.ravel(), minlength=n_lags))
    return ToeplitzTensor(
        sums.reshape(2 * P - 1, 2 * Q - 1, 2 * Nr - 1), dims)


def lag_class_means(M, dims):
    """Generator tensor of the orthogonal projection of M onto Hermitian
    three-level Toeplitz matrices (Hermitian symmetrization, then the mean
    over every lag class)."""
    H = hermitian_part(np.asarray(M))
    V = toeplitz_adjoint(H, dims)
    _, counts, _, _ = lag_tables(dims)
    V.entries = V.entries / counts.reshape(V.entries.shape)
    return V


def toeplitz_project(M, dims):
    """Orthogonal projection of M onto Hermitian three-level Toeplitz
    matrices, returned as a full L-by-L matrix.

    Idempotent and self-adjoint; the nearest structured matrix in Frobenius
    norm.
    """
    return toeplitz_apply(lag_class_means(M, dims))


# ---------------------------------------------------------------------------
# codebook measurement operators
# ---------------------------------------------------------------------------
#
# Sample n of user i observes the n-th column of the unknown k_i-by-L matrix
# Z_i through the row d_n of the user codebook D_i:
#
#     phi_n(Z) = d_n^T Z e_n .
#
# Under the trace inner product <Z, B> = tr(B^H Z) this functional is
# represented by the rank-one matrix B_n = conj(d_n) e_n^T, which is what
# measurement_matrix returns; measure/measure_adjoint are the fast vectorized
# forms of the forward map and its adjoint sum_n v_n B_n.

def measurement_matrix(codebook_matrix, n):
    """Rank-one representer B_n of the n-th sample's linear functional.

    ``codebook_matrix`` is the L-by-k user codebook; the result is k-by-L with
    column n equal to the conjugated n-th codebook row and zeros elsewhere,
    so that tr(B_n^H Z) = d_n^T Z e_n.
    """
    D = np.asarray(codebook_matrix)
    L, k = D.shape
    if not 0 <= n < L:
        raise ValueError(f"sample index {n} out of range for L={L}")
    B = np.zeros((k, L), dtype=complex)
    B[:, n] = np.conj(D[n, :])
    return B


def measure(Z, codebook_matrix):
    """Forward map: length-L vector with entries d_n^T Z e_n."""
    D = np.asarray(codebook_matrix)
    Z = np.asarray(Z)
    if Z.shape != (D.shape[1], D.shape[0]):
        raise ValueError(
            f"Z shape {Z.shape} does not match codebook {D.shape}")
    return np.einsum("nk,kn->n", D, Z)


def measure_adjoint(v, codebook_matrix):
    """Adjoint map: sum_n v_n B_n, a k-by-L matrix with columns v_n*conj(d_n).

    Satisfies <measure(Z, D), v> == <Z, measure_adjoint(v, D)> exactly.
    """
    D = np.asarray(codebook_matrix)
    v = np.asarray(v)
    if v.shape != (D.shape[0],):
        raise ValueError(f"vector length {v.shape} does not match L={D.shape[0]}")
    return np.conj(D).T * v[None, :]
