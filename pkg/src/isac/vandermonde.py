"""Vandermonde decomposition of three-level Toeplitz matrices by matrix
pencils.

Given (a noisy version of) T = sum_l p_l a(zeta_l) a(zeta_l)^H this module
recovers the atoms: an eigen cut picks the signal subspace and the model
order, one shift-invariance pencil per observable coordinate recovers that
coordinate's frequencies, a small permutation search glues the per-coordinate
estimates into triples, and non-negative least squares on the lag structure
recovers the powers.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from .atoms import index_maps, steering_matrix, hermitian_part

__all__ = [
    "AtomicEstimate",
    "SubspaceResult",
    "PencilError",
    "PairingCapError",
    "signal_subspace",
    "pencil_1d",
    "pair_triples",
    "estimate_powers",
    "decompose",
]

# pencil axis bookkeeping: coordinate name -> (dims slot, stride exponent)
_DIM_INFO = {
    "delay": 1,    # tau advances with subcarrier q, stride P
    "doppler": 0,  # nu advances with block p, stride 1
    "angle": 2,    # theta advances with antenna r, stride P*Q
}
_COORD_ORDER = ("delay", "doppler", "angle")   # = (tau, nu, theta)


class PencilError(ValueError):
    """A shift-invariance pencil could not resolve a coordinate."""


class PairingCapError(ValueError):
    """Exhaustive triple pairing was asked for too many atoms."""


@dataclass
class SubspaceResult:
    U: np.ndarray            # L-by-s_hat orthonormal signal basis
    s_hat: int
    eigenvalues: np.ndarray  # all eigenvalues, descending
    non_sparse: bool         # ratio test failed to find a clear cut


@dataclass
class AtomicEstimate:
    """Estimated atoms: list of (tau, nu, theta) triples plus powers."""

    zetas: list
    powers: np.ndarray
    s_hat: int
    diagnostics: dict = field(default_factory=dict)


def signal_subspace(T, s_max, ratio=1e-2):
    """Eigendecompose (T + T^H)/2 and keep the dominant eigenvectors.

    The model order is the number of eigenvalues within ``ratio`` of the
    largest one, capped at ``s_max``. A spectrum with no clear cut (all L
    eigenvalues pass, or more pass than the cap) is flagged ``non_sparse``.
    """
    T = np.asarray(T)
    L = T.shape[0]
    if T.shape != (L, L):
        raise ValueError("T must be square")
    if s_max < 1:
        raise ValueError("s_max must be >= 1")
    w, V = np.linalg.eigh(hermitian_part(T))
    w = w[::-1]
    V = V[:, ::-1]
    top = w[0]
    if top <= 0:
        return SubspaceResult(U=V[:, :0], s_hat=0, eigenvalues=w,
                              non_sparse=False)
    raw = int(np.sum(w > ratio * top))
    s_hat = min(raw, int(s_max), L)
    non_sparse = raw > s_max or raw == L
    return SubspaceResult(U=V[:, :s_hat], s_hat=s_hat, eigenvalues=w,
                          non_sparse=non_sparse)


def _pencil_masks(dim, dims):
    """Row indices (upper, lower) whose coordinates differ by one step along
    ``dim``; lower[j] is upper[j] shifted by +1 in that coordinate."""
    P, Q, Nr = dims
    coord_arrays = index_maps(dims)
    slot = _DIM_INFO[dim]
    extent = (P, Q, Nr)[slot]
    stride = (1, P, P * Q)[slot]
    coord = coord_arrays[slot]
    upper = np.where(coord <= extent - 2)[0]
    lower = upper + stride
    return upper, lower, extent


def pencil_1d(U, dim, dims, rcond=1e-10):
    """Recover one coordinate's frequencies from the signal subspace.

    Solves the shift-invariance generalized eigenproblem
    (U_up^H U_low) z = lam (U_up^H U_up) z restricted to sample pairs that
    differ by one grid step along ``dim`` ("delay", "doppler" or "angle");
    the frequencies are angle(lam)/(2*pi) mod 1. Raises :class:`PencilError`
    when the coordinate has extent one or the masked subspace loses rank.
    """
    if dim not in _DIM_INFO:
        raise ValueError(f"unknown dimension {dim!r}")
    upper, lower, extent = _pencil_masks(dim, dims)
    if extent < 2:
        raise PencilError(
            f"dimension {dim!r} has extent 1 and cannot be resolved")
    U = np.asarray(U)
    s = U.shape[1]
    if s == 0:
        return np.zeros(0)
    if s > len(upper):
        raise PencilError(
            f"dimension {dim!r}: subspace dimension {s} exceeds the "
            f"{len(upper)} shift-invariant sample pairs")
    U_up = U[upper, :]
    U_low = U[lower, :]
    if np.linalg.matrix_rank(U_up, tol=None) < s:
        raise PencilError(
            f"dimension {dim!r} is unresolvable: masked subspace is rank "
            "deficient (atoms may collide in the remaining coordinates)")
    A = U_up.conj().T @ U_up
    B = U_up.conj().T @ U_low
    lam = np.linalg.eigvals(np.linalg.pinv(A, rcond=rcond) @ B)
    return np.mod(np.angle(lam) / (2.0 * np.pi), 1.0)


def pair_triples(tau_list, nu_list, theta_list, U, dims, *, cap=6,
                 greedy=False):
    """Glue per-coordinate frequency estimates into atoms.

    Keeps the first observable coordinate's order fixed and permutes the
    remaining estimated coordinates to maximize the total alignment
    sum_l ||Proj_U a(zeta_l)|| / ||a(zeta_l)|| with the signal subspace.
    Exhaustive search is capped at ``cap`` atoms; beyond that an error asks
    for ``greedy=True``, which assigns coordinates greedily in anchor order.
    Returns triples sorted by the anchor coordinate.
    """
    P, Q, Nr = dims
    lists = [np.asarray(tau_list, dtype=float),
             np.asarray(nu_list, dtype=float),
             np.asarray(theta_list, dtype=float)]
    active = (Q > 1, P > 1, Nr > 1)
    sizes = {len(l) for l, a in zip(lists, active) if a}
    if not sizes:
        raise ValueError("no observable coordinate to pair")
    if len(sizes) != 1:
        raise ValueError("per-coordinate estimate lists disagree in length")
    s = sizes.pop()
    if s == 0:
        return []
    for c in range(3):
        if not active[c]:
            lists[c] = np.zeros(s)

    active_idx = [c for c in range(3) if active[c]]
    anchor = active_idx[0]
    movable = active_idx[1:]

    order = np.argsort(lists[anchor], kind="stable")
    anchor_vals = lists[anchor][order]

    if not movable:
        out = [[0.0, 0.0, 0.0] for _ in range(s)]
        for l in range(s):
            out[l][anchor] = float(anchor_vals[l])
        return [tuple(t) for t in out]

    if s > cap and not greedy:
        raise PairingCapError(
            f"{s} atoms exceed the exhaustive pairing cap of {cap}; pass "
            "greedy=True to use greedy assignment")

    L = P * Q * Nr
    UH = np.asarray(U).conj().T

    # alignment score of every candidate triple, indexed by positions in the
    # (anchor, movable...) estimate lists
    def score_table():
        shape = (s,) * (1 + len(movable))
        combos = np.array(list(itertools.product(range(s),
                                                 repeat=1 + len(movable))))
        zetas = np.zeros((len(combos), 3))
        zetas[:, anchor] = anchor_vals[combos[:, 0]]
        for j, c in enumerate(movable):
            zetas[:, c] = lists[c][combos[:, j + 1]]
        A = steering_matrix(zetas, dims)
        scores = np.linalg.norm(UH @ A, axis=0) / np.sqrt(L)
        return scores.reshape(shape)

    M = score_table()

    if s > cap:   # greedy fallback
        perms = [np.full(s, -1, dtype=int) for _ in movable]
        used = [np.zeros(s, dtype=bool) for _ in movable]
        for l in range(s):
            sub = M[l]
            mask = np.zeros_like(sub, dtype=bool)
            for axis, u in enumerate(used):
                idx = [slice(None)] * sub.ndim
                for pos in np.where(u)[0]:
                    idx[axis] = pos
                    mask[tuple(idx)] = True
                    idx[axis] = slice(None)
            sub = np.where(mask, -np.inf, sub)
            best = np.unravel_index(int(np.argmax(sub)), sub.shape)
            for axis, pos in enumerate(best):
                perms[axis][l] = pos
                used[axis][pos] = True
        best_perms = [tuple(p) for p in perms]
    else:
        best_perms = None
        best_score = -np.inf
        ranges = [itertools.permutations(range(s)) for _ in movable]
        for combo in itertools.product(*ranges):
            total = 0.0
            for l in range(s):
                idx = (l,) + tuple(perm[l] for perm in combo)
                total += M[idx]
            if total > best_score:   # strict: lexicographically first wins
                best_score = total
                best_perms = combo

    out = []
    for l in range(s):
        triple = [0.0, 0.0, 0.0]
        triple[anchor] = float(anchor_vals[l])
        for j, c in enumerate(movable):
            triple[c] = float(lists[c][best_perms[j][l]])
        out.append(tuple(triple))
    return out


def estimate_powers(T, zetas, dims, prune_frac=1e-3):
    """Non-negative least-squares powers for given atoms.

    Fits T ~= sum_l p_l a(zeta_l) a(zeta_l)^H with p >= 0 and prunes entries
    below ``prune_frac`` of the largest power. A nearly collinear atom set
    triggers a small ridge (1e-8 of the Gram trace) and is reported in the
    diagnostics.
    """
    T = np.asarray(T)
    zetas = [tuple(z) for z in zetas]
    if not zetas:
        return np.zeros(0), AtomicEstimate([], np.zeros(0), 0)
    A = steering_matrix(np.array(zetas), dims)      # L x s
    L, s = A.shape

    outer = np.einsum("nl,ml->nml", A, A.conj()).reshape(L * L, s)
    design = np.vstack([outer.real, outer.imag])
    rhs = np.concatenate([T.real.ravel(), T.imag.ravel()])

    gram = np.abs(A.conj().T @ A) ** 2
    cond = np.linalg.cond(gram)
    diagnostics = {"gram_condition": float(cond), "ridge": False}
    if not np.isfinite(cond) or cond > 1e12:
        lam = 1e-8 * np.trace(gram).real
        design = np.vstack([design, np.sqrt(lam) * np.eye(s)])
        rhs = np.concatenate([rhs, np.zeros(s)])
        diagnostics["ridge"] = True

    powers, _ = nnls(design, rhs)

    peak = powers.max(initial=0.0)
    if peak <= 0.0:
        keep = np.zeros(s, dtype=bool)
    else:
        keep = powers >= prune_frac * peak
    pruned = AtomicEstimate(
        zetas=[zetas[l] for l in range(s) if keep[l]],
        powers=powers[keep],
        s_hat=int(keep.sum()),
        diagnostics=diagnostics)
    return powers, pruned


def decompose(T, dims, s_max, *, ratio=1e-2, prune_frac=1e-3, cap=6,
              greedy=False, rcond=1e-10):
    """Full pipeline: subspace -> per-coordinate pencils -> pairing -> powers.

    Coordinates with extent one are reported as 0.0 and never differentiated.
    Returns an :class:`AtomicEstimate` whose atoms are sorted by the first
    observable coordinate.
    """
    P, Q, Nr = dims
    sub = signal_subspace(T, s_max, ratio=ratio)
    if sub.s_hat == 0:
        return AtomicEstimate([], np.zeros(0), 0,
                              {"non_sparse": sub.non_sparse})

    estimates = {}
    for name in _COORD_ORDER:
        slot = _DIM_INFO[name]
        extent = (P, Q, Nr)[slot]
        coord = {"delay": 0, "doppler": 1, "angle": 2}[name]
        if extent > 1:
            estimates[coord] = pencil_1d(sub.U, name, dims, rcond=rcond)
        else:
            estimates[coord] = np.zeros(sub.s_hat)

    triples = pair_triples(estimates[0], estimates[1], estimates[2], sub.U,
                           dims, cap=cap, greedy=greedy)
    _, pruned = estimate_powers(T, triples, dims, prune_frac=prune_frac)
    pruned.diagnostics["non_sparse"] = sub.non_sparse
    pruned.diagnostics["eigenvalues"] = sub.eigenvalues
    return pruned
