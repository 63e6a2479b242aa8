"""Message recovery from estimated path parameters.

With the path triples fixed, the measurement is linear in the products
c_{l,i} f_i: column block (i, l) of the dictionary has entries
[a(zeta_{l,i})]_n (d_n^i)^T, so least squares returns per-path vectors
c_{l,i} f_i. Stacking a user's blocks as columns of a k_i-by-s_i matrix
gives a rank-one matrix (outer product of f_i and the gain row); its leading
left singular vector is the unit-norm message estimate, with the inherent
common phase fixed by rotating the largest-magnitude entry real positive.

8-ASK messages are normalized alphabet vectors v/||v||; demapping searches
the alphabet lattice for the normalized point closest to the recovered
message, which sidesteps the unknown normalization ||v||.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .atoms import steering_vector
from .model import ASK_LEVELS, canonicalize_phase

__all__ = [
    "DecodeResult",
    "build_dictionary",
    "recover_messages",
    "demap_ask",
    "symbols_and_ser",
]


@dataclass
class DecodeResult:
    """Per-user message estimates and (once demapped) symbol error rates.

    ``messages[i]`` is unit-norm except for users flagged in
    ``diagnostics['no_energy']``, whose message is undefined (zeros) and
    whose SER is 1 by convention.
    """

    messages: list
    gains: list
    structure: list                     # per-user (s_hat_i, k_i)
    symbols: Optional[list] = None
    ser_per_user: Optional[list] = None
    ser_aggregate: Optional[float] = None
    diagnostics: dict = field(default_factory=dict)


def build_dictionary(zeta_hats, codebooks, dims):
    """L x sum(s_hat_i * k_i) dictionary; block (i, l) = a(zeta) [*] D_i.

    ``zeta_hats[i]`` lists user i's estimated triples. Raises when the
    column count exceeds L (underdetermined least squares).
    """
    blocks = []
    L = None
    for zetas, codebook in zip(zeta_hats, codebooks):
        D = getattr(codebook, "matrix", codebook)
        L = D.shape[0]
        for zeta in zetas:
            a = steering_vector(zeta, dims)
            blocks.append(a[:, None] * D)
    if not blocks:
        raise ValueError("no estimated paths to decode")
    A = np.hstack(blocks)
    if A.shape[1] > L:
        raise ValueError(
            f"dictionary has {A.shape[1]} columns for {L} measurements; "
            "the system is underdetermined")
    return A


def recover_messages(dictionary, y, structure):
    """Least squares on the dictionary, then rank-one message extraction.

    ``structure`` lists (s_hat_i, k_i) per user in dictionary column order.
    A rank-deficient dictionary falls back to a relative ridge (1e-8 of the
    mean column energy), recorded in the diagnostics.
    """
    A = np.asarray(dictionary)
    y = np.asarray(y, dtype=complex)
    ncols = A.shape[1]
    if sum(s * k for s, k in structure) != ncols:
        raise ValueError("structure does not match the dictionary columns")

    svals = np.linalg.svd(A, compute_uv=False)
    smax = float(svals[0]) if svals.size else 0.0
    smin = float(svals[-1]) if svals.size else 0.0
    condition = math.inf if smin == 0.0 else smax / smin
    ridge = 0.0
    if condition > 1e12:
        G = A.conj().T @ A
        ridge = 1e-8 * float(np.trace(G).real) / ncols
        x = np.linalg.solve(G + ridge * np.eye(ncols), A.conj().T @ y)
    else:
        x = np.linalg.lstsq(A, y, rcond=None)[0]

    messages = []
    gains = []
    no_energy = []
    offset = 0
    for i, (s_hat, k) in enumerate(structure):
        block = x[offset:offset + s_hat * k]
        offset += s_hat * k
        M = block.reshape(s_hat, k).T       # columns are c_l * f
        if s_hat == 0 or float(np.linalg.norm(M)) <= 1e-300:
            messages.append(np.zeros(k, dtype=complex))
            gains.append(np.zeros(s_hat, dtype=complex))
            no_energy.append(i)
            continue
        U, _, _ = np.linalg.svd(M, full_matrices=False)
        f_hat = canonicalize_phase(U[:, 0])
        messages.append(f_hat)
        gains.append(f_hat.conj() @ M)

    residual = float(np.linalg.norm(A @ x - y))
    return DecodeResult(
        messages=messages, gains=gains, structure=list(structure),
        diagnostics={"condition": condition, "ridge": ridge,
                     "residual": residual, "no_energy": no_energy})


def _nearest_symbols(scaled):
    return np.argmin(np.abs(scaled[:, None] - ASK_LEVELS[None, :]), axis=1)


def demap_ask(f_hat):
    """Symbol indices of the normalized alphabet point nearest to f_hat.

    Exhaustive over the 8^k lattice for small k (exact nearest normalized
    point); larger k alternates entrywise rounding with norm re-estimation.
    """
    f_hat = np.asarray(f_hat)
    k = f_hat.shape[0]
    if k <= 5:
        best = None
        best_d = math.inf
        for combo in itertools.product(range(len(ASK_LEVELS)), repeat=k):
            v = ASK_LEVELS[list(combo)]
            d = float(np.linalg.norm(f_hat - v / np.linalg.norm(v)))
            if d < best_d - 1e-15:
                best_d = d
                best = combo
        return np.array(best, dtype=int)
    scale = math.sqrt(21.0 * k)          # E[level^2] = 21 for 8-ASK
    symbols = _nearest_symbols(scale * f_hat.real)
    for _ in range(4):
        scale = float(np.linalg.norm(ASK_LEVELS[symbols]))
        symbols = _nearest_symbols(scale * f_hat.real)
    return symbols


def symbols_and_ser(result: DecodeResult, scene, constellation="8-ASK"):
    """Demap messages and score them against the scene's true symbols.

    The aggregate rate weights users by message length:
    SER_agg = sum(k_i SER_i) / sum(k_i). Users without recovered energy
    count as all-wrong.
    """
    if constellation != "8-ASK":
        raise ValueError("symbol error rates need a discrete constellation")
    symbols = []
    ser = []
    for i, f_hat in enumerate(result.messages):
        true = scene.users[i].symbols
        if true is None:
            raise ValueError(f"user {i} carries no symbols to score")
        if i in result.diagnostics.get("no_energy", ()):
            symbols.append(None)
            ser.append(1.0)
            continue
        sym = demap_ask(f_hat)
        symbols.append(sym)
        ser.append(float(np.mean(sym != np.asarray(true))))
    weights = np.array([k for _, k in result.structure], dtype=float)
    aggregate = float(np.dot(weights, ser) / weights.sum())
    return DecodeResult(
        messages=result.messages, gains=result.gains,
        structure=result.structure, symbols=symbols, ser_per_user=ser,
        ser_aggregate=aggregate, diagnostics=dict(result.diagnostics))
