"""Atomic-norm semidefinite programs and the operator-splitting solver.

The primal program recovers, per user i, a k_i-by-L matrix Z_i that is a
sparse mixture of atoms f a(zeta)^T, by minimizing

    sum_i [ tr(T(V_i)) / (2L) + tr(W_i) / 2 ]

subject to the bordered blocks [[T(V_i), Z_i^T], [Z_i^*, W_i]] being positive
semidefinite (T(V_i) Hermitian three-level Toeplitz) and the measurement
residual y_n - sum_i d_n^T Z_i e_n lying in an l2 ball of radius eta. The
transpose/conjugate bordering is the one under which a mixture of atoms
f a(zeta)^T is certified by T(V) built from the *same* steering vectors
a(zeta) -- a rank-one borderer [a; c^* f^*] has lower-left block c^* f^* a^T
-- so the Vandermonde decomposition of T(V_i) reads off the physical zetas
directly. Internally the solver works in the conjugated unknowns, where the
block is the familiar [[T, Z'^H], [Z', W]].

The dual program maximizes Re<q, y> - eta*||q||_2 subject to, for each user,

    [[Q, Lambda_i^H], [Lambda_i, I_{k_i}]]  PSD,   Lambda_i = sum_n q_n B_n^i,

with the shared Hermitian Q constrained along every three-level lag class
(diagonal class sums to one, every other class to zero), which bounds the
vector dual polynomial ||Lambda_i a(zeta)^*|| by one on the whole torus.

Both problems are solved by the same recipe: a two-block ADMM whose first
block handles the structured/affine pieces in closed form (lag-class means,
per-column least squares, a weighted l2-norm prox) and whose second block is
a plain eigenvalue clip onto the PSD cone, plus an l2-ball projection for the
data term. Penalties adapt by residual balancing; non-convergence is reported
explicitly through ``diagnostics['status']`` and never raised silently.

Internally the data is normalized to ||y|| = 1 and the solution rescaled on
exit, so scaling (y, eta) jointly scales objectives exactly and leaves dual
vectors untouched.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .atoms import (ToeplitzTensor, hermitian_part, lag_class_means,
                    lag_tables, measure_adjoint, toeplitz_apply,
                    toeplitz_zeros)

__all__ = [
    "SolverOpts",
    "PrimalSolution",
    "DualSolution",
    "project_psd",
    "project_l2_ball",
    "bordered_block",
    "solve_primal",
    "solve_dual",
    "write_trace_csv",
]


@dataclass
class SolverOpts:
    """Knobs for the splitting solver.

    ``tol`` bounds the *relative* primal and dual residuals at exit;
    penalties are rebalanced by ``adapt_factor`` whenever one residual
    exceeds ``adapt_ratio`` times the other (checked every ``adapt_every``
    iterations). ``trace_path`` dumps one CSV row per iteration.
    """

    tol: float = 1e-6
    max_iters: int = 50000
    penalty_init: float = 1.0
    penalty_adapt: bool = True
    adapt_every: int = 100
    adapt_factor: float = 2.0
    adapt_ratio: float = 10.0
    trace_path: Optional[str] = None

    def __post_init__(self):
        if self.tol <= 0 or self.max_iters < 1 or self.penalty_init <= 0:
            raise ValueError("tol, max_iters and penalty_init must be positive")

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown solver options: {sorted(extra)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


@dataclass
class PrimalSolution:
    """Primal iterate in data units.

    The PSD certificate ties the blocks together as
    ``[[T(V_i), Z_i^T], [conj(Z_i), W_i]]`` (see :func:`bordered_block`),
    which is what the feasibility checks and tests assert.
    """

    Z: list                  # per-user k_i-by-L estimates
    V: list                  # per-user ToeplitzTensor generators
    W: list                  # per-user k_i-by-k_i Hermitian blocks
    y_residual: np.ndarray   # y - sum_i measure(Z_i)
    objective: float
    diagnostics: dict = field(default_factory=dict)


@dataclass
class DualSolution:
    q: np.ndarray
    Q_mat: np.ndarray
    objective: float
    diagnostics: dict = field(default_factory=dict)


def project_psd(M):
    """Nearest positive semidefinite matrix (Hermitian eigenvalue clip).

    An input that is already PSD comes back as its Hermitian part, i.e.
    unchanged up to symmetrization.
    """
    H = hermitian_part(np.asarray(M))
    w, V = np.linalg.eigh(H)
    if w[0] >= 0.0:
        return H
    w = np.clip(w, 0.0, None)
    return hermitian_part((V * w) @ V.conj().T)


def project_l2_ball(v, radius):
    """Euclidean projection onto the centered l2 ball of given radius."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    v = np.asarray(v)
    n = float(np.linalg.norm(v))
    if n <= radius:
        return v.copy()
    if radius == 0.0:
        return np.zeros_like(v)
    return v * (radius / n)


def write_trace_csv(trace, path):
    """Write an iteration trace (iter, primal_res, dual_res, objective)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "primal_res", "dual_res", "objective"])
        for row in trace:
            writer.writerow([int(row[0]), repr(float(row[1])),
                             repr(float(row[2])), repr(float(row[3]))])


def _stack_codebooks(config, scene):
    """Per-user codebook matrices plus the stacked conjugate-row operator.

    ``C[ :, n]`` stacks conj(d_n^i) over users, so the forward measurement is
    sum_K conj(C[K, n]) * Zstack[K, n] and columns have squared norms alpha.
    """
    D_list = [u.codebook.matrix for u in scene.users]
    slices = []
    start = 0
    for D in D_list:
        k = D.shape[1]
        slices.append(slice(start, start + k))
        start += k
    C = np.conj(np.hstack(D_list)).T.copy()   # (K, L)
    alpha = np.sum(np.abs(C) ** 2, axis=0)
    return D_list, C, alpha, slices


def _bordered(top, Z, W):
    L = top.shape[0]
    k = Z.shape[0]
    M = np.empty((L + k, L + k), dtype=complex)
    M[:L, :L] = top
    M[:L, L:] = Z.conj().T
    M[L:, :L] = Z
    M[L:, L:] = W
    return M


def bordered_block(T_mat, Z, W):
    """Assemble the PSD certificate block [[T, Z^T], [Z*, W]] of a solution."""
    return _bordered(T_mat, np.conj(Z), W)


def _prox_weighted_l2(t, wgt, eta):
    """argmin_q sum_n wgt_n/2 |q_n|^2 - Re(conj(q_n) t_n) + eta ||q||_2.

    For eta = 0 this is the diagonal solve t/wgt. Otherwise q = 0 when
    ||t|| <= eta, else q_n = t_n / (wgt_n + eta/s) where the scale s = ||q||
    solves the monotone scalar equation s = ||t / (wgt + eta/s)|| (bisection).
    """
    wgt = np.maximum(wgt, 1e-14 * max(1.0, float(wgt.max(initial=0.0))))
    if eta <= 0.0:
        return t / wgt
    tnorm = float(np.linalg.norm(t))
    if tnorm <= eta:
        return np.zeros_like(t)
    hi = float(np.linalg.norm(t / wgt))
    lo = hi * 1e-18
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        h = float(np.linalg.norm(t / (wgt + eta / mid)))
        if h > mid:
            lo = mid
        else:
            hi = mid
    s = 0.5 * (lo + hi)
    return t / (wgt + eta / s)


def _project_lag_class_sums(M, dims):
    """Project a matrix onto {Hermitian, lag-class sums = delta_0}.

    The zero-lag (diagonal) class is driven to sum exactly one and every
    other three-level lag class to sum exactly zero; combined with Hermitian
    symmetrization this is the orthogonal projection onto that affine set.
    """
    flat, counts, zero_id, n_lags = lag_tables(dims)
    H = hermitian_part(np.asarray(M))
    idx = flat.ravel()
    sums = (np.bincount(idx, weights=H.real.ravel(), minlength=n_lags)
            + 1j * np.bincount(idx, weights=H.imag.ravel(), minlength=n_lags))
    targets = np.zeros(n_lags, dtype=complex)
    targets[zero_id] = 1.0
    corr = (sums - targets) / counts
    return H - corr[flat]


# ---------------------------------------------------------------------------
# primal
# ---------------------------------------------------------------------------

def solve_primal(meas, opts: SolverOpts = None):
    """Solve the atomic-norm denoising SDP for all users jointly.

    Returns a :class:`PrimalSolution` whose V generators feed the
    Vandermonde decomposition. ``diagnostics['status']`` is ``"converged"``
    or ``"max-iterations"``; the best iterate is returned either way.
    """
    opts = opts or SolverOpts()
    config = meas.config
    dims = config.dims
    L = config.L
    R = config.R

    kappa = float(np.linalg.norm(meas.y))
    if kappa == 0.0:
        kappa = 1.0
    # Work in the conjugated unknowns Z' = conj(Z): the data map stays a
    # per-column least-squares problem (with conjugated y and codebook rows)
    # and the Toeplitz block of the certificate carries a(+zeta) atoms.
    y = np.conj(np.asarray(meas.y, dtype=complex)) / kappa
    eta = float(meas.eta) / kappa

    D_list, C, alpha, slices = _stack_codebooks(config, meas.scene)
    C = np.conj(C)
    k_list = [D.shape[1] for D in D_list]

    # objective shift entering the PSD-side prox: diag(I/(2L), I/2) / rho
    shift_diag = [np.concatenate([np.full(L, 1.0 / (2 * L)),
                                  np.full(k, 0.5)]) for k in k_list]

    S = [np.zeros((L + k, L + k), dtype=complex) for k in k_list]
    U = [np.zeros_like(Si) for Si in S]
    w = np.zeros(L, dtype=complex)
    u2 = np.zeros(L, dtype=complex)
    rho = float(opts.penalty_init)

    V_gen = [None] * R
    W_blk = [None] * R
    Zstack = np.zeros((sum(k_list), L), dtype=complex)
    phiZ = np.zeros(L, dtype=complex)
    X = [None] * R

    trace = []
    status = "max-iterations"
    iters_done = opts.max_iters
    rp = rd = float("inf")

    for it in range(1, opts.max_iters + 1):
        # ---- block 1: structured variables (lag means, data least squares)
        Astack = np.empty_like(Zstack)
        for i in range(R):
            A = S[i] - U[i]
            V_gen[i] = lag_class_means(A[:L, :L], dims)
            W_blk[i] = hermitian_part(A[L:, L:])
            Astack[slices[i]] = A[L:, :L]
        b = y - w - u2
        coupled = np.sum(np.conj(C) * Astack, axis=0)
        if it == 1:
            # From the zero state, jump to the exact least-squares data fit
            # instead of its prox.
            safe = np.where(alpha > 1e-12, alpha, 1.0)
            fit = np.where(alpha > 1e-12, (b - coupled) / safe, 0.0)
        else:
            fit = (b - coupled) / (2.0 + alpha)
        Zstack = Astack + C * fit[None, :]
        phiZ = np.sum(np.conj(C) * Zstack, axis=0)
        if it == 1:
            # Border the exact fit with its scaled-identity certificate
            # (T = ||Z||_F I, W = Z Z^H / ||Z||_F; PSD by Schur complement).
            # That makes the first iterate a feasible point whose objective
            # upper-bounds the optimum, so the trace decreases from row one.
            for i in range(R):
                Zi = Zstack[slices[i]]
                c0 = max(float(np.linalg.norm(Zi)), 1e-12)
                gen = toeplitz_zeros(dims)
                gen.entries[dims[0] - 1, dims[1] - 1, dims[2] - 1] = c0
                V_gen[i] = gen
                W_blk[i] = (Zi @ Zi.conj().T) / c0
        for i in range(R):
            X[i] = _bordered(toeplitz_apply(V_gen[i]), Zstack[slices[i]],
                             W_blk[i])

        # ---- block 2: PSD cone (with the linear objective folded in) + ball
        pri_sq = 0.0
        dua_sq = 0.0
        for i in range(R):
            target = X[i] + U[i]
            target.flat[::L + k_list[i] + 1] -= shift_diag[i] / rho
            S_new = project_psd(target)
            dua_sq += float(np.linalg.norm(S_new - S[i]) ** 2)
            S[i] = S_new
        w_new = project_l2_ball(y - phiZ - u2, eta)
        dua_sq += float(np.linalg.norm(w_new - w) ** 2)
        w = w_new

        # ---- dual ascent
        for i in range(R):
            Ri = X[i] - S[i]
            U[i] += Ri
            pri_sq += float(np.linalg.norm(Ri) ** 2)
        r2 = phiZ + w - y
        u2 += r2
        pri_sq += float(np.linalg.norm(r2) ** 2)

        # ---- residuals, objective, stopping
        norm_ax = math.sqrt(sum(float(np.linalg.norm(Xi) ** 2) for Xi in X)
                            + float(np.linalg.norm(phiZ) ** 2))
        norm_bz = math.sqrt(sum(float(np.linalg.norm(Si) ** 2) for Si in S)
                            + float(np.linalg.norm(w) ** 2))
        scale_p = max(1.0, norm_ax, norm_bz)
        scale_d = max(1.0, rho * math.sqrt(
            sum(float(np.linalg.norm(Ui) ** 2) for Ui in U)
            + float(np.linalg.norm(u2) ** 2)))
        rp = math.sqrt(pri_sq) / scale_p
        rd = rho * math.sqrt(dua_sq) / scale_d

        # Report the feasible X blocks on the first row (the S blocks are
        # still warming up from zero there); the S side thereafter.
        side = X if it == 1 else S
        obj = 0.0
        for i in range(R):
            obj += float(np.trace(side[i][:L, :L]).real) / (2.0 * L)
            obj += 0.5 * float(np.trace(side[i][L:, L:]).real)
        trace.append((it, rp, rd, obj * kappa))

        if rp <= opts.tol and rd <= opts.tol:
            status = "converged"
            iters_done = it
            break

        if opts.penalty_adapt and it % opts.adapt_every == 0:
            if rp > opts.adapt_ratio * rd:
                rho *= opts.adapt_factor
                for Ui in U:
                    Ui /= opts.adapt_factor
                u2 /= opts.adapt_factor
            elif rd > opts.adapt_ratio * rp:
                rho /= opts.adapt_factor
                for Ui in U:
                    Ui *= opts.adapt_factor
                u2 *= opts.adapt_factor

    # undo the conjugation and scale back to the data's units
    Z_out = [np.conj(Zstack[slices[i]]) * kappa for i in range(R)]
    V_out = [ToeplitzTensor(V_gen[i].entries * kappa, dims) for i in range(R)]
    W_out = [W_blk[i] * kappa for i in range(R)]
    obj_out = trace[-1][3]
    y_res = np.conj(y - phiZ) * kappa

    diagnostics = {
        "iterations": iters_done,
        "primal_residual": rp,
        "dual_residual": rd,
        "status": status,
        "penalty": rho,
        "trace": np.asarray(trace),
    }
    if opts.trace_path:
        write_trace_csv(trace, opts.trace_path)
    return PrimalSolution(Z=Z_out, V=V_out, W=W_out, y_residual=y_res,
                          objective=obj_out, diagnostics=diagnostics)


# ---------------------------------------------------------------------------
# dual
# ---------------------------------------------------------------------------

def solve_dual(meas, opts: SolverOpts = None):
    """Solve the dual SDP; the returned q induces the users' dual polynomials.

    The first ADMM block solves for (q, Q) in closed form -- Q by averaging
    the PSD copies and re-imposing the lag-class sums exactly, q by a
    weighted l2-norm prox -- and the second block clips each bordered
    constraint matrix onto the PSD cone.
    """
    opts = opts or SolverOpts()
    config = meas.config
    dims = config.dims
    L = config.L
    R = config.R

    kappa = float(np.linalg.norm(meas.y))
    if kappa == 0.0:
        kappa = 1.0
    y = np.asarray(meas.y, dtype=complex) / kappa
    eta = float(meas.eta) / kappa

    D_list, C, alpha, slices = _stack_codebooks(config, meas.scene)
    k_list = [D.shape[1] for D in D_list]

    G = [np.zeros((L + k, L + k), dtype=complex) for k in k_list]
    U = [np.zeros_like(Gi) for Gi in G]
    rho = float(opts.penalty_init)
    q = np.zeros(L, dtype=complex)
    Q_mat = np.zeros((L, L), dtype=complex)

    eye_blocks = [np.eye(k, dtype=complex) for k in k_list]
    trace = []
    status = "max-iterations"
    iters_done = opts.max_iters
    rp = rd = float("inf")

    for it in range(1, opts.max_iters + 1):
        # ---- block 1: (q, Q) in closed form
        Astack = np.empty((sum(k_list), L), dtype=complex)
        Qbar = np.zeros((L, L), dtype=complex)
        for i in range(R):
            A = G[i] - U[i]
            Qbar += A[:L, :L]
            Astack[slices[i]] = A[L:, :L]
        Q_mat = _project_lag_class_sums(Qbar / R, dims)
        beta = np.sum(np.conj(C) * Astack, axis=0)
        q = _prox_weighted_l2(2.0 * rho * beta + y, 2.0 * rho * alpha, eta)

        # ---- block 2: PSD copies
        pri_sq = 0.0
        dua_sq = 0.0
        norm_ax_sq = 0.0
        for i in range(R):
            M = _bordered(Q_mat, measure_adjoint(q, D_list[i]),
                          eye_blocks[i])
            norm_ax_sq += float(np.linalg.norm(M) ** 2)
            G_new = project_psd(M + U[i])
            dua_sq += float(np.linalg.norm(G_new - G[i]) ** 2)
            G[i] = G_new
            Ri = M - G[i]
            U[i] += Ri
            pri_sq += float(np.linalg.norm(Ri) ** 2)

        scale_p = max(1.0, math.sqrt(norm_ax_sq),
                      math.sqrt(sum(float(np.linalg.norm(Gi) ** 2)
                                    for Gi in G)))
        scale_d = max(1.0, rho * math.sqrt(
            sum(float(np.linalg.norm(Ui) ** 2) for Ui in U)))
        rp = math.sqrt(pri_sq) / scale_p
        rd = rho * math.sqrt(dua_sq) / scale_d

        obj = float(np.vdot(y, q).real) - eta * float(np.linalg.norm(q))
        trace.append((it, rp, rd, obj * kappa))

        if rp <= opts.tol and rd <= opts.tol:
            status = "converged"
            iters_done = it
            break

        if opts.penalty_adapt and it % opts.adapt_every == 0:
            if rp > opts.adapt_ratio * rd:
                rho *= opts.adapt_factor
                for Ui in U:
                    Ui /= opts.adapt_factor
            elif rd > opts.adapt_ratio * rp:
                rho /= opts.adapt_factor
                for Ui in U:
                    Ui *= opts.adapt_factor

    diagnostics = {
        "iterations": iters_done,
        "primal_residual": rp,
        "dual_residual": rd,
        "status": status,
        "penalty": rho,
        "trace": np.asarray(trace),
    }
    if opts.trace_path:
        write_trace_csv(trace, opts.trace_path)
    return DualSolution(q=q, Q_mat=Q_mat, objective=trace[-1][3],
                        diagnostics=diagnostics)
