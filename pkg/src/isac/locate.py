"""Target localization from multi-user bistatic delay estimates.

Each user's dominant path bounces off the shared target, so its propagation
delay encodes the distance sum ||x_i - x_T|| + ||x_T - x_BS||. The delays of
all users are mapped affinely onto the normalized torus (where the sensing
pipeline estimates them), mapped back to seconds, converted to distance sums
and fed to a nonlinear least-squares position solver.

The torus is half-open while the affine map is onto [0, 1], and both
endpoints sit on the wrap point 0 == 1 where estimation noise flips an
extreme user to the far end of the axis. The normalized delays are
therefore compressed into [m, 1-m] with a one-resolution-cell guard
m = 1/Q before synthesis; estimates that still wrap past the guard (land
just below 1) are unwrapped by -1 before the inverse map.

The delay-only experiment runs with Q subcarriers and P = N_r = 1: the delay
multiplies the subcarrier index, so at least two subcarriers are needed for
it to be observable at all.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .atoms import toeplitz_apply
from .model import (PathParams, Scene, SceneConfig, UserSpec, derive_seed,
                    draw_message, make_codebook, synthesize_measurements)
from .sdp import SolverOpts, solve_primal
from .vandermonde import decompose

__all__ = [
    "C_LIGHT",
    "Geometry",
    "DelayNormalization",
    "LocateResult",
    "physical_delay",
    "normalize_delays",
    "localize",
    "localization_trial",
    "localization_mae",
]

C_LIGHT = 3.0e8

_SALT_GEOM = 0x6E0
_SALT_TRIAL = 0x7217


@dataclass
class Geometry:
    """Planar positions (meters) of base station, users and target."""

    bs_position: np.ndarray
    user_positions: list
    target_position: np.ndarray
    c_light: float = C_LIGHT

    def __post_init__(self):
        self.bs_position = np.asarray(self.bs_position, dtype=float)
        self.target_position = np.asarray(self.target_position, dtype=float)
        self.user_positions = [np.asarray(u, dtype=float)
                               for u in self.user_positions]
        for a in range(len(self.user_positions)):
            for b in range(a + 1, len(self.user_positions)):
                if np.array_equal(self.user_positions[a],
                                  self.user_positions[b]):
                    raise ValueError("user positions must be distinct")
        if np.array_equal(self.target_position, self.bs_position):
            raise ValueError("target must not coincide with the base station")


@dataclass
class DelayNormalization:
    """Affine map [lo, hi] seconds <-> [0, 1]; needs an actual spread."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError("degenerate normalization: delays have no "
                             "spread (hi must exceed lo)")

    def normalize(self, seconds):
        return (np.asarray(seconds, dtype=float) - self.lo) / (self.hi - self.lo)

    def denormalize(self, normalized):
        return np.asarray(normalized, dtype=float) * (self.hi - self.lo) + self.lo


@dataclass
class LocateResult:
    position: np.ndarray
    residual: float          # l2 norm of the distance-sum misfit, meters
    condition: float         # Jacobian condition number at the solution
    degenerate: bool


def physical_delay(geom: Geometry, i):
    """Bistatic delay of user i: (user->target->BS distance) / c."""
    d = (np.linalg.norm(geom.user_positions[i] - geom.target_position)
         + np.linalg.norm(geom.target_position - geom.bs_position))
    return float(d / geom.c_light)


def normalize_delays(delays):
    """Map delays affinely onto [0, 1] (min -> 0, max -> 1)."""
    delays = np.asarray(delays, dtype=float)
    if delays.size < 2:
        raise ValueError("need at least two delays to normalize")
    dn = DelayNormalization(lo=float(delays.min()), hi=float(delays.max()))
    return dn.normalize(delays), dn


def _distance_residuals(x, bs, users, sums):
    return (np.linalg.norm(users - x, axis=1)
            + np.linalg.norm(x - bs) - sums)


def localize(bs_position, user_positions, measured_sums, *, starts=10,
             iterations=200, step_tol=1e-9, seed=0):
    """Position minimizing the squared distance-sum misfit.

    Multi-start Gauss-Newton with a numeric Jacobian and backtracking line
    search; the minimum-norm step keeps single-user (rank-deficient)
    problems moving along their ambiguity ellipse. Always returns the best
    point found; ``degenerate`` marks a rank-deficient Jacobian there.
    """
    bs = np.asarray(bs_position, dtype=float)
    users = np.asarray(user_positions, dtype=float).reshape(-1, 2)
    sums = np.asarray(measured_sums, dtype=float)
    if len(sums) != len(users):
        raise ValueError("one distance sum per user required")

    pts = np.vstack([users, bs[None, :]])
    center = 0.5 * (pts.min(axis=0) + pts.max(axis=0))
    half = np.maximum(pts.max(axis=0) - pts.min(axis=0), 1.0)  # 2x inflation
    rng = np.random.default_rng(seed)
    origins = center + rng.uniform(-1.0, 1.0, size=(starts, 2)) * half

    def cost(x):
        r = _distance_residuals(x, bs, users, sums)
        return float(r @ r)

    def jacobian(x):
        h = 1e-6 * (1.0 + float(np.linalg.norm(x)))
        J = np.empty((len(users), 2))
        for d in range(2):
            e = np.zeros(2)
            e[d] = h
            J[:, d] = (_distance_residuals(x + e, bs, users, sums)
                       - _distance_residuals(x - e, bs, users, sums)) / (2 * h)
        return J

    best_x = None
    best_c = math.inf
    for x0 in origins:
        x = x0.copy()
        c = cost(x)
        for _ in range(iterations):
            if c <= 1e-30:
                break
            r = _distance_residuals(x, bs, users, sums)
            J = jacobian(x)
            step = np.linalg.lstsq(J, -r, rcond=None)[0]
            t = 1.0
            moved = False
            while t >= 1e-12:
                xn = x + t * step
                cn = cost(xn)
                if cn <= c:
                    x, c = xn, cn
                    moved = True
                    break
                t *= 0.5
            if not moved:
                break
            if t * float(np.linalg.norm(step)) < step_tol:
                break
        if c < best_c:
            best_c, best_x = c, x

    svals = np.linalg.svd(jacobian(best_x), compute_uv=False)
    if svals.size < 2:  # fewer residuals than unknowns: rank-deficient
        svals = np.concatenate([svals, np.zeros(2 - svals.size)])
    smax = float(svals[0])
    smin = float(svals[-1])
    condition = math.inf if smin == 0.0 else smax / smin
    return LocateResult(position=best_x, residual=math.sqrt(best_c),
                        condition=condition,
                        degenerate=smin <= 1e-8 * max(smax, 1e-300))


# ---------------------------------------------------------------------------
# delay-estimation Monte Carlo
# ---------------------------------------------------------------------------

def _delay_scene(config, geometry, compressed, gains, messages):
    users = []
    for i in range(config.R):
        message, symbols = messages[i]
        users.append(UserSpec(
            position=geometry.user_positions[i],
            velocity=np.zeros(2),
            paths=[PathParams(gain=gains[i], tau=float(compressed[i]),
                              nu=0.0, theta=0.0)],
            message=message,
            codebook=make_codebook(config, i + 1),
            symbols=symbols))
    return Scene(users=users, bs_position=geometry.bs_position,
                 common_target_index=[0] * config.R)


def localization_trial(trial_index, base_seed, R_values, *, Q=16,
                       snr_db=5.0, box_half=100.0, target=(50.0, 30.0),
                       bs=(0.0, 0.0), oracle_delays=False, solver_opts=None):
    """One geometry draw, evaluated for every requested user count.

    The user positions, gains and messages are drawn once for max(R) users
    and nested subsets are reused across the R sweep, so the comparison is
    paired. The delay-normalization window always comes from the full draw
    (a single user has no spread of its own).
    """
    R_values = sorted(set(int(R) for R in R_values))
    R_max = R_values[-1]
    trial_seed = derive_seed(base_seed, _SALT_TRIAL, trial_index)
    rng = np.random.default_rng([trial_seed, _SALT_GEOM])

    positions = rng.uniform(-box_half, box_half, size=(R_max, 2))
    geom = Geometry(bs_position=np.asarray(bs, dtype=float),
                    user_positions=list(positions),
                    target_position=np.asarray(target, dtype=float))
    d_true = float(np.linalg.norm(geom.target_position - geom.bs_position))

    delays = np.array([physical_delay(geom, i) for i in range(R_max)])
    normalized, window = normalize_delays(delays)
    # Guard band of one resolution cell on each side of the delay axis:
    # without it the extreme users sit on the wrap point 0 == 1 and any
    # negative noise excursion flips them to the far end.
    margin = 1.0 / Q
    scale = 1.0 - 2.0 * margin
    unwrap_above = 1.0 - 0.5 * margin

    phases = rng.uniform(0.0, 2.0 * np.pi, size=R_max)
    gains = np.exp(1j * phases)
    messages = [draw_message(1, "8-ASK", rng) for _ in range(R_max)]

    rows = []
    for R in R_values:
        status = "oracle"
        if oracle_delays:
            est_norm = normalized[:R].copy()
        else:
            config = SceneConfig(P=1, Q=Q, N_r=1, R=R, k=(1,) * R,
                                 s=(1,) * R, snr_db=snr_db,
                                 seed=derive_seed(trial_seed, R))
            sub_geom = Geometry(bs_position=geom.bs_position,
                                user_positions=list(positions[:R]),
                                target_position=geom.target_position)
            scene = _delay_scene(config, sub_geom,
                                 margin + scale * normalized[:R], gains[:R],
                                 messages[:R])
            # per-user noise reference: the sweep compares user counts, so
            # adding users must not drown each one in the others' power
            meas = synthesize_measurements(scene, config,
                                           snr_reference="per_user")
            sol = solve_primal(meas, solver_opts or SolverOpts())
            status = sol.diagnostics["status"]
            est_norm = np.empty(R)
            for i in range(R):
                est = decompose(toeplitz_apply(sol.V[i]), config.dims,
                                s_max=2)
                if est.s_hat == 0:
                    est_norm[i] = 0.0
                    status = "no-atom"
                    continue
                tau_hat = est.zetas[int(np.argmax(est.powers))][0]
                if tau_hat > unwrap_above:
                    tau_hat -= 1.0
                est_norm[i] = (tau_hat - margin) / scale

        sums_m = C_LIGHT * window.denormalize(est_norm)
        fit = localize(geom.bs_position, positions[:R], sums_m,
                       seed=derive_seed(trial_seed, R, 1))
        d_hat = float(np.linalg.norm(fit.position - geom.bs_position))
        rows.append({
            "trial": int(trial_index),
            "R": int(R),
            "d_true_m": d_true,
            "d_hat_m": d_hat,
            "abs_error_m": abs(d_hat - d_true),
            "fit_residual_m": fit.residual,
            "degenerate": bool(fit.degenerate),
            "status": status,
        })
    return rows


def localization_mae(R_values, trials, snr_db=5.0, seed=0, **trial_kwargs):
    """MAE of the estimated target-to-BS distance per user count.

    Returns (summary rows, per-trial rows, all_converged). Summary rows have
    columns (R, trials, snr_db, mae_m).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    raw = []
    for t in range(trials):
        raw.extend(localization_trial(t, seed, R_values, snr_db=snr_db,
                                      **trial_kwargs))
    summary = []
    for R in sorted(set(int(R) for R in R_values)):
        errs = [row["abs_error_m"] for row in raw if row["R"] == R]
        summary.append({"R": R, "trials": trials, "snr_db": snr_db,
                        "mae_m": float(np.mean(errs))})
    all_converged = all(row["status"] != "max-iterations" for row in raw)
    return summary, raw, all_converged
