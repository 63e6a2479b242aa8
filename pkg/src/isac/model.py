"""Scene synthesis for the blind multi-user uplink.

A scene holds R users, each with a handful of propagation paths (moving
targets and near-stationary scatterers), a unit-norm data message and a
structured codebook. The frequency-domain measurement at unified sample
index n is

    y_n = sum_i sum_l c_{l,i} * a_n(zeta_{l,i}) * (d_n^i)^T f_i + eps_n,

i.e. each user's per-sample data symbol (codebook row times message) rides on
the superposition of its paths' steering phases. Codebooks factor as
D_i = c_user(i) * A_i with the unit-modulus user code c_user(i)
= exp(j*2*pi*(i-1)/R) shared by all entries of user i.

Everything is deterministic given (SceneConfig, seed): scene draw, codebooks
and noise use separate named substreams of the config seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .atoms import steering_vector, wrap_distance

__all__ = [
    "ASK_LEVELS",
    "SceneConfig",
    "PathParams",
    "Codebook",
    "UserSpec",
    "Scene",
    "MeasurementSet",
    "snr_to_sigma",
    "eta_from_sigma",
    "make_codebook",
    "canonicalize_phase",
    "draw_message",
    "make_scene",
    "synthesize_measurements",
    "config_to_json",
    "config_from_json",
    "scene_to_json",
    "scene_from_json",
    "splitmix64",
    "derive_seed",
]

# 8-ASK alphabet in level order; symbols are indices into this array.
ASK_LEVELS = np.array([-7.0, -5.0, -3.0, -1.0, 1.0, 3.0, 5.0, 7.0])

CONSTELLATIONS = ("8-ASK", "unit-norm-gaussian")

# named substream salts so scene draw / codebooks / noise never collide
_SALT_SCENE = 0x5CE2E
_SALT_COMMON = 0xC0DEB00C
_SALT_PERT = 0x9E2B
_SALT_NOISE = 0x4015E

_MASK64 = (1 << 64) - 1


def splitmix64(x):
    """One splitmix64 mixing step (64-bit avalanche)."""
    x = (int(x) + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def derive_seed(base, *parts):
    """Mix a base seed with integer labels into an independent substream.

    Used to hand each Monte Carlo trial (and each labelled draw inside a
    trial) its own seed without overlapping streams.
    """
    s = int(base) & _MASK64
    for p in parts:
        s = splitmix64(s ^ (int(p) & _MASK64))
    return s


@dataclass(frozen=True)
class SceneConfig:
    """Grid dimensions, user/channel counts and noise level for one scene."""

    P: int
    Q: int
    N_r: int
    R: int
    k: tuple
    s: tuple
    snr_db: float
    seed: int
    constellation: str = "8-ASK"

    def __post_init__(self):
        object.__setattr__(self, "k", tuple(int(v) for v in self.k))
        object.__setattr__(self, "s", tuple(int(v) for v in self.s))
        if min(self.P, self.Q, self.N_r, self.R) < 1:
            raise ValueError("P, Q, N_r, R must all be >= 1")
        if len(self.k) != self.R or len(self.s) != self.R:
            raise ValueError("k and s must have one entry per user")
        if any(v < 1 for v in self.k) or any(v < 1 for v in self.s):
            raise ValueError("per-user k_i and s_i must be >= 1")
        if self.constellation not in CONSTELLATIONS:
            raise ValueError(f"unknown constellation {self.constellation!r}")
        if self.seed < 0:
            raise ValueError("seed must be a non-negative integer")
        budget = sum(si * ki for si, ki in zip(self.s, self.k))
        if self.L < budget:
            raise ValueError(
                f"L = P*Q*N_r = {self.L} is smaller than the total atomic "
                f"budget sum(s_i*k_i) = {budget}; the mixture is not "
                "identifiable at this size")

    @property
    def L(self):
        return self.P * self.Q * self.N_r

    @property
    def dims(self):
        return (self.P, self.Q, self.N_r)

    def to_dict(self):
        return {
            "P": self.P, "Q": self.Q, "N_r": self.N_r, "R": self.R,
            "k": list(self.k), "s": list(self.s),
            "snr_db": self.snr_db, "seed": self.seed,
            "constellation": self.constellation,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(P=d["P"], Q=d["Q"], N_r=d["N_r"], R=d["R"],
                   k=tuple(d["k"]), s=tuple(d["s"]), snr_db=d["snr_db"],
                   seed=d["seed"],
                   constellation=d.get("constellation", "8-ASK"))


@dataclass(frozen=True)
class PathParams:
    """One propagation path: complex gain plus normalized (tau, nu, theta)."""

    gain: complex
    tau: float
    nu: float
    theta: float

    def __post_init__(self):
        for name in ("tau", "nu", "theta"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name}={v} outside the torus [0, 1)")

    @property
    def zeta(self):
        return (self.tau, self.nu, self.theta)


@dataclass
class Codebook:
    """Structured user codebook D = user_code * base (L-by-k)."""

    matrix: np.ndarray
    user_code: complex
    base: np.ndarray

    def validate(self, tol=1e-12):
        if abs(abs(self.user_code) - 1.0) > tol:
            raise ValueError("user_code must be unit modulus")
        if not np.allclose(self.matrix, self.user_code * self.base,
                           rtol=0, atol=tol):
            raise ValueError("matrix must equal user_code * base")


@dataclass
class UserSpec:
    """One user: geometry, paths, message and codebook."""

    position: np.ndarray
    velocity: np.ndarray
    paths: list
    message: np.ndarray
    codebook: Codebook
    symbols: Optional[np.ndarray] = None   # 8-ASK level indices, if relevant


@dataclass
class Scene:
    users: list
    bs_position: np.ndarray
    common_target_index: list = field(default_factory=list)

    def __post_init__(self):
        if not self.common_target_index:
            self.common_target_index = [None] * len(self.users)


@dataclass
class MeasurementSet:
    """Measurements y plus the noise level actually used to create them."""

    y: np.ndarray
    sigma: float
    eta: float
    scene: Scene
    config: SceneConfig


def snr_to_sigma(noiseless_power, L, snr_db):
    """Per-sample complex noise std for the requested SNR.

    SNR is defined against the noiseless signal power:
    snr_db = 10*log10(noiseless_power / (L*sigma^2)), so
    sigma = sqrt(noiseless_power / (L*10^(snr_db/10))). snr_db of None or
    +inf means noiseless (sigma = 0).
    """
    if noiseless_power < 0:
        raise ValueError("noiseless_power must be >= 0")
    if L < 1:
        raise ValueError("L must be >= 1")
    if snr_db is None or (math.isinf(snr_db) and snr_db > 0):
        return 0.0
    return math.sqrt(noiseless_power / (L * 10.0 ** (snr_db / 10.0)))


def eta_from_sigma(sigma, L):
    """Noise-ball radius sigma*sqrt(L + sqrt(2*L*ln(L))) used by the solvers."""
    if L < 1:
        raise ValueError("L must be >= 1")
    return float(sigma) * math.sqrt(L + math.sqrt(2.0 * L * math.log(L)))


def make_codebook(config: SceneConfig, user_index: int, seed=None):
    """Deterministic structured codebook for one user.

    A common orthonormalized complex-Gaussian matrix (shared by all users of
    the same k_i) is circularly row-shifted by the user index, perturbed by a
    5% relative-Frobenius user-specific draw and column-renormalized; the
    result is scaled by the unit-modulus user code exp(j*2*pi*(i-1)/R).
    """
    if not 1 <= user_index <= config.R:
        raise ValueError(f"user_index must be in 1..R={config.R}")
    if seed is None:
        seed = config.seed
    L = config.L
    k = config.k[user_index - 1]

    rng_common = np.random.default_rng([seed, _SALT_COMMON, k])
    common = (rng_common.standard_normal((L, k))
              + 1j * rng_common.standard_normal((L, k)))
    common, _ = np.linalg.qr(common)

    shifted = np.roll(common, user_index, axis=0)
    rng_pert = np.random.default_rng([seed, _SALT_PERT, user_index])
    pert = (rng_pert.standard_normal((L, k))
            + 1j * rng_pert.standard_normal((L, k)))
    pert *= 0.05 * np.linalg.norm(shifted) / np.linalg.norm(pert)
    base = shifted + pert
    base /= np.linalg.norm(base, axis=0, keepdims=True)

    user_code = np.exp(2j * np.pi * (user_index - 1) / config.R)
    return Codebook(matrix=user_code * base, user_code=complex(user_code),
                    base=base)


def canonicalize_phase(v, tol=1e-6):
    """Rotate v so its largest-magnitude entry is real and positive.

    Resolves the inherent common-phase ambiguity of a blind gain/message
    factorization. Ties in magnitude are broken toward the first index within
    a small relative tolerance, which keeps the choice stable under
    floating-point jitter.
    """
    v = np.asarray(v, dtype=complex)
    mags = np.abs(v)
    m = mags.max(initial=0.0)
    if m == 0.0:
        return v.copy()
    idx = int(np.argmax(mags >= m * (1.0 - tol)))
    phase = v[idx] / abs(v[idx])
    return v * np.conj(phase)


def draw_message(k, constellation, rng):
    """Unit-norm message vector (and 8-ASK level indices when applicable).

    Messages are stored already phase-canonicalized (largest-magnitude entry
    real positive) so that decoded constellations are directly comparable.
    """
    if constellation == "8-ASK":
        symbols = rng.integers(0, len(ASK_LEVELS), size=k)
        v = ASK_LEVELS[symbols]
        v_canon = canonicalize_phase(v).real
        if not np.array_equal(v_canon, v):
            # the sign flip moved every level to its mirror image
            symbols = len(ASK_LEVELS) - 1 - symbols
        message = v_canon / np.linalg.norm(v_canon)
        return message.astype(complex), symbols.astype(int)
    if constellation == "unit-norm-gaussian":
        v = rng.standard_normal(k) + 1j * rng.standard_normal(k)
        v = canonicalize_phase(v)
        return v / np.linalg.norm(v), None
    raise ValueError(f"unknown constellation {constellation!r}")


def _active_mask(dims):
    """(tau, nu, theta) activity: a coordinate is observable only when the
    matching extent (Q, P, N_r) exceeds one."""
    P, Q, Nr = dims
    return (Q > 1, P > 1, Nr > 1)


def _draw_separated(rng, specs, active, min_sep, max_tries=2000):
    """Draw len(specs) triples honoring per-path constraints and pairwise
    wrap-around separation of min_sep in at least one active coordinate.

    ``specs`` is a list of per-coordinate (lo, hi) interval triples; inactive
    coordinates are pinned to 0.
    """
    n_active = sum(active)
    if n_active == 0:
        raise ValueError("scene needs at least one observable coordinate "
                         "(some of P, Q, N_r must exceed 1)")
    for _ in range(max_tries):
        cand = []
        for spec in specs:
            triple = []
            for coord in range(3):
                if not active[coord]:
                    triple.append(0.0)
                else:
                    lo, hi = spec[coord]
                    triple.append(rng.uniform(lo, hi) % 1.0)
            cand.append(tuple(triple))
        ok = True
        for a in range(len(cand)):
            for b in range(a + 1, len(cand)):
                seps = [wrap_distance(cand[a][c], cand[b][c])
                        for c in range(3) if active[c]]
                if max(seps, default=0.0) < min_sep:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            return cand
    raise RuntimeError(
        "could not draw paths with the requested separation; loosen min_sep "
        "or reduce the number of paths")


def make_scene(config: SceneConfig, *, doppler_floor=0.02,
               targets_per_user=None, common_target=False,
               min_sep=None):
    """Draw a random scene consistent with ``config``.

    Per user, ``targets_per_user`` paths are moving targets (normalized
    Doppler above ``doppler_floor``); the remaining paths are near-stationary
    scatterers clustered at low Doppler (below 0.4x the floor) with free
    delay and angle, so the two classes always separate by thresholding nu
    at ``doppler_floor``. Distinct paths of one user are separated by at
    least ``min_sep`` (default 1/max(P,Q,N_r)) in wrap-around distance in at
    least one observable coordinate. With ``common_target=True`` the first
    target path of every user shares one angle of arrival and one complex
    reflection gain (one physical target with one reflection coefficient,
    seen from the base station); the shared angle takes part in the
    separation check like any other draw.
    """
    rng = np.random.default_rng([config.seed, _SALT_SCENE])
    dims = config.dims
    active = _active_mask(dims)
    if min_sep is None:
        min_sep = 1.0 / max(dims)

    target_lo = max(2.0 * doppler_floor, 0.04)
    common_theta = rng.uniform(0.0, 1.0) if common_target else None
    common_gain = None
    if common_target:
        common_gain = (rng.uniform(0.5, 1.5)
                       * np.exp(1j * rng.uniform(0.0, 2.0 * np.pi)))

    users = []
    common_idx = []
    for i in range(1, config.R + 1):
        s_i = config.s[i - 1]
        k_i = config.k[i - 1]
        if targets_per_user is None:
            n_targets = 1
        elif np.isscalar(targets_per_user):
            n_targets = int(targets_per_user)
        else:
            n_targets = int(targets_per_user[i - 1])
        n_targets = min(max(n_targets, 0), s_i)

        # targets first, then low-Doppler clutter
        specs = []
        for t in range(n_targets):
            theta_spec = (0.0, 1.0)
            if t == 0 and common_target and active[2]:
                theta_spec = (common_theta, common_theta)
            specs.append((
                (0.0, 1.0),
                (target_lo, 0.5),
                theta_spec,
            ))
        for _ in range(s_i - n_targets):
            specs.append((
                (0.0, 1.0),
                (0.0, 0.4 * doppler_floor),
                (0.0, 1.0),
            ))
        triples = _draw_separated(rng, specs, active, min_sep)

        paths = []
        for t, (tau, nu, theta) in enumerate(triples):
            if common_target and n_targets >= 1 and t == 0:
                gain = common_gain
            else:
                mag = rng.uniform(0.5, 1.5)
                phase = rng.uniform(0.0, 2.0 * np.pi)
                gain = mag * np.exp(1j * phase)
            paths.append(PathParams(gain=gain, tau=tau, nu=nu, theta=theta))

        message, symbols = draw_message(k_i, config.constellation, rng)
        users.append(UserSpec(
            position=np.zeros(2), velocity=np.zeros(2), paths=paths,
            message=message, codebook=make_codebook(config, i),
            symbols=symbols))
        common_idx.append(0 if (common_target and n_targets >= 1) else None)

    return Scene(users=users, bs_position=np.zeros(2),
                 common_target_index=common_idx)


def synthesize_measurements(scene: Scene, config: SceneConfig,
                            snr_reference="total"):
    """Noiseless superposition of all users plus circular Gaussian noise.

    The noise std follows the configured SNR relative to the noiseless
    power; eta is the matching residual-ball radius used by the solvers.
    With ``snr_reference="per_user"`` the reference power is the average
    single-user power instead of the superposition's, so the effective
    per-user SNR stays flat as users are added (the total-power reference
    dilutes each user by the crowd). Deterministic given (scene,
    config.seed).
    """
    if len(scene.users) != config.R:
        raise ValueError("scene and config disagree on the number of users")
    if snr_reference not in ("total", "per_user"):
        raise ValueError("snr_reference must be 'total' or 'per_user'")
    L = config.L
    y_clean = np.zeros(L, dtype=complex)
    user_powers = []
    for user in scene.users:
        D = user.codebook.matrix
        if D.shape != (L, len(user.message)):
            raise ValueError("codebook shape does not match config")
        x = D @ user.message           # per-sample data symbols d_n^T f
        h = np.zeros(L, dtype=complex)
        for path in user.paths:
            h += path.gain * steering_vector(path.zeta, config.dims)
        contribution = x * h
        user_powers.append(float(np.vdot(contribution, contribution).real))
        y_clean += contribution

    if snr_reference == "per_user":
        power = float(np.mean(user_powers))
    else:
        power = float(np.vdot(y_clean, y_clean).real)
    sigma = snr_to_sigma(power, L, config.snr_db)
    if sigma > 0:
        rng = np.random.default_rng([config.seed, _SALT_NOISE])
        noise = (rng.standard_normal(L) + 1j * rng.standard_normal(L)) \
            * (sigma / math.sqrt(2.0))
        y = y_clean + noise
    else:
        y = y_clean
    eta = eta_from_sigma(sigma, L)
    return MeasurementSet(y=y, sigma=sigma, eta=eta, scene=scene,
                          config=config)


# ---------------------------------------------------------------------------
# JSON round-tripping (complex numbers as [re, im] pairs)
# ---------------------------------------------------------------------------

def _c2j(z):
    z = complex(z)
    return [z.real, z.imag]


def _j2c(pair):
    return complex(pair[0], pair[1])


def _carray2j(a):
    a = np.asarray(a, dtype=complex)
    return [[_c2j(z) for z in row] for row in a.reshape(a.shape[0], -1)]


def _j2carray(rows):
    return np.array([[_j2c(p) for p in row] for row in rows], dtype=complex)


def config_to_json(config: SceneConfig):
    return json.dumps(config.to_dict(), sort_keys=True)


def config_from_json(text):
    return SceneConfig.from_dict(json.loads(text))


def scene_to_json(scene: Scene):
    users = []
    for u in scene.users:
        users.append({
            "position": list(map(float, u.position)),
            "velocity": list(map(float, u.velocity)),
            "paths": [{"gain": _c2j(p.gain), "tau": p.tau, "nu": p.nu,
                       "theta": p.theta} for p in u.paths],
            "message": [_c2j(z) for z in u.message],
            "codebook": {
                "base": _carray2j(u.codebook.base),
                "user_code": _c2j(u.codebook.user_code),
            },
            "symbols": None if u.symbols is None else
                       [int(v) for v in u.symbols],
        })
    doc = {
        "users": users,
        "bs_position": list(map(float, scene.bs_position)),
        "common_target_index": [None if v is None else int(v)
                                for v in scene.common_target_index],
    }
    return json.dumps(doc, sort_keys=True)


def scene_from_json(text):
    doc = json.loads(text)
    users = []
    for u in doc["users"]:
        base = _j2carray(u["codebook"]["base"])
        code = _j2c(u["codebook"]["user_code"])
        users.append(UserSpec(
            position=np.asarray(u["position"], dtype=float),
            velocity=np.asarray(u["velocity"], dtype=float),
            paths=[PathParams(gain=_j2c(p["gain"]), tau=p["tau"], nu=p["nu"],
                              theta=p["theta"]) for p in u["paths"]],
            message=np.array([_j2c(z) for z in u["message"]], dtype=complex),
            codebook=Codebook(matrix=code * base, user_code=code, base=base),
            symbols=None if u["symbols"] is None else
                    np.asarray(u["symbols"], dtype=int),
        ))
    return Scene(users=users,
                 bs_position=np.asarray(doc["bs_position"], dtype=float),
                 common_target_index=list(doc["common_target_index"]))
