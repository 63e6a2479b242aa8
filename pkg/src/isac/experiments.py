"""Experiment runners: seeded Monte Carlo studies with CSV artifacts.

Each runner merges a JSON-style override dict into its defaults, fans trials
out over a process pool (per-trial seeds are derived, so the worker count
never changes results), writes raw per-trial rows plus a summary CSV and a
matplotlib figure, and finally a manifest recording the exact configuration
and its hash. Nothing in the outputs depends on wall-clock time: reruns with
the same seed and config are byte-identical.

A solver that exhausts its iteration budget in any trial marks the whole run
as non-converged (CLI exit code 2); its results are still written.
"""

from __future__ import annotations

import csv
import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path

import numpy as np

from . import __version__
from .atoms import toeplitz_apply, wrap_distance
from .decode import build_dictionary, recover_messages, symbols_and_ser
from .dualpoly import find_peaks, grid_to_csv, scan_grid
from .fusion import (FusionInput, estimate_collaborative,
                     estimate_non_collaborative, fuse_aligned, fuse_average,
                     fuse_max, fuse_weighted)
from .locate import localization_trial
from .model import SceneConfig, derive_seed, make_scene, \
    synthesize_measurements
from .sdp import SolverOpts, solve_dual, solve_primal
from .vandermonde import decompose

__all__ = [
    "ExperimentResult",
    "EXPERIMENTS",
    "run_experiment",
    "run_recovery3d",
    "run_dualpoly2d",
    "run_localization",
    "run_fusion_aoa_ser",
]

_SALTS = {
    "recovery3d": 0xF161,
    "dualpoly2d": 0xD091,
    "localization": 0x10CA,
    "fusion_aoa_ser": 0xF05E,
}

FUSION_METHODS = ("non_collaborative", "average", "weighted", "max",
                  "aligned")


@dataclass
class ExperimentResult:
    experiment: str
    ok: bool                      # False when any solver hit max-iterations
    outputs: list
    summary: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# plumbing
# ---------------------------------------------------------------------------

def _merge(defaults, override):
    out = dict(defaults)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def _fmt(value):
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if value is None:
        return ""
    return str(value)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(row.get(col)) for col in header])


def _config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _write_manifest(out_dir, experiment, seed, cfg, outputs, summary):
    manifest = {
        "experiment": experiment,
        "seed": int(seed),
        "config": cfg,
        "config_hash": _config_hash(cfg),
        "outputs": sorted(outputs),
        "package_version": __version__,
        "summary": summary,
    }
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path.name


def _map_trials(fn, trials, workers):
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, range(trials)))
    return [fn(t) for t in range(trials)]


def _solver_opts(cfg):
    return SolverOpts.from_dict(cfg.get("solver", {}))


def _match_truth(zeta, truths, active):
    """Nearest truth index and max wrap-around error over active coords."""
    best_idx, best_err = -1, float("inf")
    for idx, truth in enumerate(truths):
        err = max(wrap_distance(zeta[c], truth[c])
                  for c in range(3) if active[c])
        if err < best_err:
            best_idx, best_err = idx, err
    return best_idx, best_err


def _active_coords(dims):
    P, Q, Nr = dims
    return (Q > 1, P > 1, Nr > 1)


# ---------------------------------------------------------------------------
# recovery3d: full delay-Doppler-angle recovery through the primal SDP
# ---------------------------------------------------------------------------

_RECOVERY3D_DEFAULTS = {
    "trials": 1,
    "scene": {"P": 6, "Q": 6, "N_r": 6, "R": 1, "k": [2], "s": [5],
              "snr_db": 30.0},
    "targets_per_user": 2,
    "doppler_threshold": 0.02,
    "solver": {"tol": 1e-6, "max_iters": 30000},
}


def _recovery3d_trial(t, seed, cfg):
    scene_cfg = dict(cfg["scene"])
    scene_cfg["seed"] = derive_seed(seed, _SALTS["recovery3d"], t)
    config = SceneConfig.from_dict(scene_cfg)
    scene = make_scene(config, targets_per_user=cfg["targets_per_user"],
                       doppler_floor=cfg["doppler_threshold"])
    meas = synthesize_measurements(scene, config)
    sol = solve_primal(meas, _solver_opts(cfg))

    thr = cfg["doppler_threshold"]
    active = _active_coords(config.dims)
    rows = []
    match_errors = []
    for i, user in enumerate(scene.users):
        truths = [p.zeta for p in user.paths]
        for ell, path in enumerate(user.paths):
            rows.append({
                "trial": t, "user": i + 1, "kind": "true", "index": ell,
                "tau": path.tau, "nu": path.nu, "theta": path.theta,
                "power": abs(path.gain),
                "label": "target" if path.nu >= thr else "scatterer",
                "match_index": ell, "match_error": 0.0,
            })
        s_max = min(config.s[i] + 1, 6)
        est = decompose(toeplitz_apply(sol.V[i]), config.dims, s_max=s_max)
        for ell, (zeta, power) in enumerate(zip(est.zetas, est.powers)):
            idx, err = _match_truth(zeta, truths, active)
            match_errors.append(err)
            rows.append({
                "trial": t, "user": i + 1, "kind": "estimate", "index": ell,
                "tau": zeta[0], "nu": zeta[1], "theta": zeta[2],
                "power": power,
                "label": "target" if zeta[1] >= thr else "scatterer",
                "match_index": idx, "match_error": err,
            })
    return rows, sol.diagnostics["status"], match_errors


def run_recovery3d(cfg, out_dir, seed, workers=1):
    cfg = _merge(_RECOVERY3D_DEFAULTS, cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = _map_trials(partial(_recovery3d_trial, seed=seed, cfg=cfg),
                          cfg["trials"], workers)

    rows = [row for trial_rows, _, _ in results for row in trial_rows]
    statuses = [status for _, status, _ in results]
    errors = [e for _, _, errs in results for e in errs]
    header = ["trial", "user", "kind", "index", "tau", "nu", "theta",
              "power", "label", "match_index", "match_error"]
    _write_csv(out_dir / "triples.csv", header, rows)
    outputs = ["triples.csv"]

    from . import figures
    outputs += figures.recovery3d_figure(rows, out_dir)

    summary = {
        "trials": cfg["trials"],
        "mean_match_error": float(np.mean(errors)) if errors else None,
        "max_match_error": float(np.max(errors)) if errors else None,
        "statuses": sorted(set(statuses)),
    }
    outputs.append(_write_manifest(out_dir, "recovery3d", seed, cfg,
                                   outputs, summary))
    return ExperimentResult("recovery3d", "max-iterations" not in statuses,
                            outputs, summary)


# ---------------------------------------------------------------------------
# dualpoly2d: per-user delay-Doppler dual polynomials on a grid
# ---------------------------------------------------------------------------

_DUALPOLY2D_DEFAULTS = {
    "trials": 1,
    "scene": {"P": 6, "Q": 6, "N_r": 1, "R": 2, "k": [2, 2], "s": [2, 2],
              "snr_db": 0.0},
    "resolutions": None,
    "solver": {"tol": 1e-6, "max_iters": 30000},
}


def _dualpoly2d_trial(t, seed, cfg):
    scene_cfg = dict(cfg["scene"])
    scene_cfg["seed"] = derive_seed(seed, _SALTS["dualpoly2d"], t)
    config = SceneConfig.from_dict(scene_cfg)
    scene = make_scene(config, targets_per_user=max(config.s))
    meas = synthesize_measurements(scene, config)
    sol = solve_dual(meas, _solver_opts(cfg))

    active = _active_coords(config.dims)
    grids = []
    peak_rows = []
    for i, user in enumerate(scene.users):
        grid = scan_grid(sol.q, user.codebook, config.dims,
                         cfg["resolutions"])
        grids.append(grid)
        truths = [p.zeta for p in user.paths]
        for ell, zeta in enumerate(truths):
            peak_rows.append({
                "trial": t, "user": i + 1, "kind": "true", "index": ell,
                "tau": zeta[0], "nu": zeta[1], "theta": zeta[2],
                "height": None, "match_index": ell, "match_error": 0.0,
            })
        peaks = find_peaks(grid, count=config.s[i], refine=True)
        for ell, (zeta, height) in enumerate(peaks.peaks):
            idx, err = _match_truth(zeta, truths, active)
            peak_rows.append({
                "trial": t, "user": i + 1, "kind": "estimate", "index": ell,
                "tau": zeta[0], "nu": zeta[1], "theta": zeta[2],
                "height": height, "match_index": idx, "match_error": err,
            })
    return grids, peak_rows, sol.diagnostics["status"], scene


def run_dualpoly2d(cfg, out_dir, seed, workers=1):
    cfg = _merge(_DUALPOLY2D_DEFAULTS, cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = _map_trials(partial(_dualpoly2d_trial, seed=seed, cfg=cfg),
                          cfg["trials"], workers)

    outputs = []
    statuses = []
    all_peak_rows = []
    from . import figures
    for t, (grids, peak_rows, status, scene) in enumerate(results):
        statuses.append(status)
        all_peak_rows.extend(peak_rows)
        for i, grid in enumerate(grids):
            name = f"grid_trial{t}_user{i + 1}.csv"
            grid_to_csv(grid, out_dir / name)
            outputs.append(name)
            truths = [p.zeta for p in scene.users[i].paths]
            estimates = [(r["tau"], r["nu"], r["theta"])
                         for r in peak_rows
                         if r["user"] == i + 1 and r["kind"] == "estimate"]
            outputs += figures.dualpoly2d_figure(
                grid, truths, estimates, out_dir,
                f"dualpoly_trial{t}_user{i + 1}.png")

    header = ["trial", "user", "kind", "index", "tau", "nu", "theta",
              "height", "match_index", "match_error"]
    _write_csv(out_dir / "peaks.csv", header, all_peak_rows)
    outputs.append("peaks.csv")

    est_errors = [r["match_error"] for r in all_peak_rows
                  if r["kind"] == "estimate"]
    summary = {
        "trials": cfg["trials"],
        "max_peak_error": float(np.max(est_errors)) if est_errors else None,
        "statuses": sorted(set(statuses)),
    }
    outputs.append(_write_manifest(out_dir, "dualpoly2d", seed, cfg,
                                   outputs, summary))
    return ExperimentResult("dualpoly2d", "max-iterations" not in statuses,
                            outputs, summary)


# ---------------------------------------------------------------------------
# localization: target distance MAE against the number of users
# ---------------------------------------------------------------------------

_LOCALIZATION_DEFAULTS = {
    "trials": 50,
    "R_values": [1, 2, 3, 4, 5],
    "snr_db": 5.0,
    "Q": 32,
    "box_half": 100.0,
    "target": [50.0, 30.0],
    "bs": [0.0, 0.0],
    "oracle_delays": False,
    "solver": {"tol": 1e-5, "max_iters": 20000},
}


def run_localization(cfg, out_dir, seed, workers=1):
    cfg = _merge(_LOCALIZATION_DEFAULTS, cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    fn = partial(
        localization_trial, base_seed=seed, R_values=cfg["R_values"],
        Q=cfg["Q"], snr_db=cfg["snr_db"], box_half=cfg["box_half"],
        target=tuple(cfg["target"]), bs=tuple(cfg["bs"]),
        oracle_delays=cfg["oracle_delays"], solver_opts=_solver_opts(cfg))
    raw = [row for rows in _map_trials(fn, cfg["trials"], workers)
           for row in rows]

    header = ["trial", "R", "d_true_m", "d_hat_m", "abs_error_m",
              "fit_residual_m", "degenerate", "status"]
    _write_csv(out_dir / "localization_trials.csv", header, raw)

    summary_rows = []
    for R in sorted(set(int(v) for v in cfg["R_values"])):
        errs = [row["abs_error_m"] for row in raw if row["R"] == R]
        summary_rows.append({"R": R, "trials": cfg["trials"],
                             "snr_db": cfg["snr_db"],
                             "mae_m": float(np.mean(errs))})
    _write_csv(out_dir / "localization_mae.csv",
               ["R", "trials", "snr_db", "mae_m"], summary_rows)
    outputs = ["localization_trials.csv", "localization_mae.csv"]

    from . import figures
    outputs += figures.localization_figure(summary_rows, out_dir)

    statuses = sorted(set(row["status"] for row in raw))
    summary = {"mae_by_R": {str(r["R"]): r["mae_m"] for r in summary_rows},
               "statuses": statuses}
    outputs.append(_write_manifest(out_dir, "localization", seed, cfg,
                                   outputs, summary))
    return ExperimentResult("localization",
                            "max-iterations" not in statuses, outputs,
                            summary)


# ---------------------------------------------------------------------------
# fusion_aoa_ser: collaborative angle estimation and decoding at 0 dB
# ---------------------------------------------------------------------------

_FUSION_DEFAULTS = {
    "trials": 100,
    "scene": {"P": 1, "Q": 1, "N_r": 30, "R": 3, "k": [3, 3, 3],
              "s": [1, 1, 1], "snr_db": 0.0},
    "resolutions": None,
    "solver": {"tol": 1e-5, "max_iters": 20000},
}


def _fusion_trial(t, seed, cfg):
    scene_cfg = dict(cfg["scene"])
    scene_cfg["seed"] = derive_seed(seed, _SALTS["fusion_aoa_ser"], t)
    config = SceneConfig.from_dict(scene_cfg)
    scene = make_scene(config, common_target=True, targets_per_user=1)
    theta_true = scene.users[0].paths[0].theta
    meas = synthesize_measurements(scene, config)
    sol = solve_dual(meas, _solver_opts(cfg))

    grids = [scan_grid(sol.q, user.codebook, config.dims,
                       cfg["resolutions"]) for user in scene.users]
    fin = FusionInput(grids=grids,
                      user_codes=[u.codebook.user_code for u in scene.users])
    per_user_peaks = [find_peaks(g, count=1, refine=True) for g in grids]

    if max(float(g.values.max()) for g in grids) <= 0.0:
        # an over-denoised solve zeroed every polynomial (noise ball larger
        # than the observation); no method has anything to work with, so all
        # of them score the origin fallback on equal footing
        estimates = {m: (0.0, 0.0, 0.0) for m in FUSION_METHODS}
    else:
        estimates = {
            "non_collaborative": estimate_non_collaborative(per_user_peaks),
            "average": estimate_collaborative(fuse_average(fin)),
            "weighted": estimate_collaborative(fuse_weighted(fin)),
            "max": estimate_collaborative(fuse_max(fin)),
            "aligned": estimate_collaborative(fuse_aligned(fin)),
        }

    codebooks = [u.codebook for u in scene.users]
    structure = [(1, k) for k in config.k]
    rows = []
    for method in FUSION_METHODS:
        theta_hat = estimates[method][2]
        zeta_hat = (0.0, 0.0, theta_hat)
        dictionary = build_dictionary([[zeta_hat]] * config.R, codebooks,
                                      config.dims)
        decoded = symbols_and_ser(
            recover_messages(dictionary, meas.y, structure), scene)
        row = {
            "trial": t, "method": method, "theta_true": theta_true,
            "theta_hat": theta_hat,
            "aoa_error": wrap_distance(theta_hat, theta_true),
            "ser_aggregate": decoded.ser_aggregate,
        }
        for i, s in enumerate(decoded.ser_per_user):
            row[f"ser_user{i + 1}"] = s
        rows.append(row)
    return rows, sol.diagnostics["status"]


def run_fusion_aoa_ser(cfg, out_dir, seed, workers=1):
    cfg = _merge(_FUSION_DEFAULTS, cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = _map_trials(partial(_fusion_trial, seed=seed, cfg=cfg),
                          cfg["trials"], workers)

    rows = [row for trial_rows, _ in results for row in trial_rows]
    statuses = [status for _, status in results]
    R = int(cfg["scene"]["R"])
    header = (["trial", "method", "theta_true", "theta_hat", "aoa_error",
               "ser_aggregate"] + [f"ser_user{i + 1}" for i in range(R)])
    _write_csv(out_dir / "fusion_trials.csv", header, rows)

    summary_rows = []
    for method in FUSION_METHODS:
        sub = [r for r in rows if r["method"] == method]
        summary_rows.append({
            "method": method,
            "aoa_mae": float(np.mean([r["aoa_error"] for r in sub])),
            "ser_mean": float(np.mean([r["ser_aggregate"] for r in sub])),
        })
    _write_csv(out_dir / "fusion_summary.csv",
               ["method", "aoa_mae", "ser_mean"], summary_rows)
    outputs = ["fusion_trials.csv", "fusion_summary.csv"]

    from . import figures
    outputs += figures.fusion_figure(summary_rows, out_dir)

    summary = {r["method"]: {"aoa_mae": r["aoa_mae"],
                             "ser_mean": r["ser_mean"]}
               for r in summary_rows}
    summary["statuses"] = sorted(set(statuses))
    outputs.append(_write_manifest(out_dir, "fusion_aoa_ser", seed, cfg,
                                   outputs, summary))
    return ExperimentResult("fusion_aoa_ser",
                            "max-iterations" not in statuses, outputs,
                            summary)


EXPERIMENTS = {
    "recovery3d": run_recovery3d,
    "dualpoly2d": run_dualpoly2d,
    "localization": run_localization,
    "fusion_aoa_ser": run_fusion_aoa_ser,
}


def run_experiment(name, cfg, out_dir, seed, workers=1):
    if name not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {name!r}; expected one of "
                         f"{sorted(EXPERIMENTS)}")
    return EXPERIMENTS[name](cfg or {}, out_dir, seed, workers)
