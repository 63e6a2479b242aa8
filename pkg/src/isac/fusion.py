"""Combining per-user dual polynomials into one common-target estimate.

All users observe the same moving target, so their dual polynomials peak at
(nearly) the same zeta. Collaborative estimators fuse the R sampled
polynomials pointwise -- mean, max, peak-weighted mean, or phase-aligned
vector mean -- and read the argmax off the fused grid; the non-collaborative
baseline averages the users' individual argmaxes on the torus.

Phase alignment: each user's codebook is D_i = c_user(i) A_i, so its vector
polynomial carries the conjugate code phase, g_i = conj(c_user(i)) g_i^base.
Multiplying g_i by c_user(i) removes the user-specific phase; the aligned
statistic is the squared norm of the de-phased vector average, which adds
the users coherently at the common peak.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dualpoly import PolyGrid, find_peaks

__all__ = [
    "FusionInput",
    "fuse_average",
    "fuse_max",
    "fuse_weighted",
    "fuse_aligned",
    "circular_mean",
    "estimate_non_collaborative",
    "estimate_collaborative",
]


@dataclass
class FusionInput:
    grids: list
    user_codes: list
    k_equal: bool = field(init=False)

    def __post_init__(self):
        if not self.grids:
            raise ValueError("need at least one grid")
        if len(self.user_codes) != len(self.grids):
            raise ValueError("one user code per grid required")
        res = self.grids[0].resolutions
        if any(g.resolutions != res for g in self.grids):
            raise ValueError("all grids must share the same geometry")
        ks = [None if g.complex_values is None else g.complex_values.shape[-1]
              for g in self.grids]
        self.k_equal = all(k is not None for k in ks) and len(set(ks)) == 1


def _bare(fin, values):
    return PolyGrid(resolutions=fin.grids[0].resolutions, values=values)


def fuse_average(fin: FusionInput) -> PolyGrid:
    """Pointwise mean of the users' scalar polynomials."""
    stack = np.stack([g.values for g in fin.grids])
    return _bare(fin, np.mean(stack, axis=0))


def fuse_max(fin: FusionInput) -> PolyGrid:
    """Pointwise maximum over users."""
    stack = np.stack([g.values for g in fin.grids])
    return _bare(fin, np.max(stack, axis=0))


def fuse_weighted(fin: FusionInput) -> PolyGrid:
    """Mean weighted by each user's global peak height."""
    weights = np.array([float(g.values.max()) for g in fin.grids])
    total = weights.sum()
    if total <= 0.0:
        raise ValueError("all grids are zero; weighted fusion undefined")
    stack = np.stack([g.values for g in fin.grids])
    return _bare(fin, np.tensordot(weights / total, stack, axes=1))


def fuse_aligned(fin: FusionInput) -> PolyGrid:
    """Squared norm of the code-de-phased vector average."""
    if not fin.k_equal:
        raise ValueError(
            "aligned fusion needs complex polynomial values with equal k "
            "for every user")
    mean = np.zeros_like(fin.grids[0].complex_values)
    for g, code in zip(fin.grids, fin.user_codes):
        mean += g.complex_values * code
    mean /= len(fin.grids)
    values = np.sum(np.abs(mean) ** 2, axis=-1)
    return PolyGrid(resolutions=fin.grids[0].resolutions, values=values,
                    complex_values=mean)


def circular_mean(values):
    """Mean of points on the torus [0, 1): angle of the resultant vector."""
    values = np.asarray(values, dtype=float)
    resultant = np.mean(np.exp(2j * np.pi * values))
    mean = float(np.angle(resultant) / (2.0 * np.pi) % 1.0)
    # a tiny negative angle can round the modulo up to exactly 1.0
    return 0.0 if mean >= 1.0 else mean


def estimate_non_collaborative(peaksets):
    """Coordinate-wise circular mean of each user's own top peak.

    Falls back to the origin when no user has a peak at all (an over-denoised
    solve can zero out every polynomial), mirroring what the collaborative
    estimator does with a flat fused grid.
    """
    tops = [ps.peaks[0][0] for ps in peaksets if ps.peaks]
    if not tops:
        return (0.0, 0.0, 0.0)
    return tuple(circular_mean([z[d] for z in tops]) for d in range(3))


def estimate_collaborative(grid: PolyGrid):
    """Refined argmax of a fused grid (global argmax if no strict peak)."""
    ps = find_peaks(grid, count=1, refine=True)
    if ps.peaks:
        return ps.peaks[0][0]
    idx = np.unravel_index(int(np.argmax(grid.values)), grid.values.shape)
    return tuple(idx[d] / grid.resolutions[d] for d in range(3))
