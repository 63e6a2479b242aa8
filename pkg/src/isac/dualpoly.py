"""Vector dual polynomial: evaluation, dense scanning, peak extraction.

Given a dual vector q and a user's codebook D_i, the vector polynomial is

    g_i(zeta) = sum_n q_n conj(d_n^i) conj([a(zeta)]_n),       f_i = ||g_i||_2

i.e. g_i(zeta) = Lambda_i a(zeta)^* with Lambda_i the bordered dual block.
For any feasible dual point f_i <= 1 on the whole torus, with equality (to
solver tolerance) exactly at the atoms of the scene -- peak locations of f_i
are therefore parameter estimates.

``scan_grid`` evaluates f on a uniform grid over the active coordinates
(extent-1 coordinates collapse to the single point 0) and ``find_peaks``
extracts strict local maxima with wrap-around neighborhoods plus optional
per-dimension quadratic refinement.

The grid scan and the pointwise evaluator share one accumulation routine
that sums over the measurement index n in a fixed sequential order, so
``eval_poly`` at a grid point reproduces the scanned value bit for bit.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .atoms import steering_matrix

__all__ = [
    "PolyGrid",
    "PeakSet",
    "eval_poly",
    "scan_grid",
    "find_peaks",
    "grid_to_csv",
    "peaks_to_csv",
]

_CHUNK = 4096


@dataclass
class PolyGrid:
    """Dense dual-polynomial samples over a uniform torus grid.

    ``values[i, j, l]`` is f at (i/G_tau, j/G_nu, l/G_theta); collapsed
    coordinates have a single sample at 0. ``complex_values`` keeps the
    vector polynomial g (trailing axis of length k_i) when alignment-based
    fusion needs it.
    """

    resolutions: tuple
    values: np.ndarray
    complex_values: Optional[np.ndarray] = None

    def __post_init__(self):
        self.resolutions = tuple(int(g) for g in self.resolutions)
        if self.values.shape != self.resolutions:
            raise ValueError("values shape does not match resolutions")

    def axis(self, d):
        """Grid coordinates j/G along dimension d (0=tau, 1=nu, 2=theta)."""
        g = self.resolutions[d]
        return np.arange(g) / g


@dataclass
class PeakSet:
    peaks: list                 # [(zeta triple, height)], height descending
    refined: bool
    shortfall: bool = False


def _codebook_matrix(codebook):
    return getattr(codebook, "matrix", codebook)


def _poly_block(q, D, A):
    """g and f for steering columns A (L-by-m), summed sequentially over n.

    The n-loop fixes the reduction order so results do not depend on how the
    grid is chunked.
    """
    L, m = A.shape
    Mq = q[:, None] * np.conj(D)
    g = np.zeros((m, D.shape[1]), dtype=complex)
    for n in range(L):
        g += np.conj(A[n])[:, None] * Mq[n][None, :]
    f = np.sqrt(np.sum(np.abs(g) ** 2, axis=1))
    return g, f


def eval_poly(q, codebook, zeta, dims):
    """Evaluate (g, f) of the dual polynomial at a single zeta."""
    D = _codebook_matrix(codebook)
    q = np.asarray(q, dtype=complex)
    if q.shape[0] != D.shape[0]:
        raise ValueError("q length does not match the codebook")
    A = steering_matrix(np.asarray(zeta, dtype=float).reshape(1, 3), dims)
    g, f = _poly_block(q, D, A)
    return g[0], float(f[0])


def _grid_resolutions(dims, resolutions):
    extents = (dims[1], dims[0], dims[2])      # per-coordinate extents
    if resolutions is None:
        resolutions = tuple(max(64, 4 * e) for e in extents)
    elif np.isscalar(resolutions):
        resolutions = (resolutions,) * 3
    out = []
    for d, (g, e) in enumerate(zip(resolutions, extents)):
        if e == 1:
            out.append(1)
            continue
        g = int(g)
        if g < 4 * e:
            raise ValueError(
                f"resolution {g} along coordinate {d} is below the "
                f"floor 4*extent = {4 * e}")
        out.append(g)
    return tuple(out)


def scan_grid(q, codebook, dims, resolutions=None):
    """Evaluate the dual polynomial densely; collapsed dims sample only 0."""
    D = _codebook_matrix(codebook)
    q = np.asarray(q, dtype=complex)
    res = _grid_resolutions(dims, resolutions)
    axes = [np.arange(g) / g for g in res]
    mesh = np.meshgrid(*axes, indexing="ij")
    zetas = np.stack([m.ravel() for m in mesh], axis=1)
    npts = zetas.shape[0]
    k = D.shape[1]
    values = np.empty(npts, dtype=float)
    cvalues = np.empty((npts, k), dtype=complex)
    for start in range(0, npts, _CHUNK):
        stop = min(start + _CHUNK, npts)
        A = steering_matrix(zetas[start:stop], dims)
        g, f = _poly_block(q, D, A)
        values[start:stop] = f
        cvalues[start:stop] = g
    return PolyGrid(resolutions=res, values=values.reshape(res),
                    complex_values=cvalues.reshape(res + (k,)))


def _local_maxima(values, resolutions):
    active = [d for d in range(3) if resolutions[d] > 1]
    if not active:
        return np.zeros_like(values, dtype=bool)
    mask = np.ones_like(values, dtype=bool)
    offsets = [off for off in itertools.product(
        *[(-1, 0, 1) if d in active else (0,) for d in range(3)])
        if any(off)]
    for off in offsets:
        mask &= values > np.roll(values, shift=off, axis=(0, 1, 2))
    return mask


def _refine_peak(values, resolutions, idx):
    zeta = []
    height = float(values[idx])
    for d in range(3):
        g = resolutions[d]
        if g == 1:
            zeta.append(0.0)
            continue
        lo = list(idx)
        hi = list(idx)
        lo[d] = (idx[d] - 1) % g
        hi[d] = (idx[d] + 1) % g
        fm = float(values[tuple(lo)])
        f0 = float(values[idx])
        fp = float(values[tuple(hi)])
        denom = fm - 2.0 * f0 + fp
        delta = 0.0 if denom >= 0.0 else 0.5 * (fm - fp) / denom
        height = max(height, f0 - 0.25 * (fm - fp) * delta)
        zeta.append(float(((idx[d] + delta) / g) % 1.0))
    return tuple(zeta), height


def find_peaks(grid, count, refine=True):
    """Top strict local maxima (wrap-around neighborhoods on active dims).

    Returns what exists with ``shortfall=True`` when fewer maxima are found
    than requested; a flat grid has none. Ties in height break by
    lexicographic grid index.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    res = grid.resolutions
    values = grid.values
    mask = _local_maxima(values, res)
    indices = [tuple(ix) for ix in np.argwhere(mask)]
    indices.sort(key=lambda ix: -values[ix])        # stable: keeps lex ties
    selected = indices[:count]
    peaks = []
    for idx in selected:
        if refine:
            zeta, height = _refine_peak(values, res, idx)
        else:
            zeta = tuple(float(idx[d] / res[d]) for d in range(3))
            height = float(values[idx])
        peaks.append((zeta, height))
    peaks.sort(key=lambda p: -p[1])
    return PeakSet(peaks=peaks, refined=refine,
                   shortfall=len(indices) < count)


def grid_to_csv(grid, path):
    """Dump (tau, nu, theta, f) rows in C order for external plotting."""
    axes = [grid.axis(d) for d in range(3)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tau", "nu", "theta", "f"])
        for (i, j, l), f in np.ndenumerate(grid.values):
            writer.writerow([repr(float(axes[0][i])), repr(float(axes[1][j])),
                             repr(float(axes[2][l])), repr(float(f))])


def peaks_to_csv(peakset, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tau", "nu", "theta", "height"])
        for zeta, h in peakset.peaks:
            writer.writerow([repr(float(zeta[0])), repr(float(zeta[1])),
                             repr(float(zeta[2])), repr(float(h))])
