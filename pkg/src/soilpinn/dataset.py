"""Sensor sampling, measurement noise, and error metrics.

Sensors are virtual probes placed on grid nodes of a solved field series:
a seeded draw of xy columns, each instrumented at evenly spaced depths,
read at every saved time instant. The default layout is 15 columns x 5
depths x 30 times = 2250 measurements.

Noise is i.i.d. Gaussian on the readings. The default sigma of 0.005 is
interpreted on the normalized head scale: it multiplies the half-range of
the clean readings, so the perturbation is 0.5% of the field's dynamic
range rather than a fixed head. Pass ``scale="raw"`` to use sigma in
meters directly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from . import constitutive as con

__all__ = ["SensorDataset", "NoiseConfig", "place_sensors", "add_noise",
           "sample_collocation", "relative_error", "save_sensors",
           "load_sensors"]


@dataclass
class SensorDataset:
    """Measurement records: node indices, coordinates, and head readings.

    ``index`` rows are (x_idx, y_idx, z_idx, t_idx) into the source series
    (t_idx indexes ``series.times``, so t_idx >= 1; the initial state is
    not a measurement). ``points`` rows are the matching (x, y, z, t) and
    ``psi`` the readings, clean until noise is added.
    """

    index: np.ndarray
    points: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        self.index = np.asarray(self.index, dtype=np.int64)
        self.points = np.asarray(self.points, dtype=np.float64)
        self.psi = np.asarray(self.psi, dtype=np.float64)
        n = len(self.psi)
        if self.index.shape != (n, 4) or self.points.shape != (n, 4):
            raise ValueError("index/points/psi sizes disagree")

    def __len__(self):
        return len(self.psi)


@dataclass(frozen=True)
class NoiseConfig:
    sigma: float = 0.005
    seed: int = 0
    scale: str = "normalized"

    def __post_init__(self):
        if self.sigma < 0.0:
            raise ValueError("sigma must be non-negative")
        if self.scale not in ("normalized", "raw"):
            raise ValueError("scale must be 'normalized' or 'raw'")


def place_sensors(series, n_xy=15, n_depths=5, seed=0):
    """Instrument a solved series with node-aligned sensors.

    Chooses ``n_xy`` distinct xy columns uniformly without replacement,
    places ``n_depths`` probes per column at evenly spaced z indices
    starting at the bottom plane (k = 0, stride, 2*stride, ...), and reads
    every saved instant after t=0. Requires nz divisible by n_depths.
    Starting at the bottom matters: the bottom boundary plane carries a
    large share of the field norm, and with no boundary term in the
    training loss only a sensed plane is identifiable there.
    """
    grid = series.grid
    if n_xy > grid.nx * grid.ny:
        raise ValueError(f"cannot place {n_xy} columns on a "
                         f"{grid.nx}x{grid.ny} grid")
    if grid.nz % n_depths != 0:
        raise ValueError(f"{n_depths} depths do not evenly divide "
                         f"nz={grid.nz}")
    stride = grid.nz // n_depths
    ks = np.arange(n_depths) * stride
    rng = np.random.default_rng(seed)
    cols = np.sort(rng.choice(grid.nx * grid.ny, size=n_xy, replace=False))
    xs, ys, zs, times = grid.xs, grid.ys, grid.zs, series.times

    index, points, psi = [], [], []
    for col in cols:
        i, j = int(col) // grid.ny, int(col) % grid.ny
        for k in ks:
            for ti in range(1, len(times)):
                index.append((i, j, k, ti))
                points.append((xs[i], ys[j], zs[k], times[ti]))
                psi.append(series.psi[ti, i, j, k])
    return SensorDataset(index=np.array(index), points=np.array(points),
                         psi=np.array(psi))


def add_noise(ds, cfg):
    """Perturb the readings with seeded i.i.d. Gaussian noise."""
    if cfg.sigma == 0.0:
        return replace(ds, psi=ds.psi.copy())
    if cfg.scale == "normalized":
        half_range = 0.5 * (ds.psi.max() - ds.psi.min())
        sigma = cfg.sigma * half_range
    else:
        sigma = cfg.sigma
    rng = np.random.default_rng(cfg.seed)
    return replace(ds, psi=ds.psi + rng.normal(0.0, sigma, size=len(ds)))


def sample_collocation(series, n_f, seed):
    """Seeded draw of ``n_f`` residual points, uniform without replacement
    over the grid-node space-time instances of the series (every node at
    every saved instant after t=0; 120,000 for the default benchmark).
    Returns (n_f, 4) coordinates sorted by flat instance index."""
    grid = series.grid
    n_t = len(series.times) - 1
    total = grid.n_nodes * n_t
    if n_f > total:
        raise ValueError(f"cannot draw {n_f} collocation points from "
                         f"{total} grid instances")
    rng = np.random.default_rng(seed)
    flat = np.sort(rng.choice(total, size=n_f, replace=False))
    ti, rest = np.divmod(flat, grid.n_nodes)
    i, rest = np.divmod(rest, grid.ny * grid.nz)
    j, k = np.divmod(rest, grid.nz)
    return np.column_stack([grid.xs[i], grid.ys[j], grid.zs[k],
                            series.times[ti + 1]])


def relative_error(pred, truth):
    """(re_psi, re_theta): L2 relative errors over every node at every
    saved instant after t=0, for head and for the water content obtained
    by mapping both fields through the retention curve."""
    if pred.psi.shape != truth.psi.shape:
        raise ValueError(f"field shape mismatch: {pred.psi.shape} vs "
                         f"{truth.psi.shape}")
    p, t = pred.psi[1:], truth.psi[1:]
    re_psi = np.linalg.norm(p - t) / np.linalg.norm(t)
    pt = con.theta(pred.soil, p)
    tt = con.theta(truth.soil, t)
    re_theta = np.linalg.norm(pt - tt) / np.linalg.norm(tt)
    return float(re_psi), float(re_theta)


_COLUMNS = ("x_idx", "y_idx", "z_idx", "t_idx", "x", "y", "z", "t",
            "psi_measured")


def save_sensors(ds, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_COLUMNS)
        for ix, pt, val in zip(ds.index, ds.points, ds.psi):
            w.writerow([*map(int, ix),
                        *(f"{c:.17g}" for c in pt), f"{val:.17g}"])


def load_sensors(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header is None or tuple(header) != _COLUMNS:
            raise ValueError(f"{path} is not a sensor dataset file")
        index, points, psi = [], [], []
        for rec in r:
            index.append([int(v) for v in rec[:4]])
            points.append([float(v) for v in rec[4:8]])
            psi.append(float(rec[8]))
    return SensorDataset(index=np.array(index), points=np.array(points),
                         psi=np.array(psi))
