"""Structured grids, boundary conditions, and saved field series.

Conventions used throughout the package: lengths in meters, time in hours,
z is elevation (z=0 at the bottom of the domain, z=lz at the surface).
Grids are node-centered with nodes on the boundary planes, so a grid with
``nx`` nodes spans [0, lx] with spacing lx/(nx-1). Arrays are indexed
``[i, j, k]`` for (x, y, z).

Each node owns a control volume of extent dx*dy*dz, halved in every
direction where the node sits on a boundary plane. Solver mass accounting
and the balance audits both use these volumes, so conservation statements
are exact for the discrete scheme rather than approximations.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

from .constitutive import VanGenuchten, theta as _theta

__all__ = ["Grid3D", "BoundarySpec", "FieldSeries", "save_series",
           "load_series"]

_MAGIC = b"SOILPINN-FLD-1\n"

_FACES = ("x_lo", "x_hi", "y_lo", "y_hi", "z_lo", "z_hi")


@dataclass(frozen=True)
class Grid3D:
    nx: int
    ny: int
    nz: int
    lx: float
    ly: float
    lz: float

    def __post_init__(self):
        for name in ("nx", "ny", "nz"):
            if getattr(self, name) < 3:
                raise ValueError(f"{name} must be at least 3")
        for name in ("lx", "ly", "lz"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")

    @property
    def shape(self):
        return (self.nx, self.ny, self.nz)

    @property
    def n_nodes(self):
        return self.nx * self.ny * self.nz

    @property
    def dx(self):
        return self.lx / (self.nx - 1)

    @property
    def dy(self):
        return self.ly / (self.ny - 1)

    @property
    def dz(self):
        return self.lz / (self.nz - 1)

    @property
    def xs(self):
        return np.linspace(0.0, self.lx, self.nx)

    @property
    def ys(self):
        return np.linspace(0.0, self.ly, self.ny)

    @property
    def zs(self):
        return np.linspace(0.0, self.lz, self.nz)

    def node_weights(self, axis):
        """Control-volume extent per node along one axis (half at the ends)."""
        n = (self.nx, self.ny, self.nz)[axis]
        h = (self.dx, self.dy, self.dz)[axis]
        w = np.full(n, h)
        w[0] = w[-1] = 0.5 * h
        return w

    def volumes(self):
        """Control volume of every node, shape (nx, ny, nz)."""
        wx = self.node_weights(0)
        wy = self.node_weights(1)
        wz = self.node_weights(2)
        return wx[:, None, None] * wy[None, :, None] * wz[None, None, :]


@dataclass(frozen=True)
class BoundarySpec:
    """Pressure head pinned on a face (a float) or no-flux (None).

    ``z_hi`` is the surface, ``z_lo`` the bottom. The lateral faces of the
    reference problem are no-flux; its surface and bottom are Dirichlet.
    """

    x_lo: float | None = None
    x_hi: float | None = None
    y_lo: float | None = None
    y_hi: float | None = None
    z_lo: float | None = None
    z_hi: float | None = None

    @classmethod
    def infiltration(cls, top, bottom):
        return cls(z_lo=bottom, z_hi=top)

    @classmethod
    def closed(cls):
        return cls()

    def faces(self):
        return {name: getattr(self, name) for name in _FACES}

    def dirichlet_mask(self, grid):
        """Boolean (nx, ny, nz) mask of nodes with pinned pressure head."""
        mask = np.zeros(grid.shape, dtype=bool)
        if self.x_lo is not None:
            mask[0, :, :] = True
        if self.x_hi is not None:
            mask[-1, :, :] = True
        if self.y_lo is not None:
            mask[:, 0, :] = True
        if self.y_hi is not None:
            mask[:, -1, :] = True
        if self.z_lo is not None:
            mask[:, :, 0] = True
        if self.z_hi is not None:
            mask[:, :, -1] = True
        return mask

    def apply(self, psi):
        """Write the pinned values into a field, in place. z faces win at
        edges shared with a lateral Dirichlet face."""
        if self.x_lo is not None:
            psi[0, :, :] = self.x_lo
        if self.x_hi is not None:
            psi[-1, :, :] = self.x_hi
        if self.y_lo is not None:
            psi[:, 0, :] = self.y_lo
        if self.y_hi is not None:
            psi[:, -1, :] = self.y_hi
        if self.z_lo is not None:
            psi[:, :, 0] = self.z_lo
        if self.z_hi is not None:
            psi[:, :, -1] = self.z_hi
        return psi


@dataclass
class FieldSeries:
    """Pressure-head snapshots from a solver run.

    ``psi`` has shape (len(times), nx, ny, nz); times[0] is 0 and psi[0]
    is the initial condition. ``boundary_influx`` holds, per save interval,
    the time-integrated discrete water volume that entered the free
    (non-Dirichlet) nodes through Dirichlet faces, recorded by the solver
    with the same conductances it stepped with. That makes the balance
    audit a statement about the scheme itself, not a re-derivation.
    """

    grid: Grid3D
    soil: VanGenuchten
    bc: BoundarySpec
    times: np.ndarray
    psi: np.ndarray
    boundary_influx: np.ndarray = field(default=None)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.psi = np.asarray(self.psi, dtype=np.float64)
        if self.psi.shape != (len(self.times),) + self.grid.shape:
            raise ValueError("psi shape does not match times and grid")
        if self.boundary_influx is None:
            self.boundary_influx = np.zeros(len(self.times) - 1)
        self.boundary_influx = np.asarray(self.boundary_influx,
                                          dtype=np.float64)
        if self.boundary_influx.shape != (len(self.times) - 1,):
            raise ValueError("boundary_influx must have one entry per "
                             "save interval")

    @property
    def n_save(self):
        return len(self.times) - 1

    def theta(self, t_index=None):
        """Water content of one snapshot, or of all of them."""
        psi = self.psi if t_index is None else self.psi[t_index]
        return _theta(self.soil, psi)

    def time_index(self, t):
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"no snapshot at t={t}")
        return i


def _soil_dict(soil):
    return {"theta_r": soil.theta_r, "theta_s": soil.theta_s,
            "alpha": soil.alpha, "n": soil.n, "k_s": soil.k_s}


def save_series(series, path):
    """Write a field series: JSON header line, then raw little-endian
    float64 payloads for psi and boundary_influx."""
    header = {
        "grid": {"nx": series.grid.nx, "ny": series.grid.ny,
                 "nz": series.grid.nz, "lx": series.grid.lx,
                 "ly": series.grid.ly, "lz": series.grid.lz},
        "soil": _soil_dict(series.soil),
        "bc": series.bc.faces(),
        "times": series.times.tolist(),
    }
    blob = json.dumps(header, sort_keys=True).encode() + b"\n"
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(blob)
        fh.write(np.ascontiguousarray(series.psi, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(series.boundary_influx,
                                      dtype="<f8").tobytes())


def load_series(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path} is not a saved field series")
        buf = io.BufferedReader(fh) if not isinstance(fh, io.BufferedReader) \
            else fh
        header_line = buf.readline()
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"corrupt field series header in {path}") \
                from exc
        grid = Grid3D(**header["grid"])
        soil = VanGenuchten(**header["soil"])
        bc = BoundarySpec(**header["bc"])
        times = np.asarray(header["times"], dtype=np.float64)
        nt = len(times)
        payload = buf.read()
    want = (nt * grid.n_nodes + (nt - 1)) * 8
    if len(payload) != want:
        raise ValueError(f"field series payload in {path} has "
                         f"{len(payload)} bytes, expected {want}")
    flat = np.frombuffer(payload, dtype="<f8")
    psi = flat[:nt * grid.n_nodes].reshape((nt,) + grid.shape).copy()
    influx = flat[nt * grid.n_nodes:].copy()
    return FieldSeries(grid=grid, soil=soil, bc=bc, times=times, psi=psi,
                       boundary_influx=influx)
