"""Uniform grids on the truncated meridional half-plane and weighted norms."""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

KINDS = ("vorticity_h", "relative_f", "stream", "velocity_r", "velocity_z")
RHO_NORM = 1.0 / (16.0 * math.sqrt(math.pi))

_MAGIC = b"AXIV"
_VERSION = 1
_HEADER = struct.Struct("<4sIddIIdI")


@dataclass(frozen=True)
class Grid:
    """Nodes r_i = i dr (i = 0..nr) and z_j = -Z + j dz (j = 0..nz)."""
    r_max: float = 12.0
    z_max: float = 12.0
    nr: int = 256
    nz: int = 256

    def __post_init__(self):
        if self.r_max <= 0 or self.z_max <= 0:
            raise ValueError("domain extents must be positive")
        if self.nr < 8 or self.nz < 8:
            raise ValueError("need at least 8 cells per direction")

    @property
    def dr(self) -> float:
        return self.r_max / self.nr

    @property
    def dz(self) -> float:
        return 2.0 * self.z_max / self.nz

    @property
    def r(self) -> np.ndarray:
        return np.arange(self.nr + 1) * self.dr

    @property
    def z(self) -> np.ndarray:
        # built from the middle out so the node set is exactly symmetric
        j = np.arange(self.nz + 1) - self.nz / 2.0
        return j * self.dz

    @property
    def shape(self):
        return (self.nr + 1, self.nz + 1)

    def mesh(self):
        return np.meshgrid(self.r, self.z, indexing="ij")

    def refine(self, factor: int = 2) -> "Grid":
        return Grid(self.r_max, self.z_max, self.nr * factor, self.nz * factor)


@dataclass
class Field:
    grid: Grid
    values: np.ndarray
    kind: str = "vorticity_h"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown field kind {self.kind!r}")
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field has non-finite values")
        if self.kind == "vorticity_h" and np.any(self.values[0] != 0.0):
            raise ValueError("vorticity must vanish on the axis")

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy(), self.kind)


def sample(grid: Grid, fn, kind="vorticity_h") -> Field:
    R, Z = grid.mesh()
    v = np.asarray(fn(R, Z), dtype=float) * np.ones(grid.shape)
    if kind == "vorticity_h":
        v[0] = 0.0
    return Field(grid, v, kind)


def rho_star(r, z):
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("radial coordinate must be nonnegative")
    out = RHO_NORM * r * np.exp(-(r * r + np.asarray(z) ** 2) / 4.0)
    return out if np.ndim(out) else float(out)


# ------------------------------------------------------------------- weights

def trapezoid_1d(n: int, d: float) -> np.ndarray:
    w = np.full(n + 1, d)
    w[0] = w[-1] = 0.5 * d
    return w


@lru_cache(maxsize=16)
def _axis_correction(dr: float) -> np.ndarray:
    # Euler-Maclaurin end terms at r = 0 for integrands r^3 g(r^2),
    # with g(0), g'(0), g''(0) read off a fit through rows 1..3.
    r = dr * np.arange(1, 4)
    V = np.vander(r * r, 3, increasing=True)
    e = np.array([-dr**4 / 120.0, dr**6 / 252.0, -dr**8 / 240.0])
    return np.linalg.solve(V.T, e) / r**3


def radial_weights(grid: Grid, corrected: bool = False) -> np.ndarray:
    """Trapezoid weights in r.  With corrected=True the axis end is fixed up
    for integrands that behave like r^3 times a smooth function of r^2 (every
    integral against mu), lifting the rule from O(dr^4) to O(dr^10)."""
    w = trapezoid_1d(grid.nr, grid.dr)
    if corrected:
        w[1:4] += _axis_correction(grid.dr)
    return w


def area_weights(grid: Grid, corrected: bool = False) -> np.ndarray:
    return np.outer(radial_weights(grid, corrected), trapezoid_1d(grid.nz, grid.dz))


# --------------------------------------------------------------------- norms

def _require(f: Field, kind: str):
    if f.kind != kind:
        raise ValueError(f"expected a {kind} field, got {f.kind}")


def h_to_f(h: Field) -> Field:
    """f = h / rho*, with the axis row extrapolated from rows 1 and 2 under
    the assumption that f is even in r."""
    _require(h, "vorticity_h")
    R, Z = h.grid.mesh()
    f = np.zeros(h.grid.shape)
    f[1:] = h.values[1:] / rho_star(R[1:], Z[1:])
    f[0] = (4.0 * f[1] - f[2]) / 3.0
    return Field(h.grid, f, "relative_f")


def f_to_h(f: Field) -> Field:
    _require(f, "relative_f")
    R, Z = f.grid.mesh()
    return Field(f.grid, f.values * rho_star(R, Z), "vorticity_h")


def norm_l2_mu(f: Field, corrected: bool = False) -> float:
    _require(f, "relative_f")
    R, Z = f.grid.mesh()
    w = area_weights(f.grid, corrected)
    return math.sqrt(float(np.sum(w * f.values**2 * R**2 * rho_star(R, Z))))


def norm_lp_H(f: Field, p: float) -> float:
    """Discrete L^p norm on the half-plane with measure dr dz."""
    if p < 1:
        raise ValueError("p must be at least 1")
    v = np.abs(f.values)
    if math.isinf(p):
        return float(v.max())
    return float(np.sum(area_weights(f.grid) * v**p)) ** (1.0 / p)


def norm_l2_R3(f: Field) -> float:
    """L^2 norm of the axisymmetric extension, dx = 2 pi r dr dz."""
    R, _ = f.grid.mesh()
    return math.sqrt(2.0 * math.pi * float(np.sum(area_weights(f.grid) * R * f.values**2)))


def impulse(h: Field, corrected: bool = False) -> float:
    """Trapezoid value of the integral of r^2 h dr dz."""
    _require(h, "vorticity_h")
    R, _ = h.grid.mesh()
    return float(np.sum(area_weights(h.grid, corrected) * R**2 * h.values))


def parity_defect(values: np.ndarray, parity: int = 1) -> float:
    """max |v(r,z) - parity*v(r,-z)| relative to max |v|."""
    scale = np.max(np.abs(values))
    if scale == 0:
        return 0.0
    return float(np.max(np.abs(values - parity * values[:, ::-1])) / scale)


# ----------------------------------------------------------------------- I/O

def save_checkpoint(path, f: Field, time: float):
    g = f.grid
    head = _HEADER.pack(_MAGIC, _VERSION, g.r_max, g.z_max, g.nr, g.nz, time, KINDS.index(f.kind))
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated checkpoint header")
    magic, ver, R, Z, nr, nz, t, tag = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    if ver != _VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {ver}")
    grid = Grid(R, Z, nr, nz)
    vals = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if vals.size != (nr + 1) * (nz + 1):
        raise ValueError(f"{path}: payload size does not match header")
    return Field(grid, vals.reshape(grid.shape).astype(float), KINDS[tag]), t


def write_csv(path, f: Field):
    R, Z = f.grid.mesh()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "z", "value"])
        for r, z, v in zip(R.ravel(), Z.ravel(), f.values.ravel()):
            w.writerow(["%.17g" % r, "%.17g" % z, "%.17g" % v])
