"""IMEX time stepping of the self-similar vorticity equation

    h_t = h_rr + h_zz + h_r/r + (r h_r + z h_z)/2 + 2h - h/r^2
          + e^{-t} (m_r h / r - m . grad h).

The linear part equals -rho* L (h / rho*).  It is discretised in that form:
centred differences for L acting on f = h/rho*, conjugated back to h.  This
keeps the discrete operator exact on the low polynomial modes, makes rho* an
exact steady state, and gives a discrete left null vector (detailed-balance
weights) that plays the role of the impulse.  Crank-Nicolson handles the
linear part, Heun the damped nonlinearity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import basis
from .biot import EllipticSolve, elliptic_solver, stream_values, velocity_values
from .field import Field, Grid, area_weights, impulse, load_checkpoint, rho_star

PRESETS = ("scaled_attractor", "mode_perturbation", "custom")


class StepError(RuntimeError):
    """A step failed; `trajectory` holds everything recorded before it."""

    def __init__(self, msg, trajectory=None):
        super().__init__(msg)
        self.trajectory = trajectory


class CFLError(StepError):
    pass


# ------------------------------------------------------------------ operators

def _tridiag(lower, diag, upper):
    return sp.diags([lower[1:], diag, upper[:-1]], [-1, 0, 1], format="csr")


def _radial_L(grid: Grid):
    """-f'' + (r/2 - 3/r) f' on r_1..r_{nr-1}; f(R) = 0 and the axis value
    is the even extrapolation f_0 = (4 f_1 - f_2)/3."""
    r, d = grid.r[1:-1], grid.dr
    b = 0.5 * r - 3.0 / r
    lo = -1.0 / d**2 - b / (2 * d)
    up = -1.0 / d**2 + b / (2 * d)
    L = _tridiag(lo, np.full_like(r, 2.0 / d**2), up).tolil()
    L[0, 0] += 4.0 * lo[0] / 3.0
    L[0, 1] += -lo[0] / 3.0
    return L.tocsr()


def _axial_L(grid: Grid):
    """-f'' + (z/2) f' on interior z nodes, f = 0 at |z| = Z."""
    z, d = grid.z[1:-1], grid.dz
    lo = -1.0 / d**2 - z / (4 * d)
    up = -1.0 / d**2 + z / (4 * d)
    return _tridiag(lo, np.full_like(z, 2.0 / d**2), up)


def _balance_weights(L):
    """Positive w with w_k L[k,k+1] = w_{k+1} L[k+1,k]; then w^T L ~ 0."""
    L = L.tocsr()
    n = L.shape[0]
    sup = np.array([L[k, k + 1] for k in range(n - 1)])
    sub = np.array([L[k + 1, k] for k in range(n - 1)])
    if np.any(sup >= 0) or np.any(sub >= 0):
        raise ValueError("grid too coarse for the drift term: need spacing * extent / 4 < 1 "
                         "in each direction (cell Peclet number below one)")
    logw = np.concatenate([[0.0], np.cumsum(np.log(sup / sub))])
    return np.exp(logw - logw.max())


class LinearOperator:
    """Discrete linear part on interior nodes, flattened row-major (r slow)."""

    def __init__(self, grid: Grid):
        self.grid = grid
        ri, zi = grid.r[1:-1], grid.z[1:-1]
        pr = ri * np.exp(-ri**2 / 4.0)
        pz = np.exp(-zi**2 / 4.0)
        Lr, Lz = _radial_L(grid), _axial_L(grid)
        Ar = sp.diags(pr) @ Lr @ sp.diags(1.0 / pr)
        Az = sp.diags(pz) @ Lz @ sp.diags(1.0 / pz)
        self.Lr, self.Lz = Lr, Lz
        self.A = -(sp.kron(Ar, sp.identity(len(zi))) + sp.kron(sp.identity(len(ri)), Az)).tocsr()
        R, Z = np.meshgrid(ri, zi, indexing="ij")
        self.rho = rho_star(R, Z)
        # conserved weights in h units: balance weights of L over rho*
        w = np.outer(_balance_weights(Lr) / pr, _balance_weights(Lz) / pz)
        self.W = w / np.sum(w * self.rho) * self._trapezoid_impulse_of_rho()

    def _trapezoid_impulse_of_rho(self):
        g = self.grid
        R, Z = g.mesh()
        return float(np.sum(area_weights(g) * R**2 * rho_star(R, Z)))

    def apply(self, h_int: np.ndarray) -> np.ndarray:
        return (self.A @ h_int.ravel()).reshape(h_int.shape)

    def invariant(self, h_int: np.ndarray) -> float:
        return float(np.sum(self.W * h_int))


@lru_cache(maxsize=4)
def linear_operator(grid: Grid) -> LinearOperator:
    return LinearOperator(grid)


class CrankNicolson:
    def __init__(self, op: LinearOperator, dt: float):
        n = op.A.shape[0]
        I = sp.identity(n, format="csr")
        self.dt = dt
        self.plus = (I + 0.5 * dt * op.A).tocsr()
        self._lu = spla.splu((I - 0.5 * dt * op.A).tocsc(), permc_spec="MMD_AT_PLUS_A")

    def explicit(self, h_int):
        return (self.plus @ h_int.ravel()).reshape(h_int.shape)

    def solve(self, b):
        return self._lu.solve(b.ravel()).reshape(b.shape)


@lru_cache(maxsize=4)
def crank_nicolson(grid: Grid, dt: float) -> CrankNicolson:
    return CrankNicolson(linear_operator(grid), dt)


# ------------------------------------------------------------------ right-hand sides

def linear_rhs(h: Field) -> Field:
    out = np.zeros(h.grid.shape)
    out[1:-1, 1:-1] = linear_operator(h.grid).apply(h.values[1:-1, 1:-1])
    return Field(h.grid, out, "vorticity_h")


def _upwind(h, v, d, axis):
    """Second-order upwind derivative of h along axis for wind v, central
    where the one-sided stencil would leave the grid."""
    g = np.gradient(h, d, axis=axis)
    back = np.zeros_like(h)
    fwd = np.zeros_like(h)
    sl = [slice(None)] * 2

    def s(a, b):
        sl[axis] = slice(a, b)
        return tuple(sl)

    n = h.shape[axis]
    back[s(2, n)] = (3 * h[s(2, n)] - 4 * h[s(1, n - 1)] + h[s(0, n - 2)]) / (2 * d)
    fwd[s(0, n - 2)] = (-3 * h[s(0, n - 2)] + 4 * h[s(1, n - 1)] - h[s(2, n)]) / (2 * d)
    out = np.where(v > 0, back, fwd)
    edge = [0, 1, n - 2, n - 1]
    idx = [slice(None)] * 2
    idx[axis] = edge
    out[tuple(idx)] = g[tuple(idx)]
    return out


def _nonlinear(h, t, grid, op, solver, conservative=True):
    psi = stream_values(h, grid, solver)
    mr, mz = velocity_values(psi, grid)
    r = grid.r[:, None]
    hr = _upwind(h, mr, grid.dr, 0)
    hz = _upwind(h, mz, grid.dz, 1)
    n = np.zeros_like(h)
    n[1:] = mr[1:] * h[1:] / r[1:]
    n -= mr * hr + mz * hz
    n *= math.exp(-t)
    n_int = n[1:-1, 1:-1]
    out = np.zeros_like(h)
    if conservative:
        # the continuous term has zero impulse; remove the discrete leak along rho*
        n_int = n_int - op.invariant(n_int) / op.invariant(op.rho) * op.rho
    out[1:-1, 1:-1] = n_int
    m_inf = float(np.sqrt(mr**2 + mz**2).max())
    return out, m_inf


def nonlinear_rhs(h: Field, t: float, conservative: bool = True) -> Field:
    grid = h.grid
    n, _ = _nonlinear(h.values, t, grid, linear_operator(grid), elliptic_solver(grid), conservative)
    return Field(grid, n, "vorticity_h")


# ------------------------------------------------------------------ configuration

@dataclass
class InitialDatum:
    preset: str = "scaled_attractor"
    impulse: float = 1.0
    modes: list = field(default_factory=list)   # [(EigenIndex, amplitude), ...]
    path: str | None = None

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}")
        self.modes = [(basis._idx(i), float(a)) for i, a in self.modes]

    def build(self, grid: Grid):
        """Return (h0, t0)."""
        if self.preset == "custom":
            if not self.path:
                raise ValueError("custom preset needs a checkpoint path")
            h, t = load_checkpoint(self.path)
            if h.grid != grid:
                raise ValueError("checkpoint grid differs from the configured grid")
            return h, t
        R, Z = grid.mesh()
        f = np.full(grid.shape, self.impulse)
        if self.preset == "mode_perturbation":
            for idx, amp in self.modes:
                f = f + amp * basis.eigenfunction(idx, R, Z)
        v = f * rho_star(R, Z)
        v[0] = v[-1] = 0.0
        v[:, 0] = v[:, -1] = 0.0
        return Field(grid, v, "vorticity_h"), 0.0


@dataclass
class EvolveConfig:
    grid: Grid = field(default_factory=Grid)
    dt: float = 2e-3
    t_end: float = 10.0
    nonlinear_on: bool = True
    checkpoint_every: int = 0
    initial: InitialDatum = field(default_factory=InitialDatum)
    cfl: float = 0.5
    heun: bool = True          # False: single velocity refresh, first order in N
    trace_every: int = 1
    max_level: int = 8

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.t_end < 0:
            raise ValueError("t_end must be nonnegative")
        if self.trace_every < 1:
            raise ValueError("trace_every must be at least 1")


# ------------------------------------------------------------------ trajectory

@dataclass
class Trajectory:
    grid: Grid
    modes: list
    times: list = field(default_factory=list)
    impulse: list = field(default_factory=list)
    invariant: list = field(default_factory=list)
    coefs: list = field(default_factory=list)
    l2mu_residual: list = field(default_factory=list)
    m_inf: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)   # [(t, Field)]
    final: Field | None = None
    final_time: float = 0.0

    def append(self, t, row):
        self.times.append(t)
        for key, val in row.items():
            getattr(self, key).append(val)

    @property
    def t(self) -> np.ndarray:
        return np.asarray(self.times)

    def coef(self, idx) -> np.ndarray:
        k = self.modes.index(basis._idx(idx))
        return np.asarray(self.coefs)[:, k]

    def coef_matrix(self) -> np.ndarray:
        return np.asarray(self.coefs)

    def columns(self) -> list:
        return (["t", "impulse"] + [f"coef_{m.label}" for m in self.modes]
                + ["l2mu_residual", "m_inf"])

    def rows(self):
        C = self.coef_matrix()
        for k, t in enumerate(self.times):
            yield [t, self.impulse[k], *C[k], self.l2mu_residual[k], self.m_inf[k]]

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write(",".join(self.columns()) + "\n")
            for row in self.rows():
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def projection_matrix(grid: Grid, modes) -> np.ndarray:
    """Rows map interior h to <h/rho*, psi>_mu = int h psi r^2 dr dz, using
    the axis-corrected radial rule."""
    R, Z = grid.mesh()
    w = (area_weights(grid, corrected=True) * R**2)[1:-1, 1:-1]
    Ri, Zi = R[1:-1, 1:-1], Z[1:-1, 1:-1]
    return np.array([(w * basis.eigenfunction(m, Ri, Zi)).ravel() for m in modes])


# ------------------------------------------------------------------ integrator

class Integrator:
    def __init__(self, config: EvolveConfig, solver: EllipticSolve | None = None):
        self.config = config
        g = config.grid
        self.grid = g
        self.op = linear_operator(g)
        self.cn = crank_nicolson(g, config.dt)
        self.solver = solver or elliptic_solver(g)
        self.modes = basis.modes_up_to(config.max_level)
        self.P = projection_matrix(g, self.modes)
        self._zero = self.modes.index(basis.EigenIndex(0, 0))
        self.min_spacing = min(g.dr, g.dz)

    def nonlinear(self, h, t):
        return _nonlinear(h, t, self.grid, self.op, self.solver)

    def step(self, h: np.ndarray, t: float):
        """Advance full-grid values h by one step; returns (h_new, m_inf at t)."""
        dt = self.config.dt
        hi = h[1:-1, 1:-1]
        rhs = self.cn.explicit(hi)
        out = np.zeros_like(h)
        m_inf = float("nan")
        if not self.config.nonlinear_on:
            out[1:-1, 1:-1] = self.cn.solve(rhs)
            return out, m_inf
        n0, m_inf = self.nonlinear(h, t)
        speed = math.exp(-t) * m_inf
        if dt * speed > self.config.cfl * self.min_spacing:
            raise CFLError(f"CFL violated at t={t:.4g}: dt*|m|e^-t/dx = "
                           f"{dt * speed / self.min_spacing:.3g} > {self.config.cfl}")
        n0 = n0[1:-1, 1:-1]
        star = self.cn.solve(rhs + dt * n0)
        if self.config.heun:
            hs = np.zeros_like(h)
            hs[1:-1, 1:-1] = star
            n1, _ = self.nonlinear(hs, t + dt)
            star = self.cn.solve(rhs + 0.5 * dt * (n0 + n1[1:-1, 1:-1]))
        out[1:-1, 1:-1] = star
        return out, m_inf

    def diagnostics(self, h: np.ndarray, m_inf=None) -> dict:
        hi = h[1:-1, 1:-1]
        c = self.P @ hi.ravel()
        if m_inf is None or not np.isfinite(m_inf):
            mr, mz = velocity_values(stream_values(h, self.grid, self.solver), self.grid)
            m_inf = float(np.sqrt(mr**2 + mz**2).max())
        return {
            "impulse": impulse(Field(self.grid, h, "vorticity_h")),
            "invariant": self.op.invariant(hi),
            "coefs": c,
            "l2mu_residual": float(np.sqrt(np.sum(np.delete(c, self._zero) ** 2))),
            "m_inf": m_inf,
        }


def step(h: Field, t: float, dt: float, nonlinear_on: bool = True, cfl: float = 0.5) -> Field:
    cfg = EvolveConfig(grid=h.grid, dt=dt, nonlinear_on=nonlinear_on, cfl=cfl, max_level=0)
    v, _ = Integrator(cfg).step(h.values, t)
    return Field(h.grid, v, "vorticity_h")


def run(config: EvolveConfig, start: tuple | None = None, progress=None) -> Trajectory:
    """Integrate from the initial datum (or from start = (Field, t)) to t_end.

    Times are k*dt for integer k so a resumed run repeats the same steps."""
    integ = Integrator(config)
    if start is None:
        h0, t0 = config.initial.build(config.grid)
    else:
        h0, t0 = start
    if h0.grid != config.grid:
        raise ValueError("initial field lives on a different grid")
    dt = config.dt
    k0 = int(round(t0 / dt))
    if abs(k0 * dt - t0) > 1e-9 * max(1.0, abs(t0)):
        raise ValueError("start time is not on the dt lattice")
    nsteps = int(round(config.t_end / dt))
    traj = Trajectory(config.grid, integ.modes)
    h = h0.values.copy()
    t = k0 * dt
    m_prev = None
    try:
        for k in range(k0, nsteps):
            t = k * dt
            h_new, m_inf = integ.step(h, t)
            if (k - k0) % config.trace_every == 0:
                traj.append(t, integ.diagnostics(h, m_inf))
            if config.checkpoint_every and (k - k0) % config.checkpoint_every == 0:
                traj.checkpoints.append((t, Field(config.grid, h.copy(), "vorticity_h")))
            if not np.all(np.isfinite(h_new)):
                raise StepError(f"non-finite values after step at t={t:.4g}")
            h = h_new
            if progress:
                progress(k + 1, nsteps)
        t = nsteps * dt if nsteps > k0 else t
        traj.append(t, integ.diagnostics(h, m_prev))
        if config.checkpoint_every:
            traj.checkpoints.append((t, Field(config.grid, h.copy(), "vorticity_h")))
    except StepError as exc:
        traj.final, traj.final_time = Field(config.grid, h, "vorticity_h"), t
        exc.trajectory = traj
        raise
    except Exception as exc:
        traj.final, traj.final_time = Field(config.grid, h, "vorticity_h"), t
        raise StepError(f"step failed at t={t:.4g}: {exc}", traj) from exc
    traj.final, traj.final_time = Field(config.grid, h, "vorticity_h"), t
    return traj
