"""Measurements behind the acceptance criteria, grouped into verify suites."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import asymptotics as asy
from . import basis, biot
from . import evolve as ev
from .field import Field, Grid, impulse, rho_star, sample


@dataclass
class Scale:
    grid: Grid
    dt: float
    t_end: float
    linear_t_end: float = 6.0
    linear_trace_every: int = 10


DESK = Scale(Grid(12.0, 12.0, 256, 256), 2e-3, 10.0)
QUICK = Scale(Grid(10.0, 10.0, 64, 64), 1e-2, 10.0, linear_trace_every=2)
SCALES = {"desk": DESK, "quick": QUICK}

SCENARIO_DATA = {
    "general": ev.InitialDatum("mode_perturbation", 1.0, [((0, 1), 0.1)]),
    "zero_impulse": ev.InitialDatum("mode_perturbation", 0.0, [((0, 1), 0.1)]),
    "zero_impulse_even": ev.InitialDatum("mode_perturbation", 0.0, [((0, 2), 0.1)]),
}
PERTURBATION = 0.1


@dataclass
class Criterion:
    number: int
    name: str
    passed: bool
    measured: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        parts = ", ".join(f"{k}={_fmt(v)}" for k, v in self.measured.items())
        return f"criterion {self.number:2d} {'PASS' if self.passed else 'FAIL'}  {self.name}: {parts}"


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


class RunCache:
    """Nonlinear scenario runs, computed once per process."""

    def __init__(self, scale: Scale = DESK, log=None):
        self.scale = scale
        self.runs = {}
        self.seconds = {}
        self.log = log or (lambda msg: None)

    def get(self, scenario: str) -> ev.Trajectory:
        if scenario not in self.runs:
            s = self.scale
            cfg = ev.EvolveConfig(grid=s.grid, dt=s.dt, t_end=s.t_end,
                                  initial=SCENARIO_DATA[scenario])
            self.log(f"running {scenario} on {s.grid.nr}x{s.grid.nz}, dt={s.dt}")
            t0 = time.perf_counter()
            self.runs[scenario] = ev.run(cfg)
            self.seconds[scenario] = time.perf_counter() - t0
            self.log(f"  done in {self.seconds[scenario]:.1f} s")
        return self.runs[scenario]


# ------------------------------------------------------------------ criterion 1

def basis_measurements(max_level=8, K=18) -> dict:
    t0 = time.perf_counter()
    rep = basis.basis_report(max_level, K)
    g = Grid(16.0, 16.0, 512, 512)
    rep["impulse_rho"] = impulse(sample(g, rho_star))
    rep["seconds"] = time.perf_counter() - t0
    return rep


def criterion_1(**_) -> Criterion:
    m = basis_measurements()
    ok = (m["orthonormality"] <= 1e-10 and m["eigenrelation"] <= 1e-6
          and m["weight_sum_error"] <= 1e-12 and abs(m["impulse_rho"] - 1) <= 1e-8
          and m["normalization"] <= 1e-10 and m["seconds"] <= 10.0)
    keep = ("orthonormality", "eigenrelation", "weight_sum_error", "normalization", "impulse_rho", "seconds")
    return Criterion(1, "basis", ok, {k: m[k] for k in keep})


# ------------------------------------------------------------------ criterion 2

def linear_mode_run(idx, scale: Scale = DESK) -> ev.Trajectory:
    idx = basis._idx(idx)
    if idx == basis.EigenIndex(0, 0):
        ini = ev.InitialDatum("scaled_attractor", 1.0)
    else:
        ini = ev.InitialDatum("mode_perturbation", 0.0, [(idx, 1.0)])
    cfg = ev.EvolveConfig(grid=scale.grid, dt=scale.dt, t_end=scale.linear_t_end,
                          nonlinear_on=False, initial=ini, trace_every=scale.linear_trace_every,
                          max_level=max(4, idx.level))
    return ev.run(cfg)


def linear_measurements(scale: Scale = DESK) -> dict:
    out = {}
    for idx in basis.modes_up_to(4):
        tr = linear_mode_run(idx, scale)
        ct = asy.coefficient_trace(tr, idx)
        c = ct.compensated
        out[idx] = {"variation": float((c.max() - c.min()) / abs(c[0])),
                    "final_compensated": float(c[-1])}
        if idx.level == 0:
            h0, _ = ev.InitialDatum("scaled_attractor", 1.0).build(scale.grid)
            out["rho_drift"] = float(np.abs(tr.final.values - h0.values).max() / h0.values.max())
    return out


def criterion_2(scale: Scale = DESK, **_) -> Criterion:
    m = linear_measurements(scale)
    worst = max(v["variation"] for k, v in m.items() if k != "rho_drift")
    ok = worst <= 0.01 and m["rho_drift"] <= 1e-4
    return Criterion(2, "linear pure modes", ok, {"max_variation": worst, "rho_drift": m["rho_drift"]})


# ------------------------------------------------------------------ criteria 3, 4

def criterion_3(cache: RunCache, **_) -> Criterion:
    tr = cache.get("general")
    I = np.asarray(tr.impulse)
    drift = float(np.abs(I - I[0]).max() / max(1.0, abs(I[0])))
    return Criterion(3, "impulse conservation", drift <= 1e-5, {"relative_drift": drift})


def criterion_4(cache: RunCache, **_) -> Criterion:
    tr = cache.get("general")
    fit = asy.fit_rate(tr.t, tr.l2mu_residual, window=(2.0, 9.0))
    return Criterion(4, "L2 decay rate", 0.45 <= fit.lambda_hat <= 0.55,
                     {"rate": fit.lambda_hat, "r_squared": fit.r_squared})


# ------------------------------------------------------------------ criteria 5-7

def criterion_5(cache: RunCache, **_) -> Criterion:
    rep = asy.corollary_report(cache.get("general"), "general")
    return Criterion(5, "n=0 residual rate", 0.9 <= rep.fit.lambda_hat <= 1.1,
                     {"rate": rep.fit.lambda_hat, "log_factor": rep.fit.log_factor,
                      "alpha": rep.named.get("alpha")})


def criterion_6(cache: RunCache, **_) -> Criterion:
    rep = asy.corollary_report(cache.get("zero_impulse"), "zero_impulse")
    return Criterion(6, "zero-impulse residual rate", 1.35 <= rep.fit.lambda_hat <= 1.65,
                     {"rate": rep.fit.lambda_hat, "log_factor": rep.fit.log_factor,
                      "alpha": rep.named.get("alpha"), "beta": rep.named.get("beta"),
                      "gamma": rep.named.get("gamma")})


def criterion_7(cache: RunCache, **_) -> Criterion:
    rep = asy.corollary_report(cache.get("zero_impulse_even"), "zero_impulse_even")
    odd = rep.extra["odd_limits"]
    worst = max(abs(v) for v in odd.values())
    bound = 1e-8 * PERTURBATION
    ok = worst <= bound and 1.8 <= rep.fit.lambda_hat <= 2.2
    m = {f"a_{k.ell}_{k.n}": v for k, v in odd.items()}
    m.update(bound=bound, rate=rep.fit.lambda_hat)
    return Criterion(7, "even zero-impulse data", ok, m)


# ------------------------------------------------------------------ criterion 8

def elliptic_errors(n: int) -> dict:
    g = Grid(12.0, 12.0, n, n)
    R, Z = g.mesh()
    h = sample(g, biot.manufactured_vorticity)
    psi = biot.solve_stream(h)
    mr, mz = biot.velocity_from_stream(psi)
    vr, vz = biot.manufactured_velocity(R, Z)
    return {
        "stream": float(np.abs(psi.values - biot.manufactured_stream(R, Z)).max()),
        "velocity": float(max(np.abs(mr.values - vr).max(), np.abs(mz.values - vz).max())),
        "curl": float(np.abs(biot.curl(mr, mz) - h.values[1:-1, 1:-1]).max()),
        "anelastic": float(np.abs(biot.anelastic_residual(mr, mz)).max()),
    }


ROUNDOFF_FLOOR = 1e-11


def criterion_8(**_) -> Criterion:
    e1, e2 = elliptic_errors(128), elliptic_errors(256)
    order = {k: math.log2(e1[k] / e2[k]) if e2[k] > 0 else float("inf") for k in e1}
    # the centred velocities satisfy the discrete constraint identically, so its
    # residual sits at round-off on both grids; that counts as convergence
    anel_ok = order["anelastic"] >= 1.8 or max(e1["anelastic"], e2["anelastic"]) <= ROUNDOFF_FLOOR
    ok = order["stream"] >= 1.8 and anel_ok
    return Criterion(8, "elliptic convergence", ok,
                     {"order_stream": order["stream"], "order_velocity": order["velocity"],
                      "order_curl": order["curl"], "anelastic_128": e1["anelastic"],
                      "anelastic_256": e2["anelastic"]})


# ------------------------------------------------------------------ criterion 9

def random_polynomial(rng, degree=6):
    """Random polynomial in (r^2, z) of total (r, z)-degree <= degree."""
    terms = [(a, b) for a in range(0, degree // 2 + 1) for b in range(0, degree + 1) if 2 * a + b <= degree]
    c = rng.normal(size=len(terms))

    def f(r, z):
        return sum(ci * r ** (2 * a) * z**b for ci, (a, b) in zip(c, terms))

    def fr(r, z):
        return sum(ci * 2 * a * r ** (2 * a - 1) * z**b for ci, (a, b) in zip(c, terms) if a)

    return f, fr


# smooth non-polynomial profiles; Gauss rules are not exact on these, so the
# refinement comparison is a real test
HARDY_PROFILES = (
    lambda r, z: np.cos(z) * np.cos(r),
    lambda r, z: np.exp(-(r**2 + z**2) / 16.0) * (1.0 + z),
    lambda r, z: np.arctan(z) + np.sin(r**2 / 5.0),
)


def hardy_measurements(draws=100, K=20, seed=7) -> dict:
    rng = np.random.default_rng(seed)
    coarse, fine = [], []
    for _ in range(draws):
        f, fr = random_polynomial(rng)
        coarse.append(asy.hardy_check(f, K, fr).ratio)
        fine.append(asy.hardy_check(f, K + 6, fr).ratio)
    for f in HARDY_PROFILES:
        coarse.append(asy.hardy_check(f, K).ratio)
        fine.append(asy.hardy_check(f, K + 6).ratio)
    one = asy.hardy_check(lambda r, z: np.ones_like(r), K)
    lin = asy.hardy_check(lambda r, z: r, K)
    return {"max_ratio": max(coarse), "max_ratio_refined": max(fine),
            "max_rel_change": float(np.max(np.abs(np.array(fine) / np.array(coarse) - 1))),
            "const_lhs": one.lhs, "const_ratio": one.ratio, "r_ratio": lin.ratio}


def poincare_equality(K=18) -> float:
    q = basis.build_quadrature(K)
    R, Z = q.mesh()
    psi, pr, pz, _, _ = basis.eigenfunction_derivatives((0, 1), R, Z)
    return abs(0.5 * q.integrate(psi**2) - q.integrate(pr**2 + pz**2))


GRONWALL_MATRIX = [(lam, mu, C) for lam in (0.5, 1.0) for mu in (1.0, 1.5) for C in (0.5, 1.0, 2.0)]


def gronwall_measurements() -> dict:
    out = {}
    for lam, mu, C in GRONWALL_MATRIX:
        variant = "b" if lam < mu else "c"
        out[(lam, mu, C)] = asy.gronwall_oracle(lam, mu, C, 1.0, variant).sup
    return out


def criterion_9(cache: RunCache, **_) -> Criterion:
    peq = poincare_equality()
    hardy = hardy_measurements()
    tr = cache.get("zero_impulse")
    lim = asy.extract_levels(tr, (1, 2))
    _, vals, bounded = asy.dynamic_poincare_trace(tr, 1, lim, (1.0, 8.0))
    gw = gronwall_measurements()
    gw_ok = all(np.isfinite(v) for v in gw.values())
    ok = (peq <= 1e-10 and np.isfinite(hardy["max_ratio"]) and hardy["max_rel_change"] <= 0.05
          and bounded and gw_ok)
    return Criterion(9, "inequalities", ok,
                     {"poincare_gap": peq, "hardy_max_ratio": hardy["max_ratio"],
                      "hardy_refine_change": hardy["max_rel_change"],
                      "dyn_poincare_max_C": float(vals.max()), "dyn_poincare_bounded": bounded,
                      "gronwall_max_sup": max(gw.values())})


# ------------------------------------------------------------------ criterion 10

def interpolation_ratio(n: int, fn) -> float:
    g = Grid(12.0, 12.0, n, n)
    h = sample(g, fn)
    mr, mz = biot.velocity(h)
    return biot.velocity_bound_check(h, mr, mz)[2]


def m_bounded(tr) -> tuple:
    m = np.asarray(tr.m_inf)
    t = tr.t
    half = t <= 0.5 * t[-1]
    ok = bool(np.all(np.isfinite(m)) and m[~half].max() <= 1.05 * m[half].max())
    return ok, float(m.max())


def criterion_10(cache: RunCache, **_) -> Criterion:
    meas, ok = {}, True
    for sc in SCENARIO_DATA:
        b, mx = m_bounded(cache.get(sc))
        ok &= b
        meas[f"m_inf_max_{sc}"] = mx
    profiles = {"rho": lambda r, z: rho_star(r, z),
                "psi10_rho": lambda r, z: basis.eigenfunction((1, 0), r, z) * rho_star(r, z)}
    for name, fn in profiles.items():
        a, b = interpolation_ratio(128, fn), interpolation_ratio(256, fn)
        change = abs(b / a - 1)
        ok &= change <= 0.05
        meas[f"ratio_{name}"] = b
        meas[f"ratio_change_{name}"] = change
    return Criterion(10, "velocity bound", bool(ok), meas)


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
            6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10}
SUITES = {"basis": [1], "linear": [2], "nonlinear": [3, 4, 8, 10],
          "corollaries": [5, 6, 7], "inequalities": [9]}
SUITES["all"] = sorted(n for v in SUITES.values() for n in v)


def run_suite(name: str, scale: Scale = DESK, cache: RunCache | None = None, log=None):
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}")
    cache = cache or RunCache(scale, log)
    results = []
    for n in SUITES[name]:
        t0 = time.perf_counter()
        c = CRITERIA[n](scale=scale, cache=cache)
        c.seconds = time.perf_counter() - t0
        if log:
            log(c.line())
        results.append(c)
    return results
