import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from axisym import asymptotics as asy
from axisym import basis
from axisym.evolve import Trajectory
from axisym.field import Grid, rho_star


def synthetic(fn, t_end=10.0, dt=0.02, max_level=6, impulse=1.0):
    """Trajectory whose coefficients are fn(mode, t)."""
    modes = basis.modes_up_to(max_level)
    tr = Trajectory(Grid(8, 8, 16, 16), modes)
    for t in np.arange(0.0, t_end + dt / 2, dt):
        c = np.array([fn(m, t) for m in modes])
        tr.append(float(t), {"impulse": impulse, "invariant": impulse, "coefs": c,
                             "l2mu_residual": float(np.sqrt(np.sum(c[1:] ** 2))), "m_inf": 0.0})
    return tr


def lam(m):
    return float(basis.eigenvalue(m))


# ------------------------------------------------------------------ rate fits

@pytest.mark.parametrize("rate", [0.5, 1.0, 1.5, 2.0])
def test_fit_pure_exponential(rate):
    t = np.linspace(0, 10, 200)
    fit = asy.fit_rate(t, 3.0 * np.exp(-rate * t), allow_log_factor=True)
    assert fit.lambda_hat == pytest.approx(rate, abs=1e-10)
    assert not fit.log_factor and fit.r_squared == pytest.approx(1.0)


def test_fit_detects_log_factor():
    t = np.linspace(0.5, 10, 300)
    fit = asy.fit_rate(t, t * np.exp(-1.5 * t), allow_log_factor=True)
    assert fit.log_factor
    assert fit.lambda_hat == pytest.approx(1.5, abs=1e-8)
    assert fit.log_power == pytest.approx(1.0, abs=1e-8)
    pure = asy.fit_rate(t, t * np.exp(-1.5 * t), allow_log_factor=False)
    assert pure.lambda_hat < 1.5


def test_fit_with_noise_and_window():
    rng = np.random.default_rng(0)
    t = np.linspace(0, 10, 500)
    y = np.exp(-0.7 * t) * (1 + 0.01 * rng.normal(size=t.size))
    fit = asy.fit_rate(t, y, window=(2, 9))
    assert fit.fit_window[0] >= 2 and fit.fit_window[1] <= 9
    assert fit.lambda_hat == pytest.approx(0.7, abs=5e-3)


def test_fit_errors():
    with pytest.raises(ValueError):
        asy.fit_rate([0, 1, 2], [1, 0.5, 0.2])
    with pytest.raises(ValueError):
        asy.fit_rate(np.arange(6.0), [1, 0.5, 0, 0.1, 0.1, 0.1])


# ------------------------------------------------------------------ limits

def test_extract_limit_from_converging_trace():
    # compensated value a + b e^{-t}: the tail mean approaches a within the envelope
    tr = synthetic(lambda m, t: (0.3 + 0.2 * math.exp(-t)) * math.exp(-0.5 * t) if m == basis.EigenIndex(0, 1) else 0.0)
    est = asy.extract_limit(asy.coefficient_trace(tr, (0, 1)))
    assert est.converged
    assert abs(est.value - 0.3) <= est.envelope
    assert abs(est.value - 0.3) < 1e-3


def test_extract_limit_flags_oscillation():
    tr = synthetic(lambda m, t: math.sin(3 * t) * math.exp(-0.5 * t) if m == basis.EigenIndex(0, 1) else 0.0)
    assert not asy.extract_limit(asy.coefficient_trace(tr, (0, 1))).converged


def test_extract_limit_needs_samples():
    tr = synthetic(lambda m, t: 1.0, t_end=0.1, dt=0.05)
    with pytest.raises(ValueError):
        asy.extract_limit(asy.coefficient_trace(tr, (0, 0)))


# ------------------------------------------------------------------ expansions

def ladder(amps, resonance=0.0):
    """Pure decays e^{-lambda t} a_k, plus an optional t e^{-t} term on (0, 2)."""
    def fn(m, t):
        v = amps.get((m.ell, m.n), 0.0) * math.exp(-lam(m) * t)
        if resonance and (m.ell, m.n) == (0, 2):
            v += resonance * t * math.exp(-t)
        return v
    return fn


def test_general_expansion_rate():
    tr = synthetic(ladder({(0, 0): 1.0, (0, 1): 0.1, (0, 2): 0.02, (1, 0): -0.01, (0, 3): 0.005}))
    rep = asy.corollary_report(tr, "general")
    assert rep.named["alpha"] == pytest.approx(0.1, rel=1e-6)
    assert rep.fit.lambda_hat == pytest.approx(1.0, abs=0.02)
    assert rep.physical_rate == pytest.approx(-(rep.fit.lambda_hat + 1.25))


def test_general_expansion_resonance_log_factor():
    tr = synthetic(ladder({(0, 0): 1.0, (0, 1): 0.1}, resonance=0.05))
    rep = asy.corollary_report(tr, "general")
    assert rep.fit.log_factor and rep.fit.lambda_hat == pytest.approx(1.0, abs=1e-6)


def test_zero_impulse_expansion():
    amps = {(0, 1): 0.1, (0, 2): 0.03, (1, 0): -0.02, (0, 3): 0.01, (1, 1): 0.004}
    tr = synthetic(ladder(amps), impulse=0.0)
    rep = asy.corollary_report(tr, "zero_impulse")
    assert rep.named["beta"] == pytest.approx(0.03, rel=1e-4)
    assert rep.named["gamma"] == pytest.approx(-0.02, rel=1e-4)
    assert rep.fit.lambda_hat == pytest.approx(1.5, abs=0.02)


def test_even_expansion_reports_odd_limits():
    amps = {(0, 2): 0.1, (1, 0): 0.05, (0, 4): 0.01}
    tr = synthetic(ladder(amps), impulse=0.0)
    rep = asy.corollary_report(tr, "zero_impulse_even")
    assert rep.fit.lambda_hat == pytest.approx(2.0, abs=0.02)
    assert all(v == 0.0 for v in rep.extra["odd_limits"].values())
    assert {m.level for m in rep.extra["odd_limits"]} == {1, 3}


def test_hypothesis_errors():
    tr = synthetic(ladder({(0, 0): 1.0, (0, 1): 0.1}), impulse=1.0)
    with pytest.raises(asy.HypothesisError):
        asy.corollary_report(tr, "zero_impulse")
    odd = synthetic(ladder({(0, 1): 0.1, (0, 2): 0.1}), impulse=0.0)
    with pytest.raises(asy.HypothesisError):
        asy.corollary_report(odd, "zero_impulse_even")
    with pytest.raises(ValueError):
        asy.corollary_report(tr, "bogus")


# ------------------------------------------------------------------ inequalities

# DERIVED: sympy integrates by parts, <psi, L psi>_mu = ||grad psi||^2_mu
def test_integration_by_parts_identity():
    r, z = sp.symbols("r z", positive=True)
    zr = sp.Symbol("z", real=True)
    mu = r**3 * sp.exp(-(r**2 + zr**2) / 4) / (16 * sp.sqrt(sp.pi))
    psi = 1 + zr + r**2 * zr - zr**3 / 3 + r**4
    Lpsi = (-(sp.diff(psi, r, 2) + sp.diff(psi, zr, 2))
            + (r / 2 - 3 / r) * sp.diff(psi, r) + zr / 2 * sp.diff(psi, zr))

    def I(e):
        return sp.integrate(sp.integrate(sp.expand(e * mu), (zr, -sp.oo, sp.oo)), (r, 0, sp.oo))

    lhs = I(psi * Lpsi)
    rhs = I(sp.diff(psi, r) ** 2 + sp.diff(psi, zr) ** 2)
    assert sp.simplify(lhs - rhs) == 0


# PAPER: sharp constant 1/2, attained by the first non-constant eigenfunction
def test_poincare_equality_on_first_mode():
    q = basis.build_quadrature(18)
    R, Z = q.mesh()
    psi, pr, pz, _, _ = basis.eigenfunction_derivatives((0, 1), R, Z)
    assert abs(0.5 * q.integrate(psi**2) - q.integrate(pr**2 + pz**2)) <= 1e-10


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=9, max_size=9))
def test_poincare_inequality_in_coefficients(c):
    modes = basis.modes_up_to(4)
    half, grad = asy.poincare_gap(c, modes)
    assert half <= grad + 1e-15


def test_dynamic_poincare_zero_for_exact_ladder():
    amps = {(0, 1): 0.1, (0, 2): 0.03, (1, 0): -0.02, (0, 3): 0.01}
    tr = synthetic(ladder(amps), impulse=0.0)
    lim = asy.extract_levels(tr, (1, 2))
    ts, vals, bounded = asy.dynamic_poincare_trace(tr, 1, lim)
    assert bounded and np.all(vals == 0.0)


def test_dynamic_poincare_positive_with_low_mode_leak():
    # a level-0 component below the subtracted level violates the static
    # inequality; the slack constant picks it up
    tr = synthetic(ladder({(0, 0): 1e-3, (0, 1): 0.1, (0, 2): 0.03}), impulse=0.0)
    lim = asy.extract_levels(tr, (1, 2))
    _, vals, bounded = asy.dynamic_poincare_trace(tr, 1, lim)
    assert vals.max() > 0
    assert not bounded


# DERIVED: scipy dblquad for the weighted L2 norm
def test_hardy_lhs_against_dblquad():
    f = lambda r, z: 1 + 0.3 * z + 0.1 * r * r
    ref, _ = integrate.dblquad(lambda z, r: f(r, z) ** 2 * rho_star(r, z), 0, 40, -40, 40)
    rep = asy.hardy_check(f, 20, lambda r, z: 0.2 * r)
    assert rep.lhs == pytest.approx(math.sqrt(ref), rel=1e-10)


def test_hardy_constant_and_derivative():
    one = asy.hardy_check(lambda r, z: np.ones_like(r), 20)
    # rho* dr dz has mass 1/4, mu has mass 1, and d_r 1 = 0
    assert one.lhs == pytest.approx(0.5, abs=1e-14)
    assert one.ratio == pytest.approx(0.5, abs=1e-14)
    f = lambda r, z: np.sin(r) * np.cos(z)
    a = asy.hardy_check(f, 24)
    b = asy.hardy_check(f, 24, lambda r, z: np.cos(r) * np.cos(z))
    assert a.rhs == pytest.approx(b.rhs, rel=1e-9)


# DERIVED: scipy solve_ivp as oracle for the Gronwall ODE
@pytest.mark.parametrize("lam_,mu,C,variant", [(0.5, 1.0, 1.0, "b"), (0.5, 1.5, 2.0, "b"),
                                               (1.0, 1.0, 0.5, "c"), (1.0, 1.5, 2.0, "b")])
def test_gronwall_against_solve_ivp(lam_, mu, C, variant):
    g = mu if variant == "b" else lam_
    ts = np.linspace(0, 30, 30001)
    # relative tolerance only: e^{lam t} amplifies any absolute floor
    sol = integrate.solve_ivp(lambda t, F: -(lam_ - C * np.exp(-t)) * F + C * np.exp(-g * t),
                              (0, 30), [1.0], t_eval=ts, rtol=1e-12, atol=1e-30, method="DOP853")
    w = np.exp(lam_ * ts) / (1 if variant == "b" else 1 + ts)
    ref = np.max(sol.y[0] * w)
    rep = asy.gronwall_oracle(lam_, mu, C, 1.0, variant)
    assert rep.sup == pytest.approx(ref, rel=1e-7)
    assert math.isfinite(rep.sup)


def test_gronwall_argument_checks():
    with pytest.raises(ValueError):
        asy.gronwall_oracle(1.0, 1.0, 1.0, 1.0, "b")
    with pytest.raises(ValueError):
        asy.gronwall_oracle(0.5, 1.0, 1.0, 1.0, "x")
