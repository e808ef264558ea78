"""Laguerre-Hermite eigenbasis of the self-similar operator and its Gauss rule.

The operator acting on functions of (r, z) in the meridional half-plane is

    L f = -(f_rr + f_zz) + (r/2 - 3/r) f_r + (z/2) f_z,

symmetric on L^2(mu) with dmu = r^3 exp(-(r^2+z^2)/4) dr dz / (16 sqrt(pi)).
With s = r^2/4 and y = z/2 it separates into the generalized Laguerre (alpha=1)
and Hermite equations, so the eigenfunctions are

    psi_{l,n}(r, z) = c_{l,n} L_l^(1)(r^2/4) H_n(z/2),   lambda = l + n/2.

Signs are fixed so that the coefficient of the top power of z times the top
power of r^2 is positive, i.e. c_{l,n} carries a factor (-1)^l.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.linalg import eigh_tridiagonal


@dataclass(frozen=True, order=True)
class EigenIndex:
    ell: int
    n: int

    def __post_init__(self):
        if self.ell < 0 or self.n < 0:
            raise ValueError(f"negative mode index ({self.ell}, {self.n})")

    @property
    def level(self) -> int:
        return 2 * self.ell + self.n

    @property
    def label(self) -> str:
        return f"{self.ell}_{self.n}"


def _idx(idx) -> EigenIndex:
    if isinstance(idx, EigenIndex):
        return idx
    return EigenIndex(*idx)


# ---------------------------------------------------------------- polynomials

def hermite(n: int, y):
    """Physicists' Hermite polynomial by the three-term recurrence."""
    y = np.asarray(y, dtype=float)
    h0 = np.ones_like(y)
    if n == 0:
        return h0 if h0.ndim else float(h0)
    h1 = 2.0 * y
    for k in range(1, n):
        h0, h1 = h1, 2.0 * y * h1 - 2.0 * k * h0
    return h1 if h1.ndim else float(h1)


def laguerre(ell: int, alpha: float, s):
    """Generalized Laguerre polynomial L_ell^(alpha)(s) by recurrence."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("Laguerre argument must be nonnegative")
    if ell < 0:
        out = np.zeros_like(s)
        return out if out.ndim else float(out)
    p0 = np.ones_like(s)
    if ell == 0:
        return p0 if p0.ndim else float(p0)
    p1 = 1.0 + alpha - s
    for k in range(1, ell):
        p0, p1 = p1, ((2 * k + 1 + alpha - s) * p1 - (k + alpha) * p0) / (k + 1)
    return p1 if p1.ndim else float(p1)


def laguerre1(ell: int, s):
    """Associated Laguerre polynomial with alpha = 1."""
    return laguerre(ell, 1.0, s)


# ------------------------------------------------------------------- spectrum

def eigenvalue(idx) -> Fraction:
    idx = _idx(idx)
    return Fraction(2 * idx.ell + idx.n, 2)


def normalization(idx) -> float:
    """Positive constant c with ||c L_l^(1)(r^2/4) H_n(z/2)||_mu = 1."""
    idx = _idx(idx)
    return 1.0 / math.sqrt((idx.ell + 1) * 2.0 ** idx.n * math.factorial(idx.n))


def sign(idx) -> int:
    return -1 if _idx(idx).ell % 2 else 1


def _check_r(r):
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("radial coordinate must be nonnegative")
    return r


def eigenfunction(idx, r, z):
    idx = _idx(idx)
    r = _check_r(r)
    z = np.asarray(z, dtype=float)
    c = sign(idx) * normalization(idx)
    out = c * laguerre1(idx.ell, r * r / 4.0) * hermite(idx.n, z / 2.0)
    return out if np.ndim(out) else float(out)


def eigenfunction_derivatives(idx, r, z):
    """Return psi, psi_r, psi_z, psi_rr, psi_zz from derivative recurrences.

    Uses d/ds L_l^(a) = -L_{l-1}^(a+1) and H_n' = 2n H_{n-1}.
    """
    idx = _idx(idx)
    r = _check_r(r)
    z = np.asarray(z, dtype=float)
    l, n = idx.ell, idx.n
    s, y = r * r / 4.0, z / 2.0
    L0 = laguerre(l, 1.0, s)
    L1 = -laguerre(l - 1, 2.0, s)
    L2 = laguerre(l - 2, 3.0, s)
    H0 = hermite(n, y)
    H1 = 2.0 * n * hermite(n - 1, y) if n >= 1 else 0.0 * y
    H2 = 4.0 * n * (n - 1) * hermite(n - 2, y) if n >= 2 else 0.0 * y
    c = sign(idx) * normalization(idx)
    psi = c * L0 * H0
    psi_r = c * (r / 2.0) * L1 * H0
    psi_rr = c * (0.5 * L1 + s * L2) * H0
    psi_z = c * L0 * 0.5 * H1
    psi_zz = c * L0 * 0.25 * H2
    return psi, psi_r, psi_z, psi_rr, psi_zz


def apply_L(idx, r, z):
    """Evaluate L psi_idx pointwise (r > 0) from exact derivatives."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("L is evaluated off the axis only")
    psi, pr, pz, prr, pzz = eigenfunction_derivatives(idx, r, z)
    z = np.asarray(z, dtype=float)
    return -(prr + pzz) + (0.5 * r - 3.0 / r) * pr + 0.5 * z * pz


def enumerate_level(k: int) -> list[EigenIndex]:
    """All (l, n) with l + n/2 = k/2, ordered by l."""
    if k < 0:
        raise ValueError("level must be nonnegative")
    return [EigenIndex(l, k - 2 * l) for l in range(k // 2 + 1)]


def modes_up_to(max_level: int) -> list[EigenIndex]:
    return [idx for k in range(max_level + 1) for idx in enumerate_level(k)]


# ----------------------------------------------------------------- quadrature

class QuadratureError(RuntimeError):
    pass


def _gauss_rule(a, b, tol=1e-14, maxit=10):
    """Golub-Welsch nodes for a probability weight with monic recurrence
    p_{k+1} = (x - a_k) p_k - b_k p_{k-1}, polished by Newton on the
    orthonormal recurrence.  Weights are Christoffel numbers."""
    a = np.asarray(a, dtype=float)
    K = len(a)
    sb = np.sqrt(np.asarray(b[1:K], dtype=float))
    if K == 1:
        x = a.copy()
    else:
        x = eigh_tridiagonal(a, sb, eigvals_only=True)

    def orthonormal(x):
        p = np.zeros((K + 1,) + x.shape)
        dp = np.zeros_like(p)
        p[0] = 1.0
        for k in range(K):
            bk1 = math.sqrt(b[k + 1])
            prev = math.sqrt(b[k]) * p[k - 1] if k else 0.0
            dprev = math.sqrt(b[k]) * dp[k - 1] if k else 0.0
            p[k + 1] = ((x - a[k]) * p[k] - prev) / bk1
            dp[k + 1] = (p[k] + (x - a[k]) * dp[k] - dprev) / bk1
        return p, dp

    for _ in range(maxit):
        p, dp = orthonormal(x)
        dx = p[K] / dp[K]
        x = x - dx
        if np.all(np.abs(dx) <= tol * np.maximum(1.0, np.abs(x))):
            break
    else:
        raise QuadratureError(f"node iteration did not converge (K={K})")
    p, _ = orthonormal(x)
    w = 1.0 / np.sum(p[:K] ** 2, axis=0)
    return x, w / w.sum()


def gauss_laguerre(K: int, alpha: float = 1.0):
    """Nodes and probability weights for s^alpha e^-s on (0, inf)."""
    k = np.arange(K + 1)
    return _gauss_rule(2 * k[:K] + alpha + 1, k * (k + alpha))


def gauss_hermite(K: int):
    """Nodes and probability weights for e^-y^2 on the real line."""
    k = np.arange(K + 1)
    return _gauss_rule(np.zeros(K), k / 2.0)


@dataclass(frozen=True)
class Quadrature:
    """Tensor Gauss rule for mu.  weights[i, j] pairs nodes_r[i], nodes_z[j]."""
    nodes_r: np.ndarray
    nodes_z: np.ndarray
    weights: np.ndarray

    @property
    def K(self) -> int:
        return len(self.nodes_r)

    def mesh(self):
        return np.meshgrid(self.nodes_r, self.nodes_z, indexing="ij")

    def integrate(self, values) -> float:
        return float(np.sum(self.weights * values))


def build_quadrature(K: int, alpha: float = 1.0) -> Quadrature:
    """Gauss rule for mu (alpha=1).  alpha=0 gives the rule for rho* dr dz,
    rescaled to unit mass."""
    if K < 1:
        raise ValueError("need at least one node per axis")
    s, ws = gauss_laguerre(K, alpha)
    y, wy = gauss_hermite(K)
    w = np.outer(ws, wy)
    return Quadrature(2.0 * np.sqrt(s), 2.0 * y, w / w.sum())


def project(sampler, idx, quad: Quadrature) -> float:
    R, Z = quad.mesh()
    return quad.integrate(np.asarray(sampler(R, Z), dtype=float) * eigenfunction(idx, R, Z))


# ------------------------------------------------------------- coefficients

@dataclass
class EigenCoeffs:
    truncation: int
    coeffs: dict = field(default_factory=dict)

    def norm(self) -> float:
        return math.sqrt(sum(c * c for c in self.coeffs.values()))


def coefficients(sampler, quad: Quadrature, max_level: int) -> EigenCoeffs:
    return EigenCoeffs(max_level, {idx: project(sampler, idx, quad) for idx in modes_up_to(max_level)})


def apply_L_spectral(coeffs: EigenCoeffs) -> EigenCoeffs:
    return EigenCoeffs(coeffs.truncation,
                       {idx: float(eigenvalue(idx)) * c for idx, c in coeffs.coeffs.items()})


# ------------------------------------------------------------------- reports

def basis_report(max_level: int = 8, K: int = 18, eig_level: int = 6) -> dict:
    """Residuals of the basis invariants on a K-point tensor rule."""
    quad = build_quadrature(K)
    R, Z = quad.mesh()
    # every (l, n) with l, n <= max_level; this contains all levels <= max_level
    modes = [EigenIndex(l, n) for l in range(max_level + 1) for n in range(max_level + 1)]
    vals = np.array([eigenfunction(idx, R, Z).ravel() for idx in modes])
    gram = (vals * quad.weights.ravel()) @ vals.T
    ortho = float(np.max(np.abs(gram - np.eye(len(modes)))))

    # normalization constants recomputed by quadrature against the closed form
    norm_err = 0.0
    for idx in modes:
        raw = laguerre1(idx.ell, R * R / 4.0) * hermite(idx.n, Z / 2.0)
        c_quad = 1.0 / math.sqrt(quad.integrate(raw * raw))
        norm_err = max(norm_err, abs(c_quad - normalization(idx)) / normalization(idx))

    eig_err = 0.0
    for idx in modes:
        if idx.ell + idx.n > eig_level:
            continue
        lam = float(eigenvalue(idx))
        psi = eigenfunction(idx, R, Z)
        res = np.max(np.abs(apply_L(idx, R, Z) - lam * psi))
        eig_err = max(eig_err, res / max(1.0, lam * np.max(np.abs(psi))))

    return {
        "K": K,
        "max_level": max_level,
        "n_modes": len(modes),
        "orthonormality": ortho,
        "normalization": norm_err,
        "eigenrelation": float(eig_err),
        "weight_sum_error": abs(float(quad.weights.sum()) - 1.0),
    }


def write_mode_table(path, max_level: int):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["l", "n", "lambda", "c"])
        for idx in modes_up_to(max_level):
            w.writerow([idx.ell, idx.n, str(eigenvalue(idx)),
                        "%.17g" % (sign(idx) * normalization(idx))])


def write_nodes(path, quad: Quadrature):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "z", "weight"])
        for i, r in enumerate(quad.nodes_r):
            for j, z in enumerate(quad.nodes_z):
                w.writerow(["%.17g" % r, "%.17g" % z, "%.17g" % quad.weights[i, j]])
