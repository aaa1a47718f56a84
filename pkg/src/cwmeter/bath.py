"""Quasi-Ohmic bath kernels and the rates they induce on the magnet.

All functions accept scalars or numpy arrays and broadcast.
"""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

__all__ = [
    "KernelParams",
    "RateCoefficients",
    "default_cutoff",
    "kernel_params",
    "noise_kernel",
    "noise_kernel_prime",
    "matsubara_terms",
    "x_coth",
    "rate_coefficients",
    "branch_frequencies",
    "drift_diffusion",
]

_SMALL_X = 1e-8


@dataclass(frozen=True)
class KernelParams:
    beta: float
    Gamma: float
    matsubara_tol: float = 1e-10

    def __post_init__(self):
        if not (self.beta > 0 and self.Gamma > 0):
            raise ValueError("beta and Gamma must be positive")
        if not 0 < self.matsubara_tol <= 1e-6:
            raise ValueError("matsubara_tol must lie in (0, 1e-6]")


@dataclass(frozen=True)
class RateCoefficients:
    alpha_plus: np.ndarray
    alpha_minus: np.ndarray
    beta_plus: np.ndarray
    beta_minus: np.ndarray
    kappa_plus: np.ndarray
    kappa_minus: np.ndarray


def default_cutoff(A, Ap=None):
    """Debye cutoff well above every frequency of the problem."""
    scales = [A.J2 + A.J4, A.g]
    if Ap is not None:
        scales += [Ap.J2 + Ap.J4, Ap.g]
    return 1000.0 * max(scales)


def kernel_params(A, Ap=None, matsubara_tol=1e-10):
    Gamma = A.Gamma if A.Gamma is not None else default_cutoff(A, Ap)
    return KernelParams(A.beta, Gamma, matsubara_tol)


def noise_kernel(omega, kp):
    """Bath spectrum ``K(w) = w exp(-|w|/Gamma) / (4 (exp(beta w) - 1))``.

    Positive for every ``w`` and obeys ``K(-w) = exp(beta w) K(w)``.
    """
    w = np.asarray(omega, dtype=float)
    x = kp.beta * w
    cut = np.exp(-np.abs(w) / kp.Gamma)
    small = np.abs(x) < _SMALL_X
    # expm1 keeps the ratio accurate for moderate x; the series covers x -> 0
    with np.errstate(over="ignore"):
        denom = np.where(small, 1.0, np.expm1(np.where(small, 1.0, x)))
        val = np.where(small, 1.0 / kp.beta * (1.0 - 0.5 * x), w / denom)
    out = 0.25 * val * cut
    return out if out.ndim else float(out)


def matsubara_terms(kp, omega_max=0.0):
    """Number of Matsubara terms kept by :func:`noise_kernel_prime`.

    Each term is at most ``exp(-W_n/Gamma) / W_n`` with ``W_n = 2 pi n /
    beta``, so the tail after ``n`` terms is bounded by a geometric series.
    Summation stops once that bound drops below ``matsubara_tol`` times the
    first term evaluated at ``omega_max``.
    """
    w1 = 2.0 * math.pi / kp.beta
    q = math.exp(-w1 / kp.Gamma)
    geom = 1.0 / (1.0 - q)
    first = q * w1 / (omega_max**2 + w1**2)
    n = 1
    while True:
        wn1 = (n + 1) * w1
        e = math.exp(-wn1 / kp.Gamma)
        tail = e / wn1 * geom
        if e < kp.matsubara_tol and tail < kp.matsubara_tol * first:
            return n
        # coarse steps once deep in the exponential regime
        n = n + 1 if n < 64 else int(n * 1.05) + 1


def noise_kernel_prime(omega, kp):
    """Matsubara part of the dispersive kernel.

    ``-(1/(2 beta)) sum_{n>=1} exp(-W_n/Gamma) W_n / (w^2 + W_n^2)``,
    ``W_n = 2 pi n / beta``.  The frequency-independent offset is dropped:
    only differences of this kernel enter the dynamics.
    """
    w = np.asarray(omega, dtype=float)
    flat = np.abs(w.ravel())
    wmax = float(flat.max()) if flat.size else 0.0
    nmax = matsubara_terms(kp, wmax)
    w1 = 2.0 * math.pi / kp.beta
    total = np.zeros_like(flat)
    w2 = flat * flat
    chunk = 4096
    for start in range(1, nmax + 1, chunk):
        n = np.arange(start, min(start + chunk, nmax + 1), dtype=float)
        Wn = n * w1
        weight = np.exp(-Wn / kp.Gamma) * Wn
        # sum the small tail terms first within each chunk
        total += (weight[None, ::-1] / (w2[:, None] + (Wn * Wn)[None, ::-1])).sum(axis=1)
    out = (-0.5 / kp.beta * total).reshape(w.shape)
    return out if out.ndim else float(out)


def x_coth(omega, beta):
    """``omega * coth(beta * omega)``, finite at ``omega = 0`` (limit ``1/beta``)."""
    w = np.asarray(omega, dtype=float)
    x = beta * w
    small = np.abs(x) < _SMALL_X
    xs = np.where(small, 1.0, x)
    with np.errstate(over="ignore"):
        val = np.where(small, (1.0 + x * x / 3.0) / beta, w / np.tanh(xs))
    return val if val.ndim else float(val)


def rate_coefficients(m, omega_plus, omega_minus, kp, with_kappa=True):
    """Flip-rate combinations for a magnet at magnetization ``m``.

    ``alpha`` and ``beta`` are sums and differences of the bath spectrum at the
    two branch frequencies; ``kappa`` are differences of the dispersive kernel.
    The ``(1 + m)`` factors count up-spins (rate of ``m -> m - 2/N``) and the
    ``(1 - m)`` factors count down-spins.
    """
    m = np.asarray(m, dtype=float)
    wp = 2.0 * np.asarray(omega_plus, dtype=float)
    wm = 2.0 * np.asarray(omega_minus, dtype=float)
    up, dn = 1.0 + m, 1.0 - m
    Kp, Km = noise_kernel(wp, kp), noise_kernel(wm, kp)
    Kpr, Kmr = noise_kernel(-wp, kp), noise_kernel(-wm, kp)
    if with_kappa:
        Lp, Lm = noise_kernel_prime(wp, kp), noise_kernel_prime(wm, kp)
        # the dispersive kernel is even, so the reversed arguments reuse it
        kappa_plus = up * (Lm - Lp)
        kappa_minus = dn * (Lm - Lp)
    else:
        kappa_plus = kappa_minus = np.zeros(np.broadcast(m, wp, wm).shape)
    return RateCoefficients(
        alpha_plus=up * (Kp + Km),
        alpha_minus=dn * (Kpr + Kmr),
        beta_plus=up * (Kp - Km),
        beta_minus=dn * (Kpr - Kmr),
        kappa_plus=kappa_plus,
        kappa_minus=kappa_minus,
    )


def branch_frequencies(m, u_along, A):
    """``(w+, w-) = J2 m + J4 m^3 +- g u`` for one apparatus.

    ``u_along`` is ``u_z`` for the z-magnet and ``u_x`` for the x-magnet.
    """
    m = np.asarray(m, dtype=float)
    base = A.J2 * m + A.J4 * (m * m * m)
    gu = A.g * np.asarray(u_along, dtype=float)
    return base + gu, base - gu


def drift_diffusion(m, omega_i, A):
    """Fokker-Planck drift ``v`` and diffusion ``w`` of one branch.

    ``v = gamma w_i (1 - m coth(beta w_i))`` and
    ``w = gamma w_i (coth(beta w_i) - m)``.
    """
    m = np.asarray(m, dtype=float)
    om = np.asarray(omega_i, dtype=float)
    wc = x_coth(om, A.beta)
    v = A.gamma * (om - m * wc)
    d = A.gamma * (wc - m * om)
    if np.ndim(v) == 0:
        return float(v), float(d)
    return v, d
