"""Free-energy landscapes of the magnets and the critical couplings.

The quantities here are equilibrium constructions.  ``F_eq`` is the
constrained free energy of an isolated magnet at magnetization ``m``; the
branch free energies add the coupling to the tested spin with spin factors
``s = +1/2`` (up) and ``s = -1/2`` (down).

Two couplings matter:

``h_c``
    smallest ``g`` for which a single magnet in the up branch has no barrier
    between the paramagnetic state and ``+m_F``.
``h_d``
    smallest common coupling for which both magnets of the joint setup lose
    their barriers, so that both register.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict
import csv
import io
import json
import math

import numpy as np
from scipy.optimize import brentq
from scipy.special import xlogy

from .core import make_grid

__all__ = [
    "UnsupportedRegime",
    "Landscape1D",
    "Landscape2D",
    "StationaryPoint",
    "SingleThreshold",
    "JointThreshold",
    "RegimeReport",
    "free_energy_eq",
    "free_energy_single",
    "free_energy_joint",
    "free_energy_slope_single",
    "ferro_magnetization",
    "landscape_1d",
    "landscape_2d",
    "critical_coupling_single",
    "critical_coupling_closed_form",
    "critical_coupling_joint",
    "classify_regime",
    "locate_minima",
    "landscape_csv",
]

SCAN_STEP = 1e-3
_SPIN = {"up": 0.5, "down": -0.5}


class UnsupportedRegime(ValueError):
    """Raised when a closed form or a threshold does not exist for the parameters."""


def _spin_factor(branch):
    try:
        return _SPIN[branch]
    except KeyError:
        raise ValueError(f"branch must be 'up' or 'down', got {branch!r}") from None


def _check_domain(m):
    m = np.asarray(m, dtype=float)
    if np.any(np.abs(m) > 1.0) or np.any(np.isnan(m)):
        raise ValueError("free energies need |m| <= 1")
    return m


def _entropy_term(m):
    # (1+m)ln(1+m) + (1-m)ln(1-m) - ln 4, continuous up to |m| = 1
    return xlogy(1.0 + m, 1.0 + m) + xlogy(1.0 - m, 1.0 - m) - math.log(4.0)


def free_energy_eq(m, A):
    """Constrained free energy of one magnet at magnetization ``m``.

    ``F_eq = -J2 N m^2/2 - J4 N m^4/4
    + (N/2 beta) [ln((1 - m^2)/4) + m ln((1+m)/(1-m))]``.

    The entropy bracket is evaluated in the equivalent form
    ``(1+m)ln(1+m) + (1-m)ln(1-m) - ln 4``, which has a finite limit at
    ``|m| = 1``.  The constant ``-ln(2 pi N)/2`` is omitted.

    Parameters
    ----------
    m : float or array_like
        Magnetization(s) with ``|m| <= 1``.
    A : ApparatusParams

    Returns
    -------
    float or ndarray
    """
    m = _check_domain(m)
    N = A.N
    m2 = m * m  # explicit products keep F exactly even on the grid
    F = -A.J2 * N * m2 / 2 - A.J4 * N * (m2 * m2) / 4 + N / (2 * A.beta) * _entropy_term(m)
    return F if np.ndim(F) else float(F)


def free_energy_single(m, A, branch):
    """Branch free energy ``-s N g m + F_eq(m)``, ``s = +1/2`` (up) or ``-1/2`` (down)."""
    s = _spin_factor(branch)
    m = _check_domain(m)
    F = -s * A.N * A.g * m + free_energy_eq(m, A)
    return F if np.ndim(F) else float(F)


def free_energy_joint(m, mp, A, Ap, branch):
    """Joint branch free energy ``-s w(m, m') + F_eq(m) + F'_eq(m')``.

    ``m`` and ``mp`` broadcast against each other.
    """
    s = _spin_factor(branch)
    m = _check_domain(m)
    mp = _check_domain(mp)
    w = np.hypot(A.N * A.g * m, Ap.N * Ap.g * mp)
    F = -s * w + free_energy_eq(m, A) + free_energy_eq(mp, Ap)
    return F if np.ndim(F) else float(F)


def free_energy_slope_single(m, A, g=None):
    """``(1/N) dF_up/dm = -g/2 - J2 m - J4 m^3 + T atanh(m)``."""
    g = A.g if g is None else g
    m = np.asarray(m, dtype=float)
    return -0.5 * g - A.J2 * m - A.J4 * m**3 + A.T * np.arctanh(m)


def _eq_slope(m, A):
    return -A.J2 * m - A.J4 * m**3 + A.T * math.atanh(m)


def ferro_magnetization(A):
    """Magnetization ``m_F > 0`` of the ferromagnetic minimum of ``F_eq``.

    This is the outermost root of ``T atanh m = J2 m + J4 m^3``.  Returns 0.0
    when the paramagnetic state is the only minimum.
    """
    # the stationary condition T atanh m = J2 m + J4 m^3 has its outermost
    # root at m_F; locate a sign change on a fine mesh and polish it
    mesh = 1.0 - np.logspace(-15, 0, 4000)[::-1]
    mesh = mesh[mesh > 0]
    f = -A.J2 * mesh - A.J4 * mesh**3 + A.T * np.arctanh(mesh)
    neg = np.nonzero(f < 0)[0]
    if neg.size == 0:
        return 0.0
    i = neg[-1]
    if i + 1 >= mesh.size:
        return float(mesh[i])
    return float(brentq(_eq_slope, mesh[i], mesh[i + 1], args=(A,), xtol=1e-15, rtol=1e-15))


@dataclass(frozen=True, eq=False)
class Landscape1D:
    grid: object
    F: np.ndarray
    branch: str
    g_eff: float


@dataclass(frozen=True, eq=False)
class Landscape2D:
    grid: object
    grid_p: object
    F: np.ndarray
    branch: str


def landscape_1d(A, branch="eq"):
    grid = make_grid(A.N)
    if branch == "eq":
        F, g = free_energy_eq(grid.values, A), 0.0
    else:
        F, g = free_energy_single(grid.values, A, branch), A.g
    return Landscape1D(grid, np.asarray(F), branch, g)


def landscape_2d(A, Ap, branch="up"):
    grid, grid_p = make_grid(A.N), make_grid(Ap.N)
    F = free_energy_joint(grid.values[:, None], grid_p.values[None, :], A, Ap, branch)
    return Landscape2D(grid, grid_p, np.asarray(F), branch)


# ---------------------------------------------------------------- thresholds


@dataclass(frozen=True)
class SingleThreshold:
    """Critical coupling of one apparatus.

    Attributes
    ----------
    closed_form : float or None
        ``(T/2) ln((1+m_c)/(1-m_c))`` with ``2 m_c^2 = 1 - sqrt(1 - 4T/3J4)``;
        only defined for ``J2 = 0``.
    m_c : float or None
        Inflection magnetization entering the closed form.
    stationary : float
        ``2 max_{0<m<m_F} (T atanh m - J2 m - J4 m^3)``, the continuum coupling
        at which the up-branch slope stops changing sign.
    scan : float
        Smallest ``g`` on a ``step`` lattice for which the discrete forward
        differences of ``F_up`` on ``(0, m_F)`` are all ``<= 1e-9 N``.
    step : float
    m_F : float
    """

    closed_form: float | None
    m_c: float | None
    stationary: float
    scan: float
    step: float
    m_F: float


@dataclass(frozen=True)
class JointThreshold:
    """Critical common coupling of the two-apparatus setup.

    ``scan_m1`` evaluates the barrier condition on the ``m' = 1`` slice,
    ``scan_mF`` on the ``m' = m'_F`` slice (and symmetrically for ``m``).
    """

    closed_form: float
    scan_m1: float
    scan_mF: float
    step: float


def _barrier_window(grid, mF):
    """Forward-difference pairs ``(i, i+1)`` lying inside ``(0, m_F)``."""
    v = grid.values
    i = np.nonzero((v[:-1] > 0) & (v[1:] < mF))[0]
    return i


def _lattice_scan(excess, g_max, step):
    """Smallest lattice coupling ``k * step`` with ``excess(g) <= 0``.

    ``excess`` is vectorized over an array of couplings.
    """
    n = int(math.ceil(g_max / step)) + 1
    gs = np.arange(n + 1) * step
    ok = np.nonzero(excess(gs) <= 0)[0]
    if ok.size == 0:
        raise UnsupportedRegime(f"no barrier-free coupling below {gs[-1]:.4g}")
    return float(gs[ok[0]])


def critical_coupling_closed_form(A):
    """``(h_c, m_c)`` with ``h_c = (T/2) ln((1+m_c)/(1-m_c))``, ``2 m_c^2 = 1 - sqrt(1 - 4T/3J4)``.

    Defined for ``J2 = 0`` and ``T < 3 J4 / 4``.  The ferromagnetic state
    itself disappears at a lower temperature (about ``0.496 J4``), so above
    that the value is a formal continuation.
    """
    if A.J2 != 0:
        raise UnsupportedRegime("the closed form needs J2 = 0")
    T = A.T
    if A.J4 <= 0 or T >= 0.75 * A.J4:
        raise UnsupportedRegime("the closed form needs T < 3 J4 / 4")
    m_c = math.sqrt(0.5 * (1.0 - math.sqrt(1.0 - 4.0 * T / (3.0 * A.J4))))
    return 0.5 * T * math.log((1 + m_c) / (1 - m_c)), m_c


def critical_coupling_single(A, step=SCAN_STEP):
    """Coupling at which the single-apparatus barrier disappears.

    Parameters
    ----------
    A : ApparatusParams
        ``g`` is ignored.
    step : float
        Lattice spacing of the coupling scan.

    Returns
    -------
    SingleThreshold

    Raises
    ------
    UnsupportedRegime
        If ``T >= 3 J4 / 4`` or the magnet has no ferromagnetic minimum.
    """
    T = A.T
    if A.J4 <= 0 or T >= 0.75 * A.J4:
        raise UnsupportedRegime("critical coupling needs T < 3 J4 / 4")
    mF = ferro_magnetization(A)
    if mF <= 0:
        raise UnsupportedRegime("no ferromagnetic state at these parameters")

    closed = m_c = None
    if A.J2 == 0:
        closed, m_c = critical_coupling_closed_form(A)

    def slope(m):
        return T * math.atanh(m) - A.J2 * m - A.J4 * m**3

    mm = np.linspace(0, mF, 20001)[1:-1]
    vals = T * np.arctanh(mm) - A.J2 * mm - A.J4 * mm**3
    k = int(np.argmax(vals))
    lo, hi = mm[max(k - 1, 0)], mm[min(k + 1, mm.size - 1)]
    # golden-section polish of the continuum maximum
    gr = (math.sqrt(5) - 1) / 2
    for _ in range(80):
        a, b = hi - gr * (hi - lo), lo + gr * (hi - lo)
        if slope(a) > slope(b):
            hi = b
        else:
            lo = a
    stationary = max(0.0, 2.0 * float(slope(0.5 * (lo + hi))))

    grid = make_grid(A.N)
    idx = _barrier_window(grid, mF)
    dFeq = np.diff(free_energy_eq(grid.values, A))[idx]
    eps = 1e-9 * A.N
    # F_up differences are dFeq - g (N g/2 times the step 2/N)
    scan = _lattice_scan(lambda gs: (dFeq[None, :] - gs[:, None]).max(axis=1) - eps,
                         max(float(dFeq.max()), 0.0) + step, step)
    return SingleThreshold(closed, m_c, stationary, scan, step, mF)


def _joint_excess(A, Ap, slice_p, slice_m, gratio):
    """Vectorized barrier excess for the joint up-branch landscape.

    The couplings are ``(g, g') = c * gratio`` for a scanned scale ``c``.
    """
    grid, grid_p = make_grid(A.N), make_grid(Ap.N)
    mF, mFp = ferro_magnetization(A), ferro_magnetization(Ap)
    i = _barrier_window(grid, mF)
    j = _barrier_window(grid_p, mFp)
    v, vp = grid.values, grid_p.values
    dFeq = np.diff(free_energy_eq(v, A))[i]
    dFeqp = np.diff(free_energy_eq(vp, Ap))[j]
    # w at unit scale; the scanned coupling multiplies it
    rm = np.hypot(A.N * gratio[0] * v, Ap.N * gratio[1] * slice_p)
    rp = np.hypot(A.N * gratio[0] * slice_m, Ap.N * gratio[1] * vp)
    dw = np.diff(rm)[i]
    dwp = np.diff(rp)[j]
    eps = 1e-9 * max(A.N, Ap.N)

    def excess(cs):
        a = (dFeq[None, :] - 0.5 * cs[:, None] * dw[None, :]).max(axis=1, initial=-np.inf)
        b = (dFeqp[None, :] - 0.5 * cs[:, None] * dwp[None, :]).max(axis=1, initial=-np.inf)
        return np.maximum(a, b) - eps

    return excess


def critical_coupling_joint(A, Ap, step=SCAN_STEP):
    """Coupling at which both magnets of the joint setup lose their barriers.

    The closed form is ``h_d = 2 max(T - J2, T' - J2')`` (clamped at zero).
    The scans look for the smallest common coupling ``g = g'`` (or, when the
    two apparatuses carry different ``g``, the smallest scale applied to the
    larger one with the ratio kept) such that the up-branch forward
    differences along ``m`` on the ``m' = 1`` slice, and along ``m'`` on the
    ``m = 1`` slice, are non-positive inside ``(0, m_F)``.  The same is
    repeated on the ``m_F`` slices.

    Returns
    -------
    JointThreshold
    """
    closed = 2.0 * max(A.T - A.J2, Ap.T - Ap.J2, 0.0)
    if A.g > 0 or Ap.g > 0:
        top = max(A.g, Ap.g)
        ratio = (A.g / top, Ap.g / top)
    else:
        ratio = (1.0, 1.0)
    gmax = 4.0 * max(A.T, Ap.T) + 4.0 * max(A.J4, Ap.J4) + 1.0
    scans = []
    for sp, sm in ((1.0, 1.0), (ferro_magnetization(Ap), ferro_magnetization(A))):
        scans.append(_lattice_scan(_joint_excess(A, Ap, sp, sm, ratio), gmax, step))
    return JointThreshold(closed, scans[0], scans[1], step)


# ------------------------------------------------------------ minima, regimes


@dataclass(frozen=True)
class StationaryPoint:
    m: float
    mp: float
    F: float
    size: int = 1

    @property
    def kind(self):
        a = "ferro" if abs(self.m) > 0.5 else "para"
        b = "ferro" if abs(self.mp) > 0.5 else "para"
        return f"{a}/{b}"

    def to_dict(self):
        return {"m": self.m, "mp": self.mp, "F": self.F, "size": self.size, "kind": self.kind}


def locate_minima(L, rtol=1e-12):
    """Grid-local minima of a 2D landscape (4-neighborhood).

    Edge rows and columns are excluded.  Tied neighbors (within ``rtol`` of
    the largest ``|F|``) form plateaus; a plateau counts as one minimum,
    reported at its centroid, when no neighbor of the plateau is lower.

    Returns
    -------
    list of StationaryPoint
        Sorted by ``F``, then by position.
    """
    F = np.array(L.F, dtype=float)
    n0, n1 = F.shape
    Fp = np.full((n0 + 2, n1 + 2), np.inf)
    Fp[1:-1, 1:-1] = F
    Fp[1:-1, 1] = Fp[1:-1, -2] = np.inf
    Fp[1, 1:-1] = Fp[-2, 1:-1] = np.inf
    tol = rtol * max(1.0, float(np.nanmax(np.abs(F[np.isfinite(F)]))))
    core = Fp[1:-1, 1:-1]
    nbrs = [Fp[:-2, 1:-1], Fp[2:, 1:-1], Fp[1:-1, :-2], Fp[1:-1, 2:]]
    cand = np.isfinite(core)
    for nb in nbrs:
        cand &= core <= nb + tol

    seen = np.zeros_like(cand)
    out = []
    v, vp = L.grid.values, L.grid_p.values
    for i0, j0 in zip(*np.nonzero(cand)):
        if seen[i0, j0]:
            continue
        # flood the tied plateau among candidates
        stack, members, ok = [(i0, j0)], [], True
        seen[i0, j0] = True
        while stack:
            i, j = stack.pop()
            members.append((i, j))
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                a, b = i + di, j + dj
                if not (0 <= a < n0 and 0 <= b < n1) or not np.isfinite(core[a, b]):
                    continue
                if abs(core[a, b] - core[i, j]) <= tol:
                    if not cand[a, b]:
                        ok = False
                    elif not seen[a, b]:
                        seen[a, b] = True
                        stack.append((a, b))
        if not ok:
            continue
        ii = np.array([p[0] for p in members])
        jj = np.array([p[1] for p in members])
        out.append(StationaryPoint(float(v[ii].mean()), float(vp[jj].mean()),
                                   float(core[ii, jj].min()), len(members)))
    out.sort(key=lambda p: (p.F, p.m, p.mp))
    return out


@dataclass
class RegimeReport:
    """Outcome of :func:`classify_regime`.

    ``h_c`` is the closed form when it exists and the continuum value
    otherwise; ``h_c_scan`` is the barrier scan used for classification.
    """

    h_c: float
    h_d: float
    regime: str
    h_c_scan: float
    h_d_scan_m1: float
    h_d_scan_mF: float
    boundary: bool = False
    flags: list = field(default_factory=list)
    minima: list = field(default_factory=list)

    def to_dict(self):
        d = asdict(self)
        d["minima"] = [p.to_dict() if isinstance(p, StationaryPoint) else p for p in self.minima]
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def classify_regime(g, gp, A, Ap, tol=1e-6, with_minima=True):
    """Number of apparatuses expected to register at couplings ``(g, g')``.

    ``none`` below ``h_c``, ``one`` between ``h_c`` and ``h_d``, ``both``
    above ``h_d``.  A coupling equal to a threshold (within ``tol``) is put in
    the upper regime and ``boundary`` is set.  Unequal couplings are
    classified conservatively, ``both`` requiring ``min(g, g') > h_d`` and
    ``none`` requiring ``max(g, g') < h_c``.
    """
    A = A.replace(g=g)
    Ap = Ap.replace(g=gp)
    hs = critical_coupling_single(A)
    hsp = critical_coupling_single(Ap)
    hj = critical_coupling_joint(A, Ap)
    h_c = hs.closed_form if hs.closed_form is not None else hs.stationary
    h_c_scan = max(hs.scan, hsp.scan)
    h_d = hj.closed_form
    flags = []
    if g != gp:
        flags.append("unequal_couplings")
    if A.beta != Ap.beta:
        flags.append("unequal_temperatures")
    lo, hi = min(g, gp), max(g, gp)
    boundary = abs(lo - h_d) <= tol or abs(hi - h_c_scan) <= tol
    if lo >= h_d - tol:
        regime = "both"
    elif hi >= h_c_scan - tol:
        regime = "one"
    else:
        regime = "none"
    minima = locate_minima(landscape_2d(A, Ap, "up")) if with_minima else []
    return RegimeReport(h_c, h_d, regime, h_c_scan, hj.scan_m1, hj.scan_mF,
                        boundary, flags, minima)


def landscape_csv(A, Ap):
    """Joint landscape as CSV text with header ``m,mp,F_up,F_down`` (row-major)."""
    up = landscape_2d(A, Ap, "up")
    dn = landscape_2d(A, Ap, "down")
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["m", "mp", "F_up", "F_down"])
    for i, m in enumerate(up.grid.values):
        for j, mp in enumerate(up.grid_p.values):
            wr.writerow([repr(float(m)), repr(float(mp)), repr(float(up.F[i, j])),
                         repr(float(dn.F[i, j]))])
    return buf.getvalue()
