"""Dephasing and registration dynamics of the two-magnet measurement.

Time conventions
----------------
Functions that take a ``JointField`` or a :class:`SolverConfig` count time in
units of ``tau = 1 / (gamma J4)`` of the first apparatus (``J2`` replaces
``J4`` when the quartic coupling vanishes).  The dephasing functions take
absolute model time because their natural scale ``tau_d = 1/(sqrt(2N) g)`` does
not involve the bath.

The registration solver integrates the Markovian equations for the pair
``(P, C_u)`` on the joint magnetization grid.  ``P`` is the joint
distribution and ``C_u`` its correlation with the spin projected on the local
field direction ``u(m, m')``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict, replace
from functools import lru_cache
import csv
import io
import logging
import math

import numpy as np

from .bath import branch_frequencies, kernel_params, rate_coefficients
from .core import (BlochState, JointField, frame_arrays, initial_magnet_dist,
                   make_grid)
from .kernels import frame_overlaps, stencil_rhs
from .landscape import ferro_magnetization

log = logging.getLogger(__name__)

__all__ = [
    "SolverConfig",
    "SolverConfigError",
    "NumericalAbort",
    "Trajectory",
    "OutcomeWeights",
    "ResponseFit",
    "tau",
    "registration_threshold",
    "dephasing_time",
    "dephasing_single",
    "dephasing_joint_numeric",
    "dephasing_joint_asymptote",
    "registration_operator",
    "registration_rhs",
    "full_rhs",
    "evolve",
    "region_masses",
    "quadrant_weights",
    "response_fit",
    "anisotropy_diagnostics",
    "snapshots_csv",
    "run_summary",
]


class SolverConfigError(ValueError):
    """Invalid solver configuration, detected before any stepping."""


class NumericalAbort(RuntimeError):
    """Raised when a run loses normalization; carries the partial trajectory."""

    def __init__(self, message, trajectory):
        super().__init__(message)
        self.trajectory = trajectory


def tau(A):
    """Registration time unit ``1 / (gamma J)`` of apparatus ``A``."""
    J = A.J4 if A.J4 > 0 else A.J2
    if not (A.gamma > 0 and J > 0):
        raise SolverConfigError("tau needs gamma > 0 and a nonzero Ising coupling")
    return 1.0 / (A.gamma * J)


def registration_threshold(A, fraction=0.9):
    """``|m|`` above which magnet ``A`` counts as registered (``0.9 m_F``)."""
    mF = ferro_magnetization(A)
    if mF <= 0:
        raise ValueError("the magnet has no ferromagnetic state")
    return fraction * mF


# ------------------------------------------------------------------ dephasing


def dephasing_time(A):
    """``tau_d = 1 / (sqrt(2N) g)``."""
    if A.g == 0:
        return math.inf
    return 1.0 / (math.sqrt(2.0 * A.N) * A.g)


def dephasing_single(t, s, A):
    """Spin after time ``t`` coupled to one paramagnetic magnet.

    The transverse components decay as ``exp(-t^2/tau_d^2)``; ``rz`` is
    returned unchanged.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    td = dephasing_time(A)
    f = math.exp(-(t / td) ** 2) if math.isfinite(td) else 1.0
    return BlochState(s.rx * f, s.ry * f, s.rz)


def dephasing_joint_numeric(t, s, A, Ap):
    """Spin after time ``t`` coupled to both magnets, by an explicit grid sum.

    At each ``(m, m')`` the spin precesses about ``u(m, m')`` at frequency
    ``w(m, m')``: ``C_u`` is constant while ``C_v`` (along
    ``v = u_z x - u_x z``) and ``C_y`` rotate as
    ``C_v' = w C_y``, ``C_y' = -w C_v``.  The magnets are frozen in their
    binomial initial distributions.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    grid, grid_p = make_grid(A.N), make_grid(Ap.N)
    P = np.outer(initial_magnet_dist(grid), initial_magnet_dist(grid_p))
    w, ux, uz = frame_arrays(grid, grid_p, A, Ap)
    Cu = (ux * s.rx + uz * s.rz) * P
    Cv0 = (uz * s.rx - ux * s.rz) * P
    Cy0 = s.ry * P
    c, sn = np.cos(w * t), np.sin(w * t)
    Cv = Cv0 * c + Cy0 * sn
    Cy = Cy0 * c - Cv0 * sn
    rx = float((ux * Cu + uz * Cv).sum())
    rz = float((uz * Cu - ux * Cv).sum())
    ry = float(Cy.sum())
    return BlochState(rx, ry, rz)


def dephasing_joint_asymptote(s, A, Ap):
    """Long-time limit of the joint dephasing for large magnets.

    ``rx -> rx sqrt(N') g' / (sqrt(N) g + sqrt(N') g')``,
    ``rz -> rz sqrt(N) g / (sqrt(N) g + sqrt(N') g')``, ``ry -> 0``.
    """
    a = math.sqrt(A.N) * A.g
    b = math.sqrt(Ap.N) * Ap.g
    if a + b == 0:
        raise ValueError("at least one coupling must be nonzero")
    return BlochState(s.rx * b / (a + b), 0.0, s.rz * a / (a + b))


# ---------------------------------------------------------- registration RHS


@dataclass(frozen=True, eq=False)
class _Operator:
    grid: object
    grid_p: object
    w: np.ndarray
    ux: np.ndarray
    uz: np.ndarray
    coef0: tuple
    coef1: tuple
    dot0: np.ndarray
    dot1: np.ndarray
    norm: np.ndarray
    c0: float
    c1: float
    theta: float


def _axis_coefficients(A, Ap, grid, grid_p, ux, uz, axis, with_kappa):
    if axis == 0:
        m = np.broadcast_to(grid.values[:, None], ux.shape)
        wp, wm = branch_frequencies(m, uz, A)
        kp = kernel_params(A, Ap)
    else:
        m = np.broadcast_to(grid_p.values[None, :], ux.shape)
        wp, wm = branch_frequencies(m, ux, Ap)
        kp = kernel_params(Ap, A)
    return rate_coefficients(m, wp, wm, kp, with_kappa=with_kappa)


@lru_cache(maxsize=16)
def registration_operator(A, Ap):
    """Time-independent coefficients of the registration equations.

    Cached per apparatus pair.  ``theta`` is the largest total outflow rate of
    either branch, used for the stability check.
    """
    grid, grid_p = make_grid(A.N), make_grid(Ap.N)
    w, ux, uz = frame_arrays(grid, grid_p, A, Ap)
    r0 = _axis_coefficients(A, Ap, grid, grid_p, ux, uz, 0, False)
    r1 = _axis_coefficients(A, Ap, grid, grid_p, ux, uz, 1, False)
    coef0 = tuple(np.ascontiguousarray(a) for a in
                  (r0.alpha_plus, r0.beta_plus, r0.alpha_minus, r0.beta_minus))
    coef1 = tuple(np.ascontiguousarray(a) for a in
                  (r1.alpha_plus, r1.beta_plus, r1.alpha_minus, r1.beta_minus))
    dot0, dot1, norm = frame_overlaps(ux, uz)
    c0 = 0.5 * A.gamma * A.N
    c1 = 0.5 * Ap.gamma * Ap.N
    out = (c0 * (coef0[0] + np.abs(coef0[1]) + coef0[2] + np.abs(coef0[3]))
           + c1 * (coef1[0] + np.abs(coef1[1]) + coef1[2] + np.abs(coef1[3])))
    return _Operator(grid, grid_p, w, ux, uz, coef0, coef1,
                     np.ascontiguousarray(dot0), np.ascontiguousarray(dot1),
                     norm, c0, c1, float(out.max()))


def _apply(op, P, C, dP, dC):
    stencil_rhs(P, C, *op.coef0, *op.coef1, op.dot0, op.dot1, op.norm,
                op.c0, op.c1, dP, dC)


def registration_rhs(f, A, Ap):
    """Time derivative of ``(P, C_u)`` in model time units.

    ``dP = (gamma N/2) [D+{a+ P + b+ C_u} + D-{a- P + b- C_u}] + (primed)``
    ``dC_u = (gamma N/2) [u_x D+{u_x (a+ C_u + b+ P)} + u_z D+{u_z (...)}
    + (D- terms)] + (primed)``

    with ``D+- f(m) = f(m +- 2/N) - f(m)`` and the fields taken as zero
    outside the grid.

    Returns
    -------
    dP, dC : ndarray
    """
    op = registration_operator(A, Ap)
    P = np.ascontiguousarray(f.P)
    C = np.ascontiguousarray(f.Cu)
    dP = np.empty_like(P)
    dC = np.empty_like(P)
    _apply(op, P, C, dP, dC)
    return dP, dC


def _dplus(f, axis):
    s = np.zeros_like(f)
    if axis == 0:
        s[:-1] = f[1:]
    else:
        s[:, :-1] = f[:, 1:]
    return s - f


def _dminus(f, axis):
    s = np.zeros_like(f)
    if axis == 0:
        s[1:] = f[:-1]
    else:
        s[:, 1:] = f[:, :-1]
    return s - f


@lru_cache(maxsize=8)
def _full_coefficients(A, Ap):
    grid, grid_p = make_grid(A.N), make_grid(Ap.N)
    w, ux, uz = frame_arrays(grid, grid_p, A, Ap)
    r0 = _axis_coefficients(A, Ap, grid, grid_p, ux, uz, 0, True)
    r1 = _axis_coefficients(A, Ap, grid, grid_p, ux, uz, 1, True)
    return w, ux, uz, r0, r1


def full_rhs(P, Cx, Cy, Cz, A, Ap):
    """Right-hand side of the four coupled equations for ``(P, C_x, C_y, C_z)``.

    Includes the precession about ``u`` at frequency ``w`` and the
    dispersive ``kappa`` terms.  Meant for short-time checks of the reduced
    solver; the fast precession makes long runs expensive.

    Returns
    -------
    dP, dCx, dCy, dCz : ndarray
    """
    w, ux, uz, r0, r1 = _full_coefficients(A, Ap)
    Cu = ux * Cx + uz * Cz
    dP = np.zeros_like(P)
    dCx = w * uz * Cy
    dCy = -w * (uz * Cx - ux * Cz)
    dCz = -w * ux * Cy
    for r, c, axis in ((r0, 0.5 * A.gamma * A.N, 0), (r1, 0.5 * Ap.gamma * Ap.N, 1)):
        for D, a, b, k in ((_dplus, r.alpha_plus, r.beta_plus, r.kappa_plus),
                           (_dminus, r.alpha_minus, r.beta_minus, r.kappa_minus)):
            dP += c * D(a * P + b * Cu, axis)
            dCx += c * D(b * ux * P + a * Cx + k * Cy * uz, axis)
            dCy += c * D(a * Cy - k * (Cz * ux + uz * Cx), axis)
            dCz += c * D(b * uz * P + a * Cz + k * Cy * ux, axis)
    return dP, dCx, dCy, dCz


# -------------------------------------------------------------------- solver


@dataclass(frozen=True)
class SolverConfig:
    """Time-stepping policy.

    Parameters
    ----------
    t_end : float
        Final time in units of ``tau``.
    snapshot_times : tuple of float, optional
        Extra times (in ``tau``) at which the field is recorded.  ``0`` and
        ``t_end`` are always included.
    integrator : {"rk4", "euler"}
    dt : float or None
        Step in units of ``tau``.  ``None`` picks ``dt_factor / theta`` where
        ``theta`` is the largest total outflow rate on the grid.
    dt_factor : float
        Safety factor for the automatic step.
    allow_unequal_temperatures : bool
        Permit different bath temperatures; results are flagged nonstandard.
    frame_transport : bool
        When False the overlaps ``u(i) . u(i+-1)`` are replaced by one.  The
        aligned and anti-aligned branches ``(P +- C_u)/2`` then evolve
        independently, as in the leading-order Fokker-Planck reduction, and
        the transfer between them is switched off.
    clip_tol, drift_tol : float
        ``P`` below ``-clip_tol`` is clipped (and logged); a normalization
        drift above ``drift_tol`` aborts the run.
    """

    t_end: float
    snapshot_times: tuple = ()
    integrator: str = "rk4"
    dt: float | None = None
    dt_factor: float = 0.25
    allow_unequal_temperatures: bool = False
    frame_transport: bool = True
    clip_tol: float = 1e-12
    drift_tol: float = 1e-6

    def __post_init__(self):
        if not self.t_end > 0:
            raise SolverConfigError("t_end must be positive")
        snaps = tuple(float(t) for t in self.snapshot_times) + (0.0, float(self.t_end))
        if any(t < 0 or t > self.t_end for t in snaps):
            raise SolverConfigError("snapshot_times must lie in [0, t_end]")
        object.__setattr__(self, "snapshot_times", tuple(sorted(set(snaps))))
        if self.integrator not in ("rk4", "euler"):
            raise SolverConfigError(f"unknown integrator {self.integrator!r}")
        if self.dt is not None and not self.dt > 0:
            raise SolverConfigError("dt must be positive")
        if not self.dt_factor > 0:
            raise SolverConfigError("dt_factor must be positive")

    def to_dict(self):
        d = asdict(self)
        d["snapshot_times"] = list(self.snapshot_times)
        return d


@dataclass
class Trajectory:
    """Recorded snapshots of one run.

    ``times`` are in ``tau`` units; each snapshot's ``t`` is in model units.
    """

    snapshots: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    times: list = field(default_factory=list)
    dt: float = 0.0
    steps: int = 0
    clip_events: int = 0
    flags: list = field(default_factory=list)
    tau: float = 1.0

    @property
    def final(self):
        return self.snapshots[-1]


def _diagnose(f, A, Ap):
    thr = (registration_threshold(A), registration_threshold(Ap))
    d = region_masses(f, thr)
    d["mass"] = f.mass
    d["min_P"] = float(f.P.min())
    d["cu_excess"] = float((np.abs(f.Cu) - f.P).max())
    return d


def evolve(f, A, Ap, cfg):
    """Integrate the registration equations from ``f``.

    Raises
    ------
    SolverConfigError
        Before any stepping, if the step violates ``dt * theta < 0.5`` or the
        bath temperatures differ without the override.
    NumericalAbort
        If the mass drifts from 1 by more than ``cfg.drift_tol``.  The
        exception carries the snapshots recorded so far.
    """
    flags = []
    if A.beta != Ap.beta:
        if not cfg.allow_unequal_temperatures:
            raise SolverConfigError("bath temperatures differ; set allow_unequal_temperatures")
        flags.append("nonstandard:unequal_temperatures")
    if f.grid.N != A.N or f.grid_p.N != Ap.N:
        raise SolverConfigError("field grids do not match the apparatus sizes")
    unit = tau(A)
    op = registration_operator(A, Ap)
    if not cfg.frame_transport:
        op = replace(op, dot0=np.ones_like(op.dot0), dot1=np.ones_like(op.dot1),
                     norm=np.ones_like(op.norm))
        flags.append("decoupled_branches")
    theta = op.theta * unit  # per tau
    if theta <= 0:
        raise SolverConfigError("no bath coupling: nothing to integrate")
    dt = cfg.dt if cfg.dt is not None else cfg.dt_factor / theta
    if dt * theta >= 0.5:
        raise SolverConfigError(
            f"unstable step: dt*theta = {dt * theta:.3g} >= 0.5 (theta = {theta:.4g} per tau)")

    P = np.array(f.P, dtype=float)
    C = np.array(f.Cu, dtype=float)
    k = [np.empty_like(P) for _ in range(8)]
    tmpP, tmpC = np.empty_like(P), np.empty_like(P)
    traj = Trajectory(dt=dt, flags=flags, tau=unit)
    t_now = 0.0

    def record(t):
        snap = JointField(f.grid, f.grid_p, P, C, t * unit, {"t_tau": t})
        traj.snapshots.append(snap)
        traj.times.append(t)
        traj.diagnostics.append(_diagnose(snap, A, Ap))

    for t_snap in cfg.snapshot_times:
        seg = t_snap - t_now
        n = int(math.ceil(seg / dt - 1e-9)) if seg > 0 else 0
        h = (seg / n) * unit if n else 0.0
        for _ in range(n):
            if cfg.integrator == "euler":
                _apply(op, P, C, k[0], k[1])
                P += h * k[0]
                C += h * k[1]
            else:
                k1P, k1C, k2P, k2C, k3P, k3C, k4P, k4C = k
                _apply(op, P, C, k1P, k1C)
                np.multiply(k1P, 0.5 * h, out=tmpP); tmpP += P
                np.multiply(k1C, 0.5 * h, out=tmpC); tmpC += C
                _apply(op, tmpP, tmpC, k2P, k2C)
                np.multiply(k2P, 0.5 * h, out=tmpP); tmpP += P
                np.multiply(k2C, 0.5 * h, out=tmpC); tmpC += C
                _apply(op, tmpP, tmpC, k3P, k3C)
                np.multiply(k3P, h, out=tmpP); tmpP += P
                np.multiply(k3C, h, out=tmpC); tmpC += C
                _apply(op, tmpP, tmpC, k4P, k4C)
                P += (h / 6.0) * (k1P + 2.0 * k2P + 2.0 * k3P + k4P)
                C += (h / 6.0) * (k1C + 2.0 * k2C + 2.0 * k3C + k4C)
            traj.steps += 1
            if P.min() < -cfg.clip_tol:
                bad = P < 0
                lost = float(P[bad].sum())
                P[bad] = 0.0
                C[bad] = 0.0
                P /= P.sum()
                traj.clip_events += 1
                log.warning("clipped %d negative cells (mass %.3e) at step %d",
                            int(bad.sum()), lost, traj.steps)
            drift = abs(P.sum() - 1.0)
            if drift > cfg.drift_tol:
                record(t_now + (traj.steps and h / unit))
                raise NumericalAbort(f"normalization drift {drift:.3e} at step {traj.steps}", traj)
        t_now = t_snap
        record(t_now)
    return traj


# --------------------------------------------------------------- diagnostics


@dataclass(frozen=True)
class OutcomeWeights:
    """Masses of the four registered corners plus the unregistered rest.

    ``pp`` means ``m > 0`` and ``m' > 0``; the first sign refers to the
    z-apparatus.
    """

    pp: float
    pm: float
    mp: float
    mm: float
    residual: float = 0.0

    def __post_init__(self):
        vals = (self.pp, self.pm, self.mp, self.mm, self.residual)
        if min(vals) < -1e-12:
            raise ValueError("outcome weights must be non-negative")
        if abs(sum(vals) - 1.0) > 1e-9:
            raise ValueError(f"weights plus residual sum to {sum(vals)!r}")

    def as_array(self):
        return np.array([self.pp, self.pm, self.mp, self.mm])

    @property
    def registered(self):
        return self.pp + self.pm + self.mp + self.mm

    def normalized(self):
        """Weights conditioned on registration (explicit renormalization)."""
        r = self.registered
        if r <= 0:
            raise ValueError("nothing registered")
        a = self.as_array() / r
        return OutcomeWeights(*a, residual=0.0)

    def to_dict(self):
        return {"pp": self.pp, "pm": self.pm, "mp": self.mp, "mm": self.mm,
                "residual": self.residual}


def _thresholds(threshold):
    t = np.broadcast_to(np.asarray(threshold, dtype=float), (2,))
    if not np.all((t > 0) & (t < 1)):
        raise ValueError("threshold must lie in (0, 1)")
    return float(t[0]), float(t[1])


def quadrant_weights(f, threshold):
    """Registered corner masses of ``f``.

    Parameters
    ----------
    f : JointField
    threshold : float or pair of float
        ``|m|`` (and ``|m'|``) must exceed it for a cell to count.
    """
    t0, t1 = _thresholds(threshold)
    m, mp = f.grid.values[:, None], f.grid_p.values[None, :]
    P = f.P
    sel = lambda a, b: float(P[np.broadcast_to(a & b, P.shape)].sum())
    pp = sel(m > t0, mp > t1)
    pm = sel(m > t0, mp < -t1)
    mpw = sel(m < -t0, mp > t1)
    mm = sel(m < -t0, mp < -t1)
    res = max(0.0, float(P.sum()) - (pp + pm + mpw + mm))
    total = pp + pm + mpw + mm + res
    return OutcomeWeights(pp / total, pm / total, mpw / total, mm / total, res / total)


def region_masses(f, threshold, inner=0.5):
    """Mass in the corners, on each single-registration axis, and at the center.

    ``z_only`` is ``|m| > t`` with ``|m'| < inner``; ``x_only`` the mirror
    image; ``one`` their union; ``center`` is ``|m|, |m'| < inner``.
    """
    t0, t1 = _thresholds(threshold)
    m = np.abs(f.grid.values)[:, None]
    mp = np.abs(f.grid_p.values)[None, :]
    P = f.P

    def mass(mask):
        return float(P[np.broadcast_to(mask, P.shape)].sum())

    out = {
        "corners": mass((m > t0) & (mp > t1)),
        "z_only": mass((m > t0) & (mp < inner)),
        "x_only": mass((mp > t1) & (m < inner)),
        "center": mass((m < inner) & (mp < inner)),
    }
    out["one"] = out["z_only"] + out["x_only"]
    return out


@dataclass
class ResponseFit:
    lambda_: float
    lambda_prime: float
    residual: float
    linear: bool
    weights: list
    states: list

    def to_dict(self):
        return {"lambda": self.lambda_, "lambda_prime": self.lambda_prime,
                "residual": self.residual, "linear": self.linear,
                "weights": [w.to_dict() for w in self.weights],
                "states": [[s.rx, s.ry, s.rz] for s in self.states]}


def fit_response(states, weights):
    """Least-squares ``(lambda, lambda')`` from outcome weights.

    The weights are conditioned on registration before fitting; ``4 p - 1 =
    eps lambda rz + eps' lambda' rx``.
    """
    rows, rhs = [], []
    for s, w in zip(states, weights):
        p = w.normalized().as_array()
        for k, (e, ep) in enumerate(((1, 1), (1, -1), (-1, 1), (-1, -1))):
            rows.append([e * s.rz, ep * s.rx])
            rhs.append(4.0 * p[k] - 1.0)
    X, y = np.array(rows), np.array(rhs)
    if np.linalg.matrix_rank(X) < 2:
        raise ValueError("initial states do not determine both lambda and lambda'")
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    pred = 0.25 * (1.0 + X @ coef)
    res = float(np.sqrt(np.mean((pred - 0.25 * (1.0 + y)) ** 2)))
    return float(coef[0]), float(coef[1]), res


def response_fit(A, Ap, cfg, states, threshold=None, runner=None):
    """Fit the linear response of the outcome weights to the initial spin.

    Parameters
    ----------
    A, Ap : ApparatusParams
    cfg : SolverConfig
        Weights are read at ``cfg.t_end``.
    states : list of BlochState
        At least three, affinely independent in the ``(rx, rz)`` plane.
    threshold : float or pair, optional
        Registration threshold; defaults to ``0.9 m_F`` per magnet.
    runner : callable, optional
        ``runner(state) -> JointField`` replacing the default solver run
        (used to share cached runs).

    Returns
    -------
    ResponseFit
        ``linear`` is False when the RMS residual exceeds 1e-3.
    """
    states = list(states)
    if len(states) < 3:
        raise ValueError("need at least three initial states")
    design = np.array([[1.0, s.rx, s.rz] for s in states])
    if np.linalg.matrix_rank(design) < 3:
        raise ValueError("initial states are degenerate in the (rx, rz) plane")
    if threshold is None:
        threshold = (registration_threshold(A), registration_threshold(Ap))
    weights = []
    for s in states:
        if runner is not None:
            final = runner(s)
        else:
            from .core import init_joint_field
            final = evolve(init_joint_field(s, A, Ap), A, Ap, cfg).final
        weights.append(quadrant_weights(final, threshold))
    lam, lamp, res = fit_response(states, weights)
    return ResponseFit(lam, lamp, res, res <= 1e-3, weights, states)


def anisotropy_diagnostics(f, A=None, Ap=None, n_rings=10, r_max=1.0, core_radius=None):
    """Shape diagnostics of a joint field.

    Returns a dict with

    ``cos_moment``, ``sin_moment``
        ``sum P cos(theta)`` and ``sum P sin(theta)`` with
        ``(m, m') = r (cos theta, sin theta)``, plus their per-ring values.
    ``radial_slope``
        Fitted slope ``d ln rho / dr`` of the anti-aligned branch
        ``(P - C_u)/2`` inside ``core_radius``, where ``rho`` is the mass per
        grid cell averaged over rings one grid step wide.
    ``reference_slope``
        ``-N g beta`` of apparatus ``A`` when it is given.
    ``center_mass``
        Mass of ``P`` with ``|m|, |m'| < 0.5``.
    """
    M, Mp = f.mesh()
    r = np.hypot(M, Mp)
    th = np.arctan2(Mp, M)
    P = f.P
    edges = np.linspace(0.0, r_max, n_rings + 1)
    ring = np.clip(np.digitize(r, edges) - 1, 0, n_rings - 1)
    cos_r = np.bincount(ring.ravel(), (P * np.cos(th)).ravel(), n_rings)
    sin_r = np.bincount(ring.ravel(), (P * np.sin(th)).ravel(), n_rings)
    out = {
        "cos_moment": float((P * np.cos(th)).sum()),
        "sin_moment": float((P * np.sin(th)).sum()),
        "ring_edges": edges.tolist(),
        "cos_rings": cos_r.tolist(),
        "sin_rings": sin_r.tolist(),
        "center_mass": float(P[(np.abs(M) < 0.5) & (np.abs(Mp) < 0.5)].sum()),
    }
    step = f.grid.step
    rc = core_radius if core_radius is not None else 8 * step
    Pd = 0.5 * (P - f.Cu)
    nb = max(int(round(rc / step)), 2)
    bins = np.minimum((r / step).astype(int), nb)
    dens = np.bincount(bins.ravel(), Pd.ravel(), nb + 1)[:nb]
    cnt = np.bincount(bins.ravel(), None, nb + 1)[:nb]
    rr = np.bincount(bins.ravel(), r.ravel(), nb + 1)[:nb]
    ok = (cnt > 0) & (dens > 0)
    slope = float("nan")
    if ok.sum() >= 2:
        x = rr[ok] / cnt[ok]
        y = np.log(dens[ok] / cnt[ok])
        slope = float(np.polyfit(x, y, 1)[0])
    out["radial_slope"] = slope
    out["reference_slope"] = -A.N * A.g * A.beta if A is not None else None
    return out


# ------------------------------------------------------------------- export


def snapshots_csv(traj):
    """Snapshots as CSV ``t,m,mp,P,Cu`` with ``t`` in units of ``tau``."""
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["t", "m", "mp", "P", "Cu"])
    for t, snap in zip(traj.times, traj.snapshots):
        v, vp = snap.grid.values, snap.grid_p.values
        for i in range(v.size):
            for j in range(vp.size):
                wr.writerow([repr(float(t)), repr(float(v[i])), repr(float(vp[j])),
                             repr(float(snap.P[i, j])), repr(float(snap.Cu[i, j]))])
    return buf.getvalue()


def run_summary(traj, A, Ap, regime=None, lam=None):
    """JSON-ready summary of a registration run."""
    thr = (registration_threshold(A), registration_threshold(Ap))
    w = quadrant_weights(traj.final, thr)
    out = {
        "params": {"A": asdict(A), "Ap": asdict(Ap)},
        "regime": regime,
        "weights": {"pp": w.pp, "pm": w.pm, "mp": w.mp, "mm": w.mm},
        "residual_unregistered_mass": w.residual,
        "residual_center_mass": traj.diagnostics[-1]["center"],
        "t_end_tau": traj.times[-1],
        "t_end": traj.times[-1] * traj.tau,
        "tau": traj.tau,
        "dt_tau": traj.dt,
        "steps": traj.steps,
        "clip_events": traj.clip_events,
        "flags": list(traj.flags),
        "diagnostics": [dict(d, t_tau=t) for d, t in zip(traj.diagnostics, traj.times)],
    }
    if lam is not None:
        out["lambda"] = lam
    return out
