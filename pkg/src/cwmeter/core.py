"""Grids, degeneracies, initial distributions and the joint-field data model.

Conventions
-----------
* hbar = 1.  Energies are in the same units as ``J4`` (usually ``J4 = 1``).
* Spin expectations are stored as Bloch components ``r = <sigma>`` in
  ``[-1, 1]``.  The coupling terms of the free energies use the spin-1/2
  factors ``s = +-1/2``.
* The magnetization grid of a magnet with ``N`` spins is
  ``m_i = (2 i - N) / N``, ``i = 0..N``.  It is built from integers so that
  ``m_{N-i} == -m_i`` holds bit-for-bit.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
import math

import numpy as np
from scipy.special import gammaln

__all__ = [
    "BlochState",
    "ApparatusParams",
    "MagnetGrid",
    "FieldFrame",
    "JointField",
    "make_grid",
    "degeneracy_log",
    "degeneracy_log_stirling",
    "initial_magnet_dist",
    "gaussian_magnet_dist",
    "field_frame",
    "frame_arrays",
    "init_joint_field",
    "reflect_field",
]

_BLOCH_TOL = 1e-12


@dataclass(frozen=True)
class BlochState:
    """Qubit state as the vector of Pauli expectations."""

    rx: float = 0.0
    ry: float = 0.0
    rz: float = 0.0

    def __post_init__(self):
        for name in ("rx", "ry", "rz"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.rx**2 + self.ry**2 + self.rz**2 > 1.0 + _BLOCH_TOL:
            raise ValueError(f"Bloch vector {self.as_array()} lies outside the unit ball")

    def as_array(self):
        return np.array([self.rx, self.ry, self.rz])

    @property
    def norm(self):
        return math.sqrt(self.rx**2 + self.ry**2 + self.rz**2)

    @classmethod
    def from_array(cls, r):
        r = np.asarray(r, dtype=float)
        return cls(r[0], r[1], r[2])

    def density_matrix(self):
        """2x2 complex density matrix ``(I + r.sigma) / 2``."""
        return 0.5 * np.array(
            [[1.0 + self.rz, self.rx - 1j * self.ry],
             [self.rx + 1j * self.ry, 1.0 - self.rz]]
        )


@dataclass(frozen=True)
class ApparatusParams:
    """One magnet plus its bath.

    Parameters
    ----------
    N : int
        Number of spins in the magnet.  Odd values keep ``m = 0`` off the grid.
    J2, J4 : float
        Quadratic and quartic Ising couplings.
    g : float
        System-magnet coupling.
    gamma : float
        Dimensionless magnet-bath coupling.  Zero switches the bath off.
    beta : float
        Inverse bath temperature.
    Gamma : float or None
        Debye cutoff.  ``None`` lets :func:`cwmeter.bath.default_cutoff` pick
        ``1000 * max(J2 + J4, g, g')`` once both apparatuses are known.
    """

    N: int = 161
    J2: float = 0.0
    J4: float = 1.0
    g: float = 0.1
    gamma: float = 0.01
    beta: float = 5.0
    Gamma: float | None = None

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N!r}")
        object.__setattr__(self, "N", int(self.N))
        for name in ("J2", "J4", "g", "gamma", "beta"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.J2 < 0 or self.J4 < 0:
            raise ValueError("J2 and J4 must be non-negative")
        if self.g < 0:
            raise ValueError("g must be non-negative")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.J4 > 0 and not self.J2 < 3 * self.J4:
            raise ValueError("J2 < 3*J4 is required (first-order transition regime)")
        if self.Gamma is not None:
            object.__setattr__(self, "Gamma", float(self.Gamma))
            if not self.Gamma > 0:
                raise ValueError("Gamma must be positive")

    @property
    def T(self):
        return 1.0 / self.beta

    def replace(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class MagnetGrid:
    """Magnetization eigenvalues of an ``N``-spin magnet and their log-degeneracies."""

    N: int
    values: np.ndarray
    logG: np.ndarray

    @property
    def size(self):
        return self.N + 1

    @property
    def step(self):
        return 2.0 / self.N

    def index(self, m, tol=1e-9):
        """Grid index of ``m``; raises ``ValueError`` off the grid."""
        x = (float(m) + 1.0) * self.N / 2.0
        i = int(round(x))
        if abs(x - i) > tol or not 0 <= i <= self.N:
            raise ValueError(f"m={m!r} is not on the grid of N={self.N}")
        return i


@lru_cache(maxsize=64)
def make_grid(N):
    N = int(N)
    if N < 1:
        raise ValueError("N must be positive")
    k = np.arange(N + 1)
    values = (2.0 * k - N) / N
    # grouping the two terms keeps logG exactly symmetric under k -> N - k
    logG = gammaln(N + 1.0) - (gammaln(k + 1.0) + gammaln(N - k + 1.0))
    values.setflags(write=False)
    logG.setflags(write=False)
    return MagnetGrid(N, values, logG)


def degeneracy_log(N, m):
    """``ln G(m)`` from exact log-factorials.

    >>> round(degeneracy_log(2, 0.0), 12) == round(math.log(2), 12)
    True
    """
    grid = make_grid(N)
    return float(grid.logG[grid.index(m)])


def degeneracy_log_stirling(N, m):
    """Leading-order Stirling form of ``ln G(m)``.

    Kept as a comparison curve.  Its ``1/sqrt(2 pi N)`` prefactor makes it
    ``ln 2`` smaller than the exact value at ``m = 0`` for large ``N``.
    """
    m = float(m)
    if abs(m) >= 1:
        raise ValueError("Stirling form needs |m| < 1")
    ent = math.log((1 - m * m) / 4) + m * math.log((1 + m) / (1 - m))
    return -0.5 * math.log(2 * math.pi * N) - 0.5 * N * ent


def initial_magnet_dist(grid):
    """Exact paramagnetic distribution ``P0(m) = G(m) / 2**N``."""
    if not isinstance(grid, MagnetGrid):
        grid = make_grid(grid)
    p = np.exp(grid.logG - grid.N * math.log(2.0))
    return p / p.sum()


def gaussian_magnet_dist(grid):
    """Large-N Gaussian ``sqrt(N/2pi) exp(-N m^2/2)`` times the grid step.

    Multiplying by the step ``2/N`` turns the density into grid weights.
    """
    if not isinstance(grid, MagnetGrid):
        grid = make_grid(grid)
    N = grid.N
    m = grid.values
    return math.sqrt(N / (2 * math.pi)) * np.exp(-N * m * m / 2) * grid.step


@dataclass(frozen=True)
class FieldFrame:
    """Effective field ``w`` and its direction ``(ux, uz)`` in the x-z plane."""

    w: float
    ux: float
    uz: float


def field_frame(m, mp, A, Ap):
    """Field magnitude and direction felt by the tested spin at ``(m, m')``.

    At ``w = 0`` the direction defaults to ``z``; odd grids never reach it.
    """
    a = A.N * A.g * float(m)
    b = Ap.N * Ap.g * float(mp)
    w = math.hypot(a, b)
    if w == 0.0:
        return FieldFrame(0.0, 0.0, 1.0)
    return FieldFrame(w, b / w, a / w)


def frame_arrays(grid, grid_p, A, Ap):
    """Vectorized :func:`field_frame` on the ``(m, m')`` mesh.

    Returns ``(w, ux, uz)`` arrays of shape ``(N+1, N'+1)``.
    """
    a = A.N * A.g * grid.values[:, None]
    b = Ap.N * Ap.g * grid_p.values[None, :]
    a, b = np.broadcast_arrays(a, b)
    w = np.hypot(a, b)
    zero = w == 0.0
    safe = np.where(zero, 1.0, w)
    ux = np.where(zero, 0.0, b / safe)
    uz = np.where(zero, 1.0, a / safe)
    return w, ux, uz


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class JointField:
    """Slow fields on the joint magnetization grid.

    ``P`` is the joint distribution of ``(m, m')`` and ``Cu`` the correlation
    of the Bloch vector with the local field direction, so that
    ``(P + Cu)/2`` and ``(P - Cu)/2`` are the branch distributions aligned
    and anti-aligned with ``u(m, m')``.
    """

    grid: MagnetGrid
    grid_p: MagnetGrid
    P: np.ndarray
    Cu: np.ndarray
    t: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        shape = (self.grid.size, self.grid_p.size)
        object.__setattr__(self, "P", _readonly(self.P))
        object.__setattr__(self, "Cu", _readonly(self.Cu))
        if self.P.shape != shape or self.Cu.shape != shape:
            raise ValueError(f"fields must have shape {shape}")

    @property
    def mass(self):
        return float(self.P.sum())

    @property
    def P_up(self):
        return 0.5 * (self.P + self.Cu)

    @property
    def P_down(self):
        return 0.5 * (self.P - self.Cu)

    def check(self, tol=1e-9):
        """Raise ``ValueError`` if normalization or ``|Cu| <= P`` fails."""
        if abs(self.mass - 1.0) > tol:
            raise ValueError(f"P is not normalized: sum = {self.mass!r}")
        if self.P.min() < -tol:
            raise ValueError("P has negative entries")
        excess = float((np.abs(self.Cu) - self.P).max())
        if excess > tol:
            raise ValueError(f"|Cu| exceeds P by {excess:.3e}")

    def mesh(self):
        return np.meshgrid(self.grid.values, self.grid_p.values, indexing="ij")


def init_joint_field(s, A, Ap):
    """Paramagnetic magnets times the spin state projected on ``u(m, m')``."""
    grid, grid_p = make_grid(A.N), make_grid(Ap.N)
    P = np.outer(initial_magnet_dist(grid), initial_magnet_dist(grid_p))
    _, ux, uz = frame_arrays(grid, grid_p, A, Ap)
    Cu = (uz * s.rz + ux * s.rx) * P
    return JointField(grid, grid_p, P, Cu, 0.0)


def reflect_field(f):
    """Joint reflection ``(m, m') -> (-m, -m')``.

    The reduced dynamics commutes with this map; it is the image of the
    spin flip ``(rx, ry, rz) -> (-rx, ry, -rz)`` at ``t = 0``.
    """
    return JointField(f.grid, f.grid_p, f.P[::-1, ::-1], f.Cu[::-1, ::-1], f.t, dict(f.meta))
