"""Generalized-measurement description of the joint registration.

Operators on the qubit are stored in the Pauli basis: ``(a0, ax, ay, az)``
stands for ``a0 I + ax sx + ay sy + az sz``.  Products and traces of such
operators reduce to sums of the four coefficients, so Hermiticity is exact by
construction.

The four outcomes are labelled ``(eps, eps')`` with ``eps`` the sign read on
the z-apparatus and ``eps'`` the sign read on the x-apparatus, ordered
``(+,+), (+,-), (-,+), (-,-)``.
"""
from __future__ import annotations

from dataclasses import dataclass
import json
import math

import numpy as np

from .core import BlochState
from .dynamics import OutcomeWeights

__all__ = [
    "OUTCOMES",
    "Effect",
    "MeasurementModel",
    "ModelInconsistency",
    "UndefinedConditional",
    "UnestimableComponent",
    "Estimate",
    "final_directions",
    "povm_elements",
    "measurement_model",
    "lossy_channel",
    "outcome_probabilities",
    "outcome_probabilities_trace",
    "measurement_operator",
    "post_measurement_state",
    "sample_outcomes",
    "estimate_bloch",
]

OUTCOMES = ((1, 1), (1, -1), (-1, 1), (-1, -1))
_TOL = 1e-12


class ModelInconsistency(ValueError):
    """A negative outcome probability: the model and state do not fit together."""


class UndefinedConditional(ValueError):
    """Conditioning on an outcome that cannot occur."""


class UnestimableComponent(ValueError):
    """A Bloch component carries no weight in the statistics (``lambda = 0``)."""


@dataclass(frozen=True)
class Effect:
    """POVM element ``a0 I + a . sigma`` in the Pauli basis."""

    a0: float
    ax: float
    ay: float
    az: float

    def __post_init__(self):
        if math.sqrt(self.ax**2 + self.ay**2 + self.az**2) > self.a0 + _TOL:
            raise ValueError("effect is not positive semidefinite")

    @property
    def coeffs(self):
        return np.array([self.a0, self.ax, self.ay, self.az])

    def matrix(self):
        a0, ax, ay, az = self.coeffs
        return np.array([[a0 + az, ax - 1j * ay], [ax + 1j * ay, a0 - az]])

    def expectation(self, s):
        """``Tr(rho F)`` for the state with Bloch vector ``s``.

        With ``rho = (I + r.sigma)/2`` the trace is ``a0 + a.r``.
        """
        return self.a0 + self.ax * s.rx + self.ay * s.ry + self.az * s.rz


def final_directions(A, Ap):
    """Unit vectors ``u^(eps eps') = (eps' N'g', 0, eps N g) / norm``.

    Returns
    -------
    dict
        Keyed by outcome tuple, values are length-3 arrays.
    """
    a, b = A.N * A.g, Ap.N * Ap.g
    norm = math.hypot(a, b)
    if norm == 0:
        raise ValueError("both couplings vanish: the magnets do not measure the spin")
    return {(e, ep): np.array([ep * b / norm, 0.0, e * a / norm]) for e, ep in OUTCOMES}


def povm_elements(A, Ap):
    """The four rank-one effects ``F = |up_(eps eps')><up_(eps eps')| / 2``.

    In the Pauli basis ``F = (I + u . sigma) / 4``.
    """
    dirs = final_directions(A, Ap)
    return {k: Effect(0.25, 0.25 * u[0], 0.25 * u[1], 0.25 * u[2]) for k, u in dirs.items()}


@dataclass(frozen=True)
class MeasurementModel:
    """Lossy channel followed by the four-outcome POVM.

    ``lam = alpha_z uz_f`` and ``lam_prime = alpha_x ux_f`` are the response
    coefficients of the outcome statistics to ``rz`` and ``rx``.
    """

    effects: dict
    alpha_x: float
    alpha_z: float
    ux_f: float
    uz_f: float

    def __post_init__(self):
        total = sum(e.coeffs for e in self.effects.values())
        if not np.allclose(total, [1.0, 0.0, 0.0, 0.0], rtol=0, atol=_TOL):
            raise ValueError("effects do not sum to the identity")
        for a in (self.alpha_x, self.alpha_z):
            if not 0.0 <= a <= 1.0:
                raise ValueError("channel contractions must lie in [0, 1]")

    @property
    def lam(self):
        return self.alpha_z * self.uz_f

    @property
    def lam_prime(self):
        return self.alpha_x * self.ux_f

    def to_dict(self):
        return {
            "u_f": [self.ux_f, 0.0, self.uz_f],
            "alpha_x": self.alpha_x,
            "alpha_z": self.alpha_z,
            "lambda": self.lam,
            "lambda_prime": self.lam_prime,
            "effects_pauli": {f"{'+' if e > 0 else '-'}{'+' if ep > 0 else '-'}":
                              self.effects[(e, ep)].coeffs.tolist() for e, ep in OUTCOMES},
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def measurement_model(A, Ap, lam=None, lam_prime=None, alpha_x=None, alpha_z=None):
    """Build the model from either the channel contractions or the responses.

    Exactly one of the pairs ``(alpha_x, alpha_z)`` and ``(lam, lam_prime)``
    must be given; the other follows from ``lam = alpha_z uz_f`` and
    ``lam_prime = alpha_x ux_f``.  No default is ever assumed.
    """
    eff = povm_elements(A, Ap)
    u = final_directions(A, Ap)[(1, 1)]
    ux_f, uz_f = float(u[0]), float(u[2])
    by_alpha = alpha_x is not None and alpha_z is not None
    by_lam = lam is not None and lam_prime is not None
    if by_alpha == by_lam:
        raise ValueError("give either (alpha_x, alpha_z) or (lam, lam_prime)")
    if by_lam:
        if (lam and uz_f == 0) or (lam_prime and ux_f == 0):
            raise ValueError("response along a direction the POVM does not probe")
        alpha_z = lam / uz_f if uz_f else 0.0
        alpha_x = lam_prime / ux_f if ux_f else 0.0
    return MeasurementModel(eff, float(alpha_x), float(alpha_z), ux_f, uz_f)


def lossy_channel(s, alpha_x, alpha_z):
    """``(rx, ry, rz) -> (alpha_x rx, 0, alpha_z rz)``."""
    for a in (alpha_x, alpha_z):
        if not 0.0 <= a <= 1.0:
            raise ValueError("alpha_x and alpha_z must lie in [0, 1]")
    return BlochState(alpha_x * s.rx, 0.0, alpha_z * s.rz)


def _weights(p):
    if min(p) < -_TOL:
        raise ModelInconsistency(f"negative outcome probability {min(p):.3e}")
    p = [max(x, 0.0) for x in p]
    return OutcomeWeights(*p, residual=0.0)


def outcome_probabilities(s, model):
    """Closed form ``p = (1 + eps lam rz + eps' lam' rx) / 4``."""
    p = [0.25 * (1.0 + e * model.lam * s.rz + ep * model.lam_prime * s.rx) for e, ep in OUTCOMES]
    return _weights(p)


def outcome_probabilities_trace(s, model):
    """Same probabilities through ``Tr(C(rho) F)`` with the effect matrices."""
    rho = lossy_channel(s, model.alpha_x, model.alpha_z).density_matrix()
    p = [float(np.trace(rho @ model.effects[k].matrix()).real) for k in OUTCOMES]
    return _weights(p)


def measurement_operator(outcome, model):
    """Kraus operator ``M = sqrt(2) F`` (``F`` is half a projector)."""
    return math.sqrt(2.0) * model.effects[tuple(outcome)].matrix()


def post_measurement_state(outcome, model, s=None):
    """State after ``outcome``: the pure state along ``u^(eps eps')``.

    When the input ``s`` is given, the conditional is checked to exist.
    """
    outcome = tuple(outcome)
    if outcome not in model.effects:
        raise ValueError(f"unknown outcome {outcome!r}")
    if s is not None:
        p = model.effects[outcome].expectation(lossy_channel(s, model.alpha_x, model.alpha_z))
        if p <= _TOL:
            raise UndefinedConditional(f"outcome {outcome} has zero probability")
    e = model.effects[outcome]
    return BlochState(e.ax / e.a0, e.ay / e.a0, e.az / e.a0)


def sample_outcomes(p, n, seed):
    """Multinomial counts ``(n_pp, n_pm, n_mp, n_mm)`` for ``n`` runs.

    Each call owns a fresh ``numpy.random.default_rng(seed)``.  Weights with
    an unregistered residual are used as given for the registered outcomes;
    pass ``p.normalized()`` to condition on registration explicitly.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    probs = p.as_array()
    if abs(probs.sum() - 1.0) > 1e-9:
        raise ValueError("weights carry unregistered mass; normalize them explicitly")
    rng = np.random.default_rng(seed)
    return tuple(int(c) for c in rng.multinomial(int(n), probs / probs.sum()))


@dataclass(frozen=True)
class Estimate:
    rx: float
    rz: float
    se_rx: float
    se_rz: float
    n: int

    def to_dict(self):
        return {"rx": self.rx, "rz": self.rz, "se_rx": self.se_rx, "se_rz": self.se_rz,
                "n": self.n}


def estimate_bloch(counts, lam, lam_prime):
    """Linear-inversion estimate of ``(rx, rz)`` from outcome counts.

    ``rz = [(n_pp + n_pm) - (n_mp + n_mm)] / (n lam)`` and
    ``rx = [(n_pp + n_mp) - (n_pm + n_mm)] / (n lam')``.  The standard errors
    follow from the binomial variance of each sign count,
    ``se = sqrt((1 - a^2)/n) / lam`` with ``a`` the observed mean sign.
    """
    n_pp, n_pm, n_mp, n_mm = (int(c) for c in counts)
    n = n_pp + n_pm + n_mp + n_mm
    if n <= 0:
        raise ValueError("no counts")
    if lam == 0 or lam_prime == 0:
        raise UnestimableComponent("lambda and lambda' must be nonzero")
    az = ((n_pp + n_pm) - (n_mp + n_mm)) / n
    ax = ((n_pp + n_mp) - (n_pm + n_mm)) / n
    se_z = math.sqrt(max(1.0 - az * az, 0.0) / n) / abs(lam)
    se_x = math.sqrt(max(1.0 - ax * ax, 0.0) / n) / abs(lam_prime)
    return Estimate(ax / lam_prime, az / lam, se_x, se_z, n)
