"""Acceptance criteria, each at its stated tolerance.

Every test prints one ``criterion N: PASS|FAIL ...`` line; the lines are
repeated in the terminal summary.
"""
import math
import time

import numpy as np
import pytest

from cwmeter import dynamics as dyn, povm
from cwmeter.bath import KernelParams, noise_kernel
from cwmeter.core import (ApparatusParams, BlochState, frame_arrays, init_joint_field,
                          initial_magnet_dist, make_grid, reflect_field)
from cwmeter.landscape import critical_coupling_joint, critical_coupling_single

from conftest import ACCEPTANCE_LINES

FIG = dict(N=161, J2=0.0, J4=1.0, beta=5.0, gamma=0.01)
T_FINAL = 40.0  # tau; registration is complete (residual < 0.3%) by then
STATES = [(0.0, 1.0), (0.0, -1.0), (1.0, 0.0), (-1.0, 0.0), (0.6, 0.8), (-0.6, -0.8)]


def report(n, checks):
    """Print the verdict line for criterion ``n`` and fail on any failed part.

    ``checks`` is a list of ``(label, ok, detail)``.
    """
    ok = all(c[1] for c in checks)
    parts = "; ".join(f"{lab} {'ok' if good else 'FAILED'} ({det})" for lab, good, det in checks)
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} | {parts}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    failed = [c[0] for c in checks if not c[1]]
    assert ok, f"criterion {n} failed parts: {failed}"


def _thr(A):
    return (dyn.registration_threshold(A),) * 2


@pytest.fixture(scope="session")
def fig5():
    """Identical apparatuses at g = 0.4, one run per initial state."""
    A = ApparatusParams(g=0.4, **FIG)
    cfg = dyn.SolverConfig(t_end=T_FINAL, snapshot_times=(4.0, 8.0, 10.0, 12.0))
    runs, wall = {}, {}
    for rx, rz in STATES + [(0.0, 0.0)]:
        t0 = time.perf_counter()
        runs[(rx, rz)] = dyn.evolve(init_joint_field(BlochState(rx, 0, rz), A, A), A, A, cfg)
        wall[(rx, rz)] = time.perf_counter() - t0
    return A, runs, wall


def _at(traj, t):
    return traj.snapshots[traj.times.index(t)]


# --------------------------------------------------------------------- 1


def test_criterion_1_thresholds():
    t0 = time.perf_counter()
    A = ApparatusParams(**FIG)
    s = critical_coupling_single(A)
    j = critical_coupling_joint(A, A)
    wall = time.perf_counter() - t0
    report(1, [
        ("h_d closed form = 0.4", j.closed_form == 0.4, f"{j.closed_form!r}"),
        ("h_c closed form ~ 0.05495", abs(s.closed_form - 0.05495) < 1e-5, f"{s.closed_form:.6f}"),
        ("barrier scan within one step", abs(s.scan - s.closed_form) <= s.step,
         f"scan {s.scan:.3f} vs closed form {s.closed_form:.5f}, step {s.step}"),
        ("runtime < 1 s", wall < 1.0, f"{wall:.3f} s"),
    ])


# --------------------------------------------------------------------- 2


def test_criterion_2_regimes(fig5):
    A4, runs, wall = fig5
    A1 = ApparatusParams(g=0.1, **FIG)
    t0 = time.perf_counter()
    tr = dyn.evolve(init_joint_field(BlochState(0, 0, 1), A1, A1), A1, A1,
                    dyn.SolverConfig(t_end=12.0))
    wall1 = time.perf_counter() - t0
    one = dyn.region_masses(tr.final, _thr(A1))
    four = dyn.region_masses(_at(runs[(0.0, 1.0)], 8.0), _thr(A4))
    # the full-length g = 0.4 run also covers 40 tau, so its wall time bounds the 8 tau run
    report(2, [
        ("g=0.1 one registers >= 95% at 12 tau", one["one"] >= 0.95,
         f"single-axis mass {one['one']:.4f}, corners {one['corners']:.4f}, center {one['center']:.4f}"),
        ("g=0.4 corners >= 99% at 8 tau", four["corners"] >= 0.99, f"{four['corners']:.4f}"),
        ("g=0.4 center < 1% at 8 tau", four["center"] < 0.01, f"{four['center']:.2e}"),
        ("runtime < 5 min per run", max(wall1, wall[(0.0, 1.0)]) < 300,
         f"{wall1:.1f} s and {wall[(0.0, 1.0)]:.1f} s"),
    ])


# --------------------------------------------------------------------- 3


def test_criterion_3_mixed_state_symmetry(fig5):
    A, runs, _ = fig5
    w = dyn.quadrant_weights(runs[(0.0, 0.0)].final, _thr(A))
    dev = np.abs(w.as_array() - 0.25).max()
    report(3, [
        (f"weights 1/4 +- 0.02 at {T_FINAL:g} tau", dev <= 0.02,
         f"{np.round(w.as_array(), 5).tolist()}, residual {w.residual:.2e}"),
    ])


# --------------------------------------------------------------------- 4


@pytest.fixture(scope="session")
def fit(fig5):
    A, runs, _ = fig5
    states = [BlochState(rx, 0, rz) for rx, rz in STATES]
    return dyn.response_fit(A, A, None, states,
                            runner=lambda s: runs[(s.rx, s.rz)].final)


def test_criterion_4_linear_response(fit, fig5):
    A, runs, _ = fig5
    # closed-form inversion of the rz = 1 run
    w = dyn.quadrant_weights(runs[(0.0, 1.0)].final, _thr(A)).normalized()
    lam_direct = (w.pp + w.pm) - (w.mp + w.mm)
    report(4, [
        (">= 6 states, residual < 1e-3", len(fit.states) >= 6 and fit.residual < 1e-3,
         f"{len(fit.states)} states, residual {fit.residual:.2e}"),
        ("lambda, lambda' in [0, 1]", 0 <= fit.lambda_ <= 1 and 0 <= fit.lambda_prime <= 1,
         f"lambda {fit.lambda_:.5f}, lambda' {fit.lambda_prime:.5f}"),
        ("lambda = lambda' within 2%",
         abs(fit.lambda_ - fit.lambda_prime) <= 0.02 * max(fit.lambda_, fit.lambda_prime),
         f"relative gap {abs(fit.lambda_ / fit.lambda_prime - 1):.1e}"),
        ("fit = direct inversion", abs(lam_direct - fit.lambda_) < 1e-9,
         f"direct {lam_direct:.5f}"),
    ])


# --------------------------------------------------------------------- 5


def test_criterion_5_dephasing():
    A = ApparatusParams(N=161, g=0.4)
    td = dyn.dephasing_time(A)
    c = 1 / math.sqrt(2)
    s = BlochState(c, 0, c)
    worst = 0.0
    for k in (16, 20, 24, 28, 32):
        r = dyn.dephasing_joint_numeric(k * td, s, A, A)
        worst = max(worst, abs(r.rx / c / 0.5 - 1), abs(r.rz / c / 0.5 - 1))
    single = dyn.dephasing_single(td, BlochState(0.6, 0.0, 0.8), A)
    rz_kept = all(dyn.dephasing_single(t, BlochState(0.6, 0.0, 0.8), A).rz == 0.8
                  for t in np.linspace(0, 50 * td, 101))
    report(5, [
        ("grid-sum retention 1/2 and 1/2 within 2%", worst <= 0.02,
         f"worst relative gap {worst:.2e} over t = 16..32 tau_d"),
        ("rz exactly conserved", rz_kept, "101 times"),
        ("decay e^-1 at tau_d to 1e-12", abs(single.rx / 0.6 - math.exp(-1)) <= 1e-12,
         f"gap {abs(single.rx / 0.6 - math.exp(-1)):.1e}"),
    ])


# --------------------------------------------------------------------- 6


def test_criterion_6_conservation(fig5):
    A, runs, _ = fig5
    drift = max(abs(d["mass"] - 1.0) / max(t, 1.0)
                for tr in runs.values() for t, d in zip(tr.times, tr.diagnostics))
    excess = max(d["cu_excess"] for tr in runs.values() for d in tr.diagnostics)
    # one step and a few steps of a generic state against its reflection
    f = init_joint_field(BlochState(0.48, 0.36, -0.64), A, A)
    exact = True
    for n in (1, 7):
        cfg = dyn.SolverConfig(t_end=n * 0.005, dt=0.005)
        a = dyn.evolve(f, A, A, cfg).final
        b = dyn.evolve(reflect_field(f), A, A, cfg).final
        exact &= np.array_equal(b.P, a.P[::-1, ::-1]) and np.array_equal(b.Cu, a.Cu[::-1, ::-1])
    kp = KernelParams(5.0, 1000.0)
    w = np.logspace(-8, 2, 400)
    db = float(np.max(np.abs(noise_kernel(-w, kp) / (np.exp(kp.beta * w) * noise_kernel(w, kp)) - 1)))
    report(6, [
        ("mass drift < 1e-9 per tau", drift < 1e-9, f"{drift:.1e}"),
        ("|Cu| <= P to 1e-9", excess <= 1e-9, f"max excess {excess:.1e}"),
        ("reflection equivariance exact per step", exact, "bitwise after 1 and 7 steps"),
        ("detailed balance to 1e-12", db <= 1e-12, f"{db:.1e} over 1e-8..1e2"),
    ])


# --------------------------------------------------------------------- 7


def _full_vs_reduced(t_tau):
    """Integrate the four-field equations and the reduced pair to ``t_tau``.

    The bath is weak (gamma = 0.002) so the fast precession averages out
    well within the window, which is the regime where the reduction holds.
    """
    A = ApparatusParams(N=21, g=0.4, beta=5.0, gamma=0.002)
    s = BlochState(0.6, 0.0, 0.8)
    f = init_joint_field(s, A, A)
    red = dyn.evolve(f, A, A, dyn.SolverConfig(t_end=t_tau)).final
    grid = make_grid(A.N)
    P0 = np.outer(initial_magnet_dist(grid), initial_magnet_dist(grid))
    w, ux, uz = frame_arrays(grid, grid, A, A)
    t_end = t_tau * dyn.tau(A)
    n = int(math.ceil(t_end * w.max() * 40))
    h = t_end / n
    y = [P0, s.rx * P0, s.ry * P0, s.rz * P0]
    rhs = lambda y: dyn.full_rhs(*y, A, A)
    for _ in range(n):
        k1 = rhs(y)
        k2 = rhs([a + 0.5 * h * b for a, b in zip(y, k1)])
        k3 = rhs([a + 0.5 * h * b for a, b in zip(y, k2)])
        k4 = rhs([a + h * b for a, b in zip(y, k3)])
        y = [a + h / 6 * (b + 2 * c + 2 * d + e) for a, b, c, d, e in zip(y, k1, k2, k3, k4)]
    P, Cx, _, Cz = y
    Cu = ux * Cx + uz * Cz
    return (np.abs(P - red.P).max() / red.P.max(),
            np.abs(Cu - red.Cu).max() / np.abs(red.Cu).max())


def test_criterion_7_oracles(fit, fig5):
    A, runs, _ = fig5
    gaps = [_full_vs_reduced(t) for t in (0.025, 0.05, 0.1)]
    gP, gC = max(g[0] for g in gaps), max(g[1] for g in gaps)

    model = povm.measurement_model(A, A, lam=fit.lambda_, lam_prime=fit.lambda_prime)
    rng = np.random.default_rng(7)
    trace_gap = 0.0
    for _ in range(200):
        v = rng.normal(size=3)
        v *= rng.random() ** (1 / 3) / np.linalg.norm(v)
        s = BlochState(*v)
        a = povm.outcome_probabilities(s, model).as_array()
        b = povm.outcome_probabilities_trace(s, model).as_array()
        trace_gap = max(trace_gap, float(np.abs(a - b).max()))

    truth = BlochState(0.6, 0.0, 0.8)
    w = dyn.quadrant_weights(runs[(0.6, 0.8)].final, _thr(A)).normalized()
    counts = povm.sample_outcomes(w, 10**5, 20240611)
    est = povm.estimate_bloch(counts, fit.lambda_, fit.lambda_prime)
    zx, zz = (est.rx - truth.rx) / est.se_rx, (est.rz - truth.rz) / est.se_rz
    equiv = float(np.abs(w.as_array() - povm.outcome_probabilities(truth, model).as_array()).max())
    report(7, [
        ("full vs reduced within 1% (t <= 0.1 tau)", max(gP, gC) <= 0.01,
         f"P {gP:.1e}, Cu {gC:.1e}"),
        ("trace formula = closed form to 1e-12", trace_gap <= 1e-12, f"{trace_gap:.1e}"),
        ("pipeline recovers (rx, rz) within 3 SE at n=1e5", abs(zx) <= 3 and abs(zz) <= 3,
         f"rx {est.rx:.4f} ({zx:+.2f} SE), rz {est.rz:.4f} ({zz:+.2f} SE)"),
        ("solver weights = POVM probabilities", equiv <= fit.residual + 0.01, f"{equiv:.1e}"),
    ])


# --------------------------------------------------------------------- 8


def test_criterion_8_down_branch(fig5):
    A4, runs, _ = fig5
    A1 = ApparatusParams(g=0.1, **FIG)
    # identical apparatuses with the two spin branches evolving separately
    cfg = dyn.SolverConfig(t_end=4.0, frame_transport=False)
    f = dyn.evolve(init_joint_field(BlochState(0, 0, 1), A1, A1), A1, A1, cfg).final
    d = dyn.anisotropy_diagnostics(f, A1, A1, core_radius=0.1)
    ratio = d["radial_slope"] / d["reference_slope"]
    centers = [dyn.anisotropy_diagnostics(s)["center_mass"] for s in runs[(0.0, 1.0)].snapshots]
    split = int(np.argmax(np.diff(centers) < 0))
    monotone = all(b <= a + 1e-15 for a, b in zip(centers[split:], centers[split + 1:]))
    report(8, [
        ("radial slope = -N g beta within 10%", abs(ratio - 1) <= 0.10,
         f"slope {d['radial_slope']:.2f} vs {d['reference_slope']:.2f} (ratio {ratio:.3f})"),
        ("central mass eventually < 1%", centers[-1] < 0.01 and monotone,
         f"{centers[-1]:.1e} at {T_FINAL:g} tau, nonincreasing after the split"),
    ])


# --------------------------------------------------------------------- 9


def test_criterion_9_excluded():
    line = ("criterion 9: EXCLUDED | the published lambda curve has no readable values; "
            "covered by the consistency checks of criteria 4 and 7")
    print(line)
    ACCEPTANCE_LINES.append(line)
    pytest.skip("excluded from acceptance: figure values are not readable")
