import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cwmeter.core import (
    ApparatusParams, BlochState, JointField, degeneracy_log, degeneracy_log_stirling,
    field_frame, frame_arrays, gaussian_magnet_dist, init_joint_field, initial_magnet_dist,
    make_grid, reflect_field,
)

odd_N = st.integers(min_value=0, max_value=200).map(lambda k: 2 * k + 1)
any_N = st.integers(min_value=1, max_value=400)


@st.composite
def bloch(draw):
    v = np.array([draw(st.floats(-1, 1)) for _ in range(3)])
    n = np.linalg.norm(v)
    if n > 1:
        v = v / n
    return BlochState(*v)


def test_bloch_rejects_outside_ball():
    with pytest.raises(ValueError):
        BlochState(1.0, 0.1, 0.0)
    BlochState(1.0, 0.0, 1e-7)  # within the 1e-12 slack on the squared norm


def test_density_matrix_is_a_state():
    rho = BlochState(0.6, 0.0, 0.8).density_matrix()
    assert np.isclose(np.trace(rho).real, 1.0)
    assert np.allclose(rho, rho.conj().T)
    assert np.linalg.eigvalsh(rho).min() > -1e-12


@pytest.mark.parametrize("kw", [dict(N=0), dict(J2=3.0, J4=1.0), dict(beta=0.0),
                                dict(g=-0.1), dict(gamma=-1.0), dict(Gamma=0.0)])
def test_apparatus_validation(kw):
    with pytest.raises(ValueError):
        ApparatusParams(**kw)


@given(any_N)
def test_grid_endpoints_and_order(N):
    g = make_grid(N)
    assert g.values[0] == -1.0 and g.values[-1] == 1.0
    assert np.all(np.diff(g.values) > 0)
    assert np.array_equal(g.values, -g.values[::-1])


@given(any_N)
def test_degeneracy_total(N):
    g = make_grid(N)
    lse = np.logaddexp.reduce(g.logG)
    assert abs(lse - N * math.log(2)) <= 1e-10 * N * math.log(2)


def test_degeneracy_small_cases():
    assert degeneracy_log(2, 0.0) == pytest.approx(math.log(2), abs=1e-15)
    assert degeneracy_log(2, 1.0) == 0.0
    assert degeneracy_log(2, -1.0) == 0.0
    with pytest.raises(ValueError):
        degeneracy_log(2, 0.5)


def test_degeneracy_log_factorial_oracle():
    N, m = 161, -1 + 160 / 161
    k = round(N * (1 + m) / 2)
    exact = sum(math.log(j) for j in range(1, N + 1)) \
        - sum(math.log(j) for j in range(1, k + 1)) \
        - sum(math.log(j) for j in range(1, N - k + 1))
    assert degeneracy_log(N, m) == pytest.approx(exact, rel=1e-13)


def test_stirling_form_offset():
    # the leading-order form misses a factor 2 in its prefactor near m = 0
    N, m = 161, -1 + 160 / 161
    exact, approx = degeneracy_log(N, m), degeneracy_log_stirling(N, m)
    assert exact - approx == pytest.approx(math.log(2), abs=5e-3)
    assert abs(exact - approx - math.log(2)) / exact < 5e-5


@given(any_N)
def test_degeneracy_reflection(N):
    g = make_grid(N)
    assert np.array_equal(g.logG, g.logG[::-1])


@given(any_N)
def test_binomial_moments(N):
    g = make_grid(N)
    p = initial_magnet_dist(g)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.array_equal(p, p[::-1])
    assert (g.values**2 * p).sum() == pytest.approx(1.0 / N, rel=1e-10)


def test_gaussian_comparison():
    g = make_grid(161)
    p, q = initial_magnet_dist(g), gaussian_magnet_dist(g)
    assert np.abs(p - q).max() < 0.01 * p.max()


def test_field_frame_examples():
    A = ApparatusParams(N=161, g=0.1)
    f = field_frame(0.5, 0.0, A, A)
    assert f.w == pytest.approx(0.5 * 161 * 0.1) and (f.ux, f.uz) == (0.0, 1.0)
    f = field_frame(0.3, 0.3, A, A)
    assert f.ux == pytest.approx(1 / math.sqrt(2)) and f.uz == pytest.approx(1 / math.sqrt(2))
    f = field_frame(1.0, 1.0, A, A)
    assert f.w == pytest.approx(math.sqrt(2) * 16.1, rel=1e-14)
    f = field_frame(0.0, 0.0, A, A)
    assert f.w == 0.0 and (f.ux, f.uz) == (0.0, 1.0)


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0, 1), st.floats(0, 1))
def test_frame_is_unit(m, mp, g, gp):
    A, Ap = ApparatusParams(N=21, g=g), ApparatusParams(N=31, g=gp)
    f = field_frame(m, mp, A, Ap)
    if f.w > 0:
        assert f.ux**2 + f.uz**2 == pytest.approx(1.0, abs=1e-12)
        assert f.w == pytest.approx(math.hypot(21 * g * m, 31 * gp * mp))


def test_init_mixed_and_axis():
    A = ApparatusParams(N=21, g=0.3)
    f = init_joint_field(BlochState(), A, A)
    assert np.all(f.Cu == 0)
    assert np.allclose(f.P, np.outer(initial_magnet_dist(f.grid), initial_magnet_dist(f.grid_p)))
    Ap = ApparatusParams(N=21, g=0.0)
    f = init_joint_field(BlochState(0, 0, 1), A, Ap)
    assert np.array_equal(f.Cu, np.sign(f.grid.values)[:, None] * f.P)


def test_init_sx_matches_grid_sum():
    from cwmeter.dynamics import dephasing_joint_numeric
    A = ApparatusParams(N=21, g=0.2)
    s = BlochState(1, 0, 0)
    f = init_joint_field(s, A, A)
    p0 = initial_magnet_dist(f.grid)
    oracle = math.fsum(field_frame(m, mp, A, A).ux * p0[i] * p0[j]
                       for i, m in enumerate(f.grid.values)
                       for j, mp in enumerate(f.grid_p.values))
    assert f.Cu.sum() == pytest.approx(oracle, abs=1e-14)
    assert dephasing_joint_numeric(0.0, s, A, A).rx == pytest.approx(1.0, abs=1e-14)


@given(odd_N.filter(lambda n: n < 80), bloch())
def test_init_invariants_and_mirror(N, s):
    A = ApparatusParams(N=N, g=0.2)
    Ap = ApparatusParams(N=N + 2, g=0.3)
    f = init_joint_field(s, A, Ap)
    f.check(1e-12)
    flip = init_joint_field(BlochState(-s.rx, s.ry, -s.rz), A, Ap)
    r = reflect_field(f)
    assert np.array_equal(flip.P, r.P)
    assert np.allclose(flip.Cu, r.Cu, atol=1e-17, rtol=0)


def test_joint_field_is_immutable():
    A = ApparatusParams(N=5)
    f = init_joint_field(BlochState(0, 0, 1), A, A)
    with pytest.raises(ValueError):
        f.P[0, 0] = 1.0
    with pytest.raises(ValueError):
        JointField(f.grid, f.grid_p, f.P[:-1], f.Cu[:-1])
