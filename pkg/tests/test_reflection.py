from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from jumpresum import reflection as R
from jumpresum.grid1d import WavePacketSpec
from jumpresum.quantum import Grid1D

# tests/oracles/reflection_oracle.py: mpmath for P0 and the Lorentzian part,
# an analytic time integral inside scipy dblquad for the correction
ORACLE = {
    #  e      p0                  lorentz            corr            p1             total
    0.01: (0.753284739062, 0.804163208062, -0.0724636356, 0.1805214509, 0.8054756936),
    0.2: (0.27174334709, 0.827681980988, -0.0652833674, 0.5552218625, 0.4115579856),
    1.0: (0.047021899501, 0.898971340568, -0.0357944493, 0.8225886742, 0.1617182188),
    10.0: (0.000622669105522, 0.985563472342, -0.0016230692, 0.9833277338, 0.01641859003),
    100.0: (6.24976563794e-6, 0.998459462109, -0.0000284577, 0.9984247644, 0.001572777699),
}


def _gamma(e):
    return 1.0 / (2.0 * e)


def test_p0_reference_value():
    assert R.p0_reflect(1.0) == pytest.approx(0.0470218995009911, abs=1e-13)
    assert R.p0_reflect(1.0) == pytest.approx(0.04702, abs=1e-5)


@pytest.mark.parametrize("e", sorted(ORACLE))
def test_p0_against_oracle(e):
    assert R.p0_reflect(e) == pytest.approx(ORACLE[e][0], rel=1e-10)


def test_p0_limits_and_monotonicity():
    assert R.p0_reflect(1e8) < 1e-15
    assert R.p0_reflect(1e-8) > 1 - 1e-3
    es = np.geomspace(1e-3, 1e3, 60)
    vals = [R.p0_reflect(e) for e in es]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        R.p0_reflect(0.0)


def test_p0_matches_no_jump_packet_evolution():
    from jumpresum.grid1d import SplitStepPlan, gaussian_packet, split_step_evolve

    e, k0 = 1.0, 1.0
    grid = Grid1D(4096, -128.0, 128.0)
    psi = gaussian_packet(WavePacketSpec(-50.0, k0, 10.0), grid)
    plan = SplitStepPlan.imaginary_step(grid, 0.05, _gamma(e), max_energy=2.0)
    out = split_step_evolve(psi, plan, 2000)
    assert out.norm2() == pytest.approx(R.p0_reflect(e), abs=2e-3)


def test_post_jump_state_is_normalized():
    for k0, g in ((1.0, 0.5), (0.2, 3.0), (5.0, 0.01)):
        kap = R.kappa(k0, g)

        def dens(k):
            return float(abs(R.psi1_momentum(k0, g, k)) ** 2)

        total = sum(integrate.quad(dens, a, b, epsabs=1e-12, epsrel=1e-12, limit=500)[0]
                    for a, b in ((-np.inf, 0.0), (0.0, kap.real), (kap.real, np.inf)))
        assert total == pytest.approx(1.0, abs=1e-8)


def test_post_jump_width_small_gamma():
    k0, g = 2.0, 1e-4
    kap = R.kappa(k0, g)
    assert kap.real == pytest.approx(k0, rel=1e-8)
    assert kap.imag == pytest.approx(g / k0, rel=1e-6)


def test_psi1_on_grid_reports_captured_norm():
    g = R.lorentzian_grid(1.0, 0.5)
    psi, captured = R.psi1_on_grid(1.0, 0.5, g)
    assert psi.norm2() == pytest.approx(1.0, abs=1e-12)
    assert 0.99 < captured < 1.0


def test_lorentzian_grid_guard():
    with pytest.raises(ValueError):
        R.lorentzian_grid(1.0, 1e-4, max_points=1 << 16)


@pytest.mark.parametrize("e", sorted(ORACLE))
def test_lorentzian_part_against_oracle(e):
    assert R.lorentzian_part(1.0, _gamma(e)) == pytest.approx(ORACLE[e][1], abs=1e-9)


def test_lorentzian_part_depends_on_energy_ratio_only():
    assert R.lorentzian_part(3.0, 9.0) == pytest.approx(R.lorentzian_part(1.0, 1.0), abs=1e-9)


def test_one_jump_chain_at_unit_ratio():
    e = 1.0
    p0, _, corr, p1, total = ORACLE[e]
    c = R.correction_part(1.0, _gamma(e))
    assert c == pytest.approx(corr, abs=1e-4)
    p1_pkg = (R.lorentzian_part(1.0, _gamma(e)) + c) * (1 - R.p0_reflect(e))
    assert p1_pkg == pytest.approx(p1, abs=1e-4)
    assert R.total_reflection_from(R.p0_reflect(e), p1_pkg).value == pytest.approx(total, abs=1e-4)


def test_total_reflection_limits():
    assert R.total_reflection_from(0.0, 1.0).value == 0.0
    assert R.total_reflection_from(1.0, 0.0).value == 1.0
    assert R.total_reflection(1.0, 0.0) == 0.0


def test_total_reflection_clamping():
    res = R.total_reflection_from(0.4, 0.6 + 5e-10)
    assert res.clamped and res.value == pytest.approx(0.4)
    with pytest.raises(ValueError):
        R.total_reflection_from(0.4, 0.7)
    with pytest.raises(ValueError):
        R.total_reflection_from(-0.1, 0.5)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 0.95), st.floats(0.05, 1.0))
def test_closed_form_matches_explicit_series(p0, frac):
    p1 = frac * (1 - p0)
    n = int(60 / frac) + 50
    closed = R.total_reflection_from(p0, p1).value
    assert closed == pytest.approx(R.geometric_even_sum(p0, p1, n), abs=1e-12)
    assert 0.0 <= closed <= 1.0


def test_reflection_point_validation():
    R.ReflectionPoint(1.0, 0.1, 0.2, math.nan, math.nan)
    with pytest.raises(ValueError):
        R.ReflectionPoint(1.0, 1.2, 0.2, 0.1, 0.01)


def test_point_seeds():
    seeds = [R.point_seed(42, i) for i in range(25)]
    assert len(set(seeds)) == 25
    assert seeds == [R.point_seed(42, i) for i in range(25)]
    assert R.point_seed(43, 0) != seeds[0]


def test_time_cap():
    g = Grid1D(4096, -128.0, 128.0)
    assert R.t_cap(WavePacketSpec(-50.0, 1.0, 10.0), g) == pytest.approx(712.0)


def test_mc_input_checks():
    g = Grid1D(4096, -128.0, 128.0)
    packet = WavePacketSpec(-50.0, 1.0, 10.0)
    with pytest.raises(ValueError):
        R.mc_reflection(1.0, 0.5, g, packet, 5000, 1)
    with pytest.raises(ValueError):
        R.mc_reflection(2.0, 0.5, g, packet, 10_000, 1)
    res = R.mc_reflection(1.0, 0.0, g, packet, 10_000, 1)
    assert res.probability == 0.0 and res.weights.tolist() == [1.0]
    with pytest.raises(ValueError):
        R.reflection_model(g, -1.0)


def test_mc_deep_ballistic_regime():
    cfg = R.ReflectionConfig()
    e = 100.0
    res = R.mc_reflection(1.0, _gamma(e), cfg.grid, WavePacketSpec(-50.0, 1.0, 10.0), 10_000, 42)
    assert res.probability < 0.01
    assert abs(res.probability - ORACLE[e][4]) < 4 * max(res.stderr, 4e-4)
    assert res.consistent
    assert res.undecided + res.overflow <= 10


def test_mc_agrees_with_one_jump_chain_at_unit_ratio():
    cfg = R.ReflectionConfig()
    e = 1.0
    res = R.mc_reflection(1.0, _gamma(e), cfg.grid, WavePacketSpec(-50.0, 1.0, 10.0), 10_000, 42)
    assert abs(res.probability - ORACLE[e][4]) < 4 * res.stderr + 0.005
    # direction at the end and parity of the jump count classify the same runs
    assert abs(res.probability - res.direction_probability) <= 2 * res.stderr
    assert res.consistent
    assert res.weights[0] == pytest.approx(ORACLE[e][0], abs=4 * math.sqrt(ORACLE[e][0] / 1e4) + 2e-3)
