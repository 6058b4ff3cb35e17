from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from jumpresum import lz
from jumpresum.lindblad import integrate_exact, check_density

# reference values from tests/oracles/lz_oracle.py (mpmath, 40 digits; full density-matrix sweep)
TAU_STAR = {1.0: 3.1422779638273296, 1e-4: 1.5915795123691049, 0.25: 1.8539049402500803}
PN = {
    (1, 1.5, 0.7): 0.55427264810821956,
    (2, 1.5, 0.7): 0.19281457531892236,
    (3, 0.5, 2.0): 0.0079798556662447046,
    (7, 4.0, 3.0): 0.0075741199336975634,
    (40, 30.0, 25.0): 0.00015221185706451248,
}
APPROX = {(0.25, 1.0): 0.496249162937456, (0.5, 1.0): 0.5042905457510949,
          (0.1, 10.0): 0.35769522794840768, (2.0, 0.3): 0.53477821333480714}
EXACT = {(0.5, 1.0): 0.5102992852, (0.25, 3.0): 0.4805188371}


def test_coherent_closed_form():
    assert lz.lz_coherent(math.log(2) / (2 * math.pi)) == pytest.approx(0.5, abs=1e-15)
    assert lz.lz_coherent(1e-12) < 1e-10
    assert lz.lz_coherent(50.0) == 1.0


def test_strong_dephasing_closed_form():
    assert lz.lz_strong_dephasing(0.1) == pytest.approx(0.35769522833198536, abs=1e-14)
    assert lz.lz_strong_dephasing(40.0) == pytest.approx(0.5, abs=1e-15)


def test_parameter_validation():
    with pytest.raises(ValueError):
        lz.lz_model(0.0, 1.0)
    with pytest.raises(ValueError):
        lz.lz_model(0.25, -1.0)
    with pytest.raises(ValueError):
        lz.lz_approx(0.25, -0.1)
    with pytest.raises(ValueError):
        lz.tau_star(0.0)


def test_projector_form_is_a_gauge_copy():
    rho0 = np.diag([1.0, 0.0]).astype(complex)
    a = integrate_exact(lz.lz_model(0.3, 0.7), rho0, -6.0, 6.0, tol=1e-12)
    b = integrate_exact(lz.lz_model(0.3, 0.7, projector_form=True), rho0, -6.0, 6.0, tol=1e-12)
    assert np.linalg.norm(a - b) < 1e-9


def test_reduced_ode_matches_closed_form():
    for d in (0.05, 0.25, 1.0, 2.0):
        assert abs(lz.strong_dephasing_ode(d, 1e3) - lz.lz_strong_dephasing(d)) < 1e-6


@pytest.mark.parametrize("delta", [0.05, 0.25, 1.0, 2.0])
def test_exact_coherent_limit(delta):
    p, info = lz.lz_exact(delta, 0.0, info=True)
    assert abs(p - lz.lz_coherent(delta)) < 1e-3
    assert abs(info.max_bloch_length - 1) < 1e-8


def test_exact_strong_dephasing_limit():
    assert abs(lz.lz_exact(0.25, 1e3) - lz.lz_strong_dephasing(0.25)) < 0.01 * lz.lz_strong_dephasing(0.25)


@pytest.mark.parametrize(("delta", "gamma"), sorted(EXACT))
def test_exact_against_density_matrix_oracle(delta, gamma):
    assert abs(lz.lz_exact(delta, gamma) - EXACT[(delta, gamma)]) < 2e-5


def test_exact_vanishes_without_coupling():
    assert lz.lz_exact(1e-6, 1.0) < 1e-4


def test_exact_reports_non_convergence():
    with pytest.raises(lz.LZConvergenceError):
        lz.lz_exact(0.25, 0.0, tau_max0=3.0, tol_outer=1e-12, max_doublings=1)


def test_incomplete_gamma_values():
    assert lz.incomplete_gamma_int(1, 2.0) == pytest.approx(math.exp(-2), rel=1e-14)
    assert lz.incomplete_gamma_int(3, 0.0) == pytest.approx(2.0, rel=1e-14)
    assert lz.incomplete_gamma_int(2, 1.0) == pytest.approx(2 * math.exp(-1), rel=1e-14)
    with pytest.raises(ValueError):
        lz.incomplete_gamma_int(0, 1.0)
    with pytest.raises(ValueError):
        lz.regularized_upper_gamma(2, -1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 60), st.floats(0.0, 80.0))
def test_regularized_gamma_matches_finite_sum(n, x):
    s = sum(math.exp(k * math.log(x) - x - math.lgamma(k + 1)) if x > 0 else float(k == 0) for k in range(n))
    assert lz.regularized_upper_gamma(n, x) == pytest.approx(s, rel=1e-12, abs=1e-300)


@pytest.mark.parametrize("args", sorted(PN))
def test_pn_against_high_precision(args):
    assert lz.pn_closed(*args) == pytest.approx(PN[args], rel=1e-13)


def test_pn_limits():
    L0 = 1.3
    assert lz.pn_closed(1, L0, 0.0) == pytest.approx(1 - math.exp(-L0), rel=1e-15)
    assert all(lz.pn_closed(n, L0, 0.0) == 0.0 for n in range(2, 10))
    assert lz.pn_closed(2, 1.0, 1e3) == pytest.approx(math.exp(-1) / 2, abs=1e-12)


@pytest.mark.parametrize("n", [2, 3])
def test_pn_small_return_exponent(n):
    a, b = 1e-5, 1e-4
    slope = math.log(lz.pn_closed(n, 0.8, b) / lz.pn_closed(n, 0.8, a)) / math.log(b / a)
    assert abs(slope - (n - 1)) < 0.05


@pytest.mark.parametrize("L0", [0.5, 2.0, 10.0])
@pytest.mark.parametrize("L1", [0.5, 2.0, 10.0])
def test_pn_normalization(L0, L1):
    lam = max(L0, L1)
    n_top = int(lam + 10 * math.sqrt(lam) + 50)
    assert abs(sum(lz.pn_closed(n, L0, L1) for n in range(n_top)) - 1) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 40), st.floats(0.0, 50.0), st.floats(0.0, 50.0))
def test_pn_is_probability(n, L0, L1):
    assert 0.0 <= lz.pn_closed(n, L0, L1) <= 1.0


def test_tau_star_values():
    for d, ref in TAU_STAR.items():
        assert lz.tau_star(d) == pytest.approx(ref, rel=1e-12)
    assert lz.tau_star(1e-4) == pytest.approx(5 / math.pi, abs=1e-4)
    assert lz.tau_star(10.0) == pytest.approx(math.pi * math.sqrt(10), rel=1e-4)


def test_approx_values_and_limits():
    for (d, g), ref in APPROX.items():
        assert lz.lz_approx(d, g) == pytest.approx(ref, abs=1e-12)
    for d in (0.05, 0.25, 1.0):
        assert lz.lz_approx(d, 0.0) == pytest.approx(lz.lz_coherent(d), abs=1e-14)
        assert lz.lz_approx(d, 1e6) == pytest.approx(lz.lz_strong_dephasing(d), abs=1e-5)


def test_approx_close_to_exact_mid_grid():
    assert abs(lz.lz_exact(0.5, 1.0) - lz.lz_approx(0.5, 1.0)) < 0.005


def test_birth_process_constant_rates_against_matrix_exponential():
    l0, l1, T, n_max = 1.1, 0.6, 2.5, 30
    p = lz.birth_process_integrate(lz.BirthRates.constant(l0, l1), T, n_max)
    Q = np.zeros((n_max + 1, n_max + 1))
    for k in range(n_max):
        r = l0 if k % 2 == 0 else l1
        Q[k, k] -= r
        Q[k + 1, k] += r
    ref = expm(Q * T)[:, 0]
    assert np.max(np.abs(p - ref)) < 1e-10
    assert abs(p.sum() - 1) < 1e-9
    assert p[0] == pytest.approx(math.exp(-l0 * T), rel=1e-9)


def test_birth_process_without_returns():
    p = lz.birth_process_integrate(lz.BirthRates.constant(0.9, 0.0), 2.0, 5)
    assert p[0] == pytest.approx(math.exp(-1.8), rel=1e-9)
    assert p[1] == pytest.approx(1 - math.exp(-1.8), rel=1e-9)
    assert np.all(p[2:] == 0)


def test_birth_process_tail_warning():
    with pytest.warns(lz.TailMassWarning):
        lz.birth_process_integrate(lz.BirthRates.constant(5.0, 5.0), 3.0, 3)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        lz.birth_process_integrate(lz.BirthRates.constant(0.5, 0.5), 1.0, 20)
    with pytest.raises(ValueError):
        lz.birth_process_integrate(lz.BirthRates.constant(0.5, 0.5), 1.0, 0)


def test_sweep_rows_are_delta_major():
    pts = lz.sweep_lz([0.25, 1.0], [0.0, 1.0])
    assert [(p.delta, p.gamma) for p in pts] == [(0.25, 0.0), (0.25, 1.0), (1.0, 0.0), (1.0, 1.0)]
    assert all(p.abs_error == abs(p.p_exact - p.p_approx) for p in pts)
    assert pts[0].abs_error < 2 * lz.TOL_OUTER
    with pytest.raises(ValueError):
        lz.sweep_lz([], [1.0])


def test_benchmark_states_stay_physical():
    rho0 = np.diag([1.0, 0.0]).astype(complex)
    for rho in integrate_exact(lz.lz_model(1.0, 3.0), rho0, -30.0, 30.0, tol=1e-11, times=np.linspace(-29, 30, 30)):
        d = check_density(rho)
        assert abs(d.trace_deviation) < 1e-9 and d.min_eigenvalue >= -1e-9
