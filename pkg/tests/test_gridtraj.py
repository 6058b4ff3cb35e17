from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import stats

from jumpresum.adaptive import FixedAlpha, SequenceConditioned, StateConditioned, estimate_weights, sample_trajectory
from jumpresum.grid1d import WavePacketSpec, gaussian_packet
from jumpresum.gridtraj import GridEngine, GridMCSettings, grid_jump_counts
from jumpresum.lindblad import AlphaVector, GridOperator, LindbladModel, constant
from jumpresum.quantum import Grid1D
from jumpresum.reflection import reflection_model, reflection_settings


@pytest.fixture(scope="module")
def grid():
    return Grid1D(1024, -128.0, 128.0)


def _uniform_model(grid, gamma):
    L = GridOperator(grid, 0.0, math.sqrt(gamma) * np.ones(grid.n_points))
    return LindbladModel(((GridOperator(grid, 1.0), constant(1.0)),), (L, L), grid)


def test_state_independent_rate_gives_poisson_counts(grid):
    gamma, t = 0.4, 2.0
    psi = gaussian_packet(WavePacketSpec(-50.0, 1.0, 10.0), grid)
    model = _uniform_model(grid, gamma)
    counts, overflow = grid_jump_counts(model, FixedAlpha(AlphaVector.zeros(2)), psi, t, 20_000, 42,
                                        settings=GridMCSettings(dt=0.05))
    assert overflow == 0
    n = counts.sum()
    lam = 2 * gamma * t
    k = np.arange(len(counts))
    expected = n * stats.poisson.pmf(k, lam)
    keep = expected > 20
    chi2 = float(np.sum((counts[keep] - expected[keep]) ** 2 / expected[keep]))
    assert stats.chi2.sf(chi2, keep.sum() - 1) > 1e-3


def test_runs_are_repeatable_and_index_addressed(grid):
    gamma = 0.5
    psi = gaussian_packet(WavePacketSpec(-50.0, 1.0, 10.0), grid)
    model = reflection_model(grid, gamma)
    eng = GridEngine(model, SequenceConditioned(), reflection_settings(1.0, gamma), 60.0)
    a = eng.run(psi, 3000, 7)
    b = eng.run(psi, 3000, 7)
    assert np.array_equal(a.counts, b.counts) and np.array_equal(a.pending, b.pending)
    c = eng.run(psi, 1000, 7, indices=np.arange(2000, 3000))
    assert np.array_equal(c.counts, a.counts[2000:])


def test_estimate_weights_dispatches_to_grid_engine(grid):
    gamma = 0.5
    psi = gaussian_packet(WavePacketSpec(-50.0, 1.0, 10.0), grid)
    model = _uniform_model(grid, gamma)
    tab = estimate_weights(model, FixedAlpha(AlphaVector.zeros(2)), psi, 1.0, 4000, 3)
    assert abs(tab.weights[0] - math.exp(-2 * gamma)) < 4 * tab.stderr[0]
    assert sum(tab.counts) == 4000


def test_single_grid_trajectory(grid):
    psi = gaussian_packet(WavePacketSpec(-50.0, 1.0, 10.0), grid)
    tr = sample_trajectory(_uniform_model(grid, 0.3), StateConditioned(), psi, 5.0, 11, index=4)
    assert 0.0 < tr.survival <= 1.0 + 1e-6
    assert all(b > a for a, b in zip(tr.record.times, tr.record.times[1:]))
    assert not tr.overflow


def test_state_conditioned_uniform_rate_never_jumps(grid):
    # L proportional to the identity is removed entirely by re-centring
    psi = gaussian_packet(WavePacketSpec(-50.0, 1.0, 10.0), grid)
    counts, _ = grid_jump_counts(_uniform_model(grid, 0.8), StateConditioned(), psi, 3.0, 2000, 5,
                                 settings=GridMCSettings(dt=0.05))
    assert counts.tolist() == [2000]
