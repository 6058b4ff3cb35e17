"""Invariant suite behind ``jumpresum validate``.

Each group measures a worst-case value and compares it with a tolerance.
``tighten`` divides every tolerance, which is how the harness checks that it
can fail.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import lz, reflection
from .adaptive import StateConditioned, branch_weight_quadrature, estimate_weights
from .grid1d import SplitStepPlan, WavePacketSpec, gaussian_packet, split_step_evolve
from .lindblad import AlphaVector, check_density, gauge_transform, integrate_exact
from .models import random_density, random_model
from .quantum import Grid1D


@dataclass(frozen=True)
class Outcome:
    name: str
    worst: float
    tol: float
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(self.worst <= self.tol)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: worst={self.worst:.3g} tol={self.tol:.3g} ({self.seconds:.1f}s)"


def _gauge(quick: bool, seed: int) -> float:
    rng = np.random.default_rng([seed, 1])
    worst = 0.0
    for i in range(10 if quick else 100):
        dim = 2 + i % 2
        m = random_model(rng, dim, 2)
        alpha = AlphaVector(tuple(rng.normal(size=2) + 1j * rng.normal(size=2)))
        rho0 = random_density(rng, dim)
        a = integrate_exact(m, rho0, 0.0, 1.0, tol=1e-12)
        b = integrate_exact(gauge_transform(m, alpha), rho0, 0.0, 1.0, tol=1e-12)
        worst = max(worst, float(np.linalg.norm(a - b)))
    return worst


def _trace_positivity(quick: bool, seed: int) -> float:
    worst = 0.0
    cases = [(0.25, 1.0), (1.0, 0.3)] if quick else [(d, g) for d in (0.05, 0.25, 1.0) for g in (0.1, 1.0, 10.0)]
    for d, g in cases:
        rho0 = np.diag([1.0, 0.0]).astype(complex)
        states = integrate_exact(lz.lz_model(d, g), rho0, -20.0, 20.0, tol=1e-11, times=np.linspace(-19, 20, 40))
        for rho in states:
            diag = check_density(rho)
            worst = max(worst, abs(diag.trace_deviation), max(0.0, -diag.min_eigenvalue))
    return worst


def _bloch_purity(quick: bool, seed: int) -> float:
    deltas = (0.25,) if quick else (0.05, 0.25, 1.0)
    worst = 0.0
    for d in deltas:
        _, info = lz.lz_exact(d, 0.0, info=True)
        worst = max(worst, abs(info.max_bloch_length - 1.0))
    return worst


def _birth_normalization(quick: bool, seed: int) -> float:
    worst = 0.0
    for L0 in np.linspace(0.1, 8.0, 5):
        for L1 in np.linspace(0.0, 20.0, 5):
            total = sum(lz.pn_closed(n, L0, L1) for n in range(0, 200))
            worst = max(worst, abs(total - 1.0))
    return worst


def _poisson_limits(quick: bool, seed: int) -> float:
    worst = 0.0
    for L0 in (0.3, 1.3, 4.0):
        # no returns: only the first coherent transition can happen
        exact0 = [math.exp(-L0), -math.expm1(-L0)]
        for n in range(30):
            ref = exact0[n] if n < 2 else 0.0
            worst = max(worst, abs(lz.pn_closed(n, L0, 0.0) - ref))
        # instantaneous returns: the count is Poisson in Lambda_0
        for n in range(30):
            pois = math.exp(n * math.log(L0) - L0 - math.lgamma(n + 1))
            worst = max(worst, abs(lz.pn_closed(n, L0, 1e3) - pois))
    return worst


def _small_return_scaling(quick: bool, seed: int) -> float:
    """Deviation of d log P_n / d log Lambda_1 from n - 1 as Lambda_1 -> 0."""
    worst = 0.0
    for L0 in (0.5, 2.0):
        for n in (2, 3):
            a, b = 1e-5, 1e-4
            slope = math.log(lz.pn_closed(n, L0, b) / lz.pn_closed(n, L0, a)) / math.log(b / a)
            worst = max(worst, abs(slope - (n - 1)))
    return worst


def _limits(quick: bool, seed: int) -> float:
    deltas = (0.25,) if quick else (0.05, 0.25, 1.0, 2.0)
    worst = 0.0
    for d in deltas:
        worst = max(worst, abs(lz.lz_exact(d, 0.0) - lz.lz_coherent(d)) / 1e-3)
        worst = max(worst, abs(lz.strong_dephasing_ode(d, 1e3) - lz.lz_strong_dephasing(d)) / 1e-6)
    return worst


def _approx_interpolation(quick: bool, seed: int) -> float:
    worst = 0.0
    for d in (0.05, 0.25, 1.0, 2.0):
        lo, hi = sorted((lz.lz_coherent(d), lz.lz_strong_dephasing(d)))
        for g in np.geomspace(1e-3, 1e3, 25):
            p = lz.lz_approx(d, g)
            worst = max(worst, lo - p, p - hi)
    return max(worst, 0.0)


def _geometric(quick: bool, seed: int) -> float:
    worst = 0.0
    for p0 in np.linspace(0.0, 0.9, 7):
        for frac in np.linspace(0.05, 1.0, 7):
            p1 = frac * (1 - p0)
            closed = reflection.total_reflection_from(p0, p1).value
            worst = max(worst, abs(closed - reflection.geometric_even_sum(p0, p1, 4000 if frac < 0.1 else 200)))
    return worst


def _lorentzian_norm(quick: bool, seed: int) -> float:
    from scipy import integrate

    worst = 0.0
    for k0 in (0.1, 1.0, 10.0):
        for g in (0.01, 1.0, 10.0):
            kap = reflection.kappa(k0, g)

            def dens(k):
                return float(abs(reflection.psi1_momentum(k0, g, k)) ** 2)

            total = sum(integrate.quad(dens, a, b, epsabs=1e-12, epsrel=1e-12, limit=500)[0]
                        for a, b in ((-np.inf, 0.0), (0.0, kap.real), (kap.real, np.inf)))
            worst = max(worst, abs(total - 1.0))
    return worst


def _norm_monotone(quick: bool, seed: int) -> float:
    g = Grid1D(1024, -64.0, 64.0)
    psi = gaussian_packet(WavePacketSpec(-25.0, 2.0, 5.0), g)
    plan = SplitStepPlan.imaginary_step(g, 0.05, 0.5, max_energy=2.0)
    worst, prev = 0.0, 1.0
    for _ in range(200 if quick else 800):
        psi = split_step_evolve(psi, plan, 1)
        n = psi.norm2()
        worst = max(worst, n - prev)
        prev = n
    return max(worst, 0.0)


def _unraveling(quick: bool, seed: int) -> float:
    """Largest |MC - quadrature| in units of the standard error (w0 and w1)."""
    model = lz.lz_model(0.25, 1.0)
    n = 2000 if quick else 20000
    tab = estimate_weights(model, StateConditioned(), lz.LZ_INITIAL_STATE, 8.0, n, seed, t0=-8.0, tol=1e-7)
    ref = branch_weight_quadrature(model, StateConditioned(), lz.LZ_INITIAL_STATE, 8.0, 1, t0=-8.0)
    worst = 0.0
    for k in (0, 1):
        w = tab.weights[k] if k < len(tab.weights) else 0.0
        se = max(tab.stderr[k] if k < len(tab.stderr) else 0.0, 1e-12)
        worst = max(worst, abs(w - ref[k]) / se)
    return worst


GROUPS: list[tuple[str, Callable[[bool, int], float], float, bool]] = [
    ("gauge invariance", _gauge, 1e-8, True),
    ("trace and positivity", _trace_positivity, 1e-9, True),
    ("bloch purity at gamma=0", _bloch_purity, 1e-8, True),
    ("birth-process normalization", _birth_normalization, 1e-12, True),
    ("birth-process poisson limits", _poisson_limits, 1e-6, True),
    ("birth-process small-return exponent", _small_return_scaling, 0.05, True),
    ("lz limits (scaled to tolerance)", _limits, 1.0, True),
    ("lz_approx between limits", _approx_interpolation, 0.02, True),
    ("geometric series closed form", _geometric, 1e-12, True),
    ("lorentzian normalization", _lorentzian_norm, 1e-8, True),
    ("split-step norm monotonicity", _norm_monotone, 1e-15, True),
    ("unraveling vs quadrature (sigma)", _unraveling, 3.0, True),
]


def run(quick: bool = False, tighten: float = 1.0, seed: int = 42, echo: Callable[[str], None] | None = None
        ) -> list[Outcome]:
    if tighten <= 0:
        raise ValueError("tighten must be positive")
    out = []
    for name, fn, tol, in_quick in GROUPS:
        if quick and not in_quick:
            continue
        t = time.perf_counter()
        worst = float(fn(quick, seed))
        o = Outcome(name, worst, tol / tighten, time.perf_counter() - t)
        out.append(o)
        if echo:
            echo(o.line())
    return out
