"""Landau-Zener sweep with dephasing.

In rescaled time the two-level Hamiltonian is ``H(tau) = (tau/2) sigma_z +
sqrt(delta) sigma_x``, and dephasing acts through ``L = sqrt(gamma/2)
sigma_z``, so coherences decay at rate ``gamma``. The system starts in |1>
(Bloch z = +1) and the transition probability is the final population of |2>.

The approximation treats transitions as a birth process. Coherent
transitions happen at total intensity ``Lambda_0 = 2 pi delta``.
Dephasing-induced returns happen at ``Lambda_1 = gamma tau*``, with ``tau*``
the effective duration of the crossing.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import ode
from scipy.special import gammainc, gammaincc, gammaln

from . import dopri
from .dopri import IntegrationError
from .lindblad import LindbladModel, constant, linear
from .quantum import SIGMA_X, SIGMA_Z, basis

TOL_OUTER = 1e-4


@dataclass(frozen=True)
class LZParams:
    delta: float
    gamma: float

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if not self.gamma >= 0:
            raise ValueError("gamma must be non-negative")


@dataclass(frozen=True)
class LZPoint:
    delta: float
    gamma: float
    p_exact: float
    p_approx: float
    abs_error: float


class LZConvergenceError(RuntimeError):
    """lz_exact did not settle within the allowed tau_max doublings."""


def lz_model(delta: float, gamma: float, projector_form: bool = False) -> LindbladModel:
    """Finite-dimensional model of the dephased sweep.

    With ``projector_form`` the jump operator is ``sqrt(2 gamma)|2><2|``,
    which differs from ``sqrt(gamma/2) sigma_z`` by a gauge shift only.
    """
    LZParams(delta, gamma)
    if projector_form:
        L = math.sqrt(2 * gamma) * np.diag([0.0, 1.0])
    else:
        L = math.sqrt(gamma / 2) * SIGMA_Z
    terms = ((SIGMA_Z, linear(0.5)), (math.sqrt(delta) * SIGMA_X, constant(1.0)))
    return LindbladModel(terms, (L,))


LZ_INITIAL_STATE = basis(2, 0)


def lz_coherent(delta: float) -> float:
    """1 - exp(-2 pi delta)."""
    if delta < 0:
        raise ValueError("delta must be non-negative")
    return float(-math.expm1(-2 * math.pi * delta))


def lz_strong_dephasing(delta: float) -> float:
    """(1 - exp(-4 pi delta)) / 2."""
    if delta < 0:
        raise ValueError("delta must be non-negative")
    return float(-0.5 * math.expm1(-4 * math.pi * delta))


def _past_decay(delta: float, gamma: float, tau: float) -> float:
    """Adiabatic-elimination exponent accumulated over (-inf, -|tau|] (or [|tau|, inf))."""
    if gamma == 0:
        return 0.0
    return 4 * delta * (0.5 * math.pi - math.atan(abs(tau) / gamma))


def strong_dephasing_ode(delta: float, gamma: float, tol: float = 1e-12) -> float:
    """Integrate the reduced population equation over the whole sweep.

    Eliminating the coherence leaves ``dz/dtau = -4 delta gamma z / (tau^2 + gamma^2)``.
    In the variable ``theta = arctan(tau/gamma)`` the infinite sweep maps to
    ``(-pi/2, pi/2)``, so the integration needs no truncation.
    """
    def f(theta, z):
        tau_dot = gamma / np.cos(theta) ** 2
        return -4 * delta * gamma * z / ((gamma * np.tan(theta)) ** 2 + gamma**2) * tau_dot

    z = dopri.integrate(f, -0.5 * math.pi, 0.5 * math.pi, np.array([1.0]), rtol=tol, atol=tol)
    return float((1 - z[0]) / 2)


def _bloch_run(delta: float, gamma: float, tau_max: float, tol: float, n_window: int = 201):
    """Window-averaged transition probability and the largest Bloch-vector length.

    DOP853 handles all but the strongly damped cases; when it reports
    stiffness the run is repeated with LSODA.
    """
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            return _bloch_run_with("dop853", delta, gamma, tau_max, tol, n_window)
    except LZConvergenceError:
        return _bloch_run_with("lsoda", delta, gamma, tau_max, tol, n_window)


def _bloch_run_with(method: str, delta: float, gamma: float, tau_max: float, tol: float, n_window: int):
    sd = math.sqrt(delta)

    def rhs(t, r):
        return [-t * r[1] - gamma * r[0], t * r[0] - 2 * sd * r[2] - gamma * r[1], 2 * sd * r[1]]

    # start on the adiabatically slaved solution, including the decay the
    # population would have suffered before -tau_max
    t0 = -tau_max
    length = math.exp(-_past_decay(delta, gamma, t0))
    c = 2j * sd / (1j * t0 - gamma)
    z0 = length / math.sqrt(1 + abs(c) ** 2)
    r0 = [(c * z0).real, (c * z0).imag, z0]
    if method == "dop853":
        solver = ode(rhs).set_integrator("dop853", rtol=tol, atol=tol * 1e-2, nsteps=10**8)
    else:
        solver = ode(rhs).set_integrator("lsoda", rtol=tol, atol=tol * 1e-2, nsteps=10**7)
    solver.set_initial_value(r0, t0)
    window = np.linspace(0.9 * tau_max, tau_max, n_window)
    probs = np.empty(n_window)
    rmax = length
    # coarse checkpoints on the way keep the purity diagnostic meaningful
    for tc in np.linspace(t0, window[0], 41)[1:]:
        r = solver.integrate(tc)
        if not solver.successful():
            raise LZConvergenceError(f"Bloch integration failed at tau={tc:.4g}")
        rmax = max(rmax, float(np.linalg.norm(r)))
    for i, tw in enumerate(window):
        r = solver.integrate(tw) if tw > solver.t else solver.y
        if not solver.successful():
            raise LZConvergenceError(f"Bloch integration failed at tau={tw:.4g}")
        rmax = max(rmax, float(np.linalg.norm(r)))
        # population difference in the instantaneous eigenbasis, which no
        # longer changes coherently once the crossing is over
        z_ad = (2 * sd * r[0] + tw * r[2]) / math.hypot(tw, 2 * sd)
        z_inf = z_ad * math.exp(-_past_decay(delta, gamma, tw))
        probs[i] = 0.5 * (1 - z_inf)
    return float(probs.mean()), rmax


@dataclass(frozen=True)
class LZExactInfo:
    p: float
    tau_max: float
    doublings: int
    max_bloch_length: float


def lz_exact(delta: float, gamma: float, tol: float = 1e-10, *, tau_max0: float | None = None,
             tol_outer: float = TOL_OUTER, max_doublings: int = 4, info: bool = False):
    """Exact transition probability from the Bloch equations.

    Args:
        delta: adiabaticity parameter.
        gamma: dephasing rate (rescaled units).
        tol: local tolerance of the DOP853 integrator, in [1e-10, 1e-4].
        tau_max0: initial half-length of the sweep; defaults to
            ``30 (1 + sqrt(delta)) + 10``.
        tol_outer: convergence threshold between successive doublings.
        max_doublings: allowed doublings of ``tau_max``.
        info: also return an :class:`LZExactInfo`.

    Raises:
        LZConvergenceError: if successive results still differ by more than
            ``tol_outer`` after ``max_doublings`` doublings.
    """
    if not 1e-10 <= tol <= 1e-4:
        raise ValueError("tol must lie in [1e-10, 1e-4]")
    LZParams(max(delta, 1e-300), gamma)
    if delta == 0:
        return (0.0, LZExactInfo(0.0, 0.0, 0, 1.0)) if info else 0.0
    tau = tau_max0 if tau_max0 is not None else 30 * (1 + math.sqrt(delta)) + 10
    prev, rmax = _bloch_run(delta, gamma, tau, tol)
    for k in range(1, max_doublings + 1):
        tau *= 2
        cur, r2 = _bloch_run(delta, gamma, tau, tol)
        rmax = max(rmax, r2)
        if abs(cur - prev) < tol_outer:
            return (cur, LZExactInfo(cur, tau, k, rmax)) if info else cur
        prev = cur
    raise LZConvergenceError(f"lz_exact(delta={delta}, gamma={gamma}) did not converge")


def incomplete_gamma_int(n: int, x: float) -> float:
    """Upper incomplete gamma Gamma(n, x) for integer n >= 1.

    Computed as ``(n-1)! Q(n, x)`` with the regularized ``Q``; overflows to
    ``inf`` only where the exact value exceeds the float range.
    """
    if int(n) != n or n < 1:
        raise ValueError("n must be a positive integer")
    if not x >= 0:
        raise ValueError("x must be non-negative")
    q = gammaincc(n, x)
    if q == 0.0:
        return 0.0
    return float(math.exp(gammaln(n) + math.log(q)))


def regularized_upper_gamma(n: int, x: float) -> float:
    """Q(n, x) = Gamma(n, x) / (n-1)!, i.e. Pr[Poisson(x) < n]."""
    if int(n) != n or n < 1:
        raise ValueError("n must be a positive integer")
    if not x >= 0:
        raise ValueError("x must be non-negative")
    return float(gammaincc(n, x))


def _pois(n: int, lam: float) -> float:
    if lam == 0:
        return 1.0 if n == 0 else 0.0
    return math.exp(n * math.log(lam) - lam - gammaln(n + 1))


def pn_closed(n: int, L0: float, L1: float) -> float:
    """Probability of exactly n transitions in the two-rate birth process.

    ``P_n = Pois(n; L0) Pr[Pois(L1) >= n] + Pois(n-1; L1) Pr[Pois(L0) >= n]``
    for n >= 1, and ``P_0 = exp(-L0)``.
    """
    if int(n) != n or n < 0:
        raise ValueError("n must be a non-negative integer")
    if L0 < 0 or L1 < 0:
        raise ValueError("Lambda values must be non-negative")
    if n == 0:
        return math.exp(-L0)
    tail1 = float(gammainc(n, L1)) if L1 > 0 else 0.0
    tail0 = float(gammainc(n, L0)) if L0 > 0 else 0.0
    return _pois(n, L0) * tail1 + _pois(n - 1, L1) * tail0


def _one_minus_one_plus_a_exp(a: float) -> float:
    """1 - (1 + a) e^{-a} without cancellation for small a."""
    if a > 0.1:
        return -math.expm1(-a) - a * math.exp(-a)
    term, total, k = a * a / 2, 0.0, 2
    # sum_{k>=2} (-1)^k (k-1) a^k / k!
    while True:
        total += (-1) ** k * (k - 1) * term
        k += 1
        term *= a / k
        if term * k < 1e-18 * abs(total):
            return total


def tau_star(delta: float) -> float:
    """Effective crossing duration.

    ``pi tanh(5 delta/2) sqrt(delta (1 - e^{-16 delta})) / (1 - (1 + 2 pi delta) e^{-2 pi delta})``
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    num = math.pi * math.tanh(2.5 * delta) * math.sqrt(delta * -math.expm1(-16 * delta))
    return num / _one_minus_one_plus_a_exp(2 * math.pi * delta)


def lz_approx(delta: float, gamma: float) -> float:
    """Sum of the odd-order birth-process probabilities with L0 = 2 pi delta, L1 = gamma tau*."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    L0 = 2 * math.pi * delta
    L1 = gamma * tau_star(delta)
    total = 0.0
    n = 1
    while True:
        total += pn_closed(n, L0, L1)
        n += 2
        bound = float(gammainc(n, L0)) + (float(gammainc(n - 1, L1)) if L1 > 0 else 0.0)
        if bound < 1e-12:
            return total


@dataclass(frozen=True)
class BirthRates:
    """Rates of the alternating birth process and optional closed-form integrals."""

    lambda0: Callable[[float], float]
    lambda1: Callable[[float], float]
    Lambda0: Callable[[float], float] | None = None
    Lambda1: Callable[[float], float] | None = None

    @classmethod
    def constant(cls, l0: float, l1: float) -> BirthRates:
        if l0 < 0 or l1 < 0:
            raise ValueError("rates must be non-negative")
        return cls(lambda t: l0, lambda t: l1, lambda t: l0 * t, lambda t: l1 * t)


class TailMassWarning(UserWarning):
    """The truncated birth process leaked noticeable mass into its last state."""


def birth_process_integrate(rates: BirthRates, tau_end: float, n_max: int, tol: float = 1e-11):
    """Occupations p_0..p_{n_max} at ``tau_end`` starting from p_0 = 1 at tau = 0.

    Even states advance with ``lambda0``, odd states with ``lambda1``; the last
    state keeps what reaches it, so the total stays one. A
    :class:`TailMassWarning` is issued when it holds more than 1e-6.
    """
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    if tau_end < 0:
        raise ValueError("tau_end must be non-negative")
    even = np.arange(n_max + 1) % 2 == 0

    def f(t, p):
        lam = np.where(even, rates.lambda0(t), rates.lambda1(t))
        if np.any(lam < 0):
            raise ValueError("rates must be non-negative")
        out = -lam * p
        out[-1] = 0.0
        out[1:] += (lam * p)[:-1]
        return out

    p0 = np.zeros(n_max + 1)
    p0[0] = 1.0
    p = dopri.integrate(f, 0.0, tau_end, p0, rtol=tol, atol=tol * 1e-2) if tau_end > 0 else p0
    p = np.maximum(p, 0.0)
    if p[-1] > 1e-6:
        warnings.warn(f"birth process truncation holds {p[-1]:.3g} in state {n_max}", TailMassWarning,
                      stacklevel=2)
    return p


def sweep_lz(deltas: Sequence[float], gammas: Sequence[float], tol: float = 1e-10) -> list[LZPoint]:
    """Exact and approximate transition probabilities on a (delta, gamma) grid, delta-major."""
    if not len(deltas) or not len(gammas):
        raise ValueError("delta and gamma grids must be non-empty")
    out = []
    for d in deltas:
        for g in gammas:
            pe = lz_exact(d, g, tol)
            pa = lz_approx(d, g)
            out.append(LZPoint(float(d), float(g), pe, pa, abs(pe - pa)))
    return out


__all__ = [
    "BirthRates", "IntegrationError", "LZ_INITIAL_STATE", "LZConvergenceError", "LZExactInfo", "LZParams",
    "LZPoint", "TailMassWarning", "TOL_OUTER", "birth_process_integrate", "incomplete_gamma_int",
    "lz_approx", "lz_coherent", "lz_exact", "lz_model", "lz_strong_dephasing", "pn_closed",
    "regularized_upper_gamma", "strong_dephasing_ode", "sweep_lz", "tau_star",
]
