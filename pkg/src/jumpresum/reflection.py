"""Reflection of a free particle by a detector watching the half-line x > 0.

Two identical channels ``L = sqrt(gamma) Theta(x)`` make the no-jump
evolution a Schrodinger equation with the imaginary step ``-i gamma Theta(x)``.
With the sequence-conditioned gauge every jump flips the watched half-line,
so even jump counts mean the particle ends up on the left.

Units are hbar = m = 1. ``e_ratio = k0^2 / (2 gamma)`` is the incident energy
over hbar gamma.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import integrate

from .adaptive import SequenceConditioned
from .grid1d import WavePacketSpec, correction_integral, gaussian_packet
from .gridtraj import GridEngine, GridMCSettings
from .lindblad import GridOperator, LindbladModel, constant
from .quantum import Grid1D, GridWave, half_line_mask


@dataclass(frozen=True)
class ReflectionPoint:
    e_ratio: float
    p0: float
    p_approx: float
    p_mc: float
    p_mc_err: float

    def __post_init__(self):
        for name in ("p0", "p_approx", "p_mc"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0 or math.isnan(v)):
                raise ValueError(f"{name}={v} outside [0, 1]")


def e_ratio_of(k0: float, gamma: float) -> float:
    return k0 * k0 / (2.0 * gamma)


def p0_reflect(e_ratio: float) -> float:
    """Reflection probability of a plane wave at the imaginary step."""
    if not e_ratio > 0:
        raise ValueError("e_ratio must be positive")
    s = np.sqrt(1 + 1j / e_ratio)  # principal branch, Re s > 0
    return float(abs((1 - s) / (1 + s)) ** 2)


def _p0_of_k(k: float, gamma: float) -> float:
    k = abs(k)
    return 1.0 if k == 0 else p0_reflect(k * k / (2 * gamma))


def kappa(k0: float, gamma: float) -> complex:
    """Complex wavenumber sqrt(k0^2 + 2 i gamma) inside the watched region."""
    return complex(np.sqrt(complex(k0 * k0, 2 * gamma)))


def psi1_momentum(k0: float, gamma: float, k):
    """Momentum amplitude of the state right after the first jump.

    It is the Lorentzian ``sqrt(2 Im kappa / 2 pi) * i / (kappa - k)``.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    kap = kappa(k0, gamma)
    return np.sqrt(2 * kap.imag / (2 * np.pi)) * 1j / (kap - np.asarray(k))


def lorentzian_grid(k0: float, gamma: float, length_factor: float = 1024.0, k_factor: float = 400.0,
                    max_points: int = 1 << 20) -> Grid1D:
    """Grid wide enough for the evanescent tail and fine enough for the Lorentzian.

    The box spans ``length_factor / Im kappa``; the momentum cutoff exceeds
    ``Re kappa + k_factor Im kappa``.
    """
    kap = kappa(k0, gamma)
    length = length_factor / kap.imag
    k_need = kap.real + k_factor * kap.imag
    n = 1 << max(10, math.ceil(math.log2(k_need * length / math.pi)))
    if n > max_points:
        raise ValueError(f"Lorentzian grid needs {n} points (limit {max_points})")
    return Grid1D(n, -0.5 * length, 0.5 * length)


def psi1_on_grid(k0: float, gamma: float, grid: Grid1D) -> tuple[GridWave, float]:
    """Normalized grid version of the post-jump state and the captured norm.

    The analytic Lorentzian is sampled in momentum space; the norm lost to the
    momentum cutoff is returned so callers can rescale bilinear quantities.
    """
    amps = psi1_momentum(k0, gamma, grid.k)
    wave = GridWave(grid, amps, "momentum")
    captured = wave.norm2()
    return GridWave(grid, amps / math.sqrt(captured), "momentum"), captured


def lorentzian_part(k0: float, gamma: float, epsabs: float = 1e-8) -> float:
    """Weight of the post-jump state that is not reflected back on its first pass.

    Right-moving components leave for good; left-moving ones return to the
    step and are reflected without a jump with probability ``P_0(|k|)``.
    """
    def density(k):
        return float(abs(psi1_momentum(k0, gamma, k)) ** 2)

    kap = kappa(k0, gamma)
    neg, e1 = integrate.quad(lambda k: _p0_of_k(k, gamma) * density(k), -np.inf, 0.0, epsabs=epsabs,
                             limit=400)
    pos_a, e2 = integrate.quad(density, 0.0, kap.real, epsabs=epsabs, limit=400)
    pos_b, e3 = integrate.quad(density, kap.real, np.inf, epsabs=epsabs, limit=400)
    if e1 + e2 + e3 > 10 * epsabs:
        raise RuntimeError("momentum quadrature did not reach its tolerance")
    return neg + pos_a + pos_b


def correction_part(k0: float, gamma: float, grid: Grid1D | None = None, tol: float = 1e-6) -> float:
    """Norm-decay correction of the one-jump weight, on a Lorentzian grid.

    The default grid resolves the correction to a few 1e-5; ``tol`` bounds
    the quadrature error on top of that.
    """
    grid = grid or lorentzian_grid(k0, gamma)
    psi, captured = psi1_on_grid(k0, gamma, grid)
    return captured * correction_integral(psi, gamma, tol)


def p1_reflect(k0: float, gamma: float) -> float:
    """Probability of exactly one jump."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    if not k0 > 0:
        raise ValueError("k0 must be positive")
    p0 = p0_reflect(e_ratio_of(k0, gamma))
    value = (lorentzian_part(k0, gamma) + correction_part(k0, gamma)) * (1 - p0)
    return float(min(max(value, 0.0), 1 - p0))


class ReflectionFlagged(NamedTuple):
    value: float
    clamped: bool


def total_reflection_from(p0: float, p1: float) -> ReflectionFlagged:
    """Sum of even orders under a geometric continuation of the series.

    Pairs with ``p0 + p1`` above one by at most 1e-9 are clamped and flagged.
    """
    if not (0 <= p0 <= 1 and p1 >= 0):
        raise ValueError("invalid (P0, P1) pair")
    clamped = False
    if p0 + p1 > 1:
        if p0 + p1 > 1 + 1e-9:
            raise ValueError("P0 + P1 exceeds one")
        p1, clamped = 1 - p0, True
    q = 1 - p0
    if q == 0:
        return ReflectionFlagged(1.0, clamped)
    value = 1 - q * q / (2 * q - p1)
    return ReflectionFlagged(float(min(max(value, 0.0), 1.0)), clamped)


def geometric_even_sum(p0: float, p1: float, n_max: int = 200) -> float:
    """Explicit partial sum of the even orders of the same geometric series."""
    q = 1 - p0
    r = 1 - p1 / q
    total, pn = p0, p1
    for n in range(1, n_max + 1):
        if n % 2 == 0:
            total += pn
        pn *= r
    return total


def total_reflection(k0: float, gamma: float) -> float:
    if gamma == 0:
        return 0.0
    p0 = p0_reflect(e_ratio_of(k0, gamma))
    return total_reflection_from(p0, p1_reflect(k0, gamma)).value


def reflection_model(grid: Grid1D, gamma: float) -> LindbladModel:
    """Free particle with two identical detector channels on x >= 0."""
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    L = GridOperator(grid, 0.0, math.sqrt(gamma) * half_line_mask(grid, "positive"))
    return LindbladModel(((GridOperator(grid, 1.0), constant(1.0)),), (L, L), grid)


def reflection_settings(k0: float, gamma: float, dt_scale: float = 0.25, zone: float = 1.0) -> GridMCSettings:
    """Step ``dt_scale / |kappa|^2`` and an infinite horizon for escaped mass."""
    return GridMCSettings(dt=dt_scale / abs(kappa(k0, gamma)) ** 2, zone=zone, far_horizon=math.inf)


def t_cap(packet: WavePacketSpec, grid: Grid1D) -> float:
    return 4.0 * (abs(packet.x0) + 0.5 * grid.length) / packet.k0


class MCReflection(NamedTuple):
    probability: float
    stderr: float
    direction_probability: float
    consistent: bool
    undecided: int
    overflow: int
    n_traj: int
    weights: np.ndarray


class UndecidedOverflowError(RuntimeError):
    """Too many trajectories were still undecided at the time cap."""

    def __init__(self, message: str, result: MCReflection):
        super().__init__(message)
        self.result = result


UNDECIDED_LIMIT = 1e-3


def mc_reflection(k0: float, gamma: float, grid: Grid1D, packet: WavePacketSpec, n_traj: int, seed: int, *,
                  dt_scale: float = 0.25, zone: float = 1.0, n_cap: int = 64) -> MCReflection:
    """Monte Carlo reflection probability from the parity of the jump count.

    The packet's wavenumber must equal ``k0``. The direction of the finalized
    branch gives an independent classification; ``consistent`` records
    whether both agree within two standard errors.

    Raises:
        UndecidedOverflowError: if more than 0.1% of the runs are undecided
            at the time cap; the partial result is attached.
    """
    if n_traj < 10_000:
        raise ValueError("n_traj must be at least 1e4")
    if not math.isclose(packet.k0, k0):
        raise ValueError("packet wavenumber differs from k0")
    psi = gaussian_packet(packet, grid)
    if gamma == 0:
        w = np.zeros(1)
        w[0] = 1.0
        return MCReflection(0.0, 0.0, 0.0, True, 0, 0, n_traj, w)
    model = reflection_model(grid, gamma)
    eng = GridEngine(model, SequenceConditioned(), reflection_settings(k0, gamma, dt_scale, zone), t_cap(packet, grid))
    run = eng.run(psi, n_traj, seed, n_cap=n_cap)
    done = ~run.pending & ~run.overflow
    n_done = int(done.sum())
    even = run.counts[done] % 2 == 0
    p = float(even.mean()) if n_done else math.nan
    err = math.sqrt(p * (1 - p) / n_done) if n_done else math.nan
    p_dir = float(np.mean(run.direction[done] < 0)) if n_done else math.nan
    consistent = abs(p - p_dir) <= 2 * err + 1e-15
    weights = np.bincount(run.counts[done], minlength=1) / n_traj
    res = MCReflection(p, err, p_dir, bool(consistent), int(run.pending.sum()), int(run.overflow.sum()),
                       n_traj, weights)
    if res.undecided + res.overflow > UNDECIDED_LIMIT * n_traj:
        raise UndecidedOverflowError(
            f"{res.undecided} undecided and {res.overflow} capped trajectories out of {n_traj}", res)
    return res


@dataclass(frozen=True)
class ReflectionConfig:
    """Sweep settings in units of the incident wavenumber (k0 = 1)."""

    n_traj: int = 100_000
    seed: int = 42
    n_points: int = 4096
    half_width: float = 128.0
    x0: float = -50.0
    sigma_x: float = 10.0
    dt_scale: float = 0.25
    zone: float = 1.0
    workers: int = 1
    run_mc: bool = True
    grid: Grid1D = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "grid", Grid1D(self.n_points, -self.half_width, self.half_width))


def point_seed(seed: int, index: int) -> int:
    """Independent 64-bit seed for sweep point ``index``."""
    return int(np.random.SeedSequence(seed, spawn_key=(index,)).generate_state(1, np.uint64)[0])


def _sweep_point(args) -> ReflectionPoint:
    e, index, cfg = args
    k0 = 1.0
    gamma = 1.0 / (2.0 * e)
    p0 = p0_reflect(e)
    p_approx = total_reflection(k0, gamma)
    if not cfg.run_mc:
        return ReflectionPoint(float(e), p0, p_approx, math.nan, math.nan)
    packet = WavePacketSpec(cfg.x0, k0, cfg.sigma_x)
    res = mc_reflection(k0, gamma, cfg.grid, packet, cfg.n_traj, point_seed(cfg.seed, index),
                        dt_scale=cfg.dt_scale, zone=cfg.zone)
    return ReflectionPoint(float(e), p0, p_approx, res.probability, res.stderr)


def sweep_reflection(e_ratios: Sequence[float], config: ReflectionConfig | None = None) -> list[ReflectionPoint]:
    """Analytic and Monte Carlo reflection probabilities, one point per ratio.

    Points are returned in input order; each uses its own seed derived from
    ``config.seed`` and its position, so results do not depend on ``workers``.
    """
    cfg = config or ReflectionConfig()
    if not len(e_ratios):
        raise ValueError("e_ratios must be non-empty")
    jobs = [(float(e), i, cfg) for i, e in enumerate(e_ratios)]
    if cfg.workers <= 1:
        return [_sweep_point(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
        return list(ex.map(_sweep_point, jobs))


__all__ = [
    "MCReflection", "ReflectionConfig", "ReflectionFlagged", "ReflectionPoint", "UNDECIDED_LIMIT",
    "UndecidedOverflowError", "correction_part", "e_ratio_of", "geometric_even_sum", "kappa",
    "lorentzian_grid", "lorentzian_part", "mc_reflection", "p0_reflect", "p1_reflect", "point_seed",
    "psi1_momentum", "psi1_on_grid", "reflection_model", "reflection_settings", "sweep_reflection", "t_cap",
    "total_reflection", "total_reflection_from",
]
