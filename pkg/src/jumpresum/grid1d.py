"""Wave packets and non-Hermitian split-operator propagation on a 1D grid.

Units are hbar = m = 1. Propagation uses Strang splitting,
``exp(-iV dt/2) exp(-i p^2 dt/2) exp(-iV dt/2)``, with a complex potential
whose imaginary part is non-positive so every step is norm-decreasing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .quantum import Grid1D, GridWave, half_line_mask, to_momentum, to_position


@dataclass(frozen=True)
class WavePacketSpec:
    """Gaussian packet centred at ``x0 < 0`` moving right with wavenumber ``k0``."""

    x0: float
    k0: float
    sigma_x: float

    def __post_init__(self):
        if not self.x0 < 0:
            raise ValueError("packet must start on the negative half-line")
        if not self.k0 > 0:
            raise ValueError("k0 must be positive")
        if self.sigma_x * self.k0 < 10:
            raise ValueError("sigma_x * k0 must be at least 10 (narrow momentum spread)")
        if abs(self.x0) < 5 * self.sigma_x:
            raise ValueError("|x0| must be at least 5 sigma_x")

    @property
    def sigma_k(self) -> float:
        return 1.0 / (2.0 * self.sigma_x)


def gaussian_packet(spec: WavePacketSpec, grid: Grid1D) -> GridWave:
    """Normalized Gaussian packet sampled on ``grid``.

    Raises:
        ValueError: if the packet does not fit (centre within 5 sigma of the
            left edge, or edge density above 1e-12 of the peak).
    """
    if not grid.x_min + 5 * spec.sigma_x < spec.x0:
        raise ValueError("packet too close to the left box edge")
    edge = min(spec.x0 - grid.x_min, grid.x_max - spec.x0)
    if np.exp(-(edge**2) / (2 * spec.sigma_x**2)) > 1e-12:
        raise ValueError("packet tails exceed 1e-12 at the box edge")
    x = grid.x
    psi = np.exp(-((x - spec.x0) ** 2) / (4 * spec.sigma_x**2) + 1j * spec.k0 * x)
    return GridWave(grid, psi, "position").normalized()


def mean_position(w: GridWave) -> float:
    p = np.abs(w.amplitudes) ** 2
    return float(np.sum(w.grid.x * p) / np.sum(p))


def mean_momentum(w: GridWave) -> float:
    m = to_momentum(w) if w.representation == "position" else w
    p = np.abs(m.amplitudes) ** 2
    return float(np.sum(w.grid.k * p) / np.sum(p))


def momentum_variance(w: GridWave) -> float:
    m = to_momentum(w) if w.representation == "position" else w
    p = np.abs(m.amplitudes) ** 2
    p = p / p.sum()
    mu = np.sum(w.grid.k * p)
    return float(np.sum((w.grid.k - mu) ** 2 * p))


@dataclass(frozen=True)
class SplitStepPlan:
    """Precomputed Strang factors for ``H = p^2/2 + V(x)`` with complex ``V``.

    ``max_energy`` is the largest kinetic energy the propagated states carry
    with appreciable weight; ``dt * max_energy < 0.5`` is enforced. It
    defaults to the grid's maximum, ``k_max^2 / 2``.
    """

    grid: Grid1D
    dt: float
    potential: np.ndarray
    max_energy: float | None = None
    kinetic_phase: np.ndarray = field(init=False, repr=False)
    potential_factor: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        v = np.array(self.potential, dtype=complex)
        if v.shape != (self.grid.n_points,):
            raise ValueError("potential must have one value per grid point")
        if np.any(v.imag > 0):
            raise ValueError("imaginary part of the potential must be non-positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        e_max = self.max_energy if self.max_energy is not None else 0.5 * np.max(self.grid.k**2)
        if self.dt * e_max >= 0.5:
            raise ValueError(f"dt * max_energy = {self.dt * e_max:.3g} violates the 0.5 rad guard")
        v.flags.writeable = False
        kin = np.exp(-0.5j * self.grid.k**2 * self.dt)
        pot = np.exp(-0.5j * v * self.dt)
        kin.flags.writeable = False
        pot.flags.writeable = False
        object.__setattr__(self, "potential", v)
        object.__setattr__(self, "kinetic_phase", kin)
        object.__setattr__(self, "potential_factor", pot)

    @classmethod
    def imaginary_step(cls, grid: Grid1D, dt: float, gamma: float, side: str = "positive",
                       max_energy: float | None = None) -> SplitStepPlan:
        """Plan for ``p^2/2 - i gamma Theta(+-x)``."""
        v = -1j * gamma * half_line_mask(grid, side)
        return cls(grid, dt, v, max_energy)


def split_step_evolve(wave: GridWave, plan: SplitStepPlan, n_steps: int) -> GridWave:
    """Apply ``n_steps`` Strang steps to a position-space wave."""
    if wave.grid != plan.grid:
        raise ValueError("grid mismatch")
    if wave.representation != "position":
        raise ValueError("split_step_evolve expects a position-space wave")
    psi = np.array(wave.amplitudes)
    half, kin = plan.potential_factor, plan.kinetic_phase
    for _ in range(int(n_steps)):
        psi = half * np.fft.ifft(kin * np.fft.fft(half * psi))
    return GridWave(plan.grid, psi, "position")


def momentum_filter(w: GridWave, sign: int) -> GridWave:
    """Theta(+k) (``sign=+1``, including k = 0) or Theta(-k) applied to ``w``."""
    m = to_momentum(w) if w.representation == "position" else w
    mask = (w.grid.k >= 0) if sign > 0 else (w.grid.k < 0)
    out = GridWave(w.grid, m.amplitudes * mask, "momentum")
    return to_position(out) if w.representation == "position" else out


def correction_overlap(psi1: GridWave, gamma: float, t: float) -> float:
    """2 Re <psi_-(t)| Theta(-x) |psi_+(t)> for the momentum halves of ``psi1``.

    ``psi_+`` and ``psi_-`` are the k >= 0 and k < 0 components, each
    propagated freely for time ``t``. This is the expectation value of
    ``Theta(-x) - Theta_-(k) Theta(-x) Theta_-(k) - Theta_+(k) Theta(-x) Theta_+(k)``
    in the free Heisenberg picture. ``gamma`` only enters through validation;
    the operator itself involves free motion alone.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    if t < 0:
        raise ValueError("t must be non-negative")
    if abs(psi1.norm2() - 1.0) > 1e-6:
        raise ValueError("psi1 must be normalized")
    g = psi1.grid
    phi = to_momentum(psi1) if psi1.representation == "position" else psi1
    phase = np.exp(-0.5j * g.k**2 * t)
    plus = to_position(GridWave(g, phi.amplitudes * (g.k >= 0) * phase, "momentum")).amplitudes
    minus = to_position(GridWave(g, phi.amplitudes * (g.k < 0) * phase, "momentum")).amplitudes
    neg = g.x < 0
    val = 2.0 * np.real(np.vdot(minus[neg], plus[neg])) * g.dx
    return float(np.clip(val, -1.0, 1.0))


def correction_integral(psi1: GridWave, gamma: float, tol: float = 1e-7) -> float:
    """Integral of 2 gamma exp(-2 gamma t) correction_overlap(t) over t >= 0.

    The overlap has a square-root cusp at t = 0 for states with a sharp edge,
    so the integral is taken in ``v = sqrt(2 gamma t)``, where the integrand
    ``2 v exp(-v^2) C(v^2 / 2 gamma)`` is smooth, by adaptive quadrature.

    Raises:
        RuntimeError: if the quadrature error estimate exceeds ``10 tol``.
    """
    def f(v):
        return 2 * v * np.exp(-v * v) * correction_overlap(psi1, gamma, v * v / (2 * gamma))

    val, err = integrate.quad(f, 0.0, 7.0, epsabs=tol, epsrel=0.0, limit=200)
    if err > 10 * tol:
        raise RuntimeError(f"correction integral error estimate {err:.2g} exceeds {tol:.2g}")
    return float(val)


__all__ = [
    "SplitStepPlan", "WavePacketSpec", "correction_integral", "correction_overlap", "gaussian_packet",
    "mean_momentum", "mean_position", "momentum_filter", "momentum_variance", "split_step_evolve",
]
