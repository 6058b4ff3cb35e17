"""Finite-dimensional operators/states and 1D grid wavefunctions.

Finite-dimensional objects are plain complex numpy arrays; the helpers here
validate them and hand back read-only copies. Grid wavefunctions carry their
grid and representation so that transforms and inner products can check
compatibility.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

Representation = Literal["position", "momentum"]
Side = Literal["negative", "positive"]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex)
    a.flags.writeable = False
    return a


def operator(a) -> np.ndarray:
    """Validate a square complex matrix and return a read-only copy."""
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise ValueError(f"operator must be a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("operator entries must be finite")
    return _frozen(a)


def pure_state(v, *, atol: float = 1e-12) -> np.ndarray:
    """Validate a (possibly sub-normalized) state vector."""
    v = np.asarray(v, dtype=complex)
    if v.ndim != 1 or v.size < 1:
        raise ValueError(f"state must be a non-empty vector, got shape {v.shape}")
    n2 = float(np.vdot(v, v).real)
    if not np.isfinite(n2) or n2 > 1.0 + atol:
        raise ValueError(f"state norm^2 {n2} outside [0, 1]")
    return _frozen(v)


def density_matrix(rho, *, herm_rtol: float = 1e-12, eig_tol: float = 1e-9) -> np.ndarray:
    """Validate a (possibly sub-normalized) density matrix."""
    rho = operator(rho)
    scale = max(1.0, float(np.max(np.abs(rho))))
    if np.max(np.abs(rho - rho.conj().T)) > herm_rtol * scale:
        raise ValueError("density matrix is not Hermitian")
    tr = float(np.trace(rho).real)
    if tr < -eig_tol or tr > 1.0 + eig_tol:
        raise ValueError(f"trace {tr} outside [0, 1]")
    if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0] < -eig_tol:
        raise ValueError("density matrix has negative eigenvalues")
    return rho


def basis(dim: int, i: int) -> np.ndarray:
    v = np.zeros(dim, dtype=complex)
    v[i] = 1.0
    return v


def projector(v) -> np.ndarray:
    v = np.asarray(v, dtype=complex)
    return np.outer(v, v.conj())


def adjoint(a: np.ndarray) -> np.ndarray:
    return np.asarray(a).conj().T


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def anticommutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b + b @ a


SIGMA_X = operator([[0, 1], [1, 0]])
SIGMA_Y = operator([[0, -1j], [1j, 0]])
SIGMA_Z = operator([[1, 0], [0, -1]])


@dataclass(frozen=True)
class Grid1D:
    """Uniform periodic grid on [x_min, x_max) with ``n_points`` samples.

    Units are hbar = m = 1, so ``k`` doubles as momentum.
    """

    n_points: int
    x_min: float
    x_max: float
    x: np.ndarray = field(init=False, repr=False, compare=False)
    k: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = self.n_points
        if n < 2 or n & (n - 1):
            raise ValueError(f"n_points must be a power of two >= 2, got {n}")
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")
        x = self.x_min + self.dx * np.arange(n)
        k = 2.0 * np.pi * np.fft.fftfreq(n, self.dx)
        x.flags.writeable = False
        k.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "k", k)

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    @property
    def dx(self) -> float:
        return self.length / self.n_points

    @property
    def dk(self) -> float:
        return 2.0 * np.pi / (self.n_points * self.dx)

    def scaled(self, factor: float) -> Grid1D:
        """Same number of points on a box stretched by ``factor``."""
        return Grid1D(self.n_points, self.x_min * factor, self.x_max * factor)


@dataclass(frozen=True)
class GridWave:
    """Complex amplitudes on a :class:`Grid1D`.

    Position amplitudes satisfy ``sum |psi|^2 dx = norm^2``; momentum
    amplitudes are samples of the continuous unitary Fourier transform at
    ``grid.k`` (FFT ordering), so ``sum |phi|^2 dk = norm^2`` as well.
    """

    grid: Grid1D
    amplitudes: np.ndarray
    representation: Representation = "position"

    def __post_init__(self):
        a = np.array(self.amplitudes, dtype=complex)
        if a.shape != (self.grid.n_points,):
            raise ValueError(f"amplitudes must have shape ({self.grid.n_points},), got {a.shape}")
        if self.representation not in ("position", "momentum"):
            raise ValueError(f"unknown representation {self.representation!r}")
        a.flags.writeable = False
        object.__setattr__(self, "amplitudes", a)

    @property
    def measure(self) -> float:
        return self.grid.dx if self.representation == "position" else self.grid.dk

    def norm2(self) -> float:
        a = self.amplitudes
        return float(np.vdot(a, a).real) * self.measure

    def normalized(self) -> GridWave:
        return GridWave(self.grid, self.amplitudes / np.sqrt(self.norm2()), self.representation)


def inner_product(a, b) -> complex:
    """<a|b>, conjugate-linear in ``a``; works for vectors and GridWaves."""
    if isinstance(a, GridWave) or isinstance(b, GridWave):
        if not (isinstance(a, GridWave) and isinstance(b, GridWave)):
            raise TypeError("cannot mix GridWave with finite-dimensional states")
        if a.grid != b.grid:
            raise ValueError("grid mismatch")
        if a.representation != b.representation:
            raise ValueError("representation mismatch")
        return complex(np.vdot(a.amplitudes, b.amplitudes) * a.measure)
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch {a.shape} vs {b.shape}")
    return complex(np.vdot(a, b))


def _phase(grid: Grid1D) -> np.ndarray:
    return np.exp(-1j * grid.k * grid.x_min)


def to_momentum(w: GridWave) -> GridWave:
    if w.representation != "position":
        raise ValueError("wave is already in momentum representation")
    g = w.grid
    amp = np.fft.fft(w.amplitudes) * (g.dx / np.sqrt(2.0 * np.pi)) * _phase(g)
    return GridWave(g, amp, "momentum")


def to_position(w: GridWave) -> GridWave:
    if w.representation != "momentum":
        raise ValueError("wave is already in position representation")
    g = w.grid
    amp = np.fft.ifft(w.amplitudes / _phase(g)) * (np.sqrt(2.0 * np.pi) / g.dx)
    return GridWave(g, amp, "position")


def half_line_mask(grid: Grid1D, side: Side) -> np.ndarray:
    """0/1 mask of Theta(-x) (``negative``) or Theta(x) (``positive``).

    A grid point sitting exactly at x = 0 belongs to the positive side, so the
    two masks always sum to one.
    """
    pos = grid.x >= 0.0
    if side == "positive":
        m = pos.astype(float)
    elif side == "negative":
        m = (~pos).astype(float)
    else:
        raise ValueError(f"side must be 'negative' or 'positive', got {side!r}")
    m.flags.writeable = False
    return m


def half_line_projector(grid: Grid1D, side: Side):
    """Return a callable applying Theta(-x) or Theta(x) to a position-space wave."""
    mask = half_line_mask(grid, side)

    def apply(w: GridWave) -> GridWave:
        if w.grid != grid:
            raise ValueError("grid mismatch")
        if w.representation != "position":
            raise ValueError("half-line projector acts on position-space waves")
        return GridWave(grid, w.amplitudes * mask, "position")

    apply.mask = mask
    return apply
