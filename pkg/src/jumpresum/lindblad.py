"""Lindblad models, the jump-operator gauge freedom and a reference solver.

A model holds a time-dependent Hamiltonian written as a finite sum of
constant operators with scalar profiles, plus time-independent jump
operators. Operators are either dense matrices (finite-dimensional space) or
:class:`GridOperator` instances acting on 1D grid wavefunctions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence, Union

import numpy as np

from . import dopri
from .dopri import IntegrationError
from .quantum import Grid1D, GridWave, operator, to_momentum, to_position

Profile = Callable[[float], float]


@dataclass(frozen=True)
class constant:
    """Time profile returning ``value`` (broadcasts over array times)."""

    value: float = 1.0

    def __call__(self, t):
        return self.value + 0.0 * np.asarray(t, dtype=float)


@dataclass(frozen=True)
class linear:
    """Time profile ``slope * t + offset``."""

    slope: float
    offset: float = 0.0

    def __call__(self, t):
        return self.slope * np.asarray(t, dtype=float) + self.offset


@dataclass(frozen=True, eq=False)
class GridOperator:
    """``kinetic * p^2/2 + diag(potential)`` on a :class:`Grid1D` (hbar = m = 1).

    Only operators of this form occur in the grid benchmarks: the free kinetic
    term, (complex) potentials, and half-line projectors used as jump
    operators. Diagonal operators compose exactly, so gauge shifts and the
    products entering the effective Hamiltonian stay in this class.
    """

    grid: Grid1D
    kinetic: complex = 0.0
    potential: np.ndarray | None = None

    def __post_init__(self):
        if self.potential is not None:
            v = np.array(self.potential, dtype=complex)
            if v.shape != (self.grid.n_points,):
                raise ValueError("potential must have one value per grid point")
            v.flags.writeable = False
            object.__setattr__(self, "potential", v)

    @property
    def diagonal(self) -> np.ndarray:
        """Position-space diagonal (zeros if absent)."""
        if self.potential is None:
            return np.zeros(self.grid.n_points, dtype=complex)
        return self.potential

    @property
    def is_diagonal(self) -> bool:
        return self.kinetic == 0

    def apply(self, w: GridWave) -> GridWave:
        if w.grid != self.grid:
            raise ValueError("grid mismatch")
        rep = w.representation
        out = np.zeros(self.grid.n_points, dtype=complex)
        xw = w if rep == "position" else to_position(w)
        if self.potential is not None:
            out += self.potential * xw.amplitudes
        if self.kinetic != 0:
            kw = to_momentum(xw)
            kin = GridWave(self.grid, 0.5 * self.kinetic * self.grid.k**2 * kw.amplitudes, "momentum")
            out += to_position(kin).amplitudes
        res = GridWave(self.grid, out, "position")
        return res if rep == "position" else to_momentum(res)

    def adjoint(self) -> GridOperator:
        pot = None if self.potential is None else self.potential.conj()
        return GridOperator(self.grid, np.conj(self.kinetic), pot)

    def trace(self) -> complex:
        """Regularized trace over the box: the sum of the diagonal entries."""
        if not self.is_diagonal:
            raise ValueError("regularized trace is only defined for diagonal grid operators")
        return complex(self.diagonal.sum())

    def __add__(self, other) -> GridOperator:
        if isinstance(other, GridOperator):
            if other.grid != self.grid:
                raise ValueError("grid mismatch")
            return GridOperator(self.grid, self.kinetic + other.kinetic, self.diagonal + other.diagonal)
        return GridOperator(self.grid, self.kinetic, self.diagonal + complex(other))

    __radd__ = __add__

    def __mul__(self, c) -> GridOperator:
        c = complex(c)
        return GridOperator(self.grid, self.kinetic * c, self.diagonal * c)

    __rmul__ = __mul__

    def __matmul__(self, other: GridOperator) -> GridOperator:
        if not (self.is_diagonal and other.is_diagonal):
            raise ValueError("only diagonal grid operators can be multiplied")
        return GridOperator(self.grid, 0.0, self.diagonal * other.diagonal)


Operator = Union[np.ndarray, GridOperator]


class HamiltonianTerm(NamedTuple):
    operator: Operator
    profile: Profile


@dataclass(frozen=True)
class AlphaVector:
    """Gauge shifts alpha_j, one per jump channel (units of rate^(1/2))."""

    alphas: tuple[complex, ...]

    def __post_init__(self):
        a = tuple(complex(x) for x in self.alphas)
        if not all(np.isfinite(x) for x in a):
            raise ValueError("alpha entries must be finite")
        object.__setattr__(self, "alphas", a)

    @classmethod
    def zeros(cls, n: int) -> AlphaVector:
        return cls((0.0,) * n)

    def __len__(self) -> int:
        return len(self.alphas)

    def as_array(self) -> np.ndarray:
        return np.array(self.alphas, dtype=complex)


@dataclass(frozen=True)
class LindbladModel:
    """H(t) = sum_m profile_m(t) H_m and jump operators L_1..L_N."""

    hamiltonian: tuple[HamiltonianTerm, ...]
    jump_ops: tuple[Operator, ...]
    grid: Grid1D | None = None

    def __post_init__(self):
        terms = tuple(HamiltonianTerm(*t) for t in self.hamiltonian)
        if len(self.jump_ops) < 1:
            raise ValueError("a model needs at least one jump operator (use a zero operator for none)")
        if self.grid is None:
            terms = tuple(HamiltonianTerm(operator(op), p) for op, p in terms)
            jumps = tuple(operator(L) for L in self.jump_ops)
            dims = {op.shape for op, _ in terms} | {L.shape for L in jumps}
            if len(dims) != 1:
                raise ValueError(f"operators act on different dimensions: {sorted(dims)}")
        else:
            jumps = tuple(self.jump_ops)
            for op in [op for op, _ in terms] + list(jumps):
                if not isinstance(op, GridOperator) or op.grid != self.grid:
                    raise ValueError("grid models need GridOperator terms on the model grid")
            for L in jumps:
                if not L.is_diagonal:
                    raise ValueError("grid jump operators must be position-diagonal")
        object.__setattr__(self, "hamiltonian", terms)
        object.__setattr__(self, "jump_ops", jumps)

    @property
    def space(self) -> str:
        return "finite" if self.grid is None else "grid"

    @property
    def n_channels(self) -> int:
        return len(self.jump_ops)

    @property
    def dim(self) -> int:
        return self.grid.n_points if self.grid is not None else self.jump_ops[0].shape[0]

    def hamiltonian_at(self, t: float) -> Operator:
        if self.grid is None:
            h = np.zeros((self.dim, self.dim), dtype=complex)
        else:
            h = GridOperator(self.grid)
        for op, prof in self.hamiltonian:
            h = h + complex(prof(t)) * op
        return h


def _adj(op: Operator) -> Operator:
    return op.adjoint() if isinstance(op, GridOperator) else op.conj().T


def _identity(model: LindbladModel) -> Operator:
    if model.grid is None:
        return np.eye(model.dim, dtype=complex)
    return GridOperator(model.grid, 0.0, np.ones(model.grid.n_points))


def _check_alpha(model: LindbladModel, alpha: AlphaVector) -> np.ndarray:
    if len(alpha) != model.n_channels:
        raise ValueError(f"alpha has {len(alpha)} entries, model has {model.n_channels} channels")
    return alpha.as_array()


def dressed_jump_ops(model: LindbladModel, alpha: AlphaVector) -> tuple[Operator, ...]:
    """L_j + alpha_j for every channel."""
    a = _check_alpha(model, alpha)
    one = _identity(model)
    return tuple(L + aj * one for L, aj in zip(model.jump_ops, a))


def gauge_hamiltonian(model: LindbladModel, alpha: AlphaVector) -> Operator:
    """Constant Hamiltonian shift -(i/2) sum_j (alpha_j* L_j - alpha_j L_j^dag)."""
    a = _check_alpha(model, alpha)
    shift = 0 * _identity(model)
    for L, aj in zip(model.jump_ops, a):
        shift = shift + (-0.5j) * (np.conj(aj) * L + (-aj) * _adj(L))
    return shift


def gauge_transform(model: LindbladModel, alpha: AlphaVector) -> LindbladModel:
    """Shift every L_j by alpha_j and compensate in the Hamiltonian.

    The returned model generates exactly the same dynamics.
    """
    a = _check_alpha(model, alpha)
    if not np.any(a):
        return model
    terms = model.hamiltonian + (HamiltonianTerm(gauge_hamiltonian(model, alpha), constant(1.0)),)
    return LindbladModel(terms, dressed_jump_ops(model, alpha), model.grid)


def effective_hamiltonian(model: LindbladModel, alpha: AlphaVector, t: float) -> Operator:
    """H_alpha(t) - (i/2) sum_j L_{j,alpha}^dag L_{j,alpha}."""
    h = model.hamiltonian_at(t) + gauge_hamiltonian(model, alpha)
    for La in dressed_jump_ops(model, alpha):
        h = h + (-0.5j) * (_adj(La) @ La)
    return h


def liouvillian_apply(model: LindbladModel, rho, t: float) -> np.ndarray:
    """d rho/dt for a finite-dimensional model."""
    if model.grid is not None:
        raise TypeError("liouvillian_apply supports finite-dimensional models only")
    rho = np.asarray(rho, dtype=complex)
    h = model.hamiltonian_at(t)
    out = -1j * (h @ rho - rho @ h)
    for L in model.jump_ops:
        Ld = L.conj().T
        LdL = Ld @ L
        out += L @ rho @ Ld - 0.5 * (LdL @ rho + rho @ LdL)
    return out


def _rhs(model: LindbladModel):
    ops = np.array([op for op, _ in model.hamiltonian])
    profs = [p for _, p in model.hamiltonian]
    Ls = np.array(model.jump_ops)
    Lds = Ls.conj().transpose(0, 2, 1)
    LdL = np.einsum("jab,jbc->ac", Lds, Ls)

    def f(t, rho):
        c = np.array([complex(p(t)) for p in profs])
        h = np.tensordot(c, ops, axes=1) if len(profs) else np.zeros_like(LdL)
        g = -1j * h - 0.5 * LdL
        gr = g @ rho
        return gr + rho @ g.conj().T + np.einsum("jab,bc,jcd->ad", Ls, rho, Lds)

    return f


def integrate_exact(model: LindbladModel, rho0, t0: float, t1: float, tol: float = 1e-10,
                    times: Sequence[float] | None = None):
    """Integrate the master equation with adaptive Dormand-Prince steps.

    Args:
        model: finite-dimensional model.
        rho0: initial density matrix.
        t0, t1: integration interval.
        tol: relative and absolute local error tolerance, in [1e-12, 1e-4].
        times: optional increasing output times in [t0, t1]; if given, the
            states at those times are returned as an array of shape
            ``(len(times), d, d)`` instead of the final state.

    Raises:
        IntegrationError: on step-size underflow.
    """
    if model.grid is not None:
        raise TypeError("integrate_exact supports finite-dimensional models only")
    if not 1e-12 <= tol <= 1e-4:
        raise ValueError(f"tol must lie in [1e-12, 1e-4], got {tol}")
    rho = np.array(rho0, dtype=complex)
    f = _rhs(model)
    if times is None:
        return dopri.integrate(f, t0, t1, rho, rtol=tol, atol=tol)
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0) or times[0] < t0 or times[-1] > t1:
        raise ValueError("times must be increasing and inside [t0, t1]")
    out = np.empty((len(times),) + rho.shape, dtype=complex)
    t = t0
    for i, ti in enumerate(times):
        rho = dopri.integrate(f, t, ti, rho, rtol=tol, atol=tol)
        out[i] = rho
        t = ti
    return out


@dataclass(frozen=True)
class DensityDiagnostics:
    trace_deviation: float
    hermiticity_deviation: float
    min_eigenvalue: float


def check_density(rho) -> DensityDiagnostics:
    """Report Tr(rho) - 1, max|rho - rho^dag| and the smallest eigenvalue."""
    rho = np.asarray(rho, dtype=complex)
    herm = float(np.max(np.abs(rho - rho.conj().T)))
    ev = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
    return DensityDiagnostics(float(np.trace(rho).real - 1.0), herm, float(ev[0]))


__all__ = [
    "AlphaVector", "DensityDiagnostics", "GridOperator", "HamiltonianTerm", "IntegrationError",
    "LindbladModel", "check_density", "constant", "dressed_jump_ops", "effective_hamiltonian",
    "gauge_hamiltonian", "gauge_transform", "integrate_exact", "liouvillian_apply", "linear",
]
