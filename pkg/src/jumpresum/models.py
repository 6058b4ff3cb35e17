"""Named example models and random finite-dimensional models."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lindblad import LindbladModel, constant, linear
from .lz import LZ_INITIAL_STATE, lz_model
from .quantum import SIGMA_X, basis


@dataclass(frozen=True)
class ModelRun:
    """A model with the initial state and time window it is meant to be run on."""

    model: LindbladModel
    initial_state: np.ndarray
    t0: float
    t_end: float


def decay_model(omega: float, gamma: float) -> LindbladModel:
    """Driven two-level atom with spontaneous emission ``sqrt(gamma) |1><2|``."""
    lower = np.array([[0.0, 1.0], [0.0, 0.0]])
    return LindbladModel(((0.5 * omega * SIGMA_X, constant(1.0)),), (math.sqrt(gamma) * lower,))


BUILTIN = ("lz", "lz-projector", "decay")


def builtin_run(name: str, delta: float, gamma: float, tau: float) -> ModelRun:
    """Look up a builtin model.

    ``lz`` and ``lz-projector`` sweep over ``[-tau, tau]`` with dephasing
    written through ``sigma_z`` or the excited-state projector; ``decay``
    uses Rabi frequency ``2 sqrt(delta)`` and runs over ``[0, tau]``.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if name == "lz":
        return ModelRun(lz_model(delta, gamma), LZ_INITIAL_STATE, -tau, tau)
    if name == "lz-projector":
        return ModelRun(lz_model(delta, gamma, projector_form=True), LZ_INITIAL_STATE, -tau, tau)
    if name == "decay":
        return ModelRun(decay_model(2 * math.sqrt(delta), gamma), basis(2, 0), 0.0, tau)
    raise ValueError(f"unknown model {name!r}; choose from {', '.join(BUILTIN)}")


def random_hermitian(rng: np.random.Generator, dim: int, scale: float = 1.0) -> np.ndarray:
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return scale * 0.5 * (a + a.conj().T)


def random_model(rng: np.random.Generator, dim: int, n_ops: int = 2, *, time_dependent: bool = True,
                 rate: float = 0.5) -> LindbladModel:
    """Random model with O(1) Hamiltonian and jump operators of strength ~ sqrt(rate)."""
    terms = [(random_hermitian(rng, dim), constant(1.0))]
    if time_dependent:
        terms.append((random_hermitian(rng, dim, 0.5), linear(0.3, -0.2)))
    ops = []
    for _ in range(n_ops):
        a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
        ops.append(math.sqrt(rate / dim) * a)
    return LindbladModel(tuple(terms), tuple(ops))


def random_pure_state(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)


def random_density(rng: np.random.Generator, dim: int) -> np.ndarray:
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real
