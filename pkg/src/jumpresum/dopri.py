"""Dormand-Prince 4(5) stepping with PI step-size control.

The stepper is shape-agnostic: ``y`` may be a single matrix or a batch of
states whose leading axis indexes independent rows, and ``t``/``h`` may be
scalars or per-row arrays. That lets the same tableau drive both the
density-matrix reference solver and the vectorised trajectory sampler.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
E = B5 - B4

# Continuous extension (Shampine's 4th-order interpolant); row i gives the
# coefficients of theta, theta^2, theta^3, theta^4 for stage i.
P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])


class IntegrationError(RuntimeError):
    """Raised when adaptive stepping cannot proceed (e.g. step-size underflow)."""


def _bcast(a, y):
    """Broadcast a scalar or per-row array against the batch ``y``."""
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        return a
    return a.reshape(a.shape + (1,) * (y.ndim - a.ndim))


def step(f, t, y, h):
    """One DP5 step. Returns ``(y_new, err, k)`` with ``k`` the 7 stage slopes."""
    hb = _bcast(h, y)
    t = np.asarray(t, dtype=float)
    h = np.asarray(h, dtype=float)
    k = [f(t, y)]
    for i in range(1, 7):
        dy = sum(a * kj for a, kj in zip(A[i], k) if a != 0.0)
        k.append(f(t + C[i] * h, y + hb * dy))
    y_new = y + hb * sum(b * kj for b, kj in zip(B5, k) if b != 0.0)
    err = hb * sum(e * kj for e, kj in zip(E, k))
    return y_new, err, k


def dense(y0, k, h, theta):
    """Interpolated state at ``t0 + theta*h`` from the stages of one step.

    ``theta`` and ``h`` may be scalars or per-row arrays.
    """
    theta = np.asarray(theta, dtype=float)
    powers = np.stack([theta, theta**2, theta**3, theta**4], axis=-1)
    coef = powers @ P.T  # (..., 7)
    hb = _bcast(h, y0)
    acc = np.zeros_like(y0)
    for i, ki in enumerate(k):
        if i == 1:
            continue
        acc = acc + _bcast(coef[..., i], y0) * ki
    return y0 + hb * acc


def dense_derivative(y0, k, h, theta):
    """d/dt of :func:`dense` at ``t0 + theta*h``."""
    theta = np.asarray(theta, dtype=float)
    powers = np.stack([np.ones_like(theta), 2 * theta, 3 * theta**2, 4 * theta**3], axis=-1)
    coef = powers @ P.T
    acc = np.zeros_like(y0)
    for i, ki in enumerate(k):
        if i == 1:
            continue
        acc = acc + _bcast(coef[..., i], y0) * ki
    return acc


@dataclass
class PIController:
    """Lund-stabilised PI controller for an order-5 pair."""

    rtol: float
    atol: float
    safety: float = 0.9
    alpha: float = 0.17
    beta: float = 0.04
    fac_min: float = 0.2
    fac_max: float = 5.0
    _err_prev: float = 1e-4

    def error_norm(self, y, y_new, err, rows: bool = False):
        scale = self.atol + self.rtol * np.maximum(np.abs(y), np.abs(y_new))
        r = np.abs(err) / scale
        if not rows or r.ndim < 2:
            return float(np.sqrt(np.mean(r**2)))
        per_row = np.sqrt(np.mean(r.reshape(r.shape[0], -1) ** 2, axis=1))
        return float(per_row.max(initial=0.0))

    def accept(self, err_norm: float) -> float:
        err_norm = max(err_norm, 1e-10)
        fac = self.safety * err_norm ** (-self.alpha) * self._err_prev**self.beta
        self._err_prev = err_norm
        return float(np.clip(fac, self.fac_min, self.fac_max))

    def reject(self, err_norm: float) -> float:
        return float(max(self.fac_min, self.safety * err_norm ** (-0.2)))


def initial_step(f, t0, y0, direction, rtol, atol):
    """Hairer-Wanner starting step estimate."""
    scale = atol + rtol * np.abs(y0)
    f0 = f(t0, y0)
    d0 = np.sqrt(np.mean((np.abs(y0) / scale) ** 2))
    d1 = np.sqrt(np.mean((np.abs(f0) / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y0 + direction * h0 * f0
    f1 = f(t0 + direction * h0, y1)
    d2 = np.sqrt(np.mean((np.abs(f1 - f0) / scale) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1)


def integrate(f, t0, t1, y0, *, rtol=1e-8, atol=1e-10, first_step=None, rows=False,
              max_steps=10_000_000, on_step=None):
    """Integrate ``y' = f(t, y)`` from ``t0`` to ``t1`` and return ``y(t1)``.

    ``on_step(t, h, y, y_new, k)`` is called after every accepted step.
    Raises :class:`IntegrationError` on step-size underflow.
    """
    y = np.array(y0, dtype=complex if np.iscomplexobj(y0) else float)
    if t1 == t0:
        return y
    direction = 1.0 if t1 > t0 else -1.0
    ctl = PIController(rtol, atol)
    h = first_step if first_step is not None else initial_step(f, t0, y, direction, rtol, atol)
    h = abs(h)
    t = float(t0)
    for _ in range(max_steps):
        remaining = abs(t1 - t)
        if remaining <= 0.0:
            return y
        h = min(h, remaining)
        if h < 16 * np.finfo(float).eps * max(1.0, abs(t)):
            raise IntegrationError(f"step size underflow at t={t:.6g} (h={h:.3g})")
        y_new, err, k = step(f, t, y, direction * h)
        en = ctl.error_norm(y, y_new, err, rows=rows)
        if not np.isfinite(en):
            h *= 0.2
            continue
        if en <= 1.0:
            if on_step is not None:
                on_step(t, direction * h, y, y_new, k)
            t = t1 if h == remaining else t + direction * h
            y = y_new
            h *= ctl.accept(en)
        else:
            h *= ctl.reject(en)
    raise IntegrationError(f"exceeded {max_steps} steps")
