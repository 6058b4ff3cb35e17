"""Adaptive jump expansion: decomposition rules, trajectories and weights.

The jump operators of a Lindblad model are only fixed up to shifts
``L_j -> L_j + alpha_j``. Choosing ``alpha`` afresh after each jump
reorganises the jump expansion so that few-jump terms carry most of the
probability. Trajectories here are piecewise-deterministic: the
(unnormalized) state evolves under the effective Hamiltonian until its
norm^2 falls below a uniform variate, then a dressed jump operator acts and
``alpha`` is updated by the chosen rule.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from . import dopri
from .dopri import IntegrationError
from .lindblad import (
    AlphaVector,
    GridOperator,
    LindbladModel,
    dressed_jump_ops,
    gauge_hamiltonian,
)
from .quantum import GridWave
from .rng import DrawTable

N_CAP_DEFAULT = 64
CHUNK_SIZE = 2048


class JumpOverflow(RuntimeError):
    """A trajectory hit the jump cap."""


@dataclass(frozen=True)
class JumpRecord:
    """Ordered jump channels and times (channels are 0-based)."""

    jumps: tuple[tuple[int, float], ...] = ()

    def __post_init__(self):
        times = [t for _, t in self.jumps]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("jump times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.jumps)

    @property
    def channels(self) -> tuple[int, ...]:
        return tuple(j for j, _ in self.jumps)

    @property
    def times(self) -> tuple[float, ...]:
        return tuple(t for _, t in self.jumps)

    def append(self, channel: int, time: float) -> JumpRecord:
        return JumpRecord(self.jumps + ((int(channel), float(time)),))


@dataclass(frozen=True)
class FixedAlpha:
    alpha: AlphaVector


@dataclass(frozen=True)
class StateConditioned:
    """Re-centre every channel on the post-jump state."""


@dataclass(frozen=True)
class SequenceConditioned:
    """Re-centre using only the dressed operator of the last jump."""


DecompositionRule = Union[FixedAlpha, StateConditioned, SequenceConditioned]


def _expectation(op, state) -> tuple[complex, float]:
    """(Tr(op rho), Tr rho) for a pure vector, density matrix or GridWave."""
    if isinstance(state, GridWave):
        if state.representation != "position":
            raise ValueError("grid states must be in position representation")
        p = np.abs(state.amplitudes) ** 2 * state.grid.dx
        return complex(np.sum(op.diagonal * p)), float(p.sum())
    s = np.asarray(state, dtype=complex)
    if s.ndim == 1:
        return complex(np.vdot(s, op @ s)), float(np.vdot(s, s).real)
    return complex(np.trace(op @ s)), float(np.trace(s).real)


def alpha_state_conditioned(model: LindbladModel, state) -> AlphaVector:
    """alpha_i = -Tr(L_i rho) / Tr rho, which gives every channel zero mean in ``state``."""
    vals = []
    for L in model.jump_ops:
        num, tr = _expectation(L, state)
        if not tr > 0:
            raise ValueError("state has zero trace")
        vals.append(-num / tr)
    return AlphaVector(vals)


def alpha_sequence_conditioned(model: LindbladModel, dressed) -> AlphaVector:
    """alpha_i = -Tr(Ld^dag L_i Ld) / Tr(Ld^dag Ld) for the last dressed jump operator Ld.

    Grid operators use the regularized trace over the simulation box.
    """
    if isinstance(dressed, GridOperator):
        w = np.abs(dressed.diagonal) ** 2
        den = float(w.sum())
        nums = [complex(np.sum(w * L.diagonal)) for L in model.jump_ops]
    else:
        d = np.asarray(dressed, dtype=complex)
        dd = d.conj().T
        den = float(np.trace(dd @ d).real)
        nums = [complex(np.trace(dd @ L @ d)) for L in model.jump_ops]
    if not den > 0:
        raise ValueError("dressed jump operator has vanishing trace norm")
    return AlphaVector([-n / den for n in nums])


def initial_alpha(model: LindbladModel, rule: DecompositionRule, state) -> AlphaVector:
    if isinstance(rule, FixedAlpha):
        if len(rule.alpha) != model.n_channels:
            raise ValueError("FixedAlpha length does not match the model")
        return rule.alpha
    return alpha_state_conditioned(model, state)


def updated_alpha(model: LindbladModel, rule: DecompositionRule, alpha: AlphaVector,
                  channel: int, post_state) -> AlphaVector:
    """Gauge to use after a jump through ``channel`` that produced ``post_state``."""
    if isinstance(rule, FixedAlpha):
        return alpha
    if isinstance(rule, StateConditioned):
        return alpha_state_conditioned(model, post_state)
    if isinstance(rule, SequenceConditioned):
        return alpha_sequence_conditioned(model, dressed_jump_ops(model, alpha)[channel])
    raise TypeError(f"unknown rule {rule!r}")


@dataclass
class TrajectoryState:
    """Branch state of one trajectory.

    ``state`` is renormalized at every jump and decays in between, so
    ``survival`` (the no-jump probability since the last jump) equals its
    norm^2.
    """

    state: object
    alpha: AlphaVector
    record: JumpRecord = field(default_factory=JumpRecord)
    survival: float = 1.0
    time: float = 0.0
    overflow: bool = False


# ---------------------------------------------------------------------------
# finite-dimensional batched engine


class _Gauges:
    """Cache of per-alpha constant pieces of H_eff and dressed operators."""

    def __init__(self, model: LindbladModel):
        self.model = model
        self.keys: dict[tuple, int] = {}
        self.alphas: list[AlphaVector] = []
        self.G: list[np.ndarray] = []
        self.Ls: list[np.ndarray] = []

    def index(self, alpha: AlphaVector) -> int:
        key = alpha.alphas
        if key not in self.keys:
            m = self.model
            Ls = np.array(dressed_jump_ops(m, alpha))
            G = gauge_hamiltonian(m, alpha) - 0.5j * np.einsum("jba,jbc->ac", Ls.conj(), Ls)
            self.keys[key] = len(self.alphas)
            self.alphas.append(alpha)
            self.G.append(G)
            self.Ls.append(Ls)
        return self.keys[key]


@dataclass
class _BatchResult:
    states: np.ndarray
    survival: np.ndarray
    gauge: np.ndarray
    records: list
    overflow: np.ndarray
    gauges: _Gauges


def _run_batch(model, rule, psi0, t0, t_end, seed, indices, tol, n_cap, jumps=True,
               start_states=None, start_times=None, start_gauges=None, gauges=None):
    """Evolve a batch of trajectories with per-row adaptive DP45 steps.

    With ``jumps=False`` the rows only follow the no-jump evolution, which is
    how the deterministic branch weights are computed.
    """
    d = model.dim
    B = len(indices)
    ops = np.array([op for op, _ in model.hamiltonian]) if model.hamiltonian else np.zeros((0, d, d))
    profs = [p for _, p in model.hamiltonian]
    gauges = gauges or _Gauges(model)

    if start_states is None:
        psi = np.tile(np.asarray(psi0, dtype=complex), (B, 1))
        t = np.full(B, float(t0))
        g_idx = np.full(B, gauges.index(initial_alpha(model, rule, psi0)))
    else:
        psi = np.array(start_states, dtype=complex)
        t = np.array(start_times, dtype=float)
        g_idx = np.array(start_gauges)
    records = [[] for _ in range(B)]
    overflow = np.zeros(B, dtype=bool)

    if jumps:
        draws = DrawTable(seed, indices, initial_width=8)
        u = draws.take(np.arange(B))
    else:
        u = np.zeros(B)

    def G_rows(rows):
        return np.array(gauges.G)[g_idx[rows]]

    Gb = G_rows(np.arange(B))

    def f_factory(Gsel):
        def f(tt, y):
            tt = np.broadcast_to(tt, (len(y),))
            if profs:
                c = np.stack([np.asarray(p(tt), dtype=float) for p in profs], axis=1)
                H = np.einsum("bm,mij->bij", c, ops) + Gsel
            else:
                H = Gsel
            return -1j * np.einsum("bij,bj->bi", H, y)
        return f

    if t_end < np.max(t):
        raise ValueError("t_end precedes the start time")
    span = max(float(t_end - np.min(t)), 1e-300)
    h = np.full(B, min(0.05 * span, 0.1))
    err_prev = np.full(B, 1e-4)
    active = t < t_end
    tiny = 16 * np.finfo(float).eps
    rtol = atol = tol

    while np.any(active):
        rows = np.nonzero(active)[0]
        hr = np.minimum(h[rows], t_end - t[rows])
        if np.any(hr < tiny * np.maximum(1.0, np.abs(t[rows]))):
            raise IntegrationError("step size underflow in trajectory integration")
        f = f_factory(Gb[rows])
        y0 = psi[rows]
        y1, err, k = dopri.step(f, t[rows], y0, hr)
        scale = atol + rtol * np.maximum(np.abs(y0), np.abs(y1))
        en = np.sqrt(np.mean((np.abs(err) / scale) ** 2, axis=1))
        en = np.where(np.isfinite(en), en, 1e10)
        ok = en <= 1.0

        bad = rows[~ok]
        h[bad] = hr[~ok] * np.maximum(0.2, 0.9 * en[~ok] ** -0.2)

        acc = np.nonzero(ok)[0]
        if acc.size == 0:
            continue
        ea = np.maximum(en[acc], 1e-10)
        fac = np.clip(0.9 * ea**-0.17 * err_prev[rows[acc]] ** 0.04, 0.2, 5.0)
        err_prev[rows[acc]] = ea
        S1 = np.sum(np.abs(y1[acc]) ** 2, axis=1)
        jump = S1 < u[rows[acc]]
        # plain accepted steps
        plain = acc[~jump]
        pr = rows[plain]
        psi[pr] = y1[plain]
        t[pr] = np.where(hr[plain] >= t_end - t[pr], t_end, t[pr] + hr[plain])
        h[pr] = hr[plain] * fac[~jump]
        active[pr] = t[pr] < t_end

        jl = acc[jump]
        if jl.size == 0:
            continue
        jr = rows[jl]
        kj = [ki[jl] for ki in k]
        yj0 = y0[jl]
        hj = hr[jl]
        target = u[jr]
        theta = _locate_crossing(yj0, kj, hj, target)
        yj = dopri.dense(yj0, kj, hj, theta)
        tj = t[jr] + theta * hj
        v = draws.take(jr)
        for n, r in enumerate(jr):
            Ls = gauges.Ls[g_idx[r]]
            amps = Ls @ yj[n]
            p = np.sum(np.abs(amps) ** 2, axis=1)
            cum = np.cumsum(p)
            ch = int(min(np.searchsorted(cum, v[n] * cum[-1], side="right"), len(p) - 1))
            post = amps[ch] / np.sqrt(p[ch])
            if records[r] and tj[n] <= records[r][-1][1]:
                tj[n] = np.nextafter(records[r][-1][1], np.inf)
            records[r].append((ch, float(tj[n])))
            new_alpha = updated_alpha(model, rule, gauges.alphas[g_idx[r]], ch, post)
            g_idx[r] = gauges.index(new_alpha)
            psi[r] = post
            t[r] = tj[n]
            if len(records[r]) >= n_cap:
                overflow[r] = True
                active[r] = False
        Gb = np.array(gauges.G)[g_idx]
        u[jr] = draws.take(jr)
        h[jr] = np.maximum(hj * 0.5, tiny)

    surv = np.sum(np.abs(psi) ** 2, axis=1)
    return _BatchResult(psi, surv, g_idx, records, overflow, gauges)


def _locate_crossing(y0, k, h, target, iters: int = 48):
    """theta in (0, 1] where the dense-output norm^2 equals ``target``.

    Norm^2 is non-increasing under the effective Hamiltonian, so bisection is
    safe; a final Newton step polishes the root.
    """
    lo = np.zeros(len(target))
    hi = np.ones(len(target))
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        s = np.sum(np.abs(dopri.dense(y0, k, h, mid)) ** 2, axis=1)
        above = s > target
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    th = 0.5 * (lo + hi)
    y = dopri.dense(y0, k, h, th)
    dy = dopri.dense_derivative(y0, k, h, th)
    g = np.sum(np.abs(y) ** 2, axis=1) - target
    dg = 2.0 * np.real(np.sum(y.conj() * dy, axis=1)) * h
    newton = th - np.divide(g, dg, out=np.zeros_like(g), where=dg != 0)
    return np.where((newton > lo) & (newton <= hi), newton, th)


def _check_pure(psi0) -> np.ndarray:
    psi0 = np.asarray(psi0, dtype=complex)
    if psi0.ndim != 1:
        raise ValueError("initial state must be a state vector")
    if abs(np.vdot(psi0, psi0).real - 1.0) > 1e-10:
        raise ValueError("initial state must be normalized")
    return psi0


def sample_trajectory(model: LindbladModel, rule: DecompositionRule, initial_state, t_end: float,
                      seed: int, *, t0: float = 0.0, index: int = 0, tol: float = 1e-8,
                      n_cap: int = N_CAP_DEFAULT) -> TrajectoryState:
    """Sample one trajectory on [t0, t_end].

    Args:
        model: finite-dimensional or grid model.
        rule: decomposition rule for alpha updates.
        initial_state: normalized state vector or GridWave.
        t_end: final time.
        seed: 64-bit master seed; together with ``index`` it fixes the stream.
        t0: start time.
        index: trajectory index within the master seed.
        tol: local error tolerance of the integrator (finite-dimensional).
        n_cap: jump cap; the returned state has ``overflow`` set when hit.

    Raises:
        IntegrationError: on step-size underflow.
    """
    if model.space == "grid":
        from .gridtraj import sample_grid_trajectory

        return sample_grid_trajectory(model, rule, initial_state, t_end, seed, t0=t0, index=index,
                                      n_cap=n_cap)
    psi0 = _check_pure(initial_state)
    res = _run_batch(model, rule, psi0, t0, t_end, seed, [index], tol, n_cap)
    rec = JumpRecord(tuple(res.records[0]))
    return TrajectoryState(res.states[0], res.gauges.alphas[res.gauge[0]], rec,
                           float(res.survival[0]), float(t_end), bool(res.overflow[0]))


@dataclass(frozen=True)
class WeightTable:
    """Monte Carlo jump-order weights at time ``t``."""

    t: float
    weights: tuple[float, ...]
    stderr: tuple[float, ...]
    n_traj: int
    overflow: int = 0
    counts: tuple[int, ...] = ()

    @property
    def n_max(self) -> int:
        return len(self.weights) - 1

    @property
    def overflow_fraction(self) -> float:
        return self.overflow / self.n_traj

    @classmethod
    def from_counts(cls, t: float, counts, n_traj: int, overflow: int = 0) -> WeightTable:
        counts = np.asarray(counts, dtype=np.int64)
        w = counts / n_traj
        se = np.sqrt(w * (1 - w) / n_traj)
        return cls(float(t), tuple(w.tolist()), tuple(se.tolist()), int(n_traj), int(overflow),
                   tuple(int(c) for c in counts))


def _chunk_counts(args):
    model, rule, psi0, t0, t_end, seed, lo, hi, tol, n_cap = args
    res = _run_batch(model, rule, psi0, t0, t_end, seed, np.arange(lo, hi), tol, n_cap)
    n = np.array([len(r) for r in res.records])
    return np.bincount(n[~res.overflow], minlength=n_cap + 1)[: n_cap + 1], int(res.overflow.sum())


def _chunks(n_traj: int):
    return [(lo, min(lo + CHUNK_SIZE, n_traj)) for lo in range(0, n_traj, CHUNK_SIZE)]


def _map(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))


def estimate_weights(model: LindbladModel, rule: DecompositionRule, initial_state, t_end: float,
                     n_traj: int, seed: int, *, t0: float = 0.0, tol: float = 1e-8,
                     n_cap: int = N_CAP_DEFAULT, workers: int = 1) -> WeightTable:
    """Fraction of trajectories with exactly n jumps in [t0, t_end].

    Trajectories are processed in fixed-size index chunks with per-index
    random streams, so the table does not depend on ``workers``.
    """
    if n_traj < 100:
        raise ValueError("n_traj must be at least 100")
    if model.space == "grid":
        from .gridtraj import grid_jump_counts

        counts, overflow = grid_jump_counts(model, rule, initial_state, t_end, n_traj, seed,
                                            t0=t0, n_cap=n_cap)
    else:
        psi0 = _check_pure(initial_state)
        jobs = [(model, rule, psi0, t0, t_end, seed, lo, hi, tol, n_cap) for lo, hi in _chunks(n_traj)]
        parts = _map(_chunk_counts, jobs, workers)
        counts = sum(c for c, _ in parts)
        overflow = sum(o for _, o in parts)
    counts = np.asarray(counts)
    nz = np.nonzero(counts)[0]
    counts = counts[: (nz[-1] + 1 if nz.size else 1)]
    return WeightTable.from_counts(t_end, counts, n_traj, overflow)


def _chunk_projector(args):
    model, rule, psi0, t0, t_end, seed, lo, hi, tol, n_cap = args
    res = _run_batch(model, rule, psi0, t0, t_end, seed, np.arange(lo, hi), tol, n_cap)
    if res.overflow.any():
        raise JumpOverflow(f"{int(res.overflow.sum())} trajectories hit the jump cap")
    phi = res.states / np.sqrt(res.survival)[:, None]
    return np.einsum("bi,bj->ij", phi, phi.conj())


def reconstruct_state(model: LindbladModel, rule: DecompositionRule, initial_state, t_end: float,
                      n_traj: int, seed: int, *, t0: float = 0.0, tol: float = 1e-8,
                      n_cap: int = N_CAP_DEFAULT, workers: int = 1,
                      return_bound: bool = False):
    """Trajectory average of normalized branch projectors at ``t_end``.

    With ``return_bound`` the statistical Frobenius-norm bound
    ``sqrt((1 - ||rho||_F^2) / n_traj)`` is returned as well.
    """
    if model.space != "finite":
        raise TypeError("reconstruct_state supports finite-dimensional models only")
    psi0 = _check_pure(initial_state)
    jobs = [(model, rule, psi0, t0, t_end, seed, lo, hi, tol, n_cap) for lo, hi in _chunks(n_traj)]
    rho = sum(_map(_chunk_projector, jobs, workers)) / n_traj
    if not return_bound:
        return rho
    purity = float(np.sum(np.abs(rho) ** 2))
    return rho, float(np.sqrt(max(1.0 - purity, 0.0) / n_traj))


def branch_weight_quadrature(model: LindbladModel, rule: DecompositionRule, initial_state,
                             t_end: float, max_order: int = 1, n_quad: int = 8, *, t0: float = 0.0,
                             tol: float = 1e-10, panels: int = 32, rtol_quad: float = 1e-7,
                             max_doublings: int = 6) -> list[float]:
    """Deterministic order weights w_0..w_max_order.

    w_1 integrates the norm^2 of every one-jump branch over the jump time with
    ``n_quad``-point Gauss-Legendre panels; the panel count is doubled until
    successive values agree to ``rtol_quad``. w_2 nests the same rule.
    """
    if model.space != "finite":
        raise TypeError("branch_weight_quadrature supports finite-dimensional models only")
    if max_order > 2 or max_order < 0:
        raise ValueError("max_order must be 0, 1 or 2")
    psi0 = _check_pure(initial_state)
    gauges = _Gauges(model)
    g0 = gauges.index(initial_alpha(model, rule, psi0))

    def no_jump(states, times, gidx):
        r = _run_batch(model, rule, None, None, t_end, 0, np.arange(len(states)), tol, 1, jumps=False,
                       start_states=states, start_times=times, start_gauges=gidx, gauges=gauges)
        return r.survival

    w0 = float(no_jump(psi0[None], [t0], [g0])[0])
    out = [w0]
    if max_order == 0:
        return out

    def nodes(a, b, n_pan):
        x, w = np.polynomial.legendre.leggauss(n_quad)
        edges = np.linspace(a, b, n_pan + 1)
        mid = 0.5 * (edges[1:] + edges[:-1])[:, None]
        half = 0.5 * np.diff(edges)[:, None]
        return (mid + half * x).ravel(), (half * w).ravel()

    def states_at(psi, ta, g, times):
        """No-jump states from (psi, ta) at each of ``times`` (increasing)."""
        res = []
        cur, tc = psi, ta
        for ti in times:
            r = _run_batch(model, rule, None, None, ti, 0, [0], tol, 1, jumps=False,
                           start_states=cur[None], start_times=[tc], start_gauges=[g], gauges=gauges)
            cur, tc = r.states[0], ti
            res.append(cur)
        return np.array(res)

    def branches(psi_pre, gidx):
        """All channel-resolved post-jump states (unnormalized) and their gauges."""
        posts, gs, chans = [], [], []
        for n, y in enumerate(psi_pre):
            Ls = gauges.Ls[gidx[n]]
            amps = Ls @ y
            for ch in range(model.n_channels):
                a = amps[ch]
                p = float(np.vdot(a, a).real)
                if p == 0.0:
                    posts.append(a); gs.append(gidx[n]); chans.append((n, ch))
                    continue
                na = updated_alpha(model, rule, gauges.alphas[gidx[n]], ch, a / np.sqrt(p))
                posts.append(a); gs.append(gauges.index(na)); chans.append((n, ch))
        return np.array(posts), np.array(gs), chans

    def order1(n_pan):
        tn, wn = nodes(t0, t_end, n_pan)
        pre = states_at(psi0, t0, g0, tn)
        posts, gs, chans = branches(pre, [g0] * len(tn))
        times = np.array([tn[n] for n, _ in chans])
        surv = no_jump(posts, times, gs)
        return float(sum(wn[n] * s for (n, _), s in zip(chans, surv))), (tn, wn, posts, gs, chans)

    prev, data = order1(panels)
    for _ in range(max_doublings):
        panels *= 2
        cur, data = order1(panels)
        if abs(cur - prev) <= rtol_quad * max(abs(cur), 1e-300):
            break
        prev = cur
    out.append(cur)
    if max_order == 1:
        return out

    tn, wn, posts, gs, chans = data
    w2 = 0.0
    sub = max(1, panels // 8)
    for (n, _), post, g in zip(chans, posts, gs):
        if not np.any(post):
            continue
        t2, w2n = nodes(tn[n], t_end, sub)
        pre2 = states_at(post, tn[n], g, t2)
        p2, g2, ch2 = branches(pre2, [g] * len(t2))
        surv = no_jump(p2, np.array([t2[m] for m, _ in ch2]), g2)
        w2 += wn[n] * sum(w2n[m] * s for (m, _), s in zip(ch2, surv))
    out.append(float(w2))
    return out


__all__ = [
    "CHUNK_SIZE", "DecompositionRule", "FixedAlpha", "JumpOverflow", "JumpRecord", "N_CAP_DEFAULT",
    "SequenceConditioned", "StateConditioned", "TrajectoryState", "WeightTable",
    "alpha_sequence_conditioned", "alpha_state_conditioned", "branch_weight_quadrature",
    "estimate_weights", "initial_alpha", "reconstruct_state", "sample_trajectory", "updated_alpha",
]
