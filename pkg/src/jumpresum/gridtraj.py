"""Branch-sharing trajectory engine for 1D grid models.

Every trajectory follows the same deterministic no-jump evolution until its
first jump, and trajectories that jump in the same time step from the same
branch land in the same post-jump state. The engine therefore propagates
*rows* (distinct branch states) rather than trajectories. Each row carries
the uniform variates of the trajectories still attached to it, sorted in
descending order. A trajectory jumps in the step where the row's norm^2
falls below its variate. It is finalized once its variate lies below the
mass that can never trigger another jump.

Time stepping is Strang split-step with a fixed ``dt``. A jump detected in
``[t, t + dt]`` is placed at the Strang midpoint, which is read off the
half-kinetic propagation of the already computed FFT. Rows live on two
interleaved time lattices (``n dt`` and ``n dt + dt/2``) so that children of
one lattice start exactly on the other.

Far from the origin the model must be free motion with a constant jump rate
on each side. Mass reaching the box edges is moved into per-side scalar
"far" masses, which decay at that side's rate. The grid never wraps
outgoing pieces back in, and norm bookkeeping stays exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .adaptive import (
    DecompositionRule,
    FixedAlpha,
    JumpRecord,
    SequenceConditioned,
    StateConditioned,
    TrajectoryState,
    alpha_sequence_conditioned,
    initial_alpha,
)
from .lindblad import AlphaVector, GridOperator, LindbladModel, dressed_jump_ops, gauge_hamiltonian
from .quantum import GridWave
from .rng import DrawTable

_CDT = np.complex64
_RDT = np.float32


@dataclass(frozen=True)
class GridMCSettings:
    """Numerical settings of the grid engine.

    Attributes:
        dt: time step.
        zone: half-width of the interaction zone around x = 0; outgoing mass
            beyond it on a jump-free side is final.
        check_every: steps between finalization/peeling passes.
        peel_width: width of the taper at each box edge that moves mass into
            the far bookkeeping.
        quiet_rate: a side counts as jump-free when ``rate * t_end`` is below
            this value.
        far_horizon: time up to which mass beyond the box edges keeps
            producing jumps; ``None`` means ``t_end``. Infinite horizons give
            asymptotic outcomes for mass that has left the box.
    """

    dt: float
    zone: float = 4.0
    check_every: int = 4
    peel_width: float = 16.0
    quiet_rate: float = 1e-8
    far_horizon: float | None = None


@dataclass
class _Config:
    alpha: AlphaVector
    ls: np.ndarray            # (N, npts) dressed diagonals
    side_l: np.ndarray        # (N, 2) dressed values on the left/right far sides
    rate_far: np.ndarray      # (2,) jump rate on each far side
    quiet: np.ndarray         # (2,) bool
    half: np.ndarray          # exp(-i V_eff dt/2), complex64
    classes: np.ndarray       # channel -> representative channel with identical dressed op


@dataclass
class _Row:
    order: int
    cfg: int
    ids: np.ndarray
    us: np.ndarray
    hi: int = 0
    lo: int = -1
    records: list | None = None

    def __post_init__(self):
        if self.lo < 0:
            self.lo = len(self.us)

    @property
    def pending(self) -> int:
        return self.lo - self.hi

    @property
    def next_u(self) -> float:
        return float(self.us[self.hi]) if self.hi < self.lo else -1.0


@dataclass
class GridRun:
    """Per-trajectory outcome of a grid run.

    ``counts`` holds the number of jumps (final if ``pending`` is False);
    ``direction`` holds -1/+1 for the side on which the finalized branch
    leaves (0 if undecided); ``overflow`` marks trajectories that hit the
    jump cap.
    """

    counts: np.ndarray
    pending: np.ndarray
    direction: np.ndarray
    overflow: np.ndarray
    records: list | None = None
    final_rows: list | None = None
    stats: dict | None = None


def _norms(A: np.ndarray) -> np.ndarray:
    R = np.ascontiguousarray(A).view(A.real.dtype)
    return np.einsum("ij,ij->i", R, R, dtype=np.float64)


class GridEngine:
    """Propagates branch rows for a grid model; see the module docstring."""

    def __init__(self, model: LindbladModel, rule: DecompositionRule, settings: GridMCSettings,
                 t_end: float):
        if model.space != "grid":
            raise TypeError("GridEngine needs a grid model")
        self.model, self.rule, self.s = model, rule, settings
        g = model.grid
        self.grid = g
        self.t_end = t_end
        kin = 0.0
        v = np.zeros(g.n_points, dtype=complex)
        for op, prof in model.hamiltonian:
            c0, c1 = complex(prof(0.0)), complex(prof(1.0))
            if c0 != c1:
                raise ValueError("grid Hamiltonians must be time independent")
            kin += c0 * op.kinetic
            v += c0 * op.diagonal
        if abs(kin.imag) > 0 or kin.real <= 0:
            raise ValueError("grid Hamiltonian needs a positive real kinetic coefficient")
        self.v = v
        x = g.x
        D = settings.zone
        self.left = x < -D
        self.right = x > D
        self.zone = ~(self.left | self.right)
        if not (self.left.any() and self.right.any()):
            raise ValueError("interaction zone covers the whole box")
        dt = settings.dt
        k = g.k
        self.K = np.exp(-0.5j * kin.real * k**2 * dt).astype(_CDT)
        self.Kh = np.exp(-0.25j * kin.real * k**2 * dt)
        self.kneg = k < 0
        self.kpos = k > 0
        w = settings.peel_width
        ramp = np.clip(np.minimum(x - g.x_min, g.x_max - x) / w, 0.0, 1.0)
        self.taper = np.sin(0.5 * np.pi * ramp).astype(_RDT) ** 2
        self.edge_left = (x < 0) & (ramp < 1)
        self.edge_right = (x >= 0) & (ramp < 1)
        self.configs: list[_Config] = []
        self.n_rows = 0
        self._cfg_keys: dict = {}

    # -- configurations -----------------------------------------------------
    def config_index(self, alpha: AlphaVector) -> int:
        key = alpha.alphas
        if key in self._cfg_keys:
            return self._cfg_keys[key]
        m = self.model
        ops = dressed_jump_ops(m, alpha)
        ls = np.array([op.diagonal for op in ops])
        rate = np.sum(np.abs(ls) ** 2, axis=0)
        veff = self.v + gauge_hamiltonian(m, alpha).diagonal - 0.5j * rate
        side_l = np.empty((len(ops), 2), dtype=complex)
        rate_far = np.empty(2)
        for s, mask in enumerate((self.left, self.right)):
            vals = ls[:, mask]
            ref = vals[:, -1 if s == 0 else 0]
            if np.max(np.abs(vals - ref[:, None]), initial=0.0) > 1e-12 * max(1.0, np.abs(ref).max()):
                raise ValueError("jump operators must be constant outside the interaction zone")
            vr = veff[mask].real
            if np.ptp(vr) > 1e-12 * max(1.0, np.abs(vr).max()):
                raise ValueError("potential must be constant outside the interaction zone")
            side_l[:, s] = ref
            rate_far[s] = float(np.sum(np.abs(ref) ** 2))
        quiet = rate_far * self.t_end < self.s.quiet_rate
        classes = np.arange(len(ops))
        for j in range(len(ops)):
            for i in range(j):
                if classes[i] == i and np.array_equal(ls[i], ls[j]):
                    classes[j] = i
                    break
        half = np.exp(-0.5j * veff * self.s.dt).astype(_CDT)
        self.configs.append(_Config(alpha, ls, side_l, rate_far, quiet, half, classes))
        self._cfg_keys[key] = len(self.configs) - 1
        return len(self.configs) - 1

    def _child_alpha(self, cfg: _Config, channel: int, grid_state: np.ndarray, far: np.ndarray):
        rule = self.rule
        if isinstance(rule, FixedAlpha):
            return cfg.alpha
        if isinstance(rule, SequenceConditioned):
            op = GridOperator(self.grid, 0.0, cfg.ls[channel])
            return alpha_sequence_conditioned(self.model, op)
        if isinstance(rule, StateConditioned):
            p = np.abs(grid_state) ** 2
            tr = float(p.sum() + far.sum())
            vals = []
            for L in self.model.jump_ops:
                d = L.diagonal
                lv = (d[self.left][-1], d[self.right][0])
                vals.append(-(np.sum(d * p) + lv[0] * far[0] + lv[1] * far[1]) / tr)
            return AlphaVector(vals)
        raise TypeError(f"unknown rule {rule!r}")

    # -- main loop ----------------------------------------------------------
    def run(self, psi0: GridWave, n_traj: int, seed: int, *, t0: float = 0.0, n_cap: int = 64,
            finalize: bool = True, track_records: bool = False, indices=None) -> GridRun:
        """Run ``n_traj`` trajectories (stream indices ``0..n_traj-1`` unless
        ``indices`` is given) from ``t0`` up to ``t_end``."""
        g = self.grid
        if psi0.grid != g or psi0.representation != "position":
            raise ValueError("initial wave must be a position-space wave on the model grid")
        if abs(psi0.norm2() - 1.0) > 1e-9:
            raise ValueError("initial wave must be normalized")
        dt = self.s.dt
        sqdx = np.sqrt(g.dx)
        psi_d = psi0.amplitudes * sqdx  # discrete normalization: sum |psi|^2 = 1
        alpha0 = initial_alpha(self.model, self.rule, psi0)
        c0 = self.config_index(alpha0)

        stream_ids = np.arange(n_traj) if indices is None else np.asarray(indices, dtype=np.int64)
        n_traj = len(stream_ids)
        draws = DrawTable(seed, stream_ids, initial_width=8)
        counts = np.zeros(n_traj, dtype=np.int64)
        pending = np.ones(n_traj, dtype=bool)
        direction = np.zeros(n_traj, dtype=np.int8)
        overflow = np.zeros(n_traj, dtype=bool)
        records = [[] for _ in range(n_traj)] if track_records else None

        u0 = draws.take(np.arange(n_traj))
        o = np.argsort(-u0, kind="stable")
        lattices = [
            {"rows": [_Row(0, c0, o, u0[o])], "A": psi_d[None].astype(_CDT), "far": np.zeros((1, 2)),
             "t": t0},
            {"rows": [], "A": np.zeros((0, g.n_points), _CDT), "far": np.zeros((0, 2)), "t": t0 + 0.5 * dt},
        ]
        scalar_jobs = []
        stats = {"row_steps": 0, "rows": 1, "max_rows": 1, "ticks": 0}
        tick = 0
        t_stop = self.t_end + 1e-9 * dt
        while lattices[0]["rows"] or lattices[1]["rows"]:
            if lattices[0]["t"] + dt > t_stop and lattices[1]["t"] + dt > t_stop:
                break
            lat = lattices[tick % 2]
            other = lattices[(tick + 1) % 2]
            if lat["t"] + dt <= t_stop:
                if lat["rows"]:
                    self._step(lat, other, draws, counts, pending, direction, overflow, records, n_cap,
                               scalar_jobs)
                    stats["row_steps"] += len(lat["rows"])
                lat["t"] += dt
            tick += 1
            stats["max_rows"] = max(stats["max_rows"], len(lattices[0]["rows"]) + len(lattices[1]["rows"]))
            if tick % (2 * self.s.check_every) == 0:
                for L in lattices:
                    self._peel(L)
                    if finalize:
                        self._finalize(L, counts, pending, direction, scalar_jobs)
            if scalar_jobs:
                self._run_scalar(scalar_jobs, draws, counts, pending, direction, overflow, records, n_cap,
                                 finalize)
                scalar_jobs.clear()
        stats["ticks"] = tick
        if finalize and self.s.far_horizon is not None and self.s.far_horizon > self.t_end:
            self._hand_off_far(lattices, scalar_jobs)
            if scalar_jobs:
                self._run_scalar(scalar_jobs, draws, counts, pending, direction, overflow, records, n_cap,
                                 finalize)

        final_rows = None
        if not finalize:
            final_rows = []
            for L in lattices:
                for r, row in enumerate(L["rows"]):
                    final_rows.append((row, L["A"][r].astype(complex) / sqdx, L["far"][r].copy(), L["t"]))
        for L in lattices:
            for row in L["rows"]:
                ids = row.ids[row.hi:row.lo]
                counts[ids] = row.order
        stats["rows"] = self.n_rows + 1
        return GridRun(counts, pending, direction, overflow, records, final_rows, stats)

    def _step(self, lat, other, draws, counts, pending, direction, overflow, records, n_cap, scalar_jobs):
        rows = lat["rows"]
        A = lat["A"]
        far = lat["far"]
        dt = self.s.dt
        new_rows, new_A, new_far = [], [], []
        by_cfg: dict[int, list[int]] = {}
        for r, row in enumerate(rows):
            by_cfg.setdefault(row.cfg, []).append(r)
        S = np.empty(len(rows))
        F_all = {}
        for ci, idx in by_cfg.items():
            cfg = self.configs[ci]
            idx = np.array(idx)
            sub = A[idx] * cfg.half
            F = sfft.fft(sub, axis=1, overwrite_x=True)
            A[idx] = cfg.half * sfft.ifft(self.K * F, axis=1)
            far[idx] *= np.exp(-cfg.rate_far * dt)
            S[idx] = _norms(A[idx]) + far[idx].sum(axis=1)
            F_all[ci] = (idx, F)
        t_mid = lat["t"] + 0.5 * dt
        for ci, (idx, F) in F_all.items():
            cfg = self.configs[ci]
            for pos, r in enumerate(idx):
                row = rows[r]
                if not S[r] < row.next_u:
                    continue
                seg = row.us[row.hi:row.lo]
                n_j = int(np.searchsorted(-seg, -S[r], side="left"))
                ids = row.ids[row.hi:row.hi + n_j]
                row.hi += n_j
                mid = sfft.ifft(self.Kh * F[pos].astype(complex))
                far_mid = far[r] * np.exp(0.5 * cfg.rate_far * dt)
                amps = cfg.ls * mid[None, :]
                p = np.sum(np.abs(amps) ** 2, axis=1) + (np.abs(cfg.side_l) ** 2) @ far_mid
                self._spawn(cfg, row, ids, amps, p, far_mid, t_mid, draws, counts, pending, direction,
                            overflow, records, n_cap, new_rows, new_A, new_far, scalar_jobs)
        keep = [r for r, row in enumerate(rows) if row.pending > 0]
        if len(keep) < len(rows):
            lat["rows"] = [rows[r] for r in keep]
            lat["A"] = A[keep]
            lat["far"] = far[keep]
        if new_rows:
            other["rows"] = other["rows"] + new_rows
            other["A"] = np.concatenate([other["A"], np.array(new_A, dtype=_CDT)])
            other["far"] = np.concatenate([other["far"], np.array(new_far)])

    def _spawn(self, cfg, row, ids, amps, p, far_mid, t_mid, draws, counts, pending, direction, overflow,
               records, n_cap, new_rows, new_A, new_far, scalar_jobs):
        """Create child branches for trajectories ``ids`` jumping out of ``row``."""
        v = draws.take(ids)
        cum = np.cumsum(p)
        if cum[-1] <= 0:
            raise RuntimeError("jump with vanishing channel weights")
        ch = np.minimum(np.searchsorted(cum, v * cum[-1], side="right"), len(p) - 1)
        cls = cfg.classes[ch]
        if records is not None:
            for i, c in zip(ids, ch):
                records[i].append((int(c), float(t_mid)))
        if row.order + 1 >= n_cap:
            overflow[ids] = True
            pending[ids] = False
            counts[ids] = n_cap
            return
        for rep in np.unique(cls):
            sel = ids[cls == rep]
            # trajectories of one class share the post-jump branch; any
            # member channel gives the same dressed operator
            j = int(rep)
            norm2 = float(p[j])
            if norm2 <= 0:
                raise RuntimeError("selected a channel with zero weight")
            state = amps[j] / np.sqrt(norm2)
            far_c = (np.abs(cfg.side_l[j]) ** 2) * far_mid / norm2
            alpha = self._child_alpha(cfg, j, state, far_c)
            ci = self.config_index(alpha)
            u = draws.take(sel)
            o = np.argsort(-u, kind="stable")
            child = _Row(row.order + 1, ci, sel[o], u[o])
            grid_mass = float(np.sum(np.abs(state) ** 2))
            if grid_mass < 1e-13:
                scalar_jobs.append((child, far_c.copy(), t_mid))
                continue
            self.n_rows += 1
            new_rows.append(child)
            new_A.append(state)
            new_far.append(far_c)

    def _peel(self, lat):
        if not lat["rows"]:
            return
        A = lat["A"]
        before_l = _norms(A[:, self.edge_left])
        before_r = _norms(A[:, self.edge_right])
        A[:, self.edge_left] *= self.taper[self.edge_left]
        A[:, self.edge_right] *= self.taper[self.edge_right]
        lat["far"][:, 0] += before_l - _norms(A[:, self.edge_left])
        lat["far"][:, 1] += before_r - _norms(A[:, self.edge_right])

    def _finalize(self, lat, counts, pending, direction, scalar_jobs):
        rows = lat["rows"]
        if not rows:
            return
        A = lat["A"]
        far = lat["far"]
        stay = np.zeros(len(rows))
        for s, (mask, kdir) in enumerate(((self.left, self.kneg), (self.right, self.kpos))):
            q = np.array([self.configs[row.cfg].quiet[s] for row in rows])
            if not q.any():
                continue
            idx = np.nonzero(q)[0]
            F = sfft.fft(A[idx], axis=1)
            F[:, ~kdir] = 0
            out = sfft.ifft(F, axis=1)
            stay[idx] += _norms(out * mask) + far[idx, s]
        grid_mass = _norms(A)
        keep = []
        for r, row in enumerate(rows):
            seg = row.us[row.hi:row.lo]
            n_keep = int(np.searchsorted(-seg, -stay[r], side="right"))
            done = row.ids[row.hi + n_keep:row.lo]
            if done.size:
                counts[done] = row.order
                pending[done] = False
                direction[done] = self._direction(row.cfg)
                row.lo = row.hi + n_keep
            if row.pending == 0:
                continue
            total = grid_mass[r] + far[r].sum()
            if grid_mass[r] < 1e-12 * total:
                scalar_jobs.append((row, far[r].copy(), lat["t"]))
                continue
            keep.append(r)
        if len(keep) < len(rows):
            lat["rows"] = [rows[r] for r in keep]
            lat["A"] = A[keep]
            lat["far"] = far[keep]

    def _hand_off_far(self, lattices, scalar_jobs):
        """At ``t_end``, pass trajectories whose draw lies below the far mass
        to the scalar resolver; the rest stay undecided."""
        for L in lattices:
            for r, row in enumerate(L["rows"]):
                far = L["far"][r]
                seg = row.us[row.hi:row.lo]
                n_keep = int(np.searchsorted(-seg, -float(far.sum()), side="right"))
                if n_keep == row.pending:
                    continue
                split = _Row(row.order, row.cfg, row.ids[row.hi + n_keep:row.lo], seg[n_keep:].copy())
                row.lo = row.hi + n_keep
                scalar_jobs.append((split, far.copy(), L["t"]))

    def _direction(self, ci: int) -> int:
        q = self.configs[ci].quiet
        if q[0] and not q[1]:
            return -1
        if q[1] and not q[0]:
            return 1
        return 0

    def _run_scalar(self, jobs, draws, counts, pending, direction, overflow, records, n_cap, finalize):
        """Resolve rows whose grid part is gone: only far masses remain."""
        stack = list(jobs)
        while stack:
            row, far, t = stack.pop()
            cfg = self.configs[row.cfg]
            ids = row.ids[row.hi:row.lo]
            us = row.us[row.hi:row.lo]
            if ids.size == 0:
                continue
            stay = float(np.sum(far[cfg.quiet]))
            rates = cfg.rate_far
            done = us <= stay
            if finalize and done.any():
                counts[ids[done]] = row.order
                pending[ids[done]] = False
                direction[ids[done]] = self._direction(row.cfg)
            act = ids[~done] if finalize else ids
            ua = us[~done] if finalize else us
            if act.size == 0:
                continue
            tj = self._scalar_times(far, rates, cfg.quiet, ua, t)
            horizon = self.t_end if self.s.far_horizon is None else self.s.far_horizon
            late = tj > horizon
            if late.any():
                counts[act[late]] = row.order
            act, ua, tj = act[~late], ua[~late], tj[~late]
            for i, u_i, t_i in zip(act, ua, tj):
                far_t = far * np.exp(-rates * (t_i - t))
                p = (np.abs(cfg.side_l) ** 2) @ far_t
                v = draws.take([i])[0]
                cum = np.cumsum(p)
                c = int(min(np.searchsorted(cum, v * cum[-1], side="right"), len(p) - 1))
                if records is not None:
                    records[i].append((c, float(t_i)))
                if row.order + 1 >= n_cap:
                    overflow[i] = True
                    pending[i] = False
                    counts[i] = n_cap
                    continue
                far_c = (np.abs(cfg.side_l[c]) ** 2) * far_t / p[c]
                alpha = self._child_alpha(cfg, c, np.zeros(0), far_c)
                ci = self.config_index(alpha)
                u_new = draws.take([i])
                stack.append((_Row(row.order + 1, ci, np.array([i]), u_new), far_c, float(t_i)))

    @staticmethod
    def _scalar_times(far, rates, quiet, us, t):
        """Times at which far[0] e^{-r0 s} + far[1] e^{-r1 s} falls to each u."""
        r = np.where(quiet, 0.0, rates)

        def S(s):
            return far[0] * np.exp(-r[0] * s) + far[1] * np.exp(-r[1] * s)

        lo = np.zeros(len(us))
        rmax = max(r.max(), 1e-300)
        hi = np.full(len(us), 1.0 / rmax)
        floor = float(np.sum(far[quiet]))
        us = np.maximum(us, floor * (1 + 1e-15))
        for _ in range(200):
            grow = S(hi) > us
            if not grow.any():
                break
            hi = np.where(grow, 2 * hi, hi)
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            above = S(mid) > us
            lo = np.where(above, mid, lo)
            hi = np.where(above, hi, mid)
        return t + 0.5 * (lo + hi)


def grid_jump_counts(model: LindbladModel, rule: DecompositionRule, initial_state: GridWave, t_end: float,
                     n_traj: int, seed: int, *, t0: float = 0.0, n_cap: int = 64,
                     settings: GridMCSettings | None = None):
    """Jump-count histogram at ``t_end`` and the overflow count."""
    settings = settings or default_settings(model)
    eng = GridEngine(model, rule, settings, t_end)
    run = eng.run(initial_state, n_traj, seed, t0=t0, n_cap=n_cap, finalize=True)
    ok = ~run.overflow
    return np.bincount(run.counts[ok], minlength=1), int(run.overflow.sum())


def default_settings(model: LindbladModel) -> GridMCSettings:
    """Step from the largest jump rate and the grid's populated band guard."""
    rate = max(float(np.max(np.abs(L.diagonal) ** 2)) for L in model.jump_ops)
    dt = 0.25 / max(rate * model.n_channels, 1.0)
    return GridMCSettings(dt=dt)


def sample_grid_trajectory(model: LindbladModel, rule: DecompositionRule, initial_state: GridWave,
                           t_end: float, seed: int, *, t0: float = 0.0, index: int = 0, n_cap: int = 64,
                           settings: GridMCSettings | None = None) -> TrajectoryState:
    """One grid trajectory evolved up to ``t_end`` (no early finalization).

    The returned ``state`` is the grid part of the branch; mass moved off the
    box edges is included in ``survival``.
    """
    settings = settings or default_settings(model)
    eng = GridEngine(model, rule, settings, t_end)
    run = eng.run(initial_state, 1, seed, t0=t0, n_cap=n_cap, finalize=False, track_records=True,
                  indices=[index])
    rec = JumpRecord(tuple(run.records[0]))
    for row, grid_amp, far, _t in run.final_rows or []:
        if row.pending > 0:
            surv = float(np.sum(np.abs(grid_amp) ** 2) * model.grid.dx + far.sum())
            wave = GridWave(model.grid, grid_amp, "position")
            return TrajectoryState(wave, eng.configs[row.cfg].alpha, rec, surv, t_end, bool(run.overflow[0]))
    wave = GridWave(model.grid, np.zeros(model.grid.n_points), "position")
    return TrajectoryState(wave, eng.configs[0].alpha, rec, 0.0, t_end, bool(run.overflow[0]))
