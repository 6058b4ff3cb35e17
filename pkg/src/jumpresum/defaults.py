"""Every physical and numerical default used by the command-line tools.

Each entry can be overridden by the flag of the same name (underscores
become dashes).
"""

from __future__ import annotations

import math

SEED = 42

REFLECTION = {
    "e_min": 0.01,
    "e_max": 100.0,
    "points": 25,
    "trajectories": 100_000,
    "grid_points": 4096,       # box [-half_width, half_width) in units of 1/k0
    "half_width": 128.0,
    "x0": -50.0,               # packet centre, units of 1/k0
    "sigma_x": 10.0,           # packet width, so sigma_k = k0/20
    "dt_scale": 0.25,          # dt = dt_scale / |kappa|^2
    "zone": 1.0,               # interaction zone half-width for finalization
}

LZ = {
    "deltas": (0.05, 0.1, 0.25, 0.5, 1.0, 2.0),
    "gammas": (0.0, 0.1, 0.3, 1.0, 3.0, 10.0, 100.0),
    "tol": 1e-10,              # local tolerance of the Bloch integrator
    "tol_outer": 1e-4,         # tau_max doubling convergence threshold
}


def lz_tau_max0(delta: float) -> float:
    """Initial half-length of the sweep before doubling."""
    return 30.0 * (1.0 + math.sqrt(delta)) + 10.0


WEIGHTS = {
    "model": "lz",
    "delta": 0.25,
    "gamma": 1.0,
    "tau": 20.0,               # sweep runs over [-tau, tau]
    "trajectories": 10_000,
    "tol": 1e-8,
}

MAX_JUMPS = 64
OVERFLOW_LIMIT = 1e-4          # tolerated fraction of capped trajectories
UNDECIDED_LIMIT = 1e-3         # tolerated fraction of undecided reflection runs
CSV_DIGITS = 9


def table() -> list[tuple[str, str, object]]:
    """Flat (section, name, value) listing for documentation and ``--help``."""
    rows = [("global", "seed", SEED), ("global", "max_jumps", MAX_JUMPS),
            ("global", "overflow_limit", OVERFLOW_LIMIT), ("global", "undecided_limit", UNDECIDED_LIMIT)]
    for section, d in (("reflection", REFLECTION), ("lz", LZ), ("weights", WEIGHTS)):
        rows.extend((section, k, v) for k, v in d.items())
    rows.append(("lz", "tau_max0", "30 (1 + sqrt(delta)) + 10"))
    return rows
