"""Adaptive jump-expansion tools for Markovian open quantum systems.

Submodules:
    quantum: operators, states and the 1D grid.
    lindblad: models, gauge transforms and the exact master-equation solver.
    adaptive: gauge rules, trajectory sampling and order weights.
    grid1d: wave packets and split-step propagation.
    gridtraj: branch-sharing trajectory engine for grid models.
    reflection: detector-reflection benchmark.
    lz: Landau-Zener benchmark with dephasing.
"""

__version__ = "0.1.0"
