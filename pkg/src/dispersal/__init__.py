"""Numerical laboratory for a selection-mutation model of dispersal evolution.

The package solves the full epsilon-scaled phase-space model, independently
solves the limiting constrained Hamilton-Jacobi system with its canonical
trait ODE, computes principal Floquet bundles / effective Hamiltonians, and
quantifies how the population density concentrates on a moving dominant trait
as epsilon shrinks.
"""

__version__ = "0.1.0"
