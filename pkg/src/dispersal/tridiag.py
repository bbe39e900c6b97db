"""Tridiagonal helpers for the implicit Neumann diffusion solves.

All implicit substeps in the package invert matrices of the form I - mu*L,
with L the mirror-ghost Neumann Laplacian.  These are symmetric M-matrices
(positive diagonal, nonpositive off-diagonal, diagonally dominant), so a
Cholesky factorization exists, can be reused across time steps, and the
inverse is entrywise positive -- which is what preserves positivity of the
marched densities exactly.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded, solve_banded

from .errors import SolverError


def diffusion_bands_upper(n: int, h: float, mu: float) -> np.ndarray:
    """Upper banded (2, n) storage of I - mu*L for scipy's banded solvers."""
    d = h * h
    ab = np.zeros((2, n))
    ab[0, 1:] = -mu / d
    ab[1, :] = 1.0 + 2.0 * mu / d
    ab[1, 0] = 1.0 + mu / d
    ab[1, -1] = 1.0 + mu / d
    return ab


class FactoredDiffusion:
    """(I - mu*L)^{-1} applied through a cached banded Cholesky factorization."""

    def __init__(self, n: int, h: float, mu: float):
        if mu < 0.0:
            raise SolverError("implicit diffusion needs mu >= 0", mu=mu)
        self.n = n
        self.mu = mu
        self._cb = cholesky_banded(diffusion_bands_upper(n, h, mu), lower=False)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve (I - mu*L) x = rhs; rhs may be (n,) or (n, k) for k systems."""
        return cho_solve_banded((self._cb, False), rhs)


class BlockDiffusion:
    """Batched per-slice solves of (I - mu_j*L) x_j = rhs_j, one mu per slice.

    The slices are stacked into a single block-tridiagonal banded system with
    zeroed couplings at block boundaries, so one solve_banded call handles
    all of them.
    """

    def __init__(self, n: int, h: float, mus: np.ndarray):
        mus = np.asarray(mus, dtype=float)
        if mus.ndim != 1 or np.any(mus < 0.0):
            raise SolverError("per-slice diffusion numbers must be >= 0")
        self.n = n
        self.n_slices = mus.size
        d = h * h
        total = self.n_slices * n
        ab = np.zeros((3, total))
        diag = np.full((self.n_slices, n), 1.0, dtype=float)
        diag += 2.0 * mus[:, None] / d
        diag[:, 0] = 1.0 + mus / d
        diag[:, -1] = 1.0 + mus / d
        off = np.zeros((self.n_slices, n))
        off[:, 1:] = -mus[:, None] / d
        ab[1, :] = diag.ravel()
        ab[0, :] = off.ravel()            # super-diagonal, zero at block starts
        sub = np.zeros((self.n_slices, n))
        sub[:, :-1] = -mus[:, None] / d
        ab[2, :] = sub.ravel()            # sub-diagonal, zero at block ends
        self._ab = ab

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """rhs has shape (n_slices, n); returns the same shape."""
        flat = np.ascontiguousarray(rhs, dtype=float).reshape(-1)
        out = solve_banded((1, 1), self._ab, flat,
                           overwrite_ab=False, overwrite_b=False,
                           check_finite=False)
        return out.reshape(self.n_slices, self.n)


class DenseDiffusionInverse:
    """Dense (I - mu*L)^{-1}; fastest for long single-slice marches.

    The inverse of an irreducible M-matrix is entrywise strictly positive,
    which is asserted once at construction.
    """

    def __init__(self, n: int, h: float, mu: float):
        d = h * h
        m = np.zeros((n, n))
        idx = np.arange(n)
        m[idx, idx] = 1.0 + 2.0 * mu / d
        m[0, 0] = 1.0 + mu / d
        m[-1, -1] = 1.0 + mu / d
        m[idx[:-1], idx[:-1] + 1] = -mu / d
        m[idx[:-1] + 1, idx[:-1]] = -mu / d
        self.inv = np.linalg.inv(m)
        if self.inv.min() <= 0.0:
            raise SolverError("diffusion inverse lost positivity",
                              min_entry=float(self.inv.min()))

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.inv @ v
