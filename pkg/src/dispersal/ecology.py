"""Resident steady states, principal eigenpairs, and invasion-exponent surfaces.

The invasion exponent lambda(z1, z2) is the smallest eigenvalue of the
operator  -alpha(z1) Lap - (m - theta_{z2})  under Neumann closure, where
theta_{z2} is the unique positive steady state of the single-trait logistic
reaction-diffusion equation with dispersal rate alpha(z2).  Because traits
enter only through the dispersal rate, the exponent factors through a smooth
surface on rate pairs, which is what the explicit U-shaped profile
construction below exploits.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded, eigh_tridiagonal, solve_banded

from .errors import EigenDiverged, SolverError, ThetaDiverged, ValidationError
from .grids import ScalarField, SpatialGrid, mirror_laplacian, parabola_vertex
from .tridiag import FactoredDiffusion

DERIV_STEP_FRACTION = 1e-3   # finite-difference step as a fraction of b - a
THETA_CACHE_QUANTUM = 1e-12  # resident traits closer than this share a theta


# ---------------------------------------------------------------------------
# resident steady state


def _logistic_residual(theta: np.ndarray, alpha: float, m: np.ndarray,
                       h: float) -> np.ndarray:
    return alpha * mirror_laplacian(theta, h) + theta * (m - theta)


def solve_theta(alpha: float, m: ScalarField, *, residual_rtol: float = 1e-12,
                max_newton: int = 60) -> ScalarField:
    """Unique positive steady state of alpha*Lap(theta) + theta*(m - theta) = 0.

    Damped Newton from theta = m, falling back to pseudo-time marching if an
    iterate leaves the positive cone.  The returned field satisfies
    ||residual||_inf <= residual_rtol * ||m||_inf (default well inside the
    1e-10 contract) and is strictly positive.
    """
    if alpha <= 0.0:
        raise ValidationError("dispersal rate must be positive", alpha=alpha)
    mv = m.values
    if mv.min() <= 0.0:
        raise ValidationError("resource distribution must be positive",
                              min_m=float(mv.min()))
    h = m.grid.h_x
    n = m.grid.n_x
    target = residual_rtol * float(np.max(np.abs(mv)))
    theta = mv.copy()
    history = []
    for _ in range(max_newton):
        res = _logistic_residual(theta, alpha, mv, h)
        norm = float(np.max(np.abs(res)))
        history.append(norm)
        if norm <= target:
            return ScalarField(m.grid, theta)
        # Jacobian alpha*L + diag(m - 2 theta) in general banded form
        d = h * h
        ab = np.zeros((3, n))
        ab[1, :] = -2.0 * alpha / d + mv - 2.0 * theta
        ab[1, 0] = -alpha / d + mv[0] - 2.0 * theta[0]
        ab[1, -1] = -alpha / d + mv[-1] - 2.0 * theta[-1]
        ab[0, 1:] = alpha / d
        ab[2, :-1] = alpha / d
        delta = solve_banded((1, 1), ab, -res)
        step = 1.0
        accepted = False
        for _ in range(40):
            cand = theta + step * delta
            if cand.min() > 0.0:
                cand_norm = float(np.max(np.abs(
                    _logistic_residual(cand, alpha, mv, h))))
                if cand_norm <= (1.0 - 0.25 * step) * norm or cand_norm <= target:
                    theta = cand
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            break
    # Newton stalled: implicit-diffusion logistic marching is unconditionally
    # positivity-preserving and converges linearly.  Its round-off floor is a
    # little above Newton's, so the target keeps 10x margin to the contract.
    return solve_theta_pseudotime(alpha, m,
                                  residual_target=max(target, 1e-11 * float(np.max(np.abs(mv)))),
                                  history=history)


def solve_theta_pseudotime(alpha: float, m: ScalarField, *,
                           dt: float = 0.2, residual_target: float = 1e-12,
                           max_steps: int = 200_000,
                           history: list | None = None) -> ScalarField:
    """Independent theta solver: implicit diffusion + explicit logistic marching.

    Slower than Newton but monotone-safe; used as the fallback and as the
    cross-check oracle in the test suite.
    """
    if alpha <= 0.0:
        raise ValidationError("dispersal rate must be positive", alpha=alpha)
    mv = m.values
    if mv.min() <= 0.0:
        raise ValidationError("resource distribution must be positive",
                              min_m=float(mv.min()))
    h = m.grid.h_x
    solver = FactoredDiffusion(m.grid.n_x, h, dt * alpha)
    theta = mv.copy()
    history = history if history is not None else []
    for k in range(max_steps):
        growth = 1.0 + dt * (mv - theta)
        if growth.min() <= 0.0:
            raise ThetaDiverged("pseudo-time reaction factor went nonpositive",
                                step=k, min_factor=float(growth.min()))
        theta = solver.solve(theta * growth)
        if k % 8 == 0:
            norm = float(np.max(np.abs(_logistic_residual(theta, alpha, mv, h))))
            history.append(norm)
            if norm <= residual_target:
                return ScalarField(m.grid, theta)
    raise ThetaDiverged("steady state iteration exhausted",
                        residual_history=history[-20:], target=residual_target)


# ---------------------------------------------------------------------------
# principal eigenpair


@dataclass(frozen=True)
class EigenPair:
    """Principal eigenvalue and positive unit-mass eigenfunction."""

    lam: float
    phi: ScalarField
    residual: float

    def __post_init__(self) -> None:
        if self.phi.values.min() <= 0.0:
            raise SolverError("eigenfunction must be strictly positive")
        mass = self.phi.grid.h_x * self.phi.values.sum()
        if abs(mass - 1.0) > 1e-12:
            raise SolverError("eigenfunction mass normalization violated",
                              mass=mass)
        if self.residual > 1e-10:
            raise SolverError("eigenpair residual above contract",
                              residual=self.residual)


def _operator_diagonals(alpha: float, c: np.ndarray, h: float):
    """Main and off diagonals of A = -alpha*L - diag(c)."""
    n = c.size
    d = h * h
    main = np.full(n, 2.0 * alpha / d) - c
    main[0] = alpha / d - c[0]
    main[-1] = alpha / d - c[-1]
    off = np.full(n - 1, -alpha / d)
    return main, off


def principal_eigenpair(alpha: float, c: ScalarField, *,
                        value_tol: float = 1e-12, residual_tol: float = 1e-11,
                        max_iter: int = 500) -> EigenPair:
    """Smallest eigenvalue of -alpha*L - diag(c) with positive eigenfunction.

    Shifted inverse power iteration: the Gershgorin bound lambda_min >= -max c
    makes A - (shift)I positive definite for shift = -max c - 1, so one banded
    Cholesky factorization drives all iterations.
    """
    if alpha <= 0.0:
        raise ValidationError("dispersal rate must be positive", alpha=alpha)
    cv = c.values
    h = c.grid.h_x
    main, off = _operator_diagonals(alpha, cv, h)
    shift = -float(cv.max()) - 1.0
    ab = np.zeros((2, cv.size))
    ab[1, :] = main - shift
    ab[0, 1:] = off
    cb = cholesky_banded(ab, lower=False)

    def matvec(v: np.ndarray) -> np.ndarray:
        out = main * v
        out[:-1] += off * v[1:]
        out[1:] += off * v[:-1]
        return out

    v = np.full(cv.size, 1.0 / np.sqrt(cv.size))
    lam_prev = None
    lam = 0.0
    residual = np.inf
    for _ in range(max_iter):
        w = cho_solve_banded((cb, False), v)
        if w.min() <= 0.0:
            # the resolvent of an irreducible M-matrix is positive, so this
            # can only be round-off catastrophe
            raise SolverError("inverse iteration lost positivity",
                              min_entry=float(w.min()))
        w /= np.linalg.norm(w)
        av = matvec(w)
        lam = float(w @ av)
        # measure the residual on the mass-normalized scale the contract
        # uses, not on the unit-2-norm iterate (roughly sqrt(n) smaller)
        s = 1.0 / (h * w.sum())
        residual = float(np.max(np.abs(av - lam * w)) * s
                         / max(1.0, s * np.max(np.abs(w))))
        v = w
        if (lam_prev is not None and abs(lam - lam_prev) <= value_tol *
                max(1.0, abs(lam)) and residual <= residual_tol):
            break
        lam_prev = lam
    else:
        # the target is 10x inside the contract; only an actual contract
        # breach is a failure (coarse-grid round-off can pin the residual
        # between the two)
        if residual > 1e-10:
            raise EigenDiverged("inverse power iteration cap exceeded",
                                iterations=max_iter, residual=residual,
                                lam=lam)
    phi = v / (h * v.sum())
    av = matvec(phi)
    residual = float(np.max(np.abs(av - lam * phi)) / max(1.0, np.max(np.abs(phi))))
    return EigenPair(lam=lam, phi=ScalarField(c.grid, phi), residual=residual)


# ---------------------------------------------------------------------------
# dispersal profiles


@dataclass(frozen=True)
class DispersalProfile:
    """Trait-to-dispersal map with derivative access and construction metadata."""

    a: float
    b: float
    fn: Callable[[np.ndarray], np.ndarray]
    dfn: Callable[[np.ndarray], np.ndarray] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        zs = np.linspace(self.a, self.b, 513)
        vals = np.asarray(self.fn(zs), dtype=float)
        if not np.all(np.isfinite(vals)) or vals.min() <= 0.0:
            raise ValidationError("dispersal rate must be positive and finite "
                                  "on the trait interval",
                                  min_alpha=float(np.min(vals)))
        self.meta.setdefault("alpha_min", float(vals.min()))
        self.meta.setdefault("alpha_max", float(vals.max()))

    def __call__(self, z):
        return self.fn(np.asarray(z, dtype=float))

    def prime(self, z):
        if self.dfn is not None:
            return self.dfn(np.asarray(z, dtype=float))
        hd = 1e-6 * (self.b - self.a)
        return (self.fn(np.asarray(z) + hd) - self.fn(np.asarray(z) - hd)) / (2 * hd)

    def argmin(self, n: int = 4097) -> float:
        """Refined minimizer of the rate over [a, b] (endpoints allowed)."""
        zs = np.linspace(self.a, self.b, n)
        vals = np.asarray(self.fn(zs), dtype=float)
        j = int(np.argmin(vals))
        if j == 0 or j == n - 1:
            return float(zs[j])
        z_star, _, _ = parabola_vertex(float(zs[j]), float(vals[j - 1]),
                                       float(vals[j]), float(vals[j + 1]),
                                       float(zs[1] - zs[0]))
        return z_star

    @staticmethod
    def constant(value: float, a: float, b: float) -> "DispersalProfile":
        return DispersalProfile(a, b, lambda z: np.full_like(np.asarray(z, dtype=float), value),
                                lambda z: np.zeros_like(np.asarray(z, dtype=float)),
                                {"kind": "constant", "value": value})

    @staticmethod
    def affine(c0: float, c1: float, a: float, b: float) -> "DispersalProfile":
        return DispersalProfile(a, b, lambda z: c0 + c1 * np.asarray(z, dtype=float),
                                lambda z: np.full_like(np.asarray(z, dtype=float), c1),
                                {"kind": "affine", "c0": c0, "c1": c1})


class ThetaCache:
    """Steady states keyed by quantized resident trait.

    Surface sweeps revisit the same resident column many times; quantizing at
    1e-12 makes the sweep O(#columns) theta solves.  Insert-or-get is guarded
    by a lock so data-parallel sweeps can share one cache.
    """

    def __init__(self, profile: DispersalProfile, m: ScalarField,
                 quantum: float = THETA_CACHE_QUANTUM):
        self.profile = profile
        self.m = m
        self.quantum = quantum
        self._store: dict[int, ScalarField] = {}
        self._lock = threading.Lock()

    def theta(self, z2: float) -> ScalarField:
        key = int(round(z2 / self.quantum))
        with self._lock:
            hit = self._store.get(key)
        if hit is not None:
            return hit
        theta = solve_theta(float(self.profile(z2)), self.m)
        with self._lock:
            return self._store.setdefault(key, theta)


# ---------------------------------------------------------------------------
# invasion exponent and its derivatives


def invasion_exponent(z1: float, z2: float, profile: DispersalProfile,
                      m: ScalarField, cache: ThetaCache | None = None) -> float:
    """lambda(z1, z2): growth rate of a rare z1 mutant in a z2 resident."""
    cache = cache if cache is not None else ThetaCache(profile, m)
    theta = cache.theta(z2)
    c = ScalarField(m.grid, m.values - theta.values)
    return principal_eigenpair(float(profile(z1)), c).lam


def rate_pair_exponent(alpha1: float, alpha2: float, m: ScalarField,
                       theta: ScalarField | None = None) -> float:
    """The exponent as a function of raw rate pairs (used by the profile probe)."""
    theta = theta if theta is not None else solve_theta(alpha2, m)
    c = ScalarField(m.grid, m.values - theta.values)
    return principal_eigenpair(alpha1, c).lam


def lambda_derivs(z1: float, z2: float, profile: DispersalProfile,
                  m: ScalarField, cache: ThetaCache | None = None,
                  h_d: float | None = None) -> tuple[float, float]:
    """(d/dz1) lambda and (d2/dz1^2) lambda by second-order differences.

    Central stencils in the interior; one-sided stencils within h_d of the
    trait endpoints.
    """
    cache = cache if cache is not None else ThetaCache(profile, m)
    a, b = profile.a, profile.b
    h = h_d if h_d is not None else DERIV_STEP_FRACTION * (b - a)

    def f(z):
        return invasion_exponent(z, z2, profile, m, cache)

    if z1 - h < a:
        f0, f1, f2, f3 = f(z1), f(z1 + h), f(z1 + 2 * h), f(z1 + 3 * h)
        d1 = (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * h)
        d2 = (2.0 * f0 - 5.0 * f1 + 4.0 * f2 - f3) / (h * h)
    elif z1 + h > b:
        f0, f1, f2, f3 = f(z1), f(z1 - h), f(z1 - 2 * h), f(z1 - 3 * h)
        d1 = (3.0 * f0 - 4.0 * f1 + f2) / (2.0 * h)
        d2 = (2.0 * f0 - 5.0 * f1 + 4.0 * f2 - f3) / (h * h)
    else:
        fm, f0, fp = f(z1 - h), f(z1), f(z1 + h)
        d1 = (fp - fm) / (2.0 * h)
        d2 = (fm - 2.0 * f0 + fp) / (h * h)
    return d1, d2


def lambda_table(z1s: np.ndarray, z2s: np.ndarray, profile: DispersalProfile,
                 m: ScalarField, cache: ThetaCache | None = None) -> np.ndarray:
    """Exponent values on a (z1, z2) sample product, one theta solve per column."""
    cache = cache if cache is not None else ThetaCache(profile, m)
    out = np.empty((len(z1s), len(z2s)))
    for j, z2 in enumerate(z2s):
        theta = cache.theta(float(z2))
        c = ScalarField(m.grid, m.values - theta.values)
        for i, z1 in enumerate(z1s):
            out[i, j] = principal_eigenpair(float(profile(z1)), c).lam
    return out


@dataclass(frozen=True)
class LambdaSurface:
    """Sampled exponent surface with first/second trait derivatives."""

    z1: np.ndarray
    z2: np.ndarray
    lam: np.ndarray       # (n1, n2)
    dlam_dz1: np.ndarray
    d2lam_dz1: np.ndarray


def lambda_surface(profile: DispersalProfile, m: ScalarField,
                   nz1: int = 21, nz2: int = 21,
                   cache: ThetaCache | None = None,
                   h_d: float | None = None) -> LambdaSurface:
    """Exponent surface plus derivative columns on an endpoint-inclusive grid."""
    cache = cache if cache is not None else ThetaCache(profile, m)
    z1s = np.linspace(profile.a, profile.b, nz1)
    z2s = np.linspace(profile.a, profile.b, nz2)
    lam = lambda_table(z1s, z2s, profile, m, cache)
    d1 = np.empty_like(lam)
    d2 = np.empty_like(lam)
    for j, z2 in enumerate(z2s):
        for i, z1 in enumerate(z1s):
            d1[i, j], d2[i, j] = lambda_derivs(float(z1), float(z2), profile, m,
                                               cache, h_d)
    return LambdaSurface(z1s, z2s, lam, d1, d2)


# ---------------------------------------------------------------------------
# explicit U-shaped profile

PROBE_SAMPLES = 17  # default rate-box sampling for the curvature ratio


def construct_alpha(alpha0: float, L0: float, m: ScalarField,
                    trait_interval: tuple[float, float] = (-0.5, 0.5),
                    probe_n: int = PROBE_SAMPLES) -> DispersalProfile:
    """Explicit U-shaped dispersal profile with certified convexity structure.

    Probes the rate-pair exponent surface on [alpha0, alpha0+L0]^2 to estimate
    k0 = sup |d2_rate lambda| / d_rate lambda (a sampled max, hence a lower
    estimate of the true sup), then maps z -> alpha0 - log(cos zeta)/k0 on the
    symmetric interval [-z_M, z_M] with z_M = arccos(exp(-k0 L0)), affinely
    rescaled onto the configured trait interval.
    """
    if alpha0 <= 0.0 or L0 <= 0.0:
        raise ValidationError("profile construction needs alpha0 > 0, L0 > 0",
                              alpha0=alpha0, L0=L0)
    if probe_n < 5:
        raise ValidationError("rate probe needs at least 5 samples",
                              probe_n=probe_n)
    a, b = trait_interval
    if not a < b:
        raise ValidationError("trait interval needs a < b", a=a, b=b)

    alphas = np.linspace(alpha0, alpha0 + L0, probe_n)
    h_a = alphas[1] - alphas[0]
    surf = np.empty((probe_n, probe_n))
    for j, a2 in enumerate(alphas):
        theta = solve_theta(float(a2), m)
        for i, a1 in enumerate(alphas):
            surf[i, j] = rate_pair_exponent(float(a1), float(a2), m, theta)

    d1 = np.empty_like(surf)
    d2 = np.empty_like(surf)
    d1[1:-1] = (surf[2:] - surf[:-2]) / (2 * h_a)
    d1[0] = (-3 * surf[0] + 4 * surf[1] - surf[2]) / (2 * h_a)
    d1[-1] = (3 * surf[-1] - 4 * surf[-2] + surf[-3]) / (2 * h_a)
    d2[1:-1] = (surf[2:] - 2 * surf[1:-1] + surf[:-2]) / (h_a * h_a)
    d2[0] = (2 * surf[0] - 5 * surf[1] + 4 * surf[2] - surf[3]) / (h_a * h_a)
    d2[-1] = (2 * surf[-1] - 5 * surf[-2] + 4 * surf[-3] - surf[-4]) / (h_a * h_a)

    if d1.min() <= 0.0:
        raise ValidationError("rate-pair exponent must be increasing in the "
                              "mutant rate on the probe box",
                              min_slope=float(d1.min()))
    k0 = float(np.max(np.abs(d2) / d1))
    if k0 <= 0.0:
        raise ValidationError("curvature ratio probe degenerate", k0=k0)

    z_m = float(np.arccos(np.exp(-k0 * L0)))
    scale = 2.0 * z_m / (b - a)

    def to_sym(z):
        return (np.asarray(z, dtype=float) - a) * scale - z_m

    def alpha_fn(z):
        return alpha0 - np.log(np.cos(to_sym(z))) / k0

    def alpha_prime(z):
        return np.tan(to_sym(z)) / k0 * scale

    meta = {
        "kind": "u-shaped",
        "alpha0": alpha0,
        "L0": L0,
        "k0": k0,
        "k0_is_sample_max": True,
        "probe_n": probe_n,
        "z_M": z_m,
        "z_min": 0.5 * (a + b),
    }
    return DispersalProfile(a, b, alpha_fn, alpha_prime, meta)


# ---------------------------------------------------------------------------
# hypothesis verifier

H1_SAMPLES = 21  # default (z1, z2) sampling for the curvature/sign report


@dataclass(frozen=True)
class H1Report:
    """Sampled curvature bounds and endpoint selection-gradient signs.

    The extrema are maxima/minima over the sample grid only, hence inner
    estimates of the continuum bounds.
    """

    k_lower: float
    k_upper: float
    sign_a: float
    sign_b: float
    passed: bool
    n_samples: int

    def to_dict(self) -> dict:
        return {
            "K_lower": self.k_lower,
            "K_upper": self.k_upper,
            "sign_a": self.sign_a,
            "sign_b": self.sign_b,
            "pass": self.passed,
            "n_samples": self.n_samples,
        }


def check_H1(profile: DispersalProfile, m: ScalarField,
             n_samples: int = H1_SAMPLES, h_d: float | None = None,
             cache: ThetaCache | None = None) -> H1Report:
    """Verify uniform trait convexity and the endpoint gradient signs.

    Passing requires min d2_z1 lambda > 0 over the sample grid together with
    d_z1 lambda(a, a) < 0 and d_z1 lambda(b, b) > 0.
    """
    cache = cache if cache is not None else ThetaCache(profile, m)
    zs = np.linspace(profile.a, profile.b, n_samples)
    k_lower = np.inf
    k_upper = -np.inf
    for z2 in zs:
        for z1 in zs:
            _, d2 = lambda_derivs(float(z1), float(z2), profile, m, cache, h_d)
            k_lower = min(k_lower, d2)
            k_upper = max(k_upper, d2)
    sign_a, _ = lambda_derivs(profile.a, profile.a, profile, m, cache, h_d)
    sign_b, _ = lambda_derivs(profile.b, profile.b, profile, m, cache, h_d)
    passed = bool(k_lower > 0.0 and sign_a < 0.0 and sign_b > 0.0)
    return H1Report(float(k_lower), float(k_upper), float(sign_a),
                    float(sign_b), passed, n_samples)


def spectral_gap(alpha: float, c: ScalarField) -> float:
    """Difference of the two smallest eigenvalues of -alpha*L - diag(c)."""
    main, off = _operator_diagonals(alpha, c.values, c.grid.h_x)
    vals = eigh_tridiagonal(main, off, select="i", select_range=(0, 1),
                            eigvals_only=True)
    return float(vals[1] - vals[0])
