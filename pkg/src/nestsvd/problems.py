"""Closed-form ground truth for the shipped problems.

* 2D hydrogen: ``(lap + 1/|x|) psi = lam psi`` with ``lam_{n,l} = (2n+1)^-2``.
* 2D harmonic oscillator: ``(lap - |x|^2) psi = -2(n_x+n_y+1) psi``; the
  shifted operator adds ``c``.
* Discrete canonical dependence kernels built from a joint pmf.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .errors import InputError, NumericalError
from .linalg import exact_svd

log = logging.getLogger(__name__)

MAX_OSCILLATOR_LEVEL = 30
RENORM_TOLERANCE = 0.05


# --------------------------------------------------------------------- states

@dataclass(frozen=True)
class HydrogenState:
    n: int
    l: int

    def __post_init__(self):
        if self.n < 0 or abs(self.l) > self.n:
            raise InputError(f"invalid hydrogen state (n={self.n}, l={self.l})")

    @property
    def eigenvalue(self) -> float:
        return hydrogen_eigenvalue(self)


@dataclass(frozen=True)
class OscillatorState:
    n_x: int
    n_y: int

    def __post_init__(self):
        if self.n_x < 0 or self.n_y < 0:
            raise InputError(f"invalid oscillator state ({self.n_x}, {self.n_y})")

    @property
    def level(self) -> int:
        return self.n_x + self.n_y


def hydrogen_eigenvalue(state: HydrogenState) -> float:
    return 1.0 / (2 * state.n + 1) ** 2


def oscillator_eigenvalue(state: OscillatorState) -> float:
    """Eigenvalue of the unshifted negative Hamiltonian."""
    return -2.0 * (state.level + 1)


def oscillator_shifted_eigenvalue(state: OscillatorState, c: float) -> float:
    return c + oscillator_eigenvalue(state)


def hydrogen_states(count: int) -> list[HydrogenState]:
    """First ``count`` states in shell order, ``l = -n..n`` within a shell."""
    out, n = [], 0
    while len(out) < count:
        out.extend(HydrogenState(n, l) for l in range(-n, n + 1))
        n += 1
    return out[:count]


def oscillator_states(count: int) -> list[OscillatorState]:
    """First ``count`` states in level order, ``n_x`` descending within a level."""
    out, n = [], 0
    while len(out) < count:
        out.extend(OscillatorState(nx, n - nx) for nx in range(n, -1, -1))
        n += 1
    return out[:count]


def degenerate_groups(eigenvalues, rtol: float = 1e-12) -> list[list[int]]:
    """Partition consecutive indices that share a ground-truth eigenvalue."""
    groups: list[list[int]] = []
    for i, lam in enumerate(eigenvalues):
        if groups and math.isclose(lam, eigenvalues[groups[-1][0]], rel_tol=rtol, abs_tol=1e-300):
            groups[-1].append(i)
        else:
            groups.append([i])
    return groups


# ------------------------------------------------------------ special functions

def hermite_physicists(n: int, z):
    """H_n(z) by the three-term recurrence."""
    if n < 0:
        raise InputError("Hermite degree must be non-negative")
    z = np.asarray(z, dtype=np.float64)
    h_prev, h = np.ones_like(z), 2.0 * z
    if n == 0:
        return h_prev
    for k in range(1, n):
        h_prev, h = h, 2.0 * z * h - 2.0 * k * h_prev
    return h


def oscillator_1d(n: int, x):
    """Normalized 1D eigenfunction with b = 1."""
    if not 0 <= n <= MAX_OSCILLATOR_LEVEL:
        raise InputError(f"oscillator level must lie in [0, {MAX_OSCILLATOR_LEVEL}], got {n}")
    x = np.asarray(x, dtype=np.float64)
    log_norm = -0.5 * (n * math.log(2.0) + math.lgamma(n + 1)) - 0.25 * math.log(math.pi)
    return np.exp(log_norm - 0.5 * x * x) * hermite_physicists(n, x)


def oscillator_eigenfunction(state: OscillatorState, x, y):
    return oscillator_1d(state.n_x, x) * oscillator_1d(state.n_y, y)


def confluent_1f1_terminating(a: int, b: int, z):
    """Kummer's 1F1(a; b; z) for a in {0, -1, -2, ...}, where the series is finite."""
    if int(a) != a or a > 0:
        raise InputError(f"only terminating series (a a non-positive integer) are supported, got a={a}")
    if int(b) != b or b <= 0:
        raise InputError(f"b must be a positive integer, got {b}")
    z = np.asarray(z, dtype=np.float64)
    total = np.ones_like(z)
    term = np.ones_like(z)
    for k in range(-int(a)):
        term = term * (a + k) / (b + k) * z / (k + 1)
        total = total + term
    return total


def confluent_1f1_exact(a: int, b: int, z: Fraction) -> Fraction:
    """Same series in exact rational arithmetic."""
    total, term = Fraction(1), Fraction(1)
    for k in range(-int(a)):
        term = term * Fraction(a + k, b + k) * z / (k + 1)
        total += term
    return total


# ----------------------------------------------------------------- hydrogen

def _beta(n: int) -> float:
    return 1.0 / (n + 0.5)


def hydrogen_radial_printed(n: int, l: int, r):
    """Radial part with the closed-form normalization constant as printed."""
    m = abs(l)
    beta = _beta(n)
    const = beta / math.factorial(2 * m) * math.sqrt(
        math.factorial(n + m) / ((2 * n + 1) * math.factorial(n - m))
    )
    br = beta * np.asarray(r, dtype=np.float64)
    return const * br**m * np.exp(-0.5 * br) * confluent_1f1_terminating(-n + m, 2 * m + 1, br)


@lru_cache(maxsize=None)
def hydrogen_renormalization(n: int, l: int) -> float:
    """Factor making the radial part unit-norm under ``r dr``, by Gauss-Laguerre quadrature.

    Fails if the printed constant is off by more than 5%.
    """
    beta = _beta(n)
    u, wts = np.polynomial.laguerre.laggauss(80)
    r = u / beta
    radial = hydrogen_radial_printed(n, l, r)
    # integrand psi^2 r carries exp(-beta r), which laggauss absorbs
    norm2 = np.sum(wts * np.exp(u) * radial**2 * r) / beta
    factor = 1.0 / math.sqrt(norm2)
    if abs(factor - 1.0) > RENORM_TOLERANCE:
        raise NumericalError(
            f"hydrogen ({n},{l}) printed normalization is off by factor {factor:.4f}"
        )
    if abs(factor - 1.0) > 1e-12:
        log.info("hydrogen (%d,%d) radial renormalized by %.12f", n, l, factor)
    return factor


def hydrogen_radial(n: int, l: int, r):
    return hydrogen_renormalization(n, abs(l)) * hydrogen_radial_printed(n, l, r)


def hydrogen_angular(l: int, theta):
    theta = np.asarray(theta, dtype=np.float64)
    if l > 0:
        return np.cos(l * theta) / math.sqrt(math.pi)
    if l < 0:
        return np.sin(l * theta) / math.sqrt(math.pi)
    return np.full_like(theta, 1.0 / math.sqrt(2 * math.pi))


def hydrogen_eigenfunction(state: HydrogenState, r, theta):
    if np.any(np.asarray(r) < 0):
        raise InputError("radius must be non-negative")
    return hydrogen_radial(state.n, state.l, r) * hydrogen_angular(state.l, theta)


def hydrogen_eigenfunction_xy(state: HydrogenState, points):
    p = np.asarray(points, dtype=np.float64)
    return hydrogen_eigenfunction(state, np.hypot(p[:, 0], p[:, 1]), np.arctan2(p[:, 1], p[:, 0]))


def oscillator_eigenfunction_xy(state: OscillatorState, points):
    p = np.asarray(points, dtype=np.float64)
    return oscillator_eigenfunction(state, p[:, 0], p[:, 1])


# ---------------------------------------------------------------- potentials

def coulomb2d(points):
    """-1/|x|; exactly at the origin the value is -inf."""
    r = np.linalg.norm(np.asarray(points, dtype=np.float64), axis=-1)
    with np.errstate(divide="ignore"):
        return np.where(r > 0, -1.0 / np.where(r > 0, r, 1.0), -np.inf)


def harmonic2d(points):
    p = np.asarray(points, dtype=np.float64)
    return np.sum(p * p, axis=-1)


# --------------------------------------------------------------- discrete CDK

@dataclass(frozen=True)
class DiscreteCdkInstance:
    pmf: np.ndarray
    p_x: np.ndarray
    p_y: np.ndarray
    singular_values: np.ndarray
    left_functions: np.ndarray
    right_functions: np.ndarray

    @property
    def shape(self) -> tuple:
        return self.pmf.shape

    def sample_pairs(self, rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray]:
        flat = rng.choice(self.pmf.size, size=size, p=self.pmf.ravel())
        return np.unravel_index(flat, self.pmf.shape)


def weighted_ratio_matrix(pmf, subtract_one: bool = True) -> np.ndarray:
    """sqrt(p(x)) k(x,y) sqrt(p(y)) for the (optionally un-centered) ratio kernel."""
    pmf = np.asarray(pmf, dtype=np.float64)
    px, py = pmf.sum(axis=1), pmf.sum(axis=0)
    b = pmf / np.sqrt(np.outer(px, py))
    if subtract_one:
        b = b - np.outer(np.sqrt(px), np.sqrt(py))
    return b


def make_discrete_cdk(pmf) -> DiscreteCdkInstance:
    """Exact singular triplets of the canonical dependence kernel of ``pmf``.

    Left/right functions are columns normalized in L2(p_x) / L2(p_y).
    """
    pmf = np.array(pmf, dtype=np.float64)
    if pmf.ndim != 2 or np.any(pmf < 0) or not math.isclose(pmf.sum(), 1.0, abs_tol=1e-12):
        raise InputError("pmf must be a non-negative matrix summing to 1")
    px, py = pmf.sum(axis=1), pmf.sum(axis=0)
    if np.any(px <= 0) or np.any(py <= 0):
        raise InputError("every marginal probability must be strictly positive")
    res = exact_svd(weighted_ratio_matrix(pmf))
    left = res.left_vectors / np.sqrt(px)[:, None]
    right = res.right_vectors / np.sqrt(py)[:, None]
    for arr in (pmf, px, py, res.singular_values, left, right):
        arr.setflags(write=False)
    return DiscreteCdkInstance(pmf, px, py, res.singular_values, left, right)


def random_pmf(shape, seed) -> np.ndarray:
    """Seeded Dirichlet(1) joint pmf over a finite product alphabet."""
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(shape[0] * shape[1])).reshape(shape)
    return p / p.sum()
