"""Operator backends.

Every backend hands the loss layer values that can be contracted directly
under the *sampling* distribution. Models parameterize ``f~ = f / sqrt(w)``
where ``w = p_tr / mu`` is the density of the sampler relative to the base
measure, and the backends return ``(T f)(x) / sqrt(w(x))`` next to ``f~(x)``.
The true function ``f = sqrt(w) * f~`` is only ever reconstructed inside a
backend.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InputError, NumericalError

DEFAULT_FD_EPSILON = 0.01
ANOMALY_THRESHOLD = 1e5
EVAL_CHUNK = 4096


@dataclass
class OperatorApplication:
    t_values: np.ndarray
    f_values: np.ndarray
    anomalies: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __post_init__(self):
        if self.t_values.shape != self.f_values.shape:
            raise InputError(f"shape mismatch {self.t_values.shape} vs {self.f_values.shape}")


@dataclass(frozen=True)
class ImportanceScheme:
    """Sampler density relative to the base measure, ``w(x) = p_tr(x) / mu(x)``."""

    name: str
    density: Callable[[np.ndarray], np.ndarray]

    def __call__(self, points) -> np.ndarray:
        return self.density(np.asarray(points, dtype=np.float64))

    @classmethod
    def uniform(cls) -> "ImportanceScheme":
        return cls("uniform", lambda x: np.ones(x.shape[0]))

    @classmethod
    def gaussian(cls, std: float, dim: int, mean: float = 0.0) -> "ImportanceScheme":
        norm = (2 * np.pi * std**2) ** (-dim / 2)

        def density(x):
            d = x - mean
            return norm * np.exp(-0.5 * np.sum(d * d, axis=1) / std**2)

        return cls(f"gaussian(std={std})", density)

    @classmethod
    def box(cls, lo: float, hi: float, dim: int) -> "ImportanceScheme":
        vol = (hi - lo) ** dim
        return cls(f"box[{lo},{hi}]^{dim}", lambda x: np.full(x.shape[0], 1.0 / vol))

    @classmethod
    def radial_exponential(cls, scale: float) -> "ImportanceScheme":
        """Planar density of ``r ~ Exp(scale)``, uniform angle: ``exp(-r/s) / (2 pi s r)``.

        The 1/r factor cancels a Coulomb singularity in weighted estimates.
        """
        def density(x):
            r = np.hypot(x[:, 0], x[:, 1])
            with np.errstate(divide="ignore"):
                return np.exp(-r / scale) / (2 * np.pi * scale * r)

        return cls(f"radial_exponential(scale={scale})", density)


@dataclass(frozen=True)
class HamiltonianSpec:
    """Negative Hamiltonian ``T = scale * lap - V + shift``."""

    potential: Callable[[np.ndarray], np.ndarray]
    scale_kinetic: float = 1.0
    shift: float = 0.0
    fd_epsilon: float = DEFAULT_FD_EPSILON
    n_particles: int = 1
    anomaly_threshold: float = ANOMALY_THRESHOLD

    def __post_init__(self):
        if not self.fd_epsilon > 0:
            raise InputError("fd_epsilon must be positive")
        if not self.scale_kinetic > 0:
            raise InputError("scale_kinetic must be positive")
        if self.shift < 0:
            raise InputError("shift must be non-negative")


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        threads = int(os.environ.get("NESTSVD_THREADS", "1") or 1)
    return max(1, int(threads))


def evaluate_chunked(evaluate, points, threads: int | None = None) -> np.ndarray:
    """Evaluate in fixed-size chunks so results do not depend on the worker count."""
    n = points.shape[0]
    chunks = [points[i:i + EVAL_CHUNK] for i in range(0, n, EVAL_CHUNK)] or [points]
    workers = min(resolve_threads(threads), len(chunks))
    if workers == 1:
        parts = [evaluate(c) for c in chunks]
    else:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(evaluate, chunks))
    out = np.concatenate([np.asarray(p, dtype=np.float64) for p in parts], axis=0)
    return out[:, None] if out.ndim == 1 else out


def fd_laplacian(evaluate, batch, eps: float = DEFAULT_FD_EPSILON, threads: int | None = None):
    """Central-difference Laplacian and center values from one stacked evaluation.

    ``evaluate`` maps an (n, D) array of points to (n, L) values. Returns
    ``(laplacian, values)``, both S x L.
    """
    if not eps > 0:
        raise InputError("eps must be positive")
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2:
        raise InputError(f"batch must be S x D, got {x.shape}")
    s, d = x.shape
    offsets = eps * np.eye(d)
    stencil = np.concatenate([x[None], x[None] + offsets[:, None], x[None] - offsets[:, None]])
    vals = evaluate_chunked(evaluate, stencil.reshape(-1, d), threads)
    bad = ~np.all(np.isfinite(vals), axis=1)
    if bad.any():
        i = int(np.argmax(bad))
        raise NumericalError(f"evaluator returned a non-finite value at stencil point {stencil.reshape(-1, d)[i]}")
    vals = vals.reshape(2 * d + 1, s, -1)
    center = vals[0]
    second = (vals[1:d + 1] - center) + (vals[d + 1:] - center)
    return second.sum(axis=0) / eps**2, center


def negative_hamiltonian_apply(evaluate, spec: HamiltonianSpec, importance: ImportanceScheme | None,
                               batch, threads: int | None = None) -> OperatorApplication:
    """Apply ``scale * lap - V + shift`` to a model that outputs ``f / sqrt(w)``.

    ``evaluate`` returns model outputs ``f~``; the Laplacian is taken of the
    weighted composite ``sqrt(w) * f~`` through the stencil, then divided back
    by ``sqrt(w)`` at the center.
    """
    x = np.asarray(batch, dtype=np.float64)
    importance = importance or ImportanceScheme.uniform()

    def weighted(points):
        out = np.asarray(evaluate(points), dtype=np.float64)
        out = out[:, None] if out.ndim == 1 else out
        return np.sqrt(importance(points))[:, None] * out

    lap, f_true = fd_laplacian(weighted, x, spec.fd_epsilon, threads)
    sqrt_w = np.sqrt(importance(x))[:, None]
    f_tilde = f_true / sqrt_w
    pot = np.asarray(spec.potential(x.reshape(x.shape[0], spec.n_particles, -1).reshape(x.shape[0], -1)),
                     dtype=np.float64).reshape(-1, 1)
    with np.errstate(invalid="ignore", over="ignore"):
        t = (spec.scale_kinetic * lap - pot * f_true) / sqrt_w
        if spec.shift:
            t = t + spec.shift * f_tilde
    flagged = ~np.all(np.isfinite(t), axis=1) | np.any(np.abs(t) > spec.anomaly_threshold, axis=1)
    return OperatorApplication(t, f_tilde, np.flatnonzero(flagged))


def matrix_operator_apply(a, f_eval, g_eval, batch_rows, batch_cols,
                          w_rows=None, w_cols=None) -> tuple[OperatorApplication, OperatorApplication]:
    """Finite-dimensional operator from an N x M matrix.

    Functions on columns live in L2 of the uniform measure on M points (and
    rows on N points). The operator is scaled so its singular values equal the
    matrix's: ``(Tf)(i) = sqrt(N/M) sum_j A_ij f(j)``. For square matrices this
    is the plain matrix-vector product.

    Returns ``(forward, adjoint)``: ``forward`` pairs ``(Tf)/sqrt(w)`` with
    ``g~`` at the row batch, ``adjoint`` pairs ``(T*g)/sqrt(w)`` with ``f~``
    at the column batch.
    """
    a = np.asarray(a, dtype=np.float64)
    n, m = a.shape
    rows = np.asarray(batch_rows)
    cols = np.asarray(batch_cols)
    if rows.size and (rows.min() < 0 or rows.max() >= n):
        raise InputError(f"row index out of range [0, {n})")
    if cols.size and (cols.min() < 0 or cols.max() >= m):
        raise InputError(f"column index out of range [0, {m})")
    w_rows = np.ones(n) if w_rows is None else np.asarray(w_rows, dtype=np.float64)
    w_cols = np.ones(m) if w_cols is None else np.asarray(w_cols, dtype=np.float64)
    if np.any(w_rows <= 0) or np.any(w_cols <= 0):
        raise InputError("importance weights must be strictly positive")
    f_full = np.sqrt(w_cols)[:, None] * np.asarray(f_eval(np.arange(m)), dtype=np.float64)
    g_full = np.sqrt(w_rows)[:, None] * np.asarray(g_eval(np.arange(n)), dtype=np.float64)
    tf = np.sqrt(n / m) * (a @ f_full)
    tg = np.sqrt(m / n) * (a.T @ g_full)
    forward = OperatorApplication(tf[rows] / np.sqrt(w_rows[rows])[:, None],
                                  g_full[rows] / np.sqrt(w_rows[rows])[:, None])
    adjoint = OperatorApplication(tg[cols] / np.sqrt(w_cols[cols])[:, None],
                                  f_full[cols] / np.sqrt(w_cols[cols])[:, None])
    return forward, adjoint


@dataclass
class KernelApplication:
    kernel_matrix: np.ndarray
    f_values: np.ndarray
    g_values: np.ndarray

    def operator_terms(self) -> tuple[np.ndarray, np.ndarray]:
        """Monte-Carlo ``(Kf)(y_j)`` and ``(K*g)(x_i)`` from the other batch."""
        s1, s2 = self.kernel_matrix.shape
        t_forward = self.kernel_matrix.T @ self.f_values / s1
        t_adjoint = self.kernel_matrix @ self.g_values / s2
        return t_forward, t_adjoint

    def quadratic_form(self) -> np.ndarray:
        """Per-mode ``mean_ij f_l(x_i) k(x_i, y_j) g_l(y_j)``."""
        return np.einsum("il,ij,jl->l", self.f_values, self.kernel_matrix, self.g_values) / self.kernel_matrix.size


def kernel_operator_apply(kernel, f_eval, g_eval, batch_x, batch_y) -> KernelApplication:
    """Empirical kernel matrix ``K_ij = k(x_i, y_j)`` plus model values at both batches."""
    x = np.asarray(batch_x, dtype=np.float64)
    y = np.asarray(batch_y, dtype=np.float64)
    x2 = x if x.ndim == 2 else x[:, None]
    y2 = y if y.ndim == 2 else y[:, None]
    k = np.asarray(kernel(x2[:, None, :], y2[None, :, :]), dtype=np.float64)
    k = np.broadcast_to(k, (x2.shape[0], y2.shape[0])).copy()
    if not np.all(np.isfinite(k)):
        i, j = np.argwhere(~np.isfinite(k))[0]
        raise NumericalError(f"kernel is non-finite at pair ({i}, {j})")
    return KernelApplication(k, np.asarray(f_eval(x), dtype=np.float64),
                             np.asarray(g_eval(y), dtype=np.float64))


def pad_constant_mode(values) -> np.ndarray:
    """Prepend the constant-one function as mode 0."""
    v = np.asarray(values, dtype=np.float64)
    return np.concatenate([np.ones((v.shape[0], 1)), v], axis=1)


def cdk_pair_contraction(f_values, g_values) -> np.ndarray:
    """Per-mode ``mean_b f_l(x_b) g_l(y_b)`` over jointly drawn pairs.

    This estimates ``<g_l | K f_l>`` for the un-centered ratio kernel
    ``p(x,y) / (p(x) p(y))``; with constant padding, mode 0 contributes 1.
    """
    f = np.asarray(f_values, dtype=np.float64)
    g = np.asarray(g_values, dtype=np.float64)
    if f.shape != g.shape:
        raise InputError(f"paired values must match, got {f.shape} vs {g.shape}")
    return np.mean(f * g, axis=0)


def cdk_operator_apply(f_values, g_values) -> tuple[OperatorApplication, OperatorApplication]:
    """Forward/adjoint views of the ratio kernel on paired samples.

    The paired partner plays the role of the operator output: ``g(y_b)`` stands
    in for ``(K* g)(x_b)`` and ``f(x_b)`` for ``(K f)(y_b)``.
    """
    f = np.asarray(f_values, dtype=np.float64)
    g = np.asarray(g_values, dtype=np.float64)
    return OperatorApplication(f, g), OperatorApplication(g, f)
