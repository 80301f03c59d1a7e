"""Small dense linear algebra used as ground-truth oracles.

The SVD and symmetric eigensolvers are Jacobi methods written against plain
numpy arrays so that verification never depends on the LAPACK routines that
other parts of the stack might also use. Both process disjoint index pairs in
round-robin order, which lets each round be applied as one vectorized update.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import InputError, NumericalError

MAX_DIM = 512
MAX_SWEEPS = 30


@dataclass(frozen=True)
class SvdResult:
    singular_values: np.ndarray
    left_vectors: np.ndarray
    right_vectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.left_vectors * self.singular_values) @ self.right_vectors.T


class ProcrustesResult(NamedTuple):
    aligned: np.ndarray
    rotation: np.ndarray
    ambiguous: bool


def _as_matrix(a, name="a") -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2:
        raise InputError(f"{name} must be a 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        bad = np.argwhere(~np.isfinite(a))[0]
        raise InputError(f"{name} has a non-finite entry at {tuple(bad)}")
    if max(a.shape) > MAX_DIM:
        raise InputError(f"{name} is {a.shape}; oracles accept at most {MAX_DIM} per side")
    return a


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Tournament schedule covering every pair (p, q), p < q, once per sweep."""
    players = list(range(n)) + ([-1] if n % 2 else [])
    m = len(players)
    rounds = []
    for _ in range(m - 1):
        ps, qs = [], []
        for k in range(m // 2):
            p, q = players[k], players[m - 1 - k]
            if p < 0 or q < 0:
                continue
            ps.append(min(p, q))
            qs.append(max(p, q))
        rounds.append((np.array(ps, dtype=int), np.array(qs, dtype=int)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _sign_fix(vectors: np.ndarray) -> np.ndarray:
    """Sign per column that makes its largest-magnitude entry positive."""
    if vectors.size == 0:
        return np.ones(vectors.shape[1])
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return signs


def _complete_orthonormal(u: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Replace the columns of ``u`` not flagged in ``keep`` by an orthonormal completion."""
    m, k = u.shape
    basis = [u[:, j] for j in range(k) if keep[j]]
    out = u.copy()
    candidates = iter(np.eye(m))
    for j in range(k):
        if keep[j]:
            continue
        while True:
            e = next(candidates)
            v = e.copy()
            for _ in range(2):
                for b in basis:
                    v -= (b @ v) * b
            nv = np.linalg.norm(v)
            if nv > 1e-6:
                v /= nv
                break
        basis.append(v)
        out[:, j] = v
    return out


def exact_svd(a, tol: float = 1e-13) -> SvdResult:
    """Thin SVD by one-sided (Hestenes) Jacobi.

    Returns ``k = min(rows, cols)`` singular triplets sorted non-increasing,
    with each left vector's largest-magnitude entry made positive (the right
    vector follows the same flip).
    """
    if not tol > 0:
        raise InputError("tol must be positive")
    a = _as_matrix(a)
    transposed = a.shape[0] < a.shape[1]
    # rows of ``w`` hold the columns being orthogonalized (contiguous access)
    w = a.copy() if transposed else a.T.copy()
    n, m = w.shape
    vt = np.eye(n)
    rounds = _round_robin(n)

    for _sweep in range(MAX_SWEEPS):
        rotated = False
        for p, q in rounds:
            if p.size == 0:
                continue
            wp, wq = w[p], w[q]
            alpha = np.einsum("ij,ij->i", wp, wp)
            beta = np.einsum("ij,ij->i", wq, wq)
            gamma = np.einsum("ij,ij->i", wp, wq)
            active = np.abs(gamma) > tol * np.sqrt(alpha * beta)
            if not active.any():
                continue
            rotated = True
            g = np.where(active, gamma, 1.0)
            zeta = (beta - alpha) / (2.0 * g)
            sgn = np.where(zeta >= 0, 1.0, -1.0)
            t = sgn / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = np.where(active, 1.0 / np.sqrt(1.0 + t * t), 1.0)[:, None]
            s = np.where(active, c[:, 0] * t, 0.0)[:, None]
            w[p], w[q] = c * wp - s * wq, s * wp + c * wq
            vp, vq = vt[p], vt[q]
            vt[p], vt[q] = c * vp - s * vq, s * vp + c * vq
        if not rotated:
            break
    else:
        raise NumericalError(f"one-sided Jacobi did not converge in {MAX_SWEEPS} sweeps")

    w, v = w.T, vt.T
    sigma = np.linalg.norm(w, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma, w, v = sigma[order], w[:, order], v[:, order]
    cutoff = (sigma[0] if n else 0.0) * max(m, n) * np.finfo(float).eps
    keep = sigma > max(cutoff, np.finfo(float).tiny)
    u = np.zeros_like(w)
    u[:, keep] = w[:, keep] / sigma[keep]
    if not keep.all():
        u = _complete_orthonormal(u, keep)
        sigma = np.where(keep, sigma, 0.0)

    signs = _sign_fix(u)
    u, v = u * signs, v * signs
    if transposed:
        u, v = v, u
    return SvdResult(sigma, u, v)


def exact_symmetric_eig(a, tol: float = 1e-14) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of a symmetric matrix by cyclic two-sided Jacobi.

    Eigenvalues are returned in non-increasing order; column ``i`` of the
    second output is the matching unit eigenvector.
    """
    if not tol > 0:
        raise InputError("tol must be positive")
    a = _as_matrix(a)
    n = a.shape[0]
    if a.shape[1] != n:
        raise InputError(f"matrix must be square, got {a.shape}")
    asym = np.max(np.abs(a - a.T)) if n else 0.0
    if asym > 1e-12 * max(1.0, np.max(np.abs(a), initial=0.0)):
        raise InputError(f"matrix is not symmetric (max |A - A^T| = {asym:.3e})")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    scale = np.linalg.norm(a)
    rounds = _round_robin(n)

    for _sweep in range(MAX_SWEEPS):
        rotated = False
        for p, q in rounds:
            if p.size == 0:
                continue
            apq = a[p, q]
            active = np.abs(apq) > tol * scale
            if not active.any():
                continue
            rotated = True
            g = np.where(active, apq, 1.0)
            tau = (a[q, q] - a[p, p]) / (2.0 * g)
            sgn = np.where(tau >= 0, 1.0, -1.0)
            t = sgn / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
            c = np.where(active, 1.0 / np.sqrt(1.0 + t * t), 1.0)
            s = np.where(active, c * t, 0.0)
            cp, sp = c[:, None], s[:, None]
            rp, rq = a[p, :], a[q, :]
            a[p, :], a[q, :] = cp * rp - sp * rq, sp * rp + cp * rq
            colp, colq = a[:, p], a[:, q]
            a[:, p], a[:, q] = c * colp - s * colq, s * colp + c * colq
            vp, vq = v[:, p], v[:, q]
            v[:, p], v[:, q] = c * vp - s * vq, s * vp + c * vq
        if not rotated:
            break
    else:
        raise NumericalError(f"Jacobi eigensolver did not converge in {MAX_SWEEPS} sweeps")

    eigvals = np.diag(a).copy()
    order = np.argsort(-eigvals, kind="stable")
    eigvals, v = eigvals[order], v[:, order]
    return eigvals, v * _sign_fix(v)


def procrustes_align(learned, reference) -> ProcrustesResult:
    """Rotate ``learned`` onto ``reference`` with the orthogonal Procrustes solution.

    The rotation is ``U V^T`` from the SVD of ``learned^T reference``. When
    the cross-product is rank deficient the rotation is not unique; a valid
    orthogonal one is still returned and ``ambiguous`` is set.
    """
    a = np.asarray(learned, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise InputError(f"shape mismatch: learned {a.shape} vs reference {b.shape}")
    res = exact_svd(a.T @ b)
    s = res.singular_values
    ambiguous = bool(s.size and s[-1] <= 1e-10 * max(s[0], 1e-300))
    rotation = res.left_vectors @ res.right_vectors.T
    return ProcrustesResult(a @ rotation, rotation, ambiguous)


def whiten_columns(v) -> np.ndarray:
    """Map columns to an empirically orthonormal set: ``(1/S) W^T W = I``.

    Uses the symmetric inverse square root of the empirical Gram matrix, so
    already-orthonormal inputs are left unchanged.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] == 0:
        raise InputError(f"expected a non-empty S x L matrix, got shape {v.shape}")
    gram = v.T @ v / v.shape[0]
    lam, q = exact_symmetric_eig(gram)
    if lam[-1] <= 1e-12 * lam[0] or lam[0] <= 0:
        raise NumericalError(
            f"Gram matrix is ill-conditioned: smallest eigenvalue {lam[-1]:.3e} "
            f"vs largest {lam[0]:.3e}"
        )
    inv_sqrt = (q / np.sqrt(lam)) @ q.T
    return v @ inv_sqrt
