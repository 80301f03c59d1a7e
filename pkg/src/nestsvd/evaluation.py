"""Quantitative measures for learned spectral decompositions.

Sample matrices handed to these functions are S x L arrays whose plain
empirical means estimate the target inner products. Importance ratios are
either folded into the values beforehand or passed as ``weights``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InputError, NumericalError
from .linalg import exact_symmetric_eig, procrustes_align, whiten_columns

log = logging.getLogger(__name__)

COLLAPSE_NORM = 1e-8
CSV_COLUMNS = ("mode", "eigenvalue_estimate", "relative_error_pct", "angle_distance",
               "norm_sigma", "group_id", "subspace_distance", "orthogonality_error")


def _mean_w(values, weights):
    if weights is None:
        return np.mean(values, axis=0)
    w = np.asarray(weights, dtype=np.float64)
    return np.mean(values * w.reshape((-1,) + (1,) * (values.ndim - 1)), axis=0)


def validate_grouping(groups, n_modes: int) -> list[list[int]]:
    flat = sorted(i for g in groups for i in g)
    if flat != list(range(n_modes)) or any(len(g) == 0 for g in groups):
        raise InputError(f"grouping {groups} is not a partition of 0..{n_modes - 1}")
    return [list(map(int, g)) for g in groups]


def rayleigh_quotient(f_values, t_values, weights=None):
    """Per-mode ``<f|Tf> / <f|f>``; returns ``(quotients, collapsed)``.

    Modes whose norm is below 1e-8 are flagged and get NaN.
    """
    f = np.asarray(f_values, dtype=np.float64)
    t = np.asarray(t_values, dtype=np.float64)
    if f.shape != t.shape:
        raise InputError(f"shape mismatch {f.shape} vs {t.shape}")
    sq = _mean_w(f * f, weights)
    collapsed = np.sqrt(sq) < COLLAPSE_NORM
    with np.errstate(invalid="ignore", divide="ignore"):
        q = np.where(collapsed, np.nan, _mean_w(f * t, weights) / np.where(collapsed, 1.0, sq))
    return q, collapsed


def relative_eigenvalue_error(estimate, truth) -> float:
    if not truth > 0:
        raise InputError(f"relative error is defined for positive eigenvalues only, got {truth}")
    return abs(estimate - truth) / truth * 100.0


def spectrum_from_norms(f_values, g_values=None, f_weights=None, g_weights=None) -> np.ndarray:
    """``sigma_l = sqrt(E f_l^2 * E g_l^2)``; with ``g`` omitted returns ``E f_l^2``."""
    f = np.asarray(f_values, dtype=np.float64)
    nf = _mean_w(f * f, f_weights)
    if g_values is None:
        return nf
    g = np.asarray(g_values, dtype=np.float64)
    if g.shape[1] != f.shape[1]:
        raise InputError(f"mode counts differ: {f.shape[1]} vs {g.shape[1]}")
    return np.sqrt(nf * _mean_w(g * g, g_weights))


def _unit_columns(v):
    n = np.sqrt(np.mean(v * v, axis=0))
    if np.any(n < COLLAPSE_NORM):
        raise NumericalError(f"mode {int(np.argmin(n))} has (near) zero norm and cannot be normalized")
    return v / n


def angle_distance(learned, truth, grouping) -> np.ndarray:
    """Per-mode ``(2/pi) arccos |<psi|psi_bar>|`` after Procrustes alignment within each group."""
    a = np.asarray(learned, dtype=np.float64)
    b = np.asarray(truth, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError(f"shape mismatch {a.shape} vs {b.shape}")
    groups = validate_grouping(grouping, a.shape[1])
    a, b = _unit_columns(a), _unit_columns(b)
    out = np.empty(a.shape[1])
    for g in groups:
        aligned = procrustes_align(a[:, g], b[:, g]).aligned
        aligned = aligned / np.sqrt(np.mean(aligned * aligned, axis=0))
        cos = np.abs(np.mean(aligned * b[:, g], axis=0))
        out[g] = 2.0 / np.pi * np.arccos(np.clip(cos, 0.0, 1.0))
    return out


def subspace_distance(a, b) -> float:
    """``1 - tr(P Q) / K`` for the projectors onto the column spans of ``a`` and ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError(f"shape mismatch {a.shape} vs {b.shape}")
    k = a.shape[1]
    try:
        qa, qb = whiten_columns(a), whiten_columns(b)
    except NumericalError as exc:
        raise NumericalError(f"rank-deficient input: {exc}") from exc
    m = qa.T @ qb / a.shape[0]
    overlap = 0.5 * (np.sum(m * m) + np.sum(m.T * m.T))
    return float(min(1.0, max(0.0, 1.0 - overlap / k)))


def _safe_subspace(a, b) -> float:
    """``subspace_distance`` that reports NaN for numerically rank-deficient spans."""
    try:
        return subspace_distance(a, b)
    except NumericalError as exc:
        log.warning("subspace distance undefined: %s", exc)
        return float("nan")


def orthogonality_error(f_values, weights=None) -> float:
    """``||G - I||_F^2 / L^2`` for the empirical Gram matrix ``G``."""
    f = np.asarray(f_values, dtype=np.float64)
    fw = f if weights is None else f * np.asarray(weights)[:, None]
    gram = fw.T @ f / f.shape[0]
    diff = gram - np.eye(f.shape[1])
    return float(np.sum(diff * diff) / f.shape[1] ** 2)


def nystrom_extend(kernel, train_points, right_vector, sigma_hat, query) -> np.ndarray:
    """``phi(x) = (1 / (sigma N)) sum_j k(x, y_j) v_j`` at each query point."""
    if not sigma_hat > 1e-10:
        raise NumericalError(f"singular value {sigma_hat:.3e} is too small to extend this mode")
    y = np.asarray(train_points, dtype=np.float64)
    x = np.asarray(query, dtype=np.float64)
    y2 = y if y.ndim == 2 else y[:, None]
    x2 = x if x.ndim == 2 else x[:, None]
    k = np.asarray(kernel(x2[:, None, :], y2[None, :, :]), dtype=np.float64)
    k = np.broadcast_to(k, (x2.shape[0], y2.shape[0]))
    return k @ np.asarray(right_vector, dtype=np.float64) / (sigma_hat * y2.shape[0])


def rayleigh_ritz(basis_values, t_basis_values):
    """Ritz values (descending) and coefficient vectors of ``B_ij = <phi_i|T phi_j>``."""
    p = np.asarray(basis_values, dtype=np.float64)
    t = np.asarray(t_basis_values, dtype=np.float64)
    if p.shape != t.shape:
        raise InputError(f"shape mismatch {p.shape} vs {t.shape}")
    b = p.T @ t / p.shape[0]
    asym = np.max(np.abs(b - b.T)) if b.size else 0.0
    if asym > 1e-8:
        log.warning("projected operator is asymmetric (max %.3e); symmetrizing", asym)
    return exact_symmetric_eig(0.5 * (b + b.T))


# ------------------------------------------------------------------- report

@dataclass
class EvalReport:
    eigenvalue_estimates: list
    relative_errors: list
    angle_distances: list
    subspace_distances: list
    orthogonality_error: float
    norm_spectrum: list
    groups: list = field(default_factory=list)
    collapsed: list = field(default_factory=list)
    total_subspace_distance: float = float("nan")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=True)

    def to_csv(self) -> str:
        """One row per mode plus a trailing run-level row for the orthogonality error."""
        group_of = {m: gi for gi, g in enumerate(self.groups) for m in g}
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for mode in range(len(self.eigenvalue_estimates)):
            gid = group_of.get(mode, "")
            w.writerow([mode, _fmt(self.eigenvalue_estimates[mode]), _fmt(self.relative_errors[mode]),
                        _fmt(self.angle_distances[mode]), _fmt(self.norm_spectrum[mode]), gid,
                        _fmt(self.subspace_distances[gid]) if gid != "" else "", ""])
        w.writerow(["run", "", "", "", "", "", "", _fmt(self.orthogonality_error)])
        return buf.getvalue()


def _fmt(x) -> str:
    if x is None:
        return ""
    x = float(x)
    return "nan" if math.isnan(x) else repr(x)


def build_report(blocks, grouping, estimates, truth_values, norm_spectrum, collapsed=None) -> EvalReport:
    """Assemble every measure for one run.

    ``blocks`` is a list of ``(learned, truth)`` S x L sample-matrix pairs
    (one for eigenproblems, two for SVD: right and left functions). Angle and
    subspace distances take the worst block; the orthogonality error too.
    """
    blocks = [(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)) for a, b in blocks]
    n = blocks[0][0].shape[1]
    groups = validate_grouping(grouping, n)
    collapsed = np.zeros(n, dtype=bool) if collapsed is None else np.asarray(collapsed, dtype=bool)
    rel = [relative_eigenvalue_error(e, t) if (t > 0 and np.isfinite(e)) else float("nan")
           for e, t in zip(estimates, truth_values)]
    usable = ~collapsed
    for learned, _ in blocks:
        usable &= np.sqrt(np.mean(learned * learned, axis=0)) >= COLLAPSE_NORM
    angles = np.full(n, np.nan)
    subs = []
    for g in groups:
        if not all(usable[i] for i in g):
            subs.append(float("nan"))
            continue
        angles[g] = np.max([angle_distance(a[:, g], b[:, g], [list(range(len(g)))]) for a, b in blocks], axis=0)
        subs.append(max(_safe_subspace(a[:, g], b[:, g]) for a, b in blocks))
    if usable.any():
        ortho = max(orthogonality_error(_unit_columns(a[:, usable])) for a, _ in blocks)
        total = max(_safe_subspace(a[:, usable], b[:, usable]) for a, b in blocks)
    else:
        ortho = total = float("nan")
    report = EvalReport([float(e) for e in estimates], rel, angles.tolist(), subs, ortho,
                        [float(s) for s in norm_spectrum], groups, [bool(c) for c in collapsed])
    report.total_subspace_distance = total
    return report
