"""Nested low-rank-approximation objective and its per-sample cotangents.

The objective for L mode pairs is

    -2 sum_l m_l <g_l|T f_l> + sum_{l,l'} M_{ll'} <f_l|f_l'> <g_l|g_l'>

where the masks ``(m, M)`` select plain LoRA (all ones), joint nesting
(weighted prefix sums) or sequential nesting (upper-triangular ``M``).

Gradients are never taken through an autodiff graph. Instead the engine
returns cotangents, S x L arrays ``df`` and ``dg`` with the batch mean folded
in, that ``models.model_backward`` contracts with the model Jacobian.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .operators import pad_constant_mode

MASK_MODES = ("joint", "sequential", "none")


@dataclass(frozen=True)
class NestingMasks:
    vector: np.ndarray
    matrix: np.ndarray
    mode: str
    padded: bool = False

    @property
    def size(self) -> int:
        return self.vector.shape[0]

    @property
    def n_modes(self) -> int:
        return self.size - int(self.padded)


def joint_masks(weights, set_first_mode_const: bool = False) -> NestingMasks:
    """``m_l = sum_{i>=l} w_i`` and ``M_ij = m_max(i,j)``.

    With ``set_first_mode_const`` a constant mode is prepended that shares
    the top mode's vector-mask entry.
    """
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.size == 0 or np.any(~(w > 0)):
        raise InputError(f"joint nesting needs strictly positive weights, got {w}")
    m = np.cumsum(w[::-1])[::-1]
    if set_first_mode_const:
        m = np.concatenate([m[:1], m])
    # m is non-increasing, so m_max(i,j) = min(m_i, m_j)
    big = np.minimum(m[:, None], m[None, :])
    return NestingMasks(m, big, "joint", set_first_mode_const)


def sequential_masks(n_modes: int, set_first_mode_const: bool = False) -> NestingMasks:
    """``m = 1`` and ``M_il = 1{i <= l}``."""
    if n_modes < 1:
        raise InputError("need at least one mode")
    size = n_modes + int(set_first_mode_const)
    return NestingMasks(np.ones(size), np.triu(np.ones((size, size))), "sequential", set_first_mode_const)


def lora_masks(n_modes: int, set_first_mode_const: bool = False) -> NestingMasks:
    """All-ones masks: the plain (un-nested) objective."""
    if n_modes < 1:
        raise InputError("need at least one mode")
    size = n_modes + int(set_first_mode_const)
    return NestingMasks(np.ones(size), np.ones((size, size)), "none", set_first_mode_const)


def make_masks(mode: str, n_modes: int, weights=None, pad: bool = False) -> NestingMasks:
    if mode == "joint":
        w = np.full(n_modes, 1.0 / n_modes) if weights is None else weights
        if len(w) != n_modes:
            raise InputError(f"expected {n_modes} weights, got {len(w)}")
        return joint_masks(w, pad)
    if mode == "sequential":
        return sequential_masks(n_modes, pad)
    if mode == "none":
        return lora_masks(n_modes, pad)
    raise InputError(f"mask mode must be one of {MASK_MODES}, got {mode!r}")


@dataclass
class LossReport:
    total: float
    operator_term: float
    metric_term: float
    per_mode: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "total": float(self.total),
            "operator_term": float(self.operator_term),
            "metric_term": float(self.metric_term),
            "per_mode_operator": [float(v) for v in self.per_mode],
        }


def compute_lambda(v, weights=None) -> np.ndarray:
    """Empirical Gram ``(1/S) sum_b w_b v_b v_b^T``."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] < 1:
        raise InputError(f"expected an S x L batch with S >= 1, got {v.shape}")
    vw = v if weights is None else v * np.asarray(weights, dtype=np.float64)[:, None]
    return vw.T @ v / v.shape[0]


def metric_loss(masks: NestingMasks, lambda_f, lambda_g) -> float:
    lf, lg = np.asarray(lambda_f), np.asarray(lambda_g)
    if lf.shape != masks.matrix.shape or lg.shape != masks.matrix.shape:
        raise InputError(f"Gram shapes {lf.shape}, {lg.shape} do not match masks {masks.matrix.shape}")
    return float(np.sum(masks.matrix * lf * lg))


def nested_objective(masks: NestingMasks, operator_terms, lambda_f, lambda_g) -> LossReport:
    """Objective value from per-mode ``<g_l|T f_l>`` estimates and Gram matrices."""
    ops = np.asarray(operator_terms, dtype=np.float64)
    if ops.shape != masks.vector.shape:
        raise InputError(f"expected {masks.size} operator terms, got {ops.shape}")
    op = float(-2.0 * np.dot(masks.vector, ops))
    met = metric_loss(masks, lambda_f, lambda_g)
    return LossReport(op + met, op, met, ops.copy())


def prefix_lora_sum(weights, operator_terms, lambda_f, lambda_g) -> float:
    """Reference evaluation of ``sum_l w_l * LoRA(first l modes)`` by explicit loops."""
    total = 0.0
    for l, w in enumerate(weights, start=1):
        term = -2.0 * sum(operator_terms[i] for i in range(l))
        for i in range(l):
            for j in range(l):
                term += lambda_f[i][j] * lambda_g[i][j]
        total += w * term
    return total


def batch_split(batch):
    """Deterministic halves (first S/2 rows, last S/2 rows)."""
    n = len(batch)
    if n < 4 or n % 2:
        raise InputError(f"batch size must be even and at least 4 for the split estimator, got {n}")
    h = n // 2
    return batch[:h], batch[h:]


def _split_lambdas(values, weights):
    """Per-row Gram estimates from the opposite half, as an (S, L, L) index map."""
    a, b = batch_split(np.arange(values.shape[0]))
    wa = None if weights is None else weights[a]
    wb = None if weights is None else weights[b]
    lam_a = compute_lambda(values[a], wa)
    lam_b = compute_lambda(values[b], wb)
    return (a, lam_b), (b, lam_a)


def _metric_part(values, masks_matrix, lam_rows):
    out = np.empty_like(values)
    for rows, lam in lam_rows:
        out[rows] = values[rows] @ (masks_matrix * lam)
    return out


def nestedlora_cotangents(masks: NestingMasks, f_values, g_values, t_forward, t_adjoint,
                          lambda_f_indep=None, lambda_g_indep=None,
                          f_weights=None, g_weights=None):
    """Per-sample cotangents ``(df, dg)`` of the nested objective.

    ``df[b, l] = 2 w_b (-m_l (T*g)_l(x_b) + sum_i M_il f_i(x_b) Lg_il) / S``

    and symmetrically for ``dg`` with ``(Tf)(y_b)`` and ``Lf``. The Gram
    estimates must be independent of the rows they multiply: when not given,
    each half of the batch uses the Gram matrix estimated on the other half.
    ``f_weights``/``g_weights`` are optional per-sample weights (default 1).
    """
    f = np.asarray(f_values, dtype=np.float64)
    g = np.asarray(g_values, dtype=np.float64)
    if t_adjoint is None or t_forward is None:
        raise InputError("both the operator and its adjoint applications are required")
    ta = np.asarray(t_adjoint, dtype=np.float64)
    tf = np.asarray(t_forward, dtype=np.float64)
    if f.shape != ta.shape or g.shape != tf.shape or f.shape[1] != masks.size or g.shape[1] != masks.size:
        raise InputError(
            f"inconsistent shapes f{f.shape} T*g{ta.shape} g{g.shape} Tf{tf.shape} masks({masks.size})"
        )
    fw = None if f_weights is None else np.asarray(f_weights, dtype=np.float64)
    gw = None if g_weights is None else np.asarray(g_weights, dtype=np.float64)

    all_f, all_g = np.arange(f.shape[0]), np.arange(g.shape[0])
    lam_g_rows = ([(all_f, np.asarray(lambda_g_indep))] if lambda_g_indep is not None
                  else _split_lambdas(g, gw))
    lam_f_rows = ([(all_g, np.asarray(lambda_f_indep))] if lambda_f_indep is not None
                  else _split_lambdas(f, fw))
    # halves of g pair with halves of f row-for-row only when sizes match
    if lambda_g_indep is None and g.shape[0] != f.shape[0]:
        lam_g_rows = [(all_f, compute_lambda(g, gw))]
    if lambda_f_indep is None and g.shape[0] != f.shape[0]:
        lam_f_rows = [(all_g, compute_lambda(f, fw))]

    m = masks.vector
    df = 2.0 * (-m * ta + _metric_part(f, masks.matrix, lam_g_rows)) / f.shape[0]
    dg = 2.0 * (-m * tf + _metric_part(g, masks.matrix, lam_f_rows)) / g.shape[0]
    if fw is not None:
        df *= fw[:, None]
    if gw is not None:
        dg *= gw[:, None]
    return df, dg


def evd_cotangents(masks: NestingMasks, f_values, t_values, lambda_indep=None, weights=None):
    """Cotangent for a self-adjoint operator with ``g`` identified with ``f``."""
    df, dg = nestedlora_cotangents(masks, f_values, f_values, t_values, t_values,
                                   lambda_indep, lambda_indep, weights, weights)
    return df + dg


def cdk_cotangents(masks: NestingMasks, f_values, g_values, weights=None):
    """Cotangents for the ratio kernel with the constant mode padded in front.

    ``masks`` must be built with ``set_first_mode_const=True``. The constant
    column is appended before the update and stripped from the result.
    """
    if not masks.padded:
        raise InputError("CDK cotangents need masks built with set_first_mode_const=True")
    fp, gp = pad_constant_mode(f_values), pad_constant_mode(g_values)
    df, dg = nestedlora_cotangents(masks, fp, gp, fp, gp, f_weights=weights, g_weights=weights)
    return df[:, 1:], dg[:, 1:]


def loss_report(masks: NestingMasks, f_values, g_values, t_forward_pairs, f_weights=None,
                g_weights=None, pair_weights=None) -> LossReport:
    """Objective estimate on a batch (no split; diagnostics only).

    ``t_forward_pairs`` is whatever pairs with ``g_values`` row-for-row to
    estimate ``<g_l|T f_l>``; for CDK it is the paired ``f`` values.
    """
    ops = np.asarray(g_values) * np.asarray(t_forward_pairs)
    if pair_weights is not None:
        ops = ops * np.asarray(pair_weights)[:, None]
    return nested_objective(masks, ops.mean(axis=0), compute_lambda(f_values, f_weights),
                            compute_lambda(g_values, g_weights))


# ------------------------------------------------------------- NeuralEF baseline

def neuralef_unbiased_cotangent(f_values, t_values, gram_indep=None):
    """Per-sample gradient ``4 (-T phi_l + sum_{i<l} <phi_i|phi_l> T phi_i) / S``.

    ``f_values`` are the batch-normalized functions ``phi`` and ``t_values``
    the operator applied to them. Without ``gram_indep`` the coupling Gram is
    estimated on the opposite half of the batch.
    """
    phi = np.asarray(f_values, dtype=np.float64)
    t = np.asarray(t_values, dtype=np.float64)
    if phi.shape != t.shape:
        raise InputError(f"shape mismatch {phi.shape} vs {t.shape}")
    s = phi.shape[0]
    if gram_indep is not None:
        rows = [(np.arange(s), np.asarray(gram_indep))]
    else:
        rows = _split_lambdas(phi, None)
    out = np.empty_like(t)
    for idx, gram in rows:
        out[idx] = -t[idx] + t[idx] @ np.triu(gram, 1)
    return 4.0 * out / s


def l2_batch_normalize(f_values):
    """``phi = f / sqrt(mean f^2)`` per mode; returns ``(phi, norms)``."""
    f = np.asarray(f_values, dtype=np.float64)
    norms = np.sqrt(np.mean(f * f, axis=0))
    return f / norms, norms


def l2_batch_normalize_backward(phi, norms, d_phi):
    """Pull a cotangent on ``phi`` back through the batch normalization."""
    proj = np.mean(d_phi * phi, axis=0)
    return (d_phi - phi * proj) / norms
