"""Training loop, samplers, optimizers and parameter EMA.

An *objective* bundles an operator backend with a gradient rule. It owns one
or two models (``f`` alone for eigen-decomposition, ``f`` and ``g`` for SVD)
and turns a batch into flat parameter gradients plus a loss diagnostic.
"""

from __future__ import annotations

import json
import logging
import math
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nestedlora as nl
from .errors import InputError, NumericalError, TrainingAborted
from .models import ModelSpec, init_params, model_backward, model_forward
from .operators import (HamiltonianSpec, ImportanceScheme, matrix_operator_apply,
                        negative_hamiltonian_apply)

log = logging.getLogger(__name__)

OPTIMIZERS = ("rmsprop", "adam", "sgd", "sgd_momentum")
SCHEDULES = ("constant", "cosine")
ANOMALY_ABORT_FRACTION = 0.01


# ------------------------------------------------------------------- config

@dataclass(frozen=True)
class OptimizerSpec:
    kind: str = "rmsprop"
    lr: float = 1e-4
    eps: float = 1e-8
    alpha: float = 0.99
    beta1: float = 0.9
    beta2: float = 0.999
    momentum: float = 0.9

    def __post_init__(self):
        if self.kind not in OPTIMIZERS:
            raise InputError(f"optimizer must be one of {OPTIMIZERS}, got {self.kind!r}")
        if not self.lr > 0:
            raise InputError(f"learning rate must be positive, got {self.lr}")
        if not (0 <= self.alpha < 1 and 0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and 0 <= self.momentum < 1):
            raise InputError("decay constants must lie in [0, 1)")
        if not self.eps > 0:
            raise InputError("eps must be positive")


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 1000
    batch_size: int = 128
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    lr_schedule: str = "cosine"
    ema_decay: float = 0.995
    seed: int = 0
    eval_every: int = 100

    def __post_init__(self):
        if self.iterations < 0:
            raise InputError("iterations must be non-negative")
        if self.batch_size < 4 or self.batch_size % 2:
            raise InputError(f"batch_size must be even and at least 4, got {self.batch_size}")
        if self.lr_schedule not in SCHEDULES:
            raise InputError(f"lr_schedule must be one of {SCHEDULES}, got {self.lr_schedule!r}")
        if not 0 <= self.ema_decay < 1:
            raise InputError("ema_decay must lie in [0, 1)")
        if self.eval_every < 1:
            raise InputError("eval_every must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if isinstance(d.get("optimizer"), dict):
            d["optimizer"] = OptimizerSpec(**d["optimizer"])
        return cls(**d)


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named consumer of the master seed."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


# ----------------------------------------------------------------- samplers

@dataclass
class Batch:
    x: np.ndarray
    y: np.ndarray | None = None
    weights: np.ndarray | None = None

    def __len__(self):
        return len(self.x)


@dataclass(frozen=True)
class Sampler:
    """Draws batches; ``population`` kinds ignore the size and emit the whole
    support twice so both halves of the split are exact."""

    kind: str
    params: dict = field(default_factory=dict)

    KINDS = ("gaussian", "uniform_box", "radial_exponential", "dataset", "population", "joint_pairs",
             "joint_population")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise InputError(f"sampler kind must be one of {self.KINDS}, got {self.kind!r}")

    @classmethod
    def gaussian(cls, std: float, dim: int, mean: float = 0.0):
        return cls("gaussian", {"std": float(std), "dim": int(dim), "mean": float(mean)})

    @classmethod
    def uniform_box(cls, lo: float, hi: float, dim: int):
        return cls("uniform_box", {"lo": float(lo), "hi": float(hi), "dim": int(dim)})

    @classmethod
    def joint_pairs(cls, pmf):
        return cls("joint_pairs", {"pmf": np.asarray(pmf, dtype=np.float64)})

    def importance(self) -> ImportanceScheme:
        p = self.params
        if self.kind == "gaussian":
            return ImportanceScheme.gaussian(p["std"], p["dim"], p["mean"])
        if self.kind == "uniform_box":
            return ImportanceScheme.box(p["lo"], p["hi"], p["dim"])
        if self.kind == "radial_exponential":
            return ImportanceScheme.radial_exponential(p["scale"])
        return ImportanceScheme.uniform()

    def draw(self, rng: np.random.Generator, size: int) -> Batch:
        p = self.params
        if self.kind == "gaussian":
            return Batch(p["mean"] + p["std"] * rng.standard_normal((size, p["dim"])))
        if self.kind == "uniform_box":
            return Batch(rng.uniform(p["lo"], p["hi"], size=(size, p["dim"])))
        if self.kind == "radial_exponential":
            r = rng.exponential(p["scale"], size=size)
            theta = rng.uniform(0.0, 2 * np.pi, size=size)
            return Batch(np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1))
        if self.kind == "dataset":
            return Batch(rng.integers(0, p["n"], size=size), None if "n_y" not in p else rng.integers(0, p["n_y"], size=size))
        if self.kind == "population":
            x = np.tile(np.arange(p["n"]), 2)
            y = None if "n_y" not in p else np.tile(np.arange(p["n_y"]), 2)
            return Batch(x, y)
        pmf = p["pmf"]
        if self.kind == "joint_pairs":
            flat = rng.choice(pmf.size, size=size, p=pmf.ravel())
            xi, yi = np.unravel_index(flat, pmf.shape)
            return Batch(xi, yi)
        # every (x, y) cell, weighted so plain means reproduce expectations under the pmf
        xi, yi = np.unravel_index(np.arange(pmf.size), pmf.shape)
        w = pmf.ravel() * pmf.size
        return Batch(np.tile(xi, 2), np.tile(yi, 2), np.tile(w, 2))


# --------------------------------------------------------------- optimizers

def optimizer_step(state: dict, params: np.ndarray, grad: np.ndarray, lr_now: float,
                   spec: OptimizerSpec) -> tuple[dict, np.ndarray]:
    """One update; returns new ``(state, params)`` without mutating the inputs."""
    grad = np.asarray(grad, dtype=np.float64)
    params = np.asarray(params, dtype=np.float64)
    if grad.shape != params.shape:
        raise InputError(f"gradient shape {grad.shape} does not match parameters {params.shape}")
    bad = ~np.isfinite(grad)
    if bad.any():
        raise NumericalError(f"non-finite gradient at parameter index {int(np.argmax(bad))}")
    if spec.kind == "sgd":
        return dict(state), params - lr_now * grad
    if spec.kind == "sgd_momentum":
        buf = spec.momentum * state.get("momentum", np.zeros_like(params)) + grad
        return {"momentum": buf}, params - lr_now * buf
    if spec.kind == "rmsprop":
        sq = spec.alpha * state.get("square_avg", np.zeros_like(params)) + (1 - spec.alpha) * grad * grad
        return {"square_avg": sq}, params - lr_now * grad / (np.sqrt(sq) + spec.eps)
    t = state.get("step", 0) + 1
    m = spec.beta1 * state.get("m", np.zeros_like(params)) + (1 - spec.beta1) * grad
    v = spec.beta2 * state.get("v", np.zeros_like(params)) + (1 - spec.beta2) * grad * grad
    m_hat = m / (1 - spec.beta1**t)
    v_hat = v / (1 - spec.beta2**t)
    return {"step": t, "m": m, "v": v}, params - lr_now * m_hat / (np.sqrt(v_hat) + spec.eps)


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    if total_steps <= 0:
        return base_lr
    if not 0 <= step <= total_steps:
        raise InputError(f"step {step} outside [0, {total_steps}]")
    return base_lr * (1.0 + math.cos(math.pi * step / total_steps)) / 2.0


def ema_update(ema_params, params, decay: float):
    if not 0 <= decay < 1:
        raise InputError("decay must lie in [0, 1)")
    return decay * np.asarray(ema_params) + (1.0 - decay) * np.asarray(params)


# --------------------------------------------------------------- objectives

@dataclass
class StepResult:
    grads: dict
    report: nl.LossReport | None
    anomalies: int = 0
    diagnostics: dict = field(default_factory=dict)


class Objective:
    """Base class: ``specs`` names the models; ``step`` produces gradients."""

    specs: dict

    def step(self, params: dict, batch: Batch, rng: np.random.Generator) -> StepResult:
        raise NotImplementedError


class MatrixSvdObjective(Objective):
    """SVD of a matrix with tabular (or any index-input) models on columns (f) and rows (g)."""

    def __init__(self, a, masks: nl.NestingMasks, f_spec: ModelSpec, g_spec: ModelSpec):
        self.a = np.asarray(a, dtype=np.float64)
        self.masks = masks
        self.specs = {"f": f_spec, "g": g_spec}

    def step(self, params, batch, rng=None):
        fs, gs = self.specs["f"], self.specs["g"]
        cols, rows = batch.x, batch.y
        fwd, adj = matrix_operator_apply(
            self.a, lambda i: model_forward(params["f"], fs, i), lambda i: model_forward(params["g"], gs, i),
            rows, cols)
        df, dg = nl.nestedlora_cotangents(self.masks, adj.f_values, fwd.f_values, fwd.t_values, adj.t_values)
        report = nl.loss_report(self.masks, adj.f_values, fwd.f_values, fwd.t_values)
        return StepResult({"f": model_backward(params["f"], fs, cols, df),
                           "g": model_backward(params["g"], gs, rows, dg)}, report)


class _EvdBase(Objective):
    """Self-adjoint operators: one model, ``apply`` returns an OperatorApplication."""

    def __init__(self, apply, f_spec: ModelSpec):
        self.apply = apply
        self.specs = {"f": f_spec}

    def _application(self, params, batch):
        spec = self.specs["f"]
        return self.apply(lambda pts: model_forward(params["f"], spec, pts), batch.x)


class EvdObjective(_EvdBase):
    def __init__(self, apply, masks: nl.NestingMasks, f_spec: ModelSpec):
        super().__init__(apply, f_spec)
        self.masks = masks

    def step(self, params, batch, rng=None):
        app = self._application(params, batch)
        if app.anomalies.size:
            return StepResult({}, None, int(app.anomalies.size))
        cot = nl.evd_cotangents(self.masks, app.f_values, app.t_values)
        report = nl.loss_report(self.masks, app.f_values, app.f_values, app.t_values)
        grad = model_backward(params["f"], self.specs["f"], batch.x, cot)
        s = app.f_values.shape[0]
        rq = np.sum(app.f_values * app.t_values, axis=0) / np.maximum(np.sum(app.f_values**2, axis=0), 1e-300)
        return StepResult({"f": grad}, report, diagnostics={
            "rayleigh": rq.tolist(), "norm_sq": (np.sum(app.f_values**2, axis=0) / s).tolist()})


class NeuralEfObjective(_EvdBase):
    """Unbiased NeuralEF baseline with L2 batch normalization of the outputs."""

    def step(self, params, batch, rng=None):
        app = self._application(params, batch)
        if app.anomalies.size:
            return StepResult({}, None, int(app.anomalies.size))
        phi, norms = nl.l2_batch_normalize(app.f_values)
        t_phi = app.t_values / norms
        d_phi = nl.neuralef_unbiased_cotangent(phi, t_phi)
        cot = nl.l2_batch_normalize_backward(phi, norms, d_phi)
        grad = model_backward(params["f"], self.specs["f"], batch.x, cot)
        rq = np.mean(phi * t_phi, axis=0)
        return StepResult({"f": grad}, None, diagnostics={"rayleigh": rq.tolist()})


class CdkObjective(Objective):
    """Canonical dependence kernel from paired samples, constant mode padded."""

    def __init__(self, masks: nl.NestingMasks, f_spec: ModelSpec, g_spec: ModelSpec):
        if not masks.padded:
            raise InputError("CDK training needs padded masks")
        self.masks = masks
        self.specs = {"f": f_spec, "g": g_spec}

    def step(self, params, batch, rng=None):
        fs, gs = self.specs["f"], self.specs["g"]
        f = model_forward(params["f"], fs, batch.x)
        g = model_forward(params["g"], gs, batch.y)
        df, dg = nl.cdk_cotangents(self.masks, f, g, batch.weights)
        fp, gp = nl.pad_constant_mode(f), nl.pad_constant_mode(g)
        report = nl.loss_report(self.masks, fp, gp, fp, batch.weights, batch.weights, batch.weights)
        return StepResult({"f": model_backward(params["f"], fs, batch.x, df),
                           "g": model_backward(params["g"], gs, batch.y, dg)}, report)


def hamiltonian_apply(spec: HamiltonianSpec, importance: ImportanceScheme | None, threads=None):
    return lambda evaluate, x: negative_hamiltonian_apply(evaluate, spec, importance, x, threads)


def matrix_evd_apply(a):
    """Symmetric matrix acting on tabular functions under the uniform measure."""
    a = np.asarray(a, dtype=np.float64)

    def apply(evaluate, idx):
        from .operators import OperatorApplication
        full = np.asarray(evaluate(np.arange(a.shape[0])), dtype=np.float64)
        return OperatorApplication((a @ full)[idx], full[idx])

    return apply


# --------------------------------------------------------------------- loop

@dataclass
class TrainResult:
    params: dict
    ema_params: dict
    log: list
    skipped: int = 0


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


def train(config: TrainConfig, objective: Objective, sampler: Sampler, init: dict | None = None,
          log_path=None, callback=None) -> TrainResult:
    """Run ``config.iterations`` updates; deterministic given ``config.seed``."""
    if init is None:
        init = {name: init_params(spec, [config.seed, zlib.crc32(f"init/{name}".encode())])
                for name, spec in objective.specs.items()}
    params = {k: v.copy() for k, v in init.items()}
    ema = {k: v.values.copy() for k, v in params.items()}
    opt_state = {k: {} for k in params}
    rng = substream(config.seed, "sampler")
    split_rng = substream(config.seed, "split")
    entries, skipped = [], 0
    fh = open(log_path, "w") if log_path else None
    try:
        for it in range(config.iterations):
            batch = sampler.draw(rng, config.batch_size)
            res = objective.step(params, batch, split_rng)
            if res.anomalies:
                skipped += 1
                log.warning("iteration %d skipped: %d anomalous samples", it, res.anomalies)
                if skipped > ANOMALY_ABORT_FRACTION * config.iterations:
                    raise TrainingAborted(
                        f"{skipped} of {it + 1} iterations had operator anomalies",
                        {"iteration": it, "skipped": skipped})
                continue
            lr = (cosine_lr(config.optimizer.lr, it, config.iterations)
                  if config.lr_schedule == "cosine" else config.optimizer.lr)
            for name, grad in res.grads.items():
                opt_state[name], new = optimizer_step(opt_state[name], params[name].values, grad, lr,
                                                      config.optimizer)
                params[name] = params[name].with_values(new)
                ema[name] = ema_update(ema[name], new, config.ema_decay)
            if (it + 1) % config.eval_every == 0 or it + 1 == config.iterations:
                entry = {"iteration": it + 1, "lr": lr, "skipped": skipped}
                if res.report is not None:
                    entry.update(res.report.to_dict())
                entry.update({k: _jsonable(v) for k, v in res.diagnostics.items()})
                entries.append(entry)
                if fh:
                    fh.write(json.dumps(entry, sort_keys=True) + "\n")
                    fh.flush()
                if callback:
                    callback(it + 1, params, entry)
    finally:
        if fh:
            fh.close()
    ema_params = {k: params[k].with_values(v) for k, v in ema.items()}
    return TrainResult(params, ema_params, entries, skipped)
