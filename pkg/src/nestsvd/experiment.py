"""Experiment configuration, orchestration, evaluation and gradient checks.

A config is a JSON object; ``resolve_config`` fills every default so that the
resolved form alone reproduces a run.
"""

from __future__ import annotations

import copy
import json
import logging
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import evaluation as ev
from . import nestedlora as nl
from . import problems as pb
from .errors import InputError
from .linalg import MAX_DIM, exact_svd, exact_symmetric_eig
from .models import ModelSpec, init_params, model_forward, param_count, save_checkpoint
from .operators import HamiltonianSpec, negative_hamiltonian_apply
from .training import (CdkObjective, EvdObjective, MatrixSvdObjective, NeuralEfObjective, Sampler,
                       TrainConfig, hamiltonian_apply, matrix_evd_apply, substream, train)

log = logging.getLogger(__name__)

PROBLEMS = ("matrix", "hydrogen2d", "oscillator2d", "discrete_cdk")
METHODS = ("nestedlora", "neuralef")
GRADCHECK_TOL = 1e-5
GRADCHECK_STEP = 1e-5
GRADCHECK_MAX_FULL = 2000
GRADCHECK_SUBSET = 200


class ConfigError(InputError):
    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


# ------------------------------------------------------------------ configs

_PDE_MODEL = {"head_mode": "disjoint", "hidden_widths": [128, 128], "activation": "softplus"}
_PDE_DEFAULTS = {
    # radial evaluation points cancel the Coulomb 1/r in weighted estimates (bounded variance)
    "hydrogen2d": {"sampler_std": 4.0, "eval": {"kind": "radial_exponential", "scale": 3.0},
                   "fourier": {"n_features": 256, "scale": 0.1}},
    "oscillator2d": {"sampler_std": 1.0, "eval": {"kind": "gaussian", "std": 2.0, "dim": 2, "mean": 0.0},
                     "fourier": {"n_features": 256, "scale": 1.0}},
}
_KNOWN = {
    "": {"problem", "method", "modes", "model", "masks", "train", "sampler", "eval", "output_dir"},
    "problem": {"kind", "matrix", "file", "random", "evd", "shift", "fd_epsilon", "pmf"},
    "masks": {"mode", "weights"},
    "eval": {"size", "sampler"},
}


def _check_keys(d, section):
    if not isinstance(d, dict):
        raise ConfigError(f"section '{section or 'root'}' must be an object", section or None)
    unknown = sorted(set(d) - _KNOWN[section])
    if unknown:
        raise ConfigError(f"unknown key '{unknown[0]}' in section '{section or 'root'}'", unknown[0])


def _load_array(spec: dict, name: str, base: Path | None):
    if name in spec:
        arr = np.asarray(spec[name], dtype=np.float64)
    elif "file" in spec:
        path = Path(spec["file"])
        if not path.is_absolute() and base is not None:
            path = base / path
        if not path.exists():
            raise ConfigError(f"referenced file {path} does not exist", "file")
        arr = np.loadtxt(path, delimiter=",", ndmin=2)
    elif "random" in spec:
        r = spec["random"]
        shape = (int(r["rows"]), int(r["cols"]))
        if name == "pmf":
            arr = pb.random_pmf(shape, int(r.get("seed", 0)))
        else:
            arr = np.random.default_rng(int(r.get("seed", 0))).standard_normal(shape)
            if spec.get("evd"):
                arr = arr @ arr.T / shape[1]
    else:
        raise ConfigError(f"problem needs one of '{name}', 'file' or 'random'", "problem")
    if arr.ndim != 2:
        raise ConfigError(f"'{name}' must be a 2-D array", name)
    return arr


def resolve_config(raw: dict, base_dir=None, seed: int | None = None, out: str | None = None) -> dict:
    """Validate and materialize every default. Raises ConfigError."""
    cfg = copy.deepcopy(raw)
    _check_keys(cfg, "")
    base = Path(base_dir) if base_dir else None
    prob = cfg.get("problem")
    if prob is None:
        raise ConfigError("missing required section 'problem'", "problem")
    _check_keys(prob, "problem")
    kind = prob.get("kind")
    if kind not in PROBLEMS:
        raise ConfigError(f"problem.kind must be one of {PROBLEMS}, got {kind!r}", "kind")
    method = cfg.setdefault("method", "nestedlora")
    if method not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}, got {method!r}", "method")

    # materialize array-valued problems inline so the resolved file is self-contained
    if kind == "matrix":
        a = _load_array(prob, "matrix", base)
        if max(a.shape) > MAX_DIM:
            raise ConfigError(f"matrix is {a.shape}; at most {MAX_DIM} per side is supported", "matrix")
        evd = bool(prob.get("evd", False))
        if evd and (a.shape[0] != a.shape[1] or np.max(np.abs(a - a.T)) > 1e-12):
            raise ConfigError("problem.evd requires a symmetric matrix", "evd")
        prob = {"kind": kind, "matrix": a.tolist(), "evd": evd}
    elif kind == "discrete_cdk":
        p = _load_array(prob, "pmf", base)
        if max(p.shape) > MAX_DIM:
            raise ConfigError(f"pmf is {p.shape}; at most {MAX_DIM} per side is supported", "pmf")
        try:
            pb.make_discrete_cdk(p)
        except InputError as exc:
            raise ConfigError(str(exc), "pmf") from exc
        prob = {"kind": kind, "pmf": p.tolist()}
    elif kind == "hydrogen2d":
        prob = {"kind": kind, "fd_epsilon": float(prob.get("fd_epsilon", 0.01))}
    else:
        shift = float(prob.get("shift", 6.0))
        if shift < 0:
            raise ConfigError("problem.shift must be non-negative", "shift")
        prob = {"kind": kind, "shift": shift, "fd_epsilon": float(prob.get("fd_epsilon", 0.01))}
    cfg["problem"] = prob
    if method == "neuralef" and not (kind in ("hydrogen2d", "oscillator2d") or prob.get("evd")):
        raise ConfigError("the neuralef method needs a self-adjoint (eigen) problem", "method")

    modes = cfg.get("modes")
    if not isinstance(modes, int) or modes < 1:
        raise ConfigError("'modes' must be a positive integer", "modes")
    limit = _max_modes(prob)
    if limit is not None and modes > limit:
        raise ConfigError(f"'modes' = {modes} exceeds the {limit} available for this problem", "modes")

    masks = cfg.setdefault("masks", {})
    _check_keys(masks, "masks")
    masks.setdefault("mode", "joint")
    if masks["mode"] not in nl.MASK_MODES:
        raise ConfigError(f"masks.mode must be one of {nl.MASK_MODES}", "mode")
    w = masks.setdefault("weights", None)
    if w is not None and (len(w) != modes or any(not x > 0 for x in w)):
        raise ConfigError(f"masks.weights must hold {modes} positive numbers", "weights")

    cfg["model"] = _resolve_model(cfg.get("model", {}), prob, modes)
    cfg["sampler"] = _resolve_sampler(cfg.get("sampler"), prob)
    cfg["train"] = _resolve_train(cfg.get("train", {}), prob, seed)
    ev_cfg = cfg.setdefault("eval", {})
    _check_keys(ev_cfg, "eval")
    if kind in _PDE_DEFAULTS:
        ev_cfg.setdefault("size", 20000)
        ev_cfg.setdefault("sampler", dict(_PDE_DEFAULTS[kind]["eval"]))
    if out is not None:
        cfg["output_dir"] = str(out)
    cfg.setdefault("output_dir", "run")
    return cfg


def _max_modes(prob):
    if prob["kind"] == "matrix":
        return min(np.asarray(prob["matrix"]).shape)
    if prob["kind"] == "discrete_cdk":
        return min(np.asarray(prob["pmf"]).shape) - 1
    return None


def _resolve_model(m: dict, prob: dict, modes: int) -> dict:
    m = dict(m)
    kind = prob["kind"]
    if kind in ("matrix", "discrete_cdk"):
        m.setdefault("head_mode", "tabular")
        m.setdefault("hidden_widths", [])
        m.setdefault("activation", "softplus")
        m.setdefault("fourier", None)
        m.setdefault("table_size", None)
    else:
        for k, v in _PDE_MODEL.items():
            m.setdefault(k, v)
        m.setdefault("fourier", dict(_PDE_DEFAULTS[kind]["fourier"]))
        m.setdefault("table_size", None)
    if m.get("fourier") is not None:
        m["fourier"] = {"append_raw": True, "seed": 0, **m["fourier"]}
    m["input_dim"] = 1 if kind in ("matrix", "discrete_cdk") else 2
    m["output_modes"] = modes
    probe = dict(m)
    if probe.get("head_mode") == "tabular":
        # table sizes follow the problem's domains and are filled per model later
        probe["table_size"] = 1
    elif kind in ("matrix", "discrete_cdk"):
        raise ConfigError("finite-domain problems need model.head_mode = 'tabular'", "head_mode")
    try:
        ModelSpec.from_dict(probe)
    except (TypeError, InputError) as exc:
        raise ConfigError(f"invalid model section: {exc}", "model") from exc
    return m


def _resolve_sampler(s, prob: dict) -> dict:
    kind = prob["kind"]
    if kind == "matrix":
        a = np.asarray(prob["matrix"])
        default = ({"kind": "population", "n": a.shape[0]} if prob["evd"]
                   else {"kind": "population", "n": a.shape[1], "n_y": a.shape[0]})
    elif kind == "discrete_cdk":
        default = {"kind": "joint_population"}
    else:
        default = {"kind": "gaussian", "std": _PDE_DEFAULTS[kind]["sampler_std"], "dim": 2, "mean": 0.0}
    s = dict(default if s is None else s)
    if s.get("kind") not in Sampler.KINDS:
        raise ConfigError(f"sampler.kind must be one of {Sampler.KINDS}", "sampler")
    if s["kind"] in ("gaussian", "uniform_box"):
        s.setdefault("dim", 2)
        s.setdefault("mean", 0.0) if s["kind"] == "gaussian" else None
    if s["kind"] in ("dataset", "population") and "n" not in s:
        s.update({k: v for k, v in default.items() if k != "kind"})
    return s


def _auto_lr(prob: dict) -> float:
    if prob["kind"] == "matrix":
        a = np.asarray(prob["matrix"])
        return 0.5 * min(a.shape) / exact_svd(a).singular_values[0] ** 2
    p = np.asarray(prob["pmf"])
    return 0.3 / max(p.sum(axis=1).max(), p.sum(axis=0).max())


def _resolve_train(t: dict, prob: dict, seed) -> dict:
    t = dict(t)
    tabular = prob["kind"] in ("matrix", "discrete_cdk")
    opt = dict(t.get("optimizer", {}))
    opt.setdefault("kind", "sgd" if tabular else "rmsprop")
    if opt.get("lr", "auto") == "auto":
        opt["lr"] = _auto_lr(prob) if tabular else 1e-3
    t["optimizer"] = opt
    t.setdefault("iterations", 20000 if tabular else 30000)
    t.setdefault("batch_size", 128)
    t.setdefault("lr_schedule", "constant" if tabular else "cosine")
    t.setdefault("ema_decay", 0.0 if tabular else 0.995)
    t.setdefault("eval_every", 1000 if tabular else 500)
    if seed is not None:
        t["seed"] = int(seed)
    t.setdefault("seed", 0)
    try:
        full = TrainConfig.from_dict(t).to_dict()
    except (TypeError, InputError) as exc:
        raise ConfigError(f"invalid train section: {exc}", "train") from exc
    return full


def load_config_file(path, seed=None, out=None) -> tuple[dict, str]:
    """Read and resolve a config file; returns ``(resolved, raw_text)``."""
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}: invalid JSON ({exc.msg})") from exc
    return resolve_config(raw, Path(path).parent, seed, out), text


def error_line(text: str, key) -> int | None:
    if not key:
        return None
    needle = f'"{key}"'
    for i, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return i
    return None


# ------------------------------------------------------------- construction

@dataclass
class Experiment:
    config: dict
    objective: object
    sampler: Sampler
    train_config: TrainConfig


def build_experiment(cfg: dict, threads=None) -> Experiment:
    prob = cfg["problem"]
    spec = cfg["model"]
    modes = cfg["modes"]
    masks_cfg = cfg["masks"]
    kind = prob["kind"]
    tcfg = TrainConfig.from_dict(cfg["train"])
    s = dict(cfg["sampler"])
    skind = s.pop("kind")
    if skind == "joint_pairs" or skind == "joint_population":
        s["pmf"] = np.asarray(prob["pmf"])
    sampler = Sampler(skind, s)

    if kind == "discrete_cdk":
        p = np.asarray(prob["pmf"])
        masks = nl.make_masks(masks_cfg["mode"], modes, masks_cfg["weights"], pad=True)
        f_spec = _with_table(spec, p.shape[0])
        g_spec = _with_table(spec, p.shape[1])
        return Experiment(cfg, CdkObjective(masks, f_spec, g_spec), sampler, tcfg)
    masks = nl.make_masks(masks_cfg["mode"], modes, masks_cfg["weights"])
    if kind == "matrix":
        a = np.asarray(prob["matrix"])
        if prob["evd"]:
            f_spec = _with_table(spec, a.shape[0])
            apply = matrix_evd_apply(a)
            obj = (NeuralEfObjective(apply, f_spec) if cfg["method"] == "neuralef"
                   else EvdObjective(apply, masks, f_spec))
            return Experiment(cfg, obj, sampler, tcfg)
        obj = MatrixSvdObjective(a, masks, _with_table(spec, a.shape[1]), _with_table(spec, a.shape[0]))
        return Experiment(cfg, obj, sampler, tcfg)
    ham = hamiltonian_spec(prob)
    apply = hamiltonian_apply(ham, sampler.importance(), threads)
    spec = ModelSpec.from_dict(spec)
    obj = NeuralEfObjective(apply, spec) if cfg["method"] == "neuralef" else EvdObjective(apply, masks, spec)
    return Experiment(cfg, obj, sampler, tcfg)


def _with_table(spec: dict, n: int) -> ModelSpec:
    return ModelSpec.from_dict({**spec, "table_size": n})


def hamiltonian_spec(prob: dict) -> HamiltonianSpec:
    if prob["kind"] == "hydrogen2d":
        return HamiltonianSpec(pb.coulomb2d, fd_epsilon=prob["fd_epsilon"])
    return HamiltonianSpec(pb.harmonic2d, shift=prob["shift"], fd_epsilon=prob["fd_epsilon"])


def initial_params(exp: Experiment) -> dict:
    seed = exp.train_config.seed
    return {name: init_params(spec, [seed, zlib.crc32(f"init/{name}".encode())])
            for name, spec in exp.objective.specs.items()}


# --------------------------------------------------------------- evaluation

def truth_spectrum(cfg: dict):
    """Exact per-mode values and a sample-matrix factory for the configured problem."""
    prob, modes = cfg["problem"], cfg["modes"]
    kind = prob["kind"]
    if kind == "hydrogen2d":
        states = pb.hydrogen_states(modes)
        return np.array([pb.hydrogen_eigenvalue(s) for s in states]), states
    if kind == "oscillator2d":
        states = pb.oscillator_states(modes)
        return np.array([pb.oscillator_shifted_eigenvalue(s, prob["shift"]) for s in states]), states
    if kind == "discrete_cdk":
        inst = pb.make_discrete_cdk(np.asarray(prob["pmf"]))
        return inst.singular_values[:modes], inst
    a = np.asarray(prob["matrix"])
    if prob["evd"]:
        lam, vec = exact_symmetric_eig(a)
        return lam[:modes], vec
    res = exact_svd(a)
    return res.singular_values[:modes], res


def evaluate(cfg: dict, params: dict, specs: dict, threads=None) -> ev.EvalReport:
    prob = cfg["problem"]
    kind = prob["kind"]
    truth_vals, truth = truth_spectrum(cfg)
    groups = pb.degenerate_groups(list(truth_vals))

    if kind == "matrix" and not prob["evd"]:
        a = np.asarray(prob["matrix"])
        n, m = a.shape
        f = model_forward(params["f"], specs["f"], np.arange(m))
        g = model_forward(params["g"], specs["g"], np.arange(n))
        sig = ev.spectrum_from_norms(f, g)
        k = cfg["modes"]
        blocks = [(f, truth.right_vectors[:, :k] * np.sqrt(m)), (g, truth.left_vectors[:, :k] * np.sqrt(n))]
        return ev.build_report(blocks, groups, sig, truth_vals, sig)
    if kind == "discrete_cdk":
        p = np.asarray(prob["pmf"])
        k = cfg["modes"]
        wx, wy = np.sqrt(truth.p_x * p.shape[0]), np.sqrt(truth.p_y * p.shape[1])
        f = model_forward(params["f"], specs["f"], np.arange(p.shape[0])) * wx[:, None]
        g = model_forward(params["g"], specs["g"], np.arange(p.shape[1])) * wy[:, None]
        sig = ev.spectrum_from_norms(f, g)
        blocks = [(f, truth.left_functions[:, :k] * wx[:, None]), (g, truth.right_functions[:, :k] * wy[:, None])]
        return ev.build_report(blocks, groups, sig, truth_vals, sig)
    if kind == "matrix":
        a = np.asarray(prob["matrix"])
        f = model_forward(params["f"], specs["f"], np.arange(a.shape[0]))
        t = a @ f
        ref = truth[:, :cfg["modes"]] * np.sqrt(a.shape[0])
    else:
        f, t, ref = _pde_eval_values(cfg, params["f"], specs["f"], truth, threads)
    rq, collapsed = ev.rayleigh_quotient(f, t)
    norms = ev.spectrum_from_norms(f)
    return ev.build_report([(f, ref)], groups, rq, truth_vals, norms, collapsed)


def _pde_eval_values(cfg, params, spec, states, threads):
    prob = cfg["problem"]
    s = dict(cfg["eval"]["sampler"])
    te = Sampler(s.pop("kind"), s)
    tr_s = dict(cfg["sampler"])
    tr_sampler = Sampler(tr_s.pop("kind"), tr_s)
    rng = substream(cfg["train"]["seed"], "eval")
    x = te.draw(rng, int(cfg["eval"]["size"])).x
    app = negative_hamiltonian_apply(lambda pts: model_forward(params, spec, pts), hamiltonian_spec(prob),
                                     tr_sampler.importance(), x, threads)
    keep = np.ones(x.shape[0], dtype=bool)
    keep[app.anomalies] = False
    if not keep.all():
        log.warning("dropping %d anomalous evaluation points", int((~keep).sum()))
    x = x[keep]
    w_te = te.importance()(x)
    ratio = np.sqrt(tr_sampler.importance()(x) / w_te)[:, None]
    f = app.f_values[keep] * ratio
    t = app.t_values[keep] * ratio
    if prob["kind"] == "hydrogen2d":
        ref = np.stack([pb.hydrogen_eigenfunction_xy(st, x) for st in states], axis=1)
    else:
        ref = np.stack([pb.oscillator_eigenfunction_xy(st, x) for st in states], axis=1)
    return f, t, ref / np.sqrt(w_te)[:, None]


# ---------------------------------------------------------------------- run

def run_experiment(cfg: dict, out_dir, threads=None):
    """Train, evaluate on EMA parameters and write all artifacts."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    exp = build_experiment(cfg, threads)
    (out / "config.resolved.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    result = train(exp.train_config, exp.objective, exp.sampler, initial_params(exp),
                   log_path=out / "metrics.jsonl")
    models = {name: (exp.objective.specs[name], p) for name, p in result.ema_params.items()}
    models.update({f"raw/{name}": (exp.objective.specs[name], p) for name, p in result.params.items()})
    save_checkpoint(out / "checkpoint.bin", models)
    report = evaluate(cfg, result.ema_params, exp.objective.specs, threads)
    (out / "eval.json").write_text(report.to_json() + "\n")
    (out / "eval.csv").write_text(report.to_csv())
    return report, result


# ---------------------------------------------------------------- gradcheck

@dataclass
class GradcheckResult:
    max_rel_error: float
    worst_model: str
    worst_index: int
    checked: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < GRADCHECK_TOL


def surrogate_objective(exp: Experiment, params: dict, batch, frozen=None) -> float:
    """Scalar whose exact parameter gradient the training cotangents implement.

    Finite domains with population batches give the population objective
    itself. For differential operators the operator values are held fixed
    (gradients flow only through the stencil center) and the metric term uses
    the split-half Gram product.
    """
    obj = exp.objective
    if isinstance(obj, MatrixSvdObjective):
        n, m = obj.a.shape
        f = model_forward(params["f"], obj.specs["f"], np.arange(m))
        g = model_forward(params["g"], obj.specs["g"], np.arange(n))
        ops = np.mean(g * (np.sqrt(n / m) * (obj.a @ f)), axis=0)
        return nl.nested_objective(obj.masks, ops, nl.compute_lambda(f), nl.compute_lambda(g)).total
    if isinstance(obj, CdkObjective):
        pmf = exp.sampler.params["pmf"]
        f = nl.pad_constant_mode(model_forward(params["f"], obj.specs["f"], np.arange(pmf.shape[0])))
        g = nl.pad_constant_mode(model_forward(params["g"], obj.specs["g"], np.arange(pmf.shape[1])))
        ops = np.einsum("xl,xy,yl->l", f, pmf, g)
        lf = nl.compute_lambda(f, pmf.sum(axis=1) * pmf.shape[0])
        lg = nl.compute_lambda(g, pmf.sum(axis=0) * pmf.shape[1])
        return nl.nested_objective(obj.masks, ops, lf, lg).total
    if isinstance(obj, EvdObjective):
        f = model_forward(params["f"], obj.specs["f"], batch.x)
        s = f.shape[0]
        op = -4.0 * np.sum(obj.masks.vector * f * frozen) / s
        fa, fb = nl.batch_split(f)
        return op + float(np.sum(obj.masks.matrix * nl.compute_lambda(fa) * nl.compute_lambda(fb)))
    raise InputError("gradient checks cover NestedLoRA objectives only")


def gradcheck(cfg: dict, threads=None, step: float = GRADCHECK_STEP) -> GradcheckResult:
    exp = build_experiment(cfg, threads)
    obj = exp.objective
    params = initial_params(exp)
    rng = substream(exp.train_config.seed, "gradcheck")
    batch = exp.sampler.draw(rng, exp.train_config.batch_size)
    analytic = obj.step(params, batch, rng).grads
    frozen = None
    if isinstance(obj, EvdObjective):
        frozen = obj._application(params, batch).t_values
    worst = (0.0, "", -1)
    checked = 0
    for name, p in params.items():
        grad = analytic[name]
        n = param_count(obj.specs[name])
        idx = (np.arange(n) if n <= GRADCHECK_MAX_FULL
               else np.sort(rng.choice(n, size=GRADCHECK_SUBSET, replace=False)))
        numeric = np.empty(idx.size)
        for j, i in enumerate(idx):
            vals = p.values.copy()
            vals[i] += step
            up = surrogate_objective(exp, {**params, name: p.with_values(vals)}, batch, frozen)
            vals[i] -= 2 * step
            down = surrogate_objective(exp, {**params, name: p.with_values(vals)}, batch, frozen)
            numeric[j] = (up - down) / (2 * step)
        a = grad[idx]
        floor = 1e-3 * max(np.max(np.abs(numeric)), 1e-12)
        rel = np.abs(a - numeric) / np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor)
        k = int(np.argmax(rel))
        checked += idx.size
        if rel[k] >= worst[0]:
            worst = (float(rel[k]), name, int(idx[k]))
    return GradcheckResult(worst[0], worst[1], worst[2], checked)


# ------------------------------------------------------------------- oracle

def oracle_tables(cfg: dict, grid_size: int = 41):
    """Ground-truth spectrum rows and functions-on-grid rows for the configured problem."""
    prob = cfg["problem"]
    kind = prob["kind"]
    spectrum, functions = [], []
    if kind in ("matrix", "discrete_cdk"):
        if kind == "matrix" and prob["evd"]:
            lam, vec = exact_symmetric_eig(np.asarray(prob["matrix"]))
            vals, left, right = lam, vec, vec
        elif kind == "matrix":
            res = exact_svd(np.asarray(prob["matrix"]))
            vals, left, right = res.singular_values, res.left_vectors, res.right_vectors
        else:
            inst = pb.make_discrete_cdk(np.asarray(prob["pmf"]))
            vals, left, right = inst.singular_values, inst.left_functions, inst.right_functions
        spectrum = [{"mode": i, "value": float(v), "group_id": gi}
                    for gi, g in enumerate(pb.degenerate_groups(list(vals))) for i in g for v in [vals[i]]]
        for side, mat in (("left", left), ("right", right)):
            for point in range(mat.shape[0]):
                functions.append({"side": side, "point": point,
                                  **{f"mode_{j}": float(mat[point, j]) for j in range(mat.shape[1])}})
        return spectrum, functions
    count = cfg["modes"]
    lam, states = truth_spectrum(cfg)
    for gi, g in enumerate(pb.degenerate_groups(list(lam))):
        for i in g:
            spectrum.append({"mode": i, "value": float(lam[i]), "group_id": gi, "state": str(tuple(vars(states[i]).values()))})
    half = 10.0 if kind == "hydrogen2d" else 4.0
    axis = np.linspace(-half, half, grid_size)
    xx, yy = np.meshgrid(axis, axis, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    fn = pb.hydrogen_eigenfunction_xy if kind == "hydrogen2d" else pb.oscillator_eigenfunction_xy
    vals = np.stack([fn(s, pts) for s in states[:count]], axis=1)
    for p, v in zip(pts, vals):
        functions.append({"x": float(p[0]), "y": float(p[1]), **{f"mode_{j}": float(v[j]) for j in range(count)}})
    return spectrum, functions
