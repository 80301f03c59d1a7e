"""Parametric function models f: X -> R^L with hand-written backprop.

Three layouts are supported:

* ``disjoint``: L independent MLPs, each with a scalar output, evaluated in
  one batched pass (weights carry a leading head axis).
* ``shared``: one MLP trunk whose last linear layer has L outputs.
* ``tabular``: a lookup table over a finite domain ``{0, ..., N-1}``; the
  batch holds integer indices. This spans the full function space R^N and is
  what the matrix-case oracle tests train.

All parameters live in one flat float64 vector; ``ModelParams.layout``
records which slice belongs to which layer.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import InputError, NumericalError

HEAD_MODES = ("disjoint", "shared", "tabular")
ACTIVATIONS = ("softplus", "sincos")
FINAL_LAYER_SCALE = 0.1


@dataclass(frozen=True)
class FourierSpec:
    n_features: int
    scale: float
    append_raw: bool = True
    seed: int = 0


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    output_modes: int
    head_mode: str = "disjoint"
    hidden_widths: tuple = (128, 128)
    activation: str = "softplus"
    fourier: FourierSpec | None = None
    table_size: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(h) for h in self.hidden_widths))
        if self.head_mode not in HEAD_MODES:
            raise InputError(f"head_mode must be one of {HEAD_MODES}, got {self.head_mode!r}")
        if self.activation not in ACTIVATIONS:
            raise InputError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.output_modes < 1 or self.input_dim < 1:
            raise InputError("input_dim and output_modes must be positive")
        if self.head_mode == "tabular":
            if not self.table_size or self.table_size < 1:
                raise InputError("tabular models need a finite table_size")
        elif self.activation == "sincos" and any(h % 2 for h in self.hidden_widths):
            raise InputError("sin-cos activation needs even hidden widths")

    def to_dict(self) -> dict:
        return asdict(self) | {"hidden_widths": list(self.hidden_widths)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        if d.get("fourier") is not None:
            d["fourier"] = FourierSpec(**d["fourier"])
        d["hidden_widths"] = tuple(d.get("hidden_widths", ()))
        return cls(**d)


@dataclass(frozen=True)
class FourierFeatureMap:
    projection: np.ndarray = field(repr=False)
    scale: float
    append_raw: bool

    @property
    def n_features(self) -> int:
        return self.projection.shape[0]

    @property
    def input_dim(self) -> int:
        return self.projection.shape[1]

    @property
    def output_dim(self) -> int:
        return 2 * self.n_features + (self.input_dim if self.append_raw else 0)


def make_fourier_map(spec: FourierSpec, input_dim: int) -> FourierFeatureMap:
    """Frozen Gaussian projection with entry variance ``2*pi*scale``."""
    rng = np.random.default_rng(spec.seed)
    b = rng.normal(0.0, np.sqrt(2 * np.pi * spec.scale), size=(spec.n_features, input_dim))
    b.setflags(write=False)
    return FourierFeatureMap(b, spec.scale, spec.append_raw)


_cached_fourier_map = lru_cache(maxsize=32)(make_fourier_map)


def fourier_features(fmap: FourierFeatureMap, batch) -> np.ndarray:
    """Columns ordered as (cos block, sin block, raw block if enabled)."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != fmap.input_dim:
        raise InputError(f"batch must be S x {fmap.input_dim}, got {x.shape}")
    proj = x @ fmap.projection.T
    blocks = [np.cos(proj), np.sin(proj)]
    if fmap.append_raw:
        blocks.append(x)
    return np.concatenate(blocks, axis=1)


@dataclass(frozen=True)
class Slot:
    name: str
    shape: tuple
    offset: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


@dataclass
class ModelParams:
    values: np.ndarray
    layout: tuple

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        expected = sum(s.size for s in self.layout)
        if self.values.shape != (expected,):
            raise InputError(f"layout declares {expected} parameters, got {self.values.shape}")

    def view(self, name: str) -> np.ndarray:
        for s in self.layout:
            if s.name == name:
                return self.values[s.offset:s.offset + s.size].reshape(s.shape)
        raise KeyError(name)

    def copy(self) -> "ModelParams":
        return ModelParams(self.values.copy(), self.layout)

    def with_values(self, values) -> "ModelParams":
        return ModelParams(values, self.layout)


def _feature_dim(spec: ModelSpec) -> int:
    if spec.fourier is None:
        return spec.input_dim
    f = spec.fourier
    return 2 * f.n_features + (spec.input_dim if f.append_raw else 0)


def param_layout(spec: ModelSpec) -> tuple:
    """Ordered parameter slots; weights are stored (fan_in, fan_out)."""
    shapes = []
    if spec.head_mode == "tabular":
        shapes.append(("table", (spec.table_size, spec.output_modes)))
    else:
        widths = [_feature_dim(spec), *spec.hidden_widths]
        heads = spec.head_mode == "disjoint"
        out_width = 1 if heads else spec.output_modes
        dims = list(zip(widths, widths[1:] + [out_width]))
        for k, (fan_in, fan_out) in enumerate(dims):
            lead = (spec.output_modes,) if heads else ()
            shapes.append((f"w{k}", lead + (fan_in, fan_out)))
            shapes.append((f"b{k}", lead + (fan_out,)))
    layout, offset = [], 0
    for name, shape in shapes:
        slot = Slot(name, tuple(shape), offset)
        layout.append(slot)
        offset += slot.size
    return tuple(layout)


def param_count(spec: ModelSpec) -> int:
    return sum(s.size for s in param_layout(spec))


def n_layers(spec: ModelSpec) -> int:
    return 0 if spec.head_mode == "tabular" else len(spec.hidden_widths) + 1


def init_params(spec: ModelSpec, seed) -> ModelParams:
    """Seeded initialization.

    Linear layers draw weights and biases from a zero-mean uniform law with
    standard deviation ``1/sqrt(fan_in)``; the last layer is further scaled by
    0.1. Tables are i.i.d. N(0, 1/L).
    """
    rng = np.random.default_rng(seed)
    layout = param_layout(spec)
    values = np.empty(sum(s.size for s in layout))
    if spec.head_mode == "tabular":
        values[:] = rng.normal(0.0, 1.0 / np.sqrt(spec.output_modes), size=values.size)
        return ModelParams(values, layout)
    last = n_layers(spec) - 1
    for slot in layout:
        k = int(slot.name[1:])
        fan_in = layout[2 * k].shape[-2]
        bound = np.sqrt(3.0 / fan_in)
        draw = rng.uniform(-bound, bound, size=slot.size)
        if k == last:
            draw *= FINAL_LAYER_SCALE
        values[slot.offset:slot.offset + slot.size] = draw
    return ModelParams(values, layout)


def head_indices(spec: ModelSpec, head: int) -> np.ndarray:
    """Flat parameter indices owned by one head of a disjoint model."""
    if spec.head_mode != "disjoint":
        raise InputError("head slices exist only for disjoint-head models")
    idx = []
    for slot in param_layout(spec):
        block = np.arange(slot.offset, slot.offset + slot.size).reshape(slot.shape)
        idx.append(block[head].ravel())
    return np.concatenate(idx)


# ---------------------------------------------------------------- activations

def _activate(z, kind):
    if kind == "softplus":
        return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    h = z.shape[-1] // 2
    return np.concatenate([np.sin(z[..., :h]), np.cos(z[..., h:])], axis=-1)


def _activate_grad(z, kind):
    if kind == "softplus":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    h = z.shape[-1] // 2
    return np.concatenate([np.cos(z[..., :h]), -np.sin(z[..., h:])], axis=-1)


# ------------------------------------------------------------ forward/backward

def _inputs(spec: ModelSpec, batch):
    if spec.head_mode == "tabular":
        idx = np.asarray(batch)
        if idx.ndim == 2 and idx.shape[1] == 1:
            idx = idx[:, 0]
        if idx.ndim != 1:
            raise InputError(f"tabular batch must hold indices, got shape {idx.shape}")
        idx_int = idx.astype(np.int64)
        if np.any(idx_int != idx) or idx_int.min(initial=0) < 0 or idx_int.max(initial=0) >= spec.table_size:
            raise InputError(f"indices must be integers in [0, {spec.table_size})")
        return idx_int
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise InputError(f"batch must be S x {spec.input_dim}, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InputError("batch contains non-finite points")
    if spec.fourier is not None:
        x = fourier_features(_cached_fourier_map(spec.fourier, spec.input_dim), x)
    return x


def _check(arr, layer):
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite activation in layer {layer}")


def _first_layer_heads(x, w):
    """Shared input (S, F) through per-head weights (L, F, H) -> (L, S, H), as one GEMM."""
    n_heads, fan_in, width = w.shape
    flat = x @ w.transpose(1, 0, 2).reshape(fan_in, n_heads * width)
    return flat.reshape(x.shape[0], n_heads, width).transpose(1, 0, 2)


def _first_layer_heads_grad(x, dz):
    n_heads, s, width = dz.shape
    flat = x.T @ dz.transpose(1, 0, 2).reshape(s, n_heads * width)
    return flat.reshape(x.shape[1], n_heads, width).transpose(1, 0, 2)


def _forward_cache(params: ModelParams, spec: ModelSpec, batch):
    x = _inputs(spec, batch)
    if spec.head_mode == "tabular":
        return params.view("table")[x], (x,)
    heads = spec.head_mode == "disjoint"
    depth = n_layers(spec)
    pre, post = [], [x]
    h = x
    for k in range(depth):
        w, b = params.view(f"w{k}"), params.view(f"b{k}")
        if heads:
            z = (_first_layer_heads(h, w) if k == 0 else np.matmul(h, w)) + b[:, None, :]
        else:
            z = h @ w + b
        _check(z, k)
        pre.append(z)
        if k < depth - 1:
            h = _activate(z, spec.activation)
            post.append(h)
    out = pre[-1][..., 0].T if heads else pre[-1]
    return np.ascontiguousarray(out), (pre, post)


def model_forward(params: ModelParams, spec: ModelSpec, batch) -> np.ndarray:
    """Evaluate all L modes at a batch; returns an S x L array."""
    return _forward_cache(params, spec, batch)[0]


def model_backward(params: ModelParams, spec: ModelSpec, batch, cotangent) -> np.ndarray:
    """Vector-Jacobian product: sum_{b,l} cotangent[b,l] * d f_l(x_b) / d theta."""
    out, cache = _forward_cache(params, spec, batch)
    c = np.asarray(cotangent, dtype=np.float64)
    if c.shape != out.shape:
        raise InputError(f"cotangent shape {c.shape} does not match output {out.shape}")
    grad = np.zeros_like(params.values)
    views = {s.name: grad[s.offset:s.offset + s.size].reshape(s.shape) for s in params.layout}
    if spec.head_mode == "tabular":
        (idx,) = cache
        np.add.at(views["table"], idx, c)
        return grad
    pre, post = cache
    heads = spec.head_mode == "disjoint"
    depth = n_layers(spec)
    dz = c.T[:, :, None] if heads else c
    for k in range(depth - 1, -1, -1):
        h = post[k]
        if heads:
            views[f"w{k}"][...] = (_first_layer_heads_grad(h, dz) if k == 0
                                   else np.matmul(h.transpose(0, 2, 1), dz))
            views[f"b{k}"][...] = dz.sum(axis=1)
        else:
            views[f"w{k}"][...] = h.T @ dz
            views[f"b{k}"][...] = dz.sum(axis=0)
        if k == 0:
            break
        w = params.view(f"w{k}")
        da = np.matmul(dz, w.transpose(0, 2, 1)) if heads else dz @ w.T
        dz = da * _activate_grad(pre[k - 1], spec.activation)
    return grad


# ------------------------------------------------------------------ checkpoints

_MAGIC = b"NSVDCKPT"


def save_checkpoint(path, models: dict) -> None:
    """Write named ``(spec, params)`` pairs as a JSON header plus float64 LE data."""
    entries, arrays = [], []
    for name, (spec, params) in models.items():
        entries.append({"name": name, "spec": spec.to_dict(), "count": int(params.values.size)})
        arrays.append(params.values)
    header = json.dumps({"models": entries}, sort_keys=True).encode()
    data = np.concatenate(arrays).astype("<f8") if arrays else np.zeros(0, "<f8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(data.tobytes())


def load_checkpoint(path) -> dict:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise InputError(f"{path} is not a checkpoint file")
    (n,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + n])
    data = np.frombuffer(raw[16 + n:], dtype="<f8").astype(np.float64)
    out, offset = {}, 0
    for entry in header["models"]:
        spec = ModelSpec.from_dict(entry["spec"])
        count = entry["count"]
        out[entry["name"]] = (spec, ModelParams(data[offset:offset + count].copy(), param_layout(spec)))
        offset += count
    return out
