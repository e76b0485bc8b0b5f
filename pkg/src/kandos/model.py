"""KAN classifier: stacked layers of per-edge splines.

Neuron ``o`` of a layer computes ``bias[o] + sum_i scale[o, i] * s_oi(x_i)``
where ``s_oi`` is a cubic B-spline over the layer's shared grid. The final
layer has a single neuron whose raw output is the logit.

Parameters are held as float32 at rest (so model size is ``4 * trainable``
bytes); every computation promotes to float64.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from kandos.errors import ConfigError, CorruptModelError, FormatVersionError, ModelFileError, NonFiniteError, ShapeError
from kandos.splines import SplineGrid, basis_values, basis_values_and_derivs, make_grid

FORMAT_VERSION = 1

# reference figures reported for the original model; printed next to our own counts
REFERENCE_TOTAL_PARAMS = 50_092
REFERENCE_TRAINABLE_PARAMS = 42_336
REFERENCE_MODEL_SIZE_MB = 0.19


@dataclass(frozen=True)
class KanConfig:
    layer_dims: tuple = (78, 32, 16, 1)
    grid_intervals: int = 5
    degree: int = 3
    grid_range: tuple = (-3.0, 3.0)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))
        object.__setattr__(self, "grid_range", tuple(float(r) for r in self.grid_range))
        self.validate()

    def validate(self):
        dims = self.layer_dims
        if len(dims) < 2:
            raise ConfigError(f"layer_dims needs at least an input and an output size, got {list(dims)}")
        if any(d < 1 for d in dims):
            raise ConfigError(f"layer sizes must be positive, got {list(dims)}")
        if dims[-1] != 1:
            raise ConfigError(f"binary classifier needs a single output neuron, got {dims[-1]}")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        make_grid(self.grid_range[0], self.grid_range[1], self.grid_intervals, self.degree)

    def make_grid(self) -> SplineGrid:
        return make_grid(self.grid_range[0], self.grid_range[1], self.grid_intervals, self.degree)

    def to_dict(self) -> dict:
        return {
            "layer_dims": list(self.layer_dims),
            "grid_intervals": self.grid_intervals,
            "degree": self.degree,
            "grid_range": list(self.grid_range),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KanConfig":
        return cls(
            layer_dims=tuple(d["layer_dims"]),
            grid_intervals=int(d["grid_intervals"]),
            degree=int(d["degree"]),
            grid_range=tuple(d["grid_range"]),
            seed=int(d["seed"]),
        )


@dataclass(eq=False)
class KanLayer:
    grid: SplineGrid
    coeffs: np.ndarray  # [out][in][n_basis]
    scale: np.ndarray  # [out][in]
    bias: np.ndarray  # [out]

    @property
    def in_dim(self) -> int:
        return self.coeffs.shape[1]

    @property
    def out_dim(self) -> int:
        return self.coeffs.shape[0]

    @property
    def n_edges(self) -> int:
        return self.in_dim * self.out_dim

    def parameters(self) -> list:
        return [self.coeffs, self.scale, self.bias]


@dataclass(eq=False)
class KanModel:
    config: KanConfig
    layers: list
    clean_stats: Optional[object] = None  # kandos.data.CleanStats
    decision_threshold: float = 0.5

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def dtype(self):
        return self.layers[0].coeffs.dtype

    def parameters(self) -> list:
        """Flat list of trainable arrays in a fixed order (coeffs, scale, bias per layer)."""
        return [p for layer in self.layers for p in layer.parameters()]

    def astype(self, dtype) -> "KanModel":
        layers = [
            KanLayer(l.grid, l.coeffs.astype(dtype), l.scale.astype(dtype), l.bias.astype(dtype)) for l in self.layers
        ]
        return KanModel(self.config, layers, self.clean_stats, self.decision_threshold)

    def copy(self) -> "KanModel":
        return self.astype(self.dtype)


@dataclass
class LayerCache:
    x: np.ndarray  # layer input [B][in]
    basis: np.ndarray  # [B][in][n_basis]
    dbasis: np.ndarray  # [B][in][n_basis]


@dataclass
class ForwardCache:
    layers: list = field(default_factory=list)

    @property
    def batch_size(self) -> int:
        return self.layers[0].x.shape[0]


@dataclass
class LayerGrads:
    coeffs: np.ndarray
    scale: np.ndarray
    bias: np.ndarray


@dataclass
class ParamGrads:
    layers: list

    def flat(self) -> list:
        """Gradients aligned with ``KanModel.parameters()``."""
        return [g for lg in self.layers for g in (lg.coeffs, lg.scale, lg.bias)]


def init_model(config: KanConfig, dtype=np.float32) -> KanModel:
    config.validate()
    rng = np.random.default_rng(config.seed)
    grid = config.make_grid()
    layers = []
    for in_dim, out_dim in zip(config.layer_dims[:-1], config.layer_dims[1:]):
        std = 0.1 / np.sqrt(in_dim)
        coeffs = rng.normal(0.0, std, size=(out_dim, in_dim, grid.n_basis)).astype(dtype)
        layers.append(KanLayer(grid, coeffs, np.ones((out_dim, in_dim), dtype=dtype), np.zeros(out_dim, dtype=dtype)))
    return KanModel(config, layers)


def _check_batch(model: KanModel, batch) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.in_dim:
        raise ShapeError(f"expected a batch of shape [B, {model.in_dim}], got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("batch contains non-finite values")
    return x


def _layer_out(layer: KanLayer, basis: np.ndarray) -> np.ndarray:
    B = basis.shape[0]
    w = (layer.scale.astype(np.float64)[..., None] * layer.coeffs).reshape(layer.out_dim, -1)
    return basis.reshape(B, -1) @ w.T + layer.bias


def forward(model: KanModel, batch) -> tuple[np.ndarray, ForwardCache]:
    """Logits for every row of ``batch`` plus the cache needed by ``backward``."""
    x = _check_batch(model, batch)
    cache = ForwardCache()
    for layer in model.layers:
        basis, dbasis = basis_values_and_derivs(layer.grid, x)
        cache.layers.append(LayerCache(x, basis, dbasis))
        x = _layer_out(layer, basis)
    return x[:, 0], cache


def logits(model: KanModel, batch, chunk: int = 4096) -> np.ndarray:
    """Cache-free forward pass, chunked to bound memory on large inputs."""
    x_all = _check_batch(model, batch)
    out = np.empty(x_all.shape[0], dtype=np.float64)
    for start in range(0, x_all.shape[0], chunk):
        x = x_all[start : start + chunk]
        for layer in model.layers:
            x = _layer_out(layer, basis_values(layer.grid, x))
        out[start : start + chunk] = x[:, 0]
    return out


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def predict_proba(model: KanModel, batch) -> np.ndarray:
    return sigmoid(logits(model, batch))


def backward(model: KanModel, cache: ForwardCache, dL_dlogit) -> ParamGrads:
    """Gradients of a scalar loss given its derivative w.r.t. each logit.

    Gradients are summed over the batch; a mean-reduced loss should pass
    ``dL_dlogit`` already divided by the batch size.
    """
    g = np.asarray(dL_dlogit, dtype=np.float64)
    if len(cache.layers) != len(model.layers) or g.shape != (cache.batch_size,):
        raise ShapeError("cache-mismatch: cache does not belong to this model/batch")
    for layer, lc in zip(model.layers, cache.layers):
        if lc.basis.shape[1:] != (layer.in_dim, layer.grid.n_basis):
            raise ShapeError("cache-mismatch: cache does not belong to this model/batch")

    grads = []
    g = g[:, None]
    for layer, lc in zip(reversed(model.layers), reversed(cache.layers)):
        B = g.shape[0]
        n_basis = layer.grid.n_basis
        coeffs = layer.coeffs.astype(np.float64)
        scale = layer.scale.astype(np.float64)
        # dL/d(scale*coeffs), flattened over (in, basis)
        dw = (g.T @ lc.basis.reshape(B, -1)).reshape(coeffs.shape)
        d_coeffs = dw * scale[..., None]
        d_scale = np.einsum("oic,oic->oi", dw, coeffs)
        d_bias = g.sum(axis=0)
        grads.append(LayerGrads(d_coeffs, d_scale, d_bias))
        w = (scale[..., None] * coeffs).reshape(layer.out_dim, -1)
        g = np.einsum("bic,bic->bi", (g @ w).reshape(B, layer.in_dim, n_basis), lc.dbasis)
    grads.reverse()
    return ParamGrads(grads)


def count_params(model_or_config) -> tuple[int, list]:
    """Trainable parameter count: coefficients + edge scales + biases per layer."""
    config = model_or_config.config if isinstance(model_or_config, KanModel) else model_or_config
    n_basis = config.grid_intervals + config.degree
    breakdown = []
    for in_dim, out_dim in zip(config.layer_dims[:-1], config.layer_dims[1:]):
        edges = in_dim * out_dim
        row = {
            "in_dim": in_dim,
            "out_dim": out_dim,
            "edges": edges,
            "coeffs": edges * n_basis,
            "scales": edges,
            "biases": out_dim,
        }
        row["total"] = row["coeffs"] + row["scales"] + row["biases"]
        breakdown.append(row)
    return sum(r["total"] for r in breakdown), breakdown


# --- persistence -----------------------------------------------------------

_DTYPES = {"float32": "<f4", "float64": "<f8"}


def encode_array(a: np.ndarray) -> dict:
    name = np.dtype(a.dtype).name
    if name not in _DTYPES:
        raise ModelFileError(f"unsupported array dtype {name}")
    raw = np.ascontiguousarray(a, dtype=_DTYPES[name]).tobytes()
    return {"dtype": name, "shape": list(a.shape), "data": base64.b64encode(raw).decode("ascii")}


def decode_array(d: dict) -> np.ndarray:
    try:
        dt = _DTYPES[d["dtype"]]
        raw = base64.b64decode(d["data"].encode("ascii"), validate=True)
        a = np.frombuffer(raw, dtype=dt).reshape(d["shape"])
    except (KeyError, ValueError, TypeError) as e:
        raise CorruptModelError(f"malformed array block: {e}") from e
    return a.astype(np.dtype(dt).newbyteorder("="))


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def model_payload(model: KanModel) -> dict:
    layers = [
        {
            "in_dim": l.in_dim,
            "out_dim": l.out_dim,
            "coeffs": encode_array(l.coeffs),
            "scale": encode_array(l.scale),
            "bias": encode_array(l.bias),
        }
        for l in model.layers
    ]
    return {
        "config": model.config.to_dict(),
        "grid": model.layers[0].grid.describe(),
        "layers": layers,
        "clean_stats": None if model.clean_stats is None else model.clean_stats.to_dict(),
        "decision_threshold": float(model.decision_threshold).hex(),
    }


def save_model(model: KanModel, path) -> None:
    payload = model_payload(model)
    doc = {
        "format_version": FORMAT_VERSION,
        "checksum": "sha256:" + hashlib.sha256(_canonical(payload)).hexdigest(),
        "payload": payload,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_model(path) -> KanModel:
    from kandos.data import CleanStats

    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise CorruptModelError(f"{path}: not a complete model document ({e.msg})") from e
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise CorruptModelError(f"{path}: missing format_version")
    if doc["format_version"] != FORMAT_VERSION:
        raise FormatVersionError(doc["format_version"], FORMAT_VERSION)
    payload = doc.get("payload")
    expected = "sha256:" + hashlib.sha256(_canonical(payload)).hexdigest()
    if doc.get("checksum") != expected:
        raise CorruptModelError(f"{path}: checksum mismatch")
    try:
        config = KanConfig.from_dict(payload["config"])
        grid = config.make_grid()
        if grid.describe() != payload["grid"]:
            raise CorruptModelError(f"{path}: grid block disagrees with config")
        layers = []
        for ld in payload["layers"]:
            layer = KanLayer(grid, decode_array(ld["coeffs"]), decode_array(ld["scale"]), decode_array(ld["bias"]))
            if layer.coeffs.shape != (ld["out_dim"], ld["in_dim"], grid.n_basis):
                raise CorruptModelError(f"{path}: coefficient block has shape {layer.coeffs.shape}")
            layers.append(layer)
        stats = None if payload["clean_stats"] is None else CleanStats.from_dict(payload["clean_stats"])
        threshold = float.fromhex(payload["decision_threshold"])
    except (KeyError, TypeError, ValueError) as e:
        raise CorruptModelError(f"{path}: malformed payload ({e})") from e
    dims = [layers[0].in_dim] + [l.out_dim for l in layers]
    if tuple(dims) != config.layer_dims:
        raise CorruptModelError(f"{path}: layer shapes {dims} disagree with config {list(config.layer_dims)}")
    return KanModel(config, layers, stats, threshold)
