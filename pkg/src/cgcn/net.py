"""The nine-block spatial-temporal network, multi-stream fusion and checkpoints."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import layers as L
from .errors import MissingCheckpoint, SchemaViolation, StreamClassMismatch
from .graph import PropagationMatrix

PAPER_CHANNELS = (64, 64, 64, 128, 128, 128, 256, 256, 256)
DESK_CHANNELS = (16, 16, 16, 32, 32, 32, 64, 64, 64)
DEFAULT_STRIDES = (1, 1, 1, 2, 1, 1, 2, 1, 1)
CHECKPOINT_FORMAT = "cgcn-checkpoint/1"


@dataclass(frozen=True)
class BlockConfig:
    in_channels: int
    out_channels: int
    temporal_kernel: int = 9
    temporal_stride: int = 1
    dropout_rate: float = 0.5

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1 or self.temporal_kernel < 1:
            raise ValueError("block sizes must be positive")
        if self.temporal_stride not in (1, 2):
            raise ValueError("temporal stride must be 1 or 2")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int
    num_classes: int
    channels: tuple[int, ...] = DESK_CHANNELS
    strides: tuple[int, ...] = DEFAULT_STRIDES
    temporal_kernel: int = 9
    dropout_rate: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        if len(self.channels) != len(self.strides):
            raise ValueError("channels and strides must have one entry per block")
        if self.num_classes < 1 or self.in_channels < 1:
            raise ValueError("class and input channel counts must be positive")

    def blocks(self) -> list[BlockConfig]:
        ins = (self.in_channels,) + self.channels[:-1]
        return [
            BlockConfig(i, o, self.temporal_kernel, s, self.dropout_rate)
            for i, o, s in zip(ins, self.channels, self.strides)
        ]


def paper_config(in_channels: int, num_classes: int, **kw) -> ModelConfig:
    return ModelConfig(in_channels, num_classes, PAPER_CHANNELS, DEFAULT_STRIDES, **kw)


def desk_config(in_channels: int, num_classes: int, **kw) -> ModelConfig:
    return ModelConfig(in_channels, num_classes, DESK_CHANNELS, DEFAULT_STRIDES, **kw)


class Block:
    """S-conv, BN, ReLU, T-conv, BN, ReLU, dropout."""

    def __init__(self, cfg: BlockConfig, rng: np.random.Generator, prefix: str):
        self.cfg = cfg
        self.prefix = prefix
        cin, cout, k = cfg.in_channels, cfg.out_channels, cfg.temporal_kernel
        self.params = {
            "theta": rng.normal(0.0, np.sqrt(2.0 / cin), size=(cin, cout)),
            "bn1.gamma": np.ones(cout),
            "bn1.beta": np.zeros(cout),
            "tconv": rng.normal(0.0, np.sqrt(2.0 / (cout * k)), size=(cout, cout, k)),
            "bn2.gamma": np.ones(cout),
            "bn2.beta": np.zeros(cout),
        }
        self.buffers = {
            "bn1.running_mean": np.zeros(cout),
            "bn1.running_var": np.ones(cout),
            "bn2.running_mean": np.zeros(cout),
            "bn2.running_var": np.ones(cout),
        }
        self._cache = None

    def forward(self, x, c_hat, mode="eval", rng=None):
        p, b = self.params, self.buffers
        h, c_s = L.spatial_conv_forward(x, c_hat, p["theta"])
        h, c_bn1 = L.batch_norm_forward(
            h, p["bn1.gamma"], p["bn1.beta"], b["bn1.running_mean"], b["bn1.running_var"], mode
        )
        h, c_r1 = L.relu_forward(h)
        h, c_t = L.temporal_conv_forward(h, p["tconv"], self.cfg.temporal_stride)
        h, c_bn2 = L.batch_norm_forward(
            h, p["bn2.gamma"], p["bn2.beta"], b["bn2.running_mean"], b["bn2.running_var"], mode
        )
        h, c_r2 = L.relu_forward(h)
        h, c_d = L.dropout_forward(h, self.cfg.dropout_rate, mode, rng)
        self._cache = (c_s, c_bn1, c_r1, c_t, c_bn2, c_r2, c_d)
        return h

    def backward(self, grad):
        c_s, c_bn1, c_r1, c_t, c_bn2, c_r2, c_d = L._need(self._cache)
        grads = {}
        g = L.dropout_backward(grad, c_d)
        g = L.relu_backward(g, c_r2)
        g, grads["bn2.gamma"], grads["bn2.beta"] = L.batch_norm_backward(g, c_bn2)
        g, grads["tconv"] = L.temporal_conv_backward(g, c_t)
        g = L.relu_backward(g, c_r1)
        g, grads["bn1.gamma"], grads["bn1.beta"] = L.batch_norm_backward(g, c_bn1)
        g, grads["theta"] = L.spatial_conv_backward(g, c_s)
        return g, grads


def block_forward(x, block: Block, c_hat, mode="eval", rng=None):
    return block.forward(x, c_hat, mode, rng)


class CgcnModel:
    """One stream: data BN, nine blocks, global average pooling and a linear classifier.

    ``forward`` returns logits; ``predict_proba`` applies the softmax.
    """

    def __init__(self, config: ModelConfig, propagation, stream: str = "A", seed: int = 0,
                 propagation_id: str = ""):
        self.config = config
        m = propagation.matrix if isinstance(propagation, PropagationMatrix) else propagation
        self.propagation = np.array(m, dtype=np.float64)
        if self.propagation.ndim != 2 or self.propagation.shape[0] != self.propagation.shape[1]:
            raise SchemaViolation("propagation matrix must be square")
        if not np.array_equal(self.propagation, self.propagation.T):
            raise SchemaViolation("propagation matrix must be symmetric")
        self.stream = stream
        self.propagation_id = propagation_id
        rng = np.random.default_rng(seed)
        cin = config.in_channels
        self.data_bn = {
            "gamma": np.ones(cin),
            "beta": np.zeros(cin),
            "running_mean": np.zeros(cin),
            "running_var": np.ones(cin),
        }
        self.blocks = [Block(cfg, rng, f"blocks.{i}") for i, cfg in enumerate(config.blocks())]
        c_last = config.channels[-1]
        self.fc_weight = rng.normal(0.0, np.sqrt(1.0 / c_last), size=(c_last, config.num_classes))
        self.fc_bias = np.zeros(config.num_classes)
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    @property
    def num_joints(self) -> int:
        return self.propagation.shape[0]

    def parameters(self) -> dict[str, np.ndarray]:
        """Trainable arrays by name; the arrays are live references."""
        out = {"data_bn.gamma": self.data_bn["gamma"], "data_bn.beta": self.data_bn["beta"]}
        for blk in self.blocks:
            for k, v in blk.params.items():
                out[f"{blk.prefix}.{k}"] = v
        out["fc.weight"] = self.fc_weight
        out["fc.bias"] = self.fc_bias
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out = {
            "data_bn.running_mean": self.data_bn["running_mean"],
            "data_bn.running_var": self.data_bn["running_var"],
        }
        for blk in self.blocks:
            for k, v in blk.buffers.items():
                out[f"{blk.prefix}.{k}"] = v
        return out

    def forward(self, x: np.ndarray, mode: str = "eval", rng=None) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 4 or x.shape[1] != self.config.in_channels or x.shape[3] != self.num_joints:
            raise SchemaViolation(
                f"expected input (batch, {self.config.in_channels}, frames, {self.num_joints}), got {x.shape}"
            )
        rng = np.random.default_rng(rng) if mode == "train" else None
        d = self.data_bn
        h, c_bn = L.batch_norm_forward(x, d["gamma"], d["beta"], d["running_mean"], d["running_var"], mode)
        for blk in self.blocks:
            h = blk.forward(h, self.propagation, mode, rng)
        pooled, c_pool = L.global_average_pool_forward(h)
        logits, c_fc = L.linear_forward(pooled, self.fc_weight, self.fc_bias)
        self._cache = (c_bn, c_pool, c_fc)
        return logits

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return L.softmax(self.forward(x, "eval"))

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        c_bn, c_pool, c_fc = L._need(self._cache)
        grads = {}
        g, grads["fc.weight"], grads["fc.bias"] = L.linear_backward(dlogits, c_fc, self.fc_weight)
        g = L.global_average_pool_backward(g, c_pool)
        for blk in reversed(self.blocks):
            g, bg = blk.backward(g)
            for k, v in bg.items():
                grads[f"{blk.prefix}.{k}"] = v
        g, grads["data_bn.gamma"], grads["data_bn.beta"] = L.batch_norm_backward(g, c_bn)
        self.grads = grads
        return g

    def copy(self) -> "CgcnModel":
        return model_from_dict(model_to_dict(self))


def model_forward(x: np.ndarray, model: CgcnModel, mode: str = "eval", rng=None) -> np.ndarray:
    """Class probabilities for a batch."""
    return L.softmax(model.forward(x, mode, rng))


@dataclass
class StreamScores:
    per_stream: dict[str, np.ndarray]
    fused: np.ndarray
    predicted: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.predicted is None:
            # argmax returns the first maximum, i.e. the lowest class index on ties
            self.predicted = np.argmax(self.fused, axis=-1)


def fuse(per_stream: Mapping[str, np.ndarray]) -> StreamScores:
    if not per_stream:
        raise ValueError("no streams to fuse")
    shapes = {v.shape for v in per_stream.values()}
    if len(shapes) != 1:
        raise StreamClassMismatch(f"streams disagree on score shape: {sorted(shapes)}")
    fused = None
    for name in sorted(per_stream):
        fused = per_stream[name].copy() if fused is None else fused + per_stream[name]
    return StreamScores(dict(per_stream), fused)


def four_stream_predict(x: np.ndarray, models: Mapping[str, CgcnModel]) -> StreamScores:
    """Eval-mode softmax scores of every stream and their sum."""
    classes = {m.config.num_classes for m in models.values()}
    if len(classes) > 1:
        raise StreamClassMismatch(f"streams disagree on class count: {sorted(classes)}")
    return fuse({name: m.predict_proba(x) for name, m in models.items()})


# checkpoints


def propagation_digest(matrix: np.ndarray, stream: str) -> str:
    h = hashlib.sha256(stream.encode())
    h.update(np.ascontiguousarray(matrix, dtype="<f8").tobytes())
    return h.hexdigest()


def _tensor(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": np.ravel(a).tolist()}


def _untensor(d: dict) -> np.ndarray:
    return np.array(d["data"], dtype=np.float64).reshape(d["shape"])


def model_to_dict(model: CgcnModel, extra: dict | None = None) -> dict:
    cfg = asdict(model.config)
    cfg["channels"] = list(cfg["channels"])
    cfg["strides"] = list(cfg["strides"])
    out = {
        "format": CHECKPOINT_FORMAT,
        "stream": model.stream,
        "config": cfg,
        "propagation": {
            "stream": model.stream,
            "sha256": propagation_digest(model.propagation, model.stream),
            "centrality_inputs": model.propagation_id,
            **_tensor(model.propagation),
        },
        "params": {k: _tensor(v) for k, v in model.parameters().items()},
        "buffers": {k: _tensor(v) for k, v in model.buffers().items()},
    }
    if extra:
        out["run"] = extra
    return out


def model_from_dict(data: dict) -> CgcnModel:
    if data.get("format") != CHECKPOINT_FORMAT:
        raise SchemaViolation("not a cgcn checkpoint")
    cfg = ModelConfig(**data["config"])
    prop = _untensor(data["propagation"])
    if propagation_digest(prop, data["stream"]) != data["propagation"]["sha256"]:
        raise SchemaViolation("checkpoint propagation matrix does not match its digest")
    model = CgcnModel(cfg, prop, data["stream"], propagation_id=data["propagation"].get("centrality_inputs", ""))
    for store, key in ((model.parameters(), "params"), (model.buffers(), "buffers")):
        if set(store) != set(data[key]):
            raise SchemaViolation(f"checkpoint {key} do not match the configuration")
        for name, arr in store.items():
            arr[...] = _untensor(data[key][name])
    return model


def save_checkpoint(model: CgcnModel, path: str | Path, extra: dict | None = None) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model, extra)) + "\n")


def load_checkpoint(path: str | Path) -> CgcnModel:
    path = Path(path)
    if not path.is_file():
        raise MissingCheckpoint(f"checkpoint {path} not found")
    return model_from_dict(json.loads(path.read_text()))
