"""Central finite-difference checks of every analytic backward pass."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from . import layers as L
from .net import Block, BlockConfig, CgcnModel, ModelConfig, DESK_CHANNELS, DEFAULT_STRIDES

THRESHOLD = 1e-4
STEP = 1e-5

LAYERS = (
    "spatial_conv",
    "temporal_conv",
    "batch_norm",
    "batch_norm_eval",
    "relu",
    "dropout_eval",
    "dropout_train",
    "pooling",
    "linear",
    "softmax_xent",
    "block",
    "model",
)


@dataclass
class LayerReport:
    layer: str
    max_rel_error: float
    shapes: list

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < THRESHOLD)


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / max(||a||, ||n||)``, zero when both vanish."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale < 1e-12:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def numeric_grad(f: Callable[[], float], x: np.ndarray, idx: Iterable, h: float = STEP) -> np.ndarray:
    out = []
    for i in idx:
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        out.append((fp - fm) / (2 * h))
    return np.array(out)


def _sample(shape, rng, limit):
    all_idx = list(np.ndindex(*shape))
    if limit is None or len(all_idx) <= limit:
        return all_idx
    pick = rng.choice(len(all_idx), size=limit, replace=False)
    return [all_idx[i] for i in sorted(pick)]


def _compare(f, tensors: dict, analytic: dict, rng, limit, sign: float, kinks=None) -> float:
    """Worst per-tensor relative error over sampled coordinates.

    With ``kinks`` (a callable returning the current ReLU pattern), coordinates
    whose +-h perturbation flips any ReLU are skipped: the central difference
    straddles a kink there and is not a derivative estimate.
    """
    worst = 0.0
    for name, arr in tensors.items():
        if kinks is None:
            idx = _sample(arr.shape, rng, limit)
            num = numeric_grad(f, arr, idx)
        else:
            f()
            base = kinks()
            idx, num = [], []
            order = _sample(arr.shape, rng, None)
            for k in rng.permutation(len(order)):
                i = order[k]
                old = arr[i]
                arr[i] = old + STEP
                fp, kp = f(), kinks()
                arr[i] = old - STEP
                fm, km = f(), kinks()
                arr[i] = old
                if kp != base or km != base:
                    continue
                idx.append(i)
                num.append((fp - fm) / (2 * STEP))
                if len(idx) == limit:
                    break
            f()
            num = np.array(num)
        if not idx:
            continue
        ana = np.array([analytic[name][i] for i in idx]) * sign
        worst = max(worst, rel_error(ana, num))
    return worst


def _relu_pattern(blocks):
    def pattern():
        return b"".join(np.packbits(blk._cache[j]).tobytes() for blk in blocks for j in (2, 5))

    return pattern


def _away_from_zero(x, margin=0.05):
    # keep pointwise kinks out of reach of the finite-difference step
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin + x, x)


def _random_graph(n, rng):
    c = np.zeros((n, n))
    for k in range(1, n):
        j = int(rng.integers(0, k))
        c[k, j] = c[j, k] = 1.0
    c += np.eye(n)
    return c + rng.uniform(0, 0.5, size=(n, n)) * (c + c.T > 0)


def check_layer(layer: str, rng: np.random.Generator, sign: float = 1.0, limit: int | None = 40):
    """Max relative error for one random instance of ``layer``; ``sign=-1`` corrupts the analytic side."""
    b = int(rng.integers(2, 4))
    c = int(rng.integers(1, 5))
    t = int(rng.integers(5, 10))
    n = int(rng.integers(2, 6))
    x = rng.normal(size=(b, c, t, n))
    shape = (b, c, t, n)

    if layer == "spatial_conv":
        cout = int(rng.integers(1, 5))
        prop = _random_graph(n, rng)
        prop = (prop + prop.T) / 2
        theta = rng.normal(size=(c, cout))
        r = rng.normal(size=(b, cout, t, n))
        out, cache = L.spatial_conv_forward(x, prop, theta)
        dx, dtheta = L.spatial_conv_backward(r, cache)
        f = lambda: float(np.sum(L.spatial_conv_forward(x, prop, theta)[0] * r))
        return _compare(f, {"x": x, "theta": theta}, {"x": dx, "theta": dtheta}, rng, limit, sign), shape

    if layer == "temporal_conv":
        cout = int(rng.integers(1, 5))
        k = int(rng.integers(1, min(t, 5) + 1))
        stride = int(rng.integers(1, 3))
        w = rng.normal(size=(cout, c, k))
        out, cache = L.temporal_conv_forward(x, w, stride)
        r = rng.normal(size=out.shape)
        dx, dw = L.temporal_conv_backward(r, cache)
        f = lambda: float(np.sum(L.temporal_conv_forward(x, w, stride)[0] * r))
        return _compare(f, {"x": x, "w": w}, {"x": dx, "w": dw}, rng, limit, sign), shape + (k, stride)

    if layer in ("batch_norm", "batch_norm_eval"):
        mode = "train" if layer == "batch_norm" else "eval"
        gamma = rng.uniform(0.5, 1.5, size=c)
        beta = rng.normal(size=c)
        rm, rv = rng.normal(size=c), rng.uniform(0.5, 2, size=c)
        r = rng.normal(size=shape)

        def run():
            return L.batch_norm_forward(x, gamma, beta, rm.copy(), rv.copy(), mode)

        out, cache = run()
        dx, dg, db = L.batch_norm_backward(r, cache)
        f = lambda: float(np.sum(run()[0] * r))
        tensors = {"x": x, "gamma": gamma, "beta": beta}
        return _compare(f, tensors, {"x": dx, "gamma": dg, "beta": db}, rng, limit, sign), shape

    if layer == "relu":
        x = _away_from_zero(x)
        r = rng.normal(size=shape)
        _, mask = L.relu_forward(x)
        dx = L.relu_backward(r, mask)
        f = lambda: float(np.sum(L.relu_forward(x)[0] * r))
        return _compare(f, {"x": x}, {"x": dx}, rng, limit, sign), shape

    if layer in ("dropout_eval", "dropout_train"):
        mode = "eval" if layer == "dropout_eval" else "train"
        seed = int(rng.integers(1 << 31))
        r = rng.normal(size=shape)
        _, mask = L.dropout_forward(x, 0.5, mode, seed)
        dx = L.dropout_backward(r, mask)
        f = lambda: float(np.sum(L.dropout_forward(x, 0.5, mode, seed)[0] * r))
        return _compare(f, {"x": x}, {"x": dx}, rng, limit, sign), shape

    if layer == "pooling":
        r = rng.normal(size=(b, c))
        _, cache = L.global_average_pool_forward(x)
        dx = L.global_average_pool_backward(r, cache)
        f = lambda: float(np.sum(L.global_average_pool_forward(x)[0] * r))
        return _compare(f, {"x": x}, {"x": dx}, rng, limit, sign), shape

    if layer == "linear":
        k = int(rng.integers(2, 6))
        xin = rng.normal(size=(b, c))
        w, bias = rng.normal(size=(c, k)), rng.normal(size=k)
        r = rng.normal(size=(b, k))
        _, cache = L.linear_forward(xin, w, bias)
        dx, dw, dbias = L.linear_backward(r, cache, w)
        f = lambda: float(np.sum(L.linear_forward(xin, w, bias)[0] * r))
        tensors = {"x": xin, "w": w, "b": bias}
        return _compare(f, tensors, {"x": dx, "w": dw, "b": dbias}, rng, limit, sign), (b, c, k)

    if layer == "softmax_xent":
        k = int(rng.integers(2, 8))
        logits = rng.normal(size=(b, k)) * 3
        labels = rng.integers(0, k, size=b)
        _, grad = L.softmax_cross_entropy(logits, labels)
        f = lambda: L.softmax_cross_entropy(logits, labels)[0]
        return _compare(f, {"logits": logits}, {"logits": grad}, rng, None, sign), (b, k)

    if layer == "block":
        cout = int(rng.integers(2, 5))
        k = int(rng.integers(1, min(t, 5) + 1))
        stride = int(rng.integers(1, 3))
        blk = Block(BlockConfig(c, cout, k, stride, 0.5), rng, "block")
        prop = _random_graph(n, rng)
        prop = (prop + prop.T) / 2
        seed = int(rng.integers(1 << 31))

        def run():
            saved = {key: v.copy() for key, v in blk.buffers.items()}
            out = blk.forward(x, prop, "train", seed)
            for key, v in saved.items():
                blk.buffers[key][...] = v
            return out

        r = rng.normal(size=run().shape)
        run()
        dx, grads = blk.backward(r)
        f = lambda: float(np.sum(run() * r))
        tensors = {"x": x, **blk.params}
        return _compare(f, tensors, {"x": dx, **grads}, rng, 12, sign, _relu_pattern([blk])), shape + (cout, k, stride)

    if layer == "model":
        return check_model(rng, sign)

    raise KeyError(f"unknown layer {layer!r}")


def check_model(rng: np.random.Generator, sign: float = 1.0, temporal_kernel: int = 5):
    """Full nine-block desk model in train mode, loss = softmax cross-entropy."""
    b = 2
    n = int(rng.integers(3, 7))
    t = 4 * temporal_kernel + int(rng.integers(0, 8))
    k = int(rng.integers(2, 5))
    cin = int(rng.integers(2, 7))
    prop = _random_graph(n, rng)
    prop = (prop + prop.T) / 2
    cfg = ModelConfig(cin, k, DESK_CHANNELS, DEFAULT_STRIDES, temporal_kernel, 0.5)
    model = CgcnModel(cfg, prop, "check", seed=int(rng.integers(1 << 31)))
    x = rng.normal(size=(b, cin, t, n))
    labels = rng.integers(0, k, size=b)
    seed = int(rng.integers(1 << 31))
    buffers = {key: v.copy() for key, v in model.buffers().items()}

    def loss():
        logits = model.forward(x, "train", seed)
        for key, v in buffers.items():
            model.buffers()[key][...] = v
        return L.softmax_cross_entropy(logits, labels)

    _, dlogits = loss()
    dx = model.backward(dlogits)
    f = lambda: loss()[0]
    tensors = {"x": x, **model.parameters()}
    grads = {"x": dx, **model.grads}
    return _compare(f, tensors, grads, rng, 4, sign, _relu_pattern(model.blocks)), (b, cin, t, n)


def run_gradcheck(layers: Iterable[str] = LAYERS, shapes: int = 5, seed: int = 0,
                  negate: Iterable[str] = ()) -> list[LayerReport]:
    negate = set(negate)
    reports = []
    for layer in layers:
        rng = np.random.default_rng([seed, LAYERS.index(layer)])
        worst, seen = 0.0, []
        for _ in range(shapes if layer != "model" else max(1, shapes // 2)):
            err, shp = check_layer(layer, rng, -1.0 if layer in negate else 1.0)
            worst = max(worst, err)
            seen.append(list(shp))
        reports.append(LayerReport(layer, worst, seen))
    return reports
