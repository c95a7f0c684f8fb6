"""Minimal float32 network substrate: dense / conv2d / relu / sigmoid /
flatten / upsample2x layers with manual backprop and momentum SGD.

Tensors are plain numpy float32 arrays in row-major order. Models are
immutable once built; training produces updated copies, so a built model
can be shared read-only across tasks.

Limitations (by design): conv2d supports stride 1 or 2 with zero padding
only; upsample2x is nearest-neighbor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError, TrainingError, UsageError

LAYER_KINDS = ("dense", "conv2d", "relu", "sigmoid", "flatten", "upsample2x",
               "reshape", "crop2d")


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a sequential graph.

    dense uses (in_features, out_features); conv2d uses (in_ch, out_ch,
    ksize, stride, pad); reshape/crop2d carry target dims. The remaining
    kinds have no parameters.
    """
    kind: str
    in_features: int = 0
    out_features: int = 0
    in_ch: int = 0
    out_ch: int = 0
    ksize: int = 0
    stride: int = 1
    pad: int = 0
    dims: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.kind == "dense" and (self.in_features < 1 or self.out_features < 1):
            raise ConfigError("dense layer needs in_features/out_features >= 1")
        if self.kind == "conv2d":
            if self.in_ch < 1 or self.out_ch < 1 or self.ksize < 1:
                raise ConfigError("conv2d layer needs in_ch/out_ch/ksize >= 1")
            if self.stride not in (1, 2):
                raise ConfigError("conv2d stride must be 1 or 2")
            if self.pad < 0:
                raise ConfigError("conv2d pad must be >= 0")
        if self.kind == "reshape" and (not self.dims or any(d < 1 for d in self.dims)):
            raise ConfigError("reshape layer needs positive target dims")
        if self.kind == "crop2d" and (len(self.dims) != 2 or any(d < 1 for d in self.dims)):
            raise ConfigError("crop2d layer needs target (height, width)")

    def has_params(self) -> bool:
        return self.kind in ("dense", "conv2d")


def dense(in_features: int, out_features: int) -> LayerSpec:
    return LayerSpec("dense", in_features=in_features, out_features=out_features)


def conv2d(in_ch: int, out_ch: int, ksize: int, stride: int = 1, pad: int = 0) -> LayerSpec:
    return LayerSpec("conv2d", in_ch=in_ch, out_ch=out_ch, ksize=ksize,
                     stride=stride, pad=pad)


def relu() -> LayerSpec:
    return LayerSpec("relu")


def sigmoid() -> LayerSpec:
    return LayerSpec("sigmoid")


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def upsample2x() -> LayerSpec:
    return LayerSpec("upsample2x")


def reshape(*dims: int) -> LayerSpec:
    return LayerSpec("reshape", dims=tuple(dims))


def crop2d(h: int, w: int) -> LayerSpec:
    return LayerSpec("crop2d", dims=(h, w))


def _out_dims(spec: LayerSpec, dims: tuple[int, ...], idx: int) -> tuple[int, ...]:
    """Output dims of one layer for unbatched input dims."""
    k = spec.kind
    if k == "dense":
        if len(dims) != 1 or dims[0] != spec.in_features:
            raise ConfigError(f"layer {idx} (dense): expected [{spec.in_features}], got {list(dims)}")
        return (spec.out_features,)
    if k == "conv2d":
        if len(dims) != 3 or dims[0] != spec.in_ch:
            raise ConfigError(f"layer {idx} (conv2d): expected [{spec.in_ch}, H, W], got {list(dims)}")
        _, h, w = dims
        oh = (h + 2 * spec.pad - spec.ksize) // spec.stride + 1
        ow = (w + 2 * spec.pad - spec.ksize) // spec.stride + 1
        if oh < 1 or ow < 1:
            raise ConfigError(f"layer {idx} (conv2d): kernel {spec.ksize} too large for input {h}x{w}")
        return (spec.out_ch, oh, ow)
    if k == "flatten":
        return (int(np.prod(dims)),)
    if k == "upsample2x":
        if len(dims) != 3:
            raise ConfigError(f"layer {idx} (upsample2x): expected [C, H, W], got {list(dims)}")
        return (dims[0], dims[1] * 2, dims[2] * 2)
    if k == "reshape":
        if int(np.prod(dims)) != int(np.prod(spec.dims)):
            raise ConfigError(f"layer {idx} (reshape): {list(dims)} has wrong element count "
                              f"for {list(spec.dims)}")
        return spec.dims
    if k == "crop2d":
        if len(dims) != 3 or dims[1] < spec.dims[0] or dims[2] < spec.dims[1]:
            raise ConfigError(f"layer {idx} (crop2d): cannot crop {list(dims)} to {list(spec.dims)}")
        return (dims[0], spec.dims[0], spec.dims[1])
    return dims  # relu / sigmoid


@dataclass
class ModelGraph:
    """Sequential layer stack plus named parameter tensors.

    Parameter names are ``p{i}.weight`` / ``p{i}.bias`` for layer index i.
    """
    in_dims: tuple[int, ...]
    specs: tuple[LayerSpec, ...]
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.in_dims = tuple(int(d) for d in self.in_dims)
        self.specs = tuple(self.specs)
        dims = self.in_dims
        for i, spec in enumerate(self.specs):
            dims = _out_dims(spec, dims, i)
        self._out = dims
        for i, spec in enumerate(self.specs):
            if spec.has_params():
                w, b = self.params.get(f"p{i}.weight"), self.params.get(f"p{i}.bias")
                if w is None or b is None:
                    raise ConfigError(f"layer {i} ({spec.kind}): missing parameters")
                if spec.kind == "dense":
                    want_w, want_b = (spec.out_features, spec.in_features), (spec.out_features,)
                else:
                    want_w = (spec.out_ch, spec.in_ch, spec.ksize, spec.ksize)
                    want_b = (spec.out_ch,)
                if w.shape != want_w or b.shape != want_b:
                    raise ConfigError(f"layer {i} ({spec.kind}): parameter shape mismatch")

    @property
    def out_dims(self) -> tuple[int, ...]:
        return self._out

    def param_names(self) -> list[str]:
        names = []
        for i, spec in enumerate(self.specs):
            if spec.has_params():
                names += [f"p{i}.weight", f"p{i}.bias"]
        return names

    def with_params(self, params: dict[str, np.ndarray]) -> "ModelGraph":
        return ModelGraph(self.in_dims, self.specs, params)

    def copy(self) -> "ModelGraph":
        return self.with_params({k: v.copy() for k, v in self.params.items()})


def init_model(in_dims, specs, rng: np.random.Generator) -> ModelGraph:
    """Build a graph with uniform(-a, a) weights, a = sqrt(6/(fan_in+fan_out)),
    and zero biases."""
    params: dict[str, np.ndarray] = {}
    for i, spec in enumerate(specs):
        if spec.kind == "dense":
            a = math.sqrt(6.0 / (spec.in_features + spec.out_features))
            params[f"p{i}.weight"] = rng.uniform(
                -a, a, size=(spec.out_features, spec.in_features)).astype(np.float32)
            params[f"p{i}.bias"] = np.zeros(spec.out_features, dtype=np.float32)
        elif spec.kind == "conv2d":
            fan_in = spec.in_ch * spec.ksize * spec.ksize
            fan_out = spec.out_ch * spec.ksize * spec.ksize
            a = math.sqrt(6.0 / (fan_in + fan_out))
            params[f"p{i}.weight"] = rng.uniform(
                -a, a, size=(spec.out_ch, spec.in_ch, spec.ksize, spec.ksize)).astype(np.float32)
            params[f"p{i}.bias"] = np.zeros(spec.out_ch, dtype=np.float32)
    return ModelGraph(tuple(in_dims), tuple(specs), params)


# ---------------------------------------------------------------------------
# conv helpers (batched, NCHW)

def _im2col(x: np.ndarray, k: int, s: int, p: int):
    """[B,C,H,W] -> ([B, C*k*k, OH*OW], (OH, OW))."""
    b, c, h, w = x.shape
    if p:
        x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    oh = (h + 2 * p - k) // s + 1
    ow = (w + 2 * p - k) // s + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, ::s, ::s]                      # [B,C,OH,OW,k,k]
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(b, c * k * k, oh * ow)
    return np.ascontiguousarray(cols), (oh, ow)


def _col2im(dcols: np.ndarray, x_shape, k: int, s: int, p: int) -> np.ndarray:
    """Scatter-add transpose of _im2col."""
    b, c, h, w = x_shape
    oh = (h + 2 * p - k) // s + 1
    ow = (w + 2 * p - k) // s + 1
    dcols = dcols.reshape(b, c, k, k, oh, ow)
    dxp = np.zeros((b, c, h + 2 * p, w + 2 * p), dtype=np.float32)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + s * oh:s, j:j + s * ow:s] += dcols[:, :, i, j]
    if p:
        return dxp[:, :, p:-p, p:-p]
    return dxp


def _layer_forward(spec: LayerSpec, x: np.ndarray, params, idx: int):
    """Returns (y, cache_entry). x is batched."""
    k = spec.kind
    if k == "dense":
        w, b = params[f"p{idx}.weight"], params[f"p{idx}.bias"]
        return x @ w.T + b, x
    if k == "conv2d":
        w, b = params[f"p{idx}.weight"], params[f"p{idx}.bias"]
        cols, (oh, ow) = _im2col(x, spec.ksize, spec.stride, spec.pad)
        y = np.matmul(w.reshape(spec.out_ch, -1), cols) + b[:, None]
        return y.reshape(x.shape[0], spec.out_ch, oh, ow), (x.shape, cols)
    if k == "relu":
        return np.maximum(x, 0), x
    if k == "sigmoid":
        y = 1.0 / (1.0 + np.exp(-x))
        return y, y
    if k == "flatten":
        return x.reshape(x.shape[0], -1), x.shape
    if k == "upsample2x":
        return x.repeat(2, axis=2).repeat(2, axis=3), x.shape
    if k == "reshape":
        return x.reshape((x.shape[0],) + spec.dims), x.shape
    if k == "crop2d":
        return x[:, :, :spec.dims[0], :spec.dims[1]], x.shape
    raise ConfigError(f"unknown layer kind {k!r}")


def _layer_backward(spec: LayerSpec, grad: np.ndarray, cache_entry, params, idx: int, grads):
    k = spec.kind
    if k == "dense":
        x = cache_entry
        w = params[f"p{idx}.weight"]
        grads[f"p{idx}.weight"] = (grad.T @ x).astype(np.float32)
        grads[f"p{idx}.bias"] = grad.sum(axis=0).astype(np.float32)
        return grad @ w
    if k == "conv2d":
        x_shape, cols = cache_entry
        w = params[f"p{idx}.weight"]
        b_, oc = grad.shape[0], spec.out_ch
        g = grad.reshape(b_, oc, -1)
        grads[f"p{idx}.weight"] = np.einsum(
            "bol,bkl->ok", g, cols, optimize=True).reshape(w.shape).astype(np.float32)
        grads[f"p{idx}.bias"] = g.sum(axis=(0, 2)).astype(np.float32)
        dcols = np.matmul(w.reshape(oc, -1).T, g)
        return _col2im(dcols, x_shape, spec.ksize, spec.stride, spec.pad)
    if k == "relu":
        return grad * (cache_entry > 0)
    if k == "sigmoid":
        y = cache_entry
        return grad * y * (1.0 - y)
    if k == "flatten":
        return grad.reshape(cache_entry)
    if k == "upsample2x":
        b_, c, h, w = cache_entry
        return grad.reshape(b_, c, h, 2, w, 2).sum(axis=(3, 5))
    if k == "reshape":
        return grad.reshape(cache_entry)
    if k == "crop2d":
        dx = np.zeros(cache_entry, dtype=np.float32)
        dx[:, :, :spec.dims[0], :spec.dims[1]] = grad
        return dx
    raise ConfigError(f"unknown layer kind {k!r}")


def _check_input(model: ModelGraph, x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float32)
    if x.shape == model.in_dims:
        return x[None], False
    if x.shape[1:] == model.in_dims:
        return x, True
    raise ConfigError(f"input dims {list(x.shape)} do not match model input {list(model.in_dims)}")


def forward(model: ModelGraph, x: np.ndarray) -> np.ndarray:
    """Run the graph. Accepts one sample shaped like in_dims or a batch with
    a leading axis. Pure: identical inputs give bitwise-identical outputs."""
    y, _ = forward_cached(model, x)
    return y


def forward_cached(model: ModelGraph, x: np.ndarray):
    """forward() that also returns the intermediates backward() needs."""
    xb, batched = _check_input(model, x)
    cache = []
    y = xb
    for i, spec in enumerate(model.specs):
        y, entry = _layer_forward(spec, y, model.params, i)
        cache.append(entry)
    y = y.astype(np.float32, copy=False)
    return (y if batched else y[0]), {"entries": cache, "batched": batched}


def backward(model: ModelGraph, cache, loss_grad: np.ndarray):
    """Backprop the loss gradient; returns ({param name: grad}, input grad)."""
    if not isinstance(cache, dict) or "entries" not in cache:
        raise UsageError("backward() needs the cache from forward_cached() on the same input")
    grad = np.asarray(loss_grad, dtype=np.float32)
    if not cache["batched"]:
        grad = grad[None]
    grads: dict[str, np.ndarray] = {}
    entries = cache["entries"]
    if len(entries) != len(model.specs):
        raise UsageError("cache does not match this model")
    for i in range(len(model.specs) - 1, -1, -1):
        grad = _layer_backward(model.specs[i], grad, entries[i], model.params, i, grads)
    grad = grad.astype(np.float32, copy=False)
    # paramless layers contribute no entries; every trainable param must be present
    for name in model.param_names():
        grads.setdefault(name, np.zeros_like(model.params[name]))
    return grads, (grad if cache["batched"] else grad[0])


def sgd_step(model: ModelGraph, grads: dict[str, np.ndarray], lr: float,
             momentum: float = 0.0, velocity: dict[str, np.ndarray] | None = None):
    """One SGD(+momentum) update. Returns (new model, velocity state)."""
    new_params = {}
    vel = {} if velocity is None else velocity
    new_vel = {}
    for name, p in model.params.items():
        g = grads.get(name)
        if g is None:
            new_params[name] = p
            new_vel[name] = vel.get(name, np.zeros_like(p))
            continue
        if g.shape != p.shape:
            raise ConfigError(f"gradient shape mismatch for {name}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in {name}")
        v = momentum * vel.get(name, np.zeros_like(p)) + g
        new_vel[name] = v.astype(np.float32)
        new_params[name] = (p - lr * v).astype(np.float32)
    return model.with_params(new_params), new_vel


def adam_step(model: ModelGraph, grads: dict[str, np.ndarray], lr: float,
              state: dict | None = None, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8):
    """One Adam update with bias correction. Returns (new model, state)."""
    if state is None:
        state = {"t": 0, "m": {}, "v": {}}
    t = state["t"] + 1
    m_st, v_st = state["m"], state["v"]
    new_params, new_m, new_v = {}, {}, {}
    for name, p in model.params.items():
        g = grads.get(name)
        if g is None:
            new_params[name] = p
            new_m[name] = m_st.get(name, np.zeros_like(p))
            new_v[name] = v_st.get(name, np.zeros_like(p))
            continue
        if g.shape != p.shape:
            raise ConfigError(f"gradient shape mismatch for {name}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in {name}")
        g64 = g.astype(np.float64)
        m = beta1 * m_st.get(name, np.zeros_like(p, dtype=np.float64)) + (1 - beta1) * g64
        v = beta2 * v_st.get(name, np.zeros_like(p, dtype=np.float64)) + (1 - beta2) * g64 * g64
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        new_m[name] = m
        new_v[name] = v
        new_params[name] = (p - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(np.float32)
    return model.with_params(new_params), {"t": t, "m": new_m, "v": new_v}


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {what}")
    return x
