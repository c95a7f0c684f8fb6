"""Dynamic int8 quantization for the network substrate.

Scheme: per-tensor affine. Weights are quantized once (static); layer
input activations are quantized per call from their own min/max
(dynamic). Accumulation is integer-exact int32 semantics; biases and
everything between layers stay float32.

quantize(x) = clamp(round(x / scale) + zero_point, -128, 127), rounding
half away from zero, so the round trip is off by at most scale / 2 for
any x inside the observed [min', max'] range (min' = min(min, 0),
max' = max(max, 0); the range always covers 0 so zero stays exact).

The integer accumulator holds sums of K products, each bounded by
255 * 255, so K <= 33000 keeps every partial sum below 2^31. We
evaluate the products in float64 (exact for integers below 2^53) to get
BLAS speed with bit-identical results to a pure int32 loop.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import modelio
from .errors import ArgumentError, ConfigError, NumericError
from .modelio import QTensor
from .nn import LayerSpec, ModelGraph, _im2col

MAX_REDUCE = 33000  # K * 255^2 < 2^31


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest, ties away from zero (unlike numpy's banker's rounding)."""
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def compute_qparams(x: np.ndarray) -> QuantParams:
    """Affine params covering [min(x, 0), max(x, 0)] with 256 levels."""
    x = np.asarray(x)
    if x.size == 0:
        raise ArgumentError("cannot compute quantization params of an empty tensor")
    lo = float(x.min())
    hi = float(x.max())
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ArgumentError("quantization range must be finite")
    lo, hi = min(lo, 0.0), max(hi, 0.0)
    if hi == lo:  # all zeros
        return QuantParams(1.0, 0)
    # zero point from the full-precision scale; the cast happens at the end
    scale = (hi - lo) / 255.0
    zp = int(round_half_away(np.asarray(-lo / scale))) - 128
    return QuantParams(float(scale), int(np.clip(zp, -128, 127)))


def quantize(x: np.ndarray, qp: QuantParams) -> np.ndarray:
    q = round_half_away(np.asarray(x, dtype=np.float64) / qp.scale) + qp.zero_point
    return np.clip(q, -128, 127).astype(np.int8)


def dequantize(q: np.ndarray, qp: QuantParams) -> np.ndarray:
    return ((q.astype(np.int32) - qp.zero_point) * np.float32(qp.scale)).astype(np.float32)


def quantize_tensor(x: np.ndarray) -> QTensor:
    qp = compute_qparams(x)
    return QTensor(quantize(x, qp), qp.scale, qp.zero_point)


def dequantize_tensor(t: QTensor) -> np.ndarray:
    return dequantize(t.data, QuantParams(t.scale, t.zero_point))


# ---------------------------------------------------------------------------
# integer kernels

def _exact_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Integer matmul with int32 accumulation semantics.

    Inputs are integer-valued arrays with |v| <= 255; float64 keeps every
    partial sum exact, and the reduction bound is checked by the callers.
    """
    return np.matmul(a.astype(np.float64), b.astype(np.float64))


def qdense(x: np.ndarray, qw: QTensor, bias: np.ndarray) -> np.ndarray:
    """Dense layer on float input with int8 weights and per-call input
    quantization. x: [B, K] or [K]; qw.data: [N, K]; returns float32."""
    squeeze = x.ndim == 1
    xb = np.atleast_2d(np.asarray(x, dtype=np.float32))
    k = xb.shape[1]
    if k != qw.data.shape[1]:
        raise ConfigError(f"qdense: input width {k} != weight width {qw.data.shape[1]}")
    if k > MAX_REDUCE:
        raise NumericError(f"qdense: reduction length {k} risks int32 overflow")
    qpx = compute_qparams(xb)
    qx = quantize(xb, qpx).astype(np.int32) - qpx.zero_point
    w = qw.data.astype(np.int32) - qw.zero_point
    acc = _exact_matmul(qx, w.T)
    y = (qpx.scale * qw.scale) * acc + bias.astype(np.float64)
    y = y.astype(np.float32)
    return y[0] if squeeze else y


def qconv2d(x: np.ndarray, qw: QTensor, bias: np.ndarray, spec: LayerSpec) -> np.ndarray:
    """conv2d on float input [B,C,H,W] or [C,H,W] with int8 weights."""
    squeeze = x.ndim == 3
    xb = np.asarray(x, dtype=np.float32)
    if squeeze:
        xb = xb[None]
    oc, ic, ks, _ = qw.data.shape
    if xb.shape[1] != ic:
        raise ConfigError(f"qconv2d: input channels {xb.shape[1]} != weight channels {ic}")
    kred = ic * ks * ks
    if kred > MAX_REDUCE:
        raise NumericError(f"qconv2d: reduction length {kred} risks int32 overflow")
    qpx = compute_qparams(xb)
    # zero pads map to the zero point, so pad after subtracting it
    qx = quantize(xb, qpx).astype(np.int32) - qpx.zero_point
    cols, (oh, ow) = _im2col(qx.astype(np.float64), ks, spec.stride, spec.pad)
    w = (qw.data.astype(np.int32) - qw.zero_point).reshape(oc, -1)
    acc = _exact_matmul(w, cols.reshape(xb.shape[0], kred, -1))
    y = (qpx.scale * qw.scale) * acc + bias.astype(np.float64)[:, None]
    y = y.reshape(xb.shape[0], oc, oh, ow).astype(np.float32)
    return y[0] if squeeze else y


# ---------------------------------------------------------------------------
# whole-model quantization

@dataclass
class QuantizedModel:
    """ModelGraph twin with int8 weights and float biases."""
    in_dims: tuple[int, ...]
    specs: tuple[LayerSpec, ...]
    qweights: dict[str, QTensor]
    biases: dict[str, np.ndarray]

    @property
    def out_dims(self) -> tuple[int, ...]:
        from .nn import _out_dims
        dims = self.in_dims
        for i, spec in enumerate(self.specs):
            dims = _out_dims(spec, dims, i)
        return dims


def quantize_model(model: ModelGraph) -> QuantizedModel:
    qweights, biases = {}, {}
    for i, spec in enumerate(model.specs):
        if spec.has_params():
            qweights[f"p{i}.weight"] = quantize_tensor(model.params[f"p{i}.weight"])
            biases[f"p{i}.bias"] = model.params[f"p{i}.bias"].copy()
    return QuantizedModel(model.in_dims, model.specs, qweights, biases)


def qforward(qm: QuantizedModel, x: np.ndarray) -> np.ndarray:
    """Forward pass mirroring nn.forward but with quantized dense/conv."""
    x = np.asarray(x, dtype=np.float32)
    if x.shape == qm.in_dims:
        xb, batched = x[None], False
    elif x.shape[1:] == qm.in_dims:
        xb, batched = x, True
    else:
        raise ConfigError(f"input dims {list(x.shape)} do not match model input {list(qm.in_dims)}")
    y = xb
    for i, spec in enumerate(qm.specs):
        k = spec.kind
        if k == "dense":
            y = qdense(y, qm.qweights[f"p{i}.weight"], qm.biases[f"p{i}.bias"])
        elif k == "conv2d":
            y = qconv2d(y, qm.qweights[f"p{i}.weight"], qm.biases[f"p{i}.bias"], spec)
        elif k == "relu":
            y = np.maximum(y, 0)
        elif k == "sigmoid":
            y = 1.0 / (1.0 + np.exp(-y))
        elif k == "flatten":
            y = y.reshape(y.shape[0], -1)
        elif k == "upsample2x":
            y = y.repeat(2, axis=2).repeat(2, axis=3)
        elif k == "reshape":
            y = y.reshape((y.shape[0],) + spec.dims)
        elif k == "crop2d":
            y = y[:, :, :spec.dims[0], :spec.dims[1]]
        else:
            raise ConfigError(f"unknown layer kind {k!r}")
    y = y.astype(np.float32, copy=False)
    return y if batched else y[0]


# ---------------------------------------------------------------------------
# serialization (same container as float models; weights are int8 tensors)

def pack_quantized(qm: QuantizedModel, prefix: str = "") -> dict:
    out: dict = {prefix + "__layers__": modelio._text_tensor(
        modelio.graph_text(qm.in_dims, qm.specs))}
    for name, qt in qm.qweights.items():
        out[prefix + name] = qt
    for name, b in qm.biases.items():
        out[prefix + name] = b
    return out


def unpack_quantized(tensors: dict, prefix: str = "") -> QuantizedModel:
    key = prefix + "__layers__"
    if key not in tensors:
        raise ArgumentError(f"model bundle is missing {key!r}")
    in_dims, specs = modelio.parse_graph_text(modelio._tensor_text(tensors[key]))
    qweights, biases = {}, {}
    for i, spec in enumerate(specs):
        if spec.has_params():
            wk, bk = f"p{i}.weight", f"p{i}.bias"
            w, b = tensors.get(prefix + wk), tensors.get(prefix + bk)
            if not isinstance(w, QTensor) or not isinstance(b, np.ndarray):
                raise ArgumentError(f"quantized bundle is missing layer {i} parameters")
            qweights[wk], biases[bk] = w, b
    return QuantizedModel(in_dims, specs, qweights, biases)


def save_quantized(path: str, models: dict[str, QuantizedModel],
                   extras: dict[str, float] | None = None) -> None:
    tensors: dict = {}
    for key, qm in models.items():
        tensors.update(pack_quantized(qm, key + "." if key else ""))
    extras = dict(extras or {})
    extras["quantized"] = 1.0
    for k, v in extras.items():
        tensors[f"meta.{k}"] = np.asarray([v], dtype=np.float32)
    modelio.write_oodm(path, tensors)


def load_quantized(path: str) -> tuple[dict[str, QuantizedModel], dict[str, float]]:
    tensors = modelio.read_oodm(path)
    prefixes = {n[:-len("__layers__")] for n in tensors if n.endswith("__layers__")}
    models = {}
    for prefix in sorted(prefixes):
        key = prefix[:-1] if prefix.endswith(".") else prefix
        models[key] = unpack_quantized(tensors, prefix)
    extras = {n[5:]: float(e[0]) for n, e in tensors.items()
              if n.startswith("meta.") and isinstance(e, np.ndarray)}
    return models, extras
