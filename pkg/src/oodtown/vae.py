"""Variational autoencoder for out-of-distribution detection on flow stacks.

A small convolutional VAE is trained on in-distribution flow stacks only.
At inference the reconstruction error of a stack (decoded from the posterior
mean, no sampling) is the OOD score; a quantile of the scores seen on held-out
ID data becomes the alarm threshold.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from . import modelio, nn, quant
from .errors import ArgumentError, NumericError, TrainingError
from .rng import sub_rng

DEFAULT_QUANTILE = 0.99


# ---------------------------------------------------------------------------
# configuration and model containers

@dataclasses.dataclass(frozen=True)
class VaeConfig:
    """Shape and training hyperparameters for one detector family."""
    in_dims: tuple[int, int, int] = (10, 60, 80)
    latent: int = 32
    beta: float = 1.0
    epochs: int = 40
    batch_size: int = 64
    lr: float = 1e-3
    optimizer: str = "adam"
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if len(self.in_dims) != 3 or any(int(d) < 1 for d in self.in_dims):
            raise ArgumentError(f"in_dims must be (channels, height, width), got {self.in_dims}")
        object.__setattr__(self, "in_dims", tuple(int(d) for d in self.in_dims))
        if self.latent < 2:
            raise ArgumentError(f"latent dim must be >= 2, got {self.latent}")
        if self.beta < 0:
            raise ArgumentError(f"beta must be >= 0, got {self.beta}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ArgumentError("epochs and batch_size must be >= 1")
        if not self.lr > 0:
            raise ArgumentError(f"learning rate must be > 0, got {self.lr}")
        if self.optimizer not in ("adam", "sgd"):
            raise ArgumentError(f"optimizer must be adam or sgd, got {self.optimizer!r}")


@dataclasses.dataclass(frozen=True)
class VaeModel:
    """Encoder producing [mu | logvar] and decoder mapping latents back."""
    encoder: nn.ModelGraph
    decoder: nn.ModelGraph
    latent: int

    def __post_init__(self):
        if self.encoder.out_dims != (2 * self.latent,):
            raise ArgumentError(
                f"encoder must emit 2*latent={2 * self.latent} features, "
                f"got {self.encoder.out_dims}")
        if self.decoder.in_dims != (self.latent,):
            raise ArgumentError(f"decoder must take {self.latent} latent features")
        if self.decoder.out_dims != self.encoder.in_dims:
            raise ArgumentError(
                f"decoder output {self.decoder.out_dims} must match "
                f"encoder input {self.encoder.in_dims}")

    @property
    def in_dims(self) -> tuple[int, ...]:
        return self.encoder.in_dims


@dataclasses.dataclass(frozen=True)
class QuantVae:
    """Int8-weight twin of VaeModel; activations stay float between layers."""
    encoder: quant.QuantizedModel
    decoder: quant.QuantizedModel
    latent: int

    @property
    def in_dims(self) -> tuple[int, ...]:
        return self.encoder.in_dims


@dataclasses.dataclass(frozen=True)
class OodVerdict:
    score: float
    threshold: float
    is_ood: bool


@dataclasses.dataclass(frozen=True)
class EvalReport:
    """Binary detection counts; OOD is the positive class."""
    tp: int
    fp: int
    tn: int
    fn: int
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, tp: int, fp: int, tn: int, fn: int) -> "EvalReport":
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        denom = precision + recall
        f1 = 2 * precision * recall / denom if denom else 0.0
        return cls(tp, fp, tn, fn, precision, recall, f1)


# ---------------------------------------------------------------------------
# model construction

def _half_up(n: int) -> int:
    return (n + 1) // 2


def build_vae(cfg: VaeConfig) -> VaeModel:
    """Untrained VAE sized for cfg.in_dims; weights seeded from cfg.seed."""
    ch, h, w = cfg.in_dims
    h4, w4 = _half_up(_half_up(h)), _half_up(_half_up(w))
    feat = 32 * h4 * w4
    enc_specs = (
        nn.conv2d(ch, 16, 3, 2, 1), nn.relu(),
        nn.conv2d(16, 32, 3, 2, 1), nn.relu(),
        nn.flatten(),
        nn.dense(feat, 128), nn.relu(),
        nn.dense(128, 2 * cfg.latent),
    )
    dec_specs = (
        nn.dense(cfg.latent, 128), nn.relu(),
        nn.dense(128, feat), nn.relu(),
        nn.reshape(32, h4, w4),
        nn.upsample2x(), nn.conv2d(32, 16, 3, 1, 1), nn.relu(),
        nn.upsample2x(), nn.conv2d(16, ch, 3, 1, 1),
        nn.crop2d(h, w),
    )
    rng = sub_rng(cfg.seed, "vae.init")
    encoder = nn.init_model(cfg.in_dims, enc_specs, rng)
    decoder = nn.init_model((cfg.latent,), dec_specs, rng)
    return VaeModel(encoder, decoder, cfg.latent)


# ---------------------------------------------------------------------------
# loss

def elbo_loss(x: np.ndarray, x_hat: np.ndarray, mu: np.ndarray,
              logvar: np.ndarray, beta: float = 1.0):
    """Gaussian-likelihood ELBO pieces: (total, recon, kl).

    recon is the mean squared error over every element; kl is the analytic
    KL(q(z|x) || N(0,I)) averaged over the batch; total = recon + beta*kl.
    """
    x = np.asarray(x, dtype=np.float32)
    x_hat = np.asarray(x_hat, dtype=np.float32)
    mu = np.asarray(mu, dtype=np.float32)
    logvar = np.asarray(logvar, dtype=np.float32)
    if x.shape != x_hat.shape:
        raise ArgumentError(f"shape mismatch: x {list(x.shape)} vs x_hat {list(x_hat.shape)}")
    if mu.shape != logvar.shape:
        raise ArgumentError("mu and logvar must have identical shapes")
    for arr, name in ((x, "x"), (x_hat, "x_hat"), (mu, "mu"), (logvar, "logvar")):
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite values in {name}")
    diff = x_hat.astype(np.float64) - x.astype(np.float64)
    recon = float(np.mean(diff * diff))
    mu64 = mu.astype(np.float64)
    lv64 = logvar.astype(np.float64)
    kl_per = -0.5 * np.sum(1.0 + lv64 - mu64 * mu64 - np.exp(lv64), axis=-1)
    kl = float(np.mean(kl_per))
    return recon + beta * kl, recon, kl


# ---------------------------------------------------------------------------
# training

def _split_heads(enc_out: np.ndarray, latent: int):
    return enc_out[..., :latent], enc_out[..., latent:]


def train_vae(stacks: np.ndarray, cfg: VaeConfig):
    """Fit the VAE on in-distribution stacks; returns (model, epoch_history).

    epoch_history is one (total, recon, kl) triple per epoch, averaged over
    samples. Sampling uses the reparameterization z = mu + sigma*eps with eps
    drawn from a stream seeded by cfg.seed, so runs are reproducible.
    """
    stacks = np.asarray(stacks, dtype=np.float32)
    if stacks.ndim != 4 or stacks.shape[0] == 0:
        raise ArgumentError("stacks must be a non-empty [N, channels, height, width] array")
    if stacks.shape[1:] != cfg.in_dims:
        raise ArgumentError(
            f"stack dims {list(stacks.shape[1:])} do not match config {list(cfg.in_dims)}")
    model = build_vae(cfg)
    enc, dec = model.encoder, model.decoder
    rng = sub_rng(cfg.seed, "vae.train")
    n = stacks.shape[0]
    opt_e: dict | None = None
    opt_d: dict | None = None
    history: list[tuple[float, float, float]] = []
    elem_per = float(np.prod(cfg.in_dims))
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        tot_sum = rec_sum = kl_sum = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            xb = stacks[idx]
            b = xb.shape[0]
            enc_out, enc_cache = nn.forward_cached(enc, xb)
            mu, logvar = _split_heads(enc_out, cfg.latent)
            logvar = np.clip(logvar, -12.0, 12.0)
            sigma = np.exp(0.5 * logvar)
            eps = rng.standard_normal(mu.shape).astype(np.float32)
            z = mu + sigma * eps
            x_hat, dec_cache = nn.forward_cached(dec, z)
            try:
                total, recon, kl = elbo_loss(xb, x_hat, mu, logvar, cfg.beta)
            except NumericError as exc:
                raise TrainingError(str(exc), epoch=epoch + 1) from exc
            if not math.isfinite(total):
                raise TrainingError(f"loss diverged to {total}", epoch=epoch + 1)
            tot_sum += total * b
            rec_sum += recon * b
            kl_sum += kl * b
            # d(recon)/d(x_hat) for MSE over batch and elements
            d_xhat = (2.0 / (b * elem_per)) * (x_hat - xb)
            dec_grads, dz = nn.backward(dec, dec_cache, d_xhat)
            d_mu = dz + (cfg.beta / b) * mu
            d_logvar = dz * eps * 0.5 * sigma + (cfg.beta * 0.5 / b) * (np.exp(logvar) - 1.0)
            d_enc_out = np.concatenate([d_mu, d_logvar], axis=1).astype(np.float32)
            enc_grads, _ = nn.backward(enc, enc_cache, d_enc_out)
            if cfg.optimizer == "adam":
                enc, opt_e = nn.adam_step(enc, enc_grads, cfg.lr, opt_e)
                dec, opt_d = nn.adam_step(dec, dec_grads, cfg.lr, opt_d)
            else:
                enc, opt_e = nn.sgd_step(enc, enc_grads, cfg.lr, cfg.momentum, opt_e)
                dec, opt_d = nn.sgd_step(dec, dec_grads, cfg.lr, cfg.momentum, opt_d)
        history.append((tot_sum / n, rec_sum / n, kl_sum / n))
    return VaeModel(enc, dec, cfg.latent), history


# ---------------------------------------------------------------------------
# scoring

def _encode_mean(model, stack: np.ndarray) -> np.ndarray:
    if isinstance(model, QuantVae):
        enc_out = quant.qforward(model.encoder, stack)
    else:
        enc_out = nn.forward(model.encoder, stack)
    return enc_out[..., :model.latent]


def _decode(model, z: np.ndarray) -> np.ndarray:
    if isinstance(model, QuantVae):
        return quant.qforward(model.decoder, z)
    return nn.forward(model.decoder, z)


def ood_score(model, stack: np.ndarray) -> float:
    """Mean squared reconstruction error of one stack, decoding z = mu.

    Deterministic (no sampling) and computed per sample, so the score never
    depends on what else sits in a batch.
    """
    stack = np.asarray(stack, dtype=np.float32)
    if stack.shape != tuple(model.in_dims):
        raise ArgumentError(
            f"stack dims {list(stack.shape)} do not match model input {list(model.in_dims)}")
    z = _encode_mean(model, stack)
    x_hat = _decode(model, z)
    diff = x_hat.astype(np.float64) - stack.astype(np.float64)
    return float(np.mean(diff * diff))


def ood_scores(model, stacks: np.ndarray) -> np.ndarray:
    """ood_score over a [N, ...] array, one sample at a time."""
    stacks = np.asarray(stacks, dtype=np.float32)
    if stacks.ndim != 4:
        raise ArgumentError("stacks must be [N, channels, height, width]")
    return np.array([ood_score(model, s) for s in stacks], dtype=np.float64)


def calibrate_threshold(id_scores, q: float = DEFAULT_QUANTILE) -> float:
    """Empirical quantile (linear interpolation) of in-distribution scores."""
    scores = np.asarray(id_scores, dtype=np.float64).ravel()
    if scores.size == 0:
        raise ArgumentError("cannot calibrate a threshold from zero scores")
    if not 0.0 < q <= 1.0:
        raise ArgumentError(f"quantile must be in (0, 1], got {q}")
    return float(np.quantile(scores, q, method="linear"))


def classify(model, stack: np.ndarray, threshold: float) -> OodVerdict:
    s = ood_score(model, stack)
    return OodVerdict(score=s, threshold=float(threshold), is_ood=s > threshold)


def evaluate_f1(verdicts, labels) -> EvalReport:
    """Score predicted OOD flags against ground truth; OOD is positive."""
    pred = np.asarray([v.is_ood if isinstance(v, OodVerdict) else v for v in verdicts],
                      dtype=bool)
    truth = np.asarray(labels, dtype=bool)
    if pred.shape != truth.shape:
        raise ArgumentError(f"{pred.size} verdicts vs {truth.size} labels")
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    tn = int(np.sum(~pred & ~truth))
    fn = int(np.sum(~pred & truth))
    return EvalReport.from_counts(tp, fp, tn, fn)


# ---------------------------------------------------------------------------
# quantization and persistence

def quantize_vae(model: VaeModel) -> QuantVae:
    return QuantVae(quant.quantize_model(model.encoder),
                    quant.quantize_model(model.decoder), model.latent)


def save_vae(path: str, model: VaeModel, threshold: float | None = None,
             extras: dict[str, float] | None = None) -> None:
    meta = dict(extras or {})
    meta["latent"] = float(model.latent)
    if threshold is not None:
        meta["threshold"] = float(threshold)
    modelio.save_models(path, {"enc": model.encoder, "dec": model.decoder}, meta)


def load_vae(path: str):
    """Returns (VaeModel | QuantVae, extras). Dispatches on the stored format."""
    raw = modelio.read_oodm(path)
    extras = {n[5:]: float(e[0]) for n, e in raw.items()
              if n.startswith("meta.") and isinstance(e, np.ndarray)}
    latent = int(extras.get("latent", 0))
    if latent < 2:
        raise ArgumentError(f"{path}: missing or bad meta.latent")
    if extras.get("quantized"):
        models, _ = quant.load_quantized(path)
        if "enc" not in models or "dec" not in models:
            raise ArgumentError(f"{path}: expected enc and dec models")
        return QuantVae(models["enc"], models["dec"], latent), extras
    models, _ = modelio.load_models(path)
    if "enc" not in models or "dec" not in models:
        raise ArgumentError(f"{path}: expected enc and dec models")
    return VaeModel(models["enc"], models["dec"], latent), extras


def save_quant_vae(path: str, model: QuantVae, threshold: float | None = None,
                   extras: dict[str, float] | None = None) -> None:
    meta = dict(extras or {})
    meta["latent"] = float(model.latent)
    if threshold is not None:
        meta["threshold"] = float(threshold)
    quant.save_quantized(path, {"enc": model.encoder, "dec": model.decoder}, meta)
