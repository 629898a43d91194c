"""Tiny slot autoencoder trained with the three-part loss.

Encoder: a per-patch linear embedder, a stack of slot-query cross-attention
mixing layers with per-slot feed-forward updates, then per-slot mean and
log-variance heads.  Decoder: the cross-attention decoder from the attention
module.  Loss: reconstruction + beta * KL to a unit Gaussian + alpha *
attention overlap.  Everything is numpy with hand-written reverse-mode
gradients so the gradient path is fully inspectable and testable against
finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .attention import (
    CrossAttentionLayer,
    PixelHead,
    aggregate_attention,
    cross_attention_forward,
    decoder_backward,
    l_interact,
    l_interact_grad,
    positional_query_inputs,
    softmax_rows,
)

LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0
DIVERGENCE_LIMIT = 1e6


class TrainingDiverged(RuntimeError):
    """Raised when the total loss blows past the divergence limit; carries
    the log collected so far."""

    def __init__(self, message: str, log: list):
        super().__init__(message)
        self.log = log


@dataclass
class ModelConfig:
    height: int = 16
    width: int = 16
    channels: int = 3
    patch: int = 4
    n_slots: int = 3
    slot_dim: int = 8
    d_embed: int = 32
    d_ff: int = 32
    enc_layers: int = 1
    dec_d_q: int = 16
    dec_d_o: int = 12
    dec_heads: int = 1
    dec_layers: int = 1
    dec_hidden: int = 24
    scaling: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.height % self.patch or self.width % self.patch:
            raise ValueError("patch size must tile the image")
        if self.dec_d_q % self.dec_heads:
            raise ValueError("head count must divide the decoder token width")

    @property
    def n_patches(self) -> int:
        return (self.height // self.patch) * (self.width // self.patch)

    @property
    def n_pixels(self) -> int:
        return self.height * self.width

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        return cls(**obj)


@dataclass
class TrainConfig:
    alpha: float = 0.05
    beta: float = 0.05
    lr: float = 5e-4
    iterations: int = 2000
    batch_size: int = 16
    warmup: int = 1000
    seed: int = 0
    optimizer: str = "adam"
    # stability levers, default off
    lr_drop_iter: int | None = None
    lr_drop_factor: float = 1.0
    rec_weight: float = 1.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("loss weights must be non-negative")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be adam or sgd")

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        return cls(**obj)


@dataclass
class LossBreakdown:
    rec: float
    kl: float
    interact: float
    total: float

    def as_row(self) -> tuple[float, float, float, float]:
        return (self.rec, self.kl, self.interact, self.total)


@dataclass
class EncoderMixLayer:
    W_Q: np.ndarray
    W_K: np.ndarray
    W_V: np.ndarray
    F1: np.ndarray
    f1: np.ndarray
    F2: np.ndarray
    f2: np.ndarray


@dataclass
class SlotAutoencoder:
    """Parameter container.  parameters() exposes the trainable arrays by
    name as live references; fixed buffers (patch positions, decoder query
    inputs) stay out of it."""

    config: ModelConfig
    embed_W: np.ndarray
    embed_b: np.ndarray
    patch_pos: np.ndarray
    slot_queries: np.ndarray
    enc_layers: list[EncoderMixLayer]
    W_mu: np.ndarray
    b_mu: np.ndarray
    W_lv: np.ndarray
    b_lv: np.ndarray
    dec_layers: list[CrossAttentionLayer]
    dec_head: PixelHead

    def parameters(self) -> dict[str, np.ndarray]:
        out = {"embed_W": self.embed_W, "embed_b": self.embed_b,
               "slot_queries": self.slot_queries}
        for i, ly in enumerate(self.enc_layers):
            for nm in ("W_Q", "W_K", "W_V", "F1", "f1", "F2", "f2"):
                out[f"enc{i}_{nm}"] = getattr(ly, nm)
        out.update({"W_mu": self.W_mu, "b_mu": self.b_mu,
                    "W_lv": self.W_lv, "b_lv": self.b_lv})
        for i, ly in enumerate(self.dec_layers):
            for nm in ("W_K", "W_V", "W_Q"):
                out[f"dec{i}_{nm}"] = getattr(ly, nm)
        for nm in ("W1", "b1", "W2", "b2"):
            out[f"head_{nm}"] = getattr(self.dec_head, nm)
        return out

    def set_parameters(self, values: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(values) != set(params):
            raise ValueError("parameter name mismatch")
        for k, v in values.items():
            arr = np.asarray(v, dtype=float)
            if arr.shape != params[k].shape:
                raise ValueError(f"shape mismatch for {k}")
            params[k][...] = arr


def build_autoencoder(config: ModelConfig) -> SlotAutoencoder:
    rng = np.random.default_rng(config.seed)
    patch_len = config.patch * config.patch * config.channels
    d_e = config.d_embed

    def w(shape, fan_in):
        return rng.normal(scale=1.0 / math.sqrt(fan_in), size=shape)

    enc = [
        EncoderMixLayer(
            W_Q=w((d_e, d_e), d_e), W_K=w((d_e, d_e), d_e), W_V=w((d_e, d_e), d_e),
            F1=w((config.d_ff, d_e), d_e), f1=np.zeros(config.d_ff),
            F2=w((d_e, config.d_ff), config.d_ff), f2=np.zeros(d_e),
        )
        for _ in range(config.enc_layers)
    ]
    dec_layers = []
    for li in range(config.dec_layers):
        in_dim = config.dec_d_o if li == 0 else config.dec_d_q
        dec_layers.append(
            CrossAttentionLayer(
                W_K=w((config.dec_d_q, config.slot_dim), config.slot_dim),
                W_V=w((config.dec_d_q, config.slot_dim), config.slot_dim),
                W_Q=w((config.dec_d_q, in_dim), in_dim),
                query_inputs=positional_query_inputs(
                    config.height, config.width, config.dec_d_o,
                    rng_seed=config.seed + 7,
                ) if li == 0 else None,
                scaling=config.scaling,
                n_heads=config.dec_heads,
            )
        )
    head = PixelHead(
        W1=w((config.dec_hidden, config.dec_d_q), config.dec_d_q),
        b1=np.zeros(config.dec_hidden),
        W2=w((config.channels, config.dec_hidden), config.dec_hidden),
        b2=np.zeros(config.channels),
    )
    # fixed sinusoidal patch positions so the mixer can tell patches apart
    n_p = config.n_patches
    pos = positional_query_inputs(config.height // config.patch,
                                  config.width // config.patch,
                                  d_e, rng_seed=config.seed + 13)
    return SlotAutoencoder(
        config=config,
        embed_W=w((d_e, patch_len), patch_len),
        embed_b=np.zeros(d_e),
        patch_pos=pos[:n_p],
        slot_queries=rng.normal(scale=0.5, size=(config.n_slots, d_e)),
        enc_layers=enc,
        W_mu=w((config.slot_dim, d_e), d_e),
        b_mu=np.zeros(config.slot_dim),
        W_lv=w((config.slot_dim, d_e), d_e),
        b_lv=np.zeros(config.slot_dim),
        dec_layers=dec_layers,
        dec_head=head,
    )


def _patchify(model: SlotAutoencoder, images: np.ndarray) -> np.ndarray:
    c = model.config
    B = images.shape[0]
    x = images.reshape(B, c.height // c.patch, c.patch, c.width // c.patch, c.patch, c.channels)
    return x.transpose(0, 1, 3, 2, 4, 5).reshape(B, c.n_patches, -1)


def encode(model: SlotAutoencoder, images: np.ndarray, with_cache: bool = False):
    """Images (B, H, W, C) to per-slot (mu, logvar), logvar clamped."""
    images = np.asarray(images, dtype=float)
    if images.ndim == 3:
        images = images[None]
    c = model.config
    if images.shape[1:] != (c.height, c.width, c.channels):
        raise ValueError("image shape does not match the model")
    patches = _patchify(model, images)
    T = patches @ model.embed_W.T + model.embed_b + model.patch_pos
    B = T.shape[0]
    S = np.broadcast_to(model.slot_queries, (B,) + model.slot_queries.shape).copy()
    scale = 1.0 / math.sqrt(c.d_embed)
    cache = {"patches": patches, "T": T, "layers": []}
    for ly in model.enc_layers:
        Q = S @ ly.W_Q.T
        Kt = T @ ly.W_K.T
        Vt = T @ ly.W_V.T
        logits = np.einsum("bke,bne->bkn", Q, Kt) * scale
        A = softmax_rows(logits)
        mix = np.einsum("bkn,bne->bke", A, Vt)
        S1 = S + mix
        Hpre = S1 @ ly.F1.T + ly.f1
        H = np.tanh(Hpre)
        S_out = S1 + H @ ly.F2.T + ly.f2
        cache["layers"].append(
            {"S_in": S, "Q": Q, "K": Kt, "V": Vt, "A": A, "S1": S1, "H": H}
        )
        S = S_out
    cache["S_final"] = S
    mu = S @ model.W_mu.T + model.b_mu
    lv_raw = S @ model.W_lv.T + model.b_lv
    lv = np.clip(lv_raw, LOGVAR_MIN, LOGVAR_MAX)
    cache["lv_inside"] = (lv_raw > LOGVAR_MIN) & (lv_raw < LOGVAR_MAX)
    if with_cache:
        return mu, lv, cache
    return mu, lv


def _encoder_backward(model: SlotAutoencoder, cache: dict,
                      g_mu: np.ndarray, g_lv: np.ndarray) -> dict[str, np.ndarray]:
    c = model.config
    grads: dict[str, np.ndarray] = {}
    S_final = cache["S_final"]
    g_lv = g_lv * cache["lv_inside"]
    grads["W_mu"] = np.einsum("bks,bke->se", g_mu, S_final)
    grads["b_mu"] = np.sum(g_mu, axis=(0, 1))
    grads["W_lv"] = np.einsum("bks,bke->se", g_lv, S_final)
    grads["b_lv"] = np.sum(g_lv, axis=(0, 1))
    gS = g_mu @ model.W_mu + g_lv @ model.W_lv

    T = cache["T"]
    gT = np.zeros_like(T)
    scale = 1.0 / math.sqrt(c.d_embed)
    for i in range(len(model.enc_layers) - 1, -1, -1):
        ly = model.enc_layers[i]
        lc = cache["layers"][i]
        gH = gS @ ly.F2
        gHpre = gH * (1.0 - lc["H"] ** 2)
        grads[f"enc{i}_F2"] = np.einsum("bke,bkf->ef", gS, lc["H"])
        grads[f"enc{i}_f2"] = np.sum(gS, axis=(0, 1))
        grads[f"enc{i}_F1"] = np.einsum("bkf,bke->fe", gHpre, lc["S1"])
        grads[f"enc{i}_f1"] = np.sum(gHpre, axis=(0, 1))
        gS1 = gS + gHpre @ ly.F1
        gmix = gS1
        gA = np.einsum("bke,bne->bkn", gmix, lc["V"])
        gV = np.einsum("bkn,bke->bne", lc["A"], gmix)
        A = lc["A"]
        g_logits = A * (gA - np.sum(gA * A, axis=-1, keepdims=True))
        g_logits = g_logits * scale
        gQ = np.einsum("bkn,bne->bke", g_logits, lc["K"])
        gK = np.einsum("bkn,bke->bne", g_logits, lc["Q"])
        grads[f"enc{i}_W_Q"] = np.einsum("bke,bkd->ed", gQ, lc["S_in"])
        grads[f"enc{i}_W_K"] = np.einsum("bne,bnd->ed", gK, T)
        grads[f"enc{i}_W_V"] = np.einsum("bne,bnd->ed", gV, T)
        gT += gK @ ly.W_K + gV @ ly.W_V
        gS = gS1 + gQ @ ly.W_Q
    grads["slot_queries"] = np.sum(gS, axis=0)
    grads["embed_W"] = np.einsum("bne,bnl->el", gT, cache["patches"])
    grads["embed_b"] = np.sum(gT, axis=(0, 1))
    return grads


def kl_to_unit_gaussian(mu: np.ndarray, logvar: np.ndarray) -> float:
    """Mean over the batch of the summed per-dimension KL(N(mu, sigma^2) ||
    N(0, 1)); zero exactly at mu = 0, logvar = 0."""
    var = np.exp(logvar)
    per_example = 0.5 * np.sum(mu**2 + var - 1.0 - logvar, axis=tuple(range(1, mu.ndim)))
    return float(np.mean(per_example))


def _loss_forward(model: SlotAutoencoder, batch: np.ndarray, config: TrainConfig,
                  noise: np.ndarray, alpha_scale: float):
    mu, lv, enc_cache = encode(model, batch, with_cache=True)
    sigma = np.exp(0.5 * lv)
    z = mu + sigma * noise
    pixels, attn, dec_cache = cross_attention_forward(
        model.dec_layers, model.dec_head, z, with_cache=True
    )
    B = batch.shape[0]
    target = batch.reshape(B, -1, model.config.channels)
    resid = pixels - target
    rec = float(np.mean(resid**2))
    kl = kl_to_unit_gaussian(mu, lv)
    A_sum = aggregate_attention(attn).values
    interact = l_interact(A_sum)
    alpha_eff = config.alpha * alpha_scale
    total = config.rec_weight * rec + alpha_eff * interact + config.beta * kl
    breakdown = LossBreakdown(rec=rec, kl=kl, interact=interact, total=float(total))
    state = {
        "mu": mu, "lv": lv, "sigma": sigma, "z": z, "noise": noise,
        "resid": resid, "A_sum": A_sum, "enc_cache": enc_cache,
        "dec_cache": dec_cache, "alpha_eff": alpha_eff,
    }
    return breakdown, state


def _draw_noise(model: SlotAutoencoder, batch_size: int, rng: np.random.Generator):
    c = model.config
    return rng.standard_normal((batch_size, c.n_slots, c.slot_dim))


def loss_disent(model: SlotAutoencoder, batch: np.ndarray, config: TrainConfig,
                rng: np.random.Generator, noise: np.ndarray | None = None,
                alpha_scale: float = 1.0) -> LossBreakdown:
    """Three-part loss on one batch with reparameterized sampling.  noise
    overrides the rng draw so the stochastic objective can be pinned."""
    batch = np.asarray(batch, dtype=float)
    if batch.ndim == 3:
        batch = batch[None]
    if noise is None:
        noise = _draw_noise(model, batch.shape[0], rng)
    breakdown, _ = _loss_forward(model, batch, config, noise, alpha_scale)
    if not np.isfinite(breakdown.total):
        raise FloatingPointError(
            f"non-finite loss: rec={breakdown.rec} kl={breakdown.kl} "
            f"interact={breakdown.interact}"
        )
    return breakdown


def loss_and_gradients(model: SlotAutoencoder, batch: np.ndarray, config: TrainConfig,
                       rng: np.random.Generator | None = None,
                       noise: np.ndarray | None = None,
                       alpha_scale: float = 1.0):
    """Loss plus exact reverse-mode gradients for every trainable parameter,
    under the same fixed noise draw as the loss."""
    batch = np.asarray(batch, dtype=float)
    if batch.ndim == 3:
        batch = batch[None]
    if noise is None:
        if rng is None:
            raise ValueError("need an rng when noise is not supplied")
        noise = _draw_noise(model, batch.shape[0], rng)
    breakdown, st = _loss_forward(model, batch, config, noise, alpha_scale)
    if not np.isfinite(breakdown.total):
        raise FloatingPointError("non-finite loss before backward pass")

    B = batch.shape[0]
    g_pixels = config.rec_weight * 2.0 * st["resid"] / st["resid"].size
    g_attn = st["alpha_eff"] * l_interact_grad(st["A_sum"]) if st["alpha_eff"] != 0 else None
    g_z, dec_grads, head_grads = decoder_backward(
        model.dec_layers, model.dec_head, st["dec_cache"], g_pixels, g_attn
    )
    mu, sigma, noise_arr, lv = st["mu"], st["sigma"], st["noise"], st["lv"]
    g_mu = g_z + config.beta * mu / B
    g_lv = g_z * noise_arr * sigma * 0.5 + config.beta * 0.5 * (sigma**2 - 1.0) / B
    grads = _encoder_backward(model, st["enc_cache"], g_mu, g_lv)
    for i, d in enumerate(dec_grads):
        for nm, g in d.items():
            grads[f"dec{i}_{nm}"] = g
    for nm, g in head_grads.items():
        grads[f"head_{nm}"] = g
    params = model.parameters()
    for k in params:
        if grads[k].shape != params[k].shape:
            raise ValueError(f"gradient shape mismatch for {k}")
    return breakdown, grads


def gradients(model: SlotAutoencoder, batch: np.ndarray, config: TrainConfig,
              rng: np.random.Generator | None = None,
              noise: np.ndarray | None = None,
              alpha_scale: float = 1.0) -> dict[str, np.ndarray]:
    _, g = loss_and_gradients(model, batch, config, rng, noise, alpha_scale)
    return g


def train(model: SlotAutoencoder, dataset: np.ndarray, config: TrainConfig):
    """Seeded training loop with linear alpha warmup and an adaptive
    per-parameter step.  Returns (model, per-iteration LossBreakdown list);
    aborts with the partial log if the loss exceeds the divergence limit.
    """
    dataset = np.asarray(dataset, dtype=float)
    if dataset.ndim == 3:
        dataset = dataset[None]
    if dataset.shape[0] == 0:
        raise ValueError("dataset must be non-empty")
    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    m1 = {k: np.zeros_like(v) for k, v in params.items()}
    m2 = {k: np.zeros_like(v) for k, v in params.items()}
    log: list[LossBreakdown] = []
    b1, b2, eps = 0.9, 0.999, 1e-8
    for it in range(config.iterations):
        idx = rng.integers(0, dataset.shape[0], size=min(config.batch_size, dataset.shape[0]))
        batch = dataset[idx]
        alpha_scale = min(1.0, (it + 1) / config.warmup) if config.warmup > 0 else 1.0
        noise = _draw_noise(model, batch.shape[0], rng)
        breakdown, grads = loss_and_gradients(model, batch, config, noise=noise,
                                              alpha_scale=alpha_scale)
        log.append(breakdown)
        if breakdown.total > DIVERGENCE_LIMIT:
            raise TrainingDiverged(f"loss {breakdown.total:.3e} at iteration {it}", log)
        lr = config.lr
        if config.lr_drop_iter is not None and it >= config.lr_drop_iter:
            lr = lr * config.lr_drop_factor
        if config.optimizer == "adam":
            t = it + 1
            for k, p in params.items():
                m1[k] = b1 * m1[k] + (1 - b1) * grads[k]
                m2[k] = b2 * m2[k] + (1 - b2) * grads[k] ** 2
                mhat = m1[k] / (1 - b1**t)
                vhat = m2[k] / (1 - b2**t)
                p -= lr * mhat / (np.sqrt(vhat) + eps)
        else:
            for k, p in params.items():
                p -= lr * grads[k]
    return model, log


def reconstruct(model: SlotAutoencoder, images: np.ndarray, use_mean: bool = True,
                rng: np.random.Generator | None = None):
    """Deterministic reconstruction (posterior mean by default); returns
    (pixels, attention, z)."""
    mu, lv = encode(model, images)
    if use_mean:
        z = mu
    else:
        if rng is None:
            raise ValueError("sampling reconstruction needs an rng")
        z = mu + np.exp(0.5 * lv) * rng.standard_normal(mu.shape)
    pixels, attn = cross_attention_forward(model.dec_layers, model.dec_head, z)
    return pixels, attn, z
