"""The scalar sequence potential phi(x; theta).

Pipeline per sequence: symbol embeddings -> convolution bank (widths 1..K,
feature maps spliced on the channel axis) -> stacked width-3 convolutions ->
residual add with the embeddings -> bidirectional LSTM -> linear attention
readout  phi = lambda^T sum_i alpha_i h_i + c  with raw scores
alpha_i = beta^T h_i (no softmax). Every convolution is zero-padded to keep
the time dimension equal to the input length. All arithmetic is float64.

The convolution stack's last layer outputs embedding-width channels so the
residual add is well defined; when the bank is present (K > 0) at least one
stacked convolution is required to project the splice down. The bank/stack may
both be disabled, in which case embeddings feed the BLSTM directly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..corpus import Sequence
from . import layers


@dataclass(frozen=True)
class PotentialConfig:
    vocab_size: int
    emb_dim: int = 16
    bank_width: int = 0        # K; 0 disables the convolution bank
    bank_channels: int = 0     # f; per-width output channels
    stack_layers: int = 0      # s; width-3 convolutions after the splice
    hidden_dim: int = 16       # d; per-direction BLSTM units

    def __post_init__(self):
        if self.vocab_size < 3 or self.emb_dim < 1 or self.hidden_dim < 1:
            raise ValueError("inconsistent potential dimensions")
        if self.bank_width > 0 and self.bank_channels < 1:
            raise ValueError("bank_channels must be >= 1 when the bank is enabled")
        if self.bank_width > 0 and self.stack_layers < 1:
            raise ValueError("a spliced convolution bank needs at least one "
                             "stacked convolution to project back to emb_dim")

    def stack_channel_plan(self) -> list[tuple[int, int]]:
        """(in, out) channels per stacked convolution."""
        s, f, e = self.stack_layers, self.bank_channels, self.emb_dim
        first_in = self.bank_width * f if self.bank_width > 0 else e
        plan = []
        for i in range(s):
            cin = first_in if i == 0 else f
            cout = e if i == s - 1 else f
            plan.append((cin, cout))
        return plan


@dataclass
class PotentialParams:
    """All trainable weights of the potential network, as named tensors."""

    config: PotentialConfig
    tensors: dict[str, np.ndarray] = field(repr=False)

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}

    def num_params(self) -> int:
        return sum(v.size for v in self.tensors.values())


def param_shapes(cfg: PotentialConfig) -> dict[str, tuple]:
    e, d = cfg.emb_dim, cfg.hidden_dim
    shapes: dict[str, tuple] = {"emb": (cfg.vocab_size, e)}
    for k in range(1, cfg.bank_width + 1):
        shapes[f"bank{k}_w"] = (k, e, cfg.bank_channels)
        shapes[f"bank{k}_b"] = (cfg.bank_channels,)
    for i, (cin, cout) in enumerate(cfg.stack_channel_plan(), start=1):
        shapes[f"stack{i}_w"] = (3, cin, cout)
        shapes[f"stack{i}_b"] = (cout,)
    for direction in ("fw", "bw"):
        shapes[f"lstm_{direction}_w"] = (e + d, 4 * d)
        shapes[f"lstm_{direction}_b"] = (4 * d,)
    shapes["att_beta"] = (2 * d,)
    shapes["att_lambda"] = (2 * d,)
    shapes["bias"] = ()
    return shapes


def init_potential_params(cfg: PotentialConfig, seed: int = 0,
                          scale: float = 0.1) -> PotentialParams:
    """All tensors drawn uniformly from [-scale, scale]."""
    rng = np.random.default_rng(seed) if isinstance(seed, int) else seed
    tensors = {name: layers.uniform_init(rng, shape, scale)
               for name, shape in param_shapes(cfg).items()}
    return PotentialParams(cfg, tensors)


def _check_ids(cfg: PotentialConfig, ids: np.ndarray) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 2 or ids.shape[1] < 1:
        raise ValueError("ids must be a nonempty (N, l) array")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise ValueError("symbol id out of vocabulary range")
    return ids


def potential_phi_batch(params: PotentialParams, ids) -> tuple[np.ndarray, dict]:
    """phi for a batch of same-length sequences; returns ((N,) scores, cache)."""
    cfg = params.config
    t = params.tensors
    ids = _check_ids(cfg, ids)
    cache: dict = {"ids": ids, "params": params, "consumed": False}

    emb, _ = layers.embedding_forward(t["emb"], ids)
    x = emb
    if cfg.bank_width > 0:
        feats, bank_caches = [], []
        for k in range(1, cfg.bank_width + 1):
            y, ck = layers.conv1d_forward(emb, t[f"bank{k}_w"], t[f"bank{k}_b"])
            y, cr = layers.relu_forward(y)
            feats.append(y)
            bank_caches.append((ck, cr))
        x = np.concatenate(feats, axis=2)
        cache["bank"] = bank_caches
    stack_caches = []
    for i in range(1, cfg.stack_layers + 1):
        x, ck = layers.conv1d_forward(x, t[f"stack{i}_w"], t[f"stack{i}_b"])
        x, cr = layers.relu_forward(x)
        stack_caches.append((ck, cr))
    cache["stack"] = stack_caches
    if cfg.bank_width > 0 or cfg.stack_layers > 0:
        x = emb + x  # residual join at embedding width
        cache["residual"] = True
    else:
        cache["residual"] = False

    h_fw, c_fw = layers.lstm_forward(x, t["lstm_fw_w"], t["lstm_fw_b"])
    x_rev = x[:, ::-1, :].copy()
    h_bw_rev, c_bw = layers.lstm_forward(x_rev, t["lstm_bw_w"], t["lstm_bw_b"])
    h = np.concatenate([h_fw, h_bw_rev[:, ::-1, :]], axis=2)   # (N, l, 2d)

    alpha = h @ t["att_beta"]      # raw attention scores, (N, l)
    u = h @ t["att_lambda"]
    phi = (alpha * u).sum(axis=1) + float(t["bias"])
    cache.update(lstm_fw=c_fw, lstm_bw=c_bw, h=h, alpha=alpha, u=u)
    return phi, cache


def potential_backward_batch(params: PotentialParams, cache: dict,
                             scales) -> dict[str, np.ndarray]:
    """Accumulated gradient sum_n scales[n] * d phi_n / d theta."""
    cfg = params.config
    t = params.tensors
    scales = np.asarray(scales, dtype=np.float64)
    ids = cache["ids"]
    h, alpha, u = cache["h"], cache["alpha"], cache["u"]
    grads = params.zeros_like()

    grads["bias"] = np.asarray(scales.sum())
    salpha = scales[:, None] * alpha
    su = scales[:, None] * u
    grads["att_beta"] = np.einsum("nl,nld->d", su, h)
    grads["att_lambda"] = np.einsum("nl,nld->d", salpha, h)
    dh = su[:, :, None] * t["att_beta"] + salpha[:, :, None] * t["att_lambda"]

    d = cfg.hidden_dim
    dx_fw, grads["lstm_fw_w"], grads["lstm_fw_b"] = layers.lstm_backward(
        dh[:, :, :d], cache["lstm_fw"])
    dh_bw_rev = dh[:, ::-1, d:].copy()
    dx_bw_rev, grads["lstm_bw_w"], grads["lstm_bw_b"] = layers.lstm_backward(
        dh_bw_rev, cache["lstm_bw"])
    dx = dx_fw + dx_bw_rev[:, ::-1, :]

    demb = dx if cache["residual"] else None
    for i in reversed(range(1, cfg.stack_layers + 1)):
        ck, cr = cache["stack"][i - 1]
        dx = layers.relu_backward(dx, cr)
        dx, grads[f"stack{i}_w"], grads[f"stack{i}_b"] = layers.conv1d_backward(dx, ck)
    if cfg.bank_width > 0:
        f = cfg.bank_channels
        parts = []
        for k in range(1, cfg.bank_width + 1):
            ck, cr = cache["bank"][k - 1]
            dk = layers.relu_backward(dx[:, :, (k - 1) * f: k * f], cr)
            dk, grads[f"bank{k}_w"], grads[f"bank{k}_b"] = layers.conv1d_backward(dk, ck)
            parts.append(dk)
        dx = sum(parts)
    if demb is not None:
        dx = dx + demb
    grads["emb"] = layers.embedding_backward(dx, ids, t["emb"].shape)
    return grads


def potential_forward(params: PotentialParams, x: Sequence) -> tuple[float, dict]:
    """phi for one sequence plus an opaque, single-use forward record."""
    ids = np.array([x.ids], dtype=np.int64)
    phi, cache = potential_phi_batch(params, ids)
    return float(phi[0]), cache


def potential_backward(params: PotentialParams, cache: dict,
                       upstream_scale: float) -> dict[str, np.ndarray]:
    """upstream_scale * d phi / d theta for a cache from potential_forward."""
    if cache.get("params") is not params:
        raise ValueError("cache does not belong to these parameters")
    if cache.get("consumed"):
        raise ValueError("forward cache already consumed")
    cache["consumed"] = True
    return potential_backward_batch(params, cache, np.array([upstream_scale]))


class NeuralPotential:
    """Potential-function handle: batched scoring plus weighted gradients."""

    def __init__(self, params: PotentialParams):
        self.params = params

    @property
    def config(self) -> PotentialConfig:
        return self.params.config

    def phi_batch(self, ids) -> np.ndarray:
        return potential_phi_batch(self.params, ids)[0]

    def phi(self, x: Sequence) -> float:
        return potential_forward(self.params, x)[0]

    def grads_batch(self, ids, scales) -> dict[str, np.ndarray]:
        _, cache = potential_phi_batch(self.params, ids)
        return potential_backward_batch(self.params, cache, scales)
