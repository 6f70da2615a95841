"""Unidirectional LSTM language model over bounded-length sequences.

The model predicts every symbol after the initial begin symbol, ending with
the end symbol. The begin symbol is masked out of every softmax (it is never a
valid continuation), and once the payload budget max_len-2 is exhausted the
end symbol is forced with probability one. Total probability over all
sequences of length <= max_len is therefore exactly 1.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..corpus import Sequence, group_by_length, stack_ids
from . import layers


@dataclass(frozen=True)
class LstmLmConfig:
    vocab_size: int
    emb_dim: int = 16
    hidden_dim: int = 16
    num_layers: int = 1
    max_len: int = 16
    bos: int = 0
    eos: int = 1

    def __post_init__(self):
        if self.vocab_size < 3 or self.emb_dim < 1 or self.hidden_dim < 1 \
                or self.num_layers < 1 or self.max_len < 2:
            raise ValueError("inconsistent LSTM LM dimensions")


@dataclass
class LstmLmParams:
    config: LstmLmConfig
    tensors: dict[str, np.ndarray] = field(repr=False)

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}


def param_shapes(cfg: LstmLmConfig) -> dict[str, tuple]:
    e, d = cfg.emb_dim, cfg.hidden_dim
    shapes: dict[str, tuple] = {"emb": (cfg.vocab_size, e)}
    for i in range(1, cfg.num_layers + 1):
        cin = e if i == 1 else d
        shapes[f"lstm{i}_w"] = (cin + d, 4 * d)
        shapes[f"lstm{i}_b"] = (4 * d,)
    shapes["out_w"] = (d, cfg.vocab_size)
    shapes["out_b"] = (cfg.vocab_size,)
    return shapes


def init_lstm_lm_params(cfg: LstmLmConfig, seed: int = 0,
                        scale: float = 0.1) -> LstmLmParams:
    rng = np.random.default_rng(seed) if isinstance(seed, int) else seed
    tensors = {name: layers.uniform_init(rng, shape, scale)
               for name, shape in param_shapes(cfg).items()}
    return LstmLmParams(cfg, tensors)


def _check_batch(cfg: LstmLmConfig, ids: np.ndarray) -> None:
    n, length = ids.shape
    if length < 2 or length > cfg.max_len:
        raise ValueError(f"sequence length {length} outside 2..{cfg.max_len}")
    if np.any(ids[:, 0] != cfg.bos) or np.any(ids[:, -1] != cfg.eos):
        raise ValueError("sequences must be [begin, payload..., end]")
    if length > 2 and np.any(np.isin(ids[:, 1:-1], (cfg.bos, cfg.eos))):
        raise ValueError("boundary symbol inside payload")


def _forward(params: LstmLmParams, ids: np.ndarray):
    cfg = params.config
    t = params.tensors
    inputs = ids[:, :-1]
    x, _ = layers.embedding_forward(t["emb"], inputs)
    caches = []
    h = x
    for i in range(1, cfg.num_layers + 1):
        h, c = layers.lstm_forward(h, t[f"lstm{i}_w"], t[f"lstm{i}_b"])
        caches.append(c)
    logits = h @ t["out_w"] + t["out_b"]
    logits[:, :, cfg.bos] = -np.inf
    zmax = logits.max(axis=2, keepdims=True)
    lse = zmax[:, :, 0] + np.log(np.exp(logits - zmax).sum(axis=2))
    return inputs, caches, logits, lse


def _gather_logprobs(cfg: LstmLmConfig, ids, logits, lse) -> np.ndarray:
    n, length = ids.shape
    targets = ids[:, 1:]
    steps = length - 1
    rows = np.arange(n)[:, None]
    cols = np.arange(steps)[None, :]
    lp = logits[rows, cols, targets] - lse
    if length == cfg.max_len:
        lp[:, -1] = 0.0   # end symbol forced once the payload budget is spent
    return lp.sum(axis=1)


def lstm_lm_logprob_batch(params: LstmLmParams, ids) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    _check_batch(params.config, ids)
    _, _, logits, lse = _forward(params, ids)
    return _gather_logprobs(params.config, ids, logits, lse)


def lstm_lm_logprob(params: LstmLmParams, x: Sequence) -> float:
    return float(lstm_lm_logprob_batch(params, np.array([x.ids]))[0])


def lstm_lm_loss_grads(params: LstmLmParams, batch) -> tuple[float, dict]:
    """Mean per-sequence negative log-probability and its parameter gradient."""
    cfg = params.config
    t = params.tensors
    grads = params.zeros_like()
    total_nll = 0.0
    n_total = len(batch)
    for _, idx in group_by_length(batch).items():
        ids = stack_ids([batch[i] for i in idx])
        _check_batch(cfg, ids)
        inputs, caches, logits, lse = _forward(params, ids)
        lp = _gather_logprobs(cfg, ids, logits, lse)
        total_nll += float(-lp.sum())

        n, length = ids.shape
        targets = ids[:, 1:]
        steps = length - 1
        probs = np.exp(logits - lse[:, :, None])
        dlogits = probs / n_total
        rows = np.arange(n)[:, None]
        cols = np.arange(steps)[None, :]
        dlogits[rows, cols, targets] -= 1.0 / n_total
        if length == cfg.max_len:
            dlogits[:, -1, :] = 0.0
        grads["out_w"] += np.einsum("ntd,ntv->dv", _last_h(caches[-1]), dlogits)
        grads["out_b"] += dlogits.sum(axis=(0, 1))
        dh = dlogits @ t["out_w"].T
        for i in reversed(range(1, cfg.num_layers + 1)):
            dh, dw, db = layers.lstm_backward(dh, caches[i - 1])
            grads[f"lstm{i}_w"] += dw
            grads[f"lstm{i}_b"] += db
        grads["emb"] += layers.embedding_backward(dh, inputs, t["emb"].shape)
    return total_nll / n_total, grads


def _last_h(cache):
    """Hidden-state sequence recorded by lstm_forward, recovered from its cache."""
    zin, gi, gf, gg, go, c, tc, w, cin = cache
    return go * tc


def lstm_lm_train_step(params: LstmLmParams, batch, lr: float) -> tuple[LstmLmParams, float]:
    """One SGD step on the mean NLL of the batch; returns new params and the
    NLL measured before the update."""
    nll, grads = lstm_lm_loss_grads(params, batch)
    tensors = {k: v - lr * grads[k] for k, v in params.tensors.items()}
    return LstmLmParams(params.config, tensors), nll
