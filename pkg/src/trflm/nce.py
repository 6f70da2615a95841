"""Noise-contrastive estimation of the random field parameters.

Training discriminates data sequences from noise sequences: with nu noise
draws per data sequence, the posterior that a sequence came from the data is

    P(C=0 | l, x^l) = p(l,x^l) / (p(l,x^l) + nu * p_n(l,x^l))
                    = sigmoid(log p - log nu - log p_n)

and the objective (maximized) is

    J = 1/|D| sum_D log P(C=0) + nu/|B| sum_B log(1 - P(C=0)),   |B| = nu |D|.

Both potential weights and the per-length log-normalizers zeta receive
ordinary gradient updates. With per-sequence classification weights
w_data = (1-P0)/|D| and w_noise = -P0/|D|,

    dJ/dtheta  = sum_D w_data dphi/dtheta + sum_B w_noise dphi/dtheta
    dJ/dzeta_j = -sum_{D, l=j} w_data     - sum_{B, l=j} w_noise.

|D| is the mini-batch data count. Ascent on J is run as descent on -J.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .corpus import Sequence, group_by_length, stack_ids
from .noise import NoiseBatch, NoiseDistribution, AsyncNoiseProducer, \
    noise_batch_stream, noise_logprob
from .trf import TrfModel, exact_zeta, log_joint, log_joint_batch, \
    nll as trf_nll, zeta_init_vector
from .util import derive_rng, fmt, log_sigmoid


@dataclass(frozen=True)
class NceConfig:
    nu: int = 10
    batch_size: int = 10
    epochs: int = 20
    lr_theta: float = 1e-3
    lr_zeta: float = 1e-2
    optimizer_theta: str = "adam"
    optimizer_zeta: str = "adam"
    schedule: str = "fixed"            # or "halve-each-epoch"
    seed: int = 0
    zeta_init: str = "l-log-v"         # "linear", "zeros", or "keep"
    async_noise: bool = False          # strict deterministic mode when False
    queue_size: int = 4

    def __post_init__(self):
        if self.nu < 1:
            raise ValueError("nu must be >= 1")
        if self.lr_theta <= 0 or self.lr_zeta <= 0:
            raise ValueError("learning rates must be positive")
        if self.schedule not in ("fixed", "halve-each-epoch"):
            raise ValueError(f"unknown schedule: {self.schedule!r}")

    def lr_at(self, epoch: int) -> tuple[float, float]:
        scale = 0.5 ** epoch if self.schedule == "halve-each-epoch" else 1.0
        return self.lr_theta * scale, self.lr_zeta * scale


@dataclass
class NceStepStats:
    j: float
    mean_post_data: float
    mean_post_noise: float
    grad_norm_theta: float
    grad_norm_zeta: float


def classification_weights(p0, data_count: int):
    """Per-sequence gradient weights: (1-P0)/|D| for data, -P0/|D| for noise."""
    p0 = np.asarray(p0, dtype=np.float64)
    return (1.0 - p0) / data_count, -p0 / data_count


def _log_densities(model: TrfModel, nd: NoiseDistribution, data_batch,
                   noise_batch: NoiseBatch):
    log_p_d = np.array([log_joint(model, s) for s in data_batch])
    log_pn_d = np.array([noise_logprob(nd, s) for s in data_batch])
    seqs_n = noise_batch.sequences
    log_p_n = np.empty(len(seqs_n))
    for l, idx in group_by_length(seqs_n).items():
        log_p_n[idx] = log_joint_batch(model, stack_ids([seqs_n[i] for i in idx]))
    return log_p_d, log_pn_d, log_p_n, np.array(noise_batch.log_pn)


def posterior_data(model: TrfModel, nd: NoiseDistribution, x: Sequence,
                   nu: int) -> float:
    """P(C=0 | l, x^l), evaluated in the log domain."""
    log_p = log_joint(model, x)
    log_pn = noise_logprob(nd, x)
    if log_p == -np.inf and log_pn == -np.inf:
        raise ValueError("sequence impossible under both model and noise")
    delta = log_p - np.log(nu) - log_pn
    return float(np.exp(log_sigmoid(delta)))


def nce_objective(model: TrfModel, nd: NoiseDistribution, data_batch,
                  noise_batch: NoiseBatch) -> float:
    nu = noise_batch.nu
    if len(noise_batch.sequences) != nu * len(data_batch):
        raise ValueError("noise batch size must be nu * data batch size")
    log_p_d, log_pn_d, log_p_n, log_pn_n = _log_densities(model, nd, data_batch, noise_batch)
    delta_d = log_p_d - np.log(nu) - log_pn_d
    delta_n = log_p_n - np.log(nu) - log_pn_n
    return float(np.mean(log_sigmoid(delta_d)) + nu * np.mean(log_sigmoid(-delta_n)))


def nce_gradients(model: TrfModel, nd: NoiseDistribution, data_batch,
                  noise_batch: NoiseBatch):
    """Ascent gradients of J for theta and zeta, plus step statistics."""
    nu = noise_batch.nu
    if len(noise_batch.sequences) != nu * len(data_batch):
        raise ValueError("noise batch size must be nu * data batch size")
    log_p_d, log_pn_d, log_p_n, log_pn_n = _log_densities(model, nd, data_batch, noise_batch)
    delta_d = log_p_d - np.log(nu) - log_pn_d
    delta_n = log_p_n - np.log(nu) - log_pn_n
    p0_d = np.exp(log_sigmoid(delta_d))
    p0_n = np.exp(log_sigmoid(delta_n))
    j = float(np.mean(log_sigmoid(delta_d)) + nu * np.mean(log_sigmoid(-delta_n)))

    w_d, _ = classification_weights(p0_d, len(data_batch))
    _, w_n = classification_weights(p0_n, len(data_batch))
    seqs = list(data_batch) + list(noise_batch.sequences)
    scales = np.concatenate([w_d, w_n])

    grad_theta = model.potential.params.zeros_like()
    grad_zeta = np.zeros_like(model.zeta)
    for l, idx in group_by_length(seqs).items():
        ids = stack_ids([seqs[i] for i in idx])
        g = model.potential.grads_batch(ids, scales[idx])
        for k in grad_theta:
            grad_theta[k] += g[k]
        grad_zeta[l - 1] -= float(scales[idx].sum())

    stats = NceStepStats(
        j=j,
        mean_post_data=float(p0_d.mean()),
        mean_post_noise=float(p0_n.mean()),
        grad_norm_theta=float(np.sqrt(sum(float((g ** 2).sum()) for g in grad_theta.values()))),
        grad_norm_zeta=float(np.sqrt((grad_zeta ** 2).sum())),
    )
    return grad_theta, grad_zeta, stats


class Sgd:
    def step(self, tensors, grads, lr):
        for k, g in grads.items():
            tensors[k] -= lr * g


class Adam:
    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def step(self, tensors, grads, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, g in grads.items():
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            tensors[k] -= lr * mhat / (np.sqrt(vhat) + self.eps)


def make_optimizer(name: str):
    if name == "sgd":
        return Sgd()
    if name == "adam":
        return Adam()
    raise ValueError(f"unknown optimizer: {name!r}")


@dataclass
class EpochRecord:
    epoch: int
    lr_theta: float
    lr_zeta: float
    train_nll: float
    valid_nll: float | None
    zeta_gap_sq: float | None


@dataclass
class TrainResult:
    model: TrfModel
    epochs: list[EpochRecord] = field(default_factory=list)
    steps: int = 0


def _batch_sizes(n: int, batch_size: int) -> list[int]:
    sizes = [batch_size] * (n // batch_size)
    if n % batch_size:
        sizes.append(n % batch_size)
    return sizes


def train(model: TrfModel, nd: NoiseDistribution, dataset, config: NceConfig,
          valid=None, oracle_metrics: bool = False, oracle_budget: int = 10_000_000,
          step_log=None, epoch_log=None) -> TrainResult:
    """Run the NCE loop: shuffled mini-batches, one optimizer per parameter
    group, per-step stats and per-epoch NLL / zeta-gap metrics (the latter via
    the brute-force oracle when oracle_metrics is set).

    step_log / epoch_log are writable text handles for the CSV metrics.
    """
    if not dataset:
        raise ValueError("empty dataset")
    if config.zeta_init != "keep":
        model.zeta = zeta_init_vector(config.zeta_init, model.max_len, model.vocab.size)
    supported = np.zeros(model.max_len, dtype=bool)
    for l in model.supported_lengths:
        supported[l - 1] = True

    shuffle_rng = derive_rng(config.seed, "shuffle")
    noise_rng = derive_rng(config.seed, "noise")
    sizes = _batch_sizes(len(dataset), config.batch_size)
    all_sizes = itertools.chain.from_iterable(itertools.repeat(sizes, config.epochs))
    batches = noise_batch_stream(nd, all_sizes, config.nu, noise_rng)
    noise_iter = AsyncNoiseProducer(batches, config.queue_size) if config.async_noise else batches

    opt_theta = make_optimizer(config.optimizer_theta)
    opt_zeta = make_optimizer(config.optimizer_zeta)

    if step_log:
        step_log.write("step,epoch,j,post_data,post_noise,grad_norm_theta,grad_norm_zeta\n")
    if epoch_log:
        epoch_log.write("epoch,lr_theta,lr_zeta,train_nll,valid_nll,zeta_gap_sq\n")

    result = TrainResult(model)
    step = 0
    for epoch in range(config.epochs):
        lr_t, lr_z = config.lr_at(epoch)
        order = shuffle_rng.permutation(len(dataset))
        pos = 0
        for bsz in sizes:
            data_batch = [dataset[i] for i in order[pos:pos + bsz]]
            pos += bsz
            noise_batch = next(noise_iter)
            g_theta, g_zeta, stats = nce_gradients(model, nd, data_batch, noise_batch)
            for name, g in g_theta.items():
                if not np.all(np.isfinite(g)):
                    raise RuntimeError(f"non-finite gradient in {name!r} at step {step}")
            if not np.all(np.isfinite(g_zeta)):
                raise RuntimeError(f"non-finite gradient in zeta at step {step}")
            g_zeta[~supported] = 0.0    # frozen lengths
            # maximize J: descend on -J
            opt_theta.step(model.potential.params.tensors,
                           {k: -g for k, g in g_theta.items()}, lr_t)
            opt_zeta.step({"zeta": model.zeta}, {"zeta": -g_zeta}, lr_z)
            if step_log:
                step_log.write(f"{step},{epoch},{fmt(stats.j)},{fmt(stats.mean_post_data)},"
                               f"{fmt(stats.mean_post_noise)},{fmt(stats.grad_norm_theta)},"
                               f"{fmt(stats.grad_norm_zeta)}\n")
            step += 1
        train_nll = trf_nll(model, dataset, "stored")
        valid_nll = gap_sq = None
        if oracle_metrics:
            zs = exact_zeta(model, None, oracle_budget)   # one enumeration per epoch
            gap_sq = float(sum((float(model.zeta[l - 1]) - z) ** 2 for l, z in zs.items()))
            if valid:
                true_zeta = np.array(model.zeta)
                for l, z in zs.items():
                    true_zeta[l - 1] = z
                shadow = TrfModel(model.potential, true_zeta, model.length_prior,
                                  model.reference, model.vocab)
                valid_nll = trf_nll(shadow, valid, "stored")
        record = EpochRecord(epoch, lr_t, lr_z, train_nll, valid_nll, gap_sq)
        result.epochs.append(record)
        if epoch_log:
            epoch_log.write(f"{epoch},{fmt(lr_t)},{fmt(lr_z)},{fmt(train_nll)},"
                            f"{'' if valid_nll is None else fmt(valid_nll)},"
                            f"{'' if gap_sq is None else fmt(gap_sq)}\n")
    result.steps = step
    return result
