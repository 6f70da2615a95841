"""Trans-dimensional noise distribution and batched noise generation.

Noise factorizes as p_n(l, x^l) = pi_l * p_n(x^l): a length drawn from the
empirical length prior, then a payload from the fixed-length restriction of an
n-gram model. Noise is independent of the model being trained, so batches can
be produced ahead of the consumer by a background thread feeding a bounded
queue; the strict path draws them inline from the same stream, yielding
identical batches for a given seed.
"""
from __future__ import annotations

import queue
import threading
from dataclasses import dataclass

import numpy as np

from .corpus import LengthPrior, Sequence
from .ngram import NGramModel, logprob_fixed_length, sample_fixed_length


@dataclass(frozen=True)
class NoiseDistribution:
    length_prior: LengthPrior
    base: NGramModel

    @property
    def order(self) -> int:
        return self.base.order


def noise_logprob(nd: NoiseDistribution, x: Sequence) -> float:
    """log p_n(l, x^l); -inf exactly when the length has zero prior mass."""
    lp_len = nd.length_prior.log_prob(len(x))
    if lp_len == -np.inf:
        return -np.inf
    return lp_len + logprob_fixed_length(nd.base, x)


@dataclass(frozen=True)
class NoiseBatch:
    sequences: tuple[Sequence, ...]
    log_pn: np.ndarray
    nu: int


def draw_noise_batch(nd: NoiseDistribution, data_batch_size: int, nu: int,
                     rng: np.random.Generator) -> NoiseBatch:
    """nu noise sequences per data sequence; lengths i.i.d. from the prior,
    payloads from the fixed-length sampler, densities recorded at draw time."""
    if nu < 1:
        raise ValueError(f"nu must be >= 1, got {nu}")
    n = data_batch_size * nu
    lengths = rng.choice(nd.length_prior.m, size=n, p=nd.length_prior.probs) + 1
    seqs = tuple(sample_fixed_length(nd.base, int(l), rng) for l in lengths)
    log_pn = np.array([noise_logprob(nd, s) for s in seqs])
    return NoiseBatch(seqs, log_pn, nu)


def noise_batch_stream(nd: NoiseDistribution, sizes, nu: int,
                       rng: np.random.Generator):
    """Generator of NoiseBatch items for the given data-batch sizes."""
    for bsz in sizes:
        yield draw_noise_batch(nd, bsz, nu, rng)


def dump_batch(batch: NoiseBatch, vocab) -> str:
    """Debug rendering: one `log_pn<TAB>symbols` line per noise sequence."""
    lines = [f"# nu={batch.nu} size={len(batch.sequences)}"]
    for s, lp in zip(batch.sequences, batch.log_pn):
        toks = " ".join(vocab.symbol_of(i) for i in s.ids)
        lines.append(f"{lp!r}\t{toks}")
    return "\n".join(lines) + "\n"


class AsyncNoiseProducer:
    """Runs a noise-batch iterator in a producer thread behind a bounded
    queue. Iteration order and contents are identical to consuming the
    wrapped iterator directly."""

    _DONE = object()

    def __init__(self, batches, max_buffered: int = 4):
        self._queue: queue.Queue = queue.Queue(maxsize=max_buffered)
        self._error = None
        self._thread = threading.Thread(target=self._run, args=(batches,), daemon=True)
        self._thread.start()

    def _run(self, batches):
        try:
            for b in batches:
                self._queue.put(b)
        except BaseException as exc:   # surfaced on the consumer side
            self._error = exc
        finally:
            self._queue.put(self._DONE)

    def __iter__(self):
        return self

    def __next__(self) -> NoiseBatch:
        item = self._queue.get()
        if item is self._DONE:
            self._thread.join()
            if self._error is not None:
                raise self._error
            raise StopIteration
        return item
