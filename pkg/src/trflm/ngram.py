"""Interpolated Kneser-Ney n-gram language model.

Serves three roles: the fixed-length noise component for contrastive training,
a sentence-level rescoring baseline, and an optional reference distribution.

Smoothing recipe: one discount per order, D = n1/(n1 + 2*n2) from the
count-of-counts of that order's table (absolute 0.5 fallback when n1 or n2 is
zero). The highest order uses raw counts; every lower order uses continuation
counts (number of distinct one-symbol-longer contexts). The unigram level
interpolates with the uniform distribution over the full vocabulary, so every
symbol has nonzero mass and every conditional sums to exactly 1.
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .corpus import Sequence, Vocabulary
from .util import atomic_write_text

FORMAT_VERSION = 1


@dataclass
class NGramModel:
    order: int
    vocab_size: int
    bos: int
    eos: int
    # tables[k][context_tuple][next_id] -> count; raw at k == order, continuation below
    tables: dict[int, dict[tuple, Counter]]
    discounts: dict[int, float]
    _dist_cache: dict[tuple, np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def payload_ids(self) -> np.ndarray:
        return np.array([i for i in range(self.vocab_size) if i not in (self.bos, self.eos)],
                        dtype=np.int64)

    def conditional_dist(self, context) -> np.ndarray:
        """P(. | context) over all vocab_size next symbols; sums to 1 exactly."""
        ctx = tuple(context)
        if self.order > 1:
            ctx = ctx[-(self.order - 1):]
        else:
            ctx = ()
        cached = self._dist_cache.get(ctx)
        if cached is not None:
            return cached
        dist = self._dist(ctx)
        dist.flags.writeable = False
        self._dist_cache[ctx] = dist
        return dist

    def _dist(self, ctx: tuple) -> np.ndarray:
        V = self.vocab_size
        if len(ctx) == 0:
            lower = np.full(V, 1.0 / V)
        else:
            lower = self.conditional_dist(ctx[1:])
        k = len(ctx) + 1
        counts = self.tables[k].get(ctx)
        if not counts:
            return np.array(lower)  # unseen context: full backoff
        vec = np.zeros(V)
        for w, c in counts.items():
            vec[w] = c
        total = vec.sum()
        types = int(np.count_nonzero(vec))
        D = self.discounts[k]
        return (np.maximum(vec - D, 0.0) + D * types * lower) / total


def _events(seq: Sequence, order: int, bos: int):
    """(context, target) pairs: every symbol after the initial begin, with
    an (order-1)-length context left-padded by begin symbols."""
    ext = (bos,) * max(order - 2, 0) + tuple(seq.ids)
    start = max(order - 1, 1)
    for j in range(start, len(ext)):
        yield ext[j - order + 1: j], ext[j]


def train_ngram(dataset, order: int, vocab: Vocabulary) -> NGramModel:
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    if not dataset:
        raise ValueError("empty dataset")
    tables: dict[int, dict[tuple, Counter]] = {k: {} for k in range(1, order + 1)}
    top = tables[order]
    for seq in dataset:
        for ctx, w in _events(seq, order, vocab.bos):
            top.setdefault(ctx, Counter())[w] += 1
    # continuation counts: distinct one-longer contexts per (ctx, w)
    for k in range(order - 1, 0, -1):
        lower = tables[k]
        for vctx, counts in tables[k + 1].items():
            ctx = vctx[1:]
            tgt = lower.setdefault(ctx, Counter())
            for w in counts:
                tgt[w] += 1
    discounts = {}
    for k in range(1, order + 1):
        cofc = Counter()
        for counts in tables[k].values():
            for c in counts.values():
                cofc[c] += 1
        n1, n2 = cofc.get(1, 0), cofc.get(2, 0)
        discounts[k] = n1 / (n1 + 2.0 * n2) if n1 > 0 and n2 > 0 else 0.5
    return NGramModel(order, vocab.size, vocab.bos, vocab.eos, tables, discounts)


def logprob_conditional(model: NGramModel, context, next_id: int) -> float:
    """log P(next | context); backs off through shorter contexts, always finite."""
    return float(np.log(model.conditional_dist(context)[next_id]))


def _check_boundaries(model: NGramModel, seq: Sequence) -> None:
    ids = seq.ids
    if len(ids) == 0:
        raise ValueError("cannot score a length-0 sequence")
    if len(ids) < 2 or ids[0] != model.bos or ids[-1] != model.eos:
        raise ValueError("sequence must be [begin, payload..., end]")
    if any(i in (model.bos, model.eos) for i in ids[1:-1]):
        raise ValueError("boundary symbol inside payload")


def _padded_context(prefix, order: int, bos: int) -> tuple:
    """Last order-1 symbols of the begin-padded prefix (training convention)."""
    if order == 1:
        return ()
    return ((bos,) * (order - 1) + tuple(prefix))[-(order - 1):]


def payload_conditional_dist(model: NGramModel, context) -> np.ndarray:
    """Conditional over payload symbols only (boundaries excluded), renormalized."""
    dist = np.array(model.conditional_dist(context))
    dist[model.bos] = 0.0
    dist[model.eos] = 0.0
    return dist / dist.sum()


def logprob_fixed_length(model: NGramModel, x: Sequence) -> float:
    """log p_n(x^l) for the given-length restriction of the model.

    Interior conditionals are renormalized over payload symbols; the final
    position is the end symbol with probability 1 (the length is given, so the
    stop decision carries no mass). Summed over all payload combinations of a
    length this is exactly 1.
    """
    _check_boundaries(model, x)
    ids = x.ids
    lp = 0.0
    for i in range(1, len(ids) - 1):
        dist = payload_conditional_dist(model, _padded_context(ids[:i], model.order, model.bos))
        lp += float(np.log(dist[ids[i]]))
    return lp


def sample_fixed_length(model: NGramModel, l: int, rng: np.random.Generator) -> Sequence:
    """Draw a sequence of exact length l (boundaries included) from the
    fixed-length restriction; distribution matches logprob_fixed_length."""
    if l < 2:
        raise ValueError(f"minimum sequence length is 2 ([begin, end]), got {l}")
    ids = [model.bos]
    for _ in range(l - 2):
        dist = payload_conditional_dist(model, _padded_context(ids, model.order, model.bos))
        ids.append(int(rng.choice(model.vocab_size, p=dist)))
    ids.append(model.eos)
    return Sequence(tuple(ids))


def logprob_sentence(model: NGramModel, x: Sequence) -> float:
    """Plain joint log-probability (predicts payload and the final end symbol,
    no length restriction); the rescoring baseline score."""
    _check_boundaries(model, x)
    lp = 0.0
    for ctx, w in _events(x, model.order, model.bos):
        lp += float(np.log(model.conditional_dist(ctx)[w]))
    return lp


# -- serialization ------------------------------------------------------------

def _ctx_key(ctx: tuple) -> str:
    return " ".join(str(i) for i in ctx)


def to_json_dict(model: NGramModel) -> dict:
    return {
        "format": "trflm-ngram",
        "version": FORMAT_VERSION,
        "order": model.order,
        "vocab_size": model.vocab_size,
        "bos": model.bos,
        "eos": model.eos,
        "discounts": {str(k): model.discounts[k] for k in sorted(model.discounts)},
        "tables": {
            str(k): {_ctx_key(ctx): {str(w): c for w, c in sorted(counts.items())}
                     for ctx, counts in sorted(model.tables[k].items())}
            for k in sorted(model.tables)
        },
    }


def from_json_dict(doc: dict) -> NGramModel:
    if doc.get("format") != "trflm-ngram":
        raise ValueError("not an n-gram model file")
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported n-gram model version: {doc.get('version')}")
    tables: dict[int, dict[tuple, Counter]] = {}
    for k, ctxs in doc["tables"].items():
        tables[int(k)] = {
            tuple(int(t) for t in key.split()) if key else ():
                Counter({int(w): c for w, c in counts.items()})
            for key, counts in ctxs.items()
        }
    return NGramModel(doc["order"], doc["vocab_size"], doc["bos"], doc["eos"],
                      tables, {int(k): v for k, v in doc["discounts"].items()})


def save_ngram(model: NGramModel, path) -> None:
    atomic_write_text(path, json.dumps(to_json_dict(model), indent=1))


def load_ngram(path) -> NGramModel:
    with open(path, encoding="utf-8") as f:
        return from_json_dict(json.load(f))


# -- ARPA export --------------------------------------------------------------

def export_arpa(model: NGramModel, vocab: Vocabulary, path) -> None:
    """Standard \\data\\ / \\n-grams: backoff file equivalent to this model.

    Listed k-grams carry the interpolated probability; backoff weights are the
    leftover-mass ratio, which reproduces the interpolated model exactly for
    unlisted continuations.
    """
    entries: dict[int, dict[tuple, dict]] = {k: {} for k in range(1, model.order + 1)}
    for k in range(1, model.order + 1):
        for ctx, counts in model.tables[k].items():
            for w in counts:
                entries[k].setdefault(ctx, {})[w] = None
    # every vocabulary symbol is a listed 1-gram (smoothing gives all of them mass)
    entries[1].setdefault((), {})
    for w in range(model.vocab_size):
        entries[1][()].setdefault(w, None)
    # every context of a listed (k+1)-gram must itself be a listed k-gram
    for k in range(model.order - 1, 0, -1):
        for ctx in entries[k + 1]:
            entries[k].setdefault(ctx[:-1], {}).setdefault(ctx[-1], None)

    def log10(p):
        return float(np.log10(p))

    lines = ["\\data\\"]
    sections = {}
    for k in range(1, model.order + 1):
        rows = []
        for ctx in sorted(entries[k]):
            dist = model.conditional_dist(ctx)
            words = sorted(entries[k][ctx])
            for w in words:
                gram = ctx + (w,)
                toks = " ".join(vocab.symbol_of(i) for i in gram)
                row = f"{log10(dist[gram[-1]])!r}\t{toks}"
                if k < model.order and gram in entries[k + 1]:
                    seen = sorted(entries[k + 1][gram])
                    hi = model.conditional_dist(gram)
                    lo = model.conditional_dist(gram[1:])
                    num = 1.0 - float(np.sum(hi[seen]))
                    den = 1.0 - float(np.sum(lo[seen]))
                    bow = num / den if den > 0 else 1.0
                    row += f"\t{log10(max(bow, 1e-99))!r}"
                rows.append(row)
        sections[k] = rows
        lines.append(f"ngram {k}={len(rows)}")
    for k in range(1, model.order + 1):
        lines.append("")
        lines.append(f"\\{k}-grams:")
        lines.extend(sections[k])
    lines.append("")
    lines.append("\\end\\")
    atomic_write_text(path, "\n".join(lines) + "\n")
