"""N-best rescoring, log-linear model combination, and word error rate.

N-best file format, one hypothesis per line:

    <utt-id> <rank> <acoustic-score|NA> <token ...>

References file: `<utt-id> <token ...>`. Scores combine log-linearly:
sum_i weight_i * logprob_i(hyp), plus the acoustic score verbatim when
present. Combination weights are tuned by grid search over the weight simplex
(step 0.1) to minimize WER on a development set.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ngram as ngram_mod
from .corpus import Vocabulary, encode
from .seqnet import lstmlm
from .trf import TrfModel, log_joint
from .util import atomic_write_text, fmt


@dataclass(frozen=True)
class Hypothesis:
    text: str
    acoustic: float | None
    rank: int


@dataclass(frozen=True)
class NBestList:
    utt_id: str
    hypotheses: tuple[Hypothesis, ...]

    def __post_init__(self):
        if not self.hypotheses:
            raise ValueError(f"utterance {self.utt_id!r} has no hypotheses")


def read_nbest_file(path) -> list[NBestList]:
    by_utt: dict[str, list[Hypothesis]] = {}
    order: list[str] = []
    with open(path, encoding="utf-8") as f:
        for ln in f:
            if not ln.strip():
                continue
            utt, rank, ac, *toks = ln.split()
            if utt not in by_utt:
                by_utt[utt] = []
                order.append(utt)
            acoustic = None if ac == "NA" else float(ac)
            by_utt[utt].append(Hypothesis(" ".join(toks), acoustic, int(rank)))
    return [NBestList(u, tuple(sorted(by_utt[u], key=lambda h: h.rank)))
            for u in order]


def read_refs_file(path) -> dict[str, str]:
    refs = {}
    with open(path, encoding="utf-8") as f:
        for ln in f:
            if not ln.strip():
                continue
            utt, *toks = ln.split()
            refs[utt] = " ".join(toks)
    return refs


def write_nbest_file(nbests, path) -> None:
    lines = []
    for nb in nbests:
        for h in nb.hypotheses:
            ac = "NA" if h.acoustic is None else fmt(h.acoustic)
            lines.append(f"{nb.utt_id} {h.rank} {ac} {h.text}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_refs_file(refs: dict, path) -> None:
    atomic_write_text(path, "".join(f"{u} {t}\n" for u, t in refs.items()))


# -- sentence scorers ----------------------------------------------------------

class NgramScorer:
    kind = "ngram"

    def __init__(self, model: ngram_mod.NGramModel, vocab: Vocabulary, level: str = "word"):
        self.model, self.vocab, self.level = model, vocab, level

    def logprob(self, text: str) -> float:
        return ngram_mod.logprob_sentence(self.model, encode(text, self.vocab, True, self.level))


class LstmScorer:
    kind = "lstm"

    def __init__(self, params: lstmlm.LstmLmParams, vocab: Vocabulary, level: str = "word"):
        self.params, self.vocab, self.level = params, vocab, level

    def logprob(self, text: str) -> float:
        return lstmlm.lstm_lm_logprob(self.params, encode(text, self.vocab, True, self.level))


class TrfScorer:
    """Scores with the stored zeta; no normalization oracle at inference."""

    kind = "trf"

    def __init__(self, model: TrfModel, level: str = "word"):
        self.model, self.level = model, level

    def logprob(self, text: str) -> float:
        return log_joint(self.model, encode(text, self.model.vocab, True, self.level))


@dataclass(frozen=True)
class CombinedScorer:
    members: tuple    # of (scorer, weight) pairs

    def __post_init__(self):
        if not self.members:
            raise ValueError("a combined scorer needs at least one member")
        if not all(np.isfinite(w) for _, w in self.members):
            raise ValueError("member weights must be finite")


def score_hypothesis(scorer: CombinedScorer, hyp: Hypothesis | str) -> float:
    text = hyp.text if isinstance(hyp, Hypothesis) else hyp
    total = 0.0
    for member, weight in scorer.members:
        if weight != 0.0:   # skip so a -inf member score cannot poison weight 0
            total += weight * member.logprob(text)
    if isinstance(hyp, Hypothesis) and hyp.acoustic is not None:
        total += hyp.acoustic
    return total


def rescore(scorer: CombinedScorer, nbest: NBestList) -> list[Hypothesis]:
    """Hypotheses sorted by descending combined score; ties keep original rank."""
    scored = [(score_hypothesis(scorer, h), h) for h in nbest.hypotheses]
    return [h for _, h in sorted(scored, key=lambda sh: (-sh[0], sh[1].rank))]


# -- word error rate -----------------------------------------------------------

@dataclass(frozen=True)
class WerResult:
    substitutions: int
    insertions: int
    deletions: int
    ref_tokens: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def rate(self) -> float:
        return self.errors / self.ref_tokens


def wer(reference: str, hypothesis: str) -> WerResult:
    """Unit-cost Levenshtein alignment between token sequences."""
    ref = reference.split()
    hyp = hypothesis.split()
    if not ref:
        raise ValueError("reference must be nonempty")
    n, m = len(ref), len(hyp)
    cost = np.zeros((n + 1, m + 1), dtype=np.int64)
    cost[:, 0] = np.arange(n + 1)
    cost[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = cost[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            cost[i, j] = min(sub, cost[i - 1, j] + 1, cost[i, j - 1] + 1)
    s = ins = dele = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and cost[i, j] == cost[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and cost[i, j] == cost[i - 1, j] + 1:
            dele += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return WerResult(int(s), int(ins), int(dele), n)


def corpus_wer(refs: dict[str, str], best: dict[str, str]) -> WerResult:
    """Pooled error counts over utterances: sum(S+I+D) / sum(ref lengths)."""
    s = i = d = n = 0
    for utt, ref in refs.items():
        r = wer(ref, best[utt])
        s, i, d, n = s + r.substitutions, i + r.insertions, d + r.deletions, n + r.ref_tokens
    return WerResult(s, i, d, n)


# -- weight tuning -------------------------------------------------------------

def _simplex_grid(k: int, step: float = 0.1):
    """All nonnegative weight vectors of k entries summing to 1 on the grid."""
    ticks = round(1.0 / step)

    def rec(remaining, parts):
        if len(parts) == k - 1:
            yield parts + [remaining]
            return
        for t in range(remaining + 1):
            yield from rec(remaining - t, parts + [t])

    for combo in rec(ticks, []):
        yield tuple(c / ticks for c in combo)


def precompute_member_scores(members, nbests) -> dict[str, np.ndarray]:
    """(n_hyps, n_members) member log-prob matrix per utterance."""
    return {nb.utt_id: np.array([[m.logprob(h.text) for m in members]
                                 for h in nb.hypotheses])
            for nb in nbests}


def _pick_best(nb: NBestList, totals: np.ndarray) -> str:
    order = sorted(range(len(totals)), key=lambda i: (-totals[i], nb.hypotheses[i].rank))
    return nb.hypotheses[order[0]].text


def rescore_with_weights(members, weights, nbests, scores=None) -> dict[str, str]:
    """Best hypothesis per utterance under the given member weights."""
    if scores is None:
        scores = precompute_member_scores(members, nbests)
    w = np.asarray(weights, dtype=np.float64)
    best = {}
    for nb in nbests:
        mat = scores[nb.utt_id]
        finite = np.where(w != 0.0, mat, 0.0)   # weight-0 members cannot poison
        totals = finite @ w
        totals = totals + np.array([0.0 if h.acoustic is None else h.acoustic
                                    for h in nb.hypotheses])
        best[nb.utt_id] = _pick_best(nb, totals)
    return best


def grid_search_weights(members, nbests, refs, step: float = 0.1):
    """Simplex grid search minimizing corpus WER; first minimizer wins."""
    scores = precompute_member_scores(members, nbests)
    best_w, best_rate = None, np.inf
    for w in _simplex_grid(len(members), step):
        picked = rescore_with_weights(members, w, nbests, scores)
        rate = corpus_wer(refs, picked).rate
        if rate < best_rate - 1e-15:
            best_w, best_rate = w, rate
    return best_w, best_rate


# -- synthetic benchmark -------------------------------------------------------

def make_nbest_benchmark(source: ngram_mod.NGramModel, vocab: Vocabulary,
                         length_prior, rng: np.random.Generator, n_utts: int = 40,
                         n_hyps: int = 8, level: str = "char",
                         acoustic_scale: float = 1.0, acoustic_noise: float = 0.8,
                         tag: str = "utt"):
    """References sampled from a known n-gram model; hypotheses are the
    reference plus payload corruptions, with acoustic scores that degrade with
    the number of injected errors. Corruption keeps payload lengths within the
    prior's support."""
    from .ngram import sample_fixed_length
    sep = " " if level == "word" else ""
    # the unknown symbol never appears in real hypothesis text
    payload = [i for i in range(vocab.size)
               if i not in (vocab.bos, vocab.eos, vocab.unk)]
    if not payload:
        raise ValueError("benchmark needs at least one non-reserved symbol")
    min_l = min(length_prior.supported_lengths)
    max_l = max(length_prior.supported_lengths)
    if max_l <= 2:
        raise ValueError("benchmark references need at least one payload symbol")

    def to_text(ids):
        return sep.join(vocab.symbol_of(i) for i in ids)

    nbests, refs = [], {}
    for u in range(n_utts):
        while True:
            l = int(rng.choice(length_prior.m, p=length_prior.probs)) + 1
            seq = sample_fixed_length(source, l, rng)
            if l > 2 and vocab.unk not in seq.ids:   # nonempty, renderable reference
                break
        ref_ids = list(seq.ids[1:-1])
        refs[f"{tag}{u:04d}"] = to_text(ref_ids)
        seen = {tuple(ref_ids)}
        hyps = [(ref_ids, 0)]
        while len(hyps) < n_hyps:
            ids = list(ref_ids)
            n_edits = int(rng.integers(1, 3))
            for _ in range(n_edits):
                ops = []
                if ids:
                    ops.append("sub")
                if len(ids) >= min_l - 1:      # deletion keeps payload in support
                    ops.append("del")
                if len(ids) <= max_l - 3:      # insertion keeps payload in support
                    ops.append("ins")
                op = ops[int(rng.integers(len(ops)))]
                if op == "sub":
                    ids[int(rng.integers(len(ids)))] = int(rng.choice(payload))
                elif op == "del":
                    del ids[int(rng.integers(len(ids)))]
                else:
                    ids.insert(int(rng.integers(len(ids) + 1)), int(rng.choice(payload)))
            if tuple(ids) not in seen:
                seen.add(tuple(ids))
                hyps.append((ids, n_edits))
        hyp_objs = []
        for rank, (ids, n_edits) in enumerate(hyps):
            ac = -acoustic_scale * n_edits + float(rng.normal(0.0, acoustic_noise))
            hyp_objs.append(Hypothesis(to_text(ids), ac, rank))
        perm = rng.permutation(len(hyp_objs))
        hyp_objs = tuple(Hypothesis(hyp_objs[i].text, hyp_objs[i].acoustic, r)
                         for r, i in enumerate(perm))
        nbests.append(NBestList(f"{tag}{u:04d}", hyp_objs))
    return nbests, refs
