"""Model file formats: named-tensor parameter files and the model bundle.

Everything is versioned JSON with full-precision decimal floats (shortest
round-tripping repr, which json uses natively), so saved models reload
bit-exactly.
"""
from __future__ import annotations

import json
import os

import numpy as np

from .corpus import LengthPrior
from .ngram import load_ngram
from .seqnet.lstmlm import LstmLmConfig, LstmLmParams
from .seqnet.potential import NeuralPotential, PotentialConfig, PotentialParams
from .trf import LstmReference, NgramReference, TrfModel, UniformReference
from .util import atomic_write_text

FORMAT_VERSION = 1


def _tensors_doc(tensors: dict[str, np.ndarray]) -> dict:
    return {name: {"shape": list(arr.shape), "data": arr.reshape(-1).tolist()}
            for name, arr in tensors.items()}


def _tensors_from_doc(doc: dict) -> dict[str, np.ndarray]:
    return {name: np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
            for name, entry in doc.items()}


def save_potential(params: PotentialParams, path) -> None:
    doc = {
        "format": "trflm-potential",
        "version": FORMAT_VERSION,
        "config": params.config.__dict__,
        "tensors": _tensors_doc(params.tensors),
    }
    atomic_write_text(path, json.dumps(doc))


def load_potential(path) -> PotentialParams:
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("format") != "trflm-potential" or doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"not a readable potential parameter file: {path}")
    return PotentialParams(PotentialConfig(**doc["config"]), _tensors_from_doc(doc["tensors"]))


def save_lstm_lm(params: LstmLmParams, path) -> None:
    doc = {
        "format": "trflm-lstm-lm",
        "version": FORMAT_VERSION,
        "config": params.config.__dict__,
        "tensors": _tensors_doc(params.tensors),
    }
    atomic_write_text(path, json.dumps(doc))


def load_lstm_lm(path) -> LstmLmParams:
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("format") != "trflm-lstm-lm" or doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"not a readable LSTM LM parameter file: {path}")
    return LstmLmParams(LstmLmConfig(**doc["config"]), _tensors_from_doc(doc["tensors"]))


def save_trf_bundle(model: TrfModel, path, potential_file: str,
                    vocab_file: str, reference_file: str | None = None,
                    level: str = "word") -> None:
    """The bundle references the potential parameter file and vocabulary by
    relative path and embeds zeta, the length prior, the reference descriptor,
    and the tokenization level."""
    ref = model.reference
    doc = {
        "format": "trflm-bundle",
        "version": FORMAT_VERSION,
        "potential_file": potential_file,
        "vocab_file": vocab_file,
        "level": level,
        "zeta": model.zeta.tolist(),
        "pi": model.length_prior.probs.tolist(),
        "reference": {"kind": ref.kind, "file": reference_file},
    }
    atomic_write_text(path, json.dumps(doc, indent=1))


def load_trf_bundle(path) -> TrfModel:
    from .corpus import load_vocabulary
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("format") != "trflm-bundle" or doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"not a readable model bundle: {path}")
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    vocab = load_vocabulary(resolve(doc["vocab_file"]))
    potential = NeuralPotential(load_potential(resolve(doc["potential_file"])))
    kind = doc["reference"]["kind"]
    ref_file = doc["reference"].get("file")
    if kind == "uniform":
        reference = UniformReference(len(vocab.payload_ids))
    elif kind == "ngram":
        reference = NgramReference(load_ngram(resolve(ref_file)))
    elif kind == "lstm":
        reference = LstmReference(load_lstm_lm(resolve(ref_file)))
    else:
        raise ValueError(f"unknown reference kind: {kind!r}")
    model = TrfModel(potential, np.array(doc["zeta"]), LengthPrior(np.array(doc["pi"])),
                     reference, vocab)
    model.level = doc.get("level", "word")
    return model
