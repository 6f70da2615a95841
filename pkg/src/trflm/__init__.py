"""Whole-sentence random field language models over (length, sequence) pairs,
trained by noise-contrastive estimation with jointly learned per-length
normalizers, verified at small scale against exact brute-force partition
functions."""

__version__ = "0.1.0"
