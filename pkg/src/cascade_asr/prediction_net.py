"""Stateless embedding prediction network.

The conditioning vector depends only on the last N non-blank labels: each
head weights the looked-up embeddings elementwise by its fixed position
vectors and averages over positions, the heads are averaged, and the result
goes through a projection and Swish.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from .core import PredictionNetParams

__all__ = [
    "PredictionNetParams",
    "PredictionVector",
    "swish",
    "check_history",
    "head_averages",
    "head_average",
    "predict",
]


class PredictionVector(NamedTuple):
    r: np.ndarray  # post-projection, post-Swish output
    a_final: np.ndarray  # head-averaged embedding before projection


def swish(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    sig = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return x * sig


def check_history(history: Sequence[int], params: PredictionNetParams) -> tuple[int, ...]:
    """Validate label ids and keep only the last N of them (oldest first)."""
    vocab_size = params.embedding.shape[0]
    for y in history:
        if not 0 <= y < vocab_size:
            raise ValueError(f"label {y} is blank or outside the vocabulary")
    return tuple(history[-params.context_size:]) if len(history) else ()


def head_averages(history: Sequence[int], params: PredictionNetParams) -> np.ndarray:
    """All heads' position-weighted averages, shape (H, d_e).

    Missing history positions contribute zero vectors; the average always
    divides by N.
    """
    hist = check_history(history, params)
    n = params.context_size
    if not hist:
        return np.zeros((params.num_heads, params.dim))
    # position i (1-based) holds y_{u-i}, so walk the history newest first
    newest_first = np.asarray(hist[::-1], dtype=np.intp)
    emb = params.embedding[newest_first]  # (L, d_e)
    pv = params.position_vectors[:, : len(hist), :]  # (H, L, d_e)
    return (pv * emb[None, :, :]).sum(axis=1) / n


def head_average(history: Sequence[int], params: PredictionNetParams, head: int) -> np.ndarray:
    if not 0 <= head < params.num_heads:
        raise ValueError(f"head {head} out of range")
    return head_averages(history, params)[head]


def predict(history: Sequence[int], params: PredictionNetParams) -> PredictionVector:
    heads = head_averages(history, params)
    # mean taken as offsets from head 0 so identical heads reduce exactly
    a_final = heads[0] + (heads - heads[0]).mean(axis=0)
    r = swish(a_final @ params.projection + params.proj_bias)
    return PredictionVector(r=r, a_final=a_final)
