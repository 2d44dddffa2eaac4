"""Seeded fixture generators: random models, scripted scenarios, file sets.

All randomness in the package lives here, behind explicit seeds.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import EncoderOutputs, ModelParams, Vocab, save_encoder, save_model
from .lm import estimate_ngram, save_ngram
from .prediction_net import swish

WORDS = (
    "▁navigate", "▁to", "▁home", "▁work", "▁call", "▁mom", "▁dad", "▁play",
    "▁music", "▁set", "▁a", "▁timer", "▁for", "▁five", "▁minutes", "▁weather",
)
MAX_VOCAB = 16
MAX_FRAMES = 32


def random_model(
    rng: np.random.Generator,
    vocab_size: int,
    dim: int,
    d_enc: Optional[int] = None,
    heads: int = 2,
    context: int = 5,
    scale: float = 1.0,
) -> ModelParams:
    """Random finite weights; position vectors are unit-variance normals."""
    d_enc = d_enc or dim
    vocab = Vocab(tuple(WORDS[:vocab_size]) if vocab_size <= len(WORDS)
                  else tuple(f"▁w{i}" for i in range(vocab_size)))
    return ModelParams.build(
        vocab=vocab,
        embedding=rng.normal(0.0, scale, (vocab_size, dim)),
        position_vectors=rng.normal(0.0, 1.0, (heads, context, dim)),
        projection=rng.normal(0.0, scale / np.sqrt(dim), (dim, dim)),
        proj_bias=rng.normal(0.0, 0.1 * scale, dim),
        enc_proj=rng.normal(0.0, scale / np.sqrt(d_enc), (d_enc, dim)),
        pred_proj=rng.normal(0.0, scale / np.sqrt(dim), (dim, dim)),
        joint_bias=rng.normal(0.0, 0.1 * scale, dim),
        blank_row=rng.normal(0.0, scale, dim),
    )


def random_encoder(
    rng: np.random.Generator, frames: int, d_enc: int, right_context: int = 2, refine: float = 0.3
) -> EncoderOutputs:
    causal = rng.normal(0.0, 1.0, (frames, d_enc))
    noncausal = causal + rng.normal(0.0, refine, (frames, d_enc))
    return EncoderOutputs(causal, noncausal, right_context)


# ---------------------------------------------------------------------------
# scripted scenarios
# ---------------------------------------------------------------------------

# speaking token k drives hidden unit k to ~+1; having just emitted k drives
# it back to ~-1. The blank logit is high unless some unit is ~+1.
_SPEAK = 8.0
_LABEL_BIAS = -4.0
_SUPPRESS = 16.0
_EMB = 4.0
_BLANK_GAIN = 10.0


def scripted_model(tokens: Sequence[str] = WORDS[:4], forced_blank: bool = False) -> ModelParams:
    """Hand-built model whose output is dictated by the encoder frames.

    Pair with :func:`scripted_frames`. Each frame either "speaks" one token
    (emitted once, then blank) or is silence (blank). With ``forced_blank``
    the blank probability is 1 everywhere.
    """
    v = len(tokens)
    dim = v + 1  # label units plus one constant unit feeding the blank logit
    emb = np.zeros((v, dim))
    emb[:, :v] = _EMB * np.eye(v)
    r_scale = float(swish(_EMB))
    pred_proj = np.zeros((dim, dim))
    pred_proj[:v, :v] = -(_SUPPRESS / r_scale) * np.eye(v)
    joint_bias = np.full(dim, _LABEL_BIAS)
    joint_bias[v] = 10.0
    blank_row = np.full(dim, -_BLANK_GAIN)
    blank_row[v] = -_BLANK_GAIN * (v - 1)
    if forced_blank:
        blank_row = np.zeros(dim)
        blank_row[v] = 1000.0
    return ModelParams.build(
        vocab=Vocab(tuple(tokens)),
        embedding=emb,
        position_vectors=np.ones((1, 1, dim)),
        projection=np.eye(dim),
        proj_bias=np.zeros(dim),
        enc_proj=np.eye(dim),
        pred_proj=pred_proj,
        joint_bias=joint_bias,
        blank_row=blank_row,
    )


def scripted_frames(script: Sequence[Optional[int]], vocab_size: int) -> np.ndarray:
    """Encoder frames for a script of token ids, ``None`` meaning silence."""
    frames = np.zeros((len(script), vocab_size + 1))
    for t, tok in enumerate(script):
        if tok is not None:
            frames[t, tok] = _SPEAK
    return frames


def scripted_encoder(
    causal_script: Sequence[Optional[int]],
    noncausal_script: Sequence[Optional[int]],
    vocab_size: int,
    right_context: int = 2,
) -> EncoderOutputs:
    return EncoderOutputs(
        scripted_frames(causal_script, vocab_size),
        scripted_frames(noncausal_script, vocab_size),
        right_context,
    )


# ---------------------------------------------------------------------------
# on-disk fixture sets
# ---------------------------------------------------------------------------


def write_fixture_set(
    out_dir,
    seed: int,
    vocab_size: int = 6,
    dim: int = 4,
    frames: int = 8,
    heads: int = 2,
    context: int = 5,
    right_context: int = 2,
    lm_order: int = 2,
) -> dict[str, Path]:
    """Write model, encoder, n-gram LM and bias phrase files for ``seed``."""
    if not 1 <= vocab_size <= MAX_VOCAB:
        raise ValueError(f"vocab size must be in [1, {MAX_VOCAB}]")
    if not 1 <= frames <= MAX_FRAMES:
        raise ValueError(f"frame count must be in [1, {MAX_FRAMES}]")
    rng = np.random.default_rng(seed)
    model = random_model(rng, vocab_size, dim, heads=heads, context=context)
    enc = random_encoder(rng, frames, dim, right_context)
    sentences = [
        rng.integers(0, vocab_size, size=int(rng.integers(1, 6))).tolist() for _ in range(40)
    ]
    lm = estimate_ngram(sentences, lm_order, vocab_size)
    phrases = [rng.integers(0, vocab_size, size=2).tolist() for _ in range(2)]

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "model": out / "model.txt",
        "encoder": out / "encoder.txt",
        "lm": out / "lm.txt",
        "bias": out / "bias.txt",
    }
    save_model(model, paths["model"])
    save_encoder(enc, paths["encoder"])
    save_ngram(lm, paths["lm"])
    paths["bias"].write_text(
        "".join(model.vocab.detokenize(p) + "\n" for p in phrases), encoding="utf-8"
    )
    return paths
