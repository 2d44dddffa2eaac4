"""Shared domain types, log-domain arithmetic, file IO and WER."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from . import kernels

NEG_INF = -math.inf
WORD_BOUNDARY = "▁"

MODEL_HEADER = "CASCADE-MODEL v1"
ENCODER_HEADER = "CASCADE-ENCODER v1"


class ModelFormatError(ValueError):
    """A model or encoder file does not follow the text format."""


class ModelValidationError(ValueError):
    """A parsed model violates a structural constraint."""


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Vocab:
    """Wordpiece vocabulary; blank is the extra id ``size`` past the labels."""

    token_strings: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.token_strings)) != len(self.token_strings):
            raise ModelValidationError("token strings must be unique")
        for tok in self.token_strings:
            if not tok or any(ch.isspace() for ch in tok):
                raise ModelValidationError(f"invalid token string {tok!r}")

    @property
    def size(self) -> int:
        return len(self.token_strings)

    @property
    def blank_id(self) -> int:
        return len(self.token_strings)

    def detokenize(self, ids: Iterable[int]) -> str:
        out = []
        for i in ids:
            tok = self.token_strings[i]
            if tok.startswith(WORD_BOUNDARY):
                out.append(" " + tok[len(WORD_BOUNDARY):])
            else:
                out.append(tok)
        return " ".join("".join(out).split())

    def tokenize(self, text: str) -> list[int]:
        """Greedy longest-match wordpiece segmentation.

        Raises ValueError when some word cannot be covered by the vocabulary.
        """
        index = {tok: i for i, tok in enumerate(self.token_strings)}
        longest = max(len(t) for t in self.token_strings)
        ids: list[int] = []
        for word in text.split():
            rest = WORD_BOUNDARY + word
            while rest:
                for end in range(min(len(rest), longest), 0, -1):
                    if rest[:end] in index:
                        ids.append(index[rest[:end]])
                        rest = rest[end:]
                        break
                else:
                    raise ValueError(f"cannot tokenize {word!r} with this vocabulary")
        return ids


@dataclass(frozen=True)
class FusionWeights:
    """Log-linear weights: external LM (lambda1), ILM (lambda2), context (beta)."""

    lambda1: float = 0.0
    lambda2: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "beta"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


@dataclass(frozen=True, eq=False)
class PredictionNetParams:
    embedding: np.ndarray  # (|V|, d_e)
    position_vectors: np.ndarray  # (H, N, d_e); [:, i-1] weights label y_{u-i}
    projection: np.ndarray  # (d_e, d_e), applied as a @ projection
    proj_bias: np.ndarray  # (d_e,)

    @property
    def num_heads(self) -> int:
        return self.position_vectors.shape[0]

    @property
    def context_size(self) -> int:
        return self.position_vectors.shape[1]

    @property
    def dim(self) -> int:
        return self.embedding.shape[1]


@dataclass(frozen=True, eq=False)
class JointParams:
    enc_proj: np.ndarray  # (d_enc, d_h)
    pred_proj: np.ndarray  # (d_e, d_h)
    bias: np.ndarray  # (d_h,)
    blank_row: np.ndarray  # (d_h,)
    tied_embedding: np.ndarray  # the prediction network's table, not a copy

    @property
    def label_softmax(self) -> np.ndarray:
        """(d_h, |V|) output matrix; a transpose view of the embedding table."""
        return self.tied_embedding.T

    @property
    def hidden_dim(self) -> int:
        return self.pred_proj.shape[1]


@dataclass(frozen=True, eq=False)
class ModelParams:
    vocab: Vocab
    prediction: PredictionNetParams
    joint: JointParams

    def __post_init__(self):
        _validate_model(self)

    @property
    def d_e(self) -> int:
        return self.prediction.dim

    @property
    def d_h(self) -> int:
        return self.joint.hidden_dim

    @property
    def d_enc(self) -> int:
        return self.joint.enc_proj.shape[0]

    @classmethod
    def build(
        cls,
        vocab: Vocab,
        embedding,
        position_vectors,
        projection,
        proj_bias,
        enc_proj,
        pred_proj,
        joint_bias,
        blank_row,
    ) -> "ModelParams":
        """Assemble a model, wiring the tied softmax to the embedding table."""
        embedding = np.array(embedding, dtype=np.float64)
        prediction = PredictionNetParams(
            embedding=embedding,
            position_vectors=np.array(position_vectors, dtype=np.float64),
            projection=np.array(projection, dtype=np.float64),
            proj_bias=np.array(proj_bias, dtype=np.float64).reshape(-1),
        )
        joint = JointParams(
            enc_proj=np.array(enc_proj, dtype=np.float64),
            pred_proj=np.array(pred_proj, dtype=np.float64),
            bias=np.array(joint_bias, dtype=np.float64).reshape(-1),
            blank_row=np.array(blank_row, dtype=np.float64).reshape(-1),
            tied_embedding=embedding,
        )
        return cls(vocab=vocab, prediction=prediction, joint=joint)


def _validate_model(m: ModelParams) -> None:
    p, j = m.prediction, m.joint
    v, d_e = p.embedding.shape
    d_h = j.pred_proj.shape[1]
    if d_e != d_h:
        raise ModelValidationError(f"tying requires d_e=d_h (got d_e={d_e}, d_h={d_h})")
    if j.tied_embedding is not p.embedding:
        raise ModelValidationError("joint softmax must be tied to the embedding table")
    if v != m.vocab.size:
        raise ModelValidationError(f"embedding has {v} rows, vocab has {m.vocab.size}")
    expected = {
        "position_vectors": (p.position_vectors.ndim == 3 and p.position_vectors.shape[2] == d_e),
        "projection": p.projection.shape == (d_e, d_e),
        "proj_bias": p.proj_bias.shape == (d_e,),
        "enc_proj": j.enc_proj.ndim == 2 and j.enc_proj.shape[1] == d_h,
        "pred_proj": j.pred_proj.shape == (d_e, d_h),
        "bias": j.bias.shape == (d_h,),
        "blank_row": j.blank_row.shape == (d_h,),
    }
    for name, ok in expected.items():
        if not ok:
            raise ModelValidationError(f"{name} has the wrong shape")
    if p.num_heads < 1 or p.context_size < 1:
        raise ModelValidationError("heads and context must be >= 1")
    for arr in (p.embedding, p.position_vectors, p.projection, p.proj_bias,
                j.enc_proj, j.pred_proj, j.bias, j.blank_row):
        if not np.all(np.isfinite(arr)):
            raise ModelValidationError("model weights must be finite")


@dataclass(frozen=True, eq=False)
class EncoderOutputs:
    causal: np.ndarray  # (T, d_enc), ce_t
    noncausal: np.ndarray  # (T, d_enc), nce_t
    right_context: int = 0

    def __post_init__(self):
        if self.causal.shape != self.noncausal.shape or self.causal.ndim != 2:
            raise ModelValidationError("causal and noncausal must both be T x d_enc")
        if self.right_context < 0:
            raise ModelValidationError("right_context must be >= 0")
        if not (np.all(np.isfinite(self.causal)) and np.all(np.isfinite(self.noncausal))):
            raise ModelValidationError("encoder outputs must be finite")

    @property
    def num_frames(self) -> int:
        return self.causal.shape[0]


# ---------------------------------------------------------------------------
# log arithmetic and metrics
# ---------------------------------------------------------------------------


def log_sum_exp(values: Sequence[float]) -> float:
    """Stable log(sum(exp(values))); -inf entries are legal."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("log_sum_exp of an empty sequence")
    if np.isnan(arr).any():
        raise ValueError("log_sum_exp got NaN")
    top = float(arr.max())
    if math.isinf(top):
        return top
    return top + math.log(float(np.exp(arr - top).sum()))


class WerResult(NamedTuple):
    substitutions: int
    insertions: int
    deletions: int
    wer: float


def word_error_rate(reference: Sequence[str], hypothesis: Sequence[str]) -> WerResult:
    if len(reference) == 0:
        raise ValueError("reference must be non-empty")
    ids: dict[str, int] = {}
    ref = [ids.setdefault(w, len(ids)) for w in reference]
    hyp = [ids.setdefault(w, len(ids)) for w in hypothesis]
    s, i, d = kernels.edit_counts(ref, hyp)
    return WerResult(int(s), int(i), int(d), (s + i + d) / len(reference))


# ---------------------------------------------------------------------------
# text file format
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def _matrix_block(name: str, mat: np.ndarray) -> list[str]:
    mat = np.atleast_2d(mat)
    lines = [f"matrix {name} {mat.shape[0]} {mat.shape[1]}"]
    lines += [" ".join(_fmt(x) for x in row) for row in mat]
    return lines


class _Reader:
    def __init__(self, text: str, source: str):
        self.lines = [ln.strip() for ln in text.splitlines()]
        self.pos = 0
        self.source = source

    def error(self, msg: str) -> ModelFormatError:
        return ModelFormatError(f"{self.source}:{self.pos}: {msg}")

    def next(self, what: str) -> str:
        while self.pos < len(self.lines):
            line = self.lines[self.pos]
            self.pos += 1
            if line and not line.startswith("#"):
                return line
        raise self.error(f"unexpected end of file while reading {what}")

    def at_end(self) -> bool:
        while self.pos < len(self.lines) and (not self.lines[self.pos] or self.lines[self.pos].startswith("#")):
            self.pos += 1
        return self.pos >= len(self.lines)

    def matrix(self, header: str) -> tuple[str, np.ndarray]:
        parts = header.split()
        if len(parts) != 4 or parts[0] != "matrix":
            raise self.error(f"expected 'matrix <name> <rows> <cols>', got {header!r}")
        name = parts[1]
        try:
            rows, cols = int(parts[2]), int(parts[3])
        except ValueError:
            raise self.error(f"matrix {name!r}: bad dimensions") from None
        data = np.empty((rows, cols))
        for r in range(rows):
            fields = self.next(f"matrix {name!r} row {r}").split()
            if len(fields) != cols:
                raise self.error(f"matrix {name!r} row {r}: expected {cols} values, got {len(fields)}")
            try:
                data[r] = [float(f) for f in fields]
            except ValueError:
                raise self.error(f"matrix {name!r} row {r}: non-numeric value") from None
        return name, data


_DIMS_RE = re.compile(r"^dims d_e=(\d+) d_h=(\d+) d_enc=(\d+) heads=(\d+) context=(\d+)$")


def dump_model(params: ModelParams) -> str:
    p, j = params.prediction, params.joint
    lines = [MODEL_HEADER, f"vocab {params.vocab.size}"]
    lines += [f"token {i} {tok}" for i, tok in enumerate(params.vocab.token_strings)]
    lines.append(
        f"dims d_e={params.d_e} d_h={params.d_h} d_enc={params.d_enc} "
        f"heads={p.num_heads} context={p.context_size}"
    )
    lines += _matrix_block("embedding", p.embedding)
    for k in range(p.num_heads):
        for i in range(1, p.context_size + 1):
            lines += _matrix_block(f"pv_h{k}_p{i}", p.position_vectors[k, i - 1])
    lines += _matrix_block("pred_proj", p.projection)
    lines += _matrix_block("pred_bias", p.proj_bias)
    lines += _matrix_block("joint_enc_proj", j.enc_proj)
    lines += _matrix_block("joint_pred_proj", j.pred_proj)
    lines += _matrix_block("joint_bias", j.bias)
    lines += _matrix_block("blank_row", j.blank_row)
    return "\n".join(lines) + "\n"


def parse_model(text: str, source: str = "<model>") -> ModelParams:
    rd = _Reader(text, source)
    if rd.next("header") != MODEL_HEADER:
        raise rd.error(f"header: expected {MODEL_HEADER!r}")
    parts = rd.next("vocab").split()
    if len(parts) != 2 or parts[0] != "vocab" or not parts[1].isdigit():
        raise rd.error("vocab: expected 'vocab <size>'")
    size = int(parts[1])
    tokens = []
    for i in range(size):
        parts = rd.next(f"token {i}").split()
        if len(parts) != 3 or parts[0] != "token" or parts[1] != str(i):
            raise rd.error(f"token: expected 'token {i} <string>'")
        tokens.append(parts[2])
    m = _DIMS_RE.match(rd.next("dims"))
    if not m:
        raise rd.error("dims: expected 'dims d_e=<n> d_h=<n> d_enc=<n> heads=<H> context=<N>'")
    d_e, d_h, d_enc, heads, context = (int(g) for g in m.groups())
    if d_e != d_h:
        raise ModelValidationError(f"tying requires d_e=d_h (got d_e={d_e}, d_h={d_h})")
    blocks: dict[str, np.ndarray] = {}
    while not rd.at_end():
        name, mat = rd.matrix(rd.next("matrix"))
        if name in blocks:
            raise rd.error(f"matrix {name!r} appears twice")
        blocks[name] = mat

    def take(name: str, shape: tuple[int, int]) -> np.ndarray:
        if name not in blocks:
            raise ModelFormatError(f"{source}: missing matrix {name!r}")
        mat = blocks[name]
        if mat.shape != shape:
            raise ModelValidationError(f"matrix {name!r} has shape {mat.shape}, expected {shape}")
        return mat

    pv = np.empty((heads, context, d_e))
    for k in range(heads):
        for i in range(1, context + 1):
            pv[k, i - 1] = take(f"pv_h{k}_p{i}", (1, d_e))[0]
    return ModelParams.build(
        vocab=Vocab(tuple(tokens)),
        embedding=take("embedding", (size, d_e)),
        position_vectors=pv,
        projection=take("pred_proj", (d_e, d_e)),
        proj_bias=take("pred_bias", (1, d_e)),
        enc_proj=take("joint_enc_proj", (d_enc, d_h)),
        pred_proj=take("joint_pred_proj", (d_e, d_h)),
        joint_bias=take("joint_bias", (1, d_h)),
        blank_row=take("blank_row", (1, d_h)),
    )


def load_model(path) -> ModelParams:
    path = Path(path)
    return parse_model(path.read_text(encoding="utf-8"), source=str(path))


def save_model(params: ModelParams, path) -> None:
    Path(path).write_text(dump_model(params), encoding="utf-8")


def dump_encoder(enc: EncoderOutputs) -> str:
    lines = [ENCODER_HEADER, f"right_context {enc.right_context}"]
    lines += _matrix_block("causal", enc.causal)
    lines += _matrix_block("noncausal", enc.noncausal)
    return "\n".join(lines) + "\n"


def parse_encoder(text: str, source: str = "<encoder>") -> EncoderOutputs:
    rd = _Reader(text, source)
    blocks: dict[str, np.ndarray] = {}
    right_context = None
    while not rd.at_end():
        line = rd.next("encoder block")
        if line == ENCODER_HEADER:
            continue
        if line.startswith("right_context"):
            parts = line.split()
            if len(parts) != 2 or not parts[1].isdigit():
                raise rd.error("right_context: expected 'right_context <R>'")
            right_context = int(parts[1])
            continue
        name, mat = rd.matrix(line)
        blocks[name] = mat
    for name in ("causal", "noncausal"):
        if name not in blocks:
            raise ModelFormatError(f"{source}: missing matrix {name!r}")
    if right_context is None:
        raise ModelFormatError(f"{source}: missing right_context line")
    return EncoderOutputs(blocks["causal"], blocks["noncausal"], right_context)


def load_encoder(path) -> EncoderOutputs:
    path = Path(path)
    return parse_encoder(path.read_text(encoding="utf-8"), source=str(path))


def save_encoder(enc: EncoderOutputs, path) -> None:
    Path(path).write_text(dump_encoder(enc), encoding="utf-8")
