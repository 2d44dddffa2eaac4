"""Frame-synchronous transducer beam search with HAT shallow fusion.

One decoder (one ``ModelParams``) serves both the causal and the non-causal
encoder outputs. Hypotheses with the same label sequence are merged by
log-adding their posteriors; ILM and context scores are functions of the
label sequence, so the merge is exact and a wide enough beam reproduces the
forward algorithm.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from . import kernels
from .biasing import ROOT, ContextualModel
from .core import FusionWeights, ModelParams, Vocab
from .hat_joint import ScoreDelta, enc_contribution, fused_token_score, pred_contribution
from .prediction_net import predict

NEG_INF = -math.inf
PASSES = ("causal", "noncausal")


@dataclass(frozen=True)
class ScoreBreakdown:
    log_posterior: float = 0.0
    log_ilm: float = 0.0
    log_lm: float = 0.0
    log_context: float = 0.0
    combined: float = 0.0

    @classmethod
    def combine(cls, log_posterior, log_ilm, log_lm, log_context, weights: FusionWeights):
        combined = fused_token_score(
            ScoreDelta(log_posterior, log_ilm, log_lm, log_context), weights
        )
        return cls(log_posterior, log_ilm, log_lm, log_context, combined)

    def reweighted(self, weights: FusionWeights) -> "ScoreBreakdown":
        return self.combine(self.log_posterior, self.log_ilm, self.log_lm, self.log_context, weights)


@dataclass(frozen=True)
class Hypothesis:
    labels: tuple[int, ...] = ()
    scores: ScoreBreakdown = field(default_factory=ScoreBreakdown)
    context_state: int = ROOT
    frame_index: int = -1


@dataclass(frozen=True)
class BeamConfig:
    beam_size: int = 8
    max_expansions_per_frame: int = 2
    weights: FusionWeights = field(default_factory=FusionWeights)
    # whether lambda2 is applied during the search as well as at rescoring
    ilm_in_search: bool = False

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.max_expansions_per_frame < 1:
            raise ValueError("max_expansions_per_frame must be >= 1")

    def search_weights(self) -> FusionWeights:
        # the external LM never enters the beam search
        return FusionWeights(
            lambda1=0.0,
            lambda2=self.weights.lambda2 if self.ilm_in_search else 0.0,
            beta=self.weights.beta,
        )


@dataclass(frozen=True)
class NBestList:
    entries: tuple[Hypothesis, ...]
    pass_source: str = "causal"

    def __post_init__(self):
        if self.pass_source not in PASSES:
            raise ValueError(f"unknown pass {self.pass_source!r}")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def top(self) -> Hypothesis:
        return self.entries[0]


def rank_key(hyp: Hypothesis):
    return (-hyp.scores.combined, len(hyp.labels), hyp.labels)


def _log_add(a: float, b: float) -> float:
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    hi, lo = (a, b) if a >= b else (b, a)
    return hi + math.log1p(math.exp(lo - hi))


class PredictionCache:
    """Per-session memo of prediction-side quantities keyed by the last N labels."""

    def __init__(self, params: ModelParams):
        self.params = params
        self.n = params.prediction.context_size
        self._store: dict[tuple[int, ...], tuple[np.ndarray, np.ndarray]] = {}

    def lookup(self, histories: Sequence[tuple[int, ...]]):
        """Return stacked joint pred contributions and ILM log-softmax rows."""
        keys = [h[-self.n:] if h else () for h in histories]
        missing = list(dict.fromkeys(k for k in keys if k not in self._store))
        if missing:
            p = self.params
            zero = np.zeros(p.d_h)
            for k in missing:
                part = pred_contribution(predict(k, p.prediction), p)
                # one row at a time so the ILM bits never depend on batch shape
                _, _, ilm = kernels.joint_scores(
                    zero, part[None, :], p.joint.tied_embedding, p.joint.blank_row
                )
                self._store[k] = (part, ilm[0])
        parts = np.stack([self._store[k][0] for k in keys])
        ilm = np.stack([self._store[k][1] for k in keys])
        return parts, ilm


def _merge(pool: dict, hyp: Hypothesis, weights: FusionWeights) -> None:
    old = pool.get(hyp.labels)
    if old is None:
        pool[hyp.labels] = hyp
        return
    s = old.scores
    lp = _log_add(s.log_posterior, hyp.scores.log_posterior)
    pool[hyp.labels] = replace(
        old, scores=ScoreBreakdown.combine(lp, s.log_ilm, s.log_lm, s.log_context, weights)
    )


def _prune(pool: dict, beam_size: int) -> list[Hypothesis]:
    return sorted(pool.values(), key=rank_key)[:beam_size]


def decode_step(
    beam: Sequence[Hypothesis],
    enc_frame,
    params: ModelParams,
    config: BeamConfig,
    context: Optional[ContextualModel] = None,
    cache: Optional[PredictionCache] = None,
) -> list[Hypothesis]:
    """Consume one encoder frame: up to ``max_expansions_per_frame`` labels, then blank."""
    if not beam:
        raise ValueError("beam must be non-empty")
    cache = cache or PredictionCache(params)
    weights = config.search_weights()
    use_context = context is not None and weights.beta != 0
    enc_part = enc_contribution(enc_frame, params)
    frame = beam[0].frame_index + 1

    frontier = list(beam)
    advanced: dict[tuple[int, ...], Hypothesis] = {}
    for level in range(config.max_expansions_per_frame + 1):
        parts, ilm = cache.lookup([h.labels for h in frontier])
        log_blank, log_not_blank, label_lsm = kernels.joint_scores(
            enc_part, parts, params.joint.tied_embedding, params.joint.blank_row
        )
        expanded: dict[tuple[int, ...], Hypothesis] = {}
        for i, hyp in enumerate(frontier):
            s = hyp.scores
            blank_lp = s.log_posterior + float(log_blank[i])
            _merge(
                advanced,
                Hypothesis(
                    hyp.labels,
                    ScoreBreakdown.combine(blank_lp, s.log_ilm, s.log_lm, s.log_context, weights),
                    hyp.context_state,
                    frame,
                ),
                weights,
            )
            if level == config.max_expansions_per_frame:
                continue
            label_lp = s.log_posterior + float(log_not_blank[i]) + label_lsm[i]
            label_ilm = s.log_ilm + ilm[i]
            for y in range(params.vocab.size):
                ctx_state, ctx = hyp.context_state, s.log_context
                if use_context:
                    ctx_state, delta = context.step(ctx_state, y)
                    ctx = ctx + delta
                _merge(
                    expanded,
                    Hypothesis(
                        hyp.labels + (y,),
                        ScoreBreakdown.combine(
                            float(label_lp[y]), float(label_ilm[y]), s.log_lm, ctx, weights
                        ),
                        ctx_state,
                        hyp.frame_index,
                    ),
                    weights,
                )
        if not expanded:
            break
        frontier = _prune(expanded, config.beam_size)
    return _prune(advanced, config.beam_size)


class DecodingSession:
    """Incremental decoder for one pass; owns its beam and prediction cache."""

    def __init__(
        self,
        params: ModelParams,
        config: BeamConfig,
        context: Optional[ContextualModel] = None,
        pass_source: str = "causal",
    ):
        self.params = params
        self.config = config
        self.context = context
        self.pass_source = pass_source
        self.cache = PredictionCache(params)
        self.beam: list[Hypothesis] = [Hypothesis()]

    @property
    def frames_consumed(self) -> int:
        return self.beam[0].frame_index + 1

    def blank_probability(self, enc_frame) -> float:
        """Blank mass of the current top hypothesis on ``enc_frame``."""
        parts, _ = self.cache.lookup([self.beam[0].labels])
        lb, _, _ = kernels.joint_scores(
            enc_contribution(enc_frame, self.params),
            parts,
            self.params.joint.tied_embedding,
            self.params.joint.blank_row,
        )
        return math.exp(float(lb[0]))

    def step(self, enc_frame) -> list[Hypothesis]:
        self.beam = decode_step(
            self.beam, enc_frame, self.params, self.config, self.context, self.cache
        )
        return self.beam

    def nbest(self) -> NBestList:
        return NBestList(tuple(self.beam), self.pass_source)


def decode_utterance(
    enc,
    params: ModelParams,
    config: BeamConfig,
    context: Optional[ContextualModel] = None,
    pass_source: str = "causal",
) -> NBestList:
    enc = np.asarray(enc, dtype=np.float64)
    if enc.ndim != 2 or enc.shape[0] < 1:
        raise ValueError("encoder output must be a non-empty T x d_enc matrix")
    if enc.shape[1] != params.d_enc:
        raise ValueError(f"encoder dim {enc.shape[1]} does not match model d_enc={params.d_enc}")
    session = DecodingSession(params, config, context, pass_source)
    for frame in enc:
        session.step(frame)
    return session.nbest()


def run_cascade(
    enc,
    params: ModelParams,
    causal_config: BeamConfig,
    noncausal_config: BeamConfig,
    context: Optional[ContextualModel] = None,
    *,
    causal_context: Optional[ContextualModel] = None,
    noncausal_context: Optional[ContextualModel] = None,
    parallel: bool = False,
) -> tuple[NBestList, NBestList]:
    """Decode both passes with the same parameters.

    ``context`` applies to both passes unless a per-pass context is given.
    With ``parallel=True`` the passes run on two threads; they share only
    immutable state.
    """
    jobs = (
        (enc.causal, causal_config, causal_context or context, "causal"),
        (enc.noncausal, noncausal_config, noncausal_context or context, "noncausal"),
    )
    if parallel:
        with ThreadPoolExecutor(max_workers=2) as pool:
            futures = [pool.submit(decode_utterance, m, params, c, ctx, src) for m, c, ctx, src in jobs]
            causal, noncausal = (f.result() for f in futures)
    else:
        causal, noncausal = (decode_utterance(m, params, c, ctx, src) for m, c, ctx, src in jobs)
    return causal, noncausal


def brute_force_posterior(
    enc,
    labels: Sequence[int],
    params: ModelParams,
    max_expansions: Optional[int] = None,
) -> float:
    """Exact log p(y|x) summed over every blank/label alignment.

    ``max_expansions`` caps labels per frame the same way the beam search
    does; ``None`` gives the unconstrained transducer posterior.
    """
    enc = np.asarray(enc, dtype=np.float64)
    labels = tuple(int(y) for y in labels)
    n_frames, n_labels = enc.shape[0], len(labels)
    cap = max_expansions or 0
    if cap and n_labels > n_frames * cap:
        return NEG_INF
    p = params
    parts = np.stack(
        [pred_contribution(predict(labels[:u], p.prediction), p) for u in range(n_labels + 1)]
    )
    log_blank = np.empty((n_frames, n_labels + 1))
    log_emit = np.empty((n_frames, n_labels))
    for t in range(n_frames):
        lb, lnb, lsm = kernels.joint_scores(
            enc_contribution(enc[t], p), parts, p.joint.tied_embedding, p.joint.blank_row
        )
        log_blank[t] = lb
        for u, y in enumerate(labels):
            log_emit[t, u] = lnb[u] + lsm[u, y]
    return kernels.forward_lattice(log_blank, log_emit, cap)


# ---------------------------------------------------------------------------
# n-best wire format (JSON lines)
# ---------------------------------------------------------------------------


def hypothesis_record(hyp: Hypothesis, vocab: Vocab, pass_source: str) -> dict:
    s = hyp.scores
    return {
        "text": vocab.detokenize(hyp.labels),
        "tokens": list(hyp.labels),
        "log_posterior": s.log_posterior,
        "log_ilm": s.log_ilm,
        "log_lm": s.log_lm,
        "log_context": s.log_context,
        "combined": s.combined,
        "pass": pass_source,
    }


def nbest_to_jsonl(nbest: NBestList, vocab: Vocab) -> str:
    return "".join(
        json.dumps(hypothesis_record(h, vocab, nbest.pass_source)) + "\n" for h in nbest
    )


def nbest_from_records(records: Iterable[dict]) -> dict[str, NBestList]:
    """Group n-best records by pass, keeping file order within each pass."""
    grouped: dict[str, list[Hypothesis]] = {}
    for rec in records:
        scores = ScoreBreakdown(
            float(rec["log_posterior"]),
            float(rec["log_ilm"]),
            float(rec["log_lm"]),
            float(rec["log_context"]),
            float(rec["combined"]),
        )
        grouped.setdefault(rec["pass"], []).append(
            Hypothesis(tuple(int(t) for t in rec["tokens"]), scores)
        )
    return {k: NBestList(tuple(v), k) for k, v in grouped.items()}
