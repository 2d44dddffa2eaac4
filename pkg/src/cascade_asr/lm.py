"""External causal LM contract, a reference backoff n-gram LM, n-best rescoring."""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Optional, Protocol, Sequence

from .biasing import ContextualModel, context_score_sequence
from .core import FusionWeights
from .decoder import NBestList, ScoreBreakdown

EOS = -1  # LM-only end of sequence; the decoder never emits it
BOS = -2  # context-only start symbol
_SYMBOLS = {"</s>": EOS, "<s>": BOS}
_NAMES = {v: k for k, v in _SYMBOLS.items()}
NGRAM_HEADER = "NGRAM v1"


class CausalLmScorer(Protocol):
    vocab_size: int

    def score(self, history: Sequence[int], next_token: int) -> float:
        """log p(next_token | history), using left context only."""


@dataclass(frozen=True)
class NGramLm:
    """Backoff n-gram LM in natural-log units.

    ``probs`` maps full n-gram tuples (context + word) to log-probabilities,
    ``backoffs`` maps context tuples to log backoff weights. Histories are
    left-padded with a single BOS.
    """

    order: int
    vocab_size: int
    probs: dict[tuple[int, ...], float]
    backoffs: dict[tuple[int, ...], float]

    def _check(self, history: Sequence[int], next_token: int) -> None:
        for y in history:
            if not 0 <= y < self.vocab_size:
                raise ValueError(f"history token {y} outside the vocabulary")
        if next_token != EOS and not 0 <= next_token < self.vocab_size:
            raise ValueError(f"token {next_token} outside the vocabulary")

    def score(self, history: Sequence[int], next_token: int) -> float:
        self._check(history, next_token)
        ctx = ((BOS,) + tuple(history))[-(self.order - 1):] if self.order > 1 else ()
        return self._lookup(ctx, next_token)

    def _lookup(self, ctx: tuple[int, ...], word: int) -> float:
        penalty = 0.0
        while True:
            lp = self.probs.get(ctx + (word,))
            if lp is not None:
                return penalty + lp
            if not ctx:
                return -math.inf
            penalty += self.backoffs.get(ctx, 0.0)
            ctx = ctx[1:]

    def contexts(self) -> set[tuple[int, ...]]:
        """Every context that has explicit entries or a backoff weight."""
        out = {k[:-1] for k in self.probs}
        out.update(self.backoffs)
        return out


def uniform_lm(vocab_size: int) -> NGramLm:
    lp = -math.log(vocab_size + 1)
    probs = {(w,): lp for w in range(vocab_size)}
    probs[(EOS,)] = lp
    return NGramLm(1, vocab_size, probs, {})


def estimate_ngram(
    sentences: Iterable[Sequence[int]], order: int, vocab_size: int, discount: float = 0.5
) -> NGramLm:
    """Absolute-discount backoff estimate with add-one unigrams.

    Backoff weights are solved so that every context's distribution over the
    vocabulary plus EOS sums to one. A context that has seen every word keeps
    its maximum-likelihood estimate and gets no backoff weight.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    if not 0 < discount < 1:
        raise ValueError("discount must be in (0, 1)")
    counts = [Counter() for _ in range(order + 1)]
    for sent in sentences:
        padded = (BOS,) + tuple(int(t) for t in sent) + (EOS,)
        for i in range(1, len(padded)):
            for k in range(1, order + 1):
                if i - k + 1 < 0:
                    break
                counts[k][padded[i - k + 1 : i + 1]] += 1
    words = list(range(vocab_size)) + [EOS]
    total = sum(counts[1][(w,)] for w in words)
    probs = {(w,): math.log((counts[1][(w,)] + 1) / (total + len(words))) for w in words}
    backoffs: dict[tuple[int, ...], float] = {}
    lm = NGramLm(1, vocab_size, probs, backoffs)
    for k in range(2, order + 1):
        by_ctx: dict[tuple[int, ...], dict[int, int]] = defaultdict(dict)
        for gram, c in counts[k].items():
            by_ctx[gram[:-1]][gram[-1]] = c
        for ctx in sorted(by_ctx, key=_sort_key):
            followers = by_ctx[ctx]
            ctx_total = sum(followers.values())
            unseen = [w for w in words if w not in followers]
            if not unseen:
                # nothing left to back off to: keep the undiscounted estimate
                for w, c in followers.items():
                    probs[ctx + (w,)] = math.log(c / ctx_total)
                continue
            seen_mass = 0.0
            for w, c in followers.items():
                p = (c - discount) / ctx_total
                probs[ctx + (w,)] = math.log(p)
                seen_mass += p
            lower_mass = sum(math.exp(lm._lookup(ctx[1:], w)) for w in unseen)
            backoffs[ctx] = math.log((1.0 - seen_mass) / lower_mass)
        lm = NGramLm(k, vocab_size, probs, backoffs)
    return lm


def _sort_key(gram: tuple[int, ...]):
    return tuple(t if t >= 0 else t + 1_000_000 for t in gram)


def _tok(t: int) -> str:
    return _NAMES.get(t, str(t))


def dump_ngram(lm: NGramLm) -> str:
    lines = [f"{NGRAM_HEADER} order={lm.order}"]
    entries = set(lm.probs) | set(lm.backoffs)
    for gram in sorted(entries, key=lambda g: (len(g), _sort_key(g))):
        lp = lm.probs.get(gram, -math.inf)
        fields = [repr(lp)] + [_tok(t) for t in gram]
        if gram in lm.backoffs:
            fields.append(repr(lm.backoffs[gram]))
        lines.append(" ".join(fields))
    return "\n".join(lines) + "\n"


def _is_token(field: str) -> bool:
    return field.isdigit() or field in _SYMBOLS


def parse_ngram(text: str, source: str = "<ngram>") -> NGramLm:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise ValueError(f"{source}: empty n-gram file")
    head = lines[0].split()
    if len(head) != 3 or " ".join(head[:2]) != NGRAM_HEADER or not head[2].startswith("order="):
        raise ValueError(f"{source}: header must be '{NGRAM_HEADER} order=<n>'")
    order = int(head[2][len("order="):])
    probs: dict[tuple[int, ...], float] = {}
    backoffs: dict[tuple[int, ...], float] = {}
    for lineno, line in enumerate(lines[1:], 2):
        fields = line.split()
        try:
            lp = float(fields[0])
            toks = fields[1:]
            bo = None
            if toks and not _is_token(toks[-1]):
                bo = float(toks.pop())
            if not toks or not all(_is_token(t) for t in toks) or len(toks) > order:
                raise ValueError
        except (ValueError, IndexError):
            raise ValueError(f"{source}: line {lineno}: expected '<logprob> <token ids...> [backoff]'") from None
        gram = tuple(_SYMBOLS[t] if t in _SYMBOLS else int(t) for t in toks)
        if lp != -math.inf or gram[-1] != BOS:
            probs[gram] = lp
        if bo is not None:
            backoffs[gram] = bo
    ids = [g[0] for g in probs if len(g) == 1 and g[0] >= 0]
    vocab_size = max(ids) + 1 if ids else 0
    return NGramLm(order, vocab_size, probs, backoffs)


def load_ngram(path) -> NGramLm:
    path = Path(path)
    return parse_ngram(path.read_text(encoding="utf-8"), str(path))


def save_ngram(lm: NGramLm, path) -> None:
    Path(path).write_text(dump_ngram(lm), encoding="utf-8")


def lm_score_sequence(labels: Sequence[int], lm: CausalLmScorer) -> float:
    labels = list(labels)
    total = 0.0
    for u, y in enumerate(labels):
        total += lm.score(labels[:u], y)
    return total + lm.score(labels, EOS)


def rescore_nbest(
    nbest: NBestList,
    lm: Optional[CausalLmScorer],
    weights: FusionWeights,
    context: Optional[ContextualModel] = None,
) -> NBestList:
    """Whole-hypothesis rescoring with the external LM.

    The contextual score is recomputed from scratch when a context model is
    given so that rescoring does not undo biasing; otherwise the decoder's
    value is kept. The re-sort is stable.
    """
    rescored = []
    for hyp in nbest:
        s = hyp.scores
        lm_score = lm_score_sequence(hyp.labels, lm) if lm is not None else s.log_lm
        ctx = context_score_sequence(hyp.labels, context) if context is not None else s.log_context
        scores = ScoreBreakdown.combine(s.log_posterior, s.log_ilm, lm_score, ctx, weights)
        rescored.append(replace(hyp, scores=scores))
    rescored.sort(key=lambda h: -h.scores.combined)
    return NBestList(tuple(rescored), nbest.pass_source)
