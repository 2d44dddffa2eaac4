"""Contextual biasing as a boosted phrase trie with subtractive failure arcs.

Every arc along a phrase earns ``per_token_boost``. A hypothesis that leaves
the trie before completing a phrase pays back what it earned since the last
completed phrase on its path, then matching restarts at the root with the
same token. The score is therefore a pure function of the label sequence,
which is what lets the decoder merge hypotheses exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

from .core import Vocab

ROOT = 0


class ContextState(NamedTuple):
    node: int = ROOT
    accumulated: float = 0.0


@dataclass(frozen=True)
class ContextualModel:
    per_token_boost: float
    children: tuple[dict[int, int], ...]  # treat as read-only
    failure_refund: tuple[float, ...]  # boost summed from root to node
    anchor_refund: tuple[float, ...]  # refund at the deepest final node on the path (root: 0)
    final: tuple[bool, ...]
    depth: tuple[int, ...]

    @property
    def num_states(self) -> int:
        return len(self.children)

    @property
    def num_arcs(self) -> int:
        return sum(len(c) for c in self.children)

    @property
    def final_states(self) -> frozenset[int]:
        return frozenset(i for i, f in enumerate(self.final) if f)

    def step(self, node: int, token: int) -> tuple[int, float]:
        child = self.children[node].get(token)
        if child is not None:
            return child, self.per_token_boost
        delta = 0.0
        if node != ROOT:
            delta = -(self.failure_refund[node] - self.anchor_refund[node])
            child = self.children[ROOT].get(token)
            if child is not None:
                return child, delta + self.per_token_boost
        return ROOT, delta


def build_context(phrases: Iterable[Sequence[int]], per_token_boost: float) -> ContextualModel:
    if not (math.isfinite(per_token_boost) and per_token_boost > 0):
        raise ValueError("per_token_boost must be a positive finite number")
    children: list[dict[int, int]] = [{}]
    refund = [0.0]
    final = [False]
    depth = [0]
    parent = [ROOT]
    for n, phrase in enumerate(phrases):
        if len(phrase) == 0:
            raise ValueError(f"phrase {n} is empty")
        node = ROOT
        for tok in phrase:
            nxt = children[node].get(tok)
            if nxt is None:
                nxt = len(children)
                children[node][int(tok)] = nxt
                children.append({})
                refund.append(refund[node] + per_token_boost)
                final.append(False)
                depth.append(depth[node] + 1)
                parent.append(node)
            node = nxt
        final[node] = True
    # children are created after parents, so one forward pass fills anchors
    anchor = [0.0] * len(children)
    for i in range(1, len(children)):
        anchor[i] = refund[i] if final[i] else anchor[parent[i]]
    return ContextualModel(
        per_token_boost=float(per_token_boost),
        children=tuple(children),
        failure_refund=tuple(refund),
        anchor_refund=tuple(anchor),
        final=tuple(final),
        depth=tuple(depth),
    )


def advance(state: ContextState, token: int, model: ContextualModel) -> tuple[ContextState, float]:
    node, delta = model.step(state.node, token)
    return ContextState(node, state.accumulated + delta), delta


def context_score_sequence(labels: Sequence[int], model: ContextualModel) -> float:
    """log p_C(y) recomputed from scratch, as at rescoring time."""
    state = ContextState()
    for tok in labels:
        state, _ = advance(state, tok, model)
    return state.accumulated


def load_bias_phrases(path, vocab: Vocab) -> list[list[int]]:
    """Read one phrase per line and tokenize it against ``vocab``."""
    phrases = []
    bad = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            phrases.append(vocab.tokenize(line))
        except ValueError:
            bad.append(f"line {lineno}: {line.strip()!r}")
    if bad:
        raise ValueError("untokenizable bias phrases: " + "; ".join(bad))
    return phrases
