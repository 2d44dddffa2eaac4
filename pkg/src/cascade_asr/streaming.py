"""Streaming two-pass session on a simulated clock.

The causal pass sees frame t at ``(t + 1) * frame_period``; the non-causal
pass needs ``right_context`` more frames and sees it ``R`` periods later.
The causal pass emits partials and decides the endpoint; the final result is
whatever the non-causal pass has decoded by then. Both passes issue prefetch
candidates whenever their top hypothesis text changes, and the hybrid
prefetcher drops candidates that are substrings of the latest valid one.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, NamedTuple, Optional, Sequence

from .biasing import ContextualModel
from .core import EncoderOutputs, ModelParams
from .decoder import BeamConfig, DecodingSession, NBestList
from .lm import CausalLmScorer, rescore_nbest

EVENTS = (
    "frame_available",
    "partial_emitted",
    "endpoint_declared",
    "final_emitted",
    "prefetch_issued",
    "prefetch_hit",
    "prefetch_miss",
)
_PASS_ORDER = {"causal": 0, "noncausal": 1}


def normalize_text(text: str) -> str:
    return " ".join(text.casefold().split())


@dataclass(frozen=True)
class TimelineEvent:
    time_ms: int
    event: str
    pass_source: Optional[str] = None
    text: Optional[str] = None
    frame: Optional[int] = None

    def to_record(self) -> dict:
        return {
            "time_ms": self.time_ms,
            "event": self.event,
            "pass": self.pass_source,
            "text": self.text,
            "frame": self.frame,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "TimelineEvent":
        return cls(int(rec["time_ms"]), rec["event"], rec.get("pass"), rec.get("text"), rec.get("frame"))


@dataclass
class StreamTimeline:
    frame_period_ms: int = 40
    events: list[TimelineEvent] = field(default_factory=list)

    def add(self, time_ms: int, event: str, pass_source=None, text=None, frame=None) -> None:
        if event not in EVENTS:
            raise ValueError(f"unknown event {event!r}")
        self.events.append(TimelineEvent(int(time_ms), event, pass_source, text, frame))

    def validate(self) -> None:
        for a, b in zip(self.events, self.events[1:]):
            if b.time_ms < a.time_ms:
                raise ValueError(f"timeline goes backwards at {a.time_ms} -> {b.time_ms} ms")

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e.to_record()) + "\n" for e in self.events)


@dataclass(frozen=True)
class PrefetchCandidate:
    text: str
    source: str
    issued_at: int
    stale: bool = False


@dataclass(frozen=True)
class EndpointConfig:
    blank_threshold: float = 0.9
    consecutive_frames: int = 3

    def __post_init__(self):
        if not 0 < self.blank_threshold < 1:
            raise ValueError("blank_threshold must be in (0, 1)")
        if self.consecutive_frames < 1:
            raise ValueError("consecutive_frames must be >= 1")


@dataclass(frozen=True)
class LatencyReport:
    endpoint_latency_ms: int
    prefetch_hits: int
    prefetch_misses: int
    saved_latency_ms: int
    final_text: str

    def to_dict(self) -> dict:
        return asdict(self)


class SessionResult(NamedTuple):
    report: LatencyReport
    timeline: StreamTimeline
    nbest: NBestList


def detect_endpoint(recent_blank_mass: Sequence[float], config: EndpointConfig) -> bool:
    if len(recent_blank_mass) == 0:
        raise ValueError("need at least one blank mass")
    k = config.consecutive_frames
    if len(recent_blank_mass) < k:
        return False
    return all(m > config.blank_threshold for m in recent_blank_mass[-k:])


def is_stale(candidate_text: str, latest_valid_prefetch: Optional[str]) -> bool:
    if latest_valid_prefetch is None:
        return False
    return normalize_text(candidate_text) in normalize_text(latest_valid_prefetch)


class HybridPrefetcher:
    """Incremental form of :func:`hybrid_prefetch`."""

    def __init__(self):
        self.latest: Optional[str] = None
        self.valid: list[PrefetchCandidate] = []

    def offer(self, candidate: PrefetchCandidate) -> PrefetchCandidate:
        text = normalize_text(candidate.text)
        stale = is_stale(text, self.latest)
        marked = PrefetchCandidate(text, candidate.source, candidate.issued_at, stale)
        if not stale:
            self.latest = text
            self.valid.append(marked)
        return marked


def hybrid_prefetch(candidates: Iterable[PrefetchCandidate]) -> list[PrefetchCandidate]:
    """Filter a time-ordered candidate stream from both passes down to valid prefetches."""
    prefetcher = HybridPrefetcher()
    last_key = None
    for cand in candidates:
        key = (cand.issued_at, _PASS_ORDER[cand.source])
        if last_key is not None and key < last_key:
            raise ValueError("candidates must be ordered by issued_at, causal first on ties")
        last_key = key
        prefetcher.offer(cand)
    return prefetcher.valid


def latency_report(timeline: StreamTimeline, final_text: str, fetch_latency_ms: int) -> LatencyReport:
    """Recompute the session's latency accounting from its timeline."""
    timeline.validate()
    endpoints = [e for e in timeline.events if e.event == "endpoint_declared"]
    if len(endpoints) != 1:
        raise ValueError("timeline must contain exactly one endpoint_declared event")
    end = endpoints[0].time_ms
    final = normalize_text(final_text)
    issued = [e for e in timeline.events if e.event == "prefetch_issued"]
    hit_times = [e.time_ms for e in issued if e.text == final]
    saved = min(int(fetch_latency_ms), end - min(hit_times)) if hit_times else 0
    partials = [e.time_ms for e in timeline.events if e.event == "partial_emitted" and e.time_ms <= end]
    return LatencyReport(
        endpoint_latency_ms=end - (partials[-1] if partials else 0),
        prefetch_hits=len(hit_times),
        prefetch_misses=len(issued) - len(hit_times),
        saved_latency_ms=max(0, saved),
        final_text=final,
    )


def run_session(
    enc: EncoderOutputs,
    params: ModelParams,
    causal_config: BeamConfig,
    noncausal_config: BeamConfig,
    endpoint: EndpointConfig,
    fetch_latency_ms: int,
    *,
    frame_period_ms: int = 40,
    context: Optional[ContextualModel] = None,
    lm: Optional[CausalLmScorer] = None,
) -> SessionResult:
    """Simulate one utterance end to end.

    If ``lm`` is given the non-causal n-best is rescored at the endpoint with
    the non-causal config's fusion weights.
    """
    period = int(frame_period_ms)
    if period <= 0:
        raise ValueError("frame_period_ms must be positive")
    n_frames, lag = enc.num_frames, enc.right_context
    sessions = {
        "causal": DecodingSession(params, causal_config, context, "causal"),
        "noncausal": DecodingSession(params, noncausal_config, context, "noncausal"),
    }
    matrices = {"causal": enc.causal, "noncausal": enc.noncausal}
    arrivals = sorted(
        [((t + 1) * period, 0, t, "causal") for t in range(n_frames)]
        + [((t + 1 + lag) * period, 1, t, "noncausal") for t in range(n_frames)]
    )
    timeline = StreamTimeline(period)
    prefetcher = HybridPrefetcher()
    shown = {"causal": "", "noncausal": ""}
    masses: list[float] = []
    end_time = None

    for time, _, t, src in arrivals:
        if end_time is not None and time > end_time:
            break
        if src == "causal" and end_time is not None:
            continue
        session = sessions[src]
        timeline.add(time, "frame_available", src, frame=t)
        if src == "causal":
            masses.append(session.blank_probability(matrices[src][t]))
        session.step(matrices[src][t])
        text = normalize_text(params.vocab.detokenize(session.beam[0].labels))
        if text != shown[src]:
            shown[src] = text
            if src == "causal":
                timeline.add(time, "partial_emitted", src, text)
            if text:
                cand = prefetcher.offer(PrefetchCandidate(text, src, time))
                if not cand.stale:
                    timeline.add(time, "prefetch_issued", src, text)
        if src == "causal" and (detect_endpoint(masses, endpoint) or t == n_frames - 1):
            end_time = time
            timeline.add(time, "endpoint_declared", src)

    nbest = sessions["noncausal"].nbest()
    if lm is not None:
        nbest = rescore_nbest(nbest, lm, noncausal_config.weights, context)
    final_text = normalize_text(params.vocab.detokenize(nbest.top.labels))
    timeline.add(end_time, "final_emitted", "noncausal", final_text)
    for cand in prefetcher.valid:
        kind = "prefetch_hit" if cand.text == final_text else "prefetch_miss"
        timeline.add(end_time, kind, cand.source, cand.text)
    report = latency_report(timeline, final_text, fetch_latency_ms)
    return SessionResult(report, timeline, nbest)
