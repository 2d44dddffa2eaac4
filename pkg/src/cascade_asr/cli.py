"""Command line entry point: decode, rescore, simulate, evaluate, make-fixture."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

from .biasing import build_context, load_bias_phrases
from .core import FusionWeights, load_encoder, load_model, word_error_rate
from .decoder import BeamConfig, nbest_from_records, nbest_to_jsonl, run_cascade
from .fixtures import write_fixture_set
from .lm import load_ngram, rescore_nbest
from .streaming import EndpointConfig, run_session


class CliError(Exception):
    """Bad input detected before or during a command; exits with status 2."""


@dataclass(frozen=True)
class RunConfig:
    model_path: Optional[str] = None
    encoder_path: Optional[str] = None
    lm_path: Optional[str] = None
    bias_path: Optional[str] = None
    bias_boost: float = 1.0
    lambda1: float = 0.0
    lambda2: float = 0.0
    beta: float = 0.0
    beam_size: int = 8
    max_expansions: int = 2
    ilm_in_search: bool = False
    rescore_pass: str = "noncausal"
    frame_period_ms: int = 40
    fetch_latency_ms: int = 200
    ep_threshold: float = 0.9
    ep_frames: int = 3
    seed: int = 0

    @property
    def weights(self) -> FusionWeights:
        return FusionWeights(self.lambda1, self.lambda2, self.beta)

    @property
    def beam(self) -> BeamConfig:
        return BeamConfig(self.beam_size, self.max_expansions, self.weights, self.ilm_in_search)

    @property
    def endpoint(self) -> EndpointConfig:
        return EndpointConfig(self.ep_threshold, self.ep_frames)

    def resolved(self) -> "RunConfig":
        """Canonical form: settings that cannot affect the output are cleared."""
        cfg = asdict(self)
        if self.beta == 0:
            cfg["bias_path"] = None
        if cfg["bias_path"] is None:
            cfg["bias_boost"] = RunConfig.bias_boost
        return RunConfig(**cfg)

    def to_json(self) -> str:
        return json.dumps({"config": asdict(self)}, sort_keys=True)


def _require_file(path: Optional[str], what: str) -> Path:
    if path is None:
        raise CliError(f"--{what} is required")
    p = Path(path)
    if not p.is_file():
        raise CliError(f"{what} file not found: {path}")
    return p


def _load_inputs(cfg: RunConfig, need_encoder: bool = True):
    try:
        model = load_model(_require_file(cfg.model_path, "model"))
        enc = load_encoder(_require_file(cfg.encoder_path, "encoder")) if need_encoder else None
        lm = load_ngram(_require_file(cfg.lm_path, "lm")) if cfg.lm_path else None
        context = None
        if cfg.bias_path:
            phrases = load_bias_phrases(_require_file(cfg.bias_path, "bias-path"), model.vocab)
            context = build_context(phrases, cfg.bias_boost)
    except (OSError, ValueError) as exc:
        raise CliError(str(exc)) from exc
    if lm is not None and lm.vocab_size > model.vocab.size:
        raise CliError(f"LM vocabulary ({lm.vocab_size}) exceeds model vocabulary ({model.vocab.size})")
    if enc is not None and enc.causal.shape[1] != model.d_enc:
        raise CliError(f"encoder dim {enc.causal.shape[1]} does not match model d_enc={model.d_enc}")
    return model, enc, lm, context


def cmd_decode(cfg: RunConfig) -> str:
    cfg = cfg.resolved()
    model, enc, lm, context = _load_inputs(cfg)
    causal, noncausal = run_cascade(enc, model, cfg.beam, cfg.beam, context)
    if lm is not None:
        if cfg.rescore_pass == "causal":
            causal = rescore_nbest(causal, lm, cfg.weights, context)
        else:
            noncausal = rescore_nbest(noncausal, lm, cfg.weights, context)
    return cfg.to_json() + "\n" + nbest_to_jsonl(causal, model.vocab) + nbest_to_jsonl(noncausal, model.vocab)


def cmd_rescore(cfg: RunConfig, nbest_path: str) -> str:
    cfg = cfg.resolved()
    model, _, lm, context = _load_inputs(cfg, need_encoder=False)
    try:
        lines = _require_file(nbest_path, "nbest").read_text(encoding="utf-8").splitlines()
        records = [json.loads(ln) for ln in lines if ln.strip()]
    except (OSError, ValueError) as exc:
        raise CliError(str(exc)) from exc
    out = [cfg.to_json() + "\n"]
    for src, nbest in nbest_from_records(r for r in records if "config" not in r).items():
        out.append(nbest_to_jsonl(rescore_nbest(nbest, lm, cfg.weights, context), model.vocab))
    return "".join(out)


def cmd_simulate(cfg: RunConfig) -> str:
    cfg = cfg.resolved()
    model, enc, lm, context = _load_inputs(cfg)
    result = run_session(
        enc,
        model,
        cfg.beam,
        cfg.beam,
        cfg.endpoint,
        cfg.fetch_latency_ms,
        frame_period_ms=cfg.frame_period_ms,
        context=context,
        lm=lm,
    )
    report = json.dumps({"report": result.report.to_dict()}, sort_keys=True)
    return cfg.to_json() + "\n" + result.timeline.to_jsonl() + report + "\n"


def cmd_evaluate(hyp_path: str, ref_path: str) -> str:
    try:
        hyps = _require_file(hyp_path, "hyp").read_text(encoding="utf-8").splitlines()
        refs = _require_file(ref_path, "ref").read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CliError(str(exc)) from exc
    if len(hyps) != len(refs):
        raise CliError(f"line count mismatch: hyp has {len(hyps)} lines, ref has {len(refs)}")
    per_utt = []
    totals = {"substitutions": 0, "insertions": 0, "deletions": 0, "reference_words": 0}
    for n, (hyp, ref) in enumerate(zip(hyps, refs), 1):
        if not ref.split():
            raise CliError(f"empty reference at line {n}")
        res = word_error_rate(ref.split(), hyp.split())
        row = res._asdict()
        row["line"] = n
        per_utt.append(row)
        totals["substitutions"] += res.substitutions
        totals["insertions"] += res.insertions
        totals["deletions"] += res.deletions
        totals["reference_words"] += len(ref.split())
    errors = totals["substitutions"] + totals["insertions"] + totals["deletions"]
    totals["wer"] = errors / totals["reference_words"] if totals["reference_words"] else 0.0
    report = {
        "config": {"hyp_path": hyp_path, "ref_path": ref_path},
        "corpus": totals,
        "utterances": per_utt,
    }
    return json.dumps(report, sort_keys=True) + "\n"


def cmd_make_fixture(seed: int, out_dir: str, **dims) -> str:
    try:
        paths = write_fixture_set(out_dir, seed, **dims)
    except ValueError as exc:
        raise CliError(f"refusing to build fixture: {exc}") from exc
    echo = {"config": {"seed": seed, "out": out_dir, **dims}}
    return json.dumps(echo, sort_keys=True) + "\n" + json.dumps({k: str(v) for k, v in paths.items()}, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

_RUN_FIELDS = tuple(f.name for f in fields(RunConfig))


def _add_run_flags(p: argparse.ArgumentParser, simulate: bool = False, encoder: bool = True) -> None:
    # defaults are None so that --config values can fill whatever was not given
    p.add_argument("--config", help="JSON config (e.g. an echoed config line) to start from")
    p.add_argument("--model", dest="model_path")
    if encoder:
        p.add_argument("--encoder", dest="encoder_path")
    p.add_argument("--lm", dest="lm_path")
    p.add_argument("--bias-path", dest="bias_path")
    p.add_argument("--bias-boost", type=float)
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--beam-size", type=int)
    p.add_argument("--max-expansions", type=int)
    p.add_argument("--ilm-in-search", action="store_true", default=None,
                   help="apply lambda2 during beam search too")
    p.add_argument("--rescore-pass", choices=["causal", "noncausal"])
    p.add_argument("--seed", type=int)
    if simulate:
        p.add_argument("--frame-period-ms", type=int)
        p.add_argument("--fetch-latency-ms", type=int)
        p.add_argument("--ep-threshold", type=float)
        p.add_argument("--ep-frames", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cascade-asr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    _add_run_flags(sub.add_parser("decode", help="two-pass decode; n-best JSONL on stdout"))
    p = sub.add_parser("rescore", help="rescore an n-best JSONL file with an external LM")
    p.add_argument("--nbest", required=True)
    _add_run_flags(p, encoder=False)
    _add_run_flags(sub.add_parser("simulate", help="streaming session; timeline JSONL and report"), simulate=True)

    p = sub.add_parser("evaluate", help="corpus WER between line-aligned files")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)

    p = sub.add_parser("make-fixture", help="write a seeded model/encoder/lm/bias set")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--vocab-size", type=int, default=6)
    p.add_argument("--dim", type=int, default=4)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--context", type=int, default=5)
    p.add_argument("--right-context", type=int, default=2)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    base: dict = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8").splitlines()[0])
        except (OSError, ValueError, IndexError) as exc:
            raise CliError(f"cannot read config {args.config}: {exc}") from exc
        base = data.get("config", data)
        unknown = set(base) - set(_RUN_FIELDS)
        if unknown:
            raise CliError(f"unknown config keys: {sorted(unknown)}")
    for dest in _RUN_FIELDS:
        value = getattr(args, dest, None)
        if value is not None:
            base[dest] = value
    return RunConfig(**base)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "evaluate":
            out = cmd_evaluate(args.hyp, args.ref)
        elif args.command == "make-fixture":
            out = cmd_make_fixture(
                args.seed,
                args.out,
                vocab_size=args.vocab_size,
                dim=args.dim,
                frames=args.frames,
                heads=args.heads,
                context=args.context,
                right_context=args.right_context,
            )
        else:
            cfg = config_from_args(args)
            if cfg.bias_boost != RunConfig.bias_boost and cfg.bias_path is None:
                parser.error("--bias-boost requires --bias-path")
            try:
                cfg.beam, cfg.endpoint
            except ValueError as exc:
                parser.error(str(exc))
            if args.command == "decode":
                out = cmd_decode(cfg)
            elif args.command == "rescore":
                out = cmd_rescore(cfg, args.nbest)
            else:
                out = cmd_simulate(cfg)
    except CliError as exc:
        print(f"cascade-asr: error: {exc}", file=sys.stderr)
        return 2
    sys.stdout.write(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
