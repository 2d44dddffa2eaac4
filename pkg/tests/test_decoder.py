import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cascade_asr.biasing import build_context, context_score_sequence
from cascade_asr.core import FusionWeights
from cascade_asr.decoder import (
    BeamConfig,
    Hypothesis,
    NBestList,
    ScoreBreakdown,
    brute_force_posterior,
    decode_step,
    decode_utterance,
    hypothesis_record,
    nbest_from_records,
    nbest_to_jsonl,
    rank_key,
    run_cascade,
)
from cascade_asr.fixtures import random_encoder, random_model, scripted_encoder, scripted_model
from cascade_asr.hat_joint import hat_scores, ilm_label_scores
from cascade_asr.prediction_net import predict
from oracles import AlignmentOracle, all_sequences, reachable_count
from scenarios import BIAS_BOOST, biasing_runner_up


def _fixture(seed, vocab=3, frames=3, dim=4):
    rng = np.random.default_rng(seed)
    model = random_model(rng, vocab, dim, heads=2, context=3, scale=1.5)
    return model, random_encoder(rng, frames, dim)


def test_forced_blank_beam_only_advances_frame():
    model = scripted_model(forced_blank=True)
    start = [Hypothesis((1, 2), ScoreBreakdown(-1.5, -2.0, 0.0, 0.0, -1.5), frame_index=4)]
    frame = np.zeros(model.d_enc)
    frame[0] = 8.0
    out = decode_step(start, frame, model, BeamConfig(beam_size=1))
    assert len(out) == 1
    assert out[0].labels == (1, 2)
    assert out[0].frame_index == 5
    assert out[0].scores.log_posterior == -1.5


def test_beta_zero_matches_no_context_bit_exactly():
    model, enc = _fixture(3)
    ctx = build_context([[0, 1], [2]], 1.5)
    cfg = BeamConfig(beam_size=6)
    plain = decode_utterance(enc.causal, model, cfg)
    zero = decode_utterance(enc.causal, model, cfg, context=ctx)
    assert plain == zero
    assert nbest_to_jsonl(plain, model.vocab) == nbest_to_jsonl(zero, model.vocab)


def test_single_frame_expansions_match_enumeration():
    model, enc = _fixture(11, vocab=2, frames=1)
    cap = 2
    oracle = AlignmentOracle(model, enc.causal)
    reachable = list(all_sequences(2, cap))
    out = decode_step([Hypothesis()], enc.causal[0], model, BeamConfig(len(reachable), cap))
    assert {h.labels for h in out} == set(reachable)
    for h in out:
        assert h.scores.log_posterior == pytest.approx(oracle.log_posterior(h.labels, cap), abs=1e-12)
    assert [h.labels for h in out] == [h.labels for h in sorted(out, key=rank_key)]


def test_single_frame_utterance_is_one_step():
    model, enc = _fixture(5, frames=1)
    cfg = BeamConfig(beam_size=4)
    nb = decode_utterance(enc.causal, model, cfg)
    assert list(nb.entries) == decode_step([Hypothesis()], enc.causal[0], model, cfg)


def test_decode_is_deterministic():
    model, enc = _fixture(6, frames=5)
    cfg = BeamConfig(beam_size=5)
    assert decode_utterance(enc.causal, model, cfg) == decode_utterance(enc.causal, model, cfg)


def test_decode_rejects_bad_encoder(small_model):
    with pytest.raises(ValueError):
        decode_utterance(np.zeros((3, small_model.d_enc + 1)), small_model, BeamConfig())
    with pytest.raises(ValueError):
        decode_utterance(np.zeros((0, small_model.d_enc)), small_model, BeamConfig())
    with pytest.raises(ValueError):
        BeamConfig(beam_size=0)
    with pytest.raises(ValueError):
        BeamConfig(max_expansions_per_frame=0)


@pytest.mark.parametrize("seed", range(4))
def test_wide_beam_top1_is_oracle_argmax(seed):
    model, enc = _fixture(seed, vocab=3, frames=3)
    assert reachable_count(3, 3, 1) <= 64
    nb = decode_utterance(enc.causal, model, BeamConfig(64, 1))
    oracle = AlignmentOracle(model, enc.causal)
    scores = {y: oracle.log_posterior(y, 1) for y in all_sequences(3, 3)}
    best = max(scores, key=scores.get)
    assert nb.top.labels == best
    # recombination keeps every sequence's total mass
    for h in nb:
        assert h.scores.log_posterior == pytest.approx(scores[h.labels], abs=1e-8)


def test_brute_force_base_cases():
    model, enc = _fixture(2, vocab=2, frames=2)
    lb = hat_scores(enc.causal[0], predict([], model.prediction), model).log_blank
    assert brute_force_posterior(enc.causal[:1], [], model) == pytest.approx(lb, abs=1e-15)
    assert brute_force_posterior(enc.causal, [0, 1, 0, 1, 0], model, max_expansions=2) == -math.inf


def test_brute_force_two_frames_one_label_by_hand():
    # labels [0] over two frames: emit at frame 0 or at frame 1, blank closes each frame
    model, enc = _fixture(4, vocab=2, frames=2)
    p = model.prediction
    f0_empty = hat_scores(enc.causal[0], predict([], p), model)
    f0_after = hat_scores(enc.causal[0], predict([0], p), model)
    f1_empty = hat_scores(enc.causal[1], predict([], p), model)
    f1_after = hat_scores(enc.causal[1], predict([0], p), model)
    early = f0_empty.log_labels[0] + f0_after.log_blank + f1_after.log_blank
    late = f0_empty.log_blank + f1_empty.log_labels[0] + f1_after.log_blank
    want = np.logaddexp(early, late)
    assert brute_force_posterior(enc.causal, [0], model) == pytest.approx(want, abs=1e-14)
    assert brute_force_posterior(enc.causal, [0], model, 1) == pytest.approx(want, abs=1e-14)


@settings(max_examples=25)
@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(0, 4), st.sampled_from([None, 1, 2]))
def test_brute_force_matches_alignment_enumeration(seed, frames, n_labels, cap):
    model, enc = _fixture(seed, vocab=3, frames=frames)
    labels = list(np.random.default_rng(seed).integers(0, 3, n_labels))
    oracle = AlignmentOracle(model, enc.causal)
    want = oracle.log_posterior(labels, cap)
    got = brute_force_posterior(enc.causal, labels, model, cap)
    if want == -math.inf:
        assert got == -math.inf
    else:
        assert got == pytest.approx(want, abs=1e-10)


def test_ties_break_shorter_then_lower_ids():
    a = Hypothesis((1,), ScoreBreakdown(combined=-1.0))
    b = Hypothesis((0,), ScoreBreakdown(combined=-1.0))
    c = Hypothesis((0, 0), ScoreBreakdown(combined=-1.0))
    d = Hypothesis((2, 2), ScoreBreakdown(combined=-0.5))
    assert sorted([a, b, c, d], key=rank_key) == [d, b, a, c]


def test_search_ignores_lambda1_and_defers_lambda2():
    model, enc = _fixture(9, frames=3)
    base = decode_utterance(enc.causal, model, BeamConfig(8))
    lm_only = decode_utterance(enc.causal, model, BeamConfig(8, weights=FusionWeights(lambda1=5.0, lambda2=0.7)))
    assert [h.labels for h in base] == [h.labels for h in lm_only]
    assert all(h.scores.combined == h.scores.log_posterior for h in lm_only)
    assert all(h.scores.log_lm == 0.0 for h in lm_only)
    in_search = decode_utterance(
        enc.causal, model, BeamConfig(8, weights=FusionWeights(lambda2=0.7), ilm_in_search=True)
    )
    for h in in_search:
        assert h.scores.combined == pytest.approx(h.scores.log_posterior - 0.7 * h.scores.log_ilm, abs=1e-12)


def test_accumulated_ilm_and_context_are_sequence_functions():
    model, enc = _fixture(12, frames=5)
    ctx = build_context([[0, 1], [1, 2, 0], [2]], 0.7)
    nb = decode_utterance(enc.causal, model, BeamConfig(8, 2, FusionWeights(beta=1.0)), ctx)
    for h in nb:
        total = 0.0
        for u, y in enumerate(h.labels):
            total += ilm_label_scores(h.labels[:u], model)[y]
        assert h.scores.log_ilm == total
        assert h.scores.log_context == context_score_sequence(h.labels, ctx)


def test_biasing_lifts_runner_up():
    model, enc, best, runner, gap, _ = biasing_runner_up()
    ctx = build_context([list(runner)], BIAS_BOOST)
    beam = BeamConfig(64, 1)
    assert decode_utterance(enc, model, beam).top.labels == best
    above = FusionWeights(beta=1.02 * gap / (BIAS_BOOST * len(runner)))
    below = FusionWeights(beta=0.98 * gap / (BIAS_BOOST * len(runner)))
    assert decode_utterance(enc, model, BeamConfig(64, 1, above), ctx).top.labels == runner
    assert decode_utterance(enc, model, BeamConfig(64, 1, below), ctx).top.labels == best


def test_identical_passes_give_identical_lists():
    model, enc = _fixture(13, frames=4)
    same = type(enc)(enc.causal, enc.causal.copy(), 2)
    causal, noncausal = run_cascade(same, model, BeamConfig(4), BeamConfig(4))
    assert causal.entries == noncausal.entries
    assert (causal.pass_source, noncausal.pass_source) == ("causal", "noncausal")


def test_refined_noncausal_pass_changes_top1():
    model = scripted_model()
    enc = scripted_encoder([0, 1, None, None], [0, 3, None, None], 4)
    causal, noncausal = run_cascade(enc, model, BeamConfig(4), BeamConfig(4))
    for nb, matrix in ((causal, enc.causal), (noncausal, enc.noncausal)):
        oracle = AlignmentOracle(model, matrix)
        cands = [y for y in all_sequences(4, 3)]
        best = max(cands, key=lambda y: oracle.log_posterior(y, 2))
        assert nb.top.labels == best
    assert causal.top.labels == (0, 1)
    assert noncausal.top.labels == (0, 3)


def test_context_for_one_pass_only():
    model, enc = _fixture(14, frames=4)
    ctx = build_context([[0], [1], [2]], 1.0)
    cfg = BeamConfig(4, weights=FusionWeights(beta=0.5))
    causal, noncausal = run_cascade(enc, model, cfg, cfg, noncausal_context=ctx)
    assert all(h.scores.log_context == 0.0 for h in causal)
    assert any(h.scores.log_context != 0.0 for h in noncausal)


def test_parallel_cascade_matches_sequential():
    model, enc = _fixture(15, frames=6)
    cfg = BeamConfig(6)
    assert run_cascade(enc, model, cfg, cfg) == run_cascade(enc, model, cfg, cfg, parallel=True)


def test_shared_parameters_drive_both_passes():
    model, enc = _fixture(16, frames=4)
    cfg = BeamConfig(4)
    before = run_cascade(enc, model, cfg, cfg)
    model.joint.blank_row[:] += 0.5
    after = run_cascade(enc, model, cfg, cfg)
    for b, a in zip(before, after):
        assert b.top.scores.log_posterior != a.top.scores.log_posterior


@settings(max_examples=20)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_wider_beam_never_lowers_top1(seed, beam):
    model, enc = _fixture(seed, vocab=3, frames=4)
    narrow = decode_utterance(enc.causal, model, BeamConfig(beam, 2)).top.scores.combined
    wide = decode_utterance(enc.causal, model, BeamConfig(beam + 1, 2)).top.scores.combined
    assert wide >= narrow - 1e-12


def test_nbest_jsonl_roundtrip(small_model, small_encoder):
    nb = decode_utterance(small_encoder.causal, small_model, BeamConfig(4))
    text = nbest_to_jsonl(nb, small_model.vocab)
    records = [json.loads(line) for line in text.splitlines()]
    assert set(records[0]) == {"text", "tokens", "log_posterior", "log_ilm", "log_lm",
                               "log_context", "combined", "pass"}
    back = nbest_from_records(records)["causal"]
    assert [h.labels for h in back] == [h.labels for h in nb]
    assert [h.scores for h in back] == [h.scores for h in nb]
    assert hypothesis_record(nb.top, small_model.vocab, "causal")["text"] == records[0]["text"]


def test_nbest_rejects_unknown_pass():
    with pytest.raises(ValueError):
        NBestList((), "third")
