import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cascade_asr.core import (
    EncoderOutputs,
    ModelFormatError,
    ModelValidationError,
    Vocab,
    dump_encoder,
    dump_model,
    load_model,
    log_sum_exp,
    parse_encoder,
    parse_model,
    save_model,
    word_error_rate,
)
from cascade_asr.fixtures import random_encoder, random_model


def test_vocab_blank_is_last():
    v = Vocab(("▁a", "▁b", "c"))
    assert v.size == 3
    assert v.blank_id == 3


def test_vocab_rejects_duplicates_and_empty():
    with pytest.raises(ModelValidationError):
        Vocab(("▁a", "▁a"))
    with pytest.raises(ModelValidationError):
        Vocab(("",))


def test_vocab_detokenize_and_tokenize_roundtrip():
    v = Vocab(("▁call", "▁mo", "m", "▁dad"))
    ids = v.tokenize("call mom")
    assert ids == [0, 1, 2]
    assert v.detokenize(ids) == "call mom"
    with pytest.raises(ValueError):
        v.tokenize("call bob")


def test_log_sum_exp_examples():
    assert log_sum_exp([math.log(0.5), math.log(0.5)]) == pytest.approx(0.0, abs=1e-15)
    assert log_sum_exp([-3.25]) == -3.25
    with mpmath.workdps(50):
        want = float(mpmath.mpf(-1000) + mpmath.log(2))
    assert log_sum_exp([-1000.0, -1000.0]) == pytest.approx(want, abs=1e-12)


def test_log_sum_exp_contract():
    with pytest.raises(ValueError):
        log_sum_exp([])
    with pytest.raises(ValueError):
        log_sum_exp([0.0, float("nan")])
    assert log_sum_exp([-math.inf, -math.inf]) == -math.inf


@given(st.lists(st.floats(-700, 700), min_size=1, max_size=12), st.randoms(use_true_random=False))
def test_log_sum_exp_permutation_and_neg_inf(xs, rnd):
    base = log_sum_exp(xs)
    shuffled = list(xs)
    rnd.shuffle(shuffled)
    assert log_sum_exp(shuffled) == pytest.approx(base, abs=1e-12)
    assert log_sum_exp(xs + [-math.inf]) == base


def test_wer_examples():
    assert tuple(word_error_rate("a b c".split(), "a b c".split())) == (0, 0, 0, 0.0)
    res = word_error_rate("a b c".split(), "a x c".split())
    assert (res.substitutions, res.insertions, res.deletions) == (1, 0, 0)
    assert res.wer == pytest.approx(1 / 3)
    assert tuple(word_error_rate(["a"], [])) == (0, 0, 1, 1.0)
    with pytest.raises(ValueError):
        word_error_rate([], ["a"])


def _levenshtein(a, b):
    # plain recursion-free reference, distance only
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


words = st.lists(st.sampled_from("abcd"), max_size=8)


@given(words.filter(bool), words)
def test_wer_matches_reference_and_reversal(ref, hyp):
    res = word_error_rate(ref, hyp)
    errors = res.substitutions + res.insertions + res.deletions
    assert errors == _levenshtein(ref, hyp)
    assert res.insertions - res.deletions == len(hyp) - len(ref)
    assert (res.wer == 0) == (ref == hyp)
    rev = word_error_rate(ref[::-1], hyp[::-1])
    assert rev.wer == res.wer


def test_model_roundtrip_is_bit_identical(tmp_path, rng):
    model = random_model(rng, vocab_size=3, dim=4, d_enc=5, heads=2, context=3)
    path = tmp_path / "m.txt"
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.prediction.embedding.shape == (3, 4)
    assert dump_model(loaded) == path.read_text()
    for a, b in [
        (model.prediction.embedding, loaded.prediction.embedding),
        (model.prediction.position_vectors, loaded.prediction.position_vectors),
        (model.joint.blank_row, loaded.joint.blank_row),
        (model.joint.enc_proj, loaded.joint.enc_proj),
    ]:
        assert np.array_equal(a, b)
    assert loaded.joint.tied_embedding is loaded.prediction.embedding


def test_model_with_mismatched_dims_is_rejected(rng):
    text = dump_model(random_model(rng, 3, 4))
    text = text.replace("d_h=4", "d_h=8")
    with pytest.raises(ModelValidationError, match="tying requires d_e=d_h"):
        parse_model(text)


def test_truncated_model_is_a_parse_error(rng):
    text = dump_model(random_model(rng, 3, 4))
    with pytest.raises(ModelFormatError):
        parse_model(text[: len(text) // 2])
    with pytest.raises(ModelFormatError, match="header"):
        parse_model("NOT-A-MODEL\n")


def test_parse_error_names_the_field(rng):
    text = dump_model(random_model(rng, 3, 4)).replace("matrix blank_row", "matrix blank_rowx")
    with pytest.raises(ModelFormatError, match="blank_row"):
        parse_model(text)


def test_non_finite_weights_are_rejected(rng):
    text = dump_model(random_model(rng, 2, 2))
    lines = text.splitlines()
    idx = lines.index("matrix embedding 2 2") + 1
    lines[idx] = "nan 0.0"
    with pytest.raises(ModelValidationError, match="finite"):
        parse_model("\n".join(lines))


def test_encoder_roundtrip(rng):
    enc = random_encoder(rng, 4, 3, right_context=2)
    back = parse_encoder(dump_encoder(enc))
    assert back.right_context == 2
    assert np.array_equal(back.causal, enc.causal)
    assert np.array_equal(back.noncausal, enc.noncausal)


def test_encoder_validation():
    with pytest.raises(ModelValidationError):
        EncoderOutputs(np.zeros((3, 2)), np.zeros((4, 2)), 0)
    with pytest.raises(ModelValidationError):
        EncoderOutputs(np.zeros((3, 2)), np.zeros((3, 2)), -1)
    with pytest.raises(ModelFormatError, match="right_context"):
        parse_encoder("matrix causal 1 1\n0\nmatrix noncausal 1 1\n0\n")
