"""Codec unit tests: anchors, boundaries, parsing, and the id layout."""

import numpy as np
import pytest

from stvl.errors import OutOfRangeError, UnknownTokenError
from stvl.numcodec import (
    EXP_MAX,
    EXP_MIN,
    MAX_ABS,
    MIN_ABS,
    VOCAB_SIZE,
    ZERO_ID,
    ZERO_LABEL,
    ZERO_THRESHOLD,
    ZERO_TOKEN,
    CandidateStatus,
    FpToken,
    decode,
    decode_bulk,
    encode,
    encode_bulk,
    encode_labels,
    encode_tokens,
    parse_token_stream,
    token_from_label,
)

ANCHORS = [
    ("<|FP114/0|>", 1.14),
    ("<|FP-821/1|>", -82.1),
    ("<|FP114/2|>", 114.0),
]


@pytest.mark.parametrize("label,value", ANCHORS)
def test_anchor_pairs_decode_exactly(label, value):
    assert decode(token_from_label(label)) == value


@pytest.mark.parametrize("label,value", ANCHORS)
def test_anchor_pairs_encode_exactly(label, value):
    assert encode(value).label == label


def test_vocabulary_size(vocab):
    assert vocab.size == VOCAB_SIZE == 199_801
    assert len(vocab) == VOCAB_SIZE
    assert vocab.zero_id == ZERO_ID == VOCAB_SIZE - 1


def test_encode_strips_trailing_zeros():
    # 1.0 could be spelled with mantissa 10, 100 or 1000; only the
    # shortest spelling is canonical.
    assert encode(1.0).label == "<|FP10/0|>"
    assert encode(100.0).label == "<|FP10/2|>"
    assert encode(0.5).label == "<|FP50/-1|>"


def test_aliases_decode_to_the_same_value():
    canonical = token_from_label("<|FP10/0|>")
    for alias in ("<|FP100/0|>", "<|FP1000/0|>"):
        assert decode(token_from_label(alias)) == decode(canonical) == 1.0


def test_zero_threshold_boundary():
    assert encode(4.999e-5) is ZERO_TOKEN
    assert encode(-4.999e-5) is ZERO_TOKEN
    # At the threshold the value rounds up to the smallest magnitude.
    assert encode(ZERO_THRESHOLD).label == "<|FP10/-4|>"
    assert encode(MIN_ABS).label == "<|FP10/-4|>"
    assert encode(0.0) is ZERO_TOKEN


def test_strict_mode_rejects_overflow():
    with pytest.raises(OutOfRangeError):
        encode(MAX_ABS * 1.001)
    with pytest.raises(OutOfRangeError):
        encode(-1e7)
    # The maximum itself is representable.
    assert encode(MAX_ABS).label == "<|FP9999/5|>"


def test_clamp_mode_saturates():
    assert encode(1e12, mode="clamp").label == "<|FP9999/5|>"
    assert encode(-1e12, mode="clamp").label == "<|FP-9999/5|>"
    assert decode(encode(1e12, mode="clamp")) == MAX_ABS


def test_nan_is_rejected_in_both_modes():
    for mode in ("strict", "clamp"):
        with pytest.raises(ValueError):
            encode(float("nan"), mode=mode)


def test_unknown_encode_mode_rejected():
    with pytest.raises(ValueError):
        encode(1.0, mode="lossy")


def test_round_trip_relative_error(rng):
    spread = rng.uniform(np.log(MIN_ABS), np.log(MAX_ABS), size=20_000)
    values = np.exp(spread) * rng.choice([-1.0, 1.0], size=spread.size)
    m, b, z = encode_bulk(values)
    back = decode_bulk(m, b, z)
    rel = np.abs(back - values) / np.abs(values)
    assert rel.max() <= 5e-4


def test_token_validation():
    with pytest.raises(ValueError):
        FpToken(5, 0)       # mantissa too short
    with pytest.raises(ValueError):
        FpToken(10_000, 0)  # mantissa too long
    with pytest.raises(ValueError):
        FpToken(114, EXP_MAX + 1)
    with pytest.raises(ValueError):
        FpToken(1, 2, is_zero=True)


@pytest.mark.parametrize("label", [
    "<|FP0114/0|>",   # leading zero
    "<|FP-0/2|>",     # negative zero mantissa
    "<|FP114/+2|>",   # explicit plus
    "<|FP114|>",      # missing exponent
    "<|FPfoo/0|>",
    "<|FP 114/0|>",
])
def test_malformed_labels_rejected(label):
    with pytest.raises(UnknownTokenError):
        token_from_label(label)


@pytest.mark.parametrize("label", ["<|FP5/0|>", "<|FP114/9|>", "<|FP-114/-9|>"])
def test_out_of_vocabulary_labels_rejected(label):
    with pytest.raises(UnknownTokenError):
        token_from_label(label)


def test_parse_token_stream_mixed_text():
    text = "pred: <|FP114/0|> then <|FP5/0|> and <|FPZERO|> done"
    result = parse_token_stream(text)
    statuses = [c.status for c in result.candidates]
    assert statuses == [
        CandidateStatus.OK,
        CandidateStatus.OUT_OF_VOCAB,
        CandidateStatus.OK,
    ]
    assert result.failure  # one candidate failed
    assert result.values == [1.14, 0.0]


def test_parse_token_stream_clean_text_is_not_a_failure():
    result = parse_token_stream("a <|FP114/0|> b <|FP-821/1|> c")
    assert not result.failure
    assert result.values == [1.14, -82.1]


def test_parse_token_stream_without_tokens_is_a_failure():
    result = parse_token_stream("there are no tokens here")
    assert result.failure
    assert result.candidates == ()
    assert result.values == []


def test_parse_token_stream_records_positions():
    text = "x <|FPZERO|> y"
    result = parse_token_stream(text)
    c = result.candidates[0]
    assert text[c.start:c.start + len(c.text)] == c.text == ZERO_LABEL


def test_id_layout_round_trips(vocab, rng):
    ids = rng.integers(0, VOCAB_SIZE, size=2000)
    for token_id in ids:
        token = vocab.token_of(int(token_id))
        assert vocab.id_of(token) == token_id
        assert decode(token) == vocab.value_of(int(token_id))


def test_id_layout_sorts_by_exponent_then_mantissa(vocab):
    assert vocab.token_of(0) == FpToken(-9999, EXP_MIN)
    assert vocab.token_of(VOCAB_SIZE - 2) == FpToken(9999, EXP_MAX)
    assert vocab.token_of(ZERO_ID) is ZERO_TOKEN
    exps = vocab.exponents
    assert np.all(np.diff(exps) >= 0)
    assert exps[0] == EXP_MIN and exps[-1] == EXP_MAX


def test_vocabulary_ids_are_unique(vocab, rng):
    sample = rng.integers(0, VOCAB_SIZE, size=5000)
    labels = {vocab.label_of(int(i)) for i in set(sample.tolist())}
    assert len(labels) == len(set(sample.tolist()))


def test_vocabulary_arrays_are_read_only(vocab):
    for arr in (vocab.values, vocab.exponents):
        with pytest.raises(ValueError):
            arr[0] = 0.0


def test_vocabulary_contains(vocab):
    assert "<|FP114/0|>" in vocab
    assert ZERO_LABEL in vocab
    assert "<|FP5/0|>" not in vocab
    assert "not a token" not in vocab


def test_bad_ids_rejected(vocab):
    for bad in (-1, VOCAB_SIZE):
        with pytest.raises(UnknownTokenError):
            vocab.token_of(bad)
        with pytest.raises(UnknownTokenError):
            vocab.value_of(bad)


def test_encode_helpers_agree(rng):
    values = rng.uniform(-100.0, 100.0, size=64)
    tokens = encode_tokens(values, mode="clamp")
    labels = encode_labels(values, mode="clamp")
    assert [t.label for t in tokens] == labels


def test_backends_are_bit_identical(rng):
    from stvl.numcodec import _codec_np

    _codec_cy = pytest.importorskip("stvl.numcodec._codec_cy")
    spread = rng.uniform(np.log(1e-6), np.log(1e7), size=50_000)
    values = np.exp(spread) * rng.choice([-1.0, 1.0], size=spread.size)
    values[:10] = [0.0, 1e-9, MIN_ABS, MAX_ABS, ZERO_THRESHOLD,
                   -ZERO_THRESHOLD, 1.14, -82.1, 114.0, 999_949.0]
    m_np, b_np, z_np = _codec_np.encode_bulk(values, True)
    m_cy, b_cy, z_cy = _codec_cy.encode_bulk(values, True)
    assert np.array_equal(m_np, m_cy)
    assert np.array_equal(b_np, b_cy)
    assert np.array_equal(z_np, z_cy)
    out_np = _codec_np.decode_bulk(m_np, b_np, z_np)
    out_cy = _codec_cy.decode_bulk(m_np, b_np, z_np)
    assert np.array_equal(out_np, out_cy)
