"""Single-token codec for real values.

Every value is one token ``<|FPm/b|>`` holding a signed integer mantissa
``m`` (two to four digits) and a decimal exponent ``b``, plus one
dedicated zero token ``<|FPZERO|>``. A token decodes to
``norm(m) * 10**b`` where ``norm`` shifts the mantissa into [1, 10).
Encoding rounds to four significant digits with ties to even and emits
the canonical (trailing-zero-stripped) mantissa.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional

import numpy as np

from stvl.errors import UnknownTokenError
from stvl.numcodec._tables import (
    EXP_MAX,
    EXP_MIN,
    MANTISSA_MAX,
    MANTISSA_MIN,
    MAX_ABS,
    MIN_ABS,
    N_EXPONENTS,
    N_MANTISSAS,
    VOCAB_SIZE,
    ZERO_ID,
    ZERO_THRESHOLD,
)

# Backend selection: compiled kernels when present, NumPy otherwise.
# STVL_CODEC_BACKEND={compiled,numpy} forces one (useful for benchmarks).
_forced = os.environ.get("STVL_CODEC_BACKEND")
if _forced == "numpy":
    from stvl.numcodec import _codec_np as _kernels

    BACKEND = "numpy"
elif _forced == "compiled":
    from stvl.numcodec import _codec_cy as _kernels  # type: ignore[no-redef]

    BACKEND = "compiled"
else:
    try:
        from stvl.numcodec import _codec_cy as _kernels  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        from stvl.numcodec import _codec_np as _kernels  # type: ignore[no-redef]

        BACKEND = "numpy"

ZERO_LABEL = "<|FPZERO|>"

_MANTISSA_SPAN = MANTISSA_MAX - MANTISSA_MIN + 1  # per sign


@dataclass(frozen=True)
class FpToken:
    """One vocabulary entry: a (mantissa, exponent) pair or the zero token."""

    mantissa: int
    exponent: int
    is_zero: bool = False

    def __post_init__(self):
        if self.is_zero:
            if self.mantissa != 0 or self.exponent != 0:
                raise ValueError("the zero token carries no mantissa/exponent")
            return
        if not (MANTISSA_MIN <= abs(self.mantissa) <= MANTISSA_MAX):
            raise ValueError(f"mantissa {self.mantissa} outside the token range")
        if not (EXP_MIN <= self.exponent <= EXP_MAX):
            raise ValueError(f"exponent {self.exponent} outside the token range")

    @property
    def label(self) -> str:
        if self.is_zero:
            return ZERO_LABEL
        return f"<|FP{self.mantissa}/{self.exponent}|>"


ZERO_TOKEN = FpToken(0, 0, is_zero=True)


def encode_bulk(values, mode: str = "strict"):
    """Encode an array of reals; returns (mantissa, exponent, is_zero) arrays.

    ``mode="strict"`` raises ``OutOfRangeError`` on magnitudes above the
    representable maximum; ``mode="clamp"`` saturates them instead. NaN is
    rejected in both modes.
    """
    if mode not in ("strict", "clamp"):
        raise ValueError(f"unknown encode mode {mode!r}")
    return _kernels.encode_bulk(np.asarray(values, dtype=np.float64).ravel(), mode == "clamp")


def decode_bulk(mantissas, exponents, is_zero):
    """Decode (mantissa, exponent, is_zero) arrays to float64 values."""
    return _kernels.decode_bulk(mantissas, exponents, is_zero)


def encode(x: float, mode: str = "strict") -> FpToken:
    """Encode one real value to its canonical token."""
    m, b, z = encode_bulk(np.array([x], dtype=np.float64), mode)
    if z[0]:
        return ZERO_TOKEN
    return FpToken(int(m[0]), int(b[0]))


def decode(token: FpToken) -> float:
    """Decode one token to its real value."""
    if token.is_zero:
        return 0.0
    out = decode_bulk(
        np.array([token.mantissa], dtype=np.int64),
        np.array([token.exponent], dtype=np.int64),
        np.array([False]),
    )
    return float(out[0])


def encode_tokens(values, mode: str = "strict") -> List[FpToken]:
    """Encode an array of reals to a list of tokens."""
    m, b, z = encode_bulk(values, mode)
    return [
        ZERO_TOKEN if z[i] else FpToken(int(m[i]), int(b[i]))
        for i in range(len(m))
    ]


def encode_labels(values, mode: str = "strict") -> List[str]:
    """Encode an array of reals straight to token labels."""
    m, b, z = encode_bulk(values, mode)
    return [
        ZERO_LABEL if z[i] else f"<|FP{m[i]}/{b[i]}|>"
        for i in range(len(m))
    ]


_LABEL_BODY = re.compile(r"^(-?\d+)/(-?\d+)$")


def token_from_label(label: str) -> FpToken:
    """Parse a token label; raises ``UnknownTokenError`` if it is not in the vocabulary."""
    status, token = _classify_body(label)
    if token is None:
        raise UnknownTokenError(f"{label!r} is not a vocabulary label ({status.value})")
    return token


def _classify_body(label: str):
    """Return (status, token-or-None) for one candidate label string."""
    if not (label.startswith("<|FP") and label.endswith("|>")):
        return CandidateStatus.MALFORMED, None
    body = label[4:-2]
    if body == "ZERO":
        return CandidateStatus.OK, ZERO_TOKEN
    m = _LABEL_BODY.match(body)
    if m is None:
        return CandidateStatus.MALFORMED, None
    m_str, b_str = m.group(1), m.group(2)
    mantissa, exponent = int(m_str), int(b_str)
    # Reject non-canonical spellings such as leading zeros or "-0".
    if str(mantissa) != m_str or str(exponent) != b_str:
        return CandidateStatus.MALFORMED, None
    if not (MANTISSA_MIN <= abs(mantissa) <= MANTISSA_MAX):
        return CandidateStatus.OUT_OF_VOCAB, None
    if not (EXP_MIN <= exponent <= EXP_MAX):
        return CandidateStatus.OUT_OF_VOCAB, None
    return CandidateStatus.OK, FpToken(mantissa, exponent)


class CandidateStatus(Enum):
    OK = "ok"
    MALFORMED = "malformed"
    OUT_OF_VOCAB = "out_of_vocab"


@dataclass(frozen=True)
class TokenCandidate:
    """One ``<|FP...|>``-shaped substring found in free text."""

    text: str
    start: int
    status: CandidateStatus
    token: Optional[FpToken] = None


@dataclass(frozen=True)
class ParseResult:
    """All token candidates found in a text, in order of appearance.

    ``failure`` is set when any candidate is malformed or out of
    vocabulary, or when no candidate parses at all.
    """

    candidates: tuple
    failure: bool

    @property
    def tokens(self) -> List[FpToken]:
        return [c.token for c in self.candidates if c.status is CandidateStatus.OK]

    @property
    def values(self) -> List[float]:
        return [decode(t) for t in self.tokens]


_CANDIDATE = re.compile(r"<\|FP[^<>|]*\|>")


def parse_token_stream(text: str) -> ParseResult:
    """Scan free text for token labels.

    Every maximal ``<|FP...|>`` substring becomes a candidate with a
    per-candidate status; candidates that fail to parse are reported
    rather than skipped.
    """
    candidates = []
    n_ok = 0
    for m in _CANDIDATE.finditer(text):
        status, token = _classify_body(m.group(0))
        if status is CandidateStatus.OK:
            n_ok += 1
        candidates.append(TokenCandidate(m.group(0), m.start(), status, token))
    failure = n_ok == 0 or n_ok < len(candidates)
    return ParseResult(tuple(candidates), failure)


def _mantissa_rank(m: int) -> int:
    if m < 0:
        return m + MANTISSA_MAX  # -9999 -> 0 ... -10 -> 9989
    return _MANTISSA_SPAN + (m - MANTISSA_MIN)


class Vocabulary:
    """The full token set with dense, stable ids.

    Ids sort by (exponent, mantissa); the zero token takes the last id.
    Alias mantissas (10/100/1000) are distinct tokens that decode to the
    same value; ``encode`` only ever emits the canonical one.
    """

    def __init__(self):
        mantissas = np.concatenate(
            [
                np.arange(-MANTISSA_MAX, -MANTISSA_MIN + 1, dtype=np.int64),
                np.arange(MANTISSA_MIN, MANTISSA_MAX + 1, dtype=np.int64),
            ]
        )
        exponents = np.arange(EXP_MIN, EXP_MAX + 1, dtype=np.int64)
        self._mantissas = np.tile(mantissas, N_EXPONENTS)
        self._exponents = np.repeat(exponents, N_MANTISSAS)
        self._values = np.empty(VOCAB_SIZE, dtype=np.float64)
        self._values[:ZERO_ID] = decode_bulk(
            self._mantissas, self._exponents, np.zeros(ZERO_ID, dtype=bool)
        )
        self._values[ZERO_ID] = 0.0
        for arr in (self._mantissas, self._exponents, self._values):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return VOCAB_SIZE

    @property
    def size(self) -> int:
        return VOCAB_SIZE

    @property
    def zero_id(self) -> int:
        return ZERO_ID

    @property
    def values(self) -> np.ndarray:
        """Decoded value of every id, indexable by id (zero token last)."""
        return self._values

    @property
    def exponents(self) -> np.ndarray:
        """Exponent field of every non-zero id (length size - 1)."""
        return self._exponents

    def id_of(self, token: FpToken) -> int:
        if token.is_zero:
            return ZERO_ID
        return (token.exponent - EXP_MIN) * N_MANTISSAS + _mantissa_rank(token.mantissa)

    def id_of_label(self, label: str) -> int:
        return self.id_of(token_from_label(label))

    def token_of(self, token_id: int) -> FpToken:
        if not (0 <= token_id < VOCAB_SIZE):
            raise UnknownTokenError(f"id {token_id} outside [0, {VOCAB_SIZE})")
        if token_id == ZERO_ID:
            return ZERO_TOKEN
        return FpToken(int(self._mantissas[token_id]), int(self._exponents[token_id]))

    def label_of(self, token_id: int) -> str:
        return self.token_of(token_id).label

    def value_of(self, token_id: int) -> float:
        if not (0 <= token_id < VOCAB_SIZE):
            raise UnknownTokenError(f"id {token_id} outside [0, {VOCAB_SIZE})")
        return float(self._values[token_id])

    def __contains__(self, label: str) -> bool:
        try:
            token_from_label(label)
        except UnknownTokenError:
            return False
        return True

    def write_tsv(self, path) -> None:
        """Write ``id<TAB>label<TAB>value`` rows, one per token.

        Values carry 17 significant digits so the file round-trips the
        exact float64.
        """
        with open(path, "w", encoding="utf-8") as fh:
            for token_id in range(VOCAB_SIZE):
                label = self.label_of(token_id)
                fh.write(f"{token_id}\t{label}\t{self._values[token_id]:.17g}\n")


def build_vocabulary() -> Vocabulary:
    """Construct the full vocabulary. Deterministic."""
    return Vocabulary()
