"""Numeric token codec: one token per real value.

Public surface re-exported from ``core``; ``BACKEND`` names the kernel
implementation selected at import ("compiled" or "numpy").
"""

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
from stvl.numcodec.core import (
    BACKEND,
    CandidateStatus,
    FpToken,
    ParseResult,
    TokenCandidate,
    Vocabulary,
    ZERO_LABEL,
    ZERO_TOKEN,
    build_vocabulary,
    decode,
    decode_bulk,
    encode,
    encode_bulk,
    encode_labels,
    encode_tokens,
    parse_token_stream,
    token_from_label,
)

__all__ = [
    "BACKEND",
    "CandidateStatus",
    "EXP_MAX",
    "EXP_MIN",
    "FpToken",
    "MANTISSA_MAX",
    "MANTISSA_MIN",
    "MAX_ABS",
    "MIN_ABS",
    "N_EXPONENTS",
    "N_MANTISSAS",
    "ParseResult",
    "TokenCandidate",
    "VOCAB_SIZE",
    "Vocabulary",
    "ZERO_ID",
    "ZERO_LABEL",
    "ZERO_THRESHOLD",
    "ZERO_TOKEN",
    "build_vocabulary",
    "decode",
    "decode_bulk",
    "encode",
    "encode_bulk",
    "encode_labels",
    "encode_tokens",
    "parse_token_stream",
    "token_from_label",
]
