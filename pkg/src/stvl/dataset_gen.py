"""Alignment-corpus and SFT-record generation.

Two corpora teach a language model the numeric token vocabulary:
stage 1 is pure transcription (every token in both directions), stage 2
is vector arithmetic (add, subtract, elementwise multiply) cycling
through three operand/result renderings. Stage 2 pops operand tokens
off a shuffled queue of the whole vocabulary, so a long enough run is
guaranteed to touch every token at least once.

Sampling is constrained so each emitted example is *checkable*: string
operands only take values that survive the fixed 6-decimal rendering
exactly, and results are kept inside the encodable range with magnitude
at least 1e-3 (or exactly zero), so recomputing the arithmetic from the
prompt always agrees with the completion within one encoding step.

The third product here is the supervised forecasting record: a window
sample rendered as prompt text plus target tokens with a loss mask over
exactly the target positions.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from stvl.errors import (
    EncodingFailureError,
    InfeasibleConstraintError,
    OutOfRangeError,
    SchemaViolationError,
    StvlError,
)
from stvl.grid_data import WindowSample
from stvl.numcodec import EXP_MIN, VOCAB_SIZE, Vocabulary, encode, parse_token_stream


class Direction(str, Enum):
    STR2TOK = "str2tok"
    TOK2STR = "tok2str"
    TOK2TOK = "tok2tok"


class Task(str, Enum):
    TRANSCRIBE = "transcribe"
    ADD = "add"
    SUB = "sub"
    HADAMARD = "hadamard"


@dataclass(frozen=True)
class AlignmentExample:
    prompt: str
    completion: str
    direction: Direction
    task: Task


@dataclass(frozen=True)
class SftRecord:
    """One forecasting training sample.

    ``loss_mask`` indexes into the serialized piece sequence (prompt
    split on spaces, then the target tokens) and covers exactly the
    target positions.
    """

    frame_refs: Tuple[int, ...]
    prompt_text: str
    target_tokens: Tuple[str, ...]
    loss_mask: Tuple[int, ...]


STAGE1_STR2TOK_TEMPLATE = (
    "Convert the following string-represented numerical value to numerical tokens: '{value}'"
)
STAGE1_TOK2STR_TEMPLATE = (
    "Transcribe the following numerical token to string numerical value: {token}"
)

STAGE2_INSTRUCTIONS = {
    Task.ADD: "Add the following two vectors element-wise",
    Task.SUB: "Subtract the second vector from the first element-wise",
    Task.HADAMARD: "Multiply the following two vectors element-wise",
}
STAGE2_TEMPLATE = "{instruction}: a = [{a}], b = [{b}]. Express the result as {rendering}."
TOKEN_RENDERING = "numerical tokens"
STRING_RENDERING = "string-represented numerical values"

STAGE2_FORMATS = (Direction.STR2TOK, Direction.TOK2STR, Direction.TOK2TOK)
STAGE2_TASKS = (Task.ADD, Task.SUB, Task.HADAMARD)

DEFAULT_LEN_RANGE = (2, 8)
DEFAULT_STAGE2_EXAMPLES = 150_000

# Results must stay encodable and, unless exactly zero, large enough
# that both the 6-decimal string rendering and the token encoding keep
# the relative error within the advertised 1e-3.
RESULT_MIN = 1e-3
RESULT_MAX = 999_900.0
FORCED_ZERO_RATE = 0.05
PARTNER_ATTEMPTS = 64
HADAMARD_EXP_SUM = (-4, 5)


def render_value(value: float) -> str:
    """The fixed 6-decimal string form used everywhere text meets numbers."""
    return f"{value:.6f}"


def gen_stage1(vocab: Vocabulary, seed: Optional[int] = None) -> Iterator[AlignmentExample]:
    """Both transcription directions for every token: 2 * |vocab| examples.

    ``seed`` shuffles the emission order; None keeps ascending id order
    with the string-to-token direction first per id.
    """
    n_slots = 2 * vocab.size
    if seed is None:
        slots: Iterable[int] = range(n_slots)
    else:
        slots = np.random.default_rng(seed).permutation(n_slots)
    for slot in slots:
        token_id, which = divmod(int(slot), 2)
        label = vocab.label_of(token_id)
        text = render_value(vocab.value_of(token_id))
        if which == 0:
            yield AlignmentExample(
                prompt=STAGE1_STR2TOK_TEMPLATE.format(value=text),
                completion=label,
                direction=Direction.STR2TOK,
                task=Task.TRANSCRIBE,
            )
        else:
            yield AlignmentExample(
                prompt=STAGE1_TOK2STR_TEMPLATE.format(token=label),
                completion=text,
                direction=Direction.TOK2STR,
                task=Task.TRANSCRIBE,
            )


def stage2_coverage_threshold(len_range: Tuple[int, int] = DEFAULT_LEN_RANGE) -> int:
    """Example count above which full vocabulary coverage is guaranteed.

    Two of every three examples draw their first operand vector off the
    coverage queue, at least len_min tokens each, so
    3 * ceil(|vocab| / (2 * len_min)) examples always drain the queue.
    """
    len_min = len_range[0]
    return 3 * math.ceil(VOCAB_SIZE / (2 * len_min))


class _Stage2Sampler:
    """Operand/partner sampling with the representability constraints."""

    def __init__(self, vocab: Vocabulary, rng: np.random.Generator):
        self.vocab = vocab
        self.rng = rng
        self.values = vocab.values
        self.zero_id = vocab.zero_id
        self.exponents = vocab.exponents
        nonzero = np.arange(vocab.size - 1)
        self.tok_pool = nonzero
        self.str_pool = nonzero[self.exponents >= EXP_MIN + 1]
        self.queue = rng.permutation(vocab.size)
        self.queue_pos = 0

    def next_queue_ids(self, n: int) -> List[int]:
        out = []
        while n > 0 and self.queue_pos < len(self.queue):
            out.append(int(self.queue[self.queue_pos]))
            self.queue_pos += 1
            n -= 1
        while n > 0:
            out.append(int(self.rng.integers(self.vocab.size)))
            n -= 1
        return out

    def queue_exhausted(self) -> bool:
        return self.queue_pos >= len(self.queue)

    def sample_ids(self, pool: np.ndarray, n: int) -> List[int]:
        return [int(pool[i]) for i in self.rng.integers(len(pool), size=n)]

    def _acceptable(self, r: float) -> bool:
        return r == 0.0 or RESULT_MIN <= abs(r) <= RESULT_MAX

    def pick_partner(self, a_id: int, task: Task, string_operands: bool) -> Tuple[int, float]:
        """Choose b so the elementwise result is representable.

        Rejection-samples from the right pool, then falls back to a
        constructed partner that is valid by arithmetic.
        """
        pool = self.str_pool if string_operands else self.tok_pool
        a = float(self.values[a_id])
        lo, hi = HADAMARD_EXP_SUM
        for _ in range(PARTNER_ATTEMPTS):
            b_id = int(pool[self.rng.integers(len(pool))])
            b = float(self.values[b_id])
            if task is Task.HADAMARD and a_id != self.zero_id:
                exp_sum = self.exponents[a_id] + self.exponents[b_id]
                if not (lo <= exp_sum <= hi):
                    continue
            r = self._apply(task, a, b)
            if self._acceptable(r):
                return b_id, b
        # Constructed fallbacks: sub cancels, add negates, multiply
        # scales into range. All produce in-vocabulary partners.
        if task is Task.SUB:
            return a_id, a
        if task is Task.ADD:
            if a_id == self.zero_id:
                return self.vocab.id_of(encode(1.0)), 1.0
            negated = encode(-a)
            return self.vocab.id_of(negated), -a
        partner = 10.0 if abs(a) < RESULT_MIN else 1.0
        return self.vocab.id_of(encode(partner)), partner

    @staticmethod
    def _apply(task: Task, a: float, b: float) -> float:
        if task is Task.ADD:
            return a + b
        if task is Task.SUB:
            return a - b
        return a * b


def _render_operands(ids: Sequence[int], vocab: Vocabulary, as_strings: bool) -> str:
    if as_strings:
        return ", ".join(f"'{render_value(vocab.value_of(i))}'" for i in ids)
    return ", ".join(vocab.label_of(i) for i in ids)


def gen_stage2(
    vocab: Vocabulary,
    n_examples: int = DEFAULT_STAGE2_EXAMPLES,
    len_range: Tuple[int, int] = DEFAULT_LEN_RANGE,
    seed: int = 0,
) -> Iterator[AlignmentExample]:
    """Vector-arithmetic examples cycling tasks and renderings.

    The i-th example uses rendering i % 3 and task (i // 3) % 3, so the
    nine combinations stay exactly balanced. Vector lengths are uniform
    over ``len_range``. First operands in token renderings drain the
    coverage queue; see ``stage2_coverage_threshold``.
    """
    if n_examples <= 0:
        raise StvlError(f"n_examples must be positive, got {n_examples}")
    len_min, len_max = len_range
    if len_min < 1 or len_min > len_max:
        raise InfeasibleConstraintError(f"empty vector length range {len_range}")
    rng = np.random.default_rng(seed)
    sampler = _Stage2Sampler(vocab, rng)
    for i in range(n_examples):
        direction = STAGE2_FORMATS[i % 3]
        task = STAGE2_TASKS[(i // 3) % 3]
        length = int(rng.integers(len_min, len_max + 1))
        string_operands = direction is Direction.STR2TOK
        if string_operands:
            a_ids = sampler.sample_ids(sampler.str_pool, length)
        else:
            a_ids = sampler.next_queue_ids(length)
        b_ids: List[int] = []
        results: List[float] = []
        for a_id in a_ids:
            a = float(sampler.values[a_id])
            if task is Task.SUB and rng.random() < FORCED_ZERO_RATE:
                b_id, b = a_id, a
            else:
                b_id, b = sampler.pick_partner(a_id, task, string_operands)
            b_ids.append(b_id)
            results.append(sampler._apply(task, a, b))
        prompt = STAGE2_TEMPLATE.format(
            instruction=STAGE2_INSTRUCTIONS[task],
            a=_render_operands(a_ids, vocab, string_operands),
            b=_render_operands(b_ids, vocab, string_operands),
            rendering=STRING_RENDERING if direction is Direction.TOK2STR else TOKEN_RENDERING,
        )
        if direction is Direction.TOK2STR:
            completion = ", ".join(render_value(r) for r in results)
        else:
            completion = " ".join(encode(r).label for r in results)
        yield AlignmentExample(prompt=prompt, completion=completion, direction=direction, task=task)


_OPERANDS_RE = re.compile(r": a = \[(.*)\], b = \[(.*)\]\. Express")
_QUOTED_RE = re.compile(r"'([^']*)'")

STAGE2_TOLERANCE = 1e-3


def _parse_operand_segment(segment: str, as_strings: bool) -> Optional[List[float]]:
    if as_strings:
        return [float(s) for s in _QUOTED_RE.findall(segment)]
    parsed = parse_token_stream(segment)
    if parsed.failure:
        return None
    return parsed.values


def verify_stage2_example(example: AlignmentExample) -> bool:
    """Recompute the arithmetic from the prompt and check the completion.

    True when every element of the completion matches the recomputed
    result within 1e-3 relative (plus a 1e-12 absolute cushion for
    exact zeros).
    """
    match = _OPERANDS_RE.search(example.prompt)
    if match is None:
        return False
    as_strings = example.direction is Direction.STR2TOK
    a = _parse_operand_segment(match.group(1), as_strings)
    b = _parse_operand_segment(match.group(2), as_strings)
    if a is None or b is None or len(a) != len(b) or not a:
        return False
    if example.direction is Direction.TOK2STR:
        try:
            got = [float(s) for s in example.completion.split(", ")]
        except ValueError:
            return False
    else:
        parsed = parse_token_stream(example.completion)
        if parsed.failure:
            return False
        got = parsed.values
    if len(got) != len(a):
        return False
    for x, y, c in zip(a, b, got):
        r = _Stage2Sampler._apply(example.task, x, y)
        if abs(c - r) > STAGE2_TOLERANCE * abs(r) + 1e-12:
            return False
    return True


# --- forecasting records ---

SFT_PROMPT_TAIL = "Predict the next {k} steps as numerical tokens."


def build_sft_record(
    sample: WindowSample,
    metadata: Optional[Dict[str, Union[str, int, float]]] = None,
    encode_mode: str = "clamp",
) -> SftRecord:
    """Render one window sample as prompt text plus masked target tokens.

    The prompt carries the cell coordinates, sorted key=value metadata,
    and the cell history as tokens; targets are the K future values
    encoded (clamped into range by default). Unencodable values, NaN
    from unimputed gaps above all, surface as ``EncodingFailureError``.
    """
    metadata = metadata or {}
    pieces = [f"Grid cell ({sample.cell[0]},{sample.cell[1]})"]
    if metadata:
        rendered = []
        for key in sorted(metadata):
            item = f"{key}={metadata[key]}"
            if any(ch.isspace() for ch in item):
                raise StvlError(f"metadata entry {item!r} contains whitespace")
            rendered.append(item)
        pieces.append(" ".join(rendered))
    try:
        history = " ".join(encode(v, mode=encode_mode).label for v in sample.cell_history)
        targets = tuple(encode(v, mode=encode_mode).label for v in sample.target)
    except (ValueError, OutOfRangeError) as exc:
        raise EncodingFailureError(f"window at anchor {sample.anchor}: {exc}") from exc
    k = len(sample.target)
    pieces.append(f"history: {history}")
    pieces.append(SFT_PROMPT_TAIL.format(k=k))
    prompt = " | ".join(pieces)
    n_prompt = len(prompt.split(" "))
    s = sample.history.shape[0]
    return SftRecord(
        frame_refs=tuple(range(sample.anchor, sample.anchor + s)),
        prompt_text=prompt,
        target_tokens=targets,
        loss_mask=tuple(range(n_prompt, n_prompt + k)),
    )


def serialized_pieces(record: SftRecord) -> List[str]:
    """The token sequence the loss mask indexes: prompt pieces, then targets."""
    return record.prompt_text.split(" ") + list(record.target_tokens)


# --- line-oriented record files ---

def _alignment_to_dict(example: AlignmentExample) -> dict:
    return {
        "type": f"{example.task.value}:{example.direction.value}",
        "prompt": example.prompt,
        "completion": example.completion,
    }


def _sft_to_dict(record: SftRecord) -> dict:
    return {
        "frames": list(record.frame_refs),
        "prompt": record.prompt_text,
        "targets": list(record.target_tokens),
        "mask": list(record.loss_mask),
    }


def serialize_records(records: Iterable[Union[AlignmentExample, SftRecord]], path) -> int:
    """Write records one JSON object per line; returns the line count."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            if isinstance(record, AlignmentExample):
                payload = _alignment_to_dict(record)
            elif isinstance(record, SftRecord):
                payload = _sft_to_dict(record)
            else:
                raise StvlError(f"cannot serialize {type(record).__name__}")
            fh.write(json.dumps(payload, separators=(",", ":")) + "\n")
            n += 1
    return n


def _violation(line_no: int, why: str) -> SchemaViolationError:
    return SchemaViolationError(f"line {line_no}: {why}")


def _dict_to_alignment(payload: dict, line_no: int) -> AlignmentExample:
    kind = payload["type"]
    if not isinstance(kind, str) or ":" not in kind:
        raise _violation(line_no, f"bad type field {kind!r}")
    task_name, direction_name = kind.split(":", 1)
    try:
        task, direction = Task(task_name), Direction(direction_name)
    except ValueError:
        raise _violation(line_no, f"unknown task or direction in {kind!r}") from None
    prompt, completion = payload["prompt"], payload["completion"]
    if not isinstance(prompt, str) or not isinstance(completion, str):
        raise _violation(line_no, "prompt and completion must be strings")
    return AlignmentExample(prompt=prompt, completion=completion, direction=direction, task=task)


def _dict_to_sft(payload: dict, line_no: int) -> SftRecord:
    frames, prompt, targets, mask = (
        payload["frames"], payload["prompt"], payload["targets"], payload["mask"],
    )
    if not isinstance(prompt, str):
        raise _violation(line_no, "prompt must be a string")
    for name, seq, kind in (("frames", frames, int), ("targets", targets, str), ("mask", mask, int)):
        if not isinstance(seq, list) or not all(type(v) is kind for v in seq):
            raise _violation(line_no, f"{name} must be a list of {kind.__name__}")
    return SftRecord(
        frame_refs=tuple(frames),
        prompt_text=prompt,
        target_tokens=tuple(targets),
        loss_mask=tuple(mask),
    )


def deserialize_records(path) -> Iterator[Union[AlignmentExample, SftRecord]]:
    """Read a record file back; raises SchemaViolationError with the
    offending line number on any malformed content."""
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as exc:
                raise _violation(line_no, f"not valid JSON ({exc.msg})") from None
            if not isinstance(payload, dict):
                raise _violation(line_no, "record must be an object")
            keys = set(payload)
            try:
                if keys == {"type", "prompt", "completion"}:
                    yield _dict_to_alignment(payload, line_no)
                elif keys == {"frames", "prompt", "targets", "mask"}:
                    yield _dict_to_sft(payload, line_no)
                else:
                    raise _violation(line_no, f"unrecognized field set {sorted(keys)}")
            except KeyError as exc:
                raise _violation(line_no, f"missing field {exc}") from None
