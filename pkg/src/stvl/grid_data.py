"""Grid traffic tensors: ingestion, gap filling, splitting, windowing.

A tensor is (T, H, W) float64 values on a regular time grid with an
observation mask. Points that were never observed hold NaN until
``impute_linear`` fills them; the mask keeps recording provenance either
way. Cell coordinates are 1-based throughout, matching the source data.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterator, Optional, Tuple

import numpy as np

from stvl.errors import (
    AllMissingCellError,
    GridOverflowError,
    MalformedRowError,
    RangeOutOfBoundsError,
    SquareIdOutOfRangeError,
    StvlError,
    WindowTooLongError,
)

DAY_MS = 86_400_000

# Milan grid conventions: 10-minute frames starting 2013-11-01 00:00
# local time (UTC+1), with 48/7/7 day train/val/test spans.
MILAN_START_MS = 1_383_260_400_000
MILAN_STEP_MS = 600_000

CACHE_MAGIC = b"STVT1"

Region = Tuple[Tuple[int, int], Tuple[int, int]]


@dataclass(frozen=True)
class TrafficTensor:
    """Immutable dense traffic volume grid over a regular time axis."""

    values: np.ndarray          # (T, H, W) float64, NaN where missing and unimputed
    timestamps: np.ndarray      # (T,) int64 epoch milliseconds, constant step
    observed_mask: np.ndarray   # (T, H, W) bool

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        timestamps = np.asarray(self.timestamps, dtype=np.int64)
        mask = np.asarray(self.observed_mask, dtype=bool)
        if values.ndim != 3:
            raise StvlError(f"values must be (T, H, W), got shape {values.shape}")
        if mask.shape != values.shape:
            raise StvlError("observed_mask shape differs from values shape")
        if timestamps.shape != (values.shape[0],):
            raise StvlError("timestamps length differs from the number of frames")
        if len(timestamps) >= 2:
            steps = np.diff(timestamps)
            if steps[0] <= 0 or not np.all(steps == steps[0]):
                raise StvlError("timestamps must be strictly increasing with a constant step")
        observed = values[mask]
        if observed.size and (not np.all(np.isfinite(observed)) or np.any(observed < 0)):
            raise StvlError("observed values must be finite and non-negative")
        for arr, name in ((values, "values"), (timestamps, "timestamps"), (mask, "observed_mask")):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def t(self) -> int:
        return self.values.shape[0]

    @property
    def h(self) -> int:
        return self.values.shape[1]

    @property
    def w(self) -> int:
        return self.values.shape[2]

    @property
    def step_ms(self) -> int:
        if self.t < 2:
            raise StvlError("step is undefined for tensors with fewer than two frames")
        return int(self.timestamps[1] - self.timestamps[0])

    @property
    def is_complete(self) -> bool:
        """True once every point holds a finite value (observed or imputed)."""
        return bool(np.all(np.isfinite(self.values)))


# --- binary cache ---

def save_cache(tensor: TrafficTensor, path) -> None:
    """Write the tensor to the binary cache format (bit-exact round trip).

    Layout: magic, little-endian u64 T/H/W, i64 start/step, row-major
    [t][row][col] float64 values, then the mask packed 8 points per byte.
    """
    t, h, w = tensor.values.shape
    start = int(tensor.timestamps[0]) if t else 0
    step = tensor.step_ms if t >= 2 else 0
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<QQQqq", t, h, w, start, step))
        fh.write(np.ascontiguousarray(tensor.values, dtype="<f8").tobytes())
        fh.write(np.packbits(tensor.observed_mask.reshape(-1), bitorder="little").tobytes())


def load_cache(path) -> TrafficTensor:
    """Read a tensor written by ``save_cache``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(CACHE_MAGIC)] != CACHE_MAGIC:
        raise StvlError(f"{path}: not a tensor cache (bad magic)")
    header_end = len(CACHE_MAGIC) + struct.calcsize("<QQQqq")
    t, h, w, start, step = struct.unpack("<QQQqq", blob[len(CACHE_MAGIC):header_end])
    n = t * h * w
    values_end = header_end + 8 * n
    if len(blob) < values_end:
        raise StvlError(f"{path}: truncated tensor cache")
    values = np.frombuffer(blob[header_end:values_end], dtype="<f8").reshape(t, h, w)
    bits = np.frombuffer(blob[values_end:], dtype=np.uint8)
    mask = np.unpackbits(bits, count=n, bitorder="little").astype(bool).reshape(t, h, w)
    timestamps = start + step * np.arange(t, dtype=np.int64)
    return TrafficTensor(values.copy(), timestamps, mask)


# --- text ingestion ---

def to_csv(tensor: TrafficTensor, path) -> None:
    """Write observed points as canonical CSV rows (1-based coordinates)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("timestamp_ms,row,col,value\n")
        ts = tensor.timestamps
        idx = np.argwhere(tensor.observed_mask)
        for ti, ri, ci in idx:
            fh.write(f"{ts[ti]},{ri + 1},{ci + 1},{tensor.values[ti, ri, ci]:.17g}\n")


def _resolve_time_grid(stamps, start_ms, step_ms, n_steps):
    if start_ms is not None and step_ms is not None and n_steps is not None:
        return int(start_ms), int(step_ms), int(n_steps)
    if not stamps:
        raise MalformedRowError(
            "cannot infer a time grid from an empty file; pass start_ms/step_ms/n_steps"
        )
    uniq = np.unique(np.asarray(sorted(stamps), dtype=np.int64))
    start = int(uniq[0]) if start_ms is None else int(start_ms)
    if step_ms is None:
        if len(uniq) < 2:
            raise MalformedRowError(
                "cannot infer the step from a single timestamp; pass step_ms"
            )
        step = int(np.diff(uniq).min())
    else:
        step = int(step_ms)
    if step <= 0:
        raise MalformedRowError(f"step must be positive, got {step}")
    last = int(uniq[-1])
    n = n_steps if n_steps is not None else (last - start) // step + 1
    return start, step, int(n)


def _accumulate(rows, h, w, start_ms, step_ms, n_steps):
    """Shared dense-grid accumulation for both ingestion formats.

    ``rows`` holds (line_no, timestamp_ms, row, col, value) tuples with
    1-based coordinates. Duplicate keys sum.
    """
    start, step, t = _resolve_time_grid([r[1] for r in rows], start_ms, step_ms, n_steps)
    values = np.zeros((t, h, w), dtype=np.float64)
    mask = np.zeros((t, h, w), dtype=bool)
    for line_no, ts, row, col, value in rows:
        if not (1 <= row <= h and 1 <= col <= w):
            raise GridOverflowError(
                f"line {line_no}: cell ({row},{col}) outside the declared {h}x{w} grid"
            )
        offset = ts - start
        if offset % step != 0:
            raise MalformedRowError(
                f"line {line_no}: timestamp {ts} is off the {step} ms grid"
            )
        ti = offset // step
        if not (0 <= ti < t):
            raise MalformedRowError(
                f"line {line_no}: timestamp {ts} outside the declared time grid"
            )
        values[ti, row - 1, col - 1] += value
        mask[ti, row - 1, col - 1] = True
    values[~mask] = np.nan
    timestamps = start + step * np.arange(t, dtype=np.int64)
    return TrafficTensor(values, timestamps, mask)


def _parse_value(field: str, line_no: int) -> float:
    try:
        value = float(field)
    except ValueError:
        raise MalformedRowError(f"line {line_no}: {field!r} is not a number") from None
    if not np.isfinite(value) or value < 0:
        raise MalformedRowError(f"line {line_no}: value {field!r} must be finite and non-negative")
    return value


def _parse_int(field: str, line_no: int, what: str) -> int:
    try:
        return int(field)
    except ValueError:
        raise MalformedRowError(f"line {line_no}: {what} {field!r} is not an integer") from None


CANONICAL_HEADER = "timestamp_ms,row,col,value"


def ingest_canonical(path, h: int, w: int, *, start_ms=None, step_ms=None, n_steps=None) -> TrafficTensor:
    """Read canonical CSV rows into a dense tensor.

    The file must start with the ``timestamp_ms,row,col,value`` header.
    Rows may arrive in any order; duplicate (timestamp, cell) rows sum.
    The time grid is inferred from the data unless declared explicitly,
    which an empty file requires.
    """
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != CANONICAL_HEADER:
            raise MalformedRowError(f"line 1: expected header {CANONICAL_HEADER!r}, got {header!r}")
        for line_no, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if len(fields) != 4:
                raise MalformedRowError(f"line {line_no}: expected 4 fields, got {len(fields)}")
            ts = _parse_int(fields[0], line_no, "timestamp")
            row = _parse_int(fields[1], line_no, "row")
            col = _parse_int(fields[2], line_no, "col")
            rows.append((line_no, ts, row, col, _parse_value(fields[3], line_no)))
    return _accumulate(rows, h, w, start_ms, step_ms, n_steps)


def ingest_tim(path, h: int, w: int, *, start_ms=None, step_ms=None, n_steps=None) -> TrafficTensor:
    """Read headerless ``square_id, time_interval_ms, value`` rows.

    Square ids are 1-based and row-major: id 1 is cell (1, 1), id W+1 is
    (2, 1). Fields may be separated by commas, tabs, or spaces.
    """
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.replace(",", " ").split()
            if len(fields) != 3:
                raise MalformedRowError(f"line {line_no}: expected 3 fields, got {len(fields)}")
            square_id = _parse_int(fields[0], line_no, "square_id")
            if not (1 <= square_id <= h * w):
                raise SquareIdOutOfRangeError(
                    f"line {line_no}: square_id {square_id} outside [1, {h * w}]"
                )
            ts = _parse_int(fields[1], line_no, "time_interval")
            row = (square_id + w - 1) // w
            col = (square_id - 1) % w + 1
            rows.append((line_no, ts, row, col, _parse_value(fields[2], line_no)))
    return _accumulate(rows, h, w, start_ms, step_ms, n_steps)


# --- gap filling ---

def impute_linear(tensor: TrafficTensor) -> TrafficTensor:
    """Fill unobserved points per cell by linear interpolation.

    Interior gaps interpolate between the nearest observed anchors;
    leading/trailing gaps extend the nearest observed value. The mask is
    unchanged, so imputed points stay distinguishable. A cell with no
    observed point at all raises ``AllMissingCellError``.
    """
    values = np.array(tensor.values, dtype=np.float64)
    mask = tensor.observed_mask
    t = np.arange(tensor.t, dtype=np.float64)
    for i in range(tensor.h):
        for j in range(tensor.w):
            obs = mask[:, i, j]
            if obs.all():
                continue
            if not obs.any():
                raise AllMissingCellError(f"cell ({i + 1},{j + 1}) has no observed point")
            gaps = ~obs
            values[gaps, i, j] = np.interp(t[gaps], t[obs], values[obs, i, j])
    return TrafficTensor(values, tensor.timestamps, mask)


# --- splits ---

@dataclass(frozen=True)
class SplitSpec:
    """Three half-open [start, end) time ranges in epoch milliseconds."""

    train: Tuple[int, int]
    val: Tuple[int, int]
    test: Tuple[int, int]

    def __post_init__(self):
        for name, (a, b) in (("train", self.train), ("val", self.val), ("test", self.test)):
            if a > b:
                raise StvlError(f"{name} range has start after end")
        if self.train[1] > self.val[0] or self.val[1] > self.test[0]:
            raise StvlError("split ranges must be ordered and disjoint")


def milan_default_split(start_ms: int = MILAN_START_MS) -> SplitSpec:
    """48-day train, 7-day val, 7-day test spans from the grid start."""
    b0 = start_ms
    b1 = b0 + 48 * DAY_MS
    b2 = b1 + 7 * DAY_MS
    b3 = b2 + 7 * DAY_MS
    return SplitSpec((b0, b1), (b1, b2), (b2, b3))


def split(tensor: TrafficTensor, spec: SplitSpec) -> Tuple[TrafficTensor, TrafficTensor, TrafficTensor]:
    """Partition the time axis into train/val/test tensors."""
    if tensor.t == 0:
        raise RangeOutOfBoundsError("cannot split an empty tensor")
    span_start = int(tensor.timestamps[0])
    span_end = int(tensor.timestamps[-1]) + (tensor.step_ms if tensor.t >= 2 else 1)
    for name, (a, b) in (("train", spec.train), ("val", spec.val), ("test", spec.test)):
        if a < b and not (span_start <= a and b <= span_end):
            raise RangeOutOfBoundsError(
                f"{name} range [{a}, {b}) outside the tensor span [{span_start}, {span_end})"
            )
    parts = []
    ts = tensor.timestamps
    for a, b in (spec.train, spec.val, spec.test):
        sel = (ts >= a) & (ts < b)
        parts.append(
            TrafficTensor(tensor.values[sel], ts[sel], tensor.observed_mask[sel])
        )
    return tuple(parts)


# --- windowing ---

@dataclass(frozen=True)
class WindowSample:
    """One forecasting instance anchored at frame index ``anchor``.

    ``history`` covers the full grid for the S frames
    [anchor, anchor+S); scalar ``cell_history`` and ``target`` slice the
    same tensor at one 1-based cell.
    """

    anchor: int
    history: np.ndarray          # (S, H, W)
    cell: Tuple[int, int]        # 1-based (x, y)
    cell_history: np.ndarray     # (S,)
    target: np.ndarray           # (K,)
    target_observed: np.ndarray  # (K,) bool


def full_region(tensor: TrafficTensor) -> Region:
    return ((1, tensor.h), (1, tensor.w))


def _validate_region(region: Region, h: int, w: int) -> Region:
    (x1, x2), (y1, y2) = region
    if not (1 <= x1 <= x2 <= h and 1 <= y1 <= y2 <= w):
        raise GridOverflowError(f"region {region} outside the {h}x{w} grid")
    return region


def region_cells(region: Region):
    """Row-major 1-based cells of an inclusive coordinate-range region."""
    (x1, x2), (y1, y2) = region
    return [(x, y) for x in range(x1, x2 + 1) for y in range(y1, y2 + 1)]


def make_windows(
    tensor: TrafficTensor,
    s: int,
    k: int,
    region: Optional[Region] = None,
    stride: int = 1,
) -> Iterator[WindowSample]:
    """Yield every (anchor, cell) forecasting window, anchor-major.

    Anchors step by ``stride`` from frame 0; a window needs S history
    frames plus K target frames, so the count is
    ``floor((T - S - K) / stride) + 1`` anchors times the region size.
    """
    if s < 1 or k < 1:
        raise StvlError("history and horizon must be at least 1")
    if stride < 1:
        raise StvlError("stride must be at least 1")
    if s + k > tensor.t:
        raise WindowTooLongError(
            f"window needs {s + k} frames but the tensor has {tensor.t}"
        )
    region = _validate_region(region or full_region(tensor), tensor.h, tensor.w)
    cells = region_cells(region)
    values, mask = tensor.values, tensor.observed_mask
    for anchor in range(0, tensor.t - s - k + 1, stride):
        history = values[anchor:anchor + s]
        for x, y in cells:
            yield WindowSample(
                anchor=anchor,
                history=history,
                cell=(x, y),
                cell_history=values[anchor:anchor + s, x - 1, y - 1],
                target=values[anchor + s:anchor + s + k, x - 1, y - 1],
                target_observed=mask[anchor + s:anchor + s + k, x - 1, y - 1],
            )


def window_count(tensor_t: int, s: int, k: int, region: Region, stride: int = 1) -> int:
    """Closed form for the number of samples ``make_windows`` yields."""
    if s + k > tensor_t:
        raise WindowTooLongError(f"window needs {s + k} frames but the tensor has {tensor_t}")
    (x1, x2), (y1, y2) = region
    anchors = (tensor_t - s - k) // stride + 1
    return anchors * (x2 - x1 + 1) * (y2 - y1 + 1)
