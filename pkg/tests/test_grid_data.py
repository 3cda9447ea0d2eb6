"""Tensor construction, ingestion, imputation, splitting, windowing."""

import numpy as np
import pytest

from stvl.errors import (
    AllMissingCellError,
    GridOverflowError,
    MalformedRowError,
    RangeOutOfBoundsError,
    SquareIdOutOfRangeError,
    StvlError,
    WindowTooLongError,
)
from stvl.grid_data import (
    CANONICAL_HEADER,
    DAY_MS,
    MILAN_START_MS,
    MILAN_STEP_MS,
    SplitSpec,
    TrafficTensor,
    WindowSample,
    full_region,
    impute_linear,
    ingest_canonical,
    ingest_tim,
    load_cache,
    make_windows,
    milan_default_split,
    region_cells,
    save_cache,
    split,
    to_csv,
    window_count,
)


def _tensor(t=6, h=2, w=3, step=600_000, start=0, fill=None):
    values = np.arange(t * h * w, dtype=np.float64).reshape(t, h, w)
    if fill is not None:
        values[:] = fill
    mask = np.ones((t, h, w), dtype=bool)
    stamps = start + step * np.arange(t, dtype=np.int64)
    return TrafficTensor(values=values, timestamps=stamps, observed_mask=mask)


class TestTrafficTensor:
    def test_basic_properties(self):
        tt = _tensor()
        assert (tt.t, tt.h, tt.w) == (6, 2, 3)
        assert tt.step_ms == 600_000
        assert tt.is_complete

    def test_arrays_become_read_only(self):
        tt = _tensor()
        for arr in (tt.values, tt.timestamps, tt.observed_mask):
            with pytest.raises(ValueError):
                arr[0] = 0

    def test_rejects_irregular_timestamps(self):
        with pytest.raises(StvlError):
            TrafficTensor(
                values=np.zeros((3, 1, 1)),
                timestamps=np.array([0, 10, 30], dtype=np.int64),
                observed_mask=np.ones((3, 1, 1), dtype=bool),
            )

    def test_rejects_negative_observed_values(self):
        values = np.zeros((2, 1, 1))
        values[0] = -1.0
        with pytest.raises(StvlError):
            TrafficTensor(
                values=values,
                timestamps=np.array([0, 10], dtype=np.int64),
                observed_mask=np.ones((2, 1, 1), dtype=bool),
            )

    def test_rejects_nan_at_observed_points(self):
        values = np.zeros((2, 1, 1))
        values[1] = np.nan
        with pytest.raises(StvlError):
            TrafficTensor(
                values=values,
                timestamps=np.array([0, 10], dtype=np.int64),
                observed_mask=np.ones((2, 1, 1), dtype=bool),
            )

    def test_nan_allowed_where_unobserved(self):
        values = np.ones((2, 1, 1))
        values[1] = np.nan
        mask = np.ones((2, 1, 1), dtype=bool)
        mask[1] = False
        tt = TrafficTensor(values=values, timestamps=np.array([0, 10], dtype=np.int64),
                           observed_mask=mask)
        assert not tt.is_complete


class TestCache:
    def test_round_trip_is_exact(self, tmp_path):
        tt = _tensor(t=5, h=3, w=4, start=MILAN_START_MS)
        # Punch some holes so the mask carries information.
        values = tt.values.copy()
        mask = tt.observed_mask.copy()
        mask[2, 1, 1] = mask[4, 0, 3] = False
        values[~mask] = np.nan
        tt = TrafficTensor(values=values, timestamps=tt.timestamps, observed_mask=mask)
        path = tmp_path / "t.stvt"
        save_cache(tt, path)
        back = load_cache(path)
        assert np.array_equal(back.values, tt.values, equal_nan=True)
        assert np.array_equal(back.timestamps, tt.timestamps)
        assert np.array_equal(back.observed_mask, tt.observed_mask)

    def test_save_is_deterministic(self, tmp_path):
        tt = _tensor()
        save_cache(tt, tmp_path / "a")
        save_cache(tt, tmp_path / "b")
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        tt = _tensor()
        path = tmp_path / "t.stvt"
        save_cache(tt, path)
        raw = bytearray(path.read_bytes())
        raw[:5] = b"WRONG"
        bad = tmp_path / "bad.stvt"
        bad.write_bytes(bytes(raw))
        with pytest.raises(StvlError):
            load_cache(bad)

    def test_truncation_rejected(self, tmp_path):
        tt = _tensor()
        path = tmp_path / "t.stvt"
        save_cache(tt, path)
        (tmp_path / "cut.stvt").write_bytes(path.read_bytes()[:-9])
        with pytest.raises(StvlError):
            load_cache(tmp_path / "cut.stvt")


class TestIngest:
    def test_canonical_round_trip(self, tmp_path):
        tt = _tensor(t=4, h=2, w=2, start=MILAN_START_MS)
        path = tmp_path / "t.csv"
        to_csv(tt, path)
        back = ingest_canonical(path, h=2, w=2)
        assert np.array_equal(back.values, tt.values)
        assert np.array_equal(back.timestamps, tt.timestamps)

    def test_canonical_duplicates_sum(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text(
            f"{CANONICAL_HEADER}\n"
            "0,1,1,2.5\n"
            "0,1,1,1.5\n"
            "600000,1,1,7.0\n"
        )
        tt = ingest_canonical(path, h=1, w=1)
        assert tt.values[0, 0, 0] == 4.0
        assert tt.values[1, 0, 0] == 7.0

    def test_canonical_header_enforced(self, tmp_path):
        path = tmp_path / "h.csv"
        path.write_text("time,row,col,value\n0,1,1,2.5\n")
        with pytest.raises(MalformedRowError):
            ingest_canonical(path, h=1, w=1)

    def test_canonical_off_grid_timestamp(self, tmp_path):
        path = tmp_path / "o.csv"
        path.write_text(f"{CANONICAL_HEADER}\n0,1,1,1.0\n300000,1,1,1.0\n600000,1,1,1.0\n")
        with pytest.raises(MalformedRowError):
            ingest_canonical(path, h=1, w=1, start_ms=0, step_ms=600_000)

    def test_canonical_cell_overflow(self, tmp_path):
        path = tmp_path / "c.csv"
        path.write_text(f"{CANONICAL_HEADER}\n0,3,1,1.0\n")
        with pytest.raises(GridOverflowError) as err:
            ingest_canonical(path, h=2, w=2, start_ms=0, step_ms=600_000, n_steps=1)
        assert "line 2" in str(err.value)

    def test_canonical_rejects_negative_values(self, tmp_path):
        path = tmp_path / "n.csv"
        path.write_text(f"{CANONICAL_HEADER}\n0,1,1,-3.0\n")
        with pytest.raises(MalformedRowError):
            ingest_canonical(path, h=1, w=1)

    def test_tim_square_id_layout(self, tmp_path):
        # Square ids count row-major from 1, so id 5 on a 2-wide grid
        # lands at row 3, column 1.
        path = tmp_path / "t.txt"
        path.write_text("1\t0\t1.0\n5\t0\t2.0\n6\t600000\t3.0\n")
        tt = ingest_tim(path, h=3, w=2)
        assert tt.values[0, 0, 0] == 1.0
        assert tt.values[0, 2, 0] == 2.0
        assert tt.values[1, 2, 1] == 3.0
        assert not tt.observed_mask[0, 1, 1]

    def test_tim_rejects_ids_off_grid(self, tmp_path):
        path = tmp_path / "t.txt"
        path.write_text("7\t0\t1.0\n")
        with pytest.raises(SquareIdOutOfRangeError):
            ingest_tim(path, h=3, w=2)


class TestImpute:
    def test_affine_interior_gaps_recovered_exactly(self):
        t = 20
        base = 3.0 * np.arange(t) + 7.0
        values = np.broadcast_to(base[:, None, None], (t, 1, 1)).copy()
        mask = np.ones((t, 1, 1), dtype=bool)
        mask[4:9, 0, 0] = False
        mask[15, 0, 0] = False
        holes = values.copy()
        holes[~mask] = np.nan
        tt = TrafficTensor(values=holes, timestamps=np.arange(t, dtype=np.int64) * 10,
                           observed_mask=mask)
        out = impute_linear(tt)
        assert np.array_equal(out.values[:, 0, 0], base)
        assert out.is_complete
        # The mask still records which points were measured.
        assert np.array_equal(out.observed_mask, mask)

    def test_boundary_gaps_extend_flat(self):
        values = np.array([np.nan, np.nan, 4.0, 6.0, np.nan]).reshape(-1, 1, 1)
        mask = ~np.isnan(values)
        tt = TrafficTensor(values=values, timestamps=np.arange(5, dtype=np.int64) * 10,
                           observed_mask=mask)
        out = impute_linear(tt)
        assert list(out.values[:, 0, 0]) == [4.0, 4.0, 4.0, 6.0, 6.0]

    def test_all_missing_cell_rejected(self):
        values = np.full((3, 1, 2), np.nan)
        values[:, 0, 0] = 1.0
        mask = ~np.isnan(values)
        tt = TrafficTensor(values=values, timestamps=np.arange(3, dtype=np.int64) * 10,
                           observed_mask=mask)
        with pytest.raises(AllMissingCellError):
            impute_linear(tt)

    def test_complete_tensor_passes_through(self):
        tt = _tensor()
        out = impute_linear(tt)
        assert np.array_equal(out.values, tt.values)


class TestSplit:
    def test_spec_rejects_overlap(self):
        with pytest.raises(StvlError):
            SplitSpec(train=(0, 100), val=(90, 200), test=(200, 300))

    def test_spec_rejects_disorder(self):
        with pytest.raises(StvlError):
            SplitSpec(train=(100, 200), val=(0, 100), test=(200, 300))

    def test_half_open_boundaries(self):
        tt = _tensor(t=10, step=10, start=0)
        spec = SplitSpec(train=(0, 40), val=(40, 70), test=(70, 100))
        a, b, c = split(tt, spec)
        assert (a.t, b.t, c.t) == (4, 3, 3)
        assert a.timestamps[-1] == 30 and b.timestamps[0] == 40

    def test_empty_middle_range_allowed(self):
        tt = _tensor(t=10, step=10)
        spec = SplitSpec(train=(0, 50), val=(50, 50), test=(50, 100))
        a, b, c = split(tt, spec)
        assert (a.t, b.t, c.t) == (5, 0, 5)

    def test_out_of_range_spec_rejected(self):
        tt = _tensor(t=10, step=10)
        spec = SplitSpec(train=(0, 50), val=(50, 80), test=(80, 200))
        with pytest.raises(RangeOutOfBoundsError):
            split(tt, spec)

    def test_milan_default_counts(self):
        frames = 62 * DAY_MS // MILAN_STEP_MS
        tt = _tensor(t=frames, h=1, w=1, step=MILAN_STEP_MS, start=MILAN_START_MS, fill=1.0)
        a, b, c = split(tt, milan_default_split())
        assert (a.t, b.t, c.t) == (6912, 1008, 1008)


class TestWindows:
    def test_samples_match_manual_slices(self):
        tt = _tensor(t=8, h=2, w=2)
        samples = list(make_windows(tt, s=3, k=2))
        assert len(samples) == window_count(8, 3, 2, full_region(tt))
        first = samples[0]
        assert isinstance(first, WindowSample)
        assert first.anchor == 0 and first.cell == (1, 1)
        assert np.array_equal(first.history, tt.values[0:3])
        assert np.array_equal(first.cell_history, tt.values[0:3, 0, 0])
        assert np.array_equal(first.target, tt.values[3:5, 0, 0])
        assert first.target_observed.all()
        # Anchor-major, cells row-major within an anchor.
        assert [s.cell for s in samples[:4]] == [(1, 1), (1, 2), (2, 1), (2, 2)]
        assert samples[4].anchor == 1

    def test_stride_and_region(self):
        tt = _tensor(t=12, h=3, w=3)
        region = ((2, 3), (1, 2))
        samples = list(make_windows(tt, s=4, k=2, region=region, stride=3))
        anchors = sorted({s.anchor for s in samples})
        assert anchors == [0, 3, 6]
        assert {s.cell for s in samples} == {(2, 1), (2, 2), (3, 1), (3, 2)}
        assert len(samples) == window_count(12, 4, 2, region, stride=3)

    def test_window_longer_than_tensor_rejected(self):
        tt = _tensor(t=5)
        with pytest.raises(WindowTooLongError):
            list(make_windows(tt, s=4, k=2))
        with pytest.raises(WindowTooLongError):
            window_count(5, 4, 2, ((1, 1), (1, 1)))

    def test_region_outside_grid_rejected(self):
        tt = _tensor(t=8, h=2, w=2)
        with pytest.raises(GridOverflowError):
            list(make_windows(tt, s=2, k=2, region=((1, 3), (1, 2))))

    def test_region_cells_row_major(self):
        assert region_cells(((1, 2), (4, 5))) == [(1, 4), (1, 5), (2, 4), (2, 5)]

    def test_count_properties(self, rng):
        for _ in range(200):
            t = int(rng.integers(4, 40))
            s = int(rng.integers(1, 4))
            k = int(rng.integers(1, 4))
            if s + k > t:
                continue
            stride = int(rng.integers(1, 5))
            n = window_count(t, s, k, ((1, 2), (1, 3)), stride=stride)
            assert n == (1 + (t - s - k) // stride) * 6
