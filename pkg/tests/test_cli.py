"""Command-line surface: subcommand behavior, manifests, exit codes.

The full-scale pipeline lives in the acceptance suite; these runs use a
tiny grid so the whole file stays fast.
"""

import json

import numpy as np
import pytest

from stvl.cli import main, worker_count
from stvl.errors import StvlError
from stvl.grid_data import load_cache


def run_ok(*argv):
    assert main(list(argv)) == 0


@pytest.fixture
def sim(tmp_path):
    """A small complete tensor cache plus its path prefix."""
    out = tmp_path / "sim.stvt"
    run_ok("simulate", "--out", str(out), "--h", "6", "--w", "6",
           "--frames", "720", "--missing-rate", "0.1", "--seed", "1")
    imp = tmp_path / "imp.stvt"
    run_ok("impute", str(out), "--out", str(imp))
    return tmp_path


class TestPipeline:
    def test_simulate_writes_cache_and_manifest(self, tmp_path):
        out = tmp_path / "t.stvt"
        run_ok("simulate", "--out", str(out), "--h", "4", "--w", "4",
               "--frames", "30", "--seed", "2")
        tt = load_cache(out)
        assert (tt.t, tt.h, tt.w) == (30, 4, 4)
        manifest = json.loads((tmp_path / "t.stvt.manifest.json").read_text())
        assert manifest["subcommand"] == "simulate"
        assert manifest["resolved"]["seed"] == 2
        assert "argv" in manifest and "--out" in manifest["argv"]

    def test_simulate_days_and_frames_are_exclusive(self, tmp_path):
        code = main(["simulate", "--out", str(tmp_path / "x"), "--days", "1",
                     "--frames", "10"])
        assert code == 1

    def test_days_flag_sets_the_frame_count(self, tmp_path):
        out = tmp_path / "d.stvt"
        run_ok("simulate", "--out", str(out), "--h", "2", "--w", "2", "--days", "2")
        assert load_cache(out).t == 288

    def test_split_writes_three_caches(self, sim):
        run_ok("split", str(sim / "imp.stvt"), "--out-prefix", str(sim / "run"),
               "--days", "3,1,1")
        parts = [load_cache(sim / f"run.{name}.stvt") for name in ("train", "val", "test")]
        assert [p.t for p in parts] == [432, 144, 144]
        assert parts[1].timestamps[0] - parts[0].timestamps[-1] == 600_000

    def test_split_needs_a_mode(self, sim):
        assert main(["split", str(sim / "imp.stvt"), "--out-prefix", str(sim / "z")]) == 2

    def test_ingest_round_trips_the_simulator_csv(self, tmp_path):
        run_ok("simulate", "--out", str(tmp_path / "a.stvt"), "--csv",
               str(tmp_path / "a.csv"), "--h", "3", "--w", "3", "--frames", "20",
               "--missing-rate", "0.2", "--seed", "5")
        run_ok("ingest", str(tmp_path / "a.csv"), "--format", "canonical",
               "--h", "3", "--w", "3", "--out", str(tmp_path / "b.stvt"))
        assert (tmp_path / "a.stvt").read_bytes() == (tmp_path / "b.stvt").read_bytes()

    def test_forecast_and_evaluate(self, sim):
        run_ok("split", str(sim / "imp.stvt"), "--out-prefix", str(sim / "run"),
               "--days", "2,1,2")
        test_split = str(sim / "run.test.stvt")
        fc = str(sim / "fc.jsonl")
        # The warmup keeps every anchor deep enough for a full daily
        # period of history.
        run_ok("forecast", test_split, "--baseline", "seasonal-naive", "--out", fc,
               "--s", "6", "--k", "12", "--region", "2:3,2:3", "--stride", "24",
               "--warmup", "144")
        rows = [json.loads(line) for line in open(fc)]
        assert {tuple(r["cell"]) for r in rows} == {(2, 2), (2, 3), (3, 2), (3, 3)}
        assert all(len(r["values"]) == 12 for r in rows)
        run_ok("evaluate", "--forecasts", fc, "--test", test_split, "--s", "6",
               "--horizons", "1,12", "--out-prefix", str(sim / "ev"), "--per-cell")
        payload = json.loads((sim / "ev.json").read_text())
        assert [h["horizon"] for h in payload["horizons"]] == [1, 12]
        assert set(payload["horizons"][0]["per_cell"]) == {"2,2", "2,3", "3,2", "3,3"}
        tsv = (sim / "ev.tsv").read_text().splitlines()
        assert tsv[0].startswith("horizon\t") and len(tsv) == 3

    def test_gen_sft_records_decode(self, sim):
        out = str(sim / "sft.jsonl")
        run_ok("gen-sft", str(sim / "imp.stvt"), "--out", out, "--s", "6", "--k", "4",
               "--region", "1:1,1:1", "--stride", "360", "--meta", "source=synthetic")
        rows = [json.loads(line) for line in open(out)]
        assert len(rows) == 2
        assert "source=synthetic" in rows[0]["prompt"]
        assert "anchor_ms=" in rows[0]["prompt"]
        assert len(rows[0]["targets"]) == 4

    def test_render_writes_a_png(self, sim, tmp_path):
        png = tmp_path / "f.png"
        run_ok("render", str(sim / "imp.stvt"), "--frame", "10", "--out", str(png))
        assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_render_rejects_frames_with_holes(self, sim, tmp_path):
        code = main(["render", str(sim / "sim.stvt"), "--frame", "10",
                     "--out", str(tmp_path / "f.png")])
        assert code == 2


class TestAlignAndScore:
    def test_gen_align_stage1_slice(self, tmp_path):
        out = tmp_path / "a1.jsonl"
        run_ok("gen-align", "--stage", "1", "--n", "40", "--out", str(out))
        lines = out.read_text().splitlines()
        assert len(lines) == 40
        first = json.loads(lines[0])
        assert first["type"] == "transcribe:str2tok"

    def test_gen_align_stage2_is_seed_deterministic(self, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        run_ok("gen-align", "--stage", "2", "--n", "60", "--seed", "4", "--out", str(a))
        run_ok("gen-align", "--stage", "2", "--n", "60", "--seed", "4", "--out", str(b))
        assert a.read_bytes() == b.read_bytes()

    def test_score_lines(self, tmp_path):
        src = tmp_path / "preds.tsv"
        src.write_text("<|FP114/0|> <|FP25/0|>\t1.14,2.5\n"
                       "garbage\t1.0,2.0\n")
        out = tmp_path / "scored.tsv"
        run_ok("score", str(src), "--out", str(out))
        lines = out.read_text().splitlines()
        assert lines[0] == "accuracy_term\tlength_penalty\tdecode_penalty\tnrmse\ttotal"
        assert lines[1].split("\t")[-1] == "1"
        assert lines[2].split("\t")[-1] == "-1"

    def test_grpo_demo_structure(self, tmp_path, sim):
        sft = str(sim / "sft.jsonl")
        run_ok("gen-sft", str(sim / "imp.stvt"), "--out", sft, "--s", "6", "--k", "4",
               "--region", "2:2,2:2", "--stride", "360")
        out = tmp_path / "demo.json"
        run_ok("grpo-demo", sft, "--out", str(out), "--rates", "0,0.5",
               "--seeds", "0", "--group-size", "4")
        payload = json.loads(out.read_text())
        assert payload["sweep"]["0"] == 1.0
        assert payload["sweep"]["0.5"] < 1.0
        step = payload["step_demo"]["0.5"]
        assert len(step["rewards"]) == 4
        assert abs(sum(step["advantages"])) < 1e-9
        assert isinstance(step["objective"], float)


class TestManifests:
    def test_rerun_reproduces_bytes(self, tmp_path):
        out = tmp_path / "t.stvt"
        run_ok("simulate", "--out", str(out), "--h", "3", "--w", "3",
               "--frames", "25", "--seed", "9")
        before = out.read_bytes()
        out.unlink()
        run_ok("rerun", "--manifest", str(tmp_path / "t.stvt.manifest.json"))
        assert out.read_bytes() == before

    def test_rerun_rejects_non_manifests(self, tmp_path):
        path = tmp_path / "x.json"
        path.write_text("[1, 2, 3]")
        assert main(["rerun", "--manifest", str(path)]) == 2

    def test_manifest_is_stable_json(self, tmp_path):
        out = tmp_path / "t.stvt"
        run_ok("simulate", "--out", str(out), "--h", "3", "--w", "3", "--frames", "25")
        text = (tmp_path / "t.stvt.manifest.json").read_text()
        payload = json.loads(text)
        assert json.dumps(payload, indent=2, sort_keys=True) + "\n" == text


class TestFailureModes:
    def test_unknown_baseline_is_a_usage_error(self, tmp_path):
        code = main(["forecast", str(tmp_path / "x.stvt"), "--baseline", "oracle",
                     "--out", str(tmp_path / "o")])
        assert code == 1

    def test_bad_region_spelling_is_a_usage_error(self, tmp_path):
        code = main(["gen-sft", str(tmp_path / "x.stvt"), "--out", str(tmp_path / "o"),
                     "--region", "1-2,3-4"])
        assert code == 1

    def test_missing_input_is_a_data_error(self, tmp_path):
        assert main(["impute", str(tmp_path / "absent.stvt"),
                     "--out", str(tmp_path / "o")]) == 2

    def test_worker_count_env_override(self, monkeypatch):
        monkeypatch.setenv("STVL_THREADS", "3")
        assert worker_count() == 3
        monkeypatch.setenv("STVL_THREADS", "zero")
        with pytest.raises(StvlError):
            worker_count()
        monkeypatch.setenv("STVL_THREADS", "0")
        with pytest.raises(StvlError):
            worker_count()
        monkeypatch.delenv("STVL_THREADS")
        assert worker_count() >= 1
