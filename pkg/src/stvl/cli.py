"""Command-line entry point.

Every subcommand that writes files also writes a ``<out>.manifest.json``
recording the argv and resolved configuration (no timestamps), and
``rerun --manifest`` replays it; artifacts regenerate byte-identically
because all randomness hangs off explicit seeds.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import itertools
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Tuple

import numpy as np

from stvl import __version__
from stvl import visual_pipeline as vp
from stvl.bench import (
    BASELINES,
    FRAMES_PER_DAY,
    SynthConfig,
    ToyPolicy,
    corruption_sweep,
    record_ground_truth,
    run_baseline,
    synth_traffic,
    toy_policy_logp,
    toy_policy_sample,
)
from stvl.dataset_gen import (
    DEFAULT_LEN_RANGE,
    DEFAULT_STAGE2_EXAMPLES,
    SftRecord,
    build_sft_record,
    deserialize_records,
    gen_stage1,
    gen_stage2,
    serialize_records,
)
from stvl.errors import StvlError
from stvl.evaluation import (
    CellForecast,
    evaluate_run,
    write_report_json,
    write_report_tsv,
)
from stvl.grid_data import (
    DAY_MS,
    SplitSpec,
    TrafficTensor,
    ingest_canonical,
    ingest_tim,
    impute_linear,
    load_cache,
    make_windows,
    milan_default_split,
    save_cache,
    split,
    to_csv,
)
from stvl.numcodec import build_vocabulary, parse_token_stream
from stvl.rl_kernel import (
    GrpoConfig,
    RewardConfig,
    group_advantages,
    grpo_objective,
    reward,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def worker_count() -> int:
    """Worker cap for parallel sections; STVL_THREADS overrides."""
    raw = os.environ.get("STVL_THREADS", "").strip()
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise StvlError(f"STVL_THREADS must be an integer, got {raw!r}") from None
        if n < 1:
            raise StvlError(f"STVL_THREADS must be at least 1, got {n}")
        return n
    return os.cpu_count() or 1


# --- flag value parsers ---

def _region_arg(text: str) -> Tuple[Tuple[int, int], Tuple[int, int]]:
    try:
        xs, ys = text.split(",")
        x1, x2 = (int(v) for v in xs.split(":"))
        y1, y2 = (int(v) for v in ys.split(":"))
        return ((x1, x2), (y1, y2))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"region must look like x1:x2,y1:y2, got {text!r}"
        ) from None


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _len_range(text: str) -> Tuple[int, int]:
    values = _int_list(text)
    if len(values) != 2:
        raise argparse.ArgumentTypeError(f"expected MIN,MAX, got {text!r}")
    return (values[0], values[1])


def _norm_arg(text: str):
    if text == "mean":
        return "mean"
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f'norm must be a number or "mean", got {text!r}') from None


# --- subcommand handlers (each returns the primary output path) ---

def _cmd_vocab(args) -> str:
    build_vocabulary().write_tsv(args.out)
    return args.out


def _cmd_simulate(args) -> str:
    t = args.frames if args.frames else args.days * FRAMES_PER_DAY
    cfg = SynthConfig(
        h=args.h, w=args.w, t=t, step_ms=args.step_ms, start_ms=args.start_ms,
        base_level=args.base_level, daily_period=args.daily_period,
        daily_amplitude=args.daily_amplitude, weekly_amplitude=args.weekly_amplitude,
        n_hotspots=args.hotspots, hotspot_scale=args.hotspot_scale,
        noise_sigma=args.noise_sigma, missing_rate=args.missing_rate, seed=args.seed,
    )
    tensor = synth_traffic(cfg)
    save_cache(tensor, args.out)
    if args.csv:
        to_csv(tensor, args.csv)
    return args.out


def _cmd_ingest(args) -> str:
    read = ingest_canonical if args.format == "canonical" else ingest_tim
    tensor = read(
        args.input, args.h, args.w,
        start_ms=args.start_ms, step_ms=args.step_ms, n_steps=args.n_steps,
    )
    save_cache(tensor, args.out)
    return args.out


def _cmd_impute(args) -> str:
    save_cache(impute_linear(load_cache(args.input)), args.out)
    return args.out


def _cmd_split(args) -> str:
    tensor = load_cache(args.input)
    if args.milan:
        spec = milan_default_split()
    elif args.days:
        if len(args.days) != 3:
            raise StvlError(f"--days needs three spans, got {args.days}")
        b = [int(tensor.timestamps[0])]
        for d in args.days:
            b.append(b[-1] + d * DAY_MS)
        spec = SplitSpec((b[0], b[1]), (b[1], b[2]), (b[2], b[3]))
    elif args.boundaries:
        if len(args.boundaries) != 4:
            raise StvlError(f"--boundaries needs four timestamps, got {args.boundaries}")
        t0, t1, t2, t3 = args.boundaries
        spec = SplitSpec((t0, t1), (t1, t2), (t2, t3))
    else:
        raise StvlError("pass one of --milan, --days, or --boundaries")
    for part, name in zip(split(tensor, spec), ("train", "val", "test")):
        save_cache(part, f"{args.out_prefix}.{name}.stvt")
    return f"{args.out_prefix}.train.stvt"


def _cmd_render(args) -> str:
    tensor = load_cache(args.input)
    if not (0 <= args.frame < tensor.t):
        raise StvlError(f"frame {args.frame} outside [0, {tensor.t})")
    frame = tensor.values[args.frame]
    if not np.all(np.isfinite(frame)):
        raise StvlError("frame has missing points; run impute first")
    t_max = args.tmax if args.tmax else vp.fit_tmax(tensor.values)
    cfg = vp.NormConfig(exponent=args.exponent, t_max=t_max)
    vp.write_png(vp.power_normalize(frame, cfg), args.out)
    return args.out


def _cmd_gen_align(args) -> str:
    vocab = build_vocabulary()
    if args.stage == 1:
        stream = gen_stage1(vocab, seed=args.seed)
        if args.n:
            stream = itertools.islice(stream, args.n)
    else:
        n = args.n if args.n else DEFAULT_STAGE2_EXAMPLES
        stream = gen_stage2(vocab, n_examples=n, len_range=args.len_range,
                            seed=args.seed if args.seed is not None else 0)
    serialize_records(stream, args.out)
    return args.out


def _cmd_gen_sft(args) -> str:
    tensor = load_cache(args.input)
    extras = {}
    for item in args.meta or []:
        if "=" not in item:
            raise StvlError(f"--meta needs key=value, got {item!r}")
        key, value = item.split("=", 1)
        extras[key] = value

    def records():
        for sample in make_windows(tensor, args.s, args.k, region=args.region, stride=args.stride):
            meta = dict(extras)
            meta["anchor_ms"] = int(tensor.timestamps[sample.anchor])
            meta["step_ms"] = tensor.step_ms
            yield build_sft_record(sample, metadata=meta, encode_mode=args.mode)

    serialize_records(records(), args.out)
    return args.out


def _cmd_forecast(args) -> str:
    tensor = load_cache(args.input)
    if not tensor.is_complete:
        raise StvlError("tensor has missing points; run impute first")
    region = args.region or ((1, tensor.h), (1, tensor.w))
    (x1, x2), (y1, y2) = region
    anchors = [
        a for a in range(0, tensor.t - args.s - args.k + 1, args.stride)
        if a + args.s >= args.warmup
    ]
    if not anchors:
        raise StvlError("no anchors satisfy the warmup requirement")
    cells = [(x, y) for x in range(x1, x2 + 1) for y in range(y1, y2 + 1)]

    def forecast_anchor(anchor: int) -> List[dict]:
        rows = []
        for x, y in cells:
            history = tensor.values[: anchor + args.s, x - 1, y - 1]
            values = run_baseline(args.baseline, history, args.period, args.k)
            rows.append({"anchor": anchor, "cell": [x, y], "values": [float(v) for v in values]})
        return rows

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        blocks = list(pool.map(forecast_anchor, anchors))
    with open(args.out, "w", encoding="utf-8") as fh:
        for block in blocks:
            for row in block:
                fh.write(json.dumps(row, separators=(",", ":")) + "\n")
    return args.out


def _load_forecasts(path) -> List[CellForecast]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                out.append(CellForecast(
                    anchor=int(row["anchor"]),
                    cell=(int(row["cell"][0]), int(row["cell"][1])),
                    values=tuple(float(v) for v in row["values"]),
                ))
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise StvlError(f"{path}: line {line_no}: bad forecast row ({exc})") from None
    return out


def _cmd_evaluate(args) -> str:
    reports = evaluate_run(
        _load_forecasts(args.forecasts),
        load_cache(args.test),
        args.s,
        args.horizons,
        at_step=args.at_step,
        per_cell=args.per_cell,
    )
    write_report_tsv(reports, f"{args.out_prefix}.tsv")
    write_report_json(reports, f"{args.out_prefix}.json")
    return f"{args.out_prefix}.tsv"


def _cmd_score(args) -> str:
    cfg = RewardConfig(x_h=args.x_h, norm=args.norm)
    fields = ("accuracy_term", "length_penalty", "decode_penalty", "nrmse", "total")
    with open(args.input, "r", encoding="utf-8") as src, \
            open(args.out, "w", encoding="utf-8") as dst:
        dst.write("\t".join(fields) + "\n")
        for line_no, line in enumerate(src, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise StvlError(f"{args.input}: line {line_no}: expected TEXT<TAB>GT_CSV")
            text, gt_csv = line.split("\t", 1)
            try:
                gt = [float(v) for v in gt_csv.split(",")]
            except ValueError:
                raise StvlError(
                    f"{args.input}: line {line_no}: ground truth must be comma-separated numbers"
                ) from None
            breakdown = reward(text, gt, cfg)
            dst.write("\t".join(f"{getattr(breakdown, f):.17g}" for f in fields) + "\n")
    return args.out


def _cmd_grpo_demo(args) -> str:
    records = [r for r in deserialize_records(args.input) if isinstance(r, SftRecord)]
    if not records:
        raise StvlError(f"{args.input}: no forecasting records found")
    reward_cfg = RewardConfig(x_h=args.x_h)
    grpo_cfg = GrpoConfig(group_size=args.group_size, kl_beta=args.kl_beta,
                          clip_epsilon=args.clip_epsilon)
    sweep = corruption_sweep(
        records, rates=args.rates, seeds=args.seeds,
        group_size=args.group_size, temperature=args.temperature, reward_cfg=reward_cfg,
    )

    # One full policy-gradient step on the first record per rate: score a
    # sampled group, center the rewards, and evaluate the surrogate with
    # the sampler as the old policy, a mildly sharpened one as new, and a
    # near-clean one as reference.
    demos = {}
    for rate in args.rates:
        policy = ToyPolicy(temperature=args.temperature, corruption_rate=rate, seed=args.seeds[0])
        new_policy = ToyPolicy(temperature=args.temperature,
                               corruption_rate=rate * 0.8, seed=args.seeds[0])
        ref_policy = ToyPolicy(temperature=args.temperature, corruption_rate=0.05,
                               seed=args.seeds[0])
        record = records[0]
        gt = record_ground_truth(record)
        group = toy_policy_sample(record, policy, args.group_size)
        rewards = [reward(text, gt, reward_cfg).total for text, _ in group]
        advantages = group_advantages(rewards, grpo_cfg)
        triples = []
        for text, logp_old in group:
            emitted = parse_token_stream(text).values
            triples.append((
                toy_policy_logp(emitted, gt, new_policy),
                logp_old,
                toy_policy_logp(emitted, gt, ref_policy),
            ))
        objective = grpo_objective(triples, advantages, grpo_cfg)
        demos[f"{rate:g}"] = {
            "rewards": rewards,
            "advantages": [float(a) for a in advantages],
            "objective": objective,
        }

    payload = {
        "sweep": {f"{rate:g}": sweep[float(rate)] for rate in args.rates},
        "step_demo": demos,
    }
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return args.out


def _cmd_rerun(args) -> Optional[str]:
    with open(args.manifest, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if not isinstance(manifest, dict) or "argv" not in manifest:
        raise StvlError(f"{args.manifest}: not a run manifest")
    code = main([str(v) for v in manifest["argv"]])
    if code != 0:
        raise StvlError(f"replayed command exited with {code}")
    return None


# --- parser assembly ---

def _build_parser() -> _Parser:
    parser = _Parser(prog="stvl", description=__doc__)
    parser.add_argument("--version", action="version", version=f"stvl {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("vocab", help="write the token vocabulary as TSV")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_vocab)

    p = sub.add_parser("simulate", help="generate a synthetic traffic tensor")
    p.add_argument("--out", required=True, help="binary tensor cache to write")
    p.add_argument("--csv", help="also write the canonical CSV here")
    p.add_argument("--h", type=int, default=20)
    p.add_argument("--w", type=int, default=20)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--days", type=int, default=30)
    group.add_argument("--frames", type=int)
    p.add_argument("--step-ms", type=int, default=SynthConfig.step_ms)
    p.add_argument("--start-ms", type=int, default=SynthConfig.start_ms)
    p.add_argument("--base-level", type=float, default=SynthConfig.base_level)
    p.add_argument("--daily-period", type=int, default=SynthConfig.daily_period)
    p.add_argument("--daily-amplitude", type=float, default=SynthConfig.daily_amplitude)
    p.add_argument("--weekly-amplitude", type=float, default=SynthConfig.weekly_amplitude)
    p.add_argument("--hotspots", type=int, default=SynthConfig.n_hotspots)
    p.add_argument("--hotspot-scale", type=float, default=SynthConfig.hotspot_scale)
    p.add_argument("--noise-sigma", type=float, default=SynthConfig.noise_sigma)
    p.add_argument("--missing-rate", type=float, default=SynthConfig.missing_rate)
    p.add_argument("--seed", type=int, default=SynthConfig.seed)
    p.set_defaults(handler=_cmd_simulate)

    p = sub.add_parser("ingest", help="read CSV traffic data into a tensor cache")
    p.add_argument("input")
    p.add_argument("--format", choices=("canonical", "tim"), default="canonical")
    p.add_argument("--h", type=int, required=True)
    p.add_argument("--w", type=int, required=True)
    p.add_argument("--start-ms", type=int)
    p.add_argument("--step-ms", type=int)
    p.add_argument("--n-steps", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_ingest)

    p = sub.add_parser("impute", help="fill missing points by linear interpolation")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_impute)

    p = sub.add_parser("split", help="cut a tensor into train/val/test caches")
    p.add_argument("input")
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--milan", action="store_true", help="48/7/7-day convention")
    p.add_argument("--days", type=_int_list, help="train,val,test spans in days")
    p.add_argument("--boundaries", type=_int_list, help="four epoch-ms timestamps")
    p.set_defaults(handler=_cmd_split)

    p = sub.add_parser("render", help="write one frame as a PNG image")
    p.add_argument("input")
    p.add_argument("--frame", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--exponent", type=float, default=0.5)
    p.add_argument("--tmax", type=float)
    p.set_defaults(handler=_cmd_render)

    p = sub.add_parser("gen-align", help="generate alignment corpora")
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--n", type=int, help="example count (stage 1: truncate; 0 or absent = full)")
    p.add_argument("--len-range", type=_len_range, default=DEFAULT_LEN_RANGE)
    p.set_defaults(handler=_cmd_gen_align)

    p = sub.add_parser("gen-sft", help="build forecasting records from a tensor")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--s", type=int, default=12, help="history length")
    p.add_argument("--k", type=int, default=36, help="horizon length")
    p.add_argument("--region", type=_region_arg)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--mode", choices=("clamp", "strict"), default="clamp")
    p.add_argument("--meta", action="append", help="extra key=value prompt metadata")
    p.set_defaults(handler=_cmd_gen_sft)

    p = sub.add_parser("forecast", help="run a reference baseline over a tensor")
    p.add_argument("input")
    p.add_argument("--baseline", choices=BASELINES, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--s", type=int, default=12)
    p.add_argument("--k", type=int, default=36)
    p.add_argument("--period", type=int, default=FRAMES_PER_DAY)
    p.add_argument("--region", type=_region_arg)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--warmup", type=int, default=FRAMES_PER_DAY,
                   help="skip anchors with under this many frames of history")
    p.set_defaults(handler=_cmd_forecast)

    p = sub.add_parser("evaluate", help="score forecasts against a tensor")
    p.add_argument("--forecasts", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--s", type=int, default=12)
    p.add_argument("--horizons", type=_int_list, required=True)
    p.add_argument("--at-step", action="store_true")
    p.add_argument("--per-cell", action="store_true")
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(handler=_cmd_evaluate)

    p = sub.add_parser("score", help="reward-score TEXT<TAB>GT_CSV lines")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--x-h", type=float, default=0.3)
    p.add_argument("--norm", type=_norm_arg, default="mean")
    p.set_defaults(handler=_cmd_score)

    p = sub.add_parser("grpo-demo", help="toy-policy sweep plus one surrogate step")
    p.add_argument("input", help="forecasting record file from gen-sft")
    p.add_argument("--out", required=True)
    p.add_argument("--rates", type=_float_list, default=[0.0, 0.2, 0.5])
    p.add_argument("--seeds", type=_int_list, default=[0, 1, 2])
    p.add_argument("--group-size", type=int, default=8)
    p.add_argument("--temperature", type=float, default=0.5)
    p.add_argument("--x-h", type=float, default=0.3)
    p.add_argument("--kl-beta", type=float, default=0.04)
    p.add_argument("--clip-epsilon", type=float, default=0.2)
    p.set_defaults(handler=_cmd_grpo_demo)

    p = sub.add_parser("rerun", help="replay a recorded manifest")
    p.add_argument("--manifest", required=True)
    p.set_defaults(handler=_cmd_rerun)

    return parser


def _write_manifest(primary_out: str, args, argv: List[str]) -> None:
    resolved = {
        k: v for k, v in vars(args).items()
        if k not in ("handler",) and not callable(v)
    }
    payload = {
        "version": __version__,
        "subcommand": args.subcommand,
        "argv": argv,
        "resolved": resolved,
    }
    with open(f"{primary_out}.manifest.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def main(argv: Optional[List[str]] = None) -> int:
    actual_argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(actual_argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        primary_out = args.handler(args)
    except (StvlError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if primary_out is not None:
        _write_manifest(primary_out, args, actual_argv)
    return 0


if __name__ == "__main__":
    sys.exit(main())
