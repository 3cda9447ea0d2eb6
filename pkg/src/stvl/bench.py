"""Synthetic traffic, reference forecasters, and a corruption toy policy.

The simulator produces multiplicative structure: a base level shaped by
raised daily and weekly sinusoids, a static field of Gaussian hotspots,
and lognormal noise. The phase is computed from ``t mod period``, so a
noiseless configuration repeats bitwise and a seasonal forecaster can
hit zero error exactly.

The toy policy stands in for a sampled language model: it emits the
ground-truth token sequence with per-token corruption at a configured
rate, along with log-probabilities that are internally consistent with
its own sampling distribution, so the policy-gradient kernels have
realistic inputs without any model in the loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple
from zlib import crc32

import numpy as np

from stvl.dataset_gen import SftRecord
from stvl.errors import HistoryTooShortError, StvlError
from stvl.grid_data import MILAN_START_MS, TrafficTensor
from stvl.numcodec import decode, encode, token_from_label
from stvl.rl_kernel import RewardConfig, reward

FRAMES_PER_DAY = 144  # 10-minute cadence


@dataclass(frozen=True)
class SynthConfig:
    h: int = 20
    w: int = 20
    t: int = 30 * FRAMES_PER_DAY
    step_ms: int = 600_000
    start_ms: int = MILAN_START_MS
    base_level: float = 100.0
    daily_period: int = FRAMES_PER_DAY
    daily_amplitude: float = 0.5
    # Defaults keep the daily cycle dominant: the weekly modulation and
    # the noise are strong enough to matter but never to drown it.
    weekly_amplitude: float = 0.1
    n_hotspots: int = 3
    hotspot_scale: float = 2.0
    noise_sigma: float = 0.02
    missing_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.h, self.w, self.t, self.daily_period, self.step_ms) < 1:
            raise StvlError("grid dimensions, period, and step must be at least 1")
        if not (0.0 <= self.daily_amplitude < 1.0 and 0.0 <= self.weekly_amplitude < 1.0):
            raise StvlError("sinusoid amplitudes must lie in [0, 1)")
        if self.noise_sigma < 0 or not (0.0 <= self.missing_rate < 1.0):
            raise StvlError("noise_sigma must be >= 0 and missing_rate in [0, 1)")
        if self.n_hotspots < 0 or self.base_level <= 0:
            raise StvlError("n_hotspots must be >= 0 and base_level positive")


def synth_traffic(cfg: SynthConfig) -> TrafficTensor:
    """Deterministic synthetic traffic tensor for the given config.

    The generator stream is consumed in a fixed order (hotspots, noise,
    missing mask), so outputs are byte-identical per seed.
    """
    rng = np.random.default_rng(cfg.seed)
    p = cfg.daily_period
    frames = np.arange(cfg.t)
    daily = 1.0 + cfg.daily_amplitude * np.sin(2.0 * np.pi * (frames % p) / p)
    weekly = 1.0 + cfg.weekly_amplitude * np.sin(2.0 * np.pi * (frames % (7 * p)) / (7 * p))
    temporal = cfg.base_level * daily * weekly

    spatial = np.ones((cfg.h, cfg.w))
    rows = np.arange(1, cfg.h + 1, dtype=np.float64)[:, None]
    cols = np.arange(1, cfg.w + 1, dtype=np.float64)[None, :]
    sigma_band = (min(cfg.h, cfg.w) / 8.0, min(cfg.h, cfg.w) / 3.0)
    for _ in range(cfg.n_hotspots):
        cx = rng.uniform(1, cfg.h)
        cy = rng.uniform(1, cfg.w)
        sigma = rng.uniform(*sigma_band)
        gain = cfg.hotspot_scale * rng.uniform(0.5, 1.0)
        spatial += gain * np.exp(-((rows - cx) ** 2 + (cols - cy) ** 2) / (2.0 * sigma * sigma))

    values = temporal[:, None, None] * spatial[None, :, :]
    if cfg.noise_sigma > 0:
        values = values * np.exp(cfg.noise_sigma * rng.standard_normal(values.shape))

    mask = np.ones(values.shape, dtype=bool)
    if cfg.missing_rate > 0:
        mask = rng.uniform(size=values.shape) >= cfg.missing_rate
        # Interpolation needs an anchor per cell; pin the first frame
        # of any cell the missing draw wiped out entirely.
        dead = ~mask.any(axis=0)
        mask[0][dead] = True
        values = np.where(mask, values, np.nan)

    timestamps = cfg.start_ms + cfg.step_ms * np.arange(cfg.t, dtype=np.int64)
    return TrafficTensor(values, timestamps, mask)


# --- reference forecasters ---

def seasonal_naive(history: Sequence[float], period: int, k: int) -> np.ndarray:
    """Repeat the most recent full period."""
    history = np.asarray(history, dtype=np.float64)
    if history.ndim != 1 or len(history) < period:
        raise HistoryTooShortError(f"need at least {period} points, got {len(history)}")
    steps = np.arange(k)
    return history[len(history) - period + (steps % period)]


def persistence(history: Sequence[float], k: int) -> np.ndarray:
    """Repeat the last value."""
    history = np.asarray(history, dtype=np.float64)
    if history.ndim != 1 or len(history) == 0:
        raise HistoryTooShortError("need at least 1 point")
    return np.full(k, history[-1])


def historical_average(history: Sequence[float], period: int, k: int) -> np.ndarray:
    """Average all same-phase points in the history."""
    history = np.asarray(history, dtype=np.float64)
    n = len(history)
    if history.ndim != 1 or n < period:
        raise HistoryTooShortError(f"need at least {period} points, got {n}")
    out = np.empty(k, dtype=np.float64)
    for i in range(k):
        phase = (n + i) % period
        out[i] = history[phase::period].mean()
    return out


BASELINES = ("seasonal-naive", "persistence", "historical-average")


def run_baseline(name: str, history: Sequence[float], period: int, k: int) -> np.ndarray:
    if name == "seasonal-naive":
        return seasonal_naive(history, period, k)
    if name == "persistence":
        return persistence(history, k)
    if name == "historical-average":
        return historical_average(history, period, k)
    raise StvlError(f"unknown baseline {name!r}; choose from {BASELINES}")


# --- toy policy ---

@dataclass(frozen=True)
class ToyPolicy:
    """Token-level corruption model around the ground truth.

    With probability ``corruption_rate`` a token is replaced by
    encoding the true value times exp(temperature * z), z standard
    normal; otherwise the true token passes through.
    """

    temperature: float = 0.5
    corruption_rate: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.temperature <= 0:
            raise StvlError(f"temperature must be positive, got {self.temperature}")
        if not (0.0 <= self.corruption_rate <= 1.0):
            raise StvlError(f"corruption_rate must be in [0, 1], got {self.corruption_rate}")


# Tokens quantize values to about 1e-3 relative, which in log space is
# a bin of width about 1e-3; the lognormal mass landing on a token is
# approximated by density times that width.
_LOG_BIN_WIDTH = 1e-3
_PROB_FLOOR = 1e-12


def _token_logprob(emitted: float, truth: float, policy: ToyPolicy) -> float:
    """Log-probability the policy assigns to emitting value ``emitted``
    where the ground truth is ``truth``. Mixture of the pass-through
    spike and the corruption kernel."""
    exact = 1.0 if emitted == truth else 0.0
    if truth == 0.0 or emitted == 0.0 or (emitted > 0) != (truth > 0):
        # The corruption kernel preserves sign and never leaves zero,
        # so across signs only the spike can explain the emission.
        kernel = 0.0
    else:
        d = math.log(abs(emitted)) - math.log(abs(truth))
        density = math.exp(-0.5 * (d / policy.temperature) ** 2) / (
            policy.temperature * math.sqrt(2.0 * math.pi)
        )
        kernel = density * _LOG_BIN_WIDTH
    prob = (1.0 - policy.corruption_rate) * exact + policy.corruption_rate * kernel
    return math.log(max(prob, _PROB_FLOOR))


def toy_policy_logp(emitted_values: Sequence[float], truth_values: Sequence[float],
                    policy: ToyPolicy) -> np.ndarray:
    """Per-token log-probabilities of an emitted value sequence."""
    if len(emitted_values) != len(truth_values):
        raise StvlError("emitted and truth lengths differ")
    return np.array([
        _token_logprob(e, t, policy) for e, t in zip(emitted_values, truth_values)
    ])


def record_ground_truth(record: SftRecord) -> List[float]:
    return [decode(token_from_label(label)) for label in record.target_tokens]


def toy_policy_sample(record: SftRecord, policy: ToyPolicy,
                      group_size: int) -> List[Tuple[str, np.ndarray]]:
    """Draw a group of candidate outputs for one record.

    Each candidate is seeded independently from (policy seed, record
    fingerprint, candidate index), so groups are stable regardless of
    evaluation order. Returns (output text, per-token log-probs) pairs.
    """
    if group_size < 2:
        raise StvlError(f"group_size must be at least 2, got {group_size}")
    fingerprint = crc32(record.prompt_text.encode("utf-8"))
    truths = record_ground_truth(record)
    out = []
    for cand in range(group_size):
        rng = np.random.default_rng([policy.seed, fingerprint, cand])
        labels = []
        emitted = []
        for label, truth in zip(record.target_tokens, truths):
            if rng.random() < policy.corruption_rate and truth != 0.0:
                noisy = truth * math.exp(policy.temperature * rng.standard_normal())
                token = encode(noisy, mode="clamp")
                labels.append(token.label)
                emitted.append(decode(token))
            else:
                labels.append(label)
                emitted.append(truth)
        logps = toy_policy_logp(emitted, truths, policy)
        out.append((" ".join(labels), logps))
    return out


def corruption_sweep(
    records: Sequence[SftRecord],
    rates: Sequence[float],
    seeds: Sequence[int],
    group_size: int = 8,
    temperature: float = 0.5,
    reward_cfg: RewardConfig = RewardConfig(),
) -> Dict[float, float]:
    """Mean group reward at each corruption rate, averaged over seeds."""
    if not records:
        raise StvlError("need at least one record")
    results: Dict[float, float] = {}
    for rate in rates:
        total, n = 0.0, 0
        for seed in seeds:
            policy = ToyPolicy(temperature=temperature, corruption_rate=rate, seed=seed)
            for record in records:
                gt = record_ground_truth(record)
                for text, _ in toy_policy_sample(record, policy, group_size):
                    total += reward(text, gt, reward_cfg).total
                    n += 1
        results[float(rate)] = total / n
    return results
