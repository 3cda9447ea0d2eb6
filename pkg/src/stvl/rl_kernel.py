"""Reward shaping and policy-gradient arithmetic for grouped sampling.

Everything here is pure array math: scoring a generated token stream
against ground truth, centering rewards within a candidate group,
estimating per-token KL, the clipped surrogate objective, and the
masked supervised loss. No model, no optimizer.

Two expressions are written for floating-point exactness rather than
the textbook form. The accuracy term is ``2.0 ** (-nrmse / x_h)``,
which hits 0.5 exactly when nrmse == x_h (the exponent is exactly -1)
where ``exp(-ln2 * ...)`` would miss by an ulp. The KL estimator uses
``expm1(d) - d``, which is non-negative for every finite double, while
``exp(d) - d - 1`` can dip below zero for tiny d.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np

from stvl.errors import (
    EmptyGroundTruthError,
    EmptyMaskError,
    GroupTooSmallError,
    LengthMismatchError,
    ShapeMismatchError,
    StvlError,
)
from stvl.numcodec import parse_token_stream

STD_FLOOR = 1e-9
NORM_FLOOR = 1e-9


@dataclass(frozen=True)
class RewardConfig:
    """Scoring knobs: x_h is the error at which accuracy scores 0.5;
    norm is a positive constant or "mean" to divide by mean ground truth."""

    x_h: float = 0.3
    norm: Union[float, str] = "mean"

    def __post_init__(self):
        if not (self.x_h > 0):
            raise StvlError(f"x_h must be positive, got {self.x_h}")
        if isinstance(self.norm, str):
            if self.norm != "mean":
                raise StvlError(f'norm must be a positive number or "mean", got {self.norm!r}')
        elif not (self.norm > 0):
            raise StvlError(f"norm must be positive, got {self.norm}")


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 8
    std_normalize: bool = True
    kl_beta: float = 0.04
    clip_epsilon: float = 0.2

    def __post_init__(self):
        if self.group_size < 2:
            raise StvlError(f"group_size must be at least 2, got {self.group_size}")
        if self.kl_beta < 0:
            raise StvlError(f"kl_beta must be non-negative, got {self.kl_beta}")
        if not (self.clip_epsilon > 0):
            raise StvlError(f"clip_epsilon must be positive, got {self.clip_epsilon}")


@dataclass(frozen=True)
class RewardBreakdown:
    accuracy_term: float    # in [0, 1]
    length_penalty: float   # <= 0
    decode_penalty: float   # 0 or -0.5
    nrmse: float            # normalized error over the aligned prefix; inf if nothing decoded
    total: float            # accuracy_term + length_penalty + decode_penalty


def _resolve_norm(gt: np.ndarray, norm: Union[float, str]) -> float:
    if isinstance(norm, str):
        return max(float(np.mean(gt)), NORM_FLOOR)
    return float(norm)


def accuracy_term(nrmse: float, x_h: float) -> float:
    """Exponential accuracy score: 1 at zero error, 0.5 at ``x_h``."""
    if nrmse < 0:
        raise StvlError(f"nrmse must be non-negative, got {nrmse}")
    return 2.0 ** (-nrmse / x_h)


def nrmse_reward(pred: Sequence[float], gt: Sequence[float], norm: Union[float, str] = "mean") -> float:
    """Root-mean-square error divided by the normalizer."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 1:
        raise LengthMismatchError(f"pred has {pred.shape}, gt has {gt.shape}")
    if pred.size == 0:
        raise LengthMismatchError("need at least one point")
    rmse = float(np.sqrt(np.mean((pred - gt) ** 2)))
    return rmse / _resolve_norm(gt, norm)


def reward(output_text: str, gt: Sequence[float], cfg: RewardConfig = RewardConfig()) -> RewardBreakdown:
    """Score raw model text against a ground-truth value sequence.

    The text is scanned for numeric tokens; the decoded values align
    with ``gt`` by prefix. Accuracy decays exponentially in normalized
    RMSE, the length penalty charges 0.5 per ground-truth-length of
    miscount, and any malformed or missing token costs a flat 0.5.
    Text with nothing decodable bottoms out at exactly -1.0.
    """
    gt = np.asarray(gt, dtype=np.float64)
    if gt.size == 0:
        raise EmptyGroundTruthError("ground truth must be non-empty")
    parsed = parse_token_stream(output_text)
    values = parsed.values
    l_out, l_gt = len(values), int(gt.size)
    if l_out == 0:
        acc, nrmse = 0.0, float("inf")
    else:
        n = min(l_out, l_gt)
        # The normalizer comes from the full ground truth, not the
        # aligned prefix, so it cannot be gamed by answer truncation.
        d = _resolve_norm(gt, cfg.norm)
        rmse = float(np.sqrt(np.mean((np.asarray(values[:n]) - gt[:n]) ** 2)))
        nrmse = rmse / d
        acc = accuracy_term(nrmse, cfg.x_h)
    length_penalty = -0.5 * abs(l_out - l_gt) / l_gt
    decode_penalty = -0.5 if parsed.failure else 0.0
    return RewardBreakdown(
        accuracy_term=acc,
        length_penalty=length_penalty,
        decode_penalty=decode_penalty,
        nrmse=nrmse,
        total=acc + length_penalty + decode_penalty,
    )


def group_advantages(rewards: Sequence[float], cfg: GrpoConfig = GrpoConfig()) -> np.ndarray:
    """Center rewards on the group mean; optionally scale by the
    population standard deviation (floored to avoid blowups)."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise GroupTooSmallError(f"need at least 2 rewards, got shape {r.shape}")
    centered = r - r.mean()
    centered -= centered.mean()  # strip the rounding residue of the first pass
    if cfg.std_normalize:
        centered = centered / max(float(r.std()), STD_FLOOR)
    return centered


def kl_estimate(logp_policy: Sequence[float], logp_ref: Sequence[float]) -> np.ndarray:
    """Per-token estimator exp(d) - d - 1 with d = ref - policy; >= 0."""
    p = np.asarray(logp_policy, dtype=np.float64)
    q = np.asarray(logp_ref, dtype=np.float64)
    if p.shape != q.shape:
        raise LengthMismatchError(f"policy has {p.shape}, ref has {q.shape}")
    delta = q - p
    return np.expm1(delta) - delta


SequenceTriple = Tuple[Sequence[float], Sequence[float], Sequence[float]]


def grpo_objective(
    group: Sequence[SequenceTriple],
    advantages: Sequence[float],
    cfg: GrpoConfig = GrpoConfig(),
) -> float:
    """Clipped-ratio surrogate with a KL penalty, averaged over a group.

    Each group entry is (logp_new, logp_old, logp_ref) arrays for one
    candidate sequence. Per token the surrogate takes
    min(ratio * A, clip(ratio) * A) with ratio = exp(new - old); each
    sequence contributes its token mean minus kl_beta times its token-mean
    KL against the reference. Returns a scalar to maximize. The group
    may be a single sequence (advantages then come from elsewhere).
    """
    adv = np.asarray(advantages, dtype=np.float64)
    if len(group) == 0:
        raise ShapeMismatchError("empty group")
    if adv.shape != (len(group),):
        raise ShapeMismatchError(f"{len(group)} sequences but {adv.shape} advantages")
    lo, hi = 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon
    total = 0.0
    for i, (logp_new, logp_old, logp_ref) in enumerate(group):
        lnew = np.asarray(logp_new, dtype=np.float64)
        lold = np.asarray(logp_old, dtype=np.float64)
        lref = np.asarray(logp_ref, dtype=np.float64)
        if not (lnew.shape == lold.shape == lref.shape) or lnew.ndim != 1 or lnew.size == 0:
            raise ShapeMismatchError(f"sequence {i}: log-prob arrays disagree or are empty")
        ratio = np.exp(lnew - lold)
        surrogate = np.minimum(ratio * adv[i], np.clip(ratio, lo, hi) * adv[i])
        total += float(surrogate.mean()) - cfg.kl_beta * float(kl_estimate(lnew, lref).mean())
    return total / len(group)


def sft_loss(logp_targets: Sequence[float], mask: Sequence[bool]) -> float:
    """Negative log-likelihood averaged over the masked positions only."""
    logp = np.asarray(logp_targets, dtype=np.float64)
    m = np.asarray(mask, dtype=bool)
    if logp.shape != m.shape or logp.ndim != 1:
        raise LengthMismatchError(f"logp has {logp.shape}, mask has {m.shape}")
    if not m.any():
        raise EmptyMaskError("mask selects no positions")
    return -float(np.mean(logp[m]))
