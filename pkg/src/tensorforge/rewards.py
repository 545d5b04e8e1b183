"""Training-objective math at desk scale: speed rewards, decoupled-reward
policy loss and its gradient, group-relative surrogate pieces, the SFT loss,
and the evaluation metrics.

Everything here is pure scalar math over rollout records; no tokenization,
policy networks, or KL estimation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional


class RewardError(Exception):
    pass


class NonpositiveTime(RewardError):
    pass


class EmptySet(RewardError):
    pass


class EmptyGroup(RewardError):
    pass


class EmptyBatch(RewardError):
    pass


class EmptyRecords(RewardError):
    pass


class GroupTooSmall(RewardError):
    pass


class LengthMismatch(RewardError):
    pass


class SpeedRewardKind(str, Enum):
    LOG = "log"
    POWER = "power"


@dataclass(frozen=True)
class RewardParams:
    tau: float = 5.0        # log-sum-exp temperature over incorrect outputs
    lam: float = 0.1        # softmax temperature for speed-induced weights
    beta: float = 100.0     # squared-hinge penalty scale
    delta: float = 0.001    # KL budget
    f_kind: SpeedRewardKind = SpeedRewardKind.LOG
    alpha: float = 0.5      # exponent for the power-law variant

    def __post_init__(self):
        if min(self.tau, self.lam, self.beta, self.delta) <= 0:
            raise RewardError("tau, lambda, beta, delta must all be positive")
        if self.f_kind is SpeedRewardKind.POWER and self.alpha <= 0:
            raise RewardError("power-law exponent must be positive")


@dataclass(frozen=True)
class RolloutOutput:
    avg_loglik: float
    correct: bool
    t_torch: float
    t_triton: float


@dataclass(frozen=True)
class RolloutGroup:
    query_id: str
    outputs: tuple[RolloutOutput, ...]

    def __post_init__(self):
        if not self.outputs:
            raise EmptyGroup(f"group {self.query_id} has no outputs")
        for o in self.outputs:
            if o.t_torch <= 0 or o.t_triton <= 0:
                raise NonpositiveTime(f"group {self.query_id} has a nonpositive time")


@dataclass(frozen=True)
class EvalRecord:
    correct: bool
    speedup: Optional[float] = None

    def __post_init__(self):
        if self.correct and (self.speedup is None or self.speedup <= 0):
            raise RewardError("a correct record needs a positive speedup")


def speed_reward(t_torch: float, t_triton: float,
                 f_kind: SpeedRewardKind = SpeedRewardKind.LOG,
                 alpha: float = 0.5) -> float:
    """f(t_torch / t_triton): natural log, or the ratio raised to alpha."""
    if t_torch <= 0 or t_triton <= 0:
        raise NonpositiveTime("execution times must be positive")
    ratio = t_torch / t_triton
    if f_kind is SpeedRewardKind.LOG:
        return math.log(ratio)
    return ratio ** alpha


def _softmax(xs: list[float]) -> list[float]:
    m = max(xs)
    exps = [math.exp(x - m) for x in xs]
    z = sum(exps)
    return [e / z for e in exps]


def correct_weights(rewards: list[float], lam: float) -> list[float]:
    """Speed-induced weights: softmax of reward / lambda, max-shift stabilized."""
    if not rewards:
        raise EmptySet("cannot weight an empty reward list")
    return _softmax([r / lam for r in rewards])


def _log_mean_exp(xs: list[float]) -> float:
    m = max(xs)
    return m + math.log(sum(math.exp(x - m) for x in xs) / len(xs))


def _split(group: RolloutGroup):
    pos = [o for o in group.outputs if o.correct]
    neg = [o for o in group.outputs if not o.correct]
    return pos, neg


def _hinge_sq(kl: float, params: RewardParams) -> float:
    gap = max(0.0, kl - params.delta)
    return params.beta * gap * gap


def drpo_loss(group: RolloutGroup, kl: float, params: RewardParams) -> float:
    """Decoupled objective: speed-weighted likelihood on the correct set, a
    temperature log-mean-exp penalty on the incorrect set, and a squared-hinge
    KL budget term. Terms over an empty split are dropped."""
    pos, neg = _split(group)
    loss = 0.0
    if pos:
        speed = [speed_reward(o.t_torch, o.t_triton, params.f_kind, params.alpha) for o in pos]
        weights = correct_weights(speed, params.lam)
        loss -= sum(w * o.avg_loglik for w, o in zip(weights, pos))
    if neg:
        loss += params.tau * _log_mean_exp([o.avg_loglik / params.tau for o in neg])
    return loss + _hinge_sq(kl, params)


def drpo_grad_s(group: RolloutGroup, kl: float, params: RewardParams) -> list[float]:
    """Closed-form gradient of drpo_loss w.r.t. each output's log-likelihood.

    Correct outputs get -weight (weights depend only on measured speeds);
    incorrect outputs get their softmax share of the log-mean-exp penalty.
    """
    pos, neg = _split(group)
    grad = [0.0] * len(group.outputs)
    if pos:
        speed = [speed_reward(o.t_torch, o.t_triton, params.f_kind, params.alpha) for o in pos]
        weights = correct_weights(speed, params.lam)
        it = iter(weights)
        for i, o in enumerate(group.outputs):
            if o.correct:
                grad[i] = -next(it)
    if neg:
        shares = _softmax([o.avg_loglik / params.tau for o in neg])
        it = iter(shares)
        for i, o in enumerate(group.outputs):
            if not o.correct:
                grad[i] = next(it)
    return grad


def grpo_reward(correct: bool, t_torch: float, t_triton: float,
                f_kind: SpeedRewardKind = SpeedRewardKind.LOG, alpha: float = 0.5) -> float:
    """1 + f(speed ratio) for a correct kernel, 0 otherwise."""
    if t_torch <= 0 or t_triton <= 0:
        raise NonpositiveTime("execution times must be positive")
    if not correct:
        return 0.0
    return 1.0 + speed_reward(t_torch, t_triton, f_kind, alpha)


def grpo_advantage(rewards: list[float]) -> list[float]:
    """Group-normalized advantages using the population standard deviation.

    A zero-spread group yields all-zero advantages rather than dividing by
    zero.
    """
    if len(rewards) < 2:
        raise GroupTooSmall("need at least two rewards for a group baseline")
    n = len(rewards)
    mean = sum(rewards) / n
    var = sum((r - mean) ** 2 for r in rewards) / n
    std = math.sqrt(var)
    if std == 0.0:
        return [0.0] * n
    return [(r - mean) / std for r in rewards]


def grpo_surrogate(token_ratios: list[list[float]], advantages: list[float],
                   eps: float, beta_kl: float, kl: float) -> float:
    """Clipped importance-sampling surrogate, averaged per output then over the
    group, minus the KL penalty. Returned as the value to maximize."""
    if len(token_ratios) != len(advantages):
        raise LengthMismatch(f"{len(token_ratios)} ratio lists vs {len(advantages)} advantages")
    if not token_ratios:
        raise EmptyGroup("empty rollout group")
    total = 0.0
    for ratios, adv in zip(token_ratios, advantages):
        if not ratios:
            raise LengthMismatch("an output has no token ratios")
        acc = 0.0
        for r in ratios:
            if r <= 0:
                raise RewardError("importance ratios must be positive")
            clipped = min(max(r, 1.0 - eps), 1.0 + eps)
            acc += min(r * adv, clipped * adv)
        total += acc / len(ratios)
    return total / len(token_ratios) - beta_kl * kl


def sft_loss(avg_logliks: list[float]) -> float:
    """Negative mean of per-pair average log-likelihoods."""
    if not avg_logliks:
        raise EmptyBatch("empty SFT batch")
    return -sum(avg_logliks) / len(avg_logliks)


@dataclass(frozen=True)
class EvalMetrics:
    acc: float                      # percent of records that are correct
    faster1: float                  # percent correct AND speedup > 1
    geomean_speedup: Optional[float]  # absent when nothing is correct

    def to_dict(self) -> dict:
        return {"acc": self.acc, "faster1": self.faster1,
                "geomean_speedup": self.geomean_speedup}


def eval_metrics(records: list[EvalRecord]) -> EvalMetrics:
    """Accuracy, Faster1 (share of all records both correct and >1x), and the
    geometric-mean speedup over correct records via mean-of-logs."""
    if not records:
        raise EmptyRecords("no evaluation records")
    n = len(records)
    correct = [r for r in records if r.correct]
    acc = 100.0 * len(correct) / n
    faster1 = 100.0 * sum(1 for r in correct if r.speedup > 1.0) / n
    geomean = None
    if correct:
        geomean = math.exp(sum(math.log(r.speedup) for r in correct) / len(correct))
    return EvalMetrics(acc=acc, faster1=faster1, geomean_speedup=geomean)


# -- JSON plumbing for the CLI ------------------------------------------------

def group_from_dict(doc: dict) -> RolloutGroup:
    outputs = tuple(
        RolloutOutput(avg_loglik=float(o["avg_loglik"]), correct=bool(o["correct"]),
                      t_torch=float(o["t_torch"]), t_triton=float(o["t_triton"]))
        for o in doc.get("outputs", [])
    )
    return RolloutGroup(query_id=str(doc.get("query_id", "")), outputs=outputs)


def params_from_dict(doc: dict) -> RewardParams:
    kind = SpeedRewardKind(doc.get("f_kind", "log"))
    return RewardParams(
        tau=float(doc.get("tau", 5.0)),
        lam=float(doc.get("lambda", doc.get("lam", 0.1))),
        beta=float(doc.get("beta", 100.0)),
        delta=float(doc.get("delta", 0.001)),
        f_kind=kind,
        alpha=float(doc.get("alpha", 0.5)),
    )
