import math
import random

import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from tensorforge.rewards import (
    EmptyBatch,
    EmptyRecords,
    EmptySet,
    EvalRecord,
    GroupTooSmall,
    LengthMismatch,
    NonpositiveTime,
    RewardParams,
    RolloutGroup,
    RolloutOutput,
    SpeedRewardKind,
    correct_weights,
    drpo_grad_s,
    drpo_loss,
    eval_metrics,
    group_from_dict,
    grpo_advantage,
    grpo_reward,
    grpo_surrogate,
    sft_loss,
    speed_reward,
)

P = RewardParams()


def _out(s, correct, ratio=1.0):
    return RolloutOutput(avg_loglik=s, correct=correct, t_torch=ratio, t_triton=1.0)


def _group(*outs):
    return RolloutGroup("q", tuple(outs))


# -- speed reward -------------------------------------------------------------

def test_speed_reward_log_identity():
    assert speed_reward(1.0, 1.0, SpeedRewardKind.LOG) == 0.0


def test_speed_reward_log_two():
    assert speed_reward(2.0, 1.0, SpeedRewardKind.LOG) == pytest.approx(0.6931, abs=1e-4)


def test_speed_reward_power():
    assert speed_reward(4.0, 1.0, SpeedRewardKind.POWER, alpha=0.5) == pytest.approx(2.0)


def test_speed_reward_rejects_bad_times():
    with pytest.raises(NonpositiveTime):
        speed_reward(0.0, 1.0)
    with pytest.raises(NonpositiveTime):
        speed_reward(1.0, -2.0)


# -- weights ------------------------------------------------------------------

def test_weights_symmetric():
    assert correct_weights([0.0, 0.0], 0.3) == [0.5, 0.5]


def test_weights_log2_example():
    w = correct_weights([math.log(2), 0.0], 0.1)
    assert w[0] == pytest.approx(0.99902, abs=5e-5)
    assert w[1] == pytest.approx(0.00098, abs=5e-5)


def test_weights_high_temperature_limit():
    w = correct_weights([3.0, -1.0, 0.5], 1e6)
    for x in w:
        assert abs(x - 1 / 3) < 1e-6


def test_weights_sum_to_one_and_positive():
    rng = random.Random(0)
    for _ in range(200):
        rewards = [rng.uniform(-5, 5) for _ in range(rng.randint(1, 12))]
        w = correct_weights(rewards, rng.choice([0.05, 0.1, 1.0, 10.0]))
        assert abs(sum(w) - 1.0) <= 1e-12
        assert all(x > 0 for x in w)


def test_weights_monotone_in_reward():
    rng = random.Random(1)
    for _ in range(100):
        rewards = [rng.uniform(-3, 3) for _ in range(6)]
        w = correct_weights(rewards, 0.3)
        for i in range(6):
            for j in range(6):
                if rewards[i] > rewards[j]:
                    assert w[i] > w[j]


def test_weights_empty():
    with pytest.raises(EmptySet):
        correct_weights([], 0.1)


# -- DRPO loss ------------------------------------------------------------------

def test_drpo_single_correct():
    g = _group(_out(-1.0, True))
    assert drpo_loss(g, 0.0, P) == pytest.approx(1.0)


def test_drpo_hinge_boundary():
    g = _group(_out(-1.0, True))
    at = drpo_loss(g, P.delta, P)
    below = drpo_loss(g, P.delta / 2, P)
    assert at == below == pytest.approx(1.0)
    above = drpo_loss(g, P.delta + 0.01, P)
    assert above > at


def test_drpo_hinge_strictly_increasing():
    g = _group(_out(-1.0, True))
    prev = drpo_loss(g, P.delta, P)
    for kl in (P.delta + 0.001, P.delta + 0.01, P.delta + 0.1):
        cur = drpo_loss(g, kl, P)
        assert cur > prev
        prev = cur


def test_drpo_equal_incorrect_scores_collapse():
    g = _group(_out(-2.0, False), _out(-2.0, False))
    assert drpo_loss(g, 0.0, P) == pytest.approx(-2.0)


def test_drpo_lme_between_mean_and_max():
    rng = random.Random(3)
    for _ in range(100):
        scores = [rng.uniform(-4, 0) for _ in range(rng.randint(2, 8))]
        g = _group(*[_out(s, False) for s in scores])
        val = drpo_loss(g, 0.0, P)
        assert sum(scores) / len(scores) - 1e-9 <= val <= max(scores) + 1e-9


def test_drpo_empty_sets_dropped():
    only_pos = _group(_out(-0.5, True, ratio=2.0), _out(-1.5, True, ratio=1.0))
    v = drpo_loss(only_pos, 0.0, P)
    w = correct_weights([math.log(2), 0.0], P.lam)
    assert v == pytest.approx(-(w[0] * -0.5 + w[1] * -1.5))
    only_neg = _group(_out(-2.0, False))
    assert drpo_loss(only_neg, 0.0, P) == pytest.approx(-2.0)


def test_drpo_empty_group():
    with pytest.raises(Exception):
        RolloutGroup("q", ())


# -- DRPO gradient --------------------------------------------------------------

def test_grad_symmetric_incorrect():
    g = _group(_out(-1.0, False), _out(-1.0, False))
    assert drpo_grad_s(g, 0.0, P) == [0.5, 0.5]


def test_grad_single_correct():
    g = _group(_out(-1.0, True))
    assert drpo_grad_s(g, 0.0, P) == [-1.0]


def _finite_difference(group, kl, params, h=1e-6):
    grads = []
    for i in range(len(group.outputs)):
        def shifted(delta):
            outs = list(group.outputs)
            o = outs[i]
            outs[i] = RolloutOutput(o.avg_loglik + delta, o.correct, o.t_torch, o.t_triton)
            return drpo_loss(RolloutGroup(group.query_id, tuple(outs)), kl, params)

        grads.append((shifted(h) - shifted(-h)) / (2 * h))
    return grads


def test_grad_matches_finite_differences():
    rng = random.Random(7)
    worst = 0.0
    for trial in range(100):
        outs = []
        for _ in range(8):
            outs.append(RolloutOutput(
                avg_loglik=rng.uniform(-3.0, -0.1),
                correct=rng.random() < 0.5,
                t_torch=rng.uniform(0.5, 2.0),
                t_triton=rng.uniform(0.5, 2.0)))
        g = RolloutGroup(f"q{trial}", tuple(outs))
        kl = rng.uniform(0, 0.01)
        analytic = drpo_grad_s(g, kl, P)
        numeric = _finite_difference(g, kl, P)
        for a, b in zip(analytic, numeric):
            # Floor-guarded relative error: the h=1e-6 central-difference
            # oracle carries ~1e-10 absolute roundoff noise, which swamps a
            # pure ratio on saturated-softmax components of size ~1e-7.
            rel = abs(a - b) / max(1.0, abs(b))
            worst = max(worst, rel)
    assert worst <= 1e-6, worst


# -- GRPO ------------------------------------------------------------------------

def test_grpo_reward_correct_unit_ratio():
    assert grpo_reward(True, 1.0, 1.0) == pytest.approx(1.0)


def test_grpo_reward_incorrect_zero():
    assert grpo_reward(False, 5.0, 1.0) == 0.0


def test_grpo_reward_log_e():
    assert grpo_reward(True, math.e, 1.0) == pytest.approx(2.0)


def test_grpo_advantage_exact():
    assert grpo_advantage([0.0, 0.0, 1.0, 1.0]) == [-1.0, -1.0, 1.0, 1.0]


def test_grpo_advantage_degenerate():
    assert grpo_advantage([2.5, 2.5, 2.5]) == [0.0, 0.0, 0.0]


def test_grpo_advantage_normalized():
    rng = random.Random(11)
    for _ in range(100):
        rewards = [rng.uniform(-2, 2) for _ in range(rng.randint(2, 10))]
        if max(rewards) == min(rewards):
            continue
        adv = grpo_advantage(rewards)
        n = len(adv)
        assert abs(sum(adv) / n) <= 1e-12
        std = math.sqrt(sum(a * a for a in adv) / n)
        assert abs(std - 1.0) <= 1e-9


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=10),
       st.floats(0.1, 5.0), st.floats(-3.0, 3.0))
def test_grpo_advantage_affine_invariant(rewards, a, b):
    assume(max(rewards) - min(rewards) > 1e-3)  # keep the std well-conditioned
    scaled = [a * r + b for r in rewards]
    base = grpo_advantage(rewards)
    shifted = grpo_advantage(scaled)
    for x, y in zip(base, shifted):
        assert abs(x - y) <= 1e-9 * max(1.0, abs(x))


def test_grpo_advantage_too_small():
    with pytest.raises(GroupTooSmall):
        grpo_advantage([1.0])


def test_grpo_surrogate_unit_ratios():
    adv = [0.5, -0.5, 1.0]
    ratios = [[1.0, 1.0], [1.0], [1.0, 1.0, 1.0]]
    val = grpo_surrogate(ratios, adv, eps=0.2, beta_kl=0.3, kl=0.1)
    assert val == pytest.approx(sum(adv) / 3 - 0.3 * 0.1)


def test_grpo_surrogate_clips_above():
    eps = 0.2
    val = grpo_surrogate([[1 + 2 * eps]], [2.0], eps=eps, beta_kl=0.0, kl=0.0)
    assert val == pytest.approx((1 + eps) * 2.0)


def test_grpo_surrogate_negative_advantage_unclipped_branch():
    eps = 0.2
    # A < 0 and ratio below range: min picks the raw-ratio branch
    raw = (1 - 2 * eps) * -1.0
    clipped = (1 - eps) * -1.0
    assert min(raw, clipped) == clipped
    val = grpo_surrogate([[1 - 2 * eps]], [-1.0], eps=eps, beta_kl=0.0, kl=0.0)
    assert val == pytest.approx(clipped)


def test_grpo_surrogate_brute_force_min_clip():
    rng = random.Random(5)
    eps = 0.2
    for _ in range(200):
        r = rng.uniform(0.2, 2.2)
        adv = rng.uniform(-2, 2)
        got = grpo_surrogate([[r]], [adv], eps=eps, beta_kl=0.0, kl=0.0)
        want = min(r * adv, min(max(r, 1 - eps), 1 + eps) * adv)
        assert got == pytest.approx(want)


def test_grpo_surrogate_length_mismatch():
    with pytest.raises(LengthMismatch):
        grpo_surrogate([[1.0]], [1.0, 2.0], eps=0.2, beta_kl=0.0, kl=0.0)


# -- SFT -------------------------------------------------------------------------

def test_sft_loss_values():
    assert sft_loss([-1.0, -1.0]) == pytest.approx(1.0)
    assert sft_loss([0.0]) == 0.0
    assert sft_loss([-0.5, -1.5, -1.0]) == pytest.approx(1.0)


def test_sft_loss_empty():
    with pytest.raises(EmptyBatch):
        sft_loss([])


# -- metrics ----------------------------------------------------------------------

def test_metrics_log_symmetry():
    m = eval_metrics([EvalRecord(True, 2.0), EvalRecord(True, 0.5)])
    assert m.geomean_speedup == pytest.approx(1.0, abs=1e-12)
    assert m.faster1 == 50.0
    assert m.acc == 100.0


def test_metrics_all_incorrect():
    m = eval_metrics([EvalRecord(False), EvalRecord(False)])
    assert m.acc == 0.0
    assert m.faster1 == 0.0
    assert m.geomean_speedup is None


def test_metrics_mixed():
    records = [EvalRecord(True, 1.5), EvalRecord(True, 0.8),
               EvalRecord(False), EvalRecord(False)]
    m = eval_metrics(records)
    assert m.acc == 50.0
    assert m.faster1 == 25.0
    assert m.geomean_speedup == pytest.approx(1.0954451150103321)


def test_metrics_scale_covariant():
    base = [EvalRecord(True, 1.4), EvalRecord(True, 0.6), EvalRecord(True, 2.5)]
    scaled = [EvalRecord(True, 3.0 * r.speedup) for r in base]
    assert eval_metrics(scaled).geomean_speedup == pytest.approx(
        3.0 * eval_metrics(base).geomean_speedup)


def test_metrics_empty():
    with pytest.raises(EmptyRecords):
        eval_metrics([])


def test_group_parsing_roundtrip():
    doc = {"query_id": "q1", "outputs": [
        {"avg_loglik": -1.0, "correct": True, "t_torch": 2.0, "t_triton": 1.0}]}
    g = group_from_dict(doc)
    assert g.outputs[0].correct
    assert g.outputs[0].t_torch == 2.0


def test_params_positive():
    with pytest.raises(Exception):
        RewardParams(tau=0.0)
    with pytest.raises(Exception):
        RewardParams(delta=-1.0)
