"""Tests for the slot-level simulation engine."""

import numpy as np
import pytest

from aoisched import dpp, ofrp
from aoisched.model import ActionVector, SystemConfig, initial_states, step_users
from aoisched.simulate import (AlwaysSamplePolicy, IdlePolicy, Policy,
                               channel_uniforms, policy_rng, run,
                               run_replicas, summarize)


def make_config(**overrides):
    base = dict(num_users=2, success_prob=0.8, sample_cost=1.0,
                transmit_cost=5.0, aoi_cap=10, aoi_limit=5.0, horizon=2000,
                seed=31)
    base.update(overrides)
    return SystemConfig(**base)


class ScriptedPolicy(Policy):
    """Replays a fixed list of (sampler, resender) pairs, then idles."""

    name = "scripted"

    def __init__(self, script):
        self.script = list(script)

    def decide(self, t, aoi, waiting, occupied, vqueue):
        return self.script[t] if t < len(self.script) else (None, None)


# ── exact behaviour on degenerate channels ────────────────────────────────

def test_always_sample_on_perfect_channel():
    cfg = make_config(num_users=1, success_prob=1.0, horizon=500)
    stats = run(AlwaysSamplePolicy(0), cfg)
    assert stats.avg_aoi == (1.0,)
    assert stats.avg_cost == 6.0
    assert stats.deliveries == (500,)
    assert stats.delivery_attempts == (500,)
    assert stats.empty_fraction == (1.0,)
    assert stats.aoi_histogram[0] == (500,) + (0,) * 9


def test_idle_policy_drifts_to_cap():
    cfg = make_config(num_users=1, aoi_cap=6, horizon=100)
    stats = run(IdlePolicy(), cfg)
    assert stats.avg_cost == 0.0
    assert stats.deliveries == (0,)
    # ages run 2,3,4,5,6,6,...: every slot beyond the fourth sits at the cap
    assert stats.aoi_histogram[0] == (0, 1, 1, 1, 1, 96)
    assert stats.avg_aoi[0] == pytest.approx((2 + 3 + 4 + 5 + 6 * 96) / 100)


def test_sampling_on_dead_channel_fills_cache():
    cfg = make_config(num_users=1, success_prob=0.0, horizon=50, aoi_cap=10)
    stats = run(AlwaysSamplePolicy(0), cfg)
    assert stats.deliveries == (0,)
    assert stats.avg_cost == 6.0
    # the first sample is discarded (cannot beat age 2); all later ones stick
    assert stats.empty_fraction == (2 / 50,)


# ── determinism and seeding ───────────────────────────────────────────────

def test_runs_are_bit_identical():
    cfg = make_config(horizon=3000)
    a = run(dpp.DppPolicy(), cfg)
    b = run(dpp.DppPolicy(), cfg)
    assert a == b


def test_replicas_differ_but_are_reproducible():
    cfg = make_config(horizon=3000)
    a0 = run(dpp.DppPolicy(), cfg, replica=0)
    a1 = run(dpp.DppPolicy(), cfg, replica=1)
    assert a0.avg_cost != a1.avg_cost
    assert a1 == run(dpp.DppPolicy(), cfg, replica=1)


def test_channel_uniforms_match_across_calls():
    cfg = make_config(horizon=500)
    u1 = channel_uniforms(cfg, replica=2)
    u2 = channel_uniforms(cfg, replica=2)
    assert u1.shape == (2, 500)
    assert np.array_equal(u1, u2)
    assert not np.array_equal(u1, channel_uniforms(cfg, replica=3))


# ── engine versus reference stepper ───────────────────────────────────────

def _replay(policy, cfg, replica=0):
    """Drive the reference stepper with the exact randomness run() uses."""
    uniforms = channel_uniforms(cfg, replica)
    policy.reset(cfg, policy_rng(cfg, replica))
    states = initial_states(cfg)
    n = cfg.num_users
    cost = 0.0
    aoi_sum = [0] * n
    empty = [0] * n
    hist = [[0] * cfg.aoi_cap for _ in range(n)]
    samples = [0] * n
    for t in range(cfg.horizon):
        for k in range(n):
            if not states[k].cache_occupied:
                empty[k] += 1
        sampler, resender = policy.decide(
            t, [s.aoi for s in states], [s.waiting_time for s in states],
            [s.cache_occupied for s in states], [s.vqueue for s in states])
        action = ActionVector.from_pair(n, sampler, resender)
        states, outcome = step_users(
            states, action, uniforms[:, t].tolist(), cfg)
        cost += outcome.cost
        for k in range(n):
            aoi_sum[k] += states[k].aoi
            hist[k][states[k].aoi - 1] += 1
            samples[k] += action.sample[k]
    return {
        "avg_cost": cost / cfg.horizon,
        "avg_aoi": tuple(s / cfg.horizon for s in aoi_sum),
        "empty_fraction": tuple(e / cfg.horizon for e in empty),
        "hist": tuple(tuple(h) for h in hist),
        "sample_freq": tuple(s / cfg.horizon for s in samples),
        "final_vqueue": tuple(s.vqueue for s in states),
    }


@pytest.mark.parametrize("policy_factory", [
    dpp.DppPolicy,
    lambda: ofrp.OfrpPolicy(ofrp.OfrpParams(users=(
        ofrp.OfrpUserParams(0.5, 0.4, 0.3, 0.6),
        ofrp.OfrpUserParams(0.5, 0.2, 0.5, 0.9)))),
])
def test_engine_matches_reference_stepper(policy_factory):
    """The inlined hot loop and the literal composition of update laws must
    produce identical sample paths, statistics included."""
    cfg = make_config(num_users=2, success_prob=[0.6, 0.9], aoi_cap=6,
                      aoi_limit=[3.0, 4.5], horizon=400, v_weight=40.0, seed=97)
    stats = run(policy_factory(), cfg, replica=1)
    ref = _replay(policy_factory(), cfg, replica=1)
    assert stats.avg_cost == ref["avg_cost"]
    assert stats.avg_aoi == ref["avg_aoi"]
    assert stats.empty_fraction == ref["empty_fraction"]
    assert stats.aoi_histogram == ref["hist"]
    assert stats.sample_freq == ref["sample_freq"]
    for k in range(2):
        assert stats.final_vqueue_over_t[k] * cfg.horizon == pytest.approx(
            ref["final_vqueue"][k], abs=1e-9)


def test_delivery_rate_tracks_channel_quality():
    cfg = make_config(num_users=1, success_prob=0.7, horizon=20000)
    stats = run(AlwaysSamplePolicy(0), cfg)
    rate = stats.deliveries[0] / stats.delivery_attempts[0]
    margin = 4 * np.sqrt(0.7 * 0.3 / 20000)
    assert abs(rate - 0.7) < margin


# ── action checking ───────────────────────────────────────────────────────

def test_rejects_out_of_range_sampler():
    cfg = make_config(horizon=10)
    with pytest.raises(ValueError, match="slot 0"):
        run(ScriptedPolicy([(5, None)]), cfg)


def test_rejects_retransmit_without_cache():
    cfg = make_config(horizon=10)
    with pytest.raises(ValueError, match="no cached packet"):
        run(ScriptedPolicy([(None, 1)]), cfg)


def test_rejects_same_user_sample_and_retransmit():
    # idle two slots first: a failed sample at age 1 is discarded on the
    # spot, so the cache only fills once the age has something to beat
    cfg = make_config(success_prob=0.0, horizon=10,
                      single_transmitter_mode=False)
    script = [(None, None), (None, None), (0, None), (0, 0)]
    with pytest.raises(ValueError, match="sample and retransmit"):
        run(ScriptedPolicy(script), cfg)


def test_single_transmitter_mode_enforced():
    script = [(None, None), (None, None), (1, None), (0, 1)]
    with pytest.raises(ValueError, match="single-transmitter"):
        run(ScriptedPolicy(script), make_config(success_prob=0.0, horizon=10))
    # the same schedule is legal when the restriction is lifted
    stats = run(ScriptedPolicy(script),
                make_config(success_prob=0.0, horizon=10,
                            single_transmitter_mode=False))
    assert stats.sample_freq == (0.1, 0.1)
    assert stats.retransmit_freq == (0.0, 0.1)
    assert stats.avg_cost == pytest.approx((6 + 6 + 5) / 10)


def test_check_actions_can_be_disabled():
    cfg = make_config(success_prob=0.0, horizon=5)
    script = [(None, None), (None, None), (1, None), (0, 1)]
    stats = run(ScriptedPolicy(script), cfg, check_actions=False)
    assert stats.horizon == 5


# ── recording windows and aggregates ──────────────────────────────────────

def test_burn_in_excludes_warmup():
    cfg = make_config(num_users=1, aoi_cap=5, horizon=10, burn_in=6)
    stats = run(IdlePolicy(), cfg)
    assert stats.avg_aoi == (5.0,)
    assert stats.aoi_histogram[0] == (0, 0, 0, 0, 4)
    assert sum(stats.aoi_histogram[0]) == 10 - 6
    cost_stats = run(AlwaysSamplePolicy(0),
                     make_config(num_users=1, success_prob=0.0, horizon=10,
                                 burn_in=6))
    assert cost_stats.avg_cost == 6.0
    assert cost_stats.empty_fraction == (0.0,)


def test_vqueue_trace_ends_at_final_ratio():
    cfg = make_config(num_users=1, horizon=5000)
    stats = run(IdlePolicy(), cfg)
    trace = stats.vqueue_trace[0]
    assert 90 <= len(trace) <= 101
    assert trace[-1][0] == 5000
    assert trace[-1][1] == stats.final_vqueue_over_t[0]


def test_track_states_collects_reachable_frequencies():
    cfg = make_config(num_users=1, success_prob=0.5, aoi_cap=6, horizon=800)
    stats = run(AlwaysSamplePolicy(0), cfg, track_states=True)
    freq = stats.state_freq[0]
    assert sum(freq.values()) == 800
    from aoisched.model import UserState
    for (occ, wait, aoi) in freq:
        UserState(aoi=aoi, waiting_time=wait, cache_occupied=occ).validate(6)


def test_run_replicas_single_equals_run():
    cfg = make_config(horizon=1500)
    stats, summary = run_replicas(dpp.DppPolicy(), cfg, 1)
    assert stats[0] == run(dpp.DppPolicy(), cfg, replica=0)
    assert summary.mean_cost == stats[0].avg_cost
    assert summary.stderr_cost == 0.0


def test_run_replicas_threaded_matches_sequential():
    cfg = make_config(horizon=1500)
    seq_stats, seq_sum = run_replicas(dpp.DppPolicy(), cfg, 3, threads=1)
    par_stats, par_sum = run_replicas(dpp.DppPolicy(), cfg, 3, threads=3)
    assert seq_stats == par_stats
    assert seq_sum == par_sum


def test_summarize_deterministic_policy_has_zero_spread():
    cfg = make_config(num_users=1, horizon=300)
    stats, summary = run_replicas(IdlePolicy(), cfg, 4)
    assert summary.stdev_cost == 0.0
    assert summary.stderr_aoi == (0.0,)
    assert summary.mean_cost == 0.0


def test_run_replicas_rejects_bad_count():
    with pytest.raises(ValueError):
        run_replicas(IdlePolicy(), make_config(), 0)
