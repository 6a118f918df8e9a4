import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from admission_oracle import interpret
from elasticmem.scheduler import (Counters, Demand, Phase, SchedulerConfig, ballooning_directive,
                                  plan_decode, plan_partitioned, plan_prefill, select_phase)


def random_instance(rng):
    total = rng.randint(1, 64)
    free_kv = rng.randint(0, total)
    free_act = rng.randint(0, total - free_kv)
    theta = rng.randint(0, total - 1)
    queue = [Demand(i, rng.randint(0, 16), rng.randint(0, 16), rng.random() < 0.3)
             for i in range(rng.randint(0, 8))]
    return Counters(total, free_kv, free_act), theta, queue, rng.randint(0, 40)


def _as_dicts(queue):
    return [{"id": d.request_id, "act": d.act, "kv": d.kv, "swapped": d.swapped} for d in queue]


def test_worked_example_prefill():
    queue = [Demand(i, act=20, kv=15) for i in (1, 2, 3)]
    plan = plan_prefill(Counters(100, 50, 40), 10, queue, buffer_space=20)
    assert plan.batch == [1, 2, 3]
    assert plan.offloads == [3]
    assert plan.buffer_left == 5
    assert (plan.m_kv, plan.m_act) == (30, 60)
    assert plan.inflation == -20


def test_empty_queue():
    for plan in (plan_prefill(Counters(10, 5, 5), 1, [], 3), plan_decode(Counters(10, 5, 5), 1, [])):
        assert plan.batch == [] and plan.inflation == 0


def test_first_request_breaching_theta_stops_scan():
    queue = [Demand(1, act=95, kv=0), Demand(2, act=1, kv=1)]
    assert plan_prefill(Counters(100, 50, 50), 10, queue, 100).batch == []


def test_decode_excludes_swapped_request_without_room():
    queue = [Demand(1, act=1, kv=1), Demand(2, act=1, kv=95, swapped=True), Demand(3, act=1, kv=1)]
    plan = plan_decode(Counters(100, 50, 40), 10, queue)
    assert plan.batch == [1] and plan.fetches == []


def test_decode_inflation_covers_growth():
    queue = [Demand(i, act=0, kv=1) for i in range(5)]
    plan = plan_decode(Counters(20, 2, 10), 0, queue)
    assert plan.batch == list(range(5))
    assert plan.inflation == 3


def test_decode_fetches_subset_of_batch():
    queue = [Demand(1, 1, 0), Demand(2, 1, 4, swapped=True)]
    plan = plan_decode(Counters(50, 30, 20), 2, queue)
    assert plan.fetches == [2] and set(plan.fetches) <= set(plan.batch)


def test_ballooning_directive_examples():
    assert ballooning_directive(2, 10, 5, 0) == 3
    assert ballooning_directive(50, 40, 30, 60) == -20
    assert ballooning_directive(10, 10, 5, 5) == 0


def test_select_phase():
    admitted = plan_prefill(Counters(100, 50, 50), 0, [Demand(1, 1, 1)], 0)
    blocked = plan_prefill(Counters(100, 50, 50), 99, [Demand(1, 1, 1)], 0)
    assert select_phase(False, admitted) is Phase.DECODE
    assert select_phase(True, admitted) is Phase.PREFILL
    assert blocked.batch == []
    assert select_phase(True, blocked) is Phase.DECODE


def test_partitioned_respects_each_pool():
    queue = [Demand(1, act=3, kv=6), Demand(2, act=3, kv=6)]
    plan = plan_partitioned(Phase.PREFILL, Counters(100, 12, 10), 2, queue)
    assert plan.batch == [1]  # second KV demand would dip into the reserve
    assert plan.inflation == 0 and plan.offloads == []


def test_theta_resolution():
    assert SchedulerConfig().resolve_theta(1000) == 20
    assert SchedulerConfig(theta=7).resolve_theta(1000) == 7
    with pytest.raises(ValueError):
        SchedulerConfig(theta=1000).resolve_theta(1000)


@pytest.mark.parametrize("seed", range(3))
def test_planners_match_oracle(seed):
    rng = random.Random(seed)
    for _ in range(1000):
        counters, theta, queue, p_b = random_instance(rng)
        pre = plan_prefill(counters, theta, queue, p_b)
        assert (pre.batch, pre.inflation, pre.offloads, pre.buffer_left) == interpret(
            "prefill", counters.free_kv, counters.free_act, counters.total, _as_dicts(queue), theta, p_b)
        dec = plan_decode(counters, theta, queue)
        b, i, o, _ = interpret("decode", counters.free_kv, counters.free_act, counters.total,
                               _as_dicts(queue), theta)
        assert (dec.batch, dec.inflation, o) == (b, i, [])
        assert dec.fetches == [d.request_id for d in queue if d.swapped and d.request_id in b]


@given(st.integers(1, 64), st.integers(0, 63), st.lists(st.tuples(st.integers(0, 16), st.integers(0, 16)), max_size=8),
       st.integers(0, 40))
def test_admitted_set_is_prefix_and_within_headroom(total, theta, demands, p_b):
    theta = min(theta, total - 1)
    queue = [Demand(i, a, k) for i, (a, k) in enumerate(demands)]
    plan = plan_prefill(Counters(total, total // 2, total - total // 2), theta, queue, p_b)
    assert plan.batch == list(range(len(plan.batch)))
    assert total - (plan.m_kv + plan.m_act) >= theta or not plan.batch
    assert set(plan.offloads) <= set(plan.batch)
    assert 0 <= plan.buffer_left <= p_b
