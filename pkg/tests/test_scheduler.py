"""Scheduler tests, including the naive tick-at-a-time oracle."""

import random

import pytest

from cpas.scheduler import EmptyQueue, SimulationResult, TaskEntry, TaskQueue, simulate


def naive_trace(works, round_budget):
    """Independent tick-at-a-time interpreter.

    Keeps (task_id, work) pairs in a plain list, recomputes weights from the
    position formula after every rotation or completion, and burns the
    issued slice one tick at a time.
    """
    queue = [[i, w] for i, w in enumerate(works, start=1)]
    order, finish = [], {}
    tick = 0
    while queue:
        m = len(queue)
        denom = m * (m + 1) / 2
        weight = m / denom  # head position
        slice_left = max(1, int(weight * round_budget + 0.5))
        task_id, _ = queue[0]
        while slice_left > 0 and queue[0][1] > 0:
            queue[0][1] -= 1
            slice_left -= 1
            tick += 1
        if queue[0][1] == 0:
            queue.pop(0)
            order.append(task_id)
            finish[task_id] = tick
        else:
            queue.append(queue.pop(0))
    return order, finish, tick


def test_assign_weights_three_tasks():
    queue = TaskQueue([TaskEntry(i, 10) for i in (1, 2, 3)])
    weights = [e.weight for e in queue]
    assert weights == pytest.approx([1 / 2, 1 / 3, 1 / 6], abs=1e-12)
    queue.check_invariants()


def test_assign_weights_single_task():
    queue = TaskQueue([TaskEntry(1, 5)])
    assert queue.entries[0].weight == pytest.approx(1.0)


@pytest.mark.parametrize("m", [1, 2, 3, 5, 17, 200])
def test_weights_always_normalized_and_non_increasing(m):
    queue = TaskQueue([TaskEntry(i, 1) for i in range(m)])
    queue.check_invariants()


def test_next_slice_head_share():
    queue = TaskQueue([TaskEntry(i, 100) for i in (1, 2, 3)], round_budget=60)
    assert queue.next_slice() == (1, 30)
    # next_slice must not mutate
    assert queue.next_slice() == (1, 30)
    assert len(queue) == 3


def test_next_slice_sole_task_gets_whole_round():
    queue = TaskQueue([TaskEntry("a", 1)], round_budget=100)
    assert queue.next_slice() == ("a", 100)


def test_next_slice_floor_at_one_tick():
    queue = TaskQueue([TaskEntry(i, 1) for i in range(200)], round_budget=100)
    for _ in range(200):
        _, s = queue.next_slice()
        assert s >= 1
        queue.run_slice(1)


def test_next_slice_empty_queue():
    queue = TaskQueue([])
    with pytest.raises(EmptyQueue):
        queue.next_slice()


def test_run_slice_completion_shrinks_queue():
    queue = TaskQueue([TaskEntry(1, 10), TaskEntry(2, 50)], round_budget=60)
    _, s = queue.next_slice()
    outcome = queue.run_slice(min(s, 10))
    assert outcome.completed and outcome.task_id == 1
    assert len(queue) == 1
    queue.check_invariants()


def test_run_slice_expiry_rotates_to_tail():
    queue = TaskQueue([TaskEntry(1, 100), TaskEntry(2, 5)], round_budget=60)
    _, s = queue.next_slice()
    outcome = queue.run_slice(s)
    assert not outcome.completed
    assert [e.task_id for e in queue] == [2, 1]
    assert queue.entries[1].remaining_work == 100 - s
    queue.check_invariants()


def test_last_task_completion_empties_queue():
    queue = TaskQueue([TaskEntry(1, 3)], round_budget=10)
    queue.run_slice(3)
    with pytest.raises(EmptyQueue):
        queue.next_slice()


def test_simulate_equal_small_works_single_round():
    result = simulate([10, 10, 10], round_budget=60, check=True)
    assert result.completion_order == [1, 2, 3]
    assert result.finish_tick == {1: 10, 2: 20, 3: 30}


def test_simulate_single_tick_task():
    result = simulate([1], round_budget=100)
    assert result.finish_tick == {1: 1}


def test_simulate_two_tasks_alternating():
    # m=2 weights are [2/3, 1/3]; after each rotation the new head holds the
    # position-1 weight, so every full serving is 40 ticks and the shorter
    # task still finishes first.  Expected trace frozen from the naive
    # tick-at-a-time oracle.
    result = simulate([120, 60], round_budget=60, check=True)
    order, finish, total = naive_trace([120, 60], 60)
    assert result.slices == [(1, 40), (2, 40), (1, 40), (2, 20), (1, 40)]
    assert result.completion_order == order == [2, 1]
    assert result.finish_tick == finish == {2: 140, 1: 180}
    assert result.total_ticks == total == 180


def test_simulate_matches_naive_oracle_random():
    rng = random.Random(0x75A5)
    for _ in range(300):
        m = rng.randrange(1, 6)
        works = [rng.randrange(1, 21) for _ in range(m)]
        budget = rng.choice([1, 3, 10, 60, 100])
        result = simulate(works, round_budget=budget)
        order, finish, total = naive_trace(works, budget)
        assert result.completion_order == order, (works, budget)
        assert result.finish_tick == finish, (works, budget)
        assert result.total_ticks == total


def test_work_conservation():
    rng = random.Random(4)
    for _ in range(50):
        works = [rng.randrange(1, 30) for _ in range(rng.randrange(1, 8))]
        result = simulate(works, round_budget=17)
        assert result.total_ticks == sum(works)
        assert sum(e for _, e in result.slices) == sum(works)
        assert max(result.finish_tick.values()) == sum(works)


def test_starvation_freedom():
    # every task is served within m consecutive slices
    rng = random.Random(5)
    for _ in range(20):
        m = rng.randrange(2, 12)
        queue = TaskQueue([TaskEntry(i, 10**6) for i in range(m)], round_budget=50)
        served = []
        for _ in range(m):
            task_id, s = queue.next_slice()
            served.append(task_id)
            queue.run_slice(min(s, 10**6))
        assert set(served) == set(range(m))


def test_invariants_hold_after_every_mutation():
    rng = random.Random(6)
    queue = TaskQueue([], round_budget=40)
    for i in range(60):
        queue.push(i, rng.randrange(1, 25))
        queue.check_invariants()
    while len(queue):
        _, s = queue.next_slice()
        head_work = queue.entries[0].remaining_work
        queue.run_slice(min(s, head_work))
        queue.check_invariants()


def test_simulate_rejects_nonpositive_work():
    with pytest.raises(ValueError):
        simulate([5, 0, 3])
