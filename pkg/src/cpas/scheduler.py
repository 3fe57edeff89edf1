"""Weighted round-robin time-slice scheduler.

The server apportions processing among many session work queues with a
rotating ready queue: the head task always runs first and gets the largest
share of the round budget, expired tasks re-enter at the tail, finished
tasks leave the queue, and the weights are recomputed after every rotation
so the two queue constraints hold at every observable state:

    sum(weights) == 1           (within 1e-9)
    weights non-increasing front to back

Weights are linear in queue position: for m tasks, position i (1-based)
gets (m - i + 1) / (m * (m + 1) / 2).  The head's slice out of a round of
R ticks is max(1, round(weight * R)), so even very long queues make
progress every round.

Ticks are abstract work units; the server maps one tick to one inbound
frame processed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

WEIGHT_TOLERANCE = 1e-9
DEFAULT_ROUND_BUDGET = 100


class EmptyQueue(Exception):
    pass


@dataclass
class TaskEntry:
    task_id: object
    remaining_work: int
    weight: float = 0.0

    def __post_init__(self):
        if self.remaining_work < 0:
            raise ValueError("remaining_work must be >= 0")


@dataclass(frozen=True)
class SliceOutcome:
    task_id: object
    completed: bool


def _slice_of(weight: float, budget: int) -> int:
    # round-half-up; never a zero-length slice
    return max(1, int(weight * budget + 0.5))


class TaskQueue:
    """Ordered ready queue with position-based weights."""

    def __init__(self, entries=(), round_budget: int = DEFAULT_ROUND_BUDGET):
        if round_budget < 1:
            raise ValueError("round_budget must be >= 1")
        self.round_budget = round_budget
        self._entries: list[TaskEntry] = list(entries)
        self.assign_weights()

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    @property
    def entries(self) -> list[TaskEntry]:
        return list(self._entries)

    def push(self, task_id, work: int) -> None:
        """Append a task at the tail and renormalize."""
        self._entries.append(TaskEntry(task_id=task_id, remaining_work=work))
        self.assign_weights()

    def assign_weights(self) -> None:
        """Recompute the linear, position-based weights in place."""
        m = len(self._entries)
        if m == 0:
            return
        denom = m * (m + 1) / 2
        for i, entry in enumerate(self._entries, start=1):
            entry.weight = (m - i + 1) / denom

    def next_slice(self) -> tuple[object, int]:
        """Head task and its slice for this round. Does not mutate the queue."""
        if not self._entries:
            raise EmptyQueue("no ready tasks")
        head = self._entries[0]
        return head.task_id, _slice_of(head.weight, self.round_budget)

    def run_slice(self, elapsed: int) -> SliceOutcome:
        """Account ``elapsed`` ticks against the head task.

        A task that hits zero work leaves the queue; otherwise it rotates to
        the tail.  Either way the weights are renormalized before the next
        head is served.
        """
        if not self._entries:
            raise EmptyQueue("no ready tasks")
        head = self._entries[0]
        if not 0 < elapsed <= head.remaining_work:
            raise ValueError(
                f"elapsed {elapsed} outside (0, {head.remaining_work}] for head task"
            )
        head.remaining_work -= elapsed
        if head.remaining_work == 0:
            self._entries.pop(0)
            outcome = SliceOutcome(task_id=head.task_id, completed=True)
        else:
            self._entries.append(self._entries.pop(0))
            outcome = SliceOutcome(task_id=head.task_id, completed=False)
        self.assign_weights()
        return outcome

    def check_invariants(self) -> None:
        """Assert the two weight constraints; raises AssertionError if broken."""
        if not self._entries:
            return
        total = sum(e.weight for e in self._entries)
        assert abs(total - 1.0) <= WEIGHT_TOLERANCE, f"weights sum to {total!r}"
        for a, b in zip(self._entries, self._entries[1:]):
            assert a.weight >= b.weight - WEIGHT_TOLERANCE, "weights increased down-queue"
        assert all(e.weight > 0 for e in self._entries)


@dataclass
class SimulationResult:
    completion_order: list = field(default_factory=list)
    finish_tick: dict = field(default_factory=dict)
    total_ticks: int = 0
    slices: list = field(default_factory=list)  # (task_id, elapsed) per serving


def simulate(
    works: list[int],
    round_budget: int = DEFAULT_ROUND_BUDGET,
    check: bool = False,
) -> SimulationResult:
    """Run task workloads to completion; tasks are numbered 1..m.

    With ``check`` set, the weight constraints are verified after every
    queue mutation.
    """
    if any(w <= 0 for w in works):
        raise ValueError("all work amounts must be > 0")
    queue = TaskQueue(
        (TaskEntry(task_id=i, remaining_work=w) for i, w in enumerate(works, start=1)),
        round_budget=round_budget,
    )
    if check:
        queue.check_invariants()
    result = SimulationResult()
    tick = 0
    while len(queue):
        task_id, slice_ticks = queue.next_slice()
        elapsed = min(slice_ticks, queue._entries[0].remaining_work)
        tick += elapsed
        outcome = queue.run_slice(elapsed)
        if check:
            queue.check_invariants()
        result.slices.append((task_id, elapsed))
        if outcome.completed:
            result.completion_order.append(task_id)
            result.finish_tick[task_id] = tick
    result.total_ticks = tick
    return result
