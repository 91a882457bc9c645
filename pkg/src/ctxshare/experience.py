"""Value types for a single unit of experience.

A local state is the agent's discretized view of its neighborhood load; an
observation is one (state, action, next state, reward) tuple stamped with the
step it was taken at. These are the records that move between agents and
supervisors, so they are plain immutable tuples: hashable, comparable, cheap.
"""

from __future__ import annotations

from typing import NamedTuple

# Backlog discretization: {0, 1-2, 3-5, 6-10, >10}.
LOAD_BUCKET_BOUNDS = (0, 2, 5, 10)
N_LOAD_BUCKETS = 5


def load_bucket(load: int) -> int:
    """Map a queue backlog (routing + processing) to its bucket index."""
    if load <= 0:
        return 0
    if load <= 2:
        return 1
    if load <= 5:
        return 2
    if load <= 10:
        return 3
    return 4


class LocalAction(NamedTuple):
    """Either process the head task locally (code 0) or forward it to
    neighbor ``code - 1``."""

    code: int

    @property
    def is_forward(self) -> bool:
        return self.code > 0

    @property
    def neighbor_index(self) -> int:
        if self.code <= 0:
            raise ValueError("process-locally action has no neighbor index")
        return self.code - 1


PROCESS_LOCALLY = LocalAction(0)


def forward_to(neighbor_index: int) -> LocalAction:
    if neighbor_index < 0:
        raise ValueError("neighbor index must be nonnegative")
    return LocalAction(1 + neighbor_index)


class LocalState(NamedTuple):
    own_bucket: int
    neighbor_buckets: tuple  # one bucket per neighbor, in neighbor order


class Observation(NamedTuple):
    state: LocalState
    action: LocalAction
    next_state: LocalState
    reward: float
    step: int
