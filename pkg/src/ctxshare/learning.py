"""Per-agent tabular Q-learning with a softmax (Boltzmann) stochastic policy.

Missing table entries read as zero. Updates are the standard one-step
off-policy rule Q(s,a) += lr * (r + gamma * max_a' Q(s',a') - Q(s,a)); shared
experiences relayed by a supervisor replay through the same rule in timestamp
order at a separate learning rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .errors import IncompatibleExperienceError
from .experience import LocalAction, LocalState, Observation


def available_actions(state: LocalState) -> list:
    """Process locally, or forward to any neighbor visible in the state."""
    return [LocalAction(code) for code in range(1 + len(state.neighbor_buckets))]


@dataclass
class QTable:
    alpha: float = 0.1
    alpha_shared: float = 0.05
    gamma: float = 0.95
    temperature: float = 1.0
    neighbor_count: Optional[int] = None  # if set, shared batches must match it
    entries: dict = field(default_factory=dict)  # (LocalState, LocalAction) -> value
    rejected_batches: int = 0

    def value(self, state: LocalState, action: LocalAction) -> float:
        return self.entries.get((state, action), 0.0)

    def greedy_value(self, state: LocalState) -> float:
        entries = self.entries
        best = 0.0
        first = True
        for code in range(1 + len(state.neighbor_buckets)):
            v = entries.get((state, LocalAction(code)), 0.0)
            if first or v > best:
                best = v
                first = False
        return best


def policy_distribution(q: QTable, state: LocalState) -> list:
    """Softmax over Q(s, .) at the table's temperature; sums to one."""
    actions = available_actions(state)
    values = [q.value(state, a) for a in actions]
    peak = max(values)
    tau = q.temperature
    weights = [math.exp((v - peak) / tau) for v in values]
    total = sum(weights)
    return [(a, w / total) for a, w in zip(actions, weights)]


def select_action(q: QTable, state: LocalState, rng: np.random.Generator) -> LocalAction:
    """Sample an action from the softmax policy; every action has p > 0."""
    n_actions = 1 + len(state.neighbor_buckets)
    if n_actions == 1:
        return LocalAction(0)
    entries = q.entries
    values = [entries.get((state, LocalAction(code)), 0.0) for code in range(n_actions)]
    peak = max(values)
    tau = q.temperature
    weights = [math.exp((v - peak) / tau) for v in values]
    r = rng.random() * sum(weights)
    acc = 0.0
    for code, w in enumerate(weights):
        acc += w
        if r < acc:
            return LocalAction(code)
    return LocalAction(n_actions - 1)


def _apply(q: QTable, obs: Observation, lr: float) -> None:
    key = (obs.state, obs.action)
    old = q.entries.get(key, 0.0)
    target = obs.reward + q.gamma * q.greedy_value(obs.next_state)
    q.entries[key] = old + lr * (target - old)


def update_q(q: QTable, obs: Observation) -> QTable:
    """One-step Q update from the agent's own experience; touches one entry."""
    _apply(q, obs, q.alpha)
    return q


def incorporate_shared(q: QTable, batch: Iterable[Observation]) -> QTable:
    """Replay a relayed batch in timestamp order at the shared learning rate.

    The whole batch is rejected (and counted) if any observation's action
    space does not match this agent's neighbor count.
    """
    batch = list(batch)
    if q.neighbor_count is not None:
        for obs in batch:
            if len(obs.state.neighbor_buckets) != q.neighbor_count:
                q.rejected_batches += 1
                raise IncompatibleExperienceError(
                    f"batch has action space for {len(obs.state.neighbor_buckets)} "
                    f"neighbors, agent has {q.neighbor_count}"
                )
    for obs in sorted(batch, key=lambda o: o.step):
        _apply(q, obs, q.alpha_shared)
    return q


def anneal_temperature(
    step: int,
    horizon: int,
    start: float = 1.0,
    end: float = 0.1,
    anneal_fraction: float = 1.0,
) -> float:
    """Exponential schedule from start to end, then hold.

    The decay completes after ``anneal_fraction`` of the horizon, so the
    policy can spend the rest of the run exploiting at the final temperature.
    """
    span = max(int(horizon * anneal_fraction) - 1, 1)
    frac = min(max(step / span, 0.0), 1.0)
    return start * (end / start) ** frac


# ------------------------------------------------------------- binary dump

QTABLE_MAGIC = b"CXQT"
QTABLE_VERSION = 1


def dump_qtables(tables: dict) -> bytes:
    """Serialize agent Q-tables for post-hoc inspection (versioned header)."""
    import struct

    out = bytearray()
    out += QTABLE_MAGIC
    out += struct.pack("<HI", QTABLE_VERSION, len(tables))
    for agent_id in sorted(tables):
        q = tables[agent_id]
        out += struct.pack("<IfffI", agent_id, q.alpha, q.alpha_shared, q.gamma, len(q.entries))
        for (state, action), value in sorted(q.entries.items()):
            out += struct.pack("<BB", state.own_bucket, len(state.neighbor_buckets))
            out += bytes(state.neighbor_buckets)
            out += struct.pack("<Bd", action.code, value)
    return bytes(out)


def load_qtables(data: bytes) -> dict:
    import struct

    if data[:4] != QTABLE_MAGIC:
        raise ValueError("not a Q-table dump")
    version, n_tables = struct.unpack_from("<HI", data, 4)
    if version != QTABLE_VERSION:
        raise ValueError(f"unsupported Q-table dump version {version}")
    pos = 10
    tables = {}
    for _ in range(n_tables):
        agent_id, alpha, alpha_shared, gamma, n_entries = struct.unpack_from("<IfffI", data, pos)
        pos += 20
        q = QTable(alpha=alpha, alpha_shared=alpha_shared, gamma=gamma)
        for _ in range(n_entries):
            own, nc = struct.unpack_from("<BB", data, pos)
            pos += 2
            nbrs = tuple(data[pos : pos + nc])
            pos += nc
            code, value = struct.unpack_from("<Bd", data, pos)
            pos += 9
            q.entries[(LocalState(own, nbrs), LocalAction(code))] = value
        tables[agent_id] = q
    return tables
