"""Discrete-time simulation of a network-distributed task allocation lattice.

Agents sit on a width x width grid with von Neumann adjacency. Source agents
receive tasks from the environment as a per-step Poisson stream; every agent
holds a FIFO routing queue (tasks it may forward or commit) and a FIFO
processing queue (tasks it committed to). Each step, every agent may decide
the fate of the head of its routing queue and advances the head of its
processing queue by one work unit. Rewards are the reciprocal of the
receiving agent's estimated service time.

The whole network is deterministic given its seed: arrivals come from a
dedicated named stream, and all per-step mutation is applied in agent-id
order.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, InvalidActionError
from .experience import LocalAction, LocalState, Observation, load_bucket
from .rng import derive_rng

DEFAULT_DURATION_MEAN = 10.0
DEFAULT_PRIOR_SERVICE = 10.0  # d0: service estimate before any completion
DEFAULT_HISTORY_WINDOW = 50   # W_hist: completions kept for the estimate
DEFAULT_RATE_WINDOW = 115     # W_rate: steps of arrival counts kept for rates


@dataclass
class Task:
    task_id: int
    duration: int          # remaining work, strictly positive until completion
    created_at: int
    origin_agent: int
    hop_count: int = 0


@dataclass
class AgentNode:
    id: int
    row: int
    col: int
    neighbors: tuple            # neighbor agent ids, fixed (up, down, left, right) order
    env_rate: float = 0.0
    prior_service: float = DEFAULT_PRIOR_SERVICE
    routing_queue: deque = field(default_factory=deque)
    processing_queue: deque = field(default_factory=deque)
    completion_history: deque = field(default_factory=deque)  # (task_id, service_time)
    history_window: int = DEFAULT_HISTORY_WINDOW
    rate_window: int = DEFAULT_RATE_WINDOW
    # Rolling per-step arrival counts, one entry per elapsed step.
    env_arrivals: deque = field(default_factory=deque)
    agent_arrivals: deque = field(default_factory=deque)
    _hist_sum: float = 0.0
    _env_win_sum: int = 0
    _agent_win_sum: int = 0
    _env_recv_step: int = 0
    _agent_recv_step: int = 0

    @property
    def load(self) -> int:
        return len(self.routing_queue) + len(self.processing_queue)

    def record_completion(self, task_id: int, service_time: int) -> None:
        if len(self.completion_history) == self.history_window:
            _, old = self.completion_history.popleft()
            self._hist_sum -= old
        self.completion_history.append((task_id, service_time))
        self._hist_sum += service_time

    def push_arrival_counts(self) -> None:
        """Close out the step: roll this step's arrival counts into the windows."""
        if len(self.env_arrivals) == self.rate_window:
            self._env_win_sum -= self.env_arrivals.popleft()
        self.env_arrivals.append(self._env_recv_step)
        self._env_win_sum += self._env_recv_step
        if len(self.agent_arrivals) == self.rate_window:
            self._agent_win_sum -= self.agent_arrivals.popleft()
        self.agent_arrivals.append(self._agent_recv_step)
        self._agent_win_sum += self._agent_recv_step
        self._env_recv_step = 0
        self._agent_recv_step = 0

    def env_rate_estimate(self) -> float:
        return self._env_win_sum / self.rate_window

    def agent_rate_estimate(self) -> float:
        return self._agent_win_sum / self.rate_window


@dataclass
class TaskNetwork:
    width: int
    agents: list                # AgentNode, indexed by agent id = row * width + col
    rng: np.random.Generator
    duration_mean: float = DEFAULT_DURATION_MEAN
    time: int = 0
    created_total: int = 0
    completed_total: int = 0
    queued_total: int = 0
    last_step_completions: list = field(default_factory=list)  # (task_id, service_time)
    _next_task_id: int = 0

    def local_state(self, agent_id: int) -> LocalState:
        node = self.agents[agent_id]
        return LocalState(
            load_bucket(node.load),
            tuple(load_bucket(self.agents[n].load) for n in node.neighbors),
        )

    def new_task_id(self) -> int:
        tid = self._next_task_id
        self._next_task_id += 1
        return tid


def center_block_coords(width: int) -> set:
    """(row, col) cells of the central ceil(width/3) x ceil(width/3) block."""
    block = -(-width // 3)
    start = (width - block) // 2
    return {(r, c) for r in range(start, start + block) for c in range(start, start + block)}


def build_lattice(
    width: int,
    concentration: str,
    lam: float,
    seed: int,
    *,
    duration_mean: float = DEFAULT_DURATION_MEAN,
    prior_service: float = DEFAULT_PRIOR_SERVICE,
    history_window: int = DEFAULT_HISTORY_WINDOW,
    rate_window: int = DEFAULT_RATE_WINDOW,
) -> TaskNetwork:
    """Build a width x width lattice with sources per the concentration pattern.

    ``border`` puts rate-lam sources on the outer ring; ``center`` on the
    central block (see ``center_block_coords``). All other agents have rate 0.
    """
    if width < 2:
        raise ConfigurationError(f"lattice width must be >= 2, got {width}")
    if lam < 0:
        raise ConfigurationError(f"arrival rate must be >= 0, got {lam}")
    if concentration not in ("border", "center"):
        raise ConfigurationError(f"unknown concentration pattern {concentration!r}")

    if concentration == "border":
        sources = {
            (r, c)
            for r in range(width)
            for c in range(width)
            if r in (0, width - 1) or c in (0, width - 1)
        }
    else:
        sources = center_block_coords(width)

    agents = []
    for r in range(width):
        for c in range(width):
            nbrs = []
            for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):  # up, down, left, right
                rr, cc = r + dr, c + dc
                if 0 <= rr < width and 0 <= cc < width:
                    nbrs.append(rr * width + cc)
            agents.append(
                AgentNode(
                    id=r * width + c,
                    row=r,
                    col=c,
                    neighbors=tuple(nbrs),
                    env_rate=lam if (r, c) in sources else 0.0,
                    prior_service=prior_service,
                    history_window=history_window,
                    rate_window=rate_window,
                )
            )
    return TaskNetwork(
        width=width,
        agents=agents,
        rng=derive_rng(seed, "env"),
        duration_mean=duration_mean,
    )


def sample_durations(rng: np.random.Generator, mean: float, size: int) -> np.ndarray:
    """Exponential(mean) work amounts, rounded up to whole steps (>= 1)."""
    if size == 0:
        return np.empty(0, dtype=np.int64)
    raw = rng.exponential(mean, size=size)
    return np.maximum(np.ceil(raw).astype(np.int64), 1)


def generate_tasks(net: TaskNetwork) -> list:
    """Draw this step's environment arrivals for every source agent.

    Call exactly once per step, before actions. New tasks join the source's
    routing queue with created_at = the current step.
    """
    sources = [a for a in net.agents if a.env_rate > 0.0]
    if not sources:
        return []
    counts = net.rng.poisson([a.env_rate for a in sources])
    total = int(counts.sum())
    durations = sample_durations(net.rng, net.duration_mean, total)
    new_tasks = []
    k = 0
    for node, count in zip(sources, counts):
        for _ in range(int(count)):
            task = Task(
                task_id=net.new_task_id(),
                duration=int(durations[k]),
                created_at=net.time,
                origin_agent=node.id,
            )
            k += 1
            node.routing_queue.append(task)
            node._env_recv_step += 1
            new_tasks.append(task)
    net.created_total += len(new_tasks)
    net.queued_total += len(new_tasks)
    return new_tasks


def estimate_service_time(node: AgentNode) -> float:
    """Mean service time over the completion history, or the d0 prior if empty."""
    if not node.completion_history:
        return node.prior_service
    return node._hist_sum / len(node.completion_history)


def reward_for(net: TaskNetwork, action: LocalAction, actor: int) -> float:
    """1/d where d is the estimated service time of the agent receiving the task."""
    node = net.agents[actor]
    if action.is_forward:
        receiver = net.agents[node.neighbors[action.neighbor_index]]
    else:
        receiver = node
    return 1.0 / estimate_service_time(receiver)


def step(net: TaskNetwork, actions: Mapping[int, Sequence[LocalAction]]) -> list:
    """Advance the network by one step.

    Applies routing decisions (in agent-id order), advances the head of every
    processing queue by one unit, records completions, and returns one
    ``(agent_id, Observation)`` per action taken, ordered by agent id.
    Rewards use the receiver's service estimate from before this step's
    completions, so they do not depend on the order actions are applied in.
    """
    pending = []  # (actor_id, pre_state, action, reward)
    for actor_id in sorted(actions):
        node = net.agents[actor_id]
        acts = actions[actor_id]
        if not acts:
            continue
        pre_state = net.local_state(actor_id)
        for action in acts:
            if not node.routing_queue:
                break  # nothing at the head; the action has no task to act on
            if action.is_forward and action.neighbor_index >= len(node.neighbors):
                raise InvalidActionError(
                    f"agent {actor_id} has {len(node.neighbors)} neighbors, "
                    f"action forwards to index {action.neighbor_index}"
                )
            reward = reward_for(net, action, actor_id)
            task = node.routing_queue.popleft()
            if action.is_forward:
                receiver = net.agents[node.neighbors[action.neighbor_index]]
                task.hop_count += 1
                receiver.routing_queue.append(task)
                receiver._agent_recv_step += 1
            else:
                node.processing_queue.append(task)
            pending.append((actor_id, pre_state, action, reward))

    # Work advance and completions.
    net.last_step_completions = []
    completion_step = net.time + 1
    for node in net.agents:
        if not node.processing_queue:
            continue
        head = node.processing_queue[0]
        head.duration -= 1
        if head.duration <= 0:
            node.processing_queue.popleft()
            service = completion_step - head.created_at
            node.record_completion(head.task_id, service)
            net.last_step_completions.append((head.task_id, service))
            net.completed_total += 1
            net.queued_total -= 1

    net.time += 1
    for node in net.agents:
        node.push_arrival_counts()

    observations = []
    for actor_id, pre_state, action, reward in pending:
        observations.append(
            (actor_id, Observation(pre_state, action, net.local_state(actor_id), reward, net.time - 1))
        )
    return observations


def total_queue_length(net: TaskNetwork) -> int:
    return sum(a.load for a in net.agents)


def queue_census(net: TaskNetwork) -> dict:
    """Task-conservation bookkeeping: created = queued + completed."""
    in_queues = total_queue_length(net)
    return {
        "created": net.created_total,
        "in_queues": in_queues,
        "completed": net.completed_total,
        "conserved": net.created_total == in_queues + net.completed_total,
    }
