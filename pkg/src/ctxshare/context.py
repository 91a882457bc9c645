"""Context features and per-window context summaries.

A context feature vector abstracts the local learning environment of one
agent at one step: its load relative to the mean load of its neighbors, plus
the rate at which each neighbor has been receiving tasks from the environment
and from other agents. A context summary is the arithmetic mean of a window
of feature vectors and is the unit supervisors compare when looking for
sharing partners.

Feature dimensionality is 1 + 2 * neighbor_count, so agents with different
neighbor counts live in different context spaces and are never compared.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .errors import MalformedWindowError
from .experience import Observation

# One task: keeps the relative-load denominator positive while preserving
# the ordering of loads when neighbors are idle.
REL_LOAD_EPSILON = 1.0


class NeighborhoodSnapshot(NamedTuple):
    own_load: int
    neighbor_loads: tuple
    neighbor_env_counts: tuple    # windowed arrival counts from the environment
    neighbor_agent_counts: tuple  # windowed arrival counts from other agents
    rate_window: int


def snapshot_from(net, agent_id: int) -> NeighborhoodSnapshot:
    """Collect the feature inputs for one agent from a live network."""
    node = net.agents[agent_id]
    nbrs = [net.agents[n] for n in node.neighbors]
    return NeighborhoodSnapshot(
        own_load=node.load,
        neighbor_loads=tuple(n.load for n in nbrs),
        neighbor_env_counts=tuple(n._env_win_sum for n in nbrs),
        neighbor_agent_counts=tuple(n._agent_win_sum for n in nbrs),
        rate_window=node.rate_window,
    )


class ContextFeatureVector(NamedTuple):
    rel_load: float
    neighbor_env_rates: tuple
    neighbor_agent_rates: tuple
    step: int

    @property
    def dimension(self) -> int:
        return 1 + 2 * len(self.neighbor_env_rates)

    def as_tuple(self) -> tuple:
        return (self.rel_load,) + self.neighbor_env_rates + self.neighbor_agent_rates


def compute_features(agent_id: int, snapshot: NeighborhoodSnapshot, t: int) -> ContextFeatureVector:
    """Per-step context features for one agent."""
    nbr_loads = snapshot.neighbor_loads
    mean_load = sum(nbr_loads) / len(nbr_loads) if nbr_loads else 0.0
    w = snapshot.rate_window
    return ContextFeatureVector(
        rel_load=snapshot.own_load / max(mean_load, REL_LOAD_EPSILON),
        neighbor_env_rates=tuple(c / w for c in snapshot.neighbor_env_counts),
        neighbor_agent_rates=tuple(c / w for c in snapshot.neighbor_agent_counts),
        step=t,
    )


@dataclass
class ContextSummary:
    agent_id: int
    mean_vector: np.ndarray
    sample_count: int
    neighbor_count: int

    @property
    def dimension(self) -> int:
        return self.mean_vector.shape[0]


@dataclass
class ObservationWindow:
    """One agent's experiences over a reporting interval.

    Holds at most K observations: an agent only acts on steps where its
    routing queue has work, so light-traffic windows can be short.
    """

    agent_id: int
    observations: list
    window_index: int


def summarize_window(features: Sequence[ContextFeatureVector], k: int, agent_id: int = -1) -> ContextSummary:
    """Component-wise mean of a window of K feature vectors."""
    if len(features) != k:
        raise MalformedWindowError(f"expected {k} feature vectors, got {len(features)}")
    dims = {f.dimension for f in features}
    if len(dims) != 1:
        raise MalformedWindowError(f"mixed feature dimensionalities in window: {sorted(dims)}")
    mat = np.array([f.as_tuple() for f in features], dtype=np.float64)
    return ContextSummary(
        agent_id=agent_id,
        mean_vector=mat.sum(axis=0) / k,
        sample_count=k,
        neighbor_count=len(features[0].neighbor_env_rates),
    )


def inject_noise(
    summary: ContextSummary,
    noise_level: float,
    rng: np.random.Generator,
    component_scale: Optional[np.ndarray] = None,
) -> ContextSummary:
    """Add zero-mean Gaussian noise with std = noise_level * component_scale.

    ``component_scale`` is the empirical per-component std of the summaries
    across the supervisory group this window (see ``inject_group_noise``).
    Level 0 returns the summary unchanged, bit for bit.
    """
    if not 0.0 <= noise_level <= 1.0:
        raise ValueError(f"noise level must be in [0, 1], got {noise_level}")
    if noise_level == 0.0:
        return summary
    if component_scale is None:
        raise ValueError("component_scale is required for a nonzero noise level")
    noise = rng.normal(0.0, 1.0, size=summary.mean_vector.shape) * (noise_level * component_scale)
    return ContextSummary(
        agent_id=summary.agent_id,
        mean_vector=summary.mean_vector + noise,
        sample_count=summary.sample_count,
        neighbor_count=summary.neighbor_count,
    )


def inject_group_noise(
    summaries: Sequence[ContextSummary],
    noise_level: float,
    rng: np.random.Generator,
) -> list:
    """Corrupt a supervisory group's summaries relative to their own spread."""
    if noise_level == 0.0 or not summaries:
        return list(summaries)
    out = []
    by_nc: dict = {}
    for s in summaries:
        by_nc.setdefault(s.neighbor_count, []).append(s)
    scales = {
        nc: np.std(np.array([s.mean_vector for s in group]), axis=0)
        for nc, group in by_nc.items()
    }
    for s in summaries:
        out.append(inject_noise(s, noise_level, rng, scales[s.neighbor_count]))
    return out
