"""Supervisor-side selection of experience-sharing partners.

Pipeline, run once per reporting window per supervisor:

1. fit a covariance-aware (Mahalanobis) metric over the group's context
   summaries, with diagonal shrinkage so the metric exists even for small or
   degenerate samples;
2. partition the summaries into potential sharing groups with K-means in the
   metric-whitened space, choosing k by the gap statistic;
3. build the Gram matrix of pairwise context distances for each group and a
   Boltzmann sampling distribution over its unordered pairs;
4. walk the agents of each group in a seeded random order and stochastically
   admit partners, sampling without replacement so nobody lands in two
   groups; close each group symmetrically.

Agents whose context is far from everyone else's end up with no partners.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .context import ContextSummary
from .errors import DegenerateMetricError

DEFAULT_SHRINKAGE = 0.1
DEFAULT_TEMPERATURE = 1.0
DEFAULT_GAP_REFS = 20
KMEANS_MAX_ITER = 100
KMEANS_TOL = 1e-6


# ---------------------------------------------------------------- metric

@dataclass
class MetricModel:
    mean: np.ndarray
    inverse_covariance: np.ndarray
    shrinkage_weight: float

    @property
    def dimension(self) -> int:
        return self.mean.shape[0]

    def distance(self, x: np.ndarray, y: np.ndarray) -> float:
        d = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
        return math.sqrt(max(float(d @ self.inverse_covariance @ d), 0.0))

    def whitener(self) -> np.ndarray:
        """W such that Euclidean distance of x @ W equals the metric distance."""
        return np.linalg.cholesky(self.inverse_covariance)

    @classmethod
    def euclidean(cls, dimension: int) -> "MetricModel":
        return cls(np.zeros(dimension), np.eye(dimension), 0.0)


def _summary_matrix(summaries: Sequence[ContextSummary]) -> np.ndarray:
    return np.array([s.mean_vector for s in summaries], dtype=np.float64)


def fit_metric(
    summaries: Sequence[ContextSummary],
    per_step_features: Optional[np.ndarray] = None,
    shrinkage: float = DEFAULT_SHRINKAGE,
) -> MetricModel:
    """Fit the Mahalanobis metric over a group's summaries.

    Covariance is shrunk toward a scaled identity:
    cov_hat = (1 - w) * S + w * (tr(S) / d) * I, which is positive definite for
    any w > 0 even when S is rank deficient (constant columns, few samples).
    When per-step features are available the covariance is fit on them (n*K
    samples) rather than on the n summaries: the estimate is well conditioned
    for small groups and, crucially, the distance scale stays comparable
    across supervisory-group sizes.
    """
    if len(summaries) < 2:
        raise DegenerateMetricError(f"need at least 2 summaries, got {len(summaries)}")
    vectors = _summary_matrix(summaries)
    d = vectors.shape[1]
    if d == 0:
        raise DegenerateMetricError("zero-dimensional context features")

    fit_data = vectors
    if per_step_features is not None and per_step_features.shape[0] >= max(2, len(summaries)):
        fit_data = np.asarray(per_step_features, dtype=np.float64)

    centered = fit_data - fit_data.mean(axis=0)
    cov = (centered.T @ centered) / (fit_data.shape[0] - 1)
    target = np.trace(cov) / d
    if target <= 0.0:
        target = 1.0  # all samples identical; any positive scale gives a valid metric
    shrunk = (1.0 - shrinkage) * cov + shrinkage * target * np.eye(d)
    try:
        inv = np.linalg.inv(shrunk)
    except np.linalg.LinAlgError as exc:
        raise DegenerateMetricError(f"covariance not invertible: {exc}") from exc
    inv = (inv + inv.T) / 2.0
    return MetricModel(mean=vectors.mean(axis=0), inverse_covariance=inv, shrinkage_weight=shrinkage)


# ---------------------------------------------------------------- clustering

@dataclass
class PotentialSharingGroup:
    index: int
    members: list  # ContextSummary, all with the same neighbor count


def _kmeans(
    points: np.ndarray,
    k: int,
    rng: np.random.Generator,
    max_iter: int = KMEANS_MAX_ITER,
    tol: float = KMEANS_TOL,
    n_init: int = 1,
):
    """Seeded k-means++ / Lloyd iterations; returns (labels, dispersion).

    ``n_init`` restarts keep the lowest-dispersion run; one pass is enough for
    the uniform reference draws of the gap statistic, real data gets several.
    """
    best = None
    for _ in range(max(n_init, 1)):
        labels, wk = _kmeans_once(points, k, rng, max_iter, tol)
        if best is None or wk < best[1]:
            best = (labels, wk)
    return best


def _kmeans_once(
    points: np.ndarray,
    k: int,
    rng: np.random.Generator,
    max_iter: int = KMEANS_MAX_ITER,
    tol: float = KMEANS_TOL,
):
    n = points.shape[0]
    if k >= n:
        labels = np.arange(n)
        return labels, 0.0

    # k-means++ seeding
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    closest = ((points - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            centers[j:] = points[rng.integers(n, size=k - j)]
            break
        probs = closest / total
        centers[j] = points[rng.choice(n, p=probs)]
        closest = np.minimum(closest, ((points - centers[j]) ** 2).sum(axis=1))

    labels = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        dists = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = dists.argmin(axis=1)
        moved = 0.0
        for j in range(k):
            mask = labels == j
            if not mask.any():
                # re-seed an empty cluster at the farthest point
                far = dists.min(axis=1).argmax()
                new_center = points[far]
                labels[far] = j
            else:
                new_center = points[mask].mean(axis=0)
            moved = max(moved, float(((new_center - centers[j]) ** 2).sum()))
            centers[j] = new_center
        if moved < tol * tol:
            break
    dists = ((points - centers[labels]) ** 2).sum(axis=1)
    return labels, float(dists.sum())


def _gap_choose_k(
    points: np.ndarray,
    rng: np.random.Generator,
    k_max: int,
    n_refs: int = DEFAULT_GAP_REFS,
):
    """Smallest k with Gap(k) >= Gap(k+1) - s_{k+1} (Tibshirani et al. rule).

    Reference datasets are drawn uniformly over the data's bounding box in
    its principal-component frame (the published method's recommended
    variant), which keeps elongated clusters from luring the statistic into
    oversplitting. Evaluated lazily: k stops growing as soon as the rule
    fires, which is the common case and keeps the per-window cost flat.
    """
    n = points.shape[0]
    center = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - center, full_matrices=False)
    rotated = (points - center) @ vt.T
    lo = rotated.min(axis=0)
    span = rotated.max(axis=0) - lo

    def gap_at(k):
        labels, wk = _kmeans(points, k, rng, n_init=4)
        ref_logs = np.empty(n_refs)
        for b in range(n_refs):
            ref = (lo + rng.random((n, lo.shape[0])) * span) @ vt + center
            _, wk_ref = _kmeans(ref, k, rng, max_iter=20)
            ref_logs[b] = math.log(max(wk_ref, 1e-12))
        gap = ref_logs.mean() - math.log(max(wk, 1e-12))
        sk = ref_logs.std() * math.sqrt(1.0 + 1.0 / n_refs)
        return gap, sk, labels

    gap_k, _, labels_k = gap_at(1)
    for k in range(1, k_max):
        gap_next, sk_next, labels_next = gap_at(k + 1)
        if gap_k >= gap_next - sk_next:
            return k, labels_k
        gap_k, labels_k = gap_next, labels_next
    return k_max, labels_k


def partition_groups(
    summaries: Sequence[ContextSummary],
    metric: MetricModel,
    rng: np.random.Generator,
    k_max: Optional[int] = None,
    n_refs: int = DEFAULT_GAP_REFS,
) -> list:
    """Cluster same-dimensionality summaries into potential sharing groups.

    K-means runs in the metric-whitened space (so Euclidean distance there is
    the Mahalanobis distance); k is chosen by the gap statistic against
    uniform reference draws over the whitened data's bounding box.
    """
    n = len(summaries)
    if n < 2:
        return [PotentialSharingGroup(0, list(summaries))]

    vectors = _summary_matrix(summaries)
    whitened = vectors @ metric.whitener()

    spread = float(np.ptp(whitened, axis=0).max()) if n else 0.0
    if spread < 1e-9:
        return [PotentialSharingGroup(0, list(summaries))]

    cap = min(10, n - 1) if k_max is None else min(k_max, n - 1)
    cap = max(cap, 1)
    _, labels = _gap_choose_k(whitened, rng, cap, n_refs=n_refs)

    groups = []
    for j in sorted(set(labels.tolist())):
        members = [summaries[i] for i in range(n) if labels[i] == j]
        groups.append(PotentialSharingGroup(len(groups), members))
    return groups


# ---------------------------------------------------------------- sampling

@dataclass
class GramMatrix:
    values: np.ndarray   # symmetric, zero diagonal, nonnegative
    member_ids: list


def build_gram(group: PotentialSharingGroup, metric: MetricModel) -> GramMatrix:
    members = group.members
    g = len(members)
    m = np.zeros((g, g))
    for i in range(g):
        for j in range(i + 1, g):
            d = metric.distance(members[i].mean_vector, members[j].mean_vector)
            m[i, j] = d
            m[j, i] = d
    return GramMatrix(values=m, member_ids=[s.agent_id for s in members])


@dataclass
class PairProbabilityTable:
    """Boltzmann distribution over the unordered agent pairs of one group.

    ``probabilities`` is the normalized table (sums to one over unordered
    pairs); ``weights`` keeps the raw Boltzmann factors exp(-M/tau), which are
    what the without-replacement selection walk uses as per-pair admission
    probabilities (see the decisions around Algorithm-scale sharing).
    """

    member_ids: list
    probabilities: np.ndarray
    weights: np.ndarray
    temperature: float

    def pair_probability(self, i: int, j: int) -> float:
        return float(self.probabilities[i, j])


def sampling_distribution(
    gram: GramMatrix,
    temperature: float = DEFAULT_TEMPERATURE,
    literal_sign: bool = False,
) -> PairProbabilityTable:
    """Normalized Boltzmann table over unordered pairs of one group.

    Similar pairs (small distance) get the larger probability; the
    ``literal_sign`` flag flips the exponent to reproduce the published
    formula, which favors dissimilar pairs, for comparison runs.
    """
    g = len(gram.member_ids)
    if g < 2:
        raise ValueError("sampling distribution needs a group of at least 2")
    sign = 1.0 if literal_sign else -1.0
    weights = np.exp(sign * gram.values / temperature)
    np.fill_diagonal(weights, 0.0)
    total = np.triu(weights, 1).sum()
    probs = weights / total if total > 0 else weights.copy()
    np.fill_diagonal(probs, 0.0)
    return PairProbabilityTable(
        member_ids=list(gram.member_ids),
        probabilities=probs,
        weights=weights,
        temperature=temperature,
    )


@dataclass
class SharingMap:
    groups: dict = field(default_factory=dict)  # agent_id -> frozenset of partners

    def partners(self, agent_id: int) -> frozenset:
        return self.groups.get(agent_id, frozenset())

    def edge_list(self) -> list:
        edges = set()
        for a, partners in self.groups.items():
            for b in partners:
                edges.add((min(a, b), max(a, b)))
        return sorted(edges)

    def validate(self) -> None:
        """Check the map invariants: irreflexive, symmetric, disjoint groups."""
        seen_group_of = {}
        for a, partners in self.groups.items():
            if a in partners:
                raise AssertionError(f"agent {a} is its own sharing partner")
            for b in partners:
                if a not in self.groups.get(b, frozenset()):
                    raise AssertionError(f"asymmetric sharing: {b} in psi({a}) but not vice versa")
            if partners:
                group = frozenset(partners | {a})
                for member in group:
                    if member in seen_group_of and seen_group_of[member] != group:
                        raise AssertionError(f"agent {member} appears in two sharing groups")
                    seen_group_of[member] = group


def _closure(agent_ids: Iterable[int], edges: Iterable[tuple]) -> SharingMap:
    """Union-find over sharing edges; each component becomes one sharing group."""
    parent = {a: a for a in agent_ids}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb

    components: dict = {}
    for a in parent:
        components.setdefault(find(a), set()).add(a)

    groups = {}
    for comp in components.values():
        if len(comp) < 2:
            for a in comp:
                groups[a] = frozenset()
        else:
            for a in comp:
                groups[a] = frozenset(comp - {a})
    return SharingMap(groups=groups)


def admission_probabilities(gram: GramMatrix, temperature: float) -> np.ndarray:
    """Per-pair Boltzmann admission weights exp(-M[a,b] / tau).

    These are the raw Boltzmann factors of the pair distances: 1 for
    identical contexts, vanishing for distant ones. Using them directly as
    per-pair admission probabilities makes expected sharing-group size scale
    with the number of genuinely similar agents in the pool, rather than
    pinning it near two pairs per cluster the way globally normalized
    probabilities do.
    """
    probs = np.exp(-gram.values / temperature)
    np.fill_diagonal(probs, 0.0)
    return probs


def select_sharing_partners(
    groups: Sequence[PotentialSharingGroup],
    metric: MetricModel,
    temperature: float,
    rng: np.random.Generator,
    literal_sign: bool = False,
) -> SharingMap:
    """Stochastically assemble sharing groups from the potential groups.

    Within each potential group, agents are visited in a seeded random order;
    each remaining candidate b is admitted to the visitor's group with the
    group-relative Boltzmann weight (see ``admission_probabilities``) and
    removed from the candidate pool, so no agent is sampled twice. Under the
    ``literal_sign`` flag the admission probability is the normalized
    published table instead. The resulting edges are closed symmetrically.
    """
    all_ids = [s.agent_id for g in groups for s in g.members]
    edges = []
    for group in groups:
        g = len(group.members)
        if g < 2:
            continue
        gram = build_gram(group, metric)
        if literal_sign:
            trial_prob = sampling_distribution(gram, temperature, literal_sign=True).probabilities
        else:
            trial_prob = admission_probabilities(gram, temperature)
        order = rng.permutation(g)
        pool = set(range(g))
        for ai in order:
            for bi in range(g):
                if bi == ai or bi not in pool:
                    continue
                p = min(float(trial_prob[ai, bi]), 1.0)
                if rng.random() < p:
                    edges.append((gram.member_ids[ai], gram.member_ids[bi]))
                    pool.discard(bi)
    return _closure(all_ids, edges)


# ---------------------------------------------------------------- pipeline

def compute_sharing_map(
    summaries: Sequence[ContextSummary],
    per_step_features: Optional[dict],
    temperature: float,
    rng: np.random.Generator,
    shrinkage: float = DEFAULT_SHRINKAGE,
    k_max: Optional[int] = None,
    n_refs: int = DEFAULT_GAP_REFS,
    literal_sign: bool = False,
):
    """One supervisor's full window pipeline over its subordinates' summaries.

    Summaries are split by neighbor count (different action/feature spaces are
    never compared), each split gets its own metric, clustering, and partner
    selection, and the per-split maps are merged. Returns the merged
    SharingMap plus a log record (split sizes, chosen k, group sizes, edges,
    wall-clock microseconds).
    """
    t0 = time.perf_counter()
    by_nc: dict = {}
    for s in summaries:
        by_nc.setdefault(s.neighbor_count, []).append(s)

    merged = SharingMap(groups={s.agent_id: frozenset() for s in summaries})
    splits_log = []
    all_edges = []
    for nc in sorted(by_nc):
        split = by_nc[nc]
        if len(split) < 2:
            splits_log.append({"neighbor_count": nc, "n": len(split), "k": 1, "group_sizes": [len(split)]})
            continue
        per_step = None
        if per_step_features:
            rows = [per_step_features[s.agent_id] for s in split if s.agent_id in per_step_features]
            if rows:
                per_step = np.vstack(rows)
        try:
            metric = fit_metric(split, per_step, shrinkage)
        except DegenerateMetricError:
            metric = MetricModel.euclidean(split[0].dimension)
        groups = partition_groups(split, metric, rng, k_max=k_max, n_refs=n_refs)
        split_map = select_sharing_partners(groups, metric, temperature, rng, literal_sign)
        for a, partners in split_map.groups.items():
            if partners:
                merged.groups[a] = partners
        all_edges.extend(split_map.edge_list())
        splits_log.append(
            {
                "neighbor_count": nc,
                "n": len(split),
                "k": len(groups),
                "group_sizes": [len(g.members) for g in groups],
            }
        )
    micros = int((time.perf_counter() - t0) * 1e6)
    record = {"splits": splits_log, "edges": sorted(set(all_edges)), "micros": micros}
    return merged, record
