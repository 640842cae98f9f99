"""Greedy agglomerative merging and merge-tree cutting."""

import heapq
import logging
from dataclasses import dataclass, field

import numpy as np

from .config import CriterionConfig
from .criteria import make_state
from .data import DatasetError, MergeEvent, MergeTree, WordMap

log = logging.getLogger(__name__)

TIE_TOL = 1e-12
POLICIES = ("lazy_heap", "full_rescan")


class MergeAborted(RuntimeError):
    """A criterion failed mid-run; ``tree`` holds the merges made so far."""

    def __init__(self, message, tree):
        super().__init__(message)
        self.tree = tree


@dataclass
class EngineConfig:
    criterion: str = "aib"
    min_size: int = 1
    record_losses: bool = True
    policy: str = "lazy_heap"
    criterion_config: CriterionConfig = field(default_factory=CriterionConfig)

    def to_dict(self):
        return {"criterion": self.criterion, "min_size": self.min_size,
                "policy": self.policy, **self.criterion_config.to_dict()}


def _all_pairs(state):
    live = state.live
    nodes = np.array(live, dtype=np.int64)
    iu, ju = np.triu_indices(len(live), k=1)
    slots = np.array([state.slot_of[v] for v in live], dtype=np.intp)
    return nodes[iu], nodes[ju], slots[iu], slots[ju]


def _select(losses):
    """Index of the argmin; near-ties go to the earliest pair.

    Callers pass pairs in lexicographic (a, b) order.
    """
    if np.any(np.isnan(losses)):
        raise FloatingPointError("criterion produced NaN loss")
    m = losses.min()
    return int(np.flatnonzero(losses <= m + TIE_TOL)[0])


class _Scanner:
    """Recomputes every live pair at every level."""

    def __init__(self, state):
        self.state = state

    def next_pair(self):
        a, b, sa, sb = _all_pairs(self.state)
        losses = self.state.pair_losses(sa, sb)
        k = _select(losses)
        return int(a[k]), int(b[k]), float(losses[k])

    def merged(self, new_id):
        pass


class _LazyHeap:
    """Heap of pair losses; entries touching a merged node are dropped lazily.

    Only valid for decomposable criteria, where untouched pair losses do
    not change across merges.
    """

    def __init__(self, state):
        self.state = state
        a, b, sa, sb = _all_pairs(state)
        losses = state.pair_losses(sa, sb)
        self.heap = list(zip(losses.tolist(), a.tolist(), b.tolist()))
        heapq.heapify(self.heap)

    def _valid(self, entry):
        return self.state.is_live(entry[1]) and self.state.is_live(entry[2])

    def next_pair(self):
        heap = self.heap
        while heap and not self._valid(heap[0]):
            heapq.heappop(heap)
        best = heapq.heappop(heap)
        if best[0] != best[0]:
            raise FloatingPointError("criterion produced NaN loss")
        tied = [best]
        while heap and heap[0][0] <= best[0] + TIE_TOL:
            entry = heapq.heappop(heap)
            if self._valid(entry):
                tied.append(entry)
        chosen = min(tied, key=lambda e: (e[1], e[2]))
        for entry in tied:
            if entry is not chosen:
                heapq.heappush(heap, entry)
        return chosen[1], chosen[2], chosen[0]

    def merged(self, new_id):
        state = self.state
        others = [v for v in state.live if v != new_id]
        if not others:
            return
        sa = np.array([state.slot_of[v] for v in others], dtype=np.intp)
        sb = np.full(len(others), state.slot_of[new_id], dtype=np.intp)
        losses = state.pair_losses(sa, sb)
        for loss, v in zip(losses.tolist(), others):
            heapq.heappush(self.heap, (loss, v, new_id))


def build_merge_tree(ds, cfg=None, **overrides):
    """Greedily merge word pairs of ``ds`` down to ``cfg.min_size`` words."""
    cfg = cfg if cfg is not None else EngineConfig()
    for key, value in overrides.items():
        setattr(cfg, key, value)
    t0 = ds.t
    if cfg.policy not in POLICIES:
        raise ValueError(f"unknown cache policy {cfg.policy!r}")
    if not 1 <= cfg.min_size < t0:
        raise ValueError(f"min_size must be in [1, {t0 - 1}], got {cfg.min_size}")
    if not np.array_equal(ds.word_ids, np.arange(t0)):
        raise DatasetError("merge trees must start from original word ids 0..t-1")
    tree = MergeTree(t0)
    try:
        state = make_state(cfg.criterion, ds, cfg.criterion_config)
        if cfg.policy == "lazy_heap" and state.decomposable:
            scanner = _LazyHeap(state)
        else:
            scanner = _Scanner(state)
        for k in range(t0 - cfg.min_size):
            a, b, loss = scanner.next_pair()
            new_id = t0 + k
            state.merge(a, b, new_id)
            scanner.merged(new_id)
            tree.merges.append(MergeEvent(t0 - k, a, b, new_id,
                                          loss if cfg.record_losses else 0.0))
            log.debug("level %d: merge %d + %d -> %d (loss %.6g)", t0 - k, a, b, new_id, loss)
    except Exception as e:
        raise MergeAborted(f"{cfg.criterion} failed at level {t0 - len(tree.merges)}: {e}",
                           tree) from e
    return tree


def cut_tree(tree, k):
    """Word map with ``k`` clusters from replaying the first t0 - k merges.

    Clusters are numbered by their smallest original word id.
    """
    t0 = tree.initial_size
    if not (isinstance(k, (int, np.integer)) and max(1, tree.min_size) <= k <= t0):
        raise ValueError(f"k out of range: need {tree.min_size} <= k <= {t0}, got {k}")
    members = {i: [i] for i in range(t0)}
    for ev in tree.merges[:t0 - k]:
        members[ev.new_id] = members.pop(ev.a) + members.pop(ev.b)
    clusters = sorted(members.values(), key=min)
    assignment = np.empty(t0, dtype=np.int64)
    for g, words in enumerate(clusters):
        assignment[words] = g
    return WordMap(assignment)
