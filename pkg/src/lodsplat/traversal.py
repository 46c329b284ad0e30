"""Streaming LoD selection over partitioned subtrees.

The selection walks each subtree's DFS records linearly.  Per record there are
four outcomes: culled (jump past the whole in-subtree branch via the record's
``remaining`` count), selected or leaf (emit, jump the same way), boundary
(push the record's child-subtree range onto the shared queue and step on), or
plain interior (step on).  Workers repeatedly pull subtree ids off the queue,
one subtree at a time.

The produced cut must match the recursive reference walk bit for bit, for any
worker count.  Two things guarantee that here: culling and projected sizes
come from the same vectorized kernel the reference walk uses, and the worker
pool runs in virtual time (a deterministic event loop, one time unit per
record examined) rather than on host threads, which the interpreter lock
would serialize anyway.  Scheduling therefore changes only how work is split
across workers, never what is selected.
"""

from __future__ import annotations

import heapq
import statistics
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .scene import Camera, _view_arrays
from .sltree import SLTree

__all__ = [
    "Cut",
    "WorkloadStats",
    "view_decisions",
    "traverse_subtree",
    "traverse",
    "traverse_static",
    "compute_weights",
    "workload_report",
]


@dataclass
class Cut:
    """Selected nids, strictly increasing; an antichain of the source tree."""

    selected: list[int]
    weights: dict[int, float] | None = None


@dataclass
class WorkloadStats:
    per_worker_visited: list[int]
    subtrees_processed: list[int]
    nodes_touched_total: int
    nodes_in_tree: int

    @property
    def mean(self) -> float:
        return statistics.fmean(self.per_worker_visited)

    @property
    def stddev(self) -> float:
        return statistics.pstdev(self.per_worker_visited)


def view_decisions(slt: SLTree, camera: Camera) -> tuple[list[bool], list[float]]:
    """Per-nid culling flags and projected sizes as plain lists.

    One vectorized pass over every node; scans then index into the lists.
    This is the identical arithmetic the recursive reference walk performs,
    which is what makes cut equivalence exact rather than approximate.
    """
    outside, proj, _ = _view_arrays(slt._means, slt._max_scale, slt._aabb_lo, slt._aabb_hi, camera)
    return outside.tolist(), proj.tolist()


def _scan(
    slt: SLTree,
    sid: int,
    outside,
    proj,
    epsilon: float,
    emits: list[int],
    ranges: list[tuple[int, int]],
) -> int:
    """Linear record scan; appends selected nids and child sid ranges.

    ``outside`` and ``proj`` may be any nid-indexed containers.  Returns the
    number of records examined (skipped slots are never touched).
    """
    nids = slt._rec_nid[sid]
    rem = slt._rec_remaining[sid]
    leaf = slt._rec_leaf[sid]
    boundary = slt._rec_boundary[sid]
    first = slt._rec_child_first[sid]
    count = slt._rec_child_count[sid]
    size = len(nids)
    i = 0
    visited = 0
    while i < size:
        visited += 1
        nid = nids[i]
        if outside[nid]:
            i += rem[i] + 1
        elif proj[nid] <= epsilon or leaf[i]:
            emits.append(nid)
            i += rem[i] + 1
        elif boundary[i]:
            ranges.append((first[i], count[i]))
            i += 1
        else:
            i += 1
    return visited


def traverse_subtree(slt: SLTree, sid: int, camera: Camera, epsilon: float, emit, enqueue) -> int:
    """Scan one subtree, feeding ``emit(nid)`` and ``enqueue(sid)`` sinks."""
    if not epsilon > 0.0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    if not 0 <= sid < slt.subtree_count:
        raise ParameterError(f"sid {sid} out of range")
    nids = np.asarray(slt._rec_nid[sid], dtype=np.intp)
    out_arr, proj_arr, _ = _view_arrays(
        slt._means[nids], slt._max_scale[nids], slt._aabb_lo[nids], slt._aabb_hi[nids], camera
    )
    outside = dict(zip(slt._rec_nid[sid], out_arr.tolist()))
    proj = dict(zip(slt._rec_nid[sid], proj_arr.tolist()))
    emits: list[int] = []
    ranges: list[tuple[int, int]] = []
    visited = _scan(slt, sid, outside, proj, epsilon, emits, ranges)
    for nid in emits:
        emit(nid)
    for lo, cnt in ranges:
        for child in range(lo, lo + cnt):
            enqueue(child)
    return visited


def _finish_cut(emits: list[int]) -> list[int]:
    emits.sort()
    for a, b in zip(emits, emits[1:]):
        if a == b:
            raise ParameterError(f"node {a} selected twice; subtree structure is corrupt")
    return emits


def traverse(slt: SLTree, camera: Camera, epsilon: float, workers: int = 1) -> tuple[Cut, WorkloadStats]:
    """Worker pool over a shared FIFO subtree queue.

    Virtual-time scheduling: each scan costs as many time units as records it
    examines, completions are processed in time order (worker index breaks
    ties), and freed workers grab the queue head lowest-index-first.  Fully
    deterministic for a given worker count; the cut is identical for all of
    them.
    """
    if not epsilon > 0.0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    if workers < 1:
        raise ParameterError(f"workers must be >= 1, got {workers}")
    outside, proj = view_decisions(slt, camera)
    queue: deque[int] = deque([slt.root_sid])
    idle = list(range(workers))
    pending: list[tuple[int, int, list[tuple[int, int]]]] = []  # (t_done, worker, ranges)
    now = 0
    visited_by_worker = [0] * workers
    subtrees_by_worker = [0] * workers
    emits: list[int] = []
    while queue or pending:
        while queue and idle:
            w = heapq.heappop(idle)
            sid = queue.popleft()
            ranges: list[tuple[int, int]] = []
            visited = _scan(slt, sid, outside, proj, epsilon, emits, ranges)
            visited_by_worker[w] += visited
            subtrees_by_worker[w] += 1
            heapq.heappush(pending, (now + visited, w, ranges))
        if not pending:
            break
        now, w, ranges = heapq.heappop(pending)
        for lo, cnt in ranges:
            queue.extend(range(lo, lo + cnt))
        heapq.heappush(idle, w)
    stats = WorkloadStats(visited_by_worker, subtrees_by_worker, sum(visited_by_worker), slt.node_count)
    return Cut(_finish_cut(emits)), stats


def traverse_static(slt: SLTree, camera: Camera, epsilon: float, workers: int = 1) -> tuple[Cut, WorkloadStats]:
    """Fixed assignment baseline: no shared queue, no work redistribution.

    Worker 0 scans the root subtree; the subtrees hanging off it are dealt
    round-robin and each worker then traverses its share to completion by
    itself.  Selects the exact same cut; only the per-worker split differs,
    which is the point of comparing it against the pooled scheduler.
    """
    if not epsilon > 0.0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    if workers < 1:
        raise ParameterError(f"workers must be >= 1, got {workers}")
    outside, proj = view_decisions(slt, camera)
    visited_by_worker = [0] * workers
    subtrees_by_worker = [0] * workers
    emits: list[int] = []
    top_ranges: list[tuple[int, int]] = []
    visited_by_worker[0] += _scan(slt, slt.root_sid, outside, proj, epsilon, emits, top_ranges)
    subtrees_by_worker[0] += 1
    queues: list[deque[int]] = [deque() for _ in range(workers)]
    tops = [sid for lo, cnt in top_ranges for sid in range(lo, lo + cnt)]
    for i, sid in enumerate(tops):
        queues[i % workers].append(sid)
    for w in range(workers):
        q = queues[w]
        while q:
            sid = q.popleft()
            ranges: list[tuple[int, int]] = []
            visited_by_worker[w] += _scan(slt, sid, outside, proj, epsilon, emits, ranges)
            subtrees_by_worker[w] += 1
            for lo, cnt in ranges:
                q.extend(range(lo, lo + cnt))
    stats = WorkloadStats(visited_by_worker, subtrees_by_worker, sum(visited_by_worker), slt.node_count)
    return Cut(_finish_cut(emits)), stats


def compute_weights(slt: SLTree, selected: list[int], camera: Camera, epsilon: float) -> dict[int, float]:
    """Opacity interpolation weights for a cut, in [0, 1].

    A selected node fades in as its parent's footprint approaches the
    threshold: w = (proj(parent) - eps) / (proj(parent) - proj(node)),
    clamped.  The root and selected tree leaves render at full weight, as
    does any node whose parent projects no larger than itself (nothing to
    interpolate against).
    """
    if not epsilon > 0.0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    _, proj, _ = _view_arrays(slt._means, slt._max_scale, slt._aabb_lo, slt._aabb_hi, camera)
    parents = _parents_by_nid(slt)
    leaves = [False] * slt.node_count
    for sid in range(slt.subtree_count):
        for i, nid in enumerate(slt._rec_nid[sid]):
            if slt._rec_leaf[sid][i]:
                leaves[nid] = True
    weights: dict[int, float] = {}
    for nid in selected:
        p = parents[nid]
        if p < 0 or leaves[nid]:
            weights[nid] = 1.0
            continue
        pp = float(proj[p])
        pn = float(proj[nid])
        denom = pp - pn
        if not np.isfinite(pp) or denom <= 0.0:
            weights[nid] = 1.0
        else:
            weights[nid] = min(1.0, max(0.0, (pp - epsilon) / denom))
    return weights


def _parents_by_nid(slt: SLTree) -> list[int]:
    """Recover per-node parents from DFS spans; -1 for the tree root."""
    cached = getattr(slt, "_parents_cache", None)
    if cached is not None:
        return cached
    parents = [-1] * slt.node_count
    for sid, st in enumerate(slt.subtrees):
        spans: list[tuple[int, int]] = []  # (end_slot, nid)
        base = st.parent_node if st.parent_node is not None else -1
        for slot, rec in enumerate(st.records):
            while spans and spans[-1][0] <= slot:
                spans.pop()
            parents[rec.nid] = spans[-1][1] if spans else base
            spans.append((slot + rec.remaining + 1, rec.nid))
    slt._parents_cache = parents
    return parents


def workload_report(stats: WorkloadStats) -> dict:
    """Balance summary: imbalance factor and touched fraction of the tree."""
    mean = stats.mean
    report = {
        "workers": len(stats.per_worker_visited),
        "mean": mean,
        "stddev": stats.stddev,
        "touched": stats.nodes_touched_total,
        "total": stats.nodes_in_tree,
        "per_worker": list(stats.per_worker_visited),
        "imbalance": (max(stats.per_worker_visited) / mean) if mean > 0 else 0.0,
        "touched_ratio": stats.nodes_touched_total / stats.nodes_in_tree,
    }
    return report
