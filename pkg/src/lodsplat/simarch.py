"""Cycle-approximate model of a streaming LoD-search + splatting accelerator.

Two blocks are modeled.  The traversal block: a bank of LT units each
retiring one subtree record per cycle out of a set-associative subtree cache,
fed by a small FIFO subtree queue whose entries are filled from DRAM by a
multi-channel fill engine.  The splatting block: projection units, a per-tile
sorter, and SP units retiring one (Gaussian, 2x2 pixel group) evaluation per
cycle.  Functional results are delegated to the software modules (the cut
comes from the same decision kernel, the image from the same blender), so the
simulator can never drift from them; what it adds is timing, traffic, and
energy accounting.

Cycle semantics of the traversal loop, in phase order within each cycle:
fills that complete become dispatchable; the fill engine issues queued,
still-unloaded subtrees in FIFO order (one per free channel) into a cache way
that is empty or finished, round-robin per set, stalling on a set with
neither; idle LT units grab the queue head once loaded; every busy unit then
processes one record (evaluate, or keep flushing child-subtree enqueues that
found the queue full).  A unit's dispatch and its first record evaluation
share a cycle, so a lone subtree of n records costs fill latency + n cycles.

Traffic rules: each cache fill streams the entry's full tau_s * 40 bytes and
each emitted nid streams 4 write-back bytes (DRAM, streaming class); record
reads, queue pushes/pops, and output-buffer appends count as SRAM bytes.
Gaussian payloads stream 56 bytes on first touch and hit SRAM afterward.
Random-access DRAM traffic is structurally impossible here and reported as
zero.  Energy is relative, weighted per byte at 1 : 25/3 : 25 for
SRAM : streaming DRAM : random DRAM.
"""

from __future__ import annotations

import math
import heapq
from collections import deque
from dataclasses import dataclass, field

from .errors import ConfigError, ParameterError
from .scene import Camera
from .sltree import SLTree
from .splat import Image, bin_gaussians, blend_pipeline, project_selection
from .traversal import Cut, view_decisions

__all__ = [
    "ArchConfig",
    "SimReport",
    "simulate_lod",
    "simulate_splat",
    "simulate_end_to_end",
    "exhaustive_baseline",
]

SID_BYTES = 4
EMIT_BYTES = 4


def _default_weights() -> dict:
    return {"sram_access": 1.0, "dram_streaming": 25.0 / 3.0, "dram_random": 25.0}


@dataclass
class ArchConfig:
    """Hardware geometry and rates; defaults follow the modeled design point."""

    lt_units: int = 4
    clock_hz: float = 1e9
    cache_ways: int = 4
    cache_sets: int = 128
    cache_entry_nodes: int = 32
    output_buffer_bytes: int = 8192
    subtree_queue_bytes: int = 48
    sp_units: int = 4
    projection_units: int = 4
    sort_units: int = 4
    global_buffer_bytes: int = 262144
    dram_channels: int = 4
    dram_bytes_per_cycle: float = 16.0  # per channel
    node_record_bytes: int = 40
    gaussian_record_bytes: int = 56
    energy_weights: dict = field(default_factory=_default_weights)

    def __post_init__(self):
        counts = {
            "lt_units": self.lt_units,
            "cache_ways": self.cache_ways,
            "cache_sets": self.cache_sets,
            "cache_entry_nodes": self.cache_entry_nodes,
            "output_buffer_bytes": self.output_buffer_bytes,
            "subtree_queue_bytes": self.subtree_queue_bytes,
            "sp_units": self.sp_units,
            "projection_units": self.projection_units,
            "sort_units": self.sort_units,
            "global_buffer_bytes": self.global_buffer_bytes,
            "dram_channels": self.dram_channels,
            "node_record_bytes": self.node_record_bytes,
            "gaussian_record_bytes": self.gaussian_record_bytes,
        }
        for name, value in counts.items():
            if int(value) != value or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.clock_hz <= 0 or self.dram_bytes_per_cycle <= 0:
            raise ConfigError("clock_hz and dram_bytes_per_cycle must be positive")
        if self.subtree_queue_bytes < SID_BYTES:
            raise ConfigError("subtree queue cannot hold even one sid")
        w = self.energy_weights
        expected = {"sram_access", "dram_streaming", "dram_random"}
        if set(w) != expected:
            raise ConfigError(f"energy_weights keys must be {sorted(expected)}")
        sram, streaming, random_ = w["sram_access"], w["dram_streaming"], w["dram_random"]
        if sram <= 0 or streaming <= 0 or random_ <= 0:
            raise ConfigError("energy weights must be positive")
        # the model is only meaningful at the stated energy ratios
        if not math.isclose(random_ / sram, 25.0, rel_tol=1e-9):
            raise ConfigError(f"dram_random:sram_access must be 25:1, got {random_ / sram}")
        if not math.isclose(random_ / streaming, 3.0, rel_tol=1e-9):
            raise ConfigError(f"dram_random:dram_streaming must be 3:1, got {random_ / streaming}")

    @property
    def queue_slots(self) -> int:
        return self.subtree_queue_bytes // SID_BYTES

    def to_json(self) -> dict:
        return {
            "lt_units": self.lt_units,
            "clock_hz": self.clock_hz,
            "cache_ways": self.cache_ways,
            "cache_sets": self.cache_sets,
            "cache_entry_nodes": self.cache_entry_nodes,
            "output_buffer_bytes": self.output_buffer_bytes,
            "subtree_queue_bytes": self.subtree_queue_bytes,
            "sp_units": self.sp_units,
            "projection_units": self.projection_units,
            "sort_units": self.sort_units,
            "global_buffer_bytes": self.global_buffer_bytes,
            "dram_channels": self.dram_channels,
            "dram_bytes_per_cycle": self.dram_bytes_per_cycle,
            "node_record_bytes": self.node_record_bytes,
            "gaussian_record_bytes": self.gaussian_record_bytes,
            "energy_weights": dict(self.energy_weights),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ArchConfig":
        if not isinstance(doc, dict):
            raise ConfigError("arch config must be a JSON object")
        base = cls().to_json()
        unknown = set(doc) - set(base)
        if unknown:
            raise ConfigError(f"unknown arch config keys: {sorted(unknown)}")
        if "energy_weights" in doc:
            weights = dict(base["energy_weights"])
            weights.update(doc["energy_weights"])
            doc = dict(doc)
            doc["energy_weights"] = weights
        base.update(doc)
        return cls(**base)


@dataclass
class SimReport:
    """Timing, traffic, and relative-energy accounting for one simulated run."""

    lod_cycles: int = 0
    splat_cycles: int = 0
    total_cycles: int = 0
    proj_cycles: int = 0
    sort_cycles: int = 0
    sp_stage_cycles: int = 0
    lt_busy: list[int] = field(default_factory=list)
    sp_busy: list[int] = field(default_factory=list)
    cache_fills: int = 0
    cache_fill_stalls: int = 0
    queue_overflow_waits: int = 0
    fill_counts: dict[int, int] = field(default_factory=dict)
    dram_bytes_streaming: int = 0
    dram_bytes_random: int = 0
    sram_accesses: int = 0
    nodes_visited: int = 0
    gaussians_rendered: int = 0
    divergence: dict = field(default_factory=dict)
    energy_weights: dict = field(default_factory=_default_weights)

    def energy(self) -> dict:
        w = self.energy_weights
        parts = {
            "sram": self.sram_accesses * w["sram_access"],
            "dram_streaming": self.dram_bytes_streaming * w["dram_streaming"],
            "dram_random": self.dram_bytes_random * w["dram_random"],
        }
        parts["total"] = parts["sram"] + parts["dram_streaming"] + parts["dram_random"]
        return parts

    def unit_utilization(self) -> dict:
        out = {}
        if self.lt_busy and self.lod_cycles > 0:
            out["lt"] = [busy / self.lod_cycles for busy in self.lt_busy]
        if self.sp_busy and self.sp_stage_cycles > 0:
            out["sp"] = [busy / self.sp_stage_cycles for busy in self.sp_busy]
        return out

    def to_json(self) -> dict:
        return {
            "lod_cycles": self.lod_cycles,
            "splat_cycles": self.splat_cycles,
            "total_cycles": self.total_cycles,
            "proj_cycles": self.proj_cycles,
            "sort_cycles": self.sort_cycles,
            "sp_stage_cycles": self.sp_stage_cycles,
            "lt_busy": list(self.lt_busy),
            "sp_busy": list(self.sp_busy),
            "unit_utilization": self.unit_utilization(),
            "cache_fills": self.cache_fills,
            "cache_fill_stalls": self.cache_fill_stalls,
            "queue_overflow_waits": self.queue_overflow_waits,
            "dram_bytes_streaming": self.dram_bytes_streaming,
            "dram_bytes_random": self.dram_bytes_random,
            "sram_accesses": self.sram_accesses,
            "energy": self.energy(),
            "nodes_visited": self.nodes_visited,
            "gaussians_rendered": self.gaussians_rendered,
            "divergence": dict(self.divergence),
        }

    CSV_FIELDS = [
        "lod_cycles",
        "splat_cycles",
        "total_cycles",
        "cache_fills",
        "cache_fill_stalls",
        "queue_overflow_waits",
        "dram_bytes_streaming",
        "dram_bytes_random",
        "sram_accesses",
        "energy_total",
        "nodes_visited",
        "gaussians_rendered",
        "mixed_groups",
        "simd_utilization",
    ]

    def csv_row(self) -> list:
        energy = self.energy()
        return [
            self.lod_cycles,
            self.splat_cycles,
            self.total_cycles,
            self.cache_fills,
            self.cache_fill_stalls,
            self.queue_overflow_waits,
            self.dram_bytes_streaming,
            self.dram_bytes_random,
            self.sram_accesses,
            energy["total"],
            self.nodes_visited,
            self.gaussians_rendered,
            self.divergence.get("mixed", ""),
            self.divergence.get("simd_utilization", ""),
        ]


# ---------------------------------------------------------------------------
# traversal block


class _QueueEntry:
    __slots__ = ("sid", "state")  # state: "unloaded" | "loading" | "ready"

    def __init__(self, sid: int):
        self.sid = sid
        self.state = "unloaded"


class _Way:
    __slots__ = ("sid", "state")  # state: "empty" | "loading" | "resident" | "finished"

    def __init__(self):
        self.sid = None
        self.state = "empty"


class _LtUnit:
    __slots__ = ("sid", "slot", "size", "pending")

    def __init__(self):
        self.sid = None
        self.slot = 0
        self.size = 0
        self.pending: list[int] = []

    @property
    def idle(self) -> bool:
        return self.sid is None


def fill_latency(cfg: ArchConfig, tau_s: int) -> int:
    return math.ceil(tau_s * cfg.node_record_bytes / cfg.dram_bytes_per_cycle)


def simulate_lod(slt: SLTree, camera: Camera, epsilon: float, cfg: ArchConfig) -> tuple[Cut, SimReport]:
    """Cycle loop for the traversal block; returns the cut and its report.

    The cut is byte-for-byte the software traversal's cut: record decisions
    come from the same kernel, and scheduling can only change who does the
    work, never what is selected.
    """
    if not epsilon > 0.0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    if cfg.cache_entry_nodes < slt.tau_s:
        raise ConfigError(
            f"cache entries hold {cfg.cache_entry_nodes} records but subtrees have up to {slt.tau_s}"
        )
    outside, proj = view_decisions(slt, camera)
    latency = fill_latency(cfg, slt.tau_s)
    entry_bytes = slt.tau_s * cfg.node_record_bytes
    report = SimReport(energy_weights=dict(cfg.energy_weights))

    queue: deque[_QueueEntry] = deque([_QueueEntry(slt.root_sid)])
    report.sram_accesses += SID_BYTES  # seeding the queue
    sets = [[_Way() for _ in range(cfg.cache_ways)] for _ in range(cfg.cache_sets)]
    rr = [0] * cfg.cache_sets
    entry_of: dict[int, tuple[int, int]] = {}
    inflight: list[tuple[int, int]] = []  # (complete_cycle, sid), kept sorted by heap
    units = [_LtUnit() for _ in range(cfg.lt_units)]
    busy = [0] * cfg.lt_units
    emits: list[int] = []
    queue_entry_of: dict[int, _QueueEntry] = {queue[0].sid: queue[0]}

    cycle = 0
    while queue or inflight or any(not u.idle for u in units):
        cycle += 1
        progress = False

        # fills completing this cycle
        while inflight and inflight[0][0] <= cycle:
            _, sid = heapq.heappop(inflight)
            set_idx, way_idx = entry_of[sid]
            sets[set_idx][way_idx].state = "resident"
            queue_entry_of[sid].state = "ready"
            progress = True

        # issue fills, FIFO order, one per free channel, stall on a set with
        # no finished or empty way
        free_channels = cfg.dram_channels - len(inflight)
        for qe in queue:
            if free_channels == 0:
                break
            if qe.state != "unloaded":
                continue
            set_idx = qe.sid % cfg.cache_sets
            ways = sets[set_idx]
            chosen = -1
            for k in range(cfg.cache_ways):
                w = (rr[set_idx] + k) % cfg.cache_ways
                if ways[w].state in ("empty", "finished"):
                    chosen = w
                    break
            if chosen < 0:
                report.cache_fill_stalls += 1
                break  # in-order fill engine: head-of-line block
            if ways[chosen].sid is not None:
                del entry_of[ways[chosen].sid]
            ways[chosen].sid = qe.sid
            ways[chosen].state = "loading"
            rr[set_idx] = (chosen + 1) % cfg.cache_ways
            entry_of[qe.sid] = (set_idx, chosen)
            qe.state = "loading"
            heapq.heappush(inflight, (cycle + latency, qe.sid))
            report.cache_fills += 1
            report.fill_counts[qe.sid] = report.fill_counts.get(qe.sid, 0) + 1
            report.dram_bytes_streaming += entry_bytes
            free_channels -= 1
            progress = True

        # idle units take the queue head once its subtree is cache-resident
        for u in units:
            if not u.idle:
                continue
            if not queue or queue[0].state != "ready":
                break
            qe = queue.popleft()
            del queue_entry_of[qe.sid]
            report.sram_accesses += SID_BYTES
            set_idx, way_idx = entry_of[qe.sid]
            if sets[set_idx][way_idx].state != "resident":
                raise ConfigError(f"dispatching sid {qe.sid} without a resident cache entry")
            u.sid = qe.sid
            u.slot = 0
            u.size = len(slt._rec_nid[qe.sid])
            progress = True

        # each busy unit retires one record (or keeps flushing enqueues)
        for ui, u in enumerate(units):
            if u.idle:
                continue
            busy[ui] += 1
            if u.pending:
                pushed = False
                while u.pending and len(queue) < cfg.queue_slots:
                    child = u.pending.pop(0)
                    qe = _QueueEntry(child)
                    queue.append(qe)
                    queue_entry_of[child] = qe
                    report.sram_accesses += SID_BYTES
                    pushed = True
                if pushed:
                    progress = True
                else:
                    report.queue_overflow_waits += 1
                if not u.pending:
                    u.slot += 1
            else:
                sid = u.sid
                slot = u.slot
                nid = slt._rec_nid[sid][slot]
                report.nodes_visited += 1
                report.sram_accesses += cfg.node_record_bytes
                progress = True
                if outside[nid]:
                    u.slot = slot + slt._rec_remaining[sid][slot] + 1
                elif proj[nid] <= epsilon or slt._rec_leaf[sid][slot]:
                    emits.append(nid)
                    report.sram_accesses += EMIT_BYTES
                    u.slot = slot + slt._rec_remaining[sid][slot] + 1
                elif slt._rec_boundary[sid][slot]:
                    first = slt._rec_child_first[sid][slot]
                    children = list(range(first, first + slt._rec_child_count[sid][slot]))
                    while children and len(queue) < cfg.queue_slots:
                        child = children.pop(0)
                        qe = _QueueEntry(child)
                        queue.append(qe)
                        queue_entry_of[child] = qe
                        report.sram_accesses += SID_BYTES
                    if children:
                        u.pending = children
                    else:
                        u.slot = slot + 1
                else:
                    u.slot = slot + 1
            if not u.pending and u.slot >= u.size:
                set_idx, way_idx = entry_of[u.sid]
                sets[set_idx][way_idx].state = "finished"
                u.sid = None

        if not progress and not inflight:
            # every unit is blocked on a full queue and units are the only
            # consumers; a larger subtree_queue_bytes is the way out
            raise ConfigError(
                f"traversal deadlocked at cycle {cycle}: all LT units are waiting to enqueue "
                f"child subtrees but the {cfg.queue_slots}-slot queue is full; "
                f"raise subtree_queue_bytes (4 bytes per slot, {4 * len(slt._rec_nid)} is always safe here)"
            )

    report.lod_cycles = cycle
    report.total_cycles = cycle
    report.lt_busy = busy
    report.dram_bytes_streaming += EMIT_BYTES * len(emits)  # output buffer write-back
    emits.sort()
    return Cut(emits), report


# ---------------------------------------------------------------------------
# splatting block


def simulate_splat(
    source,
    selected: list[int],
    camera: Camera,
    cfg: ArchConfig,
    mode: str = "reference",
    weights: dict[int, float] | None = None,
) -> tuple[Image, SimReport]:
    """Projection, per-tile sort, and SP-unit cycle model over a cut.

    Stage costs: projection retires one Gaussian per unit per cycle; sorting
    costs ceil(n*log2(max(n,2)) / sort_units) per tile, summed; tiles are then
    list-scheduled onto SP units greedily (earliest-free unit takes the next
    tile), each costing its (Gaussian, group) evaluation count.  The image is
    produced by the exact software blender, never recomputed.
    """
    report = SimReport(energy_weights=dict(cfg.energy_weights))
    projections = project_selection(source, selected, camera, weights)
    bins = bin_gaussians(projections, camera.width, camera.height)
    img, div, traces = blend_pipeline(bins, projections, camera.width, camera.height, mode)

    report.proj_cycles = math.ceil(len(selected) / cfg.projection_units)
    report.sort_cycles = sum(
        math.ceil(n * math.log2(max(n, 2)) / cfg.sort_units) for n, _ in traces if n > 0
    )
    free = [(0, unit) for unit in range(cfg.sp_units)]
    heapq.heapify(free)
    sp_busy = [0] * cfg.sp_units
    for _, evals in traces:
        if evals == 0:
            continue
        t, unit = heapq.heappop(free)
        sp_busy[unit] += evals
        heapq.heappush(free, (t + evals, unit))
    report.sp_stage_cycles = max(t for t, _ in free)
    report.sp_busy = sp_busy
    report.splat_cycles = report.proj_cycles + report.sort_cycles + report.sp_stage_cycles
    report.total_cycles = report.splat_cycles

    touched: set[int] = set()
    for lst in bins.lists:
        for idx in lst:
            if idx in touched:
                report.sram_accesses += cfg.gaussian_record_bytes
            else:
                touched.add(idx)
                report.dram_bytes_streaming += cfg.gaussian_record_bytes
    report.gaussians_rendered = len(projections)
    report.divergence = div.to_json()
    return img, report


def _merge_reports(lod: SimReport, splat: SimReport) -> SimReport:
    merged = SimReport(energy_weights=dict(lod.energy_weights))
    merged.lod_cycles = lod.lod_cycles
    merged.splat_cycles = splat.splat_cycles
    merged.total_cycles = lod.lod_cycles + splat.splat_cycles
    merged.proj_cycles = splat.proj_cycles
    merged.sort_cycles = splat.sort_cycles
    merged.sp_stage_cycles = splat.sp_stage_cycles
    merged.lt_busy = list(lod.lt_busy)
    merged.sp_busy = list(splat.sp_busy)
    merged.cache_fills = lod.cache_fills
    merged.cache_fill_stalls = lod.cache_fill_stalls
    merged.queue_overflow_waits = lod.queue_overflow_waits
    merged.fill_counts = dict(lod.fill_counts)
    merged.dram_bytes_streaming = lod.dram_bytes_streaming + splat.dram_bytes_streaming
    merged.dram_bytes_random = lod.dram_bytes_random + splat.dram_bytes_random
    merged.sram_accesses = lod.sram_accesses + splat.sram_accesses
    merged.nodes_visited = lod.nodes_visited
    merged.gaussians_rendered = splat.gaussians_rendered
    merged.divergence = dict(splat.divergence)
    return merged


def simulate_end_to_end(
    slt: SLTree,
    camera: Camera,
    epsilon: float,
    cfg: ArchConfig,
    mode: str = "reference",
) -> tuple[Image, SimReport]:
    """Traversal then splatting, serialized; one merged report.

    The double-buffered global buffer hides Gaussian load latency behind
    previous-tile compute, so no extra cycles appear between the stages.
    """
    cut, lod_report = simulate_lod(slt, camera, epsilon, cfg)
    img, splat_report = simulate_splat(slt, cut.selected, camera, cfg, mode)
    return img, _merge_reports(lod_report, splat_report)


def exhaustive_baseline(tree, camera: Camera, epsilon: float, cfg: ArchConfig) -> SimReport:
    """Traffic model of a traversal with no partitioning: every node streams in.

    ``tree`` is anything with a ``node_count`` (a LodTree or an SLTree).  The
    point of comparison is DRAM traffic (node_count * record bytes by
    definition); cycles are whichever of bandwidth or evaluation throughput
    binds.  Camera and epsilon do not change what it reads, which is the
    problem with exhaustive search in the first place.
    """
    report = SimReport(energy_weights=dict(cfg.energy_weights))
    n = tree.node_count
    total_bytes = n * cfg.node_record_bytes
    stream_cycles = math.ceil(total_bytes / (cfg.dram_bytes_per_cycle * cfg.dram_channels))
    eval_cycles = math.ceil(n / cfg.lt_units)
    report.lod_cycles = max(stream_cycles, eval_cycles)
    report.total_cycles = report.lod_cycles
    report.nodes_visited = n
    report.dram_bytes_streaming = total_bytes
    report.sram_accesses = n * cfg.node_record_bytes
    return report
