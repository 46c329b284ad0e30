"""Size-bounded subtree partitioning and its streaming binary layout.

A LoD tree is cut into subtrees of at most ``tau_s`` nodes so a traversal
engine can stream one fixed-size block at a time instead of chasing pointers.
Partitioning is a two-step offline pass: a BFS grouping that peels off
subtrees of exactly ``tau_s`` nodes, then a greedy merge of small same-parent
subtrees that evens out the size distribution.  Each subtree stores its
records in DFS order with a per-record ``remaining`` count (the number of its
own descendants that follow it), which is what makes constant-time pruning
possible during the scan.

File layout (``SLT1``, little-endian): a 24-byte header (magic, version,
tau_s, subtree count, node count, root sid), then one 8-byte entry per subtree
(size u16, parent node u32, reserved u16), then per subtree ``tau_s`` records
of 40 bytes each with short subtrees zero-padded, then one 56-byte Gaussian
payload per node indexed by nid.  Grouping the 8-byte entries up front keeps
record blocks exactly ``tau_s * 40`` bytes apart, the address rule the
hardware model relies on.
"""

from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ConstructionError, ParameterError, SltFormatError
from .scene import Aabb, LodTree

MAGIC = b"SLT1"
VERSION = 1
HEADER_SIZE = 24
SUBTREE_HEADER_SIZE = 8
RECORD_SIZE = 40
PAYLOAD_SIZE = 56
NULL_U32 = 0xFFFFFFFF

__all__ = [
    "SubtreeNodeRecord",
    "Subtree",
    "SLTree",
    "ProvisionalSubtree",
    "initial_partition",
    "merge_subtrees",
    "build_sltree",
    "validate_sltree",
    "sltree_to_bytes",
    "sltree_from_bytes",
    "write_sltree",
    "load_sltree",
    "subtree_records_offset",
    "subtree_sizes",
]


@dataclass
class SubtreeNodeRecord:
    """One 40-byte traversal record.

    ``remaining`` counts this node's descendants stored in the same subtree,
    so a scan can drop the whole branch by jumping ``remaining + 1`` slots.
    A boundary node is one with children in other subtrees; those subtrees
    always occupy the contiguous sid range starting at ``child_sid_first``.
    """

    nid: int
    aabb: Aabb
    remaining: int
    child_sid_first: int | None
    child_sid_count: int
    is_boundary: bool


@dataclass
class Subtree:
    sid: int
    records: list[SubtreeNodeRecord]
    parent_node: int | None  # nid whose children root this subtree

    @property
    def size(self) -> int:
        return len(self.records)


@dataclass
class ProvisionalSubtree:
    """Intermediate partitioning unit; a forest of whole-sibling roots."""

    roots: list[int]
    members: list[int]
    parent_node: int | None

    @property
    def size(self) -> int:
        return len(self.members)


class SLTree:
    """Partitioned LoD tree plus per-node Gaussian payload columns.

    Immutable once built.  Carries the view-math columns (means, scales,
    bounds) indexed by nid so traversal and the hardware model can make the
    exact same floating-point decisions as the recursive reference walk.
    """

    def __init__(
        self,
        subtrees: list[Subtree],
        tau_s: int,
        root_sid: int,
        node_count: int,
        means: np.ndarray,
        scales: np.ndarray,
        quats: np.ndarray,
        opacity: np.ndarray,
        colors: np.ndarray,
        aabb_lo: np.ndarray,
        aabb_hi: np.ndarray,
    ):
        self.subtrees = subtrees
        self.tau_s = tau_s
        self.root_sid = root_sid
        self.node_count = node_count
        self._means = means
        self._scales = scales
        self._quats = quats
        self._opacity = opacity
        self._colors = colors
        self._aabb_lo = aabb_lo
        self._aabb_hi = aabb_hi
        self._max_scale = scales.max(axis=1)
        self.node_index: dict[int, tuple[int, int]] = {}
        for st in subtrees:
            for slot, rec in enumerate(st.records):
                self.node_index[rec.nid] = (st.sid, slot)
        # plain-list columns: the traversal inner loop indexes these millions
        # of times and python lists beat numpy scalar indexing there
        self._rec_nid = [[rec.nid for rec in st.records] for st in subtrees]
        self._rec_remaining = [[rec.remaining for rec in st.records] for st in subtrees]
        self._rec_child_first = [[rec.child_sid_first for rec in st.records] for st in subtrees]
        self._rec_child_count = [[rec.child_sid_count for rec in st.records] for st in subtrees]
        self._rec_boundary = [[rec.is_boundary for rec in st.records] for st in subtrees]
        self._rec_leaf = [
            [not rec.is_boundary and rec.remaining == 0 for rec in st.records] for st in subtrees
        ]

    @property
    def subtree_count(self) -> int:
        return len(self.subtrees)


def subtree_sizes(slt: SLTree) -> list[int]:
    return [st.size for st in slt.subtrees]


# ---------------------------------------------------------------------------
# partitioning


def initial_partition(tree: LodTree, tau_s: int) -> list[ProvisionalSubtree]:
    """BFS grouping: peel off subtrees of exactly ``tau_s`` nodes.

    Collection from a root stops the moment the subtree holds ``tau_s``
    nodes; the children still waiting in the BFS frontier become roots of
    later subtrees, processed FIFO.  Every provisional subtree has one root.
    """
    if tau_s < 1:
        raise ParameterError(f"tau_s must be >= 1, got {tau_s}")
    children = tree._children
    parents = tree._parents
    pending: deque[int] = deque([tree.root])
    out: list[ProvisionalSubtree] = []
    while pending:
        start = pending.popleft()
        members: list[int] = []
        frontier: deque[int] = deque([start])
        while frontier and len(members) < tau_s:
            nid = frontier.popleft()
            members.append(nid)
            frontier.extend(children[nid])
        pending.extend(frontier)
        p = int(parents[start])
        out.append(ProvisionalSubtree([start], members, None if p < 0 else p))
    return out


def merge_subtrees(provisional: list[ProvisionalSubtree], tau_s: int) -> list[ProvisionalSubtree]:
    """Greedy left-to-right merge of small same-parent subtrees.

    A subtree joins the running group only if it hangs off the same parent
    node, is itself at most ``tau_s / 2``, and the group stays within
    ``tau_s``; otherwise the group is emitted and the subtree starts a new
    one.  Merged groups keep their roots in original sibling order.
    """
    if tau_s < 1:
        raise ParameterError(f"tau_s must be >= 1, got {tau_s}")
    out: list[ProvisionalSubtree] = []
    cur: ProvisionalSubtree | None = None
    for st in provisional:
        if (
            cur is not None
            and st.parent_node is not None
            and st.parent_node == cur.parent_node
            and 2 * st.size <= tau_s
            and cur.size + st.size <= tau_s
        ):
            cur = ProvisionalSubtree(cur.roots + st.roots, cur.members + st.members, cur.parent_node)
        else:
            if cur is not None:
                out.append(cur)
            cur = st
    if cur is not None:
        out.append(cur)
    return out


def build_sltree(tree: LodTree, tau_s: int) -> SLTree:
    """Partition, merge, order records depth-first, and number subtrees.

    Sids are assigned breadth-first over the subtree graph, and all subtrees
    hanging off one boundary node are numbered consecutively so a record can
    address them as a (first, count) range.
    """
    merged = merge_subtrees(initial_partition(tree, tau_s), tau_s)
    children = tree._children

    # per merged subtree: DFS record order, in-subtree descendant counts,
    # and which records sprout child subtrees
    n_sub = len(merged)
    dfs_orders: list[list[int]] = []
    remaining_maps: list[dict[int, int]] = []
    ext_maps: list[dict[int, bool]] = []
    kids_of_node: dict[int, list[int]] = {}  # boundary nid -> merged indices
    for mi, st in enumerate(merged):
        member_set = set(st.members)
        mem_children = {nid: [c for c in children[nid] if c in member_set] for nid in st.members}
        order: list[int] = []
        for root in st.roots:
            stack = [root]
            while stack:
                nid = stack.pop()
                order.append(nid)
                stack.extend(reversed(mem_children[nid]))
        count = dict.fromkeys(order, 1)
        for nid in reversed(order):
            for c in mem_children[nid]:
                count[nid] += count[c]
        dfs_orders.append(order)
        remaining_maps.append({nid: count[nid] - 1 for nid in order})
        ext_maps.append({nid: len(mem_children[nid]) < len(children[nid]) for nid in order})
        if st.parent_node is not None:
            kids_of_node.setdefault(st.parent_node, []).append(mi)

    # breadth-first sid numbering; each boundary node's block is enqueued
    # whole, which is what makes its sid range contiguous
    sids: list[int] = [-1] * n_sub
    bfs: deque[int] = deque([0])
    seq: list[int] = []
    while bfs:
        mi = bfs.popleft()
        sids[mi] = len(seq)
        seq.append(mi)
        for nid in dfs_orders[mi]:
            if ext_maps[mi][nid]:
                bfs.extend(kids_of_node.get(nid, ()))
    if len(seq) != n_sub:
        raise ConstructionError("subtree graph is not connected from the root subtree")

    lo = tree._aabb_lo
    hi = tree._aabb_hi
    subtrees: list[Subtree] = [None] * n_sub  # type: ignore[list-item]
    for mi, st in enumerate(merged):
        records = []
        for nid in dfs_orders[mi]:
            if ext_maps[mi][nid]:
                child_sids = sorted(sids[m] for m in kids_of_node[nid])
                first, count = child_sids[0], len(child_sids)
                if child_sids != list(range(first, first + count)):
                    raise ConstructionError(f"child subtrees of node {nid} got non-contiguous sids")
            else:
                first, count = None, 0
            records.append(
                SubtreeNodeRecord(
                    nid=nid,
                    aabb=Aabb(lo[nid].copy(), hi[nid].copy()),
                    remaining=remaining_maps[mi][nid],
                    child_sid_first=first,
                    child_sid_count=count,
                    is_boundary=count > 0,
                )
            )
        subtrees[sids[mi]] = Subtree(sids[mi], records, st.parent_node)

    slt = SLTree(
        subtrees,
        tau_s,
        root_sid=0,
        node_count=tree.node_count,
        means=tree._means.copy(),
        scales=tree._scales.copy(),
        quats=tree._quats.copy(),
        opacity=tree._opacity.copy(),
        colors=tree._colors.copy(),
        aabb_lo=lo.copy(),
        aabb_hi=hi.copy(),
    )
    validate_sltree(slt, tree)
    return slt


def validate_sltree(slt: SLTree, tree: LodTree | None = None) -> None:
    """Check every structural invariant; raise ConstructionError naming ids.

    Standalone checks cover sizes, the nid partition, skip-count nesting, and
    the boundary sid ranges.  With the source tree also given, the stored
    record order is compared against a fresh DFS and every parent/child edge
    is checked for hierarchical preservation.
    """
    n_sub = len(slt.subtrees)
    if n_sub == 0:
        raise ConstructionError("no subtrees")
    if slt.root_sid != 0:
        raise ConstructionError(f"root sid {slt.root_sid}, expected 0")
    seen: dict[int, tuple[int, int]] = {}
    referenced = [False] * n_sub
    for sid, st in enumerate(slt.subtrees):
        if st.sid != sid:
            raise ConstructionError(f"subtree at index {sid} carries sid {st.sid}")
        if not 1 <= st.size <= slt.tau_s:
            raise ConstructionError(f"subtree {sid} size {st.size} outside [1, {slt.tau_s}]")
        open_blocks: list[int] = []  # slot where an enclosing span ends
        for slot, rec in enumerate(st.records):
            if rec.nid in seen:
                raise ConstructionError(f"node {rec.nid} appears in two subtrees")
            seen[rec.nid] = (sid, slot)
            if not 0 <= rec.remaining < st.size or slot + rec.remaining + 1 > st.size:
                raise ConstructionError(f"subtree {sid}: record {rec.nid} remaining {rec.remaining} overruns")
            while open_blocks and open_blocks[-1] <= slot:
                open_blocks.pop()
            if open_blocks and slot + rec.remaining + 1 > open_blocks[-1]:
                raise ConstructionError(f"subtree {sid}: span of node {rec.nid} escapes its ancestor's span")
            open_blocks.append(slot + rec.remaining + 1)
            if rec.is_boundary != (rec.child_sid_count > 0):
                raise ConstructionError(f"node {rec.nid}: boundary flag and child count disagree")
            if rec.is_boundary:
                first = rec.child_sid_first
                if first is None or first < 1 or first + rec.child_sid_count > n_sub:
                    raise ConstructionError(f"node {rec.nid}: child sid range invalid")
                if first <= slt.root_sid < first + rec.child_sid_count:
                    raise ConstructionError(f"node {rec.nid}: child sid range covers the root subtree")
                for csid in range(first, first + rec.child_sid_count):
                    if referenced[csid]:
                        raise ConstructionError(f"subtree {csid} referenced by two boundary nodes")
                    referenced[csid] = True
                    if slt.subtrees[csid].parent_node != rec.nid:
                        raise ConstructionError(
                            f"subtree {csid} parent node {slt.subtrees[csid].parent_node} != boundary node {rec.nid}"
                        )
    if len(seen) != slt.node_count:
        raise ConstructionError(f"records cover {len(seen)} nids, tree has {slt.node_count}")
    if slt.node_index != seen:
        raise ConstructionError("node_index disagrees with stored records")
    for sid in range(n_sub):
        if sid != slt.root_sid and not referenced[sid]:
            raise ConstructionError(f"subtree {sid} is not referenced by any boundary node")

    if tree is None:
        return
    if tree.node_count != slt.node_count:
        raise ConstructionError("node count mismatch with source tree")
    root_sid, _ = slt.node_index[tree.root]
    if root_sid != slt.root_sid:
        raise ConstructionError("tree root is not in the root subtree")
    for st in slt.subtrees:
        member_set = {rec.nid for rec in st.records}
        expected: list[int] = []
        roots = [rec.nid for rec in st.records if (tree.nodes[rec.nid].parent not in member_set)]
        for root in roots:
            stack = [root]
            while stack:
                nid = stack.pop()
                expected.append(nid)
                stack.extend(reversed([c for c in tree._children[nid] if c in member_set]))
        if expected != [rec.nid for rec in st.records]:
            raise ConstructionError(f"subtree {st.sid} records are not in DFS order")
        for rec in st.records:
            ext = [c for c in tree._children[rec.nid] if c not in member_set]
            if bool(ext) != rec.is_boundary:
                raise ConstructionError(f"node {rec.nid}: boundary flag wrong against source tree")
            covered = set()
            if rec.is_boundary:
                for csid in range(rec.child_sid_first, rec.child_sid_first + rec.child_sid_count):
                    for crec in slt.subtrees[csid].records:
                        covered.add(crec.nid)
            for c in ext:
                if c not in covered:
                    raise ConstructionError(f"edge {rec.nid} -> {c} is not preserved by any child subtree")


# ---------------------------------------------------------------------------
# binary serialization

_HEADER = struct.Struct("<4sIIIII")
_SUBHDR = struct.Struct("<HIH")
_RECORD = struct.Struct("<I6fHIHHH")
_PAYLOAD = struct.Struct("<14f")


def _f32_outward(lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cast bounds to float32 rounding outward, so culling stays conservative."""
    lo32 = lo.astype(np.float32)
    hi32 = hi.astype(np.float32)
    bump_lo = lo32.astype(np.float64) > lo
    bump_hi = hi32.astype(np.float64) < hi
    if bump_lo.any():
        lo32[bump_lo] = np.nextafter(lo32[bump_lo], np.float32(-np.inf))
    if bump_hi.any():
        hi32[bump_hi] = np.nextafter(hi32[bump_hi], np.float32(np.inf))
    return lo32, hi32


def subtree_records_offset(tau_s: int, subtree_count: int, sid: int) -> int:
    """Byte offset of subtree ``sid``'s record block in an SLT1 file."""
    return HEADER_SIZE + subtree_count * SUBTREE_HEADER_SIZE + sid * tau_s * RECORD_SIZE


def sltree_to_bytes(slt: SLTree) -> bytes:
    out = bytearray()
    out += _HEADER.pack(MAGIC, VERSION, slt.tau_s, slt.subtree_count, slt.node_count, slt.root_sid)
    for st in slt.subtrees:
        parent = NULL_U32 if st.parent_node is None else st.parent_node
        out += _SUBHDR.pack(st.size, parent, 0)
    pad = b"\x00" * RECORD_SIZE
    for st in slt.subtrees:
        for rec in st.records:
            lo32, hi32 = _f32_outward(rec.aabb.min, rec.aabb.max)
            out += _RECORD.pack(
                rec.nid,
                float(lo32[0]),
                float(lo32[1]),
                float(lo32[2]),
                float(hi32[0]),
                float(hi32[1]),
                float(hi32[2]),
                rec.remaining,
                0 if rec.child_sid_first is None else rec.child_sid_first,
                rec.child_sid_count,
                1 if rec.is_boundary else 0,
                0,
            )
        out += pad * (slt.tau_s - st.size)
    for nid in range(slt.node_count):
        out += _PAYLOAD.pack(
            *np.float32(slt._means[nid]),
            *np.float32(slt._scales[nid]),
            *np.float32(slt._quats[nid]),
            np.float32(slt._opacity[nid]),
            *np.float32(slt._colors[nid]),
        )
    return bytes(out)


def sltree_from_bytes(data: bytes) -> SLTree:
    if len(data) < HEADER_SIZE:
        raise SltFormatError(f"file is {len(data)} bytes, shorter than the {HEADER_SIZE}-byte header")
    magic, version, tau_s, n_sub, n_nodes, root_sid = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise SltFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise SltFormatError(f"unsupported version {version}, expected {VERSION}")
    expected = HEADER_SIZE + n_sub * SUBTREE_HEADER_SIZE + n_sub * tau_s * RECORD_SIZE + n_nodes * PAYLOAD_SIZE
    if len(data) != expected:
        raise SltFormatError(f"file is {len(data)} bytes, layout implies {expected}")

    sizes: list[int] = []
    parents: list[int | None] = []
    off = HEADER_SIZE
    for sid in range(n_sub):
        size, parent, _ = _SUBHDR.unpack_from(data, off)
        off += SUBTREE_HEADER_SIZE
        sizes.append(size)
        parents.append(None if parent == NULL_U32 else parent)

    means = np.zeros((n_nodes, 3))
    scales = np.zeros((n_nodes, 3))
    quats = np.zeros((n_nodes, 4))
    opacity = np.zeros(n_nodes)
    colors = np.zeros((n_nodes, 3))
    aabb_lo = np.zeros((n_nodes, 3))
    aabb_hi = np.zeros((n_nodes, 3))
    subtrees: list[Subtree] = []
    for sid in range(n_sub):
        records = []
        for slot in range(sizes[sid]):
            vals = _RECORD.unpack_from(data, off + slot * RECORD_SIZE)
            nid, lo0, lo1, lo2, hi0, hi1, hi2, remaining, child_first, child_count, flags, _ = vals
            if not 0 <= nid < n_nodes:
                raise SltFormatError(f"subtree {sid} slot {slot}: nid {nid} out of range")
            rec = SubtreeNodeRecord(
                nid=nid,
                aabb=Aabb(np.array([lo0, lo1, lo2], dtype=np.float64), np.array([hi0, hi1, hi2], dtype=np.float64)),
                remaining=remaining,
                child_sid_first=child_first if child_count > 0 else None,
                child_sid_count=child_count,
                is_boundary=bool(flags & 1),
            )
            records.append(rec)
            aabb_lo[nid] = rec.aabb.min
            aabb_hi[nid] = rec.aabb.max
        tail = off + sizes[sid] * RECORD_SIZE
        if data[tail : off + tau_s * RECORD_SIZE].strip(b"\x00"):
            raise SltFormatError(f"subtree {sid}: nonzero bytes in record padding")
        off += tau_s * RECORD_SIZE
        subtrees.append(Subtree(sid, records, parents[sid]))

    for nid in range(n_nodes):
        vals = _PAYLOAD.unpack_from(data, off + nid * PAYLOAD_SIZE)
        means[nid] = vals[0:3]
        scales[nid] = vals[3:6]
        quats[nid] = vals[6:10]
        opacity[nid] = vals[10]
        colors[nid] = vals[11:14]

    slt = SLTree(subtrees, tau_s, root_sid, n_nodes, means, scales, quats, opacity, colors, aabb_lo, aabb_hi)
    try:
        validate_sltree(slt)
    except ConstructionError as exc:
        raise SltFormatError(f"file is self-consistent in layout but invalid: {exc}") from exc
    return slt


def write_sltree(slt: SLTree, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(sltree_to_bytes(slt))


def load_sltree(path: str) -> SLTree:
    with open(path, "rb") as fh:
        return sltree_from_bytes(fh.read())
