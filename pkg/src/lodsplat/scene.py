"""Level-of-detail Gaussian scene model.

A scene is a tree of 3D Gaussians: every interior node is a coarse stand-in for
its children, so rendering picks, per view, the shallowest nodes whose
projected footprint is small enough ("the cut").  This module owns the scene
types, the synthetic-scene generator, view math (frustum culling and projected
size), the reference recursive cut, and scene/camera JSON I/O.

Conventions used throughout the package:

* quaternions are ``(w, x, y, z)``, unit length;
* a camera's ``orientation`` rotates world into camera space, camera looks
  along +z;
* pixel centers sit at integer coordinates, the principal point is
  ``((width-1)/2, (height-1)/2)``.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import InvariantError, ParameterError, SceneFormatError

SCENE_FORMAT = "lodscene/1"

__all__ = [
    "Gaussian",
    "Aabb",
    "LodNode",
    "LodTree",
    "Camera",
    "Visibility",
    "ViewEval",
    "gen_synthetic_tree",
    "orbit_camera",
    "projected_size",
    "frustum_test",
    "frustum_planes",
    "evaluate_view",
    "oracle_cut",
    "save_scene",
    "load_scene",
    "save_camera",
    "load_camera",
]


# ---------------------------------------------------------------------------
# quaternions


def quat_to_mats(quats: np.ndarray) -> np.ndarray:
    """Rotation matrices (n, 3, 3) for an (n, 4) array of unit quaternions."""
    q = np.asarray(quats, dtype=np.float64)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    m = np.empty((q.shape[0], 3, 3), dtype=np.float64)
    m[:, 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    m[:, 0, 1] = 2.0 * (x * y - w * z)
    m[:, 0, 2] = 2.0 * (x * z + w * y)
    m[:, 1, 0] = 2.0 * (x * y + w * z)
    m[:, 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    m[:, 1, 2] = 2.0 * (y * z - w * x)
    m[:, 2, 0] = 2.0 * (x * z - w * y)
    m[:, 2, 1] = 2.0 * (y * z + w * x)
    m[:, 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return m


def quat_to_mat(quat: np.ndarray) -> np.ndarray:
    return quat_to_mats(np.asarray(quat, dtype=np.float64)[None, :])[0]


def mat_to_quat(m: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) for a rotation matrix."""
    t = m[0, 0] + m[1, 1] + m[2, 2]
    if t > 0.0:
        s = math.sqrt(t + 1.0) * 2.0
        q = np.array([0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s])
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array([(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s])
    elif m[1, 1] >= m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array([(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s])
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array([(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s])
    return q / np.linalg.norm(q)


def _ellipsoid_extents(mats: np.ndarray, scales: np.ndarray) -> np.ndarray:
    """Per-axis half extents of the 3-sigma ellipsoids, shape (n, 3)."""
    t = mats * scales[:, None, :]
    return 3.0 * np.sqrt((t * t).sum(axis=2))


# ---------------------------------------------------------------------------
# scene types


@dataclass
class Gaussian:
    """One anisotropic 3D Gaussian primitive."""

    mean: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray
    opacity: float
    color: np.ndarray


@dataclass
class Aabb:
    """Axis-aligned box, component-wise ``min <= max``."""

    min: np.ndarray
    max: np.ndarray


@dataclass
class LodNode:
    nid: int
    gaussian: Gaussian
    parent: int | None
    children: tuple[int, ...]
    aabb: Aabb | None = None  # filled in by LodTree


class LodTree:
    """A validated LoD tree with dense node ids.

    Bounds are never trusted from input: each node's box is recomputed as the
    union of its own 3-sigma box and its children's boxes, so a box always
    encloses the node's whole subtree and frustum culling a node is safe for
    all of its descendants.
    """

    def __init__(self, nodes: list[LodNode], root: int = 0):
        n = len(nodes)
        if n == 0:
            raise InvariantError("tree has no nodes")
        for i, nd in enumerate(nodes):
            if nd.nid != i:
                raise InvariantError(f"node at index {i} has nid {nd.nid}; nids must be dense 0..{n - 1}")
        if not 0 <= root < n:
            raise InvariantError(f"root {root} is not a valid nid")
        self.nodes = nodes
        self.root = root
        self._validate_links()
        self._build_columns()

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    def gaussian(self, nid: int) -> Gaussian:
        return self.nodes[nid].gaussian

    def _validate_links(self) -> None:
        n = len(self.nodes)
        claimed_parent = [-1] * n  # via some node's children list
        for nd in self.nodes:
            if (nd.parent is None) != (nd.nid == self.root):
                raise InvariantError(f"node {nd.nid}: parent is {nd.parent!r} but root is {self.root}")
            for c in nd.children:
                if not 0 <= c < n:
                    raise InvariantError(f"node {nd.nid} references missing child nid {c}")
                if claimed_parent[c] != -1:
                    raise InvariantError(f"node {c} is listed as a child of two nodes")
                claimed_parent[c] = nd.nid
        for nd in self.nodes:
            if nd.parent is not None and claimed_parent[nd.nid] != nd.parent:
                raise InvariantError(f"node {nd.nid}: parent link {nd.parent} has no matching child entry")

        for nd in self.nodes:
            g = nd.gaussian
            g.mean = np.asarray(g.mean, dtype=np.float64).reshape(3)
            g.scale = np.asarray(g.scale, dtype=np.float64).reshape(3)
            g.rotation = np.asarray(g.rotation, dtype=np.float64).reshape(4)
            g.color = np.asarray(g.color, dtype=np.float64).reshape(3)
            g.opacity = float(g.opacity)

        # value checks run vectorized; only an actual violation pays for the
        # per-node scan that names the offender
        scales = np.array([nd.gaussian.scale for nd in self.nodes])
        if not (scales > 0.0).all():
            nid = int(np.argmin((scales > 0.0).all(axis=1)))
            raise InvariantError(
                f"node {nid}: scale must be positive, got {self.nodes[nid].gaussian.scale.tolist()}"
            )
        quats = np.array([nd.gaussian.rotation for nd in self.nodes])
        norms = np.sqrt((quats * quats).sum(axis=1))
        if (np.abs(norms - 1.0) > 1e-6).any():
            nid = int(np.argmax(np.abs(norms - 1.0) > 1e-6))
            raise InvariantError(f"node {nid}: rotation norm {norms[nid]} is not within 1e-6 of 1")
        opacity = np.array([nd.gaussian.opacity for nd in self.nodes])
        if ((opacity < 0.0) | (opacity > 1.0)).any():
            nid = int(np.argmax((opacity < 0.0) | (opacity > 1.0)))
            raise InvariantError(f"node {nid}: opacity {opacity[nid]} outside [0, 1]")
        colors = np.array([nd.gaussian.color for nd in self.nodes])
        bad = (colors < 0.0) | (colors > 1.0)
        if bad.any():
            nid = int(np.argmax(bad.any(axis=1)))
            raise InvariantError(f"node {nid}: color outside [0, 1]")

    def _build_columns(self) -> None:
        n = len(self.nodes)
        self._means = np.array([nd.gaussian.mean for nd in self.nodes])
        self._scales = np.array([nd.gaussian.scale for nd in self.nodes])
        self._quats = np.array([nd.gaussian.rotation for nd in self.nodes])
        self._opacity = np.array([nd.gaussian.opacity for nd in self.nodes])
        self._colors = np.array([nd.gaussian.color for nd in self.nodes])
        self._max_scale = self._scales.max(axis=1)
        self._children = [list(nd.children) for nd in self.nodes]
        self._parents = np.array([-1 if nd.parent is None else nd.parent for nd in self.nodes])
        self._leaf = np.array([len(nd.children) == 0 for nd in self.nodes])

        # level order; doubles as the reachability check
        order = [self.root]
        for nid in order:
            order.extend(self._children[nid])
        if len(order) != n:
            reached = set(order)
            missing = next(nd.nid for nd in self.nodes if nd.nid not in reached)
            raise InvariantError(f"node {missing} is not reachable from the root")
        self._level_order = order

        ext = _ellipsoid_extents(quat_to_mats(self._quats), self._scales)
        lo = self._means - ext
        hi = self._means + ext
        # union children into parents one level at a time, deepest first;
        # minimum.at handles the duplicate parent indices within a level
        par_list = [-1 if nd.parent is None else nd.parent for nd in self.nodes]
        depth = [0] * n
        for nid in order[1:]:
            depth[nid] = depth[par_list[nid]] + 1
        depth = np.array(depth)
        parents = self._parents
        for d in range(int(depth.max()), 0, -1):
            idx = np.flatnonzero(depth == d)
            np.minimum.at(lo, parents[idx], lo[idx])
            np.maximum.at(hi, parents[idx], hi[idx])
        self._aabb_lo = lo
        self._aabb_hi = hi
        for nd in self.nodes:
            nd.aabb = Aabb(lo[nd.nid].copy(), hi[nd.nid].copy())


@dataclass
class Camera:
    """Pinhole camera; ``orientation`` is the world-to-camera rotation."""

    position: np.ndarray
    orientation: np.ndarray
    focal: float
    width: int
    height: int
    near: float
    far: float

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.orientation = np.asarray(self.orientation, dtype=np.float64).reshape(4)
        self.focal = float(self.focal)
        self.width = int(self.width)
        self.height = int(self.height)
        self.near = float(self.near)
        self.far = float(self.far)
        if self.width < 1 or self.height < 1:
            raise InvariantError(f"image size {self.width}x{self.height} is not positive")
        if self.focal <= 0.0:
            raise InvariantError(f"focal length {self.focal} must be positive")
        if not 0.0 < self.near < self.far:
            raise InvariantError(f"need 0 < near < far, got near={self.near} far={self.far}")
        norm = float(np.linalg.norm(self.orientation))
        if abs(norm - 1.0) > 1e-6:
            raise InvariantError(f"camera orientation norm {norm} is not within 1e-6 of 1")

    def rotation(self) -> np.ndarray:
        return quat_to_mat(self.orientation)


class Visibility(Enum):
    OUTSIDE = "outside"
    VISIBLE = "visible"


# ---------------------------------------------------------------------------
# view math


def frustum_planes(camera: Camera) -> np.ndarray:
    """World-space frustum planes, shape (6, 4); inside means n.p + d >= 0."""
    f = camera.focal
    hw = camera.width / 2.0
    hh = camera.height / 2.0
    cam_planes = np.array(
        [
            [0.0, 0.0, 1.0, -camera.near],
            [0.0, 0.0, -1.0, camera.far],
            [-1.0, 0.0, hw / f, 0.0],
            [1.0, 0.0, hw / f, 0.0],
            [0.0, -1.0, hh / f, 0.0],
            [0.0, 1.0, hh / f, 0.0],
        ]
    )
    rot = camera.rotation()
    out = np.empty_like(cam_planes)
    out[:, :3] = cam_planes[:, :3] @ rot  # R^T n for each row
    out[:, 3] = cam_planes[:, 3] - out[:, :3] @ camera.position
    return out


def _outside_mask(lo: np.ndarray, hi: np.ndarray, planes: np.ndarray) -> np.ndarray:
    """True where a box lies fully outside some plane (conservative cull)."""
    out = np.zeros(lo.shape[0], dtype=bool)
    for nx, ny, nz, d in planes:
        px = hi[:, 0] if nx > 0.0 else lo[:, 0]
        py = hi[:, 1] if ny > 0.0 else lo[:, 1]
        pz = hi[:, 2] if nz > 0.0 else lo[:, 2]
        out |= nx * px + ny * py + nz * pz + d < 0.0
    return out


def _view_arrays(
    means: np.ndarray,
    max_scales: np.ndarray,
    lo: np.ndarray,
    hi: np.ndarray,
    camera: Camera,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shared kernel for culling and projected size.

    Every consumer (recursive oracle, streaming traversal, hardware model)
    funnels through this one code path so their floating-point decisions are
    bit-identical.
    """
    outside = _outside_mask(lo, hi, frustum_planes(camera))
    r2 = camera.rotation()[2]
    p = camera.position
    depth = (means[:, 0] - p[0]) * r2[0] + (means[:, 1] - p[1]) * r2[1] + (means[:, 2] - p[2]) * r2[2]
    proj = (6.0 * max_scales) * camera.focal / np.maximum(depth, camera.near)
    # behind the camera but not culled: force refinement rather than guess
    sentinel = (depth <= 0.0) & ~outside
    if sentinel.any():
        proj = proj.copy()
        proj[sentinel] = np.inf
    return outside, proj, depth


@dataclass
class ViewEval:
    """Per-node view results: culling flag and projected size in pixels."""

    outside: np.ndarray
    proj: np.ndarray
    depth: np.ndarray


def evaluate_view(tree: LodTree, camera: Camera) -> ViewEval:
    outside, proj, depth = _view_arrays(tree._means, tree._max_scale, tree._aabb_lo, tree._aabb_hi, camera)
    return ViewEval(outside, proj, depth)


def frustum_test(aabb: Aabb, camera: Camera) -> Visibility:
    """Conservative box-vs-frustum test; never reports a visible box outside."""
    out = _outside_mask(aabb.min[None, :], aabb.max[None, :], frustum_planes(camera))[0]
    return Visibility.OUTSIDE if out else Visibility.VISIBLE


def projected_size(node: LodNode, camera: Camera) -> float:
    """Screen-space diameter of the node's 3-sigma footprint, in pixels.

    Depth is clamped to the near plane; a node behind the camera whose box
    still intersects the frustum reports +inf so selection can never stop
    there.
    """
    g = node.gaussian
    ms = np.array([float(np.max(g.scale))])
    _, proj, _ = _view_arrays(g.mean[None, :], ms, node.aabb.min[None, :], node.aabb.max[None, :], camera)
    return float(proj[0])


def oracle_cut(tree: LodTree, camera: Camera, epsilon: float) -> list[int]:
    """Reference cut: recursive descent, no partitioning involved.

    Walks from the root; a culled node prunes its subtree, a node whose
    projected size is at most ``epsilon`` (or a leaf) is selected, anything
    else recurses.  Ground truth for every other traversal in the package.
    """
    if not epsilon > 0.0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    ve = evaluate_view(tree, camera)
    outside = ve.outside.tolist()
    selected = np.logical_or(ve.proj <= epsilon, tree._leaf).tolist()
    children = tree._children
    out: list[int] = []
    stack = [tree.root]
    while stack:
        nid = stack.pop()
        if outside[nid]:
            continue
        if selected[nid]:
            out.append(nid)
        else:
            stack.extend(children[nid])
    out.sort()
    return out


# ---------------------------------------------------------------------------
# synthetic scenes


def _random_unit_quat(rng: np.random.Generator) -> np.ndarray:
    while True:
        q = rng.normal(size=4)
        norm = np.linalg.norm(q)
        if norm > 1e-8:
            return q / norm


def gen_synthetic_tree(
    seed: int,
    node_budget: int,
    max_children: int = 32,
    depth_limit: int = 24,
    shrink_factor: float = 0.5,
) -> LodTree:
    """Deterministic synthetic LoD tree with heavy-tailed branching.

    Children sit inside the parent's 3-sigma box with scales shrunk by
    ``shrink_factor``, so detail fans out spatially while projected sizes
    decay along every path.  Child counts follow a clipped Pareto draw: most
    nodes have a few children, a rare node fans out to ``max_children``.
    Same seed, same tree, bit for bit.
    """
    if node_budget < 1:
        raise ParameterError(f"node_budget must be >= 1, got {node_budget}")
    if max_children < 1:
        raise ParameterError(f"max_children must be >= 1, got {max_children}")
    if depth_limit < 0:
        raise ParameterError(f"depth_limit must be >= 0, got {depth_limit}")
    if not 0.0 < shrink_factor < 1.0:
        raise ParameterError(f"shrink_factor must be in (0, 1), got {shrink_factor}")

    rng = np.random.default_rng(seed)
    root_g = Gaussian(
        mean=rng.uniform(-1.0, 1.0, 3),
        scale=rng.uniform(0.8, 1.6, 3),
        rotation=_random_unit_quat(rng),
        opacity=float(rng.uniform(0.4, 0.95)),
        color=rng.uniform(0.0, 1.0, 3),
    )
    nodes = [LodNode(0, root_g, None, ())]
    exts = [_ellipsoid_extents(quat_to_mats(root_g.rotation[None, :]), root_g.scale[None, :])[0]]
    kids: dict[int, list[int]] = {0: []}
    queue: deque[tuple[int, int]] = deque([(0, 0)])
    while queue and len(nodes) < node_budget:
        nid, depth = queue.popleft()
        if depth >= depth_limit:
            continue
        p_leaf = 0.05 if depth < 3 else 0.30
        if rng.random() < p_leaf:
            continue
        k = 1 + min(max_children - 1, int(rng.pareto(1.1) * 1.5))
        k = min(k, node_budget - len(nodes))
        pg = nodes[nid].gaussian
        # one batched draw per expansion, not six per child
        offs = rng.uniform(-0.6, 0.6, (k, 3))
        mults = shrink_factor * rng.uniform(0.75, 1.0, k)
        quats = rng.normal(size=(k, 4))
        norms = np.sqrt((quats * quats).sum(axis=1))
        for i in np.flatnonzero(norms <= 1e-8):
            quats[i] = _random_unit_quat(rng)
            norms[i] = 1.0
        quats /= norms[:, None]
        means = pg.mean + offs * exts[nid]
        scales = pg.scale * mults[:, None]
        opac = np.clip(pg.opacity + rng.normal(0.0, 0.08, k), 0.05, 1.0)
        cols = np.clip(pg.color + rng.normal(0.0, 0.08, (k, 3)), 0.0, 1.0)
        child_exts = _ellipsoid_extents(quat_to_mats(quats), scales)
        for i in range(k):
            cid = len(nodes)
            g = Gaussian(means[i], scales[i], quats[i], float(opac[i]), cols[i])
            nodes.append(LodNode(cid, g, nid, ()))
            exts.append(child_exts[i])
            kids.setdefault(nid, []).append(cid)
            queue.append((cid, depth + 1))

    for nd in nodes:
        nd.children = tuple(kids.get(nd.nid, ()))
    tree = LodTree(nodes)
    # the generator's contract, not a general tree invariant
    ms = tree._max_scale
    par = tree._parents
    child_mask = par >= 0
    bad = child_mask & (ms > shrink_factor * ms[np.where(child_mask, par, 0)] + 1e-12)
    if bad.any():
        c = int(np.argmax(bad))
        raise InvariantError(f"node {c}: child extent exceeds shrink bound of parent {par[c]}")
    return tree


def look_at_quat(eye: np.ndarray, target: np.ndarray, up=(0.0, 1.0, 0.0)) -> np.ndarray:
    """World-to-camera quaternion for a camera at ``eye`` looking at ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    norm = np.linalg.norm(fwd)
    if norm < 1e-12:
        raise ParameterError("camera eye and target coincide")
    fwd = fwd / norm
    upv = np.asarray(up, dtype=np.float64)
    side = np.cross(fwd, upv)
    if np.linalg.norm(side) < 1e-8:
        side = np.cross(fwd, np.array([1.0, 0.0, 0.0]))
    side = side / np.linalg.norm(side)
    m = np.stack([side, np.cross(fwd, side), fwd])
    return mat_to_quat(m)


def orbit_camera(
    tree: LodTree,
    azimuth: float,
    elevation: float,
    distance_factor: float,
    width: int = 256,
    height: int = 256,
    fill: float = 0.8,
    near: float | None = None,
    far: float | None = None,
) -> Camera:
    """Camera on an orbit around the scene, framed to cover ``fill`` of the image."""
    lo = tree._aabb_lo[tree.root]
    hi = tree._aabb_hi[tree.root]
    return orbit_from_bounds(lo, hi, azimuth, elevation, distance_factor, width, height, fill, near, far)


def orbit_from_bounds(
    lo: np.ndarray,
    hi: np.ndarray,
    azimuth: float,
    elevation: float,
    distance_factor: float,
    width: int = 256,
    height: int = 256,
    fill: float = 0.8,
    near: float | None = None,
    far: float | None = None,
) -> Camera:
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    center = (lo + hi) / 2.0
    radius = float(np.linalg.norm(hi - lo)) / 2.0
    if radius <= 0.0:
        radius = 1.0
    dist = distance_factor * radius
    direction = np.array(
        [
            math.cos(elevation) * math.cos(azimuth),
            math.sin(elevation),
            math.cos(elevation) * math.sin(azimuth),
        ]
    )
    pos = center + dist * direction
    focal = fill * 0.5 * min(width, height) * dist / radius
    return Camera(
        position=pos,
        orientation=look_at_quat(pos, center),
        focal=focal,
        width=width,
        height=height,
        near=near if near is not None else max(1e-3, 0.01 * radius),
        far=far if far is not None else dist + 4.0 * radius,
    )


# ---------------------------------------------------------------------------
# JSON I/O


def _node_payload(nd: LodNode) -> dict:
    g = nd.gaussian
    return {
        "nid": nd.nid,
        "parent": nd.parent,
        "mean": [float(v) for v in g.mean],
        "scale": [float(v) for v in g.scale],
        "rot": [float(v) for v in g.rotation],
        "opacity": float(g.opacity),
        "color": [float(v) for v in g.color],
    }


def save_scene(tree: LodTree, path: str) -> None:
    payload = {
        "format": SCENE_FORMAT,
        "root": tree.root,
        "nodes": [_node_payload(nd) for nd in tree.nodes],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, separators=(",", ":"))
        fh.write("\n")


def _load_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneFormatError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise SceneFormatError(f"{path}: top level must be an object")
    return doc


def _require_keys(doc: dict, required: set[str], what: str) -> None:
    keys = set(doc)
    if keys != required:
        extra = keys - required
        missing = required - keys
        parts = []
        if missing:
            parts.append(f"missing {sorted(missing)}")
        if extra:
            parts.append(f"unknown {sorted(extra)}")
        raise SceneFormatError(f"{what}: {', '.join(parts)}")


def load_scene(path: str) -> LodTree:
    """Load and fully validate a scene; bounds are recomputed, never read."""
    doc = _load_json(path)
    _require_keys(doc, {"format", "root", "nodes"}, f"{path}")
    if doc["format"] != SCENE_FORMAT:
        raise SceneFormatError(f"{path}: format {doc['format']!r}, expected {SCENE_FORMAT!r}")
    raw = doc["nodes"]
    if not isinstance(raw, list) or not raw:
        raise SceneFormatError(f"{path}: nodes must be a non-empty array")
    n = len(raw)
    slots: list[LodNode | None] = [None] * n
    kids: dict[int, list[int]] = {}
    for entry in raw:
        if not isinstance(entry, dict):
            raise SceneFormatError(f"{path}: node entries must be objects")
        _require_keys(entry, {"nid", "parent", "mean", "scale", "rot", "opacity", "color"}, f"{path}: node")
        nid = entry["nid"]
        if not isinstance(nid, int) or not 0 <= nid < n:
            raise InvariantError(f"node id {nid!r} outside dense range 0..{n - 1}")
        if slots[nid] is not None:
            raise InvariantError(f"node {nid} appears twice")
        parent = entry["parent"]
        if parent is not None:
            if not isinstance(parent, int) or not 0 <= parent < n:
                raise InvariantError(f"node {nid} references missing parent nid {parent!r}")
            kids.setdefault(parent, []).append(nid)
        g = Gaussian(
            mean=np.asarray(entry["mean"], dtype=np.float64),
            scale=np.asarray(entry["scale"], dtype=np.float64),
            rotation=np.asarray(entry["rot"], dtype=np.float64),
            opacity=entry["opacity"],
            color=np.asarray(entry["color"], dtype=np.float64),
        )
        if g.mean.shape != (3,) or g.scale.shape != (3,) or g.rotation.shape != (4,) or g.color.shape != (3,):
            raise InvariantError(f"node {nid}: bad field arity")
        slots[nid] = LodNode(nid, g, parent, ())
    nodes = [nd for nd in slots if nd is not None]
    for nd in nodes:
        nd.children = tuple(sorted(kids.get(nd.nid, ())))
    root = doc["root"]
    if not isinstance(root, int):
        raise SceneFormatError(f"{path}: root must be an integer")
    return LodTree(nodes, root)


def save_camera(camera: Camera, path: str) -> None:
    payload = {
        "pos": [float(v) for v in camera.position],
        "rot": [float(v) for v in camera.orientation],
        "focal": camera.focal,
        "width": camera.width,
        "height": camera.height,
        "near": camera.near,
        "far": camera.far,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, separators=(",", ":"))
        fh.write("\n")


def load_camera(path: str) -> Camera:
    doc = _load_json(path)
    _require_keys(doc, {"pos", "rot", "focal", "width", "height", "near", "far"}, f"{path}")
    return Camera(
        position=np.asarray(doc["pos"], dtype=np.float64),
        orientation=np.asarray(doc["rot"], dtype=np.float64),
        focal=doc["focal"],
        width=doc["width"],
        height=doc["height"],
        near=doc["near"],
        far=doc["far"],
    )
