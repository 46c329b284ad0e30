"""Shared fixtures and hypothesis strategies.

Unit and property tests run on small scenes built here; the acceptance suite
owns its own corpus (see test_acceptance.py) because generating it is the
expensive part and nothing else needs it.
"""

import numpy as np
import pytest
from hypothesis import strategies as st

import lodsplat as L
from lodsplat.scene import Gaussian, LodNode, LodTree


def chain_tree(n: int) -> LodTree:
    """A path of n nodes, nid i parented to i-1; scales shrink along it."""
    nodes = []
    for i in range(n):
        g = Gaussian(
            mean=np.array([0.0, 0.0, float(i) * 0.01]),
            scale=np.full(3, 1.0 * (0.5**i) + 1e-9),
            rotation=np.array([1.0, 0.0, 0.0, 0.0]),
            opacity=0.8,
            color=np.array([0.5, 0.5, 0.5]),
        )
        children = (i + 1,) if i + 1 < n else ()
        nodes.append(LodNode(i, g, None if i == 0 else i - 1, children))
    return LodTree(nodes)


def fanout_tree(child_counts: list[int]) -> LodTree:
    """Root plus one level per entry: node at level d has child_counts[d] kids each."""
    nodes = [LodNode(0, _plain_gaussian(1.0), None, ())]
    kids = {0: []}
    frontier = [0]
    scale = 1.0
    for k in child_counts:
        scale *= 0.5
        nxt = []
        for p in frontier:
            for _ in range(k):
                cid = len(nodes)
                nodes.append(LodNode(cid, _plain_gaussian(scale, cid), p, ()))
                kids.setdefault(p, []).append(cid)
                nxt.append(cid)
        frontier = nxt
    for nd in nodes:
        nd.children = tuple(kids.get(nd.nid, ()))
    return LodTree(nodes)


def _plain_gaussian(scale: float, salt: int = 0) -> Gaussian:
    rng = np.random.default_rng(salt)
    return Gaussian(
        mean=rng.uniform(-1.0, 1.0, 3),
        scale=np.full(3, scale),
        rotation=np.array([1.0, 0.0, 0.0, 0.0]),
        opacity=0.7,
        color=rng.uniform(0.0, 1.0, 3),
    )


@pytest.fixture
def small_tree():
    return L.gen_synthetic_tree(seed=42, node_budget=200)


@pytest.fixture
def small_slt(small_tree):
    return L.build_sltree(small_tree, 8)


@pytest.fixture
def small_camera(small_tree):
    return L.orbit_camera(small_tree, 0.9, 0.35, 2.0)


# hypothesis strategies; trees come from the deterministic generator so the
# shrink/containment contracts hold by construction

seeds = st.integers(min_value=0, max_value=2**31 - 1)
budgets = st.integers(min_value=1, max_value=300)
epsilons = st.floats(min_value=0.5, max_value=128.0, allow_nan=False)
taus = st.sampled_from([2, 3, 4, 8, 16, 32])


@st.composite
def trees(draw, max_budget=300):
    seed = draw(seeds)
    budget = draw(st.integers(min_value=1, max_value=max_budget))
    return L.gen_synthetic_tree(seed=seed, node_budget=budget)


@st.composite
def cameras_for(draw, tree):
    az = draw(st.floats(min_value=0.0, max_value=6.28, allow_nan=False))
    el = draw(st.floats(min_value=-1.2, max_value=1.2, allow_nan=False))
    dist = draw(st.floats(min_value=0.3, max_value=3.0, allow_nan=False))
    return L.orbit_camera(tree, az, el, dist, width=128, height=128)


@st.composite
def scene_views(draw, max_budget=300):
    tree = draw(trees(max_budget=max_budget))
    cam = draw(cameras_for(tree))
    eps = draw(epsilons)
    return tree, cam, eps
