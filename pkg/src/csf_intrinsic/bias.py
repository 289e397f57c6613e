"""Reflectance-brightness biases between clusters and their MST fusion."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ._filters import median3x3
from .clustering import ReflectanceClustering
from .colorspace import UvbImage

PATCH = 10
MIN_PIXELS = 10
BIAS_BIN = 0.02


@dataclass
class BiasGraph:
    k: int
    bias: np.ndarray         # (k, k) antisymmetric
    reliability: np.ndarray  # (k, k) vote counts F, symmetric
    votes: dict = field(default_factory=dict)  # (j, k) -> list of patch measures, j < k

    @property
    def defined(self) -> np.ndarray:
        return self.reliability > 0


@dataclass
class ClusterBrightness:
    rb: np.ndarray
    tree: list               # (j, k, 1/F) edges kept by the MST
    components: list = field(default_factory=list)


def histogram_mode(values, bin_width: float = BIAS_BIN):
    """Location and count of the fullest bin; ties prefer the bin nearest zero.

    The location is the median of the votes inside the bin rather than the bin
    centre, so quantisation does not accumulate along MST paths.
    """
    values = np.asarray(values, dtype=float)
    idx = np.round(values / bin_width).astype(np.int64)
    centers, counts = np.unique(idx, return_counts=True)
    best = counts.max()
    cands = centers[counts == best]
    c = cands[np.argmin(np.abs(cands))]
    return float(np.median(values[idx == c])), int(best)


def patch_measures(uvb: UvbImage, clustering: ReflectanceClustering,
                   patch: int = PATCH, min_pixels: int = MIN_PIXELS) -> dict:
    """Per cluster pair (j < k), the list of patch-wise median brightness differences."""
    h, w = uvb.shape
    b, labels = uvb.b, clustering.labels
    votes: dict = {}
    for y0 in range(0, h, patch):
        for x0 in range(0, w, patch):
            lab = labels[y0:y0 + patch, x0:x0 + patch].ravel()
            bb = b[y0:y0 + patch, x0:x0 + patch].ravel()
            counts = np.bincount(lab, minlength=clustering.k)
            present = np.flatnonzero(counts >= min_pixels)
            if len(present) < 2:
                continue
            med = {j: np.median(bb[lab == j]) for j in present}
            for a in range(len(present)):
                for c in range(a + 1, len(present)):
                    j, k = int(present[a]), int(present[c])
                    votes.setdefault((j, k), []).append(med[j] - med[k])
    return votes


def build_bias_graph(uvb: UvbImage, clustering: ReflectanceClustering,
                     patch: int = PATCH, min_pixels: int = MIN_PIXELS,
                     bin_width: float = BIAS_BIN) -> BiasGraph:
    k = clustering.k
    bias = np.zeros((k, k))
    rel = np.zeros((k, k))
    votes = patch_measures(uvb, clustering, patch, min_pixels)
    for (j, c), vals in votes.items():
        center, count = histogram_mode(vals, bin_width)
        bias[j, c], bias[c, j] = center, -center
        rel[j, c] = rel[c, j] = count
    return BiasGraph(k=k, bias=bias, reliability=rel, votes=votes)


class _DisjointSet:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[max(ra, rb)] = min(ra, rb)
        return True


def minimum_spanning_tree(k: int, reliability: np.ndarray) -> list:
    """Kruskal over edges weighted 1/F, ordered by (weight, j, k)."""
    edges = sorted((1.0 / reliability[j, c], j, c)
                   for j in range(k) for c in range(j + 1, k) if reliability[j, c] > 0)
    dsu = _DisjointSet(k)
    return [(j, c, wt) for wt, j, c in edges if dsu.union(j, c)]


def solve_cluster_brightness(graph: BiasGraph) -> ClusterBrightness:
    k = graph.k
    tree = minimum_spanning_tree(k, graph.reliability)
    adj = {j: [] for j in range(k)}
    for j, c, _ in tree:
        adj[j].append(c)
        adj[c].append(j)
    rb = np.zeros(k)
    seen = np.zeros(k, dtype=bool)
    components = []
    for root in range(k):
        if seen[root]:
            continue
        seen[root] = True
        comp, queue = [root], deque([root])
        while queue:
            a = queue.popleft()
            for c in sorted(adj[a]):
                if not seen[c]:
                    seen[c] = True
                    # bias(a, c) = rb(a) - rb(c)
                    rb[c] = rb[a] - graph.bias[a, c]
                    comp.append(c)
                    queue.append(c)
        components.append(sorted(comp))
    return ClusterBrightness(rb=rb, tree=tree, components=components)


def shifted_shading_brightness(uvb: UvbImage, clustering: ReflectanceClustering,
                               cb: ClusterBrightness) -> np.ndarray:
    return median3x3(uvb.b - cb.rb[clustering.labels])
