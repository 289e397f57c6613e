"""Pairwise shading-order estimators over a windowed pixel-pair graph.

Four estimators give the order ``S^b(p) - S^b(q)`` under different
assumptions: brightness order (same material), brightness order minus the
cluster bias (different materials), first-order smoothness (equal shading) and
second-order smoothness (locally linear shading).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bias import ClusterBrightness
from .clustering import ReflectanceClustering
from .colorspace import UvbImage

METHODS = ("BO", "BOB", "FS", "SS")
BO, BOB, FS, SS = range(4)
WINDOW = 30


@dataclass
class PairNeighborhood:
    height: int
    width: int
    p: np.ndarray   # flat pixel index, p < q
    q: np.ndarray
    dy: np.ndarray  # p_y - q_y
    dx: np.ndarray  # p_x - q_x

    def __len__(self):
        return len(self.p)

    @property
    def n_pixels(self) -> int:
        return self.height * self.width


@dataclass
class PairOrderTable:
    nb: PairNeighborhood
    orders: np.ndarray      # (n_pairs, 4), sign convention O(p, q) for p < q
    confidence: np.ndarray  # (n_pairs, 4) in [0, 1]

    def __len__(self):
        return len(self.nb)


def default_stride(height: int, width: int) -> int:
    """Offset stride keeping the pair table tractable: 1 up to 64x64, 2 up to 128x128, else 3."""
    n = height * width
    if n <= 64 * 64:
        return 1
    return 2 if n <= 128 * 128 else 3


def window_offsets(stride: int = 1, window: int = WINDOW, keep_adjacent: bool = True):
    """Forward half of the square window: offsets (dy, dx) with dy > 0 or (dy == 0, dx > 0).

    With ``stride > 1`` only offsets whose components are multiples of the
    stride are kept, plus the 8-neighbourhood when ``keep_adjacent``.
    """
    r = window // 2
    out = []
    for dy in range(0, r + 1):
        for dx in range(-r, r + 1):
            if dy == 0 and dx <= 0:
                continue
            on_grid = dy % stride == 0 and dx % stride == 0
            if on_grid or (keep_adjacent and max(abs(dy), abs(dx)) <= 1):
                out.append((dy, dx))
    return out


def build_neighborhood(width: int, height: int, stride: int = 1,
                       window: int = WINDOW, keep_adjacent: bool = True) -> PairNeighborhood:
    if width < 1 or height < 1:
        raise ValueError("image dimensions must be >= 1")
    yy, xx = np.mgrid[0:height, 0:width]
    ps, qs, dys, dxs = [], [], [], []
    for oy, ox in window_offsets(stride, window, keep_adjacent):
        ok = (yy + oy < height) & (xx + ox >= 0) & (xx + ox < width)
        py, px = yy[ok], xx[ok]
        if not len(py):
            continue
        p = py * width + px
        ps.append(p)
        qs.append(p + oy * width + ox)
        dys.append(np.full(len(p), -oy))
        dxs.append(np.full(len(p), -ox))
    cat = (lambda a, dt: np.concatenate(a).astype(dt) if a else np.zeros(0, dt))
    return PairNeighborhood(height=height, width=width,
                            p=cat(ps, np.int64), q=cat(qs, np.int64),
                            dy=cat(dys, np.int32), dx=cat(dxs, np.int32))


# --- single-pair estimators -------------------------------------------------

def _flat(field, idx):
    return np.asarray(field).ravel()[idx]


def estimate_bo(uvb: UvbImage, pair) -> float:
    p, q = pair
    return float(_flat(uvb.b, p) - _flat(uvb.b, q))


def estimate_bob(uvb: UvbImage, clustering: ReflectanceClustering,
                 cb: ClusterBrightness, pair) -> float:
    p, q = pair
    lp, lq = _flat(clustering.labels, p), _flat(clustering.labels, q)
    return estimate_bo(uvb, pair) - float(cb.rb[lp] - cb.rb[lq])


def estimate_fs(pair=None) -> float:
    return 0.0


def brightness_gradient(b: np.ndarray):
    """(d/dy, d/dx) by central differences, one-sided at the border."""
    b = np.asarray(b, dtype=float)
    gy = np.gradient(b, axis=0) if b.shape[0] > 1 else np.zeros_like(b)
    gx = np.gradient(b, axis=1) if b.shape[1] > 1 else np.zeros_like(b)
    return gy, gx


def estimate_ss(uvb: UvbImage, pair, grad=None) -> float:
    p, q = pair
    w = uvb.width
    gy, gx = grad if grad is not None else brightness_gradient(uvb.b)
    py, px = divmod(int(p), w)
    qy, qx = divmod(int(q), w)
    return float(_flat(gx, p) * (px - qx) + _flat(gy, p) * (py - qy))


# --- vectorised table --------------------------------------------------------

def compute_orders(uvb: UvbImage, clustering: ReflectanceClustering,
                   cb: ClusterBrightness, nb: PairNeighborhood) -> np.ndarray:
    b = uvb.b.ravel()
    rb = cb.rb[clustering.labels.ravel()]
    gy, gx = brightness_gradient(uvb.b)
    out = np.empty((len(nb), 4))
    out[:, BO] = b[nb.p] - b[nb.q]
    out[:, BOB] = out[:, BO] - (rb[nb.p] - rb[nb.q])
    out[:, FS] = 0.0
    out[:, SS] = gx.ravel()[nb.p] * nb.dx + gy.ravel()[nb.p] * nb.dy
    return out
