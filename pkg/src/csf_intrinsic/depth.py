"""Depth-derived perturbation features: surface normals and rendered direct shading.

Shadow edges are detected by rendering a gray Lambertian surface under a set
of candidate point lights, keeping the lights whose rendering correlates with
the image brightness, and measuring how much the kept renderings change
between two pixels.  Surface-normal changes come straight from the normals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .orders import PairNeighborhood
from .reliability import LN3, sigm

SIM_THRESHOLD = 0.2
DEFAULT_LIGHTS = 64


@dataclass
class DepthMap:
    depth: np.ndarray   # (h, w) metres; <= 0 or non-finite marks invalid pixels
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=float)
        if self.depth.ndim != 2:
            raise ValueError("depth must be a 2-D array")
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.depth) & (self.depth > 0)

    @property
    def shape(self):
        return self.depth.shape


@dataclass
class ShadingRender:
    light: np.ndarray   # 3-D position in camera coordinates
    gamma: np.ndarray   # (h, w) in [0, 1]
    sim: float = float("nan")


def back_project(depth: DepthMap) -> np.ndarray:
    """Camera-space points (h, w, 3); invalid pixels are NaN."""
    h, w = depth.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    z = np.where(depth.valid, depth.depth, np.nan)
    return np.stack([(xx - depth.cx) * z / depth.fx, (yy - depth.cy) * z / depth.fy, z], axis=-1)


def _tangent(P, valid, axis):
    """Difference of points along ``axis``: central where possible, else one-sided."""
    fwd = np.full(P.shape, np.nan)
    bwd = np.full(P.shape, np.nan)
    ok_f = np.zeros(valid.shape, bool)
    ok_b = np.zeros(valid.shape, bool)
    if axis == 0:
        fwd[:-1] = P[1:] - P[:-1]
        ok_f[:-1] = valid[1:] & valid[:-1]
        bwd[1:] = P[1:] - P[:-1]
        ok_b[1:] = valid[1:] & valid[:-1]
    else:
        fwd[:, :-1] = P[:, 1:] - P[:, :-1]
        ok_f[:, :-1] = valid[:, 1:] & valid[:, :-1]
        bwd[:, 1:] = P[:, 1:] - P[:, :-1]
        ok_b[:, 1:] = valid[:, 1:] & valid[:, :-1]
    both = ok_f & ok_b
    t = np.where(ok_f[..., None], fwd, bwd)
    t = np.where(both[..., None], 0.5 * (fwd + bwd), t)
    return t, ok_f | ok_b


def compute_normals(depth: DepthMap):
    """Unit normals facing the camera (``n_z < 0``) and a validity mask."""
    P = back_project(depth)
    valid = depth.valid
    tx, okx = _tangent(P, valid, 1)
    ty, oky = _tangent(P, valid, 0)
    ok = valid & okx & oky
    nrm = np.cross(tx, ty)
    length = np.linalg.norm(nrm, axis=-1)
    ok &= np.isfinite(length) & (length > 0)
    out = np.zeros(P.shape)
    out[ok] = nrm[ok] / length[ok][:, None]
    flip = ok & (out[..., 2] > 0)
    out[flip] *= -1
    return out, ok


def render_direct_shading(points: np.ndarray, normals: np.ndarray, light,
                          valid: np.ndarray | None = None,
                          shadows: "DepthMap | None" = None,
                          shadow_steps: int = 32) -> ShadingRender:
    """Lambertian direct shading ``max(0, n . unit(light - x))``.

    Cast shadows are off by default.  Passing the depth map as ``shadows``
    zeroes pixels whose path to the light passes behind the visible surface.
    """
    light = np.asarray(light, dtype=float)
    d = light - points
    dist = np.linalg.norm(d, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.sum(normals * d / dist, axis=-1)
    gamma = np.clip(np.nan_to_num(cos, nan=0.0), 0.0, 1.0)
    if shadows is not None:
        gamma = np.where(occluded(points, light, shadows, shadow_steps), 0.0, gamma)
    if valid is not None:
        gamma = np.where(valid, gamma, 0.0)
    return ShadingRender(light=light, gamma=gamma)


def occluded(points: np.ndarray, light, depth: DepthMap, steps: int = 32,
             margin: float = 0.01) -> np.ndarray:
    """Screen-space shadow test: march from each point toward ``light``.

    A sample that projects inside the image and lies more than ``margin``
    (relative depth) behind the surface seen at that pixel is blocked.  The
    first sample is skipped so a surface does not shadow itself.
    """
    h, w = depth.shape
    z_map = np.where(depth.valid, depth.depth, np.nan)
    blocked = np.zeros((h, w), bool)
    light = np.asarray(light, dtype=float)
    for t in np.linspace(0.0, 1.0, steps + 2)[2:-1]:
        s = points + t * (light - points)
        with np.errstate(invalid="ignore", divide="ignore"):
            x = np.round(s[..., 0] * depth.fx / s[..., 2] + depth.cx)
            y = np.round(s[..., 1] * depth.fy / s[..., 2] + depth.cy)
        inside = (s[..., 2] > 0) & (x >= 0) & (x < w) & (y >= 0) & (y < h)
        xi = np.where(inside, x, 0).astype(int)
        yi = np.where(inside, y, 0).astype(int)
        surf = z_map[yi, xi]
        with np.errstate(invalid="ignore"):
            blocked |= inside & (s[..., 2] > surf * (1.0 + margin))
    return blocked


def sample_illuminants(points: np.ndarray, valid: np.ndarray, count: int = DEFAULT_LIGHTS):
    """Cell centres of a ``g x g x g`` grid over the scene box, ``g^3 = count``.

    The box spans the valid back-projected points with its depth range
    widened to ``[-z_max, z_max]`` so that lights may sit behind the camera.
    """
    g = int(round(count ** (1.0 / 3.0)))
    if g < 1 or g ** 3 != count:
        raise ValueError(f"count must be a positive cube, got {count}")
    pts = points[valid]
    if len(pts) == 0:
        raise ValueError("no valid depth pixels")
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    zmax = np.abs(pts[:, 2]).max()
    lo[2], hi[2] = -zmax, zmax
    t = (np.arange(g) + 0.5) / g
    axes = [lo[i] + t * (hi[i] - lo[i]) for i in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    return [p for p in grid]


def category_similarity(gamma: np.ndarray, brightness: np.ndarray, labels: np.ndarray,
                        valid: np.ndarray | None = None) -> float:
    """Pixel-count weighted mean over categories of ``corr(gamma, exp(b))``."""
    m = np.ones(labels.shape, bool) if valid is None else np.asarray(valid, bool)
    g, e, lab = gamma[m], np.exp(brightness[m]), labels[m]
    n = len(lab)
    if n == 0:
        return 0.0
    total = 0.0
    for c in np.unique(lab):
        sel = lab == c
        gs, es = g[sel], e[sel]
        if len(gs) < 2 or gs.std() == 0 or es.std() == 0:
            continue
        total += sel.sum() / n * float(np.corrcoef(gs, es)[0, 1])
    return total


def select_promising(renders, brightness, labels, valid=None, threshold: float = SIM_THRESHOLD):
    """Renders whose category-wise similarity to ``exp(I^b)`` exceeds ``threshold``."""
    keep = []
    for r in renders:
        r.sim = category_similarity(r.gamma, brightness, labels, valid)
        if r.sim > threshold:
            keep.append(r)
    return keep


def p_se(nb: PairNeighborhood, renders, w3: float = LN3 / 0.01) -> np.ndarray:
    if not renders:
        return np.zeros(len(nb))
    diff = np.zeros(len(nb))
    for r in renders:
        g = r.gamma.ravel()
        diff += np.abs(g[nb.p] - g[nb.q])
    return sigm(diff / len(renders), w3)


def p_snc(nb: PairNeighborhood, normals: np.ndarray, valid: np.ndarray,
          w6: float = LN3 / 0.2) -> np.ndarray:
    N = normals.reshape(-1, 3)
    ok = valid.ravel()
    dot = np.clip(np.sum(N[nb.p] * N[nb.q], axis=1), -1.0, 1.0)
    ang = np.arccos(dot)
    return np.where(ok[nb.p] & ok[nb.q], sigm(ang, w6), 0.0)


def depth_features(depth: DepthMap, brightness, labels, nb: PairNeighborhood,
                   n_lights: int = DEFAULT_LIGHTS, w3: float = LN3 / 0.01,
                   w6: float = LN3 / 0.2, threshold: float = SIM_THRESHOLD,
                   cast_shadows: bool = False):
    """(P_SE, P_SNC, camera points, diagnostics) for the pairs of ``nb``."""
    points = back_project(depth)
    normals, ok = compute_normals(depth)
    lights = sample_illuminants(points, depth.valid, n_lights)
    shadows = depth if cast_shadows else None
    renders = [render_direct_shading(points, normals, L, ok, shadows) for L in lights]
    kept = select_promising(renders, brightness, labels, ok, threshold)
    info = {"lights": len(renders), "promising": len(kept),
            "similarities": [float(r.sim) for r in renders]}
    return p_se(nb, kept, w3), p_snc(nb, normals, ok, w6), points, info


def read_intrinsics(path) -> tuple:
    vals = [float(x) for x in open(path).read().split()]
    if len(vals) != 4:
        raise ValueError(f"{path}: expected 'fx fy cx cy', got {len(vals)} numbers")
    return tuple(vals)


def read_depth_png(path, intrinsics) -> DepthMap:
    """16-bit PNG of millimetres; zero marks missing depth."""
    import cv2

    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise FileNotFoundError(f"cannot read depth map {path}")
    raw = raw.astype(float)
    if raw.ndim == 3:
        raw = raw[..., 0]
    fx, fy, cx, cy = intrinsics
    return DepthMap(raw / 1000.0, fx, fy, cx, cy)
