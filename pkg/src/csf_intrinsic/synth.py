"""Synthetic scenes rendered with the bi-illuminant image model.

Each scene is a piecewise-constant body reflectance lit by a direct light whose
per-pixel visibility ``gamma`` is a smooth field cut by (hard or soft) shadows,
plus a constant ambient light.  Ground-truth reflectance and shading follow
from the same model, so ``shading * reflectance == image`` exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .colorspace import WHITE, build_uvb_basis, direction_from_illuminants
from .errors import InvalidSpec


@dataclass
class SceneSpec:
    height: int = 64
    width: int = 64
    n_colors: int = 3
    colors: list | None = None  # explicit body reflectances, overrides n_colors
    direct: tuple = (4.0, 2.0, 1.0)
    ambient: tuple = (0.2, 0.2, 0.2)
    layout: str = "voronoi"  # voronoi | stripes | blocks
    gamma_range: tuple = (0.6, 1.0)  # smooth-shading range before shadows
    shading: str = "smooth"  # smooth | linear | constant
    shadows: list = field(default_factory=list)
    min_uv_separation: float = 0.2
    noise: float = 0.0

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InvalidSpec(f"unknown scene keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class SyntheticScene:
    image: np.ndarray          # (h, w, 3) in (0, 1]
    labels: np.ndarray         # (h, w) region index
    reflectance_colors: np.ndarray  # body reflectance per region, (k, 3)
    gamma: np.ndarray          # direct shading in [0, 1]
    direct: np.ndarray
    ambient: np.ndarray
    reflectance: np.ndarray    # ground truth R
    shading: np.ndarray        # ground truth S
    scale: float               # image = R_b (gamma L_d + L_a) / scale

    @property
    def n(self) -> np.ndarray:
        if np.any(self.ambient <= 0):
            raise InvalidSpec("the brightening direction needs ambient light in every channel")
        return direction_from_illuminants(self.direct, self.ambient)

    @property
    def sb(self) -> np.ndarray:
        """True shading brightness: log S projected on the brightening direction."""
        return np.log(self.shading) @ self.n

    @property
    def rb(self) -> np.ndarray:
        return np.log(self.reflectance) @ self.n


def _validate(spec: SceneSpec):
    if spec.height < 1 or spec.width < 1:
        raise InvalidSpec("scene dimensions must be positive")
    direct, ambient = np.asarray(spec.direct, float), np.asarray(spec.ambient, float)
    if direct.shape != (3,) or ambient.shape != (3,):
        raise InvalidSpec("illuminants must be 3-vectors")
    if np.any(direct < 0) or np.any(ambient < 0):
        raise InvalidSpec("illuminants must be nonnegative")
    if np.any(direct + ambient <= 0):
        raise InvalidSpec("every channel needs some direct or ambient light")
    lo, hi = spec.gamma_range
    if not 0.0 <= lo <= hi <= 1.0:
        raise InvalidSpec("gamma_range must satisfy 0 <= lo <= hi <= 1")
    if spec.layout not in ("voronoi", "stripes", "blocks"):
        raise InvalidSpec(f"unknown layout {spec.layout!r}")
    if spec.shading not in ("smooth", "linear", "constant"):
        raise InvalidSpec(f"unknown shading {spec.shading!r}")
    if spec.colors is None and spec.n_colors < 1:
        raise InvalidSpec("need at least one color")


def _pick_colors(k, n, min_sep, rng):
    basis = build_uvb_basis(n)
    plane = np.column_stack([basis.u, basis.v])
    colors, uv = [], []
    for _ in range(20000):
        c = rng.uniform(0.15, 0.95, size=3)
        p = np.log(c) @ plane
        if all(np.linalg.norm(p - q) >= min_sep for q in uv):
            colors.append(c)
            uv.append(p)
            if len(colors) == k:
                return np.array(colors)
    raise InvalidSpec(f"could not place {k} colors {min_sep} apart on the UV plane")


def _layout(spec, k, rng):
    h, w = spec.height, spec.width
    yy, xx = np.mgrid[0:h, 0:w]
    if spec.layout == "stripes":
        return np.minimum((xx * k) // w, k - 1)
    if spec.layout == "blocks":
        side = int(np.ceil(np.sqrt(k)))
        cell = (yy * side // h) * side + (xx * side // w)
        return cell % k
    # voronoi: seeds drawn until every region is non-empty
    for _ in range(100):
        seeds = rng.uniform([0, 0], [h, w], size=(k, 2))
        d = (yy[..., None] - seeds[:, 0]) ** 2 + (xx[..., None] - seeds[:, 1]) ** 2
        labels = np.argmin(d, axis=-1)
        if len(np.unique(labels)) == k and np.bincount(labels.ravel()).min() >= 0.03 * h * w / k:
            return labels
    raise InvalidSpec("could not build a voronoi layout with non-empty regions")


def _smooth_field(spec, rng):
    h, w = spec.height, spec.width
    yy, xx = np.mgrid[0:h, 0:w]
    y, x = yy / max(h - 1, 1), xx / max(w - 1, 1)
    if spec.shading == "constant":
        return np.ones((h, w))
    if spec.shading == "linear":
        a, b = rng.uniform(-1, 1, size=2)
        f = a * x + b * y
    else:
        # low-frequency Lambert-like falloff from a random "light centre"
        cy, cx = rng.uniform(0.2, 0.8, size=2)
        r2 = (y - cy) ** 2 + (x - cx) ** 2
        f = 1.0 / np.sqrt(1.0 + 2.0 * r2)
    f = f - f.min()
    return f / f.max() if f.max() > 0 else np.ones((h, w))


def _shadow_factor(shape, h, w):
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    kind = shape.get("type", "halfplane")
    if kind == "halfplane":
        ang = np.deg2rad(shape.get("angle", 30.0))
        off = shape.get("offset", 0.0)  # fraction of the diagonal from the centre
        cy, cx = (h - 1) / 2, (w - 1) / 2
        sd = (xx - cx) * np.cos(ang) + (yy - cy) * np.sin(ang) - off * np.hypot(h, w)
    elif kind == "disk":
        cy, cx = shape.get("center", (h / 2, w / 2))
        sd = shape.get("radius", min(h, w) / 4) - np.hypot(yy - cy, xx - cx)
    elif kind == "rect":
        y0, x0, y1, x1 = shape["box"]
        sd = np.minimum.reduce([yy - y0, y1 - yy, xx - x0, x1 - xx])
    else:
        raise InvalidSpec(f"unknown shadow type {kind!r}")
    # sd > 0 inside the shadow
    soft = float(shape.get("softness", 0.0))
    depth = float(shape.get("depth", 1.0))  # 1 = fully blocks the direct light
    if soft <= 0:
        inside = (sd > 0).astype(float)
    else:
        t = np.clip(0.5 + sd / soft, 0.0, 1.0)
        inside = t * t * (3 - 2 * t)
    return 1.0 - depth * inside


def generate_scene(spec: SceneSpec | dict, seed: int = 0) -> SyntheticScene:
    if isinstance(spec, dict):
        spec = SceneSpec.from_dict(spec)
    _validate(spec)
    rng = np.random.default_rng(seed)
    direct = np.asarray(spec.direct, float)
    ambient = np.asarray(spec.ambient, float)
    # colour separation is measured off the brightening direction when it exists
    n = direction_from_illuminants(direct, ambient) if np.all(ambient > 0) else WHITE

    if spec.colors is not None:
        colors = np.asarray(spec.colors, float)
        if colors.ndim != 2 or colors.shape[1] != 3 or np.any(colors <= 0):
            raise InvalidSpec("colors must be a (k, 3) array of positive values")
    else:
        colors = _pick_colors(spec.n_colors, n, spec.min_uv_separation, rng)
    k = len(colors)
    labels = _layout(spec, k, rng)

    lo, hi = spec.gamma_range
    gamma = lo + (hi - lo) * _smooth_field(spec, rng)
    for shape in spec.shadows:
        gamma = gamma * _shadow_factor(shape, spec.height, spec.width)
    gamma = np.clip(gamma, 0.0, 1.0)

    body = colors[labels]
    raw = body * (gamma[..., None] * direct + ambient)
    scale = float(raw.max())
    reflectance = body * (direct + ambient) / scale
    shading = (gamma[..., None] * direct + ambient) / (direct + ambient)
    image = reflectance * shading
    if spec.noise > 0:
        image = image * np.exp(rng.normal(0.0, spec.noise, size=image.shape))
        image = np.clip(image, 1e-4, 1.0)
        reflectance = image / shading
    return SyntheticScene(image=image, labels=labels, reflectance_colors=colors,
                          gamma=gamma, direct=direct, ambient=ambient,
                          reflectance=reflectance, shading=shading, scale=scale)


def random_scene_spec(rng, size=128, n_colors=(3, 6), ratio=(0.05, 0.5),
                      tint=(0.6, 1.0), direct_range=(0.6, 1.0),
                      gamma_range=(0.6, 1.0)) -> SceneSpec:
    """Scene spec with random colored lights, 3-6 colors and mixed shadows.

    ``ratio`` bounds the ambient/direct intensity ratio and ``tint`` the
    per-channel factors that make the ambient light's color differ from the
    direct light's.
    """
    k = int(rng.integers(n_colors[0], n_colors[1] + 1))
    direct = rng.uniform(*direct_range, size=3) * 4.0
    r = rng.uniform(*ratio)
    tint = rng.uniform(*tint, size=3)
    ambient = r * direct.mean() * tint / tint.mean()
    shadows = [
        {"type": "halfplane", "angle": float(rng.uniform(0, 360)),
         "offset": float(rng.uniform(0.1, 0.25)), "softness": 0.0},
        {"type": "disk", "center": (float(rng.uniform(0.25, 0.75) * size),
                                    float(rng.uniform(0.25, 0.75) * size)),
         "radius": float(rng.uniform(0.1, 0.2) * size),
         "softness": float(rng.uniform(4, 10)), "depth": float(rng.uniform(0.5, 1.0))},
    ]
    return SceneSpec(height=size, width=size, n_colors=k, direct=tuple(direct),
                     ambient=tuple(ambient), layout="voronoi", gamma_range=tuple(gamma_range),
                     shading="smooth", shadows=shadows)
