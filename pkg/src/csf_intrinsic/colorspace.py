"""Log-RGB <-> UVB transforms and the brightening-direction search.

The UVB space is log-RGB rotated so that its third axis is the brightening
direction ``n``: the direction along which a pixel moves in log-RGB when the
direct light reaching it increases.  The first two axes span a plane on which
shadowed and lit pixels of one material coincide.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateImage, NonPositiveChannel, NotUnit

CLAMP_FLOOR = 1e-4
WHITE = np.ones(3) / np.sqrt(3.0)


@dataclass(frozen=True)
class LinearRgbImage:
    data: np.ndarray  # (height, width, 3), values in (0, 1]

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 3 or data.shape[2] != 3 or data.shape[0] * data.shape[1] < 1:
            raise ValueError(f"expected an (h, w, 3) array, got shape {data.shape}")
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def as_array(img) -> np.ndarray:
    if isinstance(img, LinearRgbImage):
        return img.data
    data = np.asarray(img, dtype=float)
    if data.ndim != 3 or data.shape[2] != 3:
        raise ValueError(f"expected an (h, w, 3) array, got shape {data.shape}")
    return data


@dataclass(frozen=True)
class UvbBasis:
    n: np.ndarray
    u: np.ndarray
    v: np.ndarray

    @property
    def H(self) -> np.ndarray:
        return np.column_stack([self.u, self.v, self.n])

    @property
    def H_inv(self) -> np.ndarray:
        return np.linalg.inv(self.H)


@dataclass
class UvbImage:
    u: np.ndarray
    v: np.ndarray
    b: np.ndarray

    @property
    def shape(self):
        return self.b.shape

    @property
    def height(self) -> int:
        return self.b.shape[0]

    @property
    def width(self) -> int:
        return self.b.shape[1]

    def stacked(self) -> np.ndarray:
        return np.stack([self.u, self.v, self.b], axis=-1)


@dataclass
class ShadingResult:
    sb: np.ndarray
    shading: np.ndarray
    reflectance: np.ndarray
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class DirectionSearchConfig:
    step_deg: float = 1.0
    refine_step_deg: float = 0.1
    bin_width: float = 0.03
    max_pixels: int = 4096
    clamp_floor: float = CLAMP_FLOOR


def log_image(img, clamp_floor: float = CLAMP_FLOOR) -> np.ndarray:
    data = as_array(img)
    if clamp_floor > 0:
        data = np.maximum(data, clamp_floor)
    if not np.all(data > 0):
        raise NonPositiveChannel("image has channels <= 0 after clamping")
    return np.log(data)


def build_uvb_basis(n, tol: float = 1e-8) -> UvbBasis:
    n = np.asarray(n, dtype=float)
    if abs(np.linalg.norm(n) - 1.0) > tol:
        raise NotUnit(f"|n| = {np.linalg.norm(n):.12g}")
    e = np.zeros(3)
    e[int(np.argmin(np.abs(n)))] = 1.0
    u = np.cross(n, e)
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    return UvbBasis(n=n.copy(), u=u, v=v)


def to_uvb(img, basis: UvbBasis, clamp_floor: float = CLAMP_FLOOR) -> UvbImage:
    uvb = log_image(img, clamp_floor) @ basis.H
    return UvbImage(u=uvb[..., 0], v=uvb[..., 1], b=uvb[..., 2])


def from_uvb(uvb: UvbImage, basis: UvbBasis) -> np.ndarray:
    """Inverse of :func:`to_uvb` (returns linear RGB)."""
    return np.exp(uvb.stacked() @ basis.H_inv)


def recover_shading(sb, uvb: UvbImage, basis: UvbBasis, img) -> ShadingResult:
    sb = np.asarray(sb, dtype=float)
    if sb.shape != uvb.shape:
        raise ValueError(f"shading brightness shape {sb.shape} != image shape {uvb.shape}")
    if not np.all(np.isfinite(sb)):
        raise ValueError("shading brightness must be finite")
    zeros = np.zeros_like(sb)
    shading = np.exp(np.stack([zeros, zeros, sb], axis=-1) @ basis.H_inv)
    reflectance = as_array(img) / shading
    return ShadingResult(sb=sb, shading=shading, reflectance=reflectance)


def direction_from_illuminants(direct, ambient) -> np.ndarray:
    """Closed-form brightening direction for known direct/ambient lights."""
    n = np.log(np.asarray(direct, float) / np.asarray(ambient, float) + 1.0)
    return n / np.linalg.norm(n)


def _sphere(theta_deg, phi_deg):
    t, p = np.deg2rad(theta_deg), np.deg2rad(phi_deg)
    return np.stack([np.sin(t) * np.cos(p), np.sin(t) * np.sin(p), np.cos(t)], axis=-1)


def plane_entropy(logpix: np.ndarray, n, bin_width: float = 0.03) -> float:
    """Shannon entropy of the 2D histogram of ``logpix`` projected off ``n``."""
    basis = build_uvb_basis(n / np.linalg.norm(n))
    uv = logpix @ np.column_stack([basis.u, basis.v])
    # bins anchored at the data minimum: a global brightness change shifts
    # every point equally and must not change the binning
    bins = np.floor((uv - uv.min(axis=0)) / bin_width).astype(np.int64)
    keys = np.sort(bins[:, 0] * (bins[:, 1].max() + 1) + bins[:, 1])
    starts = np.flatnonzero(np.r_[True, keys[1:] != keys[:-1], True])
    p = np.diff(starts) / len(keys)
    return float(-(p * np.log(p)).sum())


def _plane_bases(ns):
    """Vectorised :func:`build_uvb_basis`: (m, 3) directions -> (m, 3, 2) [u v]."""
    ns = ns / np.linalg.norm(ns, axis=1, keepdims=True)
    e = np.zeros_like(ns)
    e[np.arange(len(ns)), np.argmin(np.abs(ns), axis=1)] = 1.0
    u = np.cross(ns, e)
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    v = np.cross(ns, u)
    return np.stack([u, v], axis=2)


def _entropies(logpix, ns, bin_width, chunk=128):
    """:func:`plane_entropy` for many directions at once.

    Keys of each candidate are offset into disjoint ranges, so one sort of the
    concatenation yields every candidate's histogram as runs of equal keys.
    """
    out = np.empty(len(ns))
    N = len(logpix)
    for a in range(0, len(ns), chunk):
        B = _plane_bases(ns[a:a + chunk])                 # (m, 3, 2)
        m = len(B)
        uv = (logpix @ B.transpose(1, 0, 2).reshape(3, -1)).reshape(N, m, 2).transpose(1, 0, 2)
        bins = np.floor((uv - uv.min(axis=1, keepdims=True)) / bin_width).astype(np.int64)
        keys = bins[..., 0] * (bins[..., 1].max(axis=1, keepdims=True) + 1) + bins[..., 1]
        keys = np.sort(keys, axis=1)
        flat = (keys + (keys.max() + 1) * np.arange(m)[:, None]).ravel()
        starts = np.flatnonzero(np.r_[True, flat[1:] != flat[:-1], True])
        p = np.diff(starts) / N
        col = starts[:-1] // N
        out[a:a + m] = np.bincount(col, weights=-(p * np.log(p)), minlength=m)
    return out


def _grid_argmin(logpix, thetas, phis, bin_width):
    tt, pp = np.meshgrid(thetas, phis, indexing="ij")
    h = np.round(_entropies(logpix, _sphere(tt.ravel(), pp.ravel()), bin_width), 12)
    k = int(np.argmin(h))  # first minimum: lexicographically smallest (i, j)
    i, j = divmod(k, len(phis))
    return h[k], i, j


def estimate_brightening_direction(img, cfg: DirectionSearchConfig | None = None) -> np.ndarray:
    """Entropy-minimizing brightening direction over the nonnegative octant.

    A 1-degree (theta, phi) grid is scanned with bins widened to the grid's
    angular smear, then a 0.1-degree grid around the winner is scanned at the
    configured bin width.  Ties go to the lexicographically smallest grid index.
    """
    cfg = cfg or DirectionSearchConfig()
    logpix = log_image(img, cfg.clamp_floor).reshape(-1, 3)
    if np.ptp(logpix, axis=0).max() < 1e-12:
        raise DegenerateImage("all pixels are identical")
    if len(logpix) > cfg.max_pixels:
        idx = np.linspace(0, len(logpix) - 1, cfg.max_pixels).round().astype(int)
        logpix = logpix[idx]

    # A grid step smears each material over extent*sin(step) on the plane; the
    # coarse pass widens its bins to match so the true minimum is not skipped.
    extent = float(np.linalg.norm(np.ptp(logpix, axis=0)))
    coarse_bin = max(cfg.bin_width, extent * np.sin(np.deg2rad(cfg.step_deg)))
    coarse = np.arange(0.0, 90.0 + 1e-9, cfg.step_deg)
    _, i, j = _grid_argmin(logpix, coarse, coarse, coarse_bin)
    t0, p0 = coarse[i], coarse[j]
    span = 1.5 * cfg.step_deg
    offsets = np.arange(-span, span + 1e-9, cfg.refine_step_deg)
    thetas = np.clip(t0 + offsets, 0.0, 90.0)
    phis = np.clip(p0 + offsets, 0.0, 90.0)
    thetas, phis = np.unique(thetas.round(9)), np.unique(phis.round(9))
    _, i, j = _grid_argmin(logpix, thetas, phis, cfg.bin_width)
    n = _sphere(thetas[i], phis[j])
    return n / np.linalg.norm(n)
