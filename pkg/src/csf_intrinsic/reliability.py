"""Perturbation probabilities and Noisy-Or confidences for each estimator.

Every perturbation ``f`` gets a per-pair probability ``P_f(p, q)`` from an
image feature passed through ``sigm``; an estimator's confidence is the
product of ``1 - P_f`` over the perturbations it is not robust to.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._filters import mean3x3, var3x3
from .orders import BO, BOB, FS, SS, PairNeighborhood

LN3 = float(np.log(3.0))
PERTURBATIONS = ("CE", "LCV", "SE", "RC", "SNC", "SD")

# Perturbations each method is *not* robust to ("No" entries of the robustness
# table).  SD for SS is "moderate": it uses a halved weight, see sd_weights().
SENSITIVE = {
    BO: ("LCV", "RC"),
    BOB: ("CE", "LCV"),
    FS: ("SE", "SNC", "SD"),
    SS: ("LCV", "SE", "SD"),
}


@dataclass
class FeatureWeights:
    w1: float = LN3 / 0.1   # clustering error, step edge on shifted shading
    w2: float = LN3 / 0.2   # local colour variance
    w3: float = LN3 / 0.01  # shadow edges, rendered direct-shading difference
    w4: float = LN3 / 0.08  # reflectance change, chromaticity distance
    w5: float = LN3 / 0.1   # reflectance change, brightness step edge
    w6: float = LN3 / 0.2   # surface normal change, angle in radians
    rgb_only_sd_factor: float = 6.0

    def __post_init__(self):
        for name in ("w1", "w2", "w3", "w4", "w5", "w6", "rgb_only_sd_factor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def sd_weights(self, median_distance: float, rgb_only: bool):
        """(w7 for FS, w7 for SS); FS gets twice the SS weight."""
        w_fs = LN3 / max(median_distance, 1e-12)
        if rgb_only:
            w_fs *= self.rgb_only_sd_factor
        return w_fs, w_fs / 2.0


def sigm(x, w):
    """``2 / (1 + exp(-w x)) - 1``, written as ``tanh(w x / 2)`` for stability."""
    return np.tanh(0.5 * w * np.asarray(x, dtype=float))


# --- feature maps --------------------------------------------------------

def _round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def segment_offsets(oy: int, ox: int):
    """Integer points of the digital segment from (0, 0) to (oy, ox).

    Rounding ties would make the point set depend on the tracing direction, so
    the segment is always traced from the endpoint with the lexicographically
    smaller position and the points are then listed from (0, 0).
    """
    n = max(abs(oy), abs(ox))
    t = np.arange(n + 1)
    if n == 0:
        return np.zeros(1, int), np.zeros(1, int)
    if (oy, ox) < (0, 0):
        sy, sx = segment_offsets(-oy, -ox)
        return (oy + sy)[::-1], (ox + sx)[::-1]
    return (_round_half_away(t * oy / n).astype(int),
            _round_half_away(t * ox / n).astype(int))


def step_edge(field: np.ndarray, nb: PairNeighborhood, smooth: bool = True) -> np.ndarray:
    """Largest absolute step of the 3x3-mean-smoothed field along each segment p -> q."""
    f = mean3x3(field) if smooth else np.asarray(field, float)
    flat = f.ravel()
    w = nb.width
    out = np.zeros(len(nb))
    # q - p offsets are (-dy, -dx)
    code = (-nb.dy.astype(np.int64)) * (4 * w + 1) + (-nb.dx.astype(np.int64))
    uniq, inv = np.unique(code, return_inverse=True)
    for gi, c in enumerate(uniq):
        idx = np.flatnonzero(inv == gi)
        oy, ox = int(-nb.dy[idx[0]]), int(-nb.dx[idx[0]])
        sy, sx = segment_offsets(oy, ox)
        lin = sy * w + sx
        p = nb.p[idx]
        prev = flat[p + lin[0]]
        best = np.zeros(len(idx))
        for s in lin[1:]:
            cur = flat[p + s]
            np.maximum(best, np.abs(cur - prev), out=best)
            prev = cur
        out[idx] = best
    return out


def chroma_sigma(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Standard deviation of the (u, v) chromaticity vector in each 3x3 window."""
    return np.sqrt(var3x3(u) + var3x3(v))


# --- per-pair perturbation probabilities ------------------------------------

def p_ce(pc_p, pc_q, edge, w1=LN3 / 0.1):
    return (1.0 - np.asarray(pc_p) * np.asarray(pc_q)) * sigm(edge, w1)


def p_lcv(sigma_p, sigma_q, w2=LN3 / 0.2):
    return sigm(np.maximum(sigma_p, sigma_q), w2)


def p_rc(d_uv, edge_b, w4=LN3 / 0.08, w5=LN3 / 0.1):
    return sigm(d_uv, w4) * sigm(edge_b, w5)


def p_sd(distance, w7):
    return sigm(distance, w7)


def confidence(probs: dict, method: int, sd_probs: dict | None = None):
    """Noisy-Or confidence of ``method`` given per-perturbation probabilities.

    ``probs`` maps perturbation names to arrays (or scalars); absent names are
    treated as probability 0.  ``sd_probs`` holds the method-specific SD term.
    """
    c = 1.0
    for f in SENSITIVE[method]:
        if f == "SD":
            pf = (sd_probs or {}).get(method, probs.get("SD", 0.0))
        else:
            pf = probs.get(f, 0.0)
        c = c * (1.0 - np.asarray(pf, dtype=float))
    return c


@dataclass
class PairFeatures:
    probs: dict           # perturbation name -> (n_pairs,) probability
    sd_probs: dict        # method -> (n_pairs,) SD probability
    median_distance: float


def compute_features(uvb, clustering, shifted_sb, nb: PairNeighborhood,
                     weights: FeatureWeights | None = None,
                     points3d: np.ndarray | None = None,
                     p_se_pairs: np.ndarray | None = None,
                     p_snc_pairs: np.ndarray | None = None) -> PairFeatures:
    """All perturbation probabilities for the pairs of ``nb``.

    ``points3d`` (h, w, 3) switches SD to camera-space distances; SE and SNC
    are only included when their per-pair probabilities are supplied.
    """
    weights = weights or FeatureWeights()
    u, v = uvb.u.ravel(), uvb.v.ravel()
    pc = clustering.pc.ravel()
    probs = {}
    probs["CE"] = p_ce(pc[nb.p], pc[nb.q], step_edge(shifted_sb, nb), weights.w1)
    sigma = chroma_sigma(uvb.u, uvb.v).ravel()
    probs["LCV"] = p_lcv(sigma[nb.p], sigma[nb.q], weights.w2)
    d_uv = np.hypot(u[nb.p] - u[nb.q], v[nb.p] - v[nb.q])
    probs["RC"] = p_rc(d_uv, step_edge(uvb.b, nb), weights.w4, weights.w5)

    rgb_only = points3d is None
    if rgb_only:
        dist = np.hypot(nb.dy.astype(float), nb.dx.astype(float))
    else:
        pts = points3d.reshape(-1, 3)
        dist = np.linalg.norm(pts[nb.p] - pts[nb.q], axis=1)
        dist = np.where(np.isfinite(dist), dist, 0.0)
    med = float(np.median(dist)) if len(dist) else 1.0
    w_fs, w_ss = weights.sd_weights(med, rgb_only)
    sd_probs = {FS: p_sd(dist, w_fs), SS: p_sd(dist, w_ss)}
    probs["SD"] = sd_probs[FS]
    if p_se_pairs is not None:
        probs["SE"] = np.asarray(p_se_pairs, float)
    if p_snc_pairs is not None:
        probs["SNC"] = np.asarray(p_snc_pairs, float)
    return PairFeatures(probs=probs, sd_probs=sd_probs, median_distance=med)


def confidence_table(features: PairFeatures, n_pairs: int) -> np.ndarray:
    out = np.empty((n_pairs, 4))
    for m in (BO, BOB, FS, SS):
        out[:, m] = np.broadcast_to(confidence(features.probs, m, features.sd_probs), n_pairs)
    return out
