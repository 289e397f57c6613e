"""Evaluation metrics for intrinsic decompositions.

Window-based errors follow the MIT intrinsic-images benchmark: every window
gets its own least-squares scale, residuals are summed over windows and the
sum is normalised so that an all-zero estimate scores 1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, ZeroVariance

WINDOW = 20
STEP = 10
WHDR_DELTA = 0.10


def _pair(est, truth):
    est = np.asarray(est, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if est.shape != truth.shape:
        raise DimensionMismatch(f"shapes differ: {est.shape} vs {truth.shape}")
    return est, truth


def _scaled_residual(est, truth) -> float:
    """``min_a |truth - a est|^2``."""
    ee = float(np.sum(est * est))
    a = float(np.sum(truth * est)) / ee if ee > 0 else 0.0
    return float(np.sum((truth - a * est) ** 2))


def mse(est, truth, scale_invariant: bool = True) -> float:
    est, truth = _pair(est, truth)
    if not scale_invariant:
        return float(np.mean((truth - est) ** 2))
    return _scaled_residual(est, truth) / truth.size


def _windows(shape, window, step):
    h, w = shape[:2]
    if window > h or window > w:
        raise ValueError(f"window {window} larger than image {h}x{w}")
    for i in range(0, h - window + 1, step):
        for j in range(0, w - window + 1, step):
            yield slice(i, i + window), slice(j, j + window)


def lmse(est, truth, window: int = WINDOW, step: int = STEP) -> float:
    est, truth = _pair(est, truth)
    ssq = total = 0.0
    for sy, sx in _windows(truth.shape, window, step):
        t, e = truth[sy, sx], est[sy, sx]
        ssq += _scaled_residual(e, t)
        total += float(np.sum(t * t))
    return ssq / total if total > 0 else 0.0


def almse(est, truth, window: int = WINDOW, step: int = STEP) -> float:
    """LMSE on mean-subtracted windows: invariant to a per-window affine map."""
    est, truth = _pair(est, truth)
    ssq = total = 0.0
    for sy, sx in _windows(truth.shape, window, step):
        t = truth[sy, sx] - truth[sy, sx].mean()
        e = est[sy, sx] - est[sy, sx].mean()
        ssq += _scaled_residual(e, t)
        total += float(np.sum(t * t))
    return ssq / total if total > 0 else 0.0


def correlation(est, truth) -> float:
    est, truth = _pair(est, truth)
    e = est.ravel() - est.mean()
    t = truth.ravel() - truth.mean()
    se, st = np.sqrt(np.mean(e * e)), np.sqrt(np.mean(t * t))
    if se == 0 or st == 0:
        raise ZeroVariance("correlation is undefined for a constant image")
    return float(np.clip(np.mean(e * t) / (se * st), -1.0, 1.0))


# --- WHDR --------------------------------------------------------------------

@dataclass
class Judgment:
    x1: float  # normalised to [0, 1]
    y1: float
    x2: float
    y2: float
    darker: str  # "1", "2" or "E"
    weight: float = 1.0


def load_judgments(path) -> list:
    with open(path) as fh:
        raw = json.load(fh)
    out = []
    for j in raw:
        darker = str(j["darker"]).upper()
        if darker not in ("1", "2", "E"):
            raise ValueError(f"bad 'darker' value {j['darker']!r}")
        out.append(Judgment(float(j["x1"]), float(j["y1"]), float(j["x2"]), float(j["y2"]),
                            darker, float(j.get("weight", 1.0))))
    return out


def luminance(reflectance) -> np.ndarray:
    r = np.asarray(reflectance, dtype=float)
    return r.mean(axis=-1) if r.ndim == 3 else r


def _pixel(x, y, h, w):
    if not (0 <= x <= 1 and 0 <= y <= 1):
        raise ValueError(f"judgment point ({x}, {y}) outside the image")
    return min(int(y * h), h - 1), min(int(x * w), w - 1)


def predict_darker(r1: float, r2: float, delta: float = WHDR_DELTA) -> str:
    r1, r2 = max(r1, 1e-10), max(r2, 1e-10)
    if r1 / r2 < 1.0 / (1.0 + delta):
        return "1"
    if r2 / r1 < 1.0 / (1.0 + delta):
        return "2"
    return "E"


def whdr(reflectance, judgments, delta: float = WHDR_DELTA) -> float:
    lum = luminance(reflectance)
    h, w = lum.shape
    wrong = total = 0.0
    for j in judgments:
        r1 = lum[_pixel(j.x1, j.y1, h, w)]
        r2 = lum[_pixel(j.x2, j.y2, h, w)]
        total += j.weight
        if predict_darker(r1, r2, delta) != j.darker:
            wrong += j.weight
    return wrong / total if total > 0 else 0.0


def decomposition_scores(shading_est, shading_true, refl_est, refl_true,
                         window: int = WINDOW, step: int = STEP) -> dict:
    """Each metric averaged over the shading and reflectance components."""
    out = {}
    for name, fn in (("correlation", correlation), ("mse", mse)):
        out[name] = 0.5 * (fn(shading_est, shading_true) + fn(refl_est, refl_true))
    for name, fn in (("lmse", lmse), ("almse", almse)):
        out[name] = 0.5 * (fn(shading_est, shading_true, window, step)
                           + fn(refl_est, refl_true, window, step))
    return out
