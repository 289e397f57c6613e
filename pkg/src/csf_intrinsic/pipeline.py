"""End-to-end decomposition, configuration, image I/O and dataset evaluation."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bias, clustering, colorspace, depth as depthmod, fusion, metrics, orders, reliability
from .colorspace import ShadingResult
from .errors import DegenerateImage, InvalidSpec, NoGap, StageError

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    seed: int = 0
    max_dim: int = 256
    clamp_floor: float = colorspace.CLAMP_FLOOR
    # brightening direction
    direction_step_deg: float = 1.0
    direction_refine_step_deg: float = 0.1
    direction_bin_width: float = 0.03
    direction_max_pixels: int = 4096
    # clustering and bias
    n_clusters: int = 0          # 0: count histogram maxima
    hist_bin: float = clustering.HIST_BIN
    hist_smooth: float = clustering.HIST_SMOOTH
    kmeans_max_iter: int = 300
    kmeans_tol: float = 1e-7
    cov_floor: float = clustering.COV_FLOOR
    patch: int = bias.PATCH
    patch_min_pixels: int = bias.MIN_PIXELS
    bias_bin: float = bias.BIAS_BIN
    # pairs
    window: int = orders.WINDOW
    stride: int = 0              # 0: size-dependent default
    # sigmoid weights
    w1: float = reliability.LN3 / 0.1
    w2: float = reliability.LN3 / 0.2
    w3: float = reliability.LN3 / 0.01
    w4: float = reliability.LN3 / 0.08
    w5: float = reliability.LN3 / 0.1
    w6: float = reliability.LN3 / 0.2
    rgb_only_sd_factor: float = 6.0
    # depth
    n_lights: int = depthmod.DEFAULT_LIGHTS
    sim_threshold: float = depthmod.SIM_THRESHOLD
    cast_shadows: bool = False
    # fusion
    alpha1: float = 1.0
    alpha2_init: float = 2.0
    tau: float = 0.2
    omega_min: float = 1.0 / 3.0
    rho: float = 5.0
    eta1: float = 0.05
    eta1_gain_min: float = 0.1
    eta1_gain_max: float = 0.5
    eta2: float = 1.0
    eta3: float = 1.0
    admm_max_iter: int = 500
    admm_tw: float = 1e-3
    admm_td: float = 1e-3
    eig_tol: float = 1e-8
    eig_max_iter: int = 20000
    eigensolver: str = "lanczos"
    refine_iter: int = 200
    choose_sweeps: int = 5
    choose_step: float = 0.1
    brightness_margin: float = 0.1
    # ablations
    equal_weights: bool = False
    disable: list = field(default_factory=list)   # method names, e.g. ["BOB"]
    # evaluation
    lmse_window: int = metrics.WINDOW
    lmse_step: int = metrics.STEP
    whdr_delta: float = metrics.WHDR_DELTA

    def __post_init__(self):
        bad = [m for m in self.disable if m not in orders.METHODS]
        if bad:
            raise InvalidSpec(f"unknown methods in 'disable': {bad}")
        if self.max_dim < 1 or self.window < 2 or self.stride < 0 or self.n_clusters < 0:
            raise InvalidSpec("max_dim, window, stride and n_clusters out of range")
        if not 0 <= self.brightness_margin < math.pi:
            raise InvalidSpec("brightness_margin must lie in [0, pi)")
        try:
            self.weights()
            self.csf()
        except ValueError as exc:
            raise InvalidSpec(str(exc)) from exc

    def weights(self) -> reliability.FeatureWeights:
        return reliability.FeatureWeights(self.w1, self.w2, self.w3, self.w4, self.w5,
                                          self.w6, self.rgb_only_sd_factor)

    def csf(self) -> fusion.CsfConfig:
        names = {f.name for f in dataclasses.fields(fusion.CsfConfig)}
        return fusion.CsfConfig(**{k: getattr(self, k) for k in names if hasattr(self, k)})

    def direction(self) -> colorspace.DirectionSearchConfig:
        return colorspace.DirectionSearchConfig(
            self.direction_step_deg, self.direction_refine_step_deg,
            self.direction_bin_width, self.direction_max_pixels, self.clamp_floor)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidSpec(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidSpec(str(exc)) from exc

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def load_config(path) -> PipelineConfig:
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    with open(path, "rb") as fh:
        return PipelineConfig.from_dict(tomllib.load(fh))


def dump_config(cfg: PipelineConfig) -> str:
    lines = []
    for k, v in cfg.to_dict().items():
        if isinstance(v, bool):
            lines.append(f"{k} = {'true' if v else 'false'}")
        elif isinstance(v, str):
            lines.append(f'{k} = "{v}"')
        elif isinstance(v, list):
            lines.append(f"{k} = [{', '.join(json.dumps(x) for x in v)}]")
        else:
            lines.append(f"{k} = {v!r}")
    return "\n".join(lines) + "\n"


# --- image I/O -------------------------------------------------------------

def read_image(path, clamp_floor: float = colorspace.CLAMP_FLOOR) -> np.ndarray:
    """8/16-bit PNG or PPM as linear floats in (0, 1], RGB channel order."""
    import cv2

    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise FileNotFoundError(f"cannot read image {path}")
    maxval = 65535.0 if raw.dtype == np.uint16 else 255.0
    img = raw.astype(float) / maxval
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    elif img.shape[2] == 4:
        img = img[..., :3]
    img = img[..., ::-1]
    return np.clip(img, clamp_floor, 1.0)


def read_gray(path) -> np.ndarray:
    import cv2

    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise FileNotFoundError(f"cannot read image {path}")
    maxval = 65535.0 if raw.dtype == np.uint16 else 255.0
    g = raw.astype(float) / maxval
    return g.mean(axis=2) if g.ndim == 3 else g


def write_png(path, img, bits: int = 16):
    """Write a [0, 1] gray or RGB float image."""
    import cv2

    arr = np.clip(np.asarray(img, dtype=float), 0.0, 1.0)
    maxval = 65535 if bits == 16 else 255
    out = np.round(arr * maxval).astype(np.uint16 if bits == 16 else np.uint8)
    if out.ndim == 3:
        out = out[..., ::-1]
    if not cv2.imwrite(str(path), out):
        raise OSError(f"cannot write {path}")


def _resize(arr, shape, area: bool):
    import cv2

    h, w = shape
    interp = cv2.INTER_AREA if area else cv2.INTER_LINEAR
    return cv2.resize(np.ascontiguousarray(arr, dtype=np.float64), (w, h), interpolation=interp)


# --- decomposition -----------------------------------------------------------

@dataclass
class Decomposition:
    result: ShadingResult
    n: np.ndarray
    k: int
    diagnostics: dict


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def _decode(state, scale):
    act = state.D > 0
    sb = fusion.decode_angles(state.Z, scale, mask=act if act.any() else None)
    if not act.all():
        sb[~act] = np.median(sb[act]) if act.any() else 0.0
    return sb


def decompose(img, depth: depthmod.DepthMap | None = None, cfg: PipelineConfig | None = None,
              diagnostics_path=None) -> Decomposition:
    """Split a linear RGB image into shading and reflectance."""
    cfg = cfg or PipelineConfig()
    full = colorspace.as_array(img)
    H, W_ = full.shape[:2]
    diag: dict = {"timings": {}}
    t0 = time.perf_counter()

    # working resolution
    f = min(1.0, cfg.max_dim / max(H, W_))
    if f < 1.0:
        h, w = max(1, round(H * f)), max(1, round(W_ * f))
        work = np.clip(_resize(full, (h, w), area=True), cfg.clamp_floor, 1.0)
        if depth is not None:
            dz = np.where(depth.valid, depth.depth, 0.0)
            wsum = _resize(depth.valid.astype(float), (h, w), area=True)
            dsum = _resize(dz, (h, w), area=True)
            dd = np.where(wsum > 0.5, dsum / np.maximum(wsum, 1e-12), 0.0)
            sx, sy = w / W_, h / H
            depth = depthmod.DepthMap(dd, depth.fx * sx, depth.fy * sy,
                                      (depth.cx + 0.5) * sx - 0.5, (depth.cy + 0.5) * sy - 0.5)
    else:
        h, w = H, W_
        work = full
    diag["working_shape"] = (h, w)

    try:
        n = colorspace.estimate_brightening_direction(work, cfg.direction())
    except DegenerateImage:
        n = colorspace.WHITE.copy()
        diag["direction_fallback"] = True
    basis = colorspace.build_uvb_basis(n)
    uvb = _stage("colorspace", colorspace.to_uvb, work, basis, cfg.clamp_floor)
    diag["n"] = n.tolist()
    diag["timings"]["direction"] = time.perf_counter() - t0

    if np.ptp(uvb.b) == 0 or h * w == 1:
        sb_work = np.zeros((h, w))
        k = 1
        diag["constant"] = True
    else:
        sb_work, k = _fuse(uvb, depth, cfg, diag)

    if (h, w) != (H, W_):
        sb = _resize(sb_work, (H, W_), area=False)
    else:
        sb = sb_work
    # anchor: the brightest pixel receives full direct light
    sb = sb - sb.max()
    full_uvb = colorspace.to_uvb(full, basis, cfg.clamp_floor)
    result = colorspace.recover_shading(sb, full_uvb, basis, np.maximum(full, cfg.clamp_floor))
    result.meta.update({"n": n.tolist(), "k": k})
    diag["timings"]["total"] = time.perf_counter() - t0
    if diagnostics_path is not None:
        with open(diagnostics_path, "w") as fh:
            for row in diag.get("csf_history", []):
                fh.write(json.dumps(row) + "\n")
    return Decomposition(result=result, n=n, k=k, diagnostics=diag)


def _fuse(uvb, depth, cfg: PipelineConfig, diag: dict):
    h, w = uvb.shape
    t = time.perf_counter()
    k = cfg.n_clusters or clustering.count_clusters(uvb, cfg.hist_bin, smooth=cfg.hist_smooth)
    k = min(k, h * w)
    cl = _stage("clustering", clustering.cluster_reflectance, uvb, k, cfg.seed,
                cfg.kmeans_max_iter, cfg.kmeans_tol, cfg.cov_floor)
    graph = _stage("bias", bias.build_bias_graph, uvb, cl, cfg.patch,
                   cfg.patch_min_pixels, cfg.bias_bin)
    cb = bias.solve_cluster_brightness(graph)
    ssb = bias.shifted_shading_brightness(uvb, cl, cb)
    diag.update({"k": k, "rb": cb.rb.tolist(), "bias_components": cb.components})
    diag["timings"]["clustering"] = time.perf_counter() - t

    t = time.perf_counter()
    stride = cfg.stride or orders.default_stride(h, w)
    nb = orders.build_neighborhood(w, h, stride, cfg.window)
    diag["stride"], diag["pairs"] = stride, len(nb)
    O = orders.compute_orders(uvb, cl, cb, nb)
    p_se = p_snc = points = None
    if depth is not None:
        if depth.shape != (h, w):
            raise StageError("depth", ValueError(f"depth shape {depth.shape} != image {(h, w)}"))
        p_se, p_snc, points, dinfo = _stage(
            "depth", depthmod.depth_features, depth, uvb.b, cl.labels, nb,
            cfg.n_lights, cfg.w3, cfg.w6, cfg.sim_threshold, cfg.cast_shadows)
        diag["depth"] = dinfo
        points = np.where(np.isfinite(points), points, 0.0)
    feats = reliability.compute_features(uvb, cl, ssb, nb, cfg.weights(), points, p_se, p_snc)
    C = reliability.confidence_table(feats, len(nb))
    for name in cfg.disable:
        C[:, orders.METHODS.index(name)] = 0.0
    diag["timings"]["orders"] = time.perf_counter() - t

    t = time.perf_counter()
    span = float(np.ptp(ssb))
    scale = min(1.0, (math.pi - cfg.brightness_margin) / span) if span > 0 else 1.0
    csf_cfg = cfg.csf()
    for attempt in range(6):
        table = orders.PairOrderTable(nb=nb, orders=O * scale, confidence=C)
        state = _stage("fusion", fusion.run_csf, table, csf_cfg)
        try:
            sb = _decode(state, scale)
            break
        except NoGap:
            scale /= 2.0
            log.info("no angular gap; retrying with scale %.4g", scale)
    else:
        raise StageError("fusion", NoGap("embedding angles never left a gap"))
    diag["scale"] = scale
    diag["csf_history"] = state.history
    diag["timings"]["fusion"] = time.perf_counter() - t
    return sb.reshape(h, w), k


# --- evaluation --------------------------------------------------------------

METRIC_COLUMNS = ("correlation", "mse", "lmse", "almse", "whdr")


def _load_manifest(path):
    path = Path(path)
    with open(path) as fh:
        entries = json.load(fh)
    if isinstance(entries, dict):
        entries = entries.get("images", [])
    base = path.parent
    out = []
    for e in entries:
        e = dict(e)
        for key in ("image", "depth", "intrinsics", "shading", "reflectance", "mask",
                    "judgments", "estimate_shading", "estimate_reflectance"):
            if e.get(key):
                p = Path(e[key])
                e[key] = p if p.is_absolute() else base / p
        e.setdefault("name", Path(str(e.get("image", len(out)))).stem)
        out.append(e)
    return out


def _score_entry(e, cfg: PipelineConfig) -> dict:
    if e.get("estimate_shading"):
        shading = np.load(e["estimate_shading"]) if str(e["estimate_shading"]).endswith(".npy") \
            else read_image(e["estimate_shading"])
        refl = np.load(e["estimate_reflectance"]) if str(e["estimate_reflectance"]).endswith(".npy") \
            else read_image(e["estimate_reflectance"])
    else:
        img = read_image(e["image"], cfg.clamp_floor)
        dm = None
        if e.get("depth"):
            dm = depthmod.read_depth_png(e["depth"], depthmod.read_intrinsics(e["intrinsics"]))
        res = decompose(img, dm, cfg).result
        shading, refl = res.shading, res.reflectance
    row = {}
    if e.get("shading") and e.get("reflectance"):
        load = lambda p: np.load(p) if str(p).endswith(".npy") else read_image(p)  # noqa: E731
        s_true, r_true = load(e["shading"]), load(e["reflectance"])
        if s_true.ndim == 3 and np.allclose(s_true, s_true[..., :1]):
            s_true = s_true[..., 0]
        if s_true.ndim == 2 and shading.ndim == 3:
            shading = shading.mean(axis=2)
        if e.get("mask"):
            m = read_gray(e["mask"]) > 0.5
            shading = shading * (m if shading.ndim == 2 else m[..., None])
            s_true = s_true * (m if s_true.ndim == 2 else m[..., None])
            refl, r_true = refl * m[..., None], r_true * m[..., None]
        row.update(metrics.decomposition_scores(shading, s_true, refl, r_true,
                                                cfg.lmse_window, cfg.lmse_step))
    if e.get("judgments"):
        row["whdr"] = metrics.whdr(refl, metrics.load_judgments(e["judgments"]), cfg.whdr_delta)
    return row


def evaluate(manifest, cfg: PipelineConfig | None = None, out_csv=None) -> dict:
    """Score every manifest entry; aggregate = mean over successful entries."""
    cfg = cfg or PipelineConfig()
    rows = []
    for e in _load_manifest(manifest):
        row = {"name": e["name"], "status": "ok", "error": ""}
        try:
            row.update(_score_entry(e, cfg))
        except Exception as exc:  # recorded per image, aggregation continues
            log.warning("evaluation of %s failed: %s", e["name"], exc)
            row.update(status="failed", error=str(exc))
        rows.append(row)
    ok = [r for r in rows if r["status"] == "ok"]
    if len(ok) < len(rows):
        log.warning("%d of %d images failed", len(rows) - len(ok), len(rows))
    aggregate = {}
    for col in METRIC_COLUMNS:
        vals = [r[col] for r in ok if col in r]
        if vals:
            aggregate[col] = float(np.mean(vals))
    if out_csv is not None:
        cols = ["name", *[c for c in METRIC_COLUMNS if any(c in r for r in rows)], "status", "error"]
        with open(out_csv, "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
            wr.writeheader()
            for r in rows:
                wr.writerow(r)
            wr.writerow({"name": "MEAN", **aggregate, "status": f"{len(ok)}/{len(rows)}"})
    return {"rows": rows, "aggregate": aggregate, "table": format_table(rows, aggregate)}


def format_table(rows, aggregate) -> str:
    cols = [c for c in METRIC_COLUMNS if any(c in r for r in rows)]
    width = max([len("MEAN"), *(len(str(r["name"])) for r in rows)])
    lines = [" ".join([f"{'image':<{width}}", *(f"{c:>11}" for c in cols), " status"])]
    for r in [*rows, {"name": "MEAN", **aggregate, "status": ""}]:
        cells = [f"{r.get(c, float('nan')):>11.4f}" for c in cols]
        lines.append(" ".join([f"{r['name']:<{width}}", *cells, " " + r.get("status", "")]))
    return "\n".join(lines)
