"""Command-line entry point: ``csf-intrinsic {decompose,evaluate,synth}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np


def _set_threads(n):
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                    "NUMBA_NUM_THREADS"):
            os.environ[var] = str(n)


def _config(args):
    from .pipeline import PipelineConfig, load_config

    cfg = load_config(args.config) if args.config else PipelineConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def cmd_decompose(args) -> int:
    from . import depth as depthmod
    from .pipeline import decompose, read_image, write_png

    cfg = _config(args)
    img = read_image(args.input, cfg.clamp_floor)
    dm = None
    if args.depth:
        if not args.intrinsics:
            print("--depth requires --intrinsics", file=sys.stderr)
            return 2
        dm = depthmod.read_depth_png(args.depth, depthmod.read_intrinsics(args.intrinsics))
    out = decompose(img, dm, cfg, diagnostics_path=args.diagnostics)
    res = out.result
    sb = res.sb
    span = float(np.ptp(sb))
    gray = (sb - sb.min()) / span if span > 0 else np.ones_like(sb)
    write_png(args.out_shading, gray)
    np.save(Path(args.out_shading).with_suffix(".npy"), sb)
    refl = res.reflectance
    write_png(args.out_reflectance, refl / refl.max())
    print(json.dumps({"n": out.n.tolist(), "k": out.k,
                      "timings": out.diagnostics.get("timings", {})}))
    return 0


def cmd_evaluate(args) -> int:
    from .pipeline import evaluate

    cfg = _config(args)
    report = evaluate(args.manifest, cfg, out_csv=args.out)
    print(report["table"])
    return 0 if all(r["status"] == "ok" for r in report["rows"]) else 1


def cmd_synth(args) -> int:
    from .pipeline import write_png
    from .synth import SceneSpec, generate_scene

    spec = SceneSpec.from_dict(json.loads(Path(args.spec).read_text())) if args.spec else SceneSpec()
    scene = generate_scene(spec, args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_png(out / "image.png", scene.image)
    write_png(out / "reflectance.png", scene.reflectance / scene.reflectance.max())
    write_png(out / "shading.png", scene.shading / scene.shading.max())
    np.savez(out / "truth.npz", image=scene.image, shading=scene.shading,
             reflectance=scene.reflectance, sb=scene.sb, labels=scene.labels,
             gamma=scene.gamma, n=scene.n)
    print(f"wrote scene to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="csf-intrinsic",
                                 description="Intrinsic image decomposition by selective fusion "
                                             "of pairwise shading orders.")
    ap.add_argument("--threads", type=int, default=0, help="worker threads (0: library default)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    d = sub.add_parser("decompose", help="split one image into shading and reflectance")
    d.add_argument("--input", required=True)
    d.add_argument("--depth")
    d.add_argument("--intrinsics")
    d.add_argument("--out-shading", required=True)
    d.add_argument("--out-reflectance", required=True)
    d.add_argument("--config")
    d.add_argument("--diagnostics", help="JSON-lines file of per-iteration fusion statistics")
    d.add_argument("--seed", type=int)
    d.set_defaults(func=cmd_decompose)

    e = sub.add_parser("evaluate", help="score a dataset manifest")
    e.add_argument("--manifest", required=True)
    e.add_argument("--config")
    e.add_argument("--out", required=True, help="CSV output path")
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("synth", help="render a synthetic scene with ground truth")
    s.add_argument("--spec", help="JSON scene spec (defaults when omitted)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_synth)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _set_threads(args.threads)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
