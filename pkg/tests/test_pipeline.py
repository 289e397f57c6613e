import csv
import json

import numpy as np
import pytest

from csf_intrinsic import cli, metrics, pipeline, synth
from csf_intrinsic.depth import DepthMap
from csf_intrinsic.errors import InvalidSpec, StageError

FAST = dict(window=12)


def small_cfg(**kw):
    return pipeline.PipelineConfig(**{**FAST, **kw})


def soft_scene(size=40, seed=1):
    spec = synth.SceneSpec(height=size, width=size, n_colors=3, direct=(3.5, 2.5, 1.5),
                           ambient=(0.5, 0.45, 0.6), gamma_range=(0.9, 1.0),
                           shadows=[{"type": "disk", "center": (size / 2, size / 2),
                                     "radius": size / 5, "softness": 5, "depth": 0.8}])
    return synth.generate_scene(spec, seed)


@pytest.fixture(scope="module")
def soft_result():
    sc = soft_scene()
    return sc, pipeline.decompose(sc.image, cfg=small_cfg())


# --- configuration --------------------------------------------------------------

def test_config_defaults_carry_paper_constants():
    cfg = pipeline.PipelineConfig()
    assert (cfg.alpha1, cfg.alpha2_init, cfg.tau, cfg.omega_min) == (1.0, 2.0, 0.2, 1 / 3)
    assert (cfg.rho, cfg.eta1, cfg.eta2, cfg.eta3) == (5.0, 0.05, 1.0, 1.0)
    assert cfg.window == 30 and cfg.hist_bin == 0.03 and cfg.patch == 10
    assert cfg.w1 == pytest.approx(np.log(3) / 0.1)


def test_config_roundtrip(tmp_path):
    cfg = pipeline.PipelineConfig(seed=7, disable=["BOB"], window=16)
    assert pipeline.PipelineConfig.from_dict(cfg.to_dict()) == cfg
    path = tmp_path / "c.toml"
    path.write_text(pipeline.dump_config(cfg))
    assert pipeline.load_config(path) == cfg


def test_config_rejects_bad_values():
    with pytest.raises(InvalidSpec):
        pipeline.PipelineConfig.from_dict({"no_such_key": 1})
    with pytest.raises(InvalidSpec):
        pipeline.PipelineConfig(disable=["XYZ"])
    with pytest.raises(InvalidSpec):
        pipeline.PipelineConfig.from_dict({"rho": -1.0})
    with pytest.raises(InvalidSpec):
        pipeline.PipelineConfig(window=1)


# --- image I/O -------------------------------------------------------------------

def test_png_roundtrip_16_bit(tmp_path, rng):
    img = rng.uniform(0.01, 1, (9, 7, 3))
    pipeline.write_png(tmp_path / "a.png", img)
    back = pipeline.read_image(tmp_path / "a.png")
    np.testing.assert_allclose(back, img, atol=1 / 65535)
    pipeline.write_png(tmp_path / "g.png", img[..., 0], bits=8)
    np.testing.assert_allclose(pipeline.read_gray(tmp_path / "g.png"), img[..., 0], atol=1 / 255)
    with pytest.raises(FileNotFoundError):
        pipeline.read_image(tmp_path / "missing.png")


# --- synthetic scenes ------------------------------------------------------------

def test_scene_full_light_is_reflectance():
    sc = synth.generate_scene(synth.SceneSpec(height=16, width=16, gamma_range=(1.0, 1.0)), 0)
    np.testing.assert_allclose(sc.image, sc.reflectance, rtol=1e-12)
    np.testing.assert_allclose(sc.shading, 1.0)


def test_scene_without_ambient_has_shading_gamma():
    spec = synth.SceneSpec(height=16, width=16, ambient=(0.0, 0.0, 0.0), gamma_range=(0.5, 1.0),
                           shadows=[{"type": "halfplane", "angle": 0.0, "offset": 0.0}])
    sc = synth.generate_scene(spec, 0)
    np.testing.assert_allclose(sc.shading, np.repeat(sc.gamma[..., None], 3, axis=2), atol=1e-12)
    with pytest.raises(InvalidSpec):
        sc.n


def test_scene_product_and_determinism():
    spec = synth.random_scene_spec(np.random.default_rng(4), size=32)
    a, b = synth.generate_scene(spec, 4), synth.generate_scene(spec, 4)
    np.testing.assert_array_equal(a.image, b.image)
    np.testing.assert_allclose(a.shading * a.reflectance, a.image, rtol=1e-12)
    assert a.image.max() <= 1.0 and a.image.min() > 0


def test_scene_rejects_bad_spec():
    with pytest.raises(InvalidSpec):
        synth.SceneSpec.from_dict({"height": 8, "colour": 1})
    with pytest.raises(InvalidSpec):
        synth.generate_scene(synth.SceneSpec(gamma_range=(0.5, 1.5)))


# --- decomposition -----------------------------------------------------------------

def test_constant_image():
    img = np.full((12, 12, 3), [0.3, 0.5, 0.2])
    d = pipeline.decompose(img, cfg=small_cfg())
    assert np.ptp(d.result.sb) == 0
    np.testing.assert_allclose(d.result.reflectance, img, rtol=1e-12)


def test_soft_shadow_scene(soft_result):
    sc, d = soft_result
    assert d.k == 3
    assert metrics.correlation(d.result.sb, sc.sb) >= 0.99
    np.testing.assert_allclose(d.result.shading * d.result.reflectance, sc.image, rtol=1e-12)
    assert d.result.sb.max() == 0.0
    assert set(d.diagnostics["timings"]) >= {"direction", "clustering", "orders", "fusion", "total"}


def test_hard_shadow_across_all_colors():
    spec = synth.SceneSpec(height=40, width=40, n_colors=3, layout="stripes",
                           direct=(3.5, 2.5, 1.5), ambient=(0.5, 0.45, 0.6), gamma_range=(1.0, 1.0),
                           shadows=[{"type": "halfplane", "angle": 90.0, "offset": 0.0}])
    sc = synth.generate_scene(spec, 2)
    d = pipeline.decompose(sc.image, cfg=small_cfg())
    est, true = d.result.sb, sc.sb
    err = (est - est.mean()) - (true - true.mean())
    assert np.abs(err).max() < 0.05


def test_deterministic():
    sc = soft_scene(size=24, seed=3)
    a = pipeline.decompose(sc.image, cfg=small_cfg(window=8))
    b = pipeline.decompose(sc.image, cfg=small_cfg(window=8))
    np.testing.assert_array_equal(a.result.sb, b.result.sb)


def test_downsampled_working_resolution():
    sc = soft_scene(size=40, seed=5)
    d = pipeline.decompose(sc.image, cfg=small_cfg(max_dim=20, window=8))
    assert d.diagnostics["working_shape"] == (20, 20)
    assert d.result.sb.shape == (40, 40)
    assert metrics.correlation(d.result.sb, sc.sb) > 0.95


def test_depth_shape_mismatch_is_stage_error():
    sc = soft_scene(size=16)
    depth = DepthMap(np.ones((8, 8)), 10.0, 10.0, 4.0, 4.0)
    with pytest.raises(StageError) as info:
        pipeline.decompose(sc.image, depth, cfg=small_cfg(window=6))
    assert info.value.stage == "depth"


def test_depth_input_runs():
    sc = soft_scene(size=20, seed=2)
    depth = DepthMap(np.full((20, 20), 2.0), 20.0, 20.0, 9.5, 9.5)
    d = pipeline.decompose(sc.image, depth, cfg=small_cfg(window=6, n_lights=8))
    assert d.diagnostics["depth"]["lights"] == 8
    assert np.all(np.isfinite(d.result.sb))


def test_diagnostics_file(tmp_path):
    sc = soft_scene(size=16)
    path = tmp_path / "diag.jsonl"
    d = pipeline.decompose(sc.image, cfg=small_cfg(window=6), diagnostics_path=path)
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert len(rows) == len(d.diagnostics["csf_history"]) >= 1
    assert {"iteration", "alpha2", "energy", "density", "methods"} <= set(rows[0])


# --- evaluation ------------------------------------------------------------------

def _write_truth(tmp_path, name, seed, size=24):
    sc = synth.generate_scene(synth.random_scene_spec(np.random.default_rng(seed), size=size), seed)
    files = {}
    for key, arr in (("shading", sc.shading), ("reflectance", sc.reflectance),
                     ("estimate_shading", sc.shading), ("estimate_reflectance", sc.reflectance)):
        files[key] = f"{name}_{key}.npy"
        np.save(tmp_path / files[key], arr)
    pipeline.write_png(tmp_path / f"{name}.png", sc.image)
    files["image"] = f"{name}.png"
    files["name"] = name
    return files, sc


def test_evaluate_identity_and_aggregate(tmp_path):
    entries = [_write_truth(tmp_path, f"s{i}", i)[0] for i in range(2)]
    man = tmp_path / "m.json"
    man.write_text(json.dumps(entries))
    cfg = pipeline.PipelineConfig(lmse_window=8, lmse_step=4)
    rep = pipeline.evaluate(man, cfg, out_csv=tmp_path / "out.csv")
    assert all(r["status"] == "ok" for r in rep["rows"])
    for r in rep["rows"]:
        assert r["correlation"] == pytest.approx(1.0)
        assert r["mse"] == r["lmse"] == r["almse"] == 0.0
    rows = list(csv.DictReader(open(tmp_path / "out.csv")))
    assert rows[-1]["name"] == "MEAN" and len(rows) == 3
    assert "MEAN" in rep["table"]


def test_evaluate_mean_and_order_invariance(tmp_path):
    entries = []
    for i in range(3):
        e, sc = _write_truth(tmp_path, f"t{i}", 10 + i)
        noisy = sc.shading * np.exp(np.random.default_rng(i).normal(0, 0.1, sc.shading.shape))
        np.save(tmp_path / e["estimate_shading"], noisy)
        entries.append(e)
    cfg = pipeline.PipelineConfig(lmse_window=8, lmse_step=4)
    man = tmp_path / "a.json"
    man.write_text(json.dumps(entries))
    rep = pipeline.evaluate(man, cfg)
    for col in ("correlation", "mse", "lmse", "almse"):
        assert rep["aggregate"][col] == pytest.approx(np.mean([r[col] for r in rep["rows"]]))
    man2 = tmp_path / "b.json"
    man2.write_text(json.dumps({"images": entries[::-1]}))
    rep2 = pipeline.evaluate(man2, cfg)
    for col, val in rep["aggregate"].items():
        assert rep2["aggregate"][col] == pytest.approx(val, rel=1e-12)


def test_evaluate_records_failures(tmp_path):
    good, _ = _write_truth(tmp_path, "g", 1)
    bad = dict(good, name="bad", estimate_shading="missing.npy")
    man = tmp_path / "m.json"
    man.write_text(json.dumps([good, bad]))
    rep = pipeline.evaluate(man, pipeline.PipelineConfig(lmse_window=8, lmse_step=4))
    status = {r["name"]: r["status"] for r in rep["rows"]}
    assert status == {"g": "ok", "bad": "failed"}
    assert rep["aggregate"]["mse"] == rep["rows"][0]["mse"]


# --- command line ----------------------------------------------------------------

def test_cli_synth_decompose_evaluate(tmp_path, capsys):
    assert cli.main(["synth", "--seed", "2", "--out-dir", str(tmp_path / "scene")]) == 0
    truth = np.load(tmp_path / "scene" / "truth.npz")
    assert truth["image"].shape == (64, 64, 3)

    spec = {"height": 20, "width": 20, "n_colors": 3, "gamma_range": [0.9, 1.0]}
    (tmp_path / "spec.json").write_text(json.dumps(spec))
    assert cli.main(["synth", "--spec", str(tmp_path / "spec.json"),
                     "--out-dir", str(tmp_path / "small")]) == 0
    conf = tmp_path / "c.toml"
    conf.write_text("window = 6\nlmse_window = 8\nlmse_step = 4\n")
    args = ["--threads", "1", "decompose", "--input", str(tmp_path / "small" / "image.png"),
            "--out-shading", str(tmp_path / "S.png"), "--out-reflectance", str(tmp_path / "R.png"),
            "--config", str(conf)]
    assert cli.main(args) == 0
    info = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert info["k"] >= 1 and len(info["n"]) == 3
    sb = np.load(tmp_path / "S.npy")
    assert sb.shape == (20, 20) and sb.max() == 0.0

    man = tmp_path / "m.json"
    man.write_text(json.dumps([{"name": "small", "image": "small/image.png",
                                "shading": "small/shading.png",
                                "reflectance": "small/reflectance.png"}]))
    assert cli.main(["evaluate", "--manifest", str(man), "--config", str(conf),
                     "--out", str(tmp_path / "e.csv")]) == 0
    assert "small" in capsys.readouterr().out


def test_cli_depth_requires_intrinsics(tmp_path, capsys):
    pipeline.write_png(tmp_path / "i.png", np.full((4, 4, 3), 0.5))
    code = cli.main(["decompose", "--input", str(tmp_path / "i.png"), "--depth", "d.png",
                     "--out-shading", str(tmp_path / "s.png"),
                     "--out-reflectance", str(tmp_path / "r.png")])
    assert code == 2
