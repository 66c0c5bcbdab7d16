"""Smoke tests for the Python bindings."""

import numpy as np
import pytest

import crfgan


def tiny_config():
    cfg = crfgan.TrainConfig()
    cfg.resolution = 16
    cfg.scale = 4
    cfg.sub_extent = 2
    cfg.embed_channels = 4
    cfg.latent_dim = 8
    cfg.d_base_channels = 4
    cfg.d_max_channels = 8
    cfg.batch_size = 1
    cfg.seed = 7
    return cfg


def test_phantom_shape_range_determinism():
    a = crfgan.make_phantom(16, seed=1)
    b = crfgan.make_phantom(16, seed=1)
    c = crfgan.make_phantom(16, seed=2)
    assert a.shape == (16, 16, 16)
    assert a.dtype == np.float32
    assert a.min() >= -1.0 and a.max() <= 1.0
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_volume_io_roundtrip(tmp_path):
    v = crfgan.make_phantom(16, seed=3)
    path = str(tmp_path / "v.raw")
    crfgan.save_volume(v, path)
    assert np.array_equal(crfgan.load_volume(path), v)


def test_config_json_roundtrip_and_validation():
    cfg = tiny_config()
    back = crfgan.TrainConfig.from_json(cfg.to_json())
    assert back.resolution == 16
    assert back.seed == 7
    cfg.batch_size = 0
    with pytest.raises(ValueError):
        cfg.validate()


def test_generate_and_stitching_report():
    model = crfgan.init_model(tiny_config())
    z = np.random.default_rng(0).standard_normal(model.latent_dim)
    full = model.generate(z)
    assert full.shape == (16, 16, 16)
    assert np.isfinite(full).all()
    assert np.array_equal(full, model.generate(z))

    stitched = model.generate(z, stitched=True)
    report = model.verify_stitching(z)
    assert report["rho_voxels"] > 0
    assert report["max_interior_diff"] <= 1e-5
    assert stitched.shape == full.shape


def test_reconstruct_shape():
    model = crfgan.init_model(tiny_config())
    x = crfgan.make_phantom(16, seed=4)
    r = model.reconstruct(x)
    assert r.shape == x.shape
    assert np.isfinite(r).all()


def test_train_checkpoint_and_reload(tmp_path):
    cfg = tiny_config()
    cfg.iterations = 2
    cfg.checkpoint_every = 2
    data = [crfgan.make_phantom(16, seed=10 + i) for i in range(2)]
    model = crfgan.train(cfg, data, str(tmp_path))
    assert model.iteration == 2
    assert (tmp_path / "metrics.csv").exists()

    reloaded = crfgan.load_model(str(tmp_path / "checkpoint_2.ckpt"))
    assert reloaded.iteration == 2
    z = np.zeros(model.latent_dim)
    assert np.array_equal(model.generate(z), reloaded.generate(z))


def test_metrics_identities():
    vols = [crfgan.make_phantom(16, seed=20 + i) for i in range(4)]
    f = crfgan.extract_features(vols, seed=1, feature_dim=16)
    assert f.count == 4
    assert crfgan.fid(f, f) <= 1e-6
    assert crfgan.mmd(f, f) <= 1e-9

    other = crfgan.extract_features(vols, seed=2, feature_dim=16)
    with pytest.raises(RuntimeError):
        crfgan.fid(f, other)


def test_bench_reports():
    cfg = crfgan.TrainConfig()
    cfg.resolution = 64
    report = crfgan.param_report(cfg, include_surrogate=True)
    assert report["reduction_percent"] >= 15.0
    assert report["total"] == report["core_total"] + report["surrogate_extra"]

    sub = crfgan.estimate_memory(cfg, "sub")
    full = crfgan.estimate_memory(cfg, "full")
    assert sub["activation_bytes"] * 2 <= full["activation_bytes"]
    with pytest.raises(ValueError):
        crfgan.estimate_memory(cfg, "bogus")
