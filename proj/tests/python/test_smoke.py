import math

import numpy as np
import pytest

import aotpot


def tiny_config(channels=1):
    c = aotpot.ModelConfig()
    c.height = c.width = 8
    c.channels = channels
    c.t_in = 2
    c.patch = 4
    c.embed_dim = 8
    c.heads = 2
    c.modes = 1
    c.blocks = 1
    c.streams = 2
    c.mlp_hidden = 8
    c.temporal_hidden = 8
    return c


def test_sinkhorn_is_doubly_stochastic():
    rng = np.random.default_rng(0)
    m, residual = aotpot.sinkhorn(rng.normal(size=(5, 5)))
    assert np.allclose(m.sum(axis=0), 1.0, atol=1e-12)
    assert np.allclose(m.sum(axis=1), 1.0, atol=1e-6)
    assert residual < 1e-6


def test_sinkhorn_identity_values():
    m, _ = aotpot.sinkhorn(np.eye(4))
    e = math.e
    assert m[0, 0] == pytest.approx(e / (e + 3), abs=1e-12)
    assert m[0, 1] == pytest.approx(1 / (e + 3), abs=1e-12)


def test_sinkhorn_rejects_nan():
    raw = np.zeros((3, 3))
    raw[1, 1] = np.nan
    with pytest.raises(ValueError):
        aotpot.sinkhorn(raw)


def test_fft2_matches_numpy():
    x = np.random.default_rng(1).normal(size=(8, 8))
    assert np.allclose(aotpot.fft2(x), np.fft.fft2(x), atol=1e-10)


def test_l2re():
    truth = np.ones((4, 4, 1))
    assert aotpot.l2re(truth, truth) == 0.0
    assert aotpot.l2re(2 * truth, truth) == pytest.approx(1.0)
    with pytest.raises(aotpot.UndefinedMetricError):
        aotpot.l2re(truth, np.zeros_like(truth))


def test_heat_solver_decays_a_mode():
    n = 16
    x = np.arange(n) / n
    ic = np.sin(2 * np.pi * x)[:, None] * np.ones((1, n))
    traj = aotpot.solve_heat(ic, 0.01, 0.01, 10)
    assert traj.shape == (10, n, n)
    peaks = np.abs(traj).max(axis=(1, 2))
    ratios = peaks[1:] / peaks[:-1]
    assert np.all(ratios < 1.0)
    assert np.allclose(ratios, ratios[0], rtol=1e-9)
    assert peaks[0] == pytest.approx(ratios[0], rel=1e-9)


def test_aotd_round_trip(tmp_path):
    spec = aotpot.FamilySpec("heat")
    spec.height = spec.width = 8
    spec.frames = 4
    data, label, param = aotpot.generate_trajectory(spec, 0, 3)
    again, _, _ = aotpot.generate_trajectory(spec, 0, 3)
    assert label == "heat"
    assert np.array_equal(data, again)
    path = tmp_path / "t.aotd"
    crc = aotpot.write_aotd(path, data, label)
    assert crc > 0
    back, back_label = aotpot.read_aotd(path)
    assert back_label == "heat"
    assert np.array_equal(back, data)


def test_model_forward_and_kernels():
    model = aotpot.Model(tiny_config(), seed=1)
    window = np.random.default_rng(2).normal(size=(2, 8, 8, 1))
    out = model.forward(window)
    assert out.shape == (8, 8, 1)
    assert np.all(np.isfinite(out))
    kernels = model.kernels(window)
    assert len(kernels) == 2
    for k in kernels:
        assert np.allclose(k.sum(axis=0), 1.0, atol=1e-12)
    gains = model.gains([window])
    assert gains["backward"] == pytest.approx([1.0, 1.0], abs=1e-9)
    assert 0.0 < model.aot_fraction() < 1.0


def test_short_training_reduces_loss(tmp_path):
    spec = aotpot.FamilySpec("heat")
    spec.height = spec.width = 8
    spec.frames = 8
    spec.train_count = 4
    spec.test_count = 1
    cfg = aotpot.TrainConfig()
    cfg.epochs = 1
    cfg.steps_per_epoch = 30
    cfg.batch = 2
    cfg.lr = 3e-3
    model = aotpot.Model(tiny_config(), seed=4)
    result = aotpot.train(model, [spec], cfg, data_seed=5, out_dir=str(tmp_path))
    losses = result["step_losses"]
    assert len(losses) == 30
    assert np.mean(losses[-5:]) < losses[0]
    assert list(result["validation"]) == ["heat@nu=0.001"]
    assert (tmp_path / "checkpoint.aotc").exists()
    reloaded = aotpot.Model(tiny_config(), seed=99)
    reloaded.load(tmp_path / "checkpoint.aotc")
    window = np.random.default_rng(6).normal(size=(2, 8, 8, 1))
    assert np.array_equal(reloaded.forward(window), model.forward(window))


def test_resolved_config():
    text = aotpot.resolved_config("[train]\nlr = 0.002\n")
    assert "lr = 0.002" in text
    assert aotpot.resolved_config(text) == text
