import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcbir.datapipe import synth_toy_corpus
from pcbir.nncore import load_checkpoint
from pcbir.translator import (
    PSNR_CAP,
    CycleGanModel,
    HistoryBuffer,
    TranslatorConfig,
    adversarial_loss_x,
    adversarial_loss_y,
    cycle_loss,
    discriminator_objective,
    evaluate_translation,
    generator_objective,
    image_metrics,
    psnr_from_mse,
    to_external,
    to_internal,
    total_loss,
    train,
    translate,
)

LN4 = 2 * math.log(2)
scores = st.lists(st.floats(0.01, 0.99), min_size=1, max_size=8)


def small_config(**kw):
    base = dict(image_size=8, gen_base_channels=2, gen_downsamplings=1, gen_residual_blocks=1,
                disc_base_channels=2, disc_layers=2, seed=0)
    base.update(kw)
    return TranslatorConfig(**base)


# -- losses --

def test_symmetric_discriminator():
    half = np.full(4, 0.5)
    assert float(adversarial_loss_y(half, half).data) == pytest.approx(LN4, abs=1e-6)
    assert float(adversarial_loss_x(half, half).data) == pytest.approx(LN4, abs=1e-6)


def test_perfect_discriminator_is_near_zero():
    value = float(adversarial_loss_y([1.0], [0.0]).data)
    assert 0 < value < 1e-5


def test_adversarial_hand_values():
    assert float(adversarial_loss_y([0.9], [0.2]).data) == pytest.approx(0.328504, abs=1e-6)
    # -(ln 0.8 + ln 0.9) / 2 - ln 0.9 evaluates to 0.2696125
    expected = -(math.log(0.8) + math.log(0.9)) / 2 - math.log(0.9)
    assert float(adversarial_loss_x([0.8, 0.9], [0.1]).data) == pytest.approx(expected, abs=1e-6)
    assert expected == pytest.approx(0.269613, abs=1e-6)


@given(scores, scores)
def test_adversarial_x_y_symmetry(real, fake):
    assert float(adversarial_loss_x(real, fake).data) == float(adversarial_loss_y(real, fake).data)


def test_empty_scores_rejected():
    with pytest.raises(ValueError):
        adversarial_loss_y([], [0.5])


def test_cycle_loss_values():
    assert float(cycle_loss([0.2], [0.5], [0.1], [0.1]).data) == pytest.approx(0.3)
    x = np.random.default_rng(0).random((2, 3))
    assert float(cycle_loss(x, x, x, x).data) == 0.0
    with pytest.raises(ValueError):
        cycle_loss(np.zeros(2), np.zeros(3), np.zeros(1), np.zeros(1))


@given(st.lists(st.floats(-1, 1), min_size=1, max_size=6), st.lists(st.floats(-1, 1), min_size=1, max_size=6),
       st.data())
def test_cycle_loss_nonnegative_and_symmetric(a, b, data):
    ra = data.draw(st.lists(st.floats(-1, 1), min_size=len(a), max_size=len(a)))
    rb = data.draw(st.lists(st.floats(-1, 1), min_size=len(b), max_size=len(b)))
    v = float(cycle_loss(a, ra, b, rb).data)
    assert v >= 0
    assert v == pytest.approx(float(cycle_loss(b, rb, a, ra).data), rel=1e-6, abs=1e-7)
    if v == 0:
        np.testing.assert_allclose(a, ra, atol=1e-7)


def test_total_loss():
    assert total_loss(1.0, 1.2, 0.3, 10) == pytest.approx(5.2)
    assert total_loss(1.0, 1.2, 0.3, 0) == pytest.approx(2.2)
    assert total_loss(1.0, 1.2, 0.0, 7.5) == pytest.approx(2.2)


@given(st.floats(0, 5), st.floats(0, 5), st.floats(0, 5))
def test_total_loss_affine_in_lambda(ax, ay, cyc):
    lams = (0.0, 1.0, 10.0)
    vals = [total_loss(ax, ay, cyc, lam) for lam in lams]
    assert (vals[2] - vals[1]) / 9.0 == pytest.approx(cyc, abs=1e-9)
    assert vals[1] - vals[0] == pytest.approx(cyc, abs=1e-9)


# -- model and objectives --

def test_config_defaults_and_validation():
    cfg = TranslatorConfig()
    assert cfg.lambda_cyc == 10.0 and cfg.history_buffer_capacity == 50 and cfg.identity_weight == 0.0
    with pytest.raises(ValueError):
        TranslatorConfig(lambda_cyc=0)
    with pytest.raises(ValueError):
        TranslatorConfig(history_buffer_capacity=-1)
    with pytest.raises(ValueError):
        TranslatorConfig(image_size=30)


def test_model_shapes():
    cfg = small_config()
    m = CycleGanModel.build(cfg)
    x = np.zeros((2, 3, 8, 8), np.float32)
    y = np.zeros((2, 1, 8, 8), np.float32)
    assert m.G(x).shape == y.shape and m.F(y).shape == x.shape
    d = m.D_Y(y).data
    assert d.shape[1] == 1 and np.all((d > 0) & (d < 1))


def _batches(cfg, seed=1):
    rng = np.random.default_rng(seed)
    return (rng.uniform(-1, 1, (2, 3, cfg.image_size, cfg.image_size)).astype(np.float32),
            rng.uniform(-1, 1, (2, 1, cfg.image_size, cfg.image_size)).astype(np.float32))


def test_generator_objective_touches_generators_only():
    cfg = small_config()
    m = CycleGanModel.build(cfg)
    x, y = _batches(cfg)
    generator_objective(m, x, y).loss.backward()
    assert all(p.grad is not None for p in m.generator_parameters())
    assert all(p.grad is None for p in m.discriminator_parameters())


def test_discriminator_objective_touches_discriminators_only():
    cfg = small_config()
    m = CycleGanModel.build(cfg)
    x, y = _batches(cfg)
    discriminator_objective(m, x, y).loss.backward()
    assert all(p.grad is None for p in m.generator_parameters())
    assert all(p.grad is not None for p in m.discriminator_parameters())


def test_untrained_discriminator_objective_golden():
    # near 2 * 2 ln 2 for symmetric untrained nets; frozen at seed 0
    cfg = small_config()
    m = CycleGanModel.build(cfg)
    x, y = _batches(cfg)
    value = float(discriminator_objective(m, x, y).loss.data)
    assert abs(value - 2 * LN4) / (2 * LN4) < 0.2
    assert value == pytest.approx(2.7751074, abs=1e-5)


def test_objective_linear_in_lambda():
    x, y = _batches(small_config())
    vals = [float(generator_objective(CycleGanModel.build(small_config(lambda_cyc=lam)), x, y).loss.data)
            for lam in (1.0, 2.0, 4.0)]
    assert vals[0] < vals[1] < vals[2]
    assert vals[2] - vals[1] == pytest.approx(2 * (vals[1] - vals[0]), rel=1e-4)


def test_buffer_capacity_zero_is_pass_through():
    buf = HistoryBuffer(0, np.random.default_rng(0))
    batch = np.random.default_rng(1).random((3, 1, 4, 4))
    assert buf.query(batch) is batch
    cfg = small_config(history_buffer_capacity=0)
    m = CycleGanModel.build(cfg)
    x, y = _batches(cfg)
    fresh = float(discriminator_objective(m, x, y).loss.data)
    fakes = (buf.query(m.F(y).data), buf.query(m.G(x).data))
    assert float(discriminator_objective(m, x, y, fakes).loss.data) == fresh


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 6), st.integers(1, 30))
def test_buffer_never_exceeds_capacity(capacity, n):
    buf = HistoryBuffer(capacity, np.random.default_rng(n))
    for i in range(n):
        out = buf.query(np.full((1, 1, 2, 2), float(i)))
        assert out.shape == (1, 1, 2, 2)
        assert len(buf) <= capacity


def test_boundary_conversion_round_trip():
    img = np.random.default_rng(0).random((5, 6, 3)).astype(np.float32)
    internal = to_internal(img)
    assert internal.shape == (1, 3, 5, 6) and internal.min() >= -1 and internal.max() <= 1
    np.testing.assert_allclose(to_external(internal)[0], img, atol=1e-6)


# -- inference and metrics --

def test_translate_contract():
    m = CycleGanModel.build(small_config())
    img = np.random.default_rng(2).random((8, 8, 3))
    a, b = translate(m, img), translate(m, img)
    assert a.shape == (8, 8, 1) and a.tobytes() == b.tobytes()
    assert a.min() >= 0 and a.max() <= 1
    with pytest.raises(ValueError, match="8x8"):
        translate(m, np.zeros((16, 16, 3)))


def test_image_metrics_hand_values():
    out = image_metrics([np.full((4, 4, 1), 0.5)], [np.zeros((4, 4, 1))])
    assert out["mean_l1"] == pytest.approx(0.5)
    assert out["mse"] == pytest.approx(0.25)
    assert out["psnr"] == pytest.approx(6.0206, abs=1e-4)
    same = image_metrics([np.ones((2, 2, 1))], [np.ones((2, 2, 1))])
    assert same["mean_l1"] == 0 and same["psnr"] == PSNR_CAP
    with pytest.raises(ValueError):
        image_metrics([], [])
    with pytest.raises(ValueError):
        evaluate_translation(CycleGanModel.build(small_config()), [])


@given(st.lists(st.floats(0, 1), min_size=4, max_size=4), st.lists(st.floats(0, 1), min_size=4, max_size=4))
def test_l1_symmetric(a, b):
    a, b = np.reshape(a, (2, 2, 1)), np.reshape(b, (2, 2, 1))
    assert image_metrics([a], [b])["mean_l1"] == image_metrics([b], [a])["mean_l1"]


def test_psnr_cap():
    assert psnr_from_mse(0.0) == PSNR_CAP
    assert psnr_from_mse(1e-12) == PSNR_CAP
    assert psnr_from_mse(0.01) == pytest.approx(20.0)


# -- training loop --

def _pools(n=2, size=8):
    corpus = synth_toy_corpus(n, size, seed=0)
    return [v for v, _ in corpus.visible], [t for t, _ in corpus.ir]


def test_one_epoch_log(tmp_path):
    vis, ir = _pools()
    result = train(small_config(epochs=1), vis, ir, checkpoint_dir=tmp_path)
    assert len(result.log) == 1
    row = result.log[0]
    assert all(math.isfinite(row[k]) for k in ("adv_x", "adv_y", "cyc", "total"))
    with open(tmp_path / "translator_loss.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["epoch", "adv_x", "adv_y", "cyc", "total"] and len(rows) == 2


def test_unequal_pools_and_steps():
    vis, ir = _pools(3)
    result = train(small_config(epochs=2, batch_size=2), vis, ir[:1])
    assert result.steps == 4  # ceil(3 / 2) per epoch


def test_empty_pool_rejected():
    vis, _ = _pools()
    with pytest.raises(ValueError, match="empty"):
        train(small_config(), vis, [])


def test_training_is_reproducible(tmp_path):
    vis, ir = _pools()
    train(small_config(epochs=2), vis, ir, checkpoint_dir=tmp_path / "a")
    train(small_config(epochs=2), vis, ir, checkpoint_dir=tmp_path / "b")
    for name in ("translator_last.ckpt", "translator_loss.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_resume_matches_uninterrupted(tmp_path):
    vis, ir = _pools()
    train(small_config(epochs=3), vis, ir, checkpoint_dir=tmp_path / "full")
    train(small_config(epochs=1), vis, ir, checkpoint_dir=tmp_path / "part")
    train(small_config(epochs=3), vis, ir, checkpoint_dir=tmp_path / "resumed",
          resume_from=tmp_path / "part" / "translator_last.ckpt")
    full = load_checkpoint(tmp_path / "full" / "translator_last.ckpt")
    resumed = load_checkpoint(tmp_path / "resumed" / "translator_last.ckpt")
    for name, arr in full.arrays.items():
        np.testing.assert_array_equal(arr, resumed.arrays[name])


def test_save_load_round_trip(tmp_path):
    m = CycleGanModel.build(small_config(seed=3))
    path = m.save(tmp_path / "m.ckpt")
    loaded = CycleGanModel.load(path)
    img = np.random.default_rng(0).random((8, 8, 3))
    assert translate(loaded, img).tobytes() == translate(m, img).tobytes()
