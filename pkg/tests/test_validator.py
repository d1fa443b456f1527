import numpy as np
import pytest

from selfstop.errors import ConfigError, NumericalError, ShapeError
from selfstop.harness.phantoms import make_phantom
from selfstop.tensor import Tensor
from selfstop.validator import (
    AutoencoderConfig,
    ae_score,
    ae_train_step,
    auto_stages,
    build_autoencoder,
    encode,
    latent,
    load_checkpoint,
    reference_config,
    save_checkpoint,
)


def small(**kw):
    base = dict(height=32, width=32, channels=3, widths=(8, 16), num_stages=3, batch_size=0, seed=0)
    base.update(kw)
    return AutoencoderConfig(**base)


def test_reference_layout():
    cfg = reference_config()
    assert cfg.stages == 7 and cfg.features == 16 and cfg.code_shape == (4, 4)
    st = build_autoencoder(cfg)
    assert st.layout["encoder"] == (3, 32, 64, 128, 128, 128, 128, 1)
    assert st.layout["decoder"] == (1, 128, 128, 128, 128, 64, 32, 3)
    for i in range(4):
        assert st.params[f"lin{i}.weight"].shape == (16, 16)
    assert "lin4.weight" not in st.params
    assert not any(k.endswith(".conv.bias") for k in st.params)


@pytest.mark.slow
def test_reference_encoder_emits_four_by_four():
    st = build_autoencoder(reference_config())
    x = Tensor(np.random.default_rng(0).uniform(size=(1, 3, 512, 512)))
    code = encode(st, x, training=False)
    assert code.shape == (1, 1, 4, 4)
    assert latent(st, code).shape == (1, 1, 4, 4)


def test_desk_layout():
    cfg = AutoencoderConfig(height=128, width=128, channels=3)
    assert cfg.stages == auto_stages(128, 128) == 5
    assert cfg.features == 16 and cfg.hidden == (32, 64, 128, 128)
    st = build_autoencoder(cfg)
    code = encode(st, Tensor(np.zeros((1, 3, 128, 128), np.float32)), training=False)
    assert code.shape == (1, 1, 4, 4)


def test_auto_stages_small_inputs():
    assert auto_stages(8, 8) == 1
    assert auto_stages(4, 4) == 1  # a 2x2 code once 4x4 is out of reach
    assert auto_stages(512, 512) == 7
    assert auto_stages(16, 32) == 2


@pytest.mark.parametrize(
    "kw",
    [dict(num_stages=6), dict(height=30), dict(widths=(8,)), dict(loss="ssim"), dict(score_norm="batch"), dict(lr=0)],
)
def test_invalid_configs(kw):
    with pytest.raises(ConfigError):
        build_autoencoder(small(**kw))


def test_too_deep_message_mentions_stages():
    with pytest.raises(ConfigError, match="reduce num_stages"):
        build_autoencoder(small(num_stages=5, widths=(8, 8, 8, 8)))


def test_step_counter_and_empty_window():
    st = build_autoencoder(small())
    img = np.random.default_rng(0).uniform(size=(32, 32, 3))
    ae_train_step(st, [img])
    assert st.steps == 1
    with pytest.raises(ConfigError):
        ae_train_step(st, [])
    with pytest.raises(ShapeError):
        ae_train_step(st, [np.zeros((32, 32, 1))])
    with pytest.raises(ShapeError):
        ae_score(st, np.zeros((16, 16, 3)))


def test_overfit_one_image():
    st = build_autoencoder(small(lr=1e-2))
    img = make_phantom("piecewise_smooth", 32, 32, 3, seed=0)
    losses = [ae_train_step(st, [img] * 4) for _ in range(200)]
    assert min(losses[-20:]) < losses[0]
    assert np.mean(losses[-20:]) < 0.5 * losses[0]


def test_score_is_pure_and_non_negative():
    st = build_autoencoder(small())
    img = np.random.default_rng(1).uniform(size=(32, 32, 3))
    ae_train_step(st, [img, 1 - img])
    before = {k: v.data.copy() for k, v in st.params.items()}
    rm = {k: n.running_mean.copy() for k, n in st.norms.items()}
    a, b = ae_score(st, img), ae_score(st, img)
    assert a == b and a >= 0
    for k, v in st.params.items():
        assert np.array_equal(v.data, before[k])
    for k, n in st.norms.items():
        assert np.array_equal(n.running_mean, rm[k])


def test_non_finite_score_raises():
    st = build_autoencoder(small())
    with pytest.raises(NumericalError):
        ae_score(st, np.full((32, 32, 3), np.nan))


def test_minibatch_is_seeded():
    def losses(seed):
        st = build_autoencoder(small(batch_size=3, seed=seed))
        rng = np.random.default_rng(7)
        window = [rng.uniform(size=(32, 32, 3)) for _ in range(8)]
        return [ae_train_step(st, window) for _ in range(5)]

    assert losses(0) == losses(0)
    assert losses(0) != losses(1)


@pytest.mark.parametrize("seed", range(5))
def test_trained_image_scores_below_noise(seed):
    st = build_autoencoder(small(lr=1e-2, seed=seed))
    img = make_phantom("piecewise_smooth", 32, 32, 3, seed=seed)
    for _ in range(150):
        ae_train_step(st, [img] * 2)
    noise = np.random.default_rng(seed).uniform(size=img.shape)
    assert ae_score(st, img) < ae_score(st, noise)


def test_checkpoint_round_trip(tmp_path):
    st = build_autoencoder(small(batch_size=2))
    rng = np.random.default_rng(2)
    window = [rng.uniform(size=(32, 32, 3)) for _ in range(4)]
    for _ in range(3):
        ae_train_step(st, window)
    path = tmp_path / "ae.npz"
    save_checkpoint(st, path)
    back = load_checkpoint(path)
    assert back.config == st.config and back.steps == 3
    for k in st.params:
        assert np.array_equal(back.params[k].data, st.params[k].data)
    assert ae_score(back, window[0]) == ae_score(st, window[0])
