import math

import numpy as np
import pytest
import torch

from gradcheck import translator_gradient_errors
from pointshot.errors import TrainingDivergedError, ValidationError
from pointshot.maskprep import RenderPair
from pointshot.trainer import OptimizerConfig
from pointshot.translator import (
    Translator,
    TranslatorConfig,
    load_translator,
    mse_loss,
    pretrain,
    save_translator,
    translator_forward,
    write_loss_curve,
)

SMALL = TranslatorConfig(depth_levels=2, base_channels=4)


def test_forward_shape_and_range():
    translator = Translator(TranslatorConfig(), seed=0)
    batch = np.random.default_rng(0).uniform(size=(2, 64, 64)).astype(np.float32)
    out = translator_forward(translator, batch)
    assert out.shape == (2, 64, 64, 3)
    assert out.min() > 0.0 and out.max() < 1.0


def test_forward_accepts_channel_layouts():
    translator = Translator(SMALL, seed=0)
    rng = np.random.default_rng(1)
    img = rng.uniform(size=(16, 16)).astype(np.float32)
    plain = translator_forward(translator, img)
    as_1ch = translator_forward(translator, img[:, :, None])
    as_3ch = translator_forward(translator, np.repeat(img[:, :, None], 3, axis=2))
    np.testing.assert_array_equal(plain, as_1ch)
    # 3-channel input averages back to the same single channel (up to the
    # rounding of the mean itself).
    np.testing.assert_allclose(plain, as_3ch, atol=1e-6)


def test_forward_zero_params_constant_half():
    translator = Translator(SMALL, seed=0)
    translator.load_flat_params(np.zeros(translator.param_count, dtype=np.float32))
    out = translator_forward(translator, np.random.default_rng(2).uniform(size=(16, 16)))
    np.testing.assert_allclose(out, 0.5, atol=1e-7)


def test_forward_deterministic():
    translator = Translator(SMALL, seed=3)
    img = np.random.default_rng(3).uniform(size=(16, 16)).astype(np.float32)
    np.testing.assert_array_equal(
        translator_forward(translator, img), translator_forward(translator, img)
    )


def test_forward_indivisible_resolution():
    translator = Translator(TranslatorConfig(depth_levels=4, base_channels=4), seed=0)
    with pytest.raises(ValidationError):
        translator_forward(translator, np.zeros((24, 24)))


def test_init_is_seeded_he_uniform():
    a = Translator(SMALL, seed=5)
    b = Translator(SMALL, seed=5)
    c = Translator(SMALL, seed=6)
    np.testing.assert_array_equal(a.flatten_params(), b.flatten_params())
    assert not np.array_equal(a.flatten_params(), c.flatten_params())
    for module in a.net.modules():
        if isinstance(module, (torch.nn.Conv2d, torch.nn.ConvTranspose2d)):
            np.testing.assert_array_equal(module.bias.detach().numpy(), 0.0)
            fan_in = module.in_channels * module.kernel_size[0] * module.kernel_size[1]
            bound = math.sqrt(2.0) * math.sqrt(3.0 / fan_in)
            assert module.weight.abs().max().item() <= bound + 1e-7


def test_param_count_stable_and_roundtrip():
    translator = Translator(SMALL, seed=0)
    assert translator.param_count == Translator(SMALL, seed=9).param_count
    flat = translator.flatten_params()
    assert flat.shape == (translator.param_count,)
    other = Translator(SMALL, seed=9)
    other.load_flat_params(flat)
    np.testing.assert_array_equal(other.flatten_params(), flat)


def test_checkpoint_roundtrip_bit_identical(tmp_path):
    translator = Translator(SMALL, seed=7)
    img = np.random.default_rng(7).uniform(size=(16, 16)).astype(np.float32)
    before = translator_forward(translator, img)
    save_translator(translator, tmp_path / "t.ckpt", epoch=12)
    loaded, epoch = load_translator(tmp_path / "t.ckpt")
    assert epoch == 12
    assert loaded.config == SMALL
    np.testing.assert_array_equal(translator_forward(loaded, img), before)


def test_load_translator_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_translator(tmp_path / "missing.ckpt")


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def test_mse_equal_is_zero():
    x = np.random.default_rng(0).uniform(size=(2, 8, 8, 3))
    assert mse_loss(x, x) == 0.0


def test_mse_constant_difference():
    a = np.zeros((4, 4, 3))
    b = np.full((4, 4, 3), 0.5)
    assert mse_loss(a, b) == pytest.approx(0.25)


def test_mse_hand_example():
    assert mse_loss(np.array([0.2, 0.4]), np.array([0.0, 1.0])) == pytest.approx(0.2)


def test_mse_shape_mismatch():
    with pytest.raises(ValidationError):
        mse_loss(np.zeros((4, 4)), np.zeros((8, 8)))


# ---------------------------------------------------------------------------
# Pre-training loop
# ---------------------------------------------------------------------------

def _identity_pair(resolution=16, seed=0):
    img = np.random.default_rng(seed).uniform(size=(resolution, resolution)).astype(np.float32)
    mask = (img > 0.5).astype(np.float32)
    return RenderPair(mask, np.repeat(mask[:, :, None], 3, axis=2))


def test_pretrain_zero_epochs_is_identity():
    translator = Translator(SMALL, seed=0)
    before = translator.flatten_params().copy()
    opt = OptimizerConfig(algorithm="adam", epochs=0, batch_size=4, seed=0)
    trained, curve = pretrain(translator, [_identity_pair()], opt)
    assert curve == []
    np.testing.assert_array_equal(trained.flatten_params(), before)


def test_pretrain_identity_task_converges():
    translator = Translator(SMALL, seed=1)
    opt = OptimizerConfig(
        algorithm="adam", learning_rate=3e-3, weight_decay=0.0, epochs=200,
        batch_size=4, seed=0,
    )
    _, curve = pretrain(translator, [_identity_pair()], opt)
    # Monotone decrease after warmup, and near-perfect memorization of the
    # single pair by the end.
    tail = curve[10:]
    assert all(b <= a + 1e-4 for a, b in zip(tail, tail[1:]))
    assert curve[-1] < 1e-3


def test_pretrain_deterministic():
    opt = OptimizerConfig(algorithm="adam", epochs=5, batch_size=2, seed=4)
    pairs = [_identity_pair(seed=s) for s in range(3)]
    a, curve_a = pretrain(Translator(SMALL, seed=2), pairs, opt)
    b, curve_b = pretrain(Translator(SMALL, seed=2), pairs, opt)
    np.testing.assert_array_equal(a.flatten_params(), b.flatten_params())
    assert curve_a == curve_b


def test_pretrain_max_steps_caps_epochs():
    opt = OptimizerConfig(algorithm="adam", epochs=50, batch_size=8, seed=0)
    _, curve = pretrain(Translator(SMALL, seed=0), [_identity_pair()], opt, max_steps=3)
    # One step per epoch here, so the cap cuts the curve at 3 epochs.
    assert len(curve) == 3


def test_pretrain_nan_aborts_with_location():
    bad = RenderPair(
        np.ones((16, 16), dtype=np.float32),
        np.full((16, 16, 3), np.nan, dtype=np.float32),
    )
    opt = OptimizerConfig(algorithm="adam", epochs=2, batch_size=2, seed=0)
    with pytest.raises(TrainingDivergedError, match="epoch 0"):
        pretrain(Translator(SMALL, seed=0), [bad], opt)


def test_pretrain_empty_corpus():
    opt = OptimizerConfig(algorithm="adam", epochs=1, batch_size=2, seed=0)
    with pytest.raises(ValidationError):
        pretrain(Translator(SMALL, seed=0), [], opt)


def test_pretrain_checkpoint_every(tmp_path):
    opt = OptimizerConfig(algorithm="adam", epochs=4, batch_size=2, seed=0)
    pretrain(
        Translator(SMALL, seed=0), [_identity_pair()], opt,
        checkpoint_dir=tmp_path, checkpoint_every=2,
    )
    names = sorted(p.name for p in tmp_path.glob("*.ckpt"))
    assert names == ["translator_epoch0002.ckpt", "translator_epoch0004.ckpt"]


def test_write_loss_curve(tmp_path):
    write_loss_curve([0.5, 0.25], tmp_path / "loss.csv")
    lines = (tmp_path / "loss.csv").read_text().strip().splitlines()
    assert lines[0] == "epoch,loss"
    assert lines[1].startswith("0,0.5")
    assert len(lines) == 3


# ---------------------------------------------------------------------------
# Gradient check
# ---------------------------------------------------------------------------

def test_gradient_check_two_level_translator():
    errors = translator_gradient_errors()
    assert errors, "no parameters checked"
    worst = max(errors.values())
    assert worst < 1e-4, f"worst relative error {worst:.2e} in {errors}"
