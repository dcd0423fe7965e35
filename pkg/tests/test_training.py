"""Two-stage training: data plumbing, both stages, resume, determinism."""

import numpy as np
import pytest
import torch

from conftest import build_toy_manifest
from steerex.conditioning import ConditioningMode
from steerex.discriminator import DiscConfig, MultiScaleDiscriminator
from steerex.errors import ConfigError
from steerex.generator import Generator, GeneratorConfig
from steerex.losses import LossWeights
from steerex.providers import ProviderConfig, ToySpatialFilter
from steerex.timefreq import StftConfig, default_loss_scales
from steerex.training import (
    Batch,
    GanBundle,
    LoadedItem,
    TrainConfig,
    TrainingData,
    _crop_item,
    draw_batch,
    gan_step,
    load_generator,
    load_provider,
    train_stage1,
    train_stage2,
)

FS = 16000

TINY_PROVIDER = ProviderConfig(
    stft=StftConfig(fft_length=128, window_length=128, hop_length=64),
    mic_count=3,
    direction_count=8,
    embed_dim=4,
    hidden_channels=8,
    lstm_hidden=6,
    sample_rate=FS,
)

TINY_GEN = dict(
    mic_count=3,
    stft=StftConfig(fft_length=128, window_length=128, hop_length=64),
    block_channels=(4, 6),
    freq_strides=(2, 2),
    latent_channels=8,
    lstm_layers=1,
    direction_count=8,
)

TINY_DISC = DiscConfig(
    scales=(
        StftConfig(fft_length=128, window_length=128, hop_length=32),
        StftConfig(fft_length=256, window_length=256, hop_length=64),
    ),
    channels=(4, 6),
)


def _stage1_cfg(manifest, steps=30, seed=0):
    return TrainConfig(
        stage=1,
        manifest_path=str(manifest),
        batch_size=2,
        steps=steps,
        crop_seconds=0.5,
        learning_rate=1e-3,
        provider=TINY_PROVIDER,
        seed=seed,
        val_fraction=0.2,
        val_every=10,
        val_items=2,
        log_every=5,
        sample_rate=FS,
    )


def _stage2_cfg(manifest, steps=6, seed=0, mode=ConditioningMode.X_PHI, weights=None):
    extra = {}
    if mode.uses_cond_features:
        extra = dict(cond_channels=TINY_PROVIDER.cond_channels, cond_bins=TINY_PROVIDER.cond_bins)
    return TrainConfig(
        stage=2,
        manifest_path=str(manifest),
        batch_size=2,
        steps=steps,
        crop_seconds=0.5,
        learning_rate=1e-3,
        disc_learning_rate=1e-3,
        weights=weights if weights is not None else LossWeights(),
        generator=GeneratorConfig(mode=mode, **TINY_GEN, **extra),
        discriminator=TINY_DISC,
        provider=TINY_PROVIDER,
        seed=seed,
        val_fraction=0.2,
        val_every=3,
        val_items=2,
        log_every=2,
        sample_rate=FS,
    )


@pytest.fixture(scope="module")
def toy_manifest(tmp_path_factory):
    return build_toy_manifest(tmp_path_factory.mktemp("trainset"), 10, 2)


@pytest.fixture(scope="module")
def single_item_manifest(tmp_path_factory):
    return build_toy_manifest(tmp_path_factory.mktemp("oneitem"), 1, 0)


@pytest.fixture(scope="module")
def stage1_result(toy_manifest, tmp_path_factory):
    out = tmp_path_factory.mktemp("s1") / "provider.ckpt"
    provider, outcome = train_stage1(toy_manifest, _stage1_cfg(toy_manifest), out)
    return provider, outcome, out


@pytest.fixture(scope="module")
def stage2_result(toy_manifest, tmp_path_factory):
    out = tmp_path_factory.mktemp("s2") / "gan.ckpt"
    generator, outcome = train_stage2(
        toy_manifest, None, _stage2_cfg(toy_manifest), out
    )
    return generator, outcome, out


# ------------------------------------------------------------------- data


def test_training_data_loads_split(toy_manifest):
    data = TrainingData(toy_manifest, "train", FS)
    assert len(data) == 10
    assert data.items[0].mixture.shape[0] == 3
    assert data.items[0].mixture.dtype == np.float32


def test_training_data_rejects_empty_split(toy_manifest):
    with pytest.raises(ConfigError, match="nosuch"):
        TrainingData(toy_manifest, "nosuch", FS)


def test_training_data_rejects_sample_rate_mismatch(toy_manifest):
    with pytest.raises(ConfigError, match="Hz"):
        TrainingData(toy_manifest, "train", 8000)


def test_split_validation_deterministic_and_disjoint(toy_manifest):
    data = TrainingData(toy_manifest, "train", FS)
    train_a, val_a = data.split_validation(3, 0.2)
    train_b, val_b = data.split_validation(3, 0.2)
    assert (train_a, val_a) == (train_b, val_b)
    assert not set(train_a) & set(val_a)
    assert sorted(train_a + val_a) == list(range(10))
    assert len(val_a) == 2


def test_draw_batch_shapes_and_determinism(toy_manifest):
    data = TrainingData(toy_manifest, "train", FS)
    crop = 4000
    a = draw_batch(data, list(range(10)), np.random.default_rng(5), 3, crop)
    b = draw_batch(data, list(range(10)), np.random.default_rng(5), 3, crop)
    assert a.mixture.shape == (3, 3, crop) and a.target.shape == (3, crop)
    assert a.doa.shape == (3,) and a.doa.dtype == torch.long
    assert torch.equal(a.mixture, b.mixture) and torch.equal(a.doa, b.doa)
    with pytest.raises(ConfigError, match="empty"):
        draw_batch(data, [], np.random.default_rng(0), 2, crop)


def test_crop_pads_short_items():
    item = LoadedItem(
        "x", np.ones((3, 100), np.float32), np.ones(100, np.float32), 0, 0.0
    )
    mix, tgt = _crop_item(item, 0, 150)
    assert mix.shape == (3, 150) and tgt.shape == (150,)
    assert tgt[100:].sum() == 0.0


# ---------------------------------------------------------------- stage 1


def test_stage1_trains_and_freezes(stage1_result):
    provider, outcome, path = stage1_result
    assert provider.is_frozen
    assert path.exists()
    assert outcome.checkpoint.kind == "provider"
    train_losses = [r["mask_l1"] for r in outcome.history if "mask_l1" in r]
    assert len(train_losses) >= 3
    # the validation batch is fixed, so its loss is the meaningful trend
    val_losses = [r["val_mask_l1"] for r in outcome.history if "val_mask_l1" in r]
    assert len(val_losses) >= 2
    assert val_losses[-1] < val_losses[0]


def test_stage1_rejects_wrong_stage(toy_manifest):
    with pytest.raises(ConfigError, match="stage"):
        train_stage1(toy_manifest, _stage2_cfg(toy_manifest))


def test_stage1_determinism_bitwise(toy_manifest, tmp_path):
    cfg = _stage1_cfg(toy_manifest, steps=8, seed=4)
    train_stage1(toy_manifest, cfg, tmp_path / "a.ckpt")
    train_stage1(toy_manifest, cfg, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_load_provider_round_trip(stage1_result):
    provider, _, path = stage1_result
    loaded = load_provider(path)
    assert loaded.is_frozen
    assert loaded.config == provider.config
    for (name, orig), (name2, got) in zip(
        provider.state_dict().items(), loaded.state_dict().items()
    ):
        assert name == name2 and torch.equal(orig, got)


def test_load_provider_rejects_other_kinds(stage2_result):
    _, _, gan_path = stage2_result
    with pytest.raises(ConfigError, match="provider"):
        load_provider(gan_path)


# ---------------------------------------------------------------- stage 2


def test_stage2_runs_and_checkpoints(stage2_result):
    generator, outcome, path = stage2_result
    assert path.exists()
    assert outcome.checkpoint.kind == "gan"
    assert outcome.checkpoint.step == 6
    steps = [r for r in outcome.history if "generator_total" in r]
    assert steps and all(np.isfinite(r["generator_total"]) for r in steps)
    assert all("discriminator_total" in r for r in steps)
    assert any("val_si_snr" in r for r in outcome.history)


def test_stage2_rejects_wrong_stage(toy_manifest):
    with pytest.raises(ConfigError, match="stage"):
        train_stage2(toy_manifest, None, _stage1_cfg(toy_manifest))


def test_stage2_feature_mode_requires_matching_provider(toy_manifest):
    cfg = _stage2_cfg(toy_manifest, mode=ConditioningMode.X_DL)
    with pytest.raises(ConfigError, match="provider"):
        train_stage2(toy_manifest, None, cfg)
    wrong = ToySpatialFilter(
        ProviderConfig(
            stft=StftConfig(fft_length=128, window_length=128, hop_length=64),
            mic_count=3,
            direction_count=8,
            embed_dim=4,
            hidden_channels=8,
            lstm_hidden=5,  # cond_channels 10 != generator's 12
            sample_rate=FS,
        )
    )
    with pytest.raises(ConfigError, match="conditioning shape"):
        train_stage2(toy_manifest, wrong, cfg)


def test_stage2_feature_mode_runs(toy_manifest, stage1_result, tmp_path):
    provider, _, _ = stage1_result
    cfg = _stage2_cfg(toy_manifest, steps=2, mode=ConditioningMode.X_PHI_DL)
    generator, outcome = train_stage2(toy_manifest, provider, cfg, tmp_path / "g.ckpt")
    assert generator.config.mode is ConditioningMode.X_PHI_DL
    assert outcome.checkpoint.step == 2


def test_load_generator_round_trip(stage2_result):
    generator, _, path = stage2_result
    loaded, echo = load_generator(path)
    assert not loaded.training
    assert echo["stage"] == 2
    assert loaded.config == generator.config
    for (name, orig), (name2, got) in zip(
        generator.state_dict().items(), loaded.state_dict().items()
    ):
        assert name == name2 and torch.equal(orig, got)


def test_load_generator_rejects_other_kinds(stage1_result):
    _, _, provider_path = stage1_result
    with pytest.raises(ConfigError, match="GAN"):
        load_generator(provider_path)


def test_stage2_resume_matches_uninterrupted(toy_manifest, tmp_path):
    cfg_half = _stage2_cfg(toy_manifest, steps=3, seed=9)
    cfg_full = _stage2_cfg(toy_manifest, steps=6, seed=9)
    train_stage2(toy_manifest, None, cfg_half, tmp_path / "half.ckpt")
    train_stage2(
        toy_manifest,
        None,
        cfg_full,
        tmp_path / "resumed.ckpt",
        resume_path=tmp_path / "half.ckpt",
    )
    train_stage2(toy_manifest, None, cfg_full, tmp_path / "straight.ckpt")
    assert (
        (tmp_path / "resumed.ckpt").read_bytes()
        == (tmp_path / "straight.ckpt").read_bytes()
    )


# --------------------------------------------------------------- gan_step


def _bundle_and_batch(toy_manifest, weights_mode=ConditioningMode.X_PHI):
    torch.manual_seed(0)
    data = TrainingData(toy_manifest, "train", FS)
    batch = draw_batch(data, list(range(len(data))), np.random.default_rng(1), 2, 4000)
    generator = Generator(GeneratorConfig(mode=weights_mode, **TINY_GEN))
    discriminator = MultiScaleDiscriminator(TINY_DISC)
    bundle = GanBundle(
        generator,
        discriminator,
        None,
        torch.optim.Adam(generator.parameters(), lr=1e-3),
        torch.optim.Adam(discriminator.parameters(), lr=1e-3),
        5.0,
        default_loss_scales(FS),
        FS,
    )
    return bundle, batch


def _clone_params(module):
    return {k: v.detach().clone() for k, v in module.state_dict().items()}


def _any_changed(module, before):
    return any(
        not torch.equal(v, before[k]) for k, v in module.state_dict().items()
    )


def test_gan_step_updates_both_models(toy_manifest):
    bundle, batch = _bundle_and_batch(toy_manifest)
    gen_before = _clone_params(bundle.generator)
    disc_before = _clone_params(bundle.discriminator)
    report = gan_step(batch, bundle, LossWeights(), step=1)
    assert _any_changed(bundle.generator, gen_before)
    assert _any_changed(bundle.discriminator, disc_before)
    for value in report.as_dict().values():
        assert np.isfinite(value)
    assert report.discriminator_total > 0


def test_gan_step_pure_reconstruction_leaves_discriminator_alone(toy_manifest):
    bundle, batch = _bundle_and_batch(toy_manifest)
    gen_before = _clone_params(bundle.generator)
    disc_before = _clone_params(bundle.discriminator)
    report = gan_step(
        batch, bundle, LossWeights(adversarial=0.0, feature_match=0.0), step=1
    )
    assert not _any_changed(bundle.discriminator, disc_before)
    assert _any_changed(bundle.generator, gen_before)
    assert report.adversarial == 0.0 and report.feature_match == 0.0
    assert report.generator_total == pytest.approx(report.reconstruction)


def test_pure_recon_overfit_smoke(single_item_manifest, tmp_path):
    cfg = TrainConfig(
        stage=2,
        manifest_path=str(single_item_manifest),
        batch_size=1,
        steps=60,
        crop_seconds=0.25,
        learning_rate=2e-3,
        disc_learning_rate=2e-3,
        weights=LossWeights(adversarial=0.0, feature_match=0.0),
        generator=GeneratorConfig(mode=ConditioningMode.X_PHI, **TINY_GEN),
        discriminator=TINY_DISC,
        provider=TINY_PROVIDER,
        seed=1,
        val_fraction=0.0,
        val_every=100,
        val_items=1,
        log_every=1,
        sample_rate=FS,
    )
    _, outcome = train_stage2(single_item_manifest, None, cfg)
    recs = [r["reconstruction"] for r in outcome.history if "reconstruction" in r]
    assert len(recs) == 60
    assert np.mean(recs[-5:]) < np.mean(recs[:5])
