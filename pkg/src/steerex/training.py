"""Two-stage training.

Stage 1 fits the spatial-filter feature provider with an l1
mask/signal-approximation objective; stage 2 trains the GAN (strict 1:1
discriminator/generator alternation, hinge + feature-matching +
reconstruction losses) with frozen provider features.  A deterministic
single-thread mode makes checkpoints bitwise reproducible for a fixed
seed.  Step records are line-oriented JSON.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .checkpoint import (
    CheckpointData,
    load_checkpoint,
    rng_restore,
    rng_snapshot,
    save_checkpoint,
    to_jsonable,
)
from .discriminator import DiscConfig, MultiScaleDiscriminator
from .errors import ConfigError, TrainingFault
from .generator import Generator, GeneratorConfig
from .losses import (
    LossReport,
    LossWeights,
    adv_gen_loss,
    disc_loss,
    feat_match_loss,
    recon_loss,
    total_gen_loss,
)
from .manifest import load_item_audio, read_manifest
from .metrics import si_snr
from .providers import ProviderConfig, ToySpatialFilter, extract_features, mask_objective
from .timefreq import SpectralScale, default_loss_scales


@dataclass(frozen=True)
class TrainConfig:
    """Everything one training run depends on; echoed into checkpoints."""

    stage: int = 2
    manifest_path: str = ""
    batch_size: int = 2
    steps: int = 500
    crop_seconds: float = 1.5
    learning_rate: float = 3e-4
    disc_learning_rate: float = 3e-4
    grad_clip: float = 5.0
    weights: LossWeights = field(default_factory=LossWeights)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscConfig = field(default_factory=DiscConfig)
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    seed: int = 0
    val_fraction: float = 0.1
    val_every: int = 100
    val_items: int = 8
    log_every: int = 10
    sample_rate: int = 16000
    deterministic: bool = True

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ConfigError(f"stage must be 1 or 2, got {self.stage}")
        if self.batch_size < 1 or self.steps < 1:
            raise ConfigError(
                f"batch_size and steps must be positive, got "
                f"{self.batch_size}/{self.steps}"
            )
        if self.crop_seconds <= 0:
            raise ConfigError(f"crop_seconds must be positive, got {self.crop_seconds}")
        if self.learning_rate <= 0 or self.disc_learning_rate <= 0:
            raise ConfigError("learning rates must be positive")
        if self.grad_clip <= 0:
            raise ConfigError(f"grad_clip must be positive, got {self.grad_clip}")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError(f"val_fraction must lie in [0, 1), got {self.val_fraction}")
        if self.val_every < 1 or self.log_every < 1 or self.val_items < 1:
            raise ConfigError("val_every, val_items, and log_every must be positive")
        if self.sample_rate < 1:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")

    @property
    def crop_samples(self) -> int:
        return int(round(self.crop_seconds * self.sample_rate))


def seed_all(seed: int, deterministic: bool = True) -> None:
    """Fix torch RNG; in deterministic mode also pin threading and kernels."""
    torch.manual_seed(seed)
    if deterministic:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)


# ------------------------------------------------------------------- data


@dataclass
class LoadedItem:
    item_id: str
    mixture: np.ndarray  # (M, L) float32
    target: np.ndarray  # (L,) float32
    doa_index: int
    snr_db: float


class TrainingData:
    """All items of one manifest split, preloaded as float32 arrays."""

    def __init__(self, manifest_path, split: str = "train", sample_rate: int = 16000):
        manifest_path = Path(manifest_path)
        records = [r for r in read_manifest(manifest_path) if r.split == split]
        if not records:
            raise ConfigError(f"manifest {manifest_path} has no '{split}' items")
        self.items: list[LoadedItem] = []
        base = manifest_path.parent
        for record in records:
            mixture, target, fs = load_item_audio(record, base)
            if fs != sample_rate:
                raise ConfigError(
                    f"item {record.item_id} is sampled at {fs} Hz, expected {sample_rate}"
                )
            self.items.append(
                LoadedItem(
                    record.item_id,
                    mixture.astype(np.float32),
                    target.astype(np.float32),
                    record.doa_index,
                    record.snr_db,
                )
            )

    def __len__(self) -> int:
        return len(self.items)

    def split_validation(self, seed: int, fraction: float) -> tuple[list[int], list[int]]:
        """Deterministic by-item train/validation split."""
        n = len(self.items)
        order = np.random.default_rng(np.random.PCG64(seed)).permutation(n)
        val_count = 0
        if fraction > 0 and n > 1:
            val_count = min(n - 1, max(1, int(round(n * fraction))))
        val = sorted(int(i) for i in order[:val_count])
        train = sorted(int(i) for i in order[val_count:])
        return train, val


@dataclass
class Batch:
    mixture: torch.Tensor  # (B, M, Lc)
    target: torch.Tensor  # (B, Lc)
    doa: torch.Tensor  # (B,) long


def _crop_item(item: LoadedItem, start: int, crop_len: int) -> tuple[np.ndarray, np.ndarray]:
    length = item.target.shape[-1]
    if length >= crop_len:
        start = min(start, length - crop_len)
        return (
            item.mixture[:, start : start + crop_len],
            item.target[start : start + crop_len],
        )
    pad = crop_len - length
    return (
        np.pad(item.mixture, ((0, 0), (0, pad))),
        np.pad(item.target, (0, pad)),
    )


def draw_batch(
    data: TrainingData,
    pool: list[int],
    rng: np.random.Generator,
    batch_size: int,
    crop_len: int,
) -> Batch:
    """Sample items and crop offsets from the given index pool."""
    if not pool:
        raise ConfigError("cannot draw a batch from an empty item pool")
    picks = rng.integers(0, len(pool), size=batch_size)
    offsets = rng.integers(0, 2**31, size=batch_size)
    mixes, targets, doas = [], [], []
    for pick, offset in zip(picks, offsets):
        item = data.items[pool[int(pick)]]
        room = max(1, item.target.shape[-1] - crop_len + 1)
        mix, target = _crop_item(item, int(offset) % room, crop_len)
        mixes.append(mix)
        targets.append(target)
        doas.append(item.doa_index)
    return Batch(
        torch.from_numpy(np.stack(mixes)),
        torch.from_numpy(np.stack(targets)),
        torch.tensor(doas, dtype=torch.long),
    )


def _center_batch(data: TrainingData, indices: list[int], crop_len: int) -> Batch:
    mixes, targets, doas = [], [], []
    for idx in indices:
        item = data.items[idx]
        start = max(0, (item.target.shape[-1] - crop_len) // 2)
        mix, target = _crop_item(item, start, crop_len)
        mixes.append(mix)
        targets.append(target)
        doas.append(item.doa_index)
    return Batch(
        torch.from_numpy(np.stack(mixes)),
        torch.from_numpy(np.stack(targets)),
        torch.tensor(doas, dtype=torch.long),
    )


# ---------------------------------------------------------------- logging


class _JsonlLogger:
    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.records: list[dict] = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def write(self, record: dict) -> None:
        self.records.append(record)
        if self.path:
            with open(self.path, "a") as f:
                f.write(json.dumps(record, sort_keys=True) + "\n")


@dataclass
class TrainOutcome:
    """Final checkpoint, full step history, and the on-disk location."""

    checkpoint: CheckpointData
    history: list[dict]
    checkpoint_path: Path | None


# ------------------------------------------------------------- optimizers


def _optimizer_tensors(prefix: str, opt: torch.optim.Optimizer) -> dict[str, torch.Tensor]:
    out = {}
    for pid, state in opt.state_dict()["state"].items():
        for key, value in state.items():
            tensor = value if isinstance(value, torch.Tensor) else torch.tensor(value)
            out[f"{prefix}.{pid}.{key}"] = tensor
    return out


def _load_optimizer(prefix: str, opt: torch.optim.Optimizer, tensors: dict) -> None:
    state: dict[int, dict] = {}
    for name, tensor in tensors.items():
        if not name.startswith(prefix + "."):
            continue
        _, pid, key = name.split(".", 2)
        state.setdefault(int(pid), {})[key] = tensor
    if not state:
        return
    base = opt.state_dict()
    base["state"] = state
    opt.load_state_dict(base)


def _prefixed(prefix: str, module: nn.Module) -> dict[str, torch.Tensor]:
    return {f"{prefix}.{k}": v for k, v in module.state_dict().items()}


def _strip_prefix(prefix: str, tensors: dict) -> dict[str, torch.Tensor]:
    plen = len(prefix) + 1
    return {k[plen:]: v for k, v in tensors.items() if k.startswith(prefix + ".")}


# ----------------------------------------------------------------- stage 1


def _stage1_validation(
    provider: ToySpatialFilter, data: TrainingData, indices: list[int], crop_len: int
) -> float:
    with torch.no_grad():
        batch = _center_batch(data, indices, crop_len)
        return float(mask_objective(provider, batch.mixture, batch.target, batch.doa))


def train_stage1(
    manifest_path,
    cfg: TrainConfig,
    out_path=None,
    log_path=None,
) -> tuple[ToySpatialFilter, TrainOutcome]:
    """Train the feature provider; returns it frozen plus its checkpoint."""
    if cfg.stage != 1:
        raise ConfigError(f"stage-1 training requires stage=1, got {cfg.stage}")
    seed_all(cfg.seed, cfg.deterministic)
    data = TrainingData(manifest_path, "train", cfg.sample_rate)
    train_idx, val_idx = data.split_validation(cfg.seed, cfg.val_fraction)
    provider = ToySpatialFilter(cfg.provider)
    opt = torch.optim.Adam(provider.parameters(), lr=cfg.learning_rate)
    rng = np.random.default_rng(np.random.PCG64(cfg.seed + 1))
    crop = cfg.crop_samples
    logger = _JsonlLogger(log_path)

    if val_idx:
        logger.write(
            {
                "stage": 1,
                "step": 0,
                "val_mask_l1": _stage1_validation(provider, data, val_idx, crop),
            }
        )
    for step in range(1, cfg.steps + 1):
        batch = draw_batch(data, train_idx, rng, cfg.batch_size, crop)
        loss = mask_objective(provider, batch.mixture, batch.target, batch.doa)
        if not torch.isfinite(loss):
            raise TrainingFault(f"stage 1 step {step}: non-finite mask loss")
        opt.zero_grad()
        loss.backward()
        nn.utils.clip_grad_norm_(provider.parameters(), cfg.grad_clip)
        opt.step()
        if step == 1 or step == cfg.steps or step % cfg.log_every == 0:
            logger.write({"stage": 1, "step": step, "mask_l1": float(loss.detach())})
        if val_idx and (step % cfg.val_every == 0 or step == cfg.steps):
            logger.write(
                {
                    "stage": 1,
                    "step": step,
                    "val_mask_l1": _stage1_validation(provider, data, val_idx, crop),
                }
            )

    provider.freeze()
    tensors = _prefixed("prov", provider)
    tensors.update(_optimizer_tensors("opt1", opt))
    ckpt = CheckpointData(
        "provider", to_jsonable(cfg), cfg.steps, rng_snapshot(rng), tensors
    )
    path = None
    if out_path is not None:
        save_checkpoint(out_path, ckpt.kind, ckpt.config, ckpt.step, ckpt.rng, ckpt.tensors)
        path = Path(out_path)
    return provider, TrainOutcome(ckpt, logger.records, path)


def load_provider(path) -> ToySpatialFilter:
    """Rebuild a frozen provider from a stage-1 checkpoint."""
    from .config import build_dataclass  # function-level: config imports this module

    ck = load_checkpoint(path)
    if ck.kind != "provider":
        raise ConfigError(f"{path} holds a '{ck.kind}' checkpoint, not a provider")
    cfg = build_dataclass(ProviderConfig, ck.config.get("provider"), "provider")
    provider = ToySpatialFilter(cfg)
    provider.load_state_dict(_strip_prefix("prov", ck.tensors))
    return provider.freeze()


# ----------------------------------------------------------------- stage 2


@dataclass
class GanBundle:
    """Models and optimizers threaded through every GAN step."""

    generator: Generator
    discriminator: MultiScaleDiscriminator
    provider: ToySpatialFilter | None
    gen_opt: torch.optim.Optimizer
    disc_opt: torch.optim.Optimizer
    grad_clip: float
    recon_scales: list[SpectralScale]
    sample_rate: int = 16000


def _conditions(bundle: GanBundle, batch: Batch):
    mode = bundle.generator.config.mode
    doa = batch.doa if mode.uses_phi else None
    cond = None
    if mode.uses_cond_features:
        cond = extract_features(
            bundle.provider, batch.mixture, batch.doa, bundle.sample_rate
        ).values
    return doa, cond


def gan_step(
    batch: Batch, bundle: GanBundle, weights: LossWeights, step: int = 0
) -> LossReport:
    """One discriminator update, then one generator update."""
    doa, cond = _conditions(bundle, batch)
    estimate = bundle.generator(batch.mixture, doa, cond)

    adversarial_active = weights.adversarial > 0 or weights.feature_match > 0
    l_d = torch.zeros(())
    l_adv = torch.zeros(())
    l_feat = torch.zeros(())
    if adversarial_active:
        real_out = bundle.discriminator(batch.target)
        fake_out = bundle.discriminator(estimate.detach())
        l_d = disc_loss(real_out, fake_out)
        if not torch.isfinite(l_d):
            raise TrainingFault(f"step {step}: non-finite discriminator loss")
        bundle.disc_opt.zero_grad()
        l_d.backward()
        nn.utils.clip_grad_norm_(bundle.discriminator.parameters(), bundle.grad_clip)
        bundle.disc_opt.step()

        with torch.no_grad():
            real_ref = bundle.discriminator(batch.target)
        fake_for_g = bundle.discriminator(estimate)
        l_adv = adv_gen_loss(fake_for_g)
        l_feat = feat_match_loss(real_ref, fake_for_g)

    l_t, l_f = recon_loss(estimate, batch.target, bundle.recon_scales, bundle.sample_rate)
    l_rec = weights.time_l1 * l_t + l_f
    try:
        l_g = total_gen_loss(l_rec, l_adv, l_feat, weights)
    except TrainingFault as exc:
        raise TrainingFault(f"step {step}: {exc}") from exc
    bundle.gen_opt.zero_grad()
    if adversarial_active:
        bundle.disc_opt.zero_grad()  # G backprop also fills disc grads; discard them
    l_g.backward()
    nn.utils.clip_grad_norm_(bundle.generator.parameters(), bundle.grad_clip)
    bundle.gen_opt.step()

    return LossReport(
        time_l1=float(l_t.detach()),
        spectral=float(l_f.detach()),
        reconstruction=float(l_rec.detach()),
        adversarial=float(l_adv.detach()),
        feature_match=float(l_feat.detach()),
        generator_total=float(l_g.detach()),
        discriminator_total=float(l_d.detach()),
    )


def _stage2_validation(bundle: GanBundle, data, indices, crop_len, max_items) -> float | None:
    picks = indices[:max_items]
    if not picks:
        return None
    values = []
    with torch.no_grad():
        batch = _center_batch(data, picks, crop_len)
        doa, cond = _conditions(bundle, batch)
        estimates = bundle.generator(batch.mixture, doa, cond)
    for i in range(len(picks)):
        reference = batch.target[i].numpy().astype(np.float64)
        if float(np.sum(reference**2)) <= 1e-10:
            continue
        values.append(si_snr(estimates[i].numpy().astype(np.float64), reference))
    return float(np.mean(values)) if values else None


def train_stage2(
    manifest_path,
    provider: ToySpatialFilter | None,
    cfg: TrainConfig,
    out_path=None,
    log_path=None,
    resume_path=None,
) -> tuple[Generator, TrainOutcome]:
    """Train the GAN; the provider is frozen and only queried for features."""
    if cfg.stage != 2:
        raise ConfigError(f"stage-2 training requires stage=2, got {cfg.stage}")
    mode = cfg.generator.mode
    if mode.uses_cond_features:
        if provider is None:
            raise ConfigError(f"mode {mode.value} requires a trained feature provider")
        if (
            provider.config.cond_channels != cfg.generator.cond_channels
            or provider.config.cond_bins != cfg.generator.cond_bins
        ):
            raise ConfigError(
                f"provider features ({provider.config.cond_channels}, "
                f"{provider.config.cond_bins}) do not match the generator's "
                f"conditioning shape ({cfg.generator.cond_channels}, "
                f"{cfg.generator.cond_bins})"
            )
        provider.freeze()

    seed_all(cfg.seed, cfg.deterministic)
    data = TrainingData(manifest_path, "train", cfg.sample_rate)
    train_idx, val_idx = data.split_validation(cfg.seed, cfg.val_fraction)
    generator = Generator(cfg.generator)
    discriminator = MultiScaleDiscriminator(cfg.discriminator)
    gen_opt = torch.optim.Adam(generator.parameters(), lr=cfg.learning_rate)
    disc_opt = torch.optim.Adam(discriminator.parameters(), lr=cfg.disc_learning_rate)
    rng = np.random.default_rng(np.random.PCG64(cfg.seed + 2))

    start_step = 0
    if resume_path is not None:
        ck = load_checkpoint(resume_path)
        if ck.kind != "gan":
            raise ConfigError(f"{resume_path} holds a '{ck.kind}' checkpoint, not a GAN")
        generator.load_state_dict(_strip_prefix("gen", ck.tensors))
        discriminator.load_state_dict(_strip_prefix("disc", ck.tensors))
        _load_optimizer("optg", gen_opt, ck.tensors)
        _load_optimizer("optd", disc_opt, ck.tensors)
        rng_restore(ck.rng, rng)
        start_step = ck.step

    bundle = GanBundle(
        generator,
        discriminator,
        provider if mode.uses_cond_features else None,
        gen_opt,
        disc_opt,
        cfg.grad_clip,
        default_loss_scales(cfg.sample_rate),
        cfg.sample_rate,
    )
    crop = cfg.crop_samples
    logger = _JsonlLogger(log_path)
    for step in range(start_step + 1, cfg.steps + 1):
        batch = draw_batch(data, train_idx, rng, cfg.batch_size, crop)
        report = gan_step(batch, bundle, cfg.weights, step)
        if step == 1 or step == cfg.steps or step % cfg.log_every == 0:
            logger.write({"stage": 2, "step": step, **report.as_dict()})
        if val_idx and (step % cfg.val_every == 0 or step == cfg.steps):
            score = _stage2_validation(bundle, data, val_idx, crop, cfg.val_items)
            if score is not None:
                logger.write({"stage": 2, "step": step, "val_si_snr": score})

    final_step = max(cfg.steps, start_step)
    tensors = _prefixed("gen", generator)
    tensors.update(_prefixed("disc", discriminator))
    tensors.update(_optimizer_tensors("optg", gen_opt))
    tensors.update(_optimizer_tensors("optd", disc_opt))
    ckpt = CheckpointData(
        "gan", to_jsonable(cfg), final_step, rng_snapshot(rng), tensors
    )
    path = None
    if out_path is not None:
        save_checkpoint(out_path, ckpt.kind, ckpt.config, ckpt.step, ckpt.rng, ckpt.tensors)
        path = Path(out_path)
    return generator, TrainOutcome(ckpt, logger.records, path)


def load_generator(path) -> tuple[Generator, dict]:
    """Rebuild a generator from a stage-2 checkpoint; returns (model, config echo)."""
    from .config import build_dataclass  # function-level: config imports this module

    ck = load_checkpoint(path)
    if ck.kind != "gan":
        raise ConfigError(f"{path} holds a '{ck.kind}' checkpoint, not a GAN")
    cfg = build_dataclass(GeneratorConfig, ck.config.get("generator"), "generator")
    generator = Generator(cfg)
    generator.load_state_dict(_strip_prefix("gen", ck.tensors))
    generator.eval()
    return generator, ck.config
