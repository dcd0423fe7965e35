"""Command-line surface: simulate, train, infer, evaluate, sweep.

Every command validates its configuration fully before writing anything
(`--dry-run` stops right after that validation).  Exit codes: 0 success,
1 usage or configuration error, 2 runtime fault (including evaluation
items that could not be scored).
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

import numpy as np

from .audio_io import read_wav, write_wav
from .conditioning import ConditioningMode
from .config import (
    ExperimentConfig,
    PLACEMENTS,
    config_to_dict,
    load_config,
    save_config,
)
from .errors import ConfigError, TrainingFault
from .evaluate import EvalConfig, evaluate, make_extractor, selectivity_sweep
from .manifest import write_item_audio, write_manifest
from .scene import render_mixture, sample_scene
from .training import load_generator, load_provider, train_stage1, train_stage2

CORPUS_ENV = "STEEREX_CORPUS"


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as config errors (exit 1)."""

    def error(self, message):
        raise ConfigError(message)


# ---------------------------------------------------------------- helpers


def _experiment(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, seed=args.seed))
    return cfg


def _corpus_files(args) -> list[Path]:
    root = args.corpus or os.environ.get(CORPUS_ENV)
    if not root:
        raise ConfigError(
            f"no corpus given: pass --corpus or set ${CORPUS_ENV} to a directory "
            "of mono WAV files"
        )
    root = Path(root)
    if not root.is_dir():
        raise ConfigError(f"corpus directory {root} does not exist")
    files = sorted(root.rglob("*.wav"))
    if not files:
        raise ConfigError(f"corpus directory {root} holds no WAV files")
    return files


def _utterance(path: Path, length: int, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    wave, fs = read_wav(path)
    if wave.ndim != 1:
        raise ConfigError(f"corpus file {path} is not mono")
    if fs != sample_rate:
        raise ConfigError(f"corpus file {path} is sampled at {fs} Hz, expected {sample_rate}")
    if wave.shape[0] >= length:
        start = int(rng.integers(0, wave.shape[0] - length + 1))
        return wave[start : start + length]
    reps = -(-length // wave.shape[0])
    return np.tile(wave, reps)[:length]


def _extractor_from_checkpoint(checkpoint_path, provider_path):
    generator, echo = load_generator(checkpoint_path)
    sample_rate = int(echo.get("sample_rate", 16000))
    provider = None
    if generator.config.mode.uses_cond_features:
        if provider_path is None:
            raise ConfigError(
                f"mode {generator.config.mode.value} needs --provider "
                "(a stage-1 checkpoint)"
            )
        provider = load_provider(provider_path)
    return make_extractor(generator, provider, sample_rate), generator, sample_rate


# --------------------------------------------------------------- simulate


def cmd_simulate(args) -> int:
    cfg = _experiment(args)
    sim = cfg.simulate
    if args.mode is not None:
        sim = dataclasses.replace(sim, placement=args.mode)
    if args.count is not None:
        sim = dataclasses.replace(sim, train_count=args.count)
    if args.test_count is not None:
        sim = dataclasses.replace(sim, test_count=args.test_count)
    files = _corpus_files(args)
    out_dir = Path(args.out)
    ranges = sim.ranges
    directions = ranges.direction_count

    if args.dry_run:
        total = sim.train_count + sim.test_count
        print(
            f"dry run: would simulate {sim.train_count}+{sim.test_count} items "
            f"({total} total, {sim.placement} placement, {directions} directions) "
            f"into {out_dir} from {len(files)} corpus files"
        )
        return 0

    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write_probe"
        probe.touch()
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {out_dir} is not writable: {exc}") from exc

    rng = np.random.default_rng(np.random.PCG64(cfg.seed))
    records = []
    counter = 0
    plan = (("train", sim.train_count, sim.train_seconds), ("test", sim.test_count, sim.test_seconds))
    for split, count, seconds in plan:
        length = int(round(seconds * cfg.sample_rate))
        for i in range(count):
            doa_index = 0 if sim.placement == "fixed" else i % directions
            scene = sample_scene(cfg.seed * 1_000_003 + counter, ranges, doa_index)
            target = _utterance(files[int(rng.integers(0, len(files)))], length, cfg.sample_rate, rng)
            interferers = [
                _utterance(files[int(rng.integers(0, len(files)))], length, cfg.sample_rate, rng)
                for _ in range(scene.interferer_count)
            ]
            snr = sim.snr_choices_db[i % len(sim.snr_choices_db)]
            item = render_mixture(scene, target, interferers, snr, cfg.sample_rate)
            records.append(write_item_audio(item, out_dir, f"{split[0]}{i:05d}", split))
            counter += 1
            if args.verbose:
                print(f"wrote {split} item {i + 1}/{count}", file=sys.stderr)
    manifest_path = out_dir / "manifest.jsonl"
    write_manifest(records, manifest_path)
    save_config(dataclasses.replace(cfg, simulate=sim), out_dir / "config.yaml")
    print(manifest_path)
    return 0


# ------------------------------------------------------------------ train


def cmd_train(args) -> int:
    cfg = _experiment(args)
    train_cfg = dataclasses.replace(
        cfg.train, stage=args.stage, manifest_path=str(args.manifest)
    )
    if args.steps is not None:
        train_cfg = dataclasses.replace(train_cfg, steps=args.steps)
    if args.mode is not None:
        generator = dataclasses.replace(
            train_cfg.generator, mode=ConditioningMode(args.mode)
        )
        train_cfg = dataclasses.replace(train_cfg, generator=generator)

    manifest = Path(args.manifest)
    if not manifest.is_file():
        raise ConfigError(f"manifest {manifest} does not exist")
    provider = None
    if args.stage == 2 and train_cfg.generator.mode.uses_cond_features:
        if args.provider is None:
            raise ConfigError(
                f"stage 2 in mode {train_cfg.generator.mode.value} needs "
                "--provider (a stage-1 checkpoint)"
            )
        provider = load_provider(args.provider)
    if args.resume is not None and not Path(args.resume).is_file():
        raise ConfigError(f"resume checkpoint {args.resume} does not exist")

    run_dir = Path(args.out)
    ckpt_path = run_dir / "checkpoints" / f"stage{args.stage}.ckpt"
    log_path = run_dir / "logs" / f"stage{args.stage}.jsonl"
    if args.dry_run:
        print(
            f"dry run: stage {args.stage} for {train_cfg.steps} steps on "
            f"{manifest} -> {ckpt_path}"
        )
        return 0

    experiment = dataclasses.replace(cfg, train=train_cfg)
    save_config(experiment, run_dir / "config.yaml")
    if args.stage == 1:
        _, outcome = train_stage1(manifest, train_cfg, ckpt_path, log_path)
    else:
        _, outcome = train_stage2(
            manifest, provider, train_cfg, ckpt_path, log_path, args.resume
        )
    print(outcome.checkpoint_path)
    return 0


# ------------------------------------------------------------------ infer


def cmd_infer(args) -> int:
    extractor, generator, sample_rate = _extractor_from_checkpoint(
        args.checkpoint, args.provider
    )
    wave, fs = read_wav(args.input)
    mixture = np.atleast_2d(wave)
    mics = generator.config.mic_count
    if mixture.shape[0] != mics:
        raise ConfigError(
            f"{args.input} has {mixture.shape[0]} channels but the checkpoint "
            f"expects {mics}"
        )
    if fs != sample_rate:
        raise ConfigError(f"{args.input} is sampled at {fs} Hz, expected {sample_rate}")
    directions = generator.config.direction_count
    index = int(round(args.doa * directions / 360.0)) % directions
    if args.dry_run:
        print(f"dry run: would steer to {args.doa} deg (index {index}) -> {args.output}")
        return 0
    estimate = extractor(mixture, index)
    write_wav(args.output, estimate.astype(np.float32), sample_rate)
    print(args.output)
    return 0


# --------------------------------------------------------------- evaluate


def cmd_evaluate(args) -> int:
    cfg = _experiment(args)
    eval_cfg = cfg.evaluate
    if args.max_items is not None:
        eval_cfg = dataclasses.replace(eval_cfg, max_items=args.max_items)
    manifest = Path(args.manifest)
    if not manifest.is_file():
        raise ConfigError(f"manifest {manifest} does not exist")
    extractor, _, _ = _extractor_from_checkpoint(args.checkpoint, args.provider)
    report_path = Path(args.out) / "reports" / "metrics.txt"
    if args.dry_run:
        print(f"dry run: would evaluate split '{args.split}' of {manifest} -> {report_path}")
        return 0
    report = evaluate(extractor, manifest, eval_cfg, args.split)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(report.to_text())
    print(report_path)
    if report.overall is not None:
        print(
            f"items={report.overall.count} "
            f"mean_si_snr={report.overall.si_snr_mean:.2f} dB "
            f"mean_delta_si_snr={report.overall.delta_mean:.2f} dB"
        )
    if report.skipped or report.external_failures:
        print(
            f"faults: {report.skipped} items skipped, "
            f"{report.external_failures} external scores failed",
            file=sys.stderr,
        )
        return 2
    return 0


# ------------------------------------------------------------------ sweep


def cmd_sweep(args) -> int:
    cfg = _experiment(args)
    eval_cfg = cfg.evaluate
    if args.step is not None:
        eval_cfg = dataclasses.replace(eval_cfg, sweep_step_deg=args.step)
    if args.crop_seconds is not None:
        eval_cfg = dataclasses.replace(eval_cfg, sweep_crop_seconds=args.crop_seconds)
    manifest = Path(args.manifest)
    if not manifest.is_file():
        raise ConfigError(f"manifest {manifest} does not exist")
    extractor, _, _ = _extractor_from_checkpoint(args.checkpoint, args.provider)
    table_path = Path(args.out) / "reports" / "sweep.tsv"
    if args.dry_run:
        print(
            f"dry run: would sweep {eval_cfg.sweep_step_deg}-degree steering over "
            f"at most {args.max_scenes} scenes -> {table_path}"
        )
        return 0
    profile = selectivity_sweep(
        extractor, manifest, eval_cfg, args.split, args.max_scenes
    )
    table_path.parent.mkdir(parents=True, exist_ok=True)
    table_path.write_text(profile.to_table())
    print(table_path)
    hits = sum(
        profile.argmax_degrees(i) == profile.target_degrees[i]
        for i in range(len(profile.scene_ids))
    )
    print(f"scenes={len(profile.scene_ids)} argmax_at_target={hits}")
    return 0


# ------------------------------------------------------------------- main


def build_parser() -> _Parser:
    parser = _Parser(
        prog="steerex",
        description="Spatially steered target-speaker extraction toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="experiment YAML (defaults when omitted)")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument(
            "--dry-run",
            action="store_true",
            help="validate everything, then exit before writing",
        )

    p = sub.add_parser("simulate", help="render a multichannel dataset")
    common(p)
    p.add_argument("--out", required=True, help="dataset output directory")
    p.add_argument("--corpus", help=f"mono WAV corpus directory (or ${CORPUS_ENV})")
    p.add_argument("--count", type=int, help="train item count override")
    p.add_argument("--test-count", type=int, help="test item count override")
    p.add_argument("--mode", choices=PLACEMENTS, help="target placement override")
    p.add_argument("--verbose", action="store_true", help="log per-item progress")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="run one training stage")
    common(p)
    p.add_argument("--manifest", required=True, help="dataset manifest path")
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--steps", type=int, help="step count override")
    p.add_argument(
        "--mode",
        choices=[m.value for m in ConditioningMode],
        help="conditioning mode override (stage 2)",
    )
    p.add_argument("--provider", help="stage-1 checkpoint for feature modes")
    p.add_argument("--resume", help="stage-2 checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="extract one steered source from a WAV")
    common(p)
    p.add_argument("--checkpoint", required=True, help="stage-2 checkpoint")
    p.add_argument("--provider", help="stage-1 checkpoint for feature modes")
    p.add_argument("--input", required=True, help="M-channel mixture WAV")
    p.add_argument("--doa", type=float, required=True, help="target direction, degrees")
    p.add_argument("--output", required=True, help="mono output WAV path")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="score a checkpoint on a manifest split")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--provider", help="stage-1 checkpoint for feature modes")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--split", default="test")
    p.add_argument("--max-items", type=int, help="cap the number of scored items")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="steering-angle selectivity sweep")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--provider", help="stage-1 checkpoint for feature modes")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--split", default="test")
    p.add_argument("--step", type=int, help="steering grid step, degrees")
    p.add_argument("--max-scenes", type=int, default=20)
    p.add_argument("--crop-seconds", type=float, help="crop scenes before sweeping")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrainingFault as exc:
        print(f"training fault: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"fault: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
