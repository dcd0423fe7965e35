"""Shared test fixtures: small simulated datasets written as manifests."""

from steerex.manifest import write_item_audio, write_manifest
from steerex.scene import SamplingRanges, render_mixture, sample_scene
from steerex.synthspeech import synth_utterance

TOY_RANGES = SamplingRanges(t60=(0.2, 0.3), doa_resolution_deg=45, interferer_count=1)


def build_toy_manifest(
    out_dir,
    train_count,
    test_count,
    seconds=1.0,
    seed=0,
    ranges=TOY_RANGES,
    snrs=(-5.0, 0.0, 5.0),
    sample_rate=16000,
):
    """Simulate a small dataset and return the manifest path."""
    records = []
    counter = 0
    for split, count in (("train", train_count), ("test", test_count)):
        for i in range(count):
            scene = sample_scene(seed + counter, ranges)
            target = synth_utterance(seed * 7919 + counter, seconds, sample_rate)
            interferers = [
                synth_utterance(
                    seed * 104729 + counter * 31 + k + 1, seconds, sample_rate
                )
                for k in range(scene.interferer_count)
            ]
            item = render_mixture(
                scene, target, interferers, snrs[counter % len(snrs)], sample_rate
            )
            records.append(write_item_audio(item, out_dir, f"{split[0]}{i:03d}", split))
            counter += 1
    path = out_dir / "manifest.jsonl"
    write_manifest(records, path)
    return path
