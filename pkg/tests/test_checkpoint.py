"""Checkpoint container: byte determinism, fidelity, and RNG snapshots."""

import numpy as np
import pytest
import torch

from steerex.checkpoint import (
    CheckpointData,
    load_checkpoint,
    rng_restore,
    rng_snapshot,
    save_checkpoint,
    to_jsonable,
)
from steerex.conditioning import ConditioningMode
from steerex.generator import GeneratorConfig


def _tensors():
    g = torch.Generator().manual_seed(0)
    return {
        "weights.a": torch.randn(3, 5, generator=g),
        "weights.b": torch.randn(7, generator=g, dtype=torch.float64),
        "counts": torch.arange(4, dtype=torch.int64),
    }


def test_save_load_save_is_bitwise(tmp_path):
    first = tmp_path / "a.ckpt"
    second = tmp_path / "b.ckpt"
    tensors = _tensors()
    config = {"generator": to_jsonable(GeneratorConfig()), "note": "x"}
    rng = rng_snapshot(np.random.default_rng(3))
    save_checkpoint(first, "gan", config, 12, rng, tensors)
    ck = load_checkpoint(first)
    save_checkpoint(second, ck.kind, ck.config, ck.step, ck.rng, ck.tensors)
    assert first.read_bytes() == second.read_bytes()


def test_round_trip_preserves_everything(tmp_path):
    path = tmp_path / "c.ckpt"
    tensors = _tensors()
    save_checkpoint(path, "provider", {"k": [1, 2]}, 7, rng_snapshot(), tensors)
    ck = load_checkpoint(path)
    assert isinstance(ck, CheckpointData)
    assert ck.kind == "provider" and ck.step == 7
    assert ck.config == {"k": [1, 2]}
    assert set(ck.tensors) == set(tensors)
    for name, t in tensors.items():
        got = ck.tensors[name]
        assert got.dtype == t.dtype and got.shape == t.shape
        assert torch.equal(got, t)


def test_insertion_order_does_not_change_bytes(tmp_path):
    tensors = _tensors()
    reordered = dict(reversed(list(tensors.items())))
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(a, "gan", {}, 0, {}, tensors)
    save_checkpoint(b, "gan", {}, 0, {}, reordered)
    assert a.read_bytes() == b.read_bytes()


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"NOTACKPT" + b"\x00" * 32)
    with pytest.raises(ValueError, match="bad magic"):
        load_checkpoint(path)


def test_no_tmp_file_left_behind(tmp_path):
    path = tmp_path / "d.ckpt"
    save_checkpoint(path, "gan", {}, 0, {}, _tensors())
    assert [p.name for p in tmp_path.iterdir()] == ["d.ckpt"]


def test_config_enums_echo_as_values(tmp_path):
    path = tmp_path / "e.ckpt"
    save_checkpoint(path, "gan", {"mode": ConditioningMode.X_DL}, 0, {}, {})
    assert load_checkpoint(path).config == {"mode": "x_dl"}


def test_torch_rng_snapshot_restores_stream():
    torch.manual_seed(123)
    state = rng_snapshot()
    first = torch.randn(5)
    rng_restore(state)
    second = torch.randn(5)
    assert torch.equal(first, second)


def test_numpy_rng_snapshot_restores_stream():
    rng = np.random.default_rng(9)
    rng.standard_normal(3)  # advance off the seed point
    state = rng_snapshot(rng)
    first = rng.standard_normal(4)
    rng_restore(state, rng)
    second = rng.standard_normal(4)
    np.testing.assert_array_equal(first, second)


def test_rng_state_survives_json_round_trip(tmp_path):
    import json

    rng = np.random.default_rng(21)
    state = rng_snapshot(rng)
    rebuilt = json.loads(json.dumps(state))
    fresh = np.random.default_rng(0)
    rng_restore(rebuilt, fresh)
    np.testing.assert_array_equal(fresh.standard_normal(4), np.random.default_rng(21).standard_normal(4))
