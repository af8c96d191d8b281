import json
import struct

import numpy as np
import pytest
import torch

from sasv import checkpoint
from sasv.backend import Backend, BackendConfig
from sasv.bundle import (
    ModelBundle,
    load_asv,
    load_backend,
    load_bundle,
    load_cm,
    save_asv,
    save_bundle,
    save_cm,
)
from sasv.encoders import ASVEncoder, CMEncoder, EncoderConfig

CFG = EncoderConfig(embed_dim=8, channels=4, attention_dim=2, cm_hidden=4)


def test_layout(tmp_path):
    state = {"a": torch.arange(6, dtype=torch.float32).reshape(2, 3), "b": torch.tensor(1.5)}
    data = checkpoint.to_bytes(state, "demo", {"x": 1})
    assert data[:8] == b"SASVCKPT"
    version, n = struct.unpack("<II", data[8:16])
    assert version == 1
    header = json.loads(data[16:16 + n])
    assert header["tensors"] == [{"name": "a", "shape": [2, 3]}, {"name": "b", "shape": []}]
    body = np.frombuffer(data[16 + n:], dtype="<f4")
    np.testing.assert_array_equal(body, [0, 1, 2, 3, 4, 5, 1.5])


def test_round_trip():
    state = {"w": torch.randn(3, 4), "v": torch.randn(5)}
    kind, meta, loaded = checkpoint.from_bytes(checkpoint.to_bytes(state, "k", {"m": [1, 2]}))
    assert kind == "k" and meta == {"m": [1, 2]}
    for k in state:
        assert torch.equal(state[k], loaded[k])


def test_equal_parameters_give_equal_bytes():
    torch.manual_seed(0)
    a = ASVEncoder(CFG, 3)
    torch.manual_seed(0)
    b = ASVEncoder(CFG, 3)
    assert checkpoint.to_bytes(a.state_dict(), "asv") == checkpoint.to_bytes(b.state_dict(), "asv")
    assert checkpoint.digest(a) == checkpoint.digest(b)


@pytest.mark.parametrize("mutate, message", [
    (lambda d: b"NOTACKPT" + d[8:], "not a checkpoint"),
    (lambda d: d[:8] + struct.pack("<I", 2) + d[12:], "version"),
    (lambda d: d + b"\0\0\0\0", "trailing"),
])
def test_corrupt_files_rejected(mutate, message):
    data = checkpoint.to_bytes({"a": torch.zeros(2)}, "x")
    with pytest.raises(checkpoint.CheckpointError, match=message):
        checkpoint.from_bytes(mutate(data))


def test_module_round_trips(tmp_path):
    torch.manual_seed(1)
    asv, cm = ASVEncoder(CFG, 5), CMEncoder(CFG)
    save_asv(asv, tmp_path / "asv.ckpt")
    save_cm(cm, tmp_path / "cm.ckpt")
    asv2, cm2 = load_asv(tmp_path / "asv.ckpt"), load_cm(tmp_path / "cm.ckpt")
    assert asv2.cfg == CFG and asv2.n_speakers == 5
    assert checkpoint.digest(asv2) == checkpoint.digest(asv)
    assert checkpoint.digest(cm2) == checkpoint.digest(cm)


def test_kind_mismatch(tmp_path):
    save_cm(CMEncoder(CFG), tmp_path / "cm.ckpt")
    with pytest.raises(checkpoint.CheckpointError, match="asv"):
        load_asv(tmp_path / "cm.ckpt")


def test_bundle_round_trip(tmp_path):
    torch.manual_seed(2)
    bundle = ModelBundle(ASVEncoder(CFG, 2), CMEncoder(CFG), Backend(BackendConfig(embed_dim=8, alpha=5.0)))
    save_bundle(bundle, tmp_path / "b", {"seed": 3})
    loaded = load_bundle(tmp_path / "b")
    assert loaded.backend.cfg.alpha == 5.0
    assert json.loads((tmp_path / "b" / "manifest.json").read_text())["hyperparameters"]["seed"] == 3
    for part in ("asv", "cm", "backend"):
        assert checkpoint.digest(getattr(loaded, part)) == checkpoint.digest(getattr(bundle, part))
    assert load_backend(tmp_path / "b" / "backend.ckpt").cfg == bundle.backend.cfg


def test_missing_bundle(tmp_path):
    with pytest.raises(FileNotFoundError, match="missing model bundle"):
        load_bundle(tmp_path / "nothing")
