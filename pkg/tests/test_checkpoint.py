import struct

import pytest
import torch

from satlab.checkpoint import CheckpointError, decode, encode, load_model, read_checkpoint, save_checkpoint
from satlab.config import ConfigError, ModelConfig, SemanticsFlags
from satlab.model import GroundingModel, param_digest

CFG = ModelConfig(d=16, heads=2, text_layers=1, fusion_layers=1, hidden=16, p=16, points=32)


def make(seed=0, cfg=CFG, flags=None):
    torch.manual_seed(seed)
    return GroundingModel(cfg, flags).to(cfg.dtype)


def test_roundtrip_restores_parameters(tmp_path):
    m = make()
    save_checkpoint(tmp_path / "a.ckpt", m, {"semantics": {"roi": True, "cls": False, "geo": True}, "seed": 4})
    back, header = load_model(tmp_path / "a.ckpt")
    assert param_digest(back) == param_digest(m)
    assert header["meta"]["seed"] == 4
    assert back.flags == SemanticsFlags(roi=True, cls=False, geo=True)
    for (n1, a), (n2, b) in zip(m.state_dict().items(), back.state_dict().items()):
        assert n1 == n2 and torch.equal(a, b)


def test_encoding_is_deterministic_and_header_layout():
    a = encode(make().state_dict(), CFG, {"x": 1})
    b = encode(make().state_dict(), CFG, {"x": 1})
    assert a == b
    (n,) = struct.unpack("<Q", a[:8])
    header, tensors = decode(a)
    assert header["format"] == "satlab-ckpt-1"
    names = [e["name"] for e in header["tensors"]]
    assert names == sorted(names)
    assert len(a) == 8 + n + sum(e["nbytes"] for e in header["tensors"])
    assert encode(make(1).state_dict(), CFG) != encode(make(0).state_dict(), CFG)


def test_double_precision_roundtrip(tmp_path):
    cfg = ModelConfig(**{**CFG.__dict__, "precision": "double"})
    m = make(cfg=cfg)
    save_checkpoint(tmp_path / "d.ckpt", m)
    back, _ = load_model(tmp_path / "d.ckpt")
    assert next(back.parameters()).dtype == torch.float64
    assert param_digest(back) == param_digest(m)


def test_truncated_and_corrupt(tmp_path):
    data = encode(make().state_dict(), CFG)
    with pytest.raises(CheckpointError):
        decode(data[:4])
    with pytest.raises(CheckpointError):
        decode(data[:-10])
    with pytest.raises(CheckpointError):
        decode(struct.pack("<Q", 10**9) + data[8:])


def test_shape_mismatch_is_reported(tmp_path):
    m = make()
    state = m.state_dict()
    state["ground_3d.fc1.weight"] = torch.zeros(3, 3)
    (tmp_path / "bad.ckpt").write_bytes(encode(state, CFG))
    with pytest.raises(CheckpointError, match="shape"):
        load_model(tmp_path / "bad.ckpt")


def test_missing_tensor_and_config_mismatch(tmp_path):
    state = make().state_dict()
    state.pop(sorted(state)[0])
    (tmp_path / "miss.ckpt").write_bytes(encode(state, CFG))
    with pytest.raises(CheckpointError):
        load_model(tmp_path / "miss.ckpt")
    save_checkpoint(tmp_path / "ok.ckpt", make())
    with pytest.raises(ConfigError):
        load_model(tmp_path / "ok.ckpt", expected=ModelConfig(d=32))


def test_io_errors(tmp_path):
    with pytest.raises(OSError, match="nope.ckpt"):
        read_checkpoint(tmp_path / "nope.ckpt")
