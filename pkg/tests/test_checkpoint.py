import json
import struct

import numpy as np
import pytest
import torch

from srddpm.checkpoint import (
    MAGIC,
    Checkpoint,
    CheckpointError,
    model_arrays,
    optimizer_arrays,
    read_checkpoint,
    restore_optimizer,
    write_checkpoint,
)
from srddpm.denoiser import UNetConfig, build_unet

TINY = UNetConfig(in_channels=2, encoder_channels=(4, 8), bottleneck_channels=(8,), time_embedding_dim=8)


def test_round_trip_model(tmp_path):
    net = build_unet(TINY, seed=3)
    arrays = model_arrays(net)
    arrays["extra/u8"] = np.arange(5, dtype=np.uint8)
    write_checkpoint(tmp_path / "c.ckpt", Checkpoint(TINY, arrays, {"epoch": 2}))
    ck = read_checkpoint(tmp_path / "c.ckpt")
    assert ck.unet_config == TINY and ck.meta == {"epoch": 2}
    for k, v in arrays.items():
        assert ck.arrays[k].dtype == v.dtype and np.array_equal(ck.arrays[k], v)
    net2 = ck.build_model()
    x, e = torch.randn(1, 2, 8, 8), torch.randn(1, 8)
    assert torch.equal(net.eval()(x, e), net2.eval()(x, e))


def test_layout(tmp_path):
    write_checkpoint(tmp_path / "c.ckpt", Checkpoint(TINY, {"a": np.array([1.5], "<f8")}, {}))
    raw = (tmp_path / "c.ckpt").read_bytes()
    magic, version, hlen = struct.unpack_from("<8sIQ", raw)
    assert magic == MAGIC and version == 1
    header = json.loads(raw[20 : 20 + hlen])
    assert header["arrays"] == [{"name": "a", "dtype": "<f8", "shape": [1], "offset": 0, "nbytes": 8}]
    assert struct.unpack("<d", raw[20 + hlen :])[0] == 1.5


def test_bytes_deterministic(tmp_path):
    ck = Checkpoint(TINY, model_arrays(build_unet(TINY)), {"b": 1, "a": 2})
    write_checkpoint(tmp_path / "1", ck)
    write_checkpoint(tmp_path / "2", ck)
    assert (tmp_path / "1").read_bytes() == (tmp_path / "2").read_bytes()


def test_rejects_bad_files(tmp_path):
    p = tmp_path / "x"
    p.write_bytes(b"short")
    with pytest.raises(CheckpointError, match="too short"):
        read_checkpoint(p)
    p.write_bytes(b"NOTMAGIC" + struct.pack("<IQ", 1, 0))
    with pytest.raises(CheckpointError, match="magic"):
        read_checkpoint(p)
    p.write_bytes(MAGIC + struct.pack("<IQ", 99, 0))
    with pytest.raises(CheckpointError, match="newer"):
        read_checkpoint(p)
    write_checkpoint(p, Checkpoint(TINY, {"a": np.zeros(4)}, {}))
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(CheckpointError, match="past end"):
        read_checkpoint(p)


def test_optimizer_round_trip(tmp_path):
    net = build_unet(TINY)
    opt = torch.optim.AdamW(net.parameters(), lr=1e-3)
    for _ in range(2):
        opt.zero_grad()
        net(torch.randn(2, 2, 8, 8), torch.randn(2, 8)).pow(2).mean().backward()
        opt.step()
    arrays, meta = optimizer_arrays(opt)
    arrays.update(model_arrays(net))
    write_checkpoint(tmp_path / "c", Checkpoint(TINY, arrays, {"optimizer": meta}))
    ck = read_checkpoint(tmp_path / "c")
    net2 = ck.build_model()
    opt2 = torch.optim.AdamW(net2.parameters(), lr=1e-3)
    restore_optimizer(opt2, ck)
    x, e = torch.randn(2, 2, 8, 8), torch.randn(2, 8)
    for n, o in ((net, opt), (net2, opt2)):
        o.zero_grad()
        n(x, e).pow(2).mean().backward()
        o.step()
    for a, b in zip(net.parameters(), net2.parameters()):
        assert torch.equal(a, b)
    with pytest.raises(CheckpointError):
        restore_optimizer(opt2, Checkpoint(TINY, {}, {}))
