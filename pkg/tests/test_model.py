import struct

import numpy as np
import pytest
import torch

from lineinbet.model import MAGIC, ModelConfig, ModelParams, load_params, param_shapes, save_params


def test_shapes_and_init():
    cfg = ModelConfig(channels=16, n_layers=3, spectral_dim=5)
    shapes = param_shapes(cfg)
    assert shapes["embed.conv2.weight"] == (8, 4, 3, 3) and shapes["embed.topo.0.weight"] == (16, 5)
    assert shapes["vis.1.weight"] == (8, 16) and shapes["vis.2.weight"] == (1, 8)
    assert sum(k.startswith("attn.2.") for k in shapes) == 12
    p = ModelParams.init(cfg, 3)
    assert p["attn.dustbin"].item() == 1.0 and p["embed.conv1.weight"].dtype == torch.float32
    w = p["embed.pos.1.weight"]
    assert w.abs().max() <= 1 / np.sqrt(16) + 1e-7
    q = ModelParams.init(cfg, 3)
    assert all(torch.equal(p[k], q[k]) for k in p.names())
    r = ModelParams.init(cfg, 4)
    assert not torch.equal(p["embed.pos.1.weight"], r["embed.pos.1.weight"])


@pytest.mark.parametrize("bad", [dict(channels=6), dict(channels=0), dict(theta=1.0), dict(sinkhorn_iters=0)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        ModelConfig(**bad).validate()


def test_save_load_round_trip(tmp_path):
    cfg = ModelConfig(channels=8, n_layers=1, spectral_dim=4, theta=0.3, use_topology=False)
    p = ModelParams.init(cfg, 0)
    path = tmp_path / "m.bin"
    save_params(p, path)
    raw = path.read_bytes()
    assert raw[:4] == MAGIC
    (n,) = struct.unpack("<I", raw[4:8])
    assert len(raw) == 8 + n + 4 * sum(t.numel() for t in p.tensors.values())
    q = load_params(path)
    assert q.config == cfg
    assert all(torch.equal(p[k], q[k]) for k in p.names())
    save_params(q, tmp_path / "m2.bin")
    assert (tmp_path / "m2.bin").read_bytes() == raw


def test_load_rejects_corruption(tmp_path):
    p = ModelParams.init(ModelConfig(channels=8, n_layers=1, spectral_dim=4), 0)
    path = tmp_path / "m.bin"
    save_params(p, path)
    raw = path.read_bytes()
    for bad in (b"XXXX" + raw[4:], raw[:-4], raw + b"\0\0\0\0"):
        path.write_bytes(bad)
        with pytest.raises(ValueError):
            load_params(path)
