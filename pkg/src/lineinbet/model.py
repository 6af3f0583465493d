"""Model configuration, parameter sets and the binary parameter container."""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np
import torch

MAGIC = b"LIBP"


@dataclass
class ModelConfig:
    channels: int = 128
    n_layers: int = 4
    spectral_dim: int = 64
    theta: float = 0.2
    sinkhorn_iters: int = 100
    vis_threshold: float = 0.5
    # ablation switches: a disabled embedding contributes zeros
    use_image: bool = True
    use_position: bool = True
    use_topology: bool = True

    def validate(self) -> "ModelConfig":
        if self.channels < 4 or self.channels % 4:
            raise ValueError("channels must be a positive multiple of 4")
        if self.n_layers < 0 or self.spectral_dim < 1 or self.sinkhorn_iters < 1:
            raise ValueError("n_layers >= 0, spectral_dim >= 1 and sinkhorn_iters >= 1 required")
        if not 0 <= self.theta < 1:
            raise ValueError("theta must lie in [0, 1)")
        return self


def param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    c, s = cfg.channels, cfg.spectral_dim
    shapes = {
        "embed.conv1.weight": (c // 4, 1, 3, 3), "embed.conv1.bias": (c // 4,),
        "embed.conv2.weight": (c // 2, c // 4, 3, 3), "embed.conv2.bias": (c // 2,),
        "embed.conv3.weight": (c, c // 2, 3, 3), "embed.conv3.bias": (c,),
        "embed.pos.0.weight": (c, 2), "embed.pos.0.bias": (c,),
        "embed.pos.1.weight": (c, c), "embed.pos.1.bias": (c,),
        "embed.topo.0.weight": (c, s), "embed.topo.0.bias": (c,),
        "embed.topo.1.weight": (c, c), "embed.topo.1.bias": (c,),
    }
    for layer in range(cfg.n_layers):
        for role in ("self", "cross"):
            for m in "qkv":
                shapes[f"attn.{layer}.{role}.{m}.weight"] = (c, c)
                shapes[f"attn.{layer}.{role}.{m}.bias"] = (c,)
    shapes["attn.dustbin"] = ()
    shapes.update({
        "vis.0.weight": (c, c), "vis.0.bias": (c,),
        "vis.1.weight": (c // 2, c), "vis.1.bias": (c // 2,),
        "vis.2.weight": (1, c // 2), "vis.2.bias": (1,),
    })
    return shapes


def _fan_in(name: str, shapes: dict) -> int:
    w = shapes[name.rsplit(".", 1)[0] + ".weight"]
    return int(np.prod(w[1:]))


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict[str, torch.Tensor] = field(default_factory=dict)

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0) -> "ModelParams":
        """Uniform(+-sqrt(1/fan_in)) weights and biases; dustbin score 1.0."""
        config.validate()
        shapes = param_shapes(config)
        rng = np.random.default_rng(seed)
        tensors = {}
        for name, shape in shapes.items():
            if name == "attn.dustbin":
                arr = np.array(1.0)
            else:
                bound = math.sqrt(1.0 / _fan_in(name, shapes))
                arr = rng.uniform(-bound, bound, size=shape)
            tensors[name] = torch.tensor(arr, dtype=torch.float32)
        return cls(config, tensors)

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def requires_grad_(self, flag: bool = True) -> "ModelParams":
        for t in self.tensors.values():
            t.requires_grad_(flag)
        return self

    def clone(self) -> "ModelParams":
        return ModelParams(ModelConfig(**asdict(self.config)),
                           {k: v.detach().clone() for k, v in self.tensors.items()})

    def cast(self, dtype=torch.float64) -> dict[str, torch.Tensor]:
        """Differentiable copies in the compute dtype."""
        return {k: v.to(dtype) for k, v in self.tensors.items()}

    def numpy(self) -> dict[str, np.ndarray]:
        return {k: v.detach().cpu().numpy().copy() for k, v in self.tensors.items()}


def save_params(params: ModelParams, path) -> None:
    """Layout: b"LIBP", uint32 LE header length, JSON header, float32 LE tensor data in header order."""
    header = {
        "config": asdict(params.config),
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in params.tensors.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for v in params.tensors.values():
            f.write(v.detach().cpu().numpy().astype("<f4").tobytes())


def load_params(path) -> ModelParams:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a parameter file")
    (n,) = struct.unpack("<I", data[4:8])
    header = json.loads(data[8:8 + n].decode())
    cfg = ModelConfig(**header["config"]).validate()
    offset = 8 + n
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(shape)
        tensors[entry["name"]] = torch.tensor(arr.astype(np.float32))
        offset += 4 * count
    if offset != len(data):
        raise ValueError(f"{path}: {len(data) - offset} trailing bytes")
    expected = param_shapes(cfg)
    for name, shape in expected.items():
        if name not in tensors or tuple(tensors[name].shape) != shape:
            raise ValueError(f"{path}: tensor {name} missing or misshaped")
    return ModelParams(cfg, tensors)
