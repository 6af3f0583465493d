"""Per-vertex geometric embedding: image context + position + topology."""
from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

from .branches import relu
from .geom import LineGraph, spectral_embedding

RECEPTIVE_RADIUS = 3  # three stacked 3x3 convolutions


def _affine(x, p, name):
    return x @ p[name + ".weight"].T + p[name + ".bias"]


def mlp2(x, p, prefix):
    return _affine(relu(_affine(x, p, prefix + ".0")), p, prefix + ".1")


def contextual_features(image, p) -> torch.Tensor:
    """Full H x W x C feature map of the three-layer conv stack (same padding)."""
    dtype = p["embed.conv1.weight"].dtype
    x = torch.as_tensor(np.asarray(image), dtype=dtype)[None, None]
    x = relu(F.conv2d(x, p["embed.conv1.weight"], p["embed.conv1.bias"], padding=1))
    x = relu(F.conv2d(x, p["embed.conv2.weight"], p["embed.conv2.bias"], padding=1))
    x = F.conv2d(x, p["embed.conv3.weight"], p["embed.conv3.bias"], padding=1)
    return x[0].permute(1, 2, 0)


def vertex_pixels(vertices: np.ndarray, width: int, height: int) -> np.ndarray:
    """Round-half-up integer pixel (x, y) of each vertex."""
    px = np.floor(np.asarray(vertices, dtype=np.float64).reshape(-1, 2) + 0.5).astype(np.int64)
    bad = (px[:, 0] < 0) | (px[:, 0] >= width) | (px[:, 1] < 0) | (px[:, 1] >= height)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise IndexError(f"vertex {i} at {tuple(vertices[i])} falls outside the {width}x{height} feature map")
    return px


def index_at_vertices(featmap: torch.Tensor, vertices: np.ndarray) -> torch.Tensor:
    h, w = featmap.shape[:2]
    px = vertex_pixels(vertices, w, h)
    return featmap[torch.as_tensor(px[:, 1]), torch.as_tensor(px[:, 0])]


def receptive_patches(image: np.ndarray, vertices: np.ndarray):
    """7x7 input patches around each vertex pixel plus in-image masks for the 5x5 and 3x3 stages.

    Running the conv stack without padding on these patches, zeroing activations that
    fall outside the image between layers, reproduces the padded full-map features at
    the vertex pixels exactly while touching only K * 49 pixels.
    """
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    r = RECEPTIVE_RADIUS
    px = vertex_pixels(vertices, w, h)
    padded = np.pad(image, r)
    k = len(px)
    patches = np.empty((k, 1, 2 * r + 1, 2 * r + 1))
    for n, (x, y) in enumerate(px):
        patches[n, 0] = padded[y:y + 2 * r + 1, x:x + 2 * r + 1]
    masks = []
    for rad in (r - 1, r - 2):
        off = np.arange(-rad, rad + 1)
        ys = px[:, 1, None] + off[None, :]
        xs = px[:, 0, None] + off[None, :]
        inside = ((ys >= 0) & (ys < h))[:, :, None] & ((xs >= 0) & (xs < w))[:, None, :]
        masks.append(inside[:, None].astype(np.float64))
    return patches, masks[0], masks[1]


def contextual_at_vertices(patches, mask5, mask3, p) -> torch.Tensor:
    dtype = p["embed.conv1.weight"].dtype
    x = torch.as_tensor(patches, dtype=dtype)
    if x.shape[0] == 0:
        return torch.zeros((0, p["embed.conv3.bias"].shape[0]), dtype=dtype)
    x = relu(F.conv2d(x, p["embed.conv1.weight"], p["embed.conv1.bias"]) * torch.as_tensor(mask5, dtype=dtype))
    x = relu(F.conv2d(x, p["embed.conv2.weight"], p["embed.conv2.bias"]) * torch.as_tensor(mask3, dtype=dtype))
    x = F.conv2d(x, p["embed.conv3.weight"], p["embed.conv3.bias"])
    return x[:, :, 0, 0]


def normalize_coords(vertices: np.ndarray, width: int, height: int) -> np.ndarray:
    if width < 2 or height < 2:
        raise ValueError("width and height must be >= 2 to normalize coordinates")
    v = np.asarray(vertices, dtype=np.float64).reshape(-1, 2)
    return np.stack([2 * v[:, 0] / (width - 1) - 1, 2 * v[:, 1] / (height - 1) - 1], 1)


def positional_embedding(vertices, width, height, p) -> torch.Tensor:
    dtype = p["embed.pos.0.weight"].dtype
    return mlp2(torch.as_tensor(normalize_coords(vertices, width, height), dtype=dtype), p, "embed.pos")


def topological_embedding(graph: LineGraph, p, spectral=None) -> torch.Tensor:
    dtype = p["embed.topo.0.weight"].dtype
    if spectral is None:
        spectral = spectral_embedding(graph, p["embed.topo.0.weight"].shape[1])
    return mlp2(torch.as_tensor(spectral, dtype=dtype), p, "embed.topo")


class FrameInputs:
    """Everything about one frame the network reads, precomputed once."""

    def __init__(self, graph: LineGraph, image: np.ndarray, spectral_dim: int):
        image = np.asarray(image, dtype=np.float64)
        if image.shape != (graph.height, graph.width):
            raise ValueError(f"image shape {image.shape} does not match graph {graph.height}x{graph.width}")
        self.graph = graph
        self.patches, self.mask5, self.mask3 = receptive_patches(image, graph.vertices)
        self.coords = normalize_coords(graph.vertices, graph.width, graph.height)
        self.spectral = spectral_embedding(graph, spectral_dim)

    @property
    def k(self) -> int:
        return self.graph.num_vertices


def embed_frame(frame: FrameInputs, p, cfg) -> torch.Tensor:
    dtype = p["embed.pos.0.weight"].dtype
    out = torch.zeros((frame.k, cfg.channels), dtype=dtype)
    if cfg.use_image:
        out = out + contextual_at_vertices(frame.patches, frame.mask5, frame.mask3, p)
    if cfg.use_position:
        out = out + mlp2(torch.as_tensor(frame.coords, dtype=dtype), p, "embed.pos")
    if cfg.use_topology:
        out = out + mlp2(torch.as_tensor(frame.spectral, dtype=dtype), p, "embed.topo")
    return out


def embed_vertices(graph: LineGraph, image, p, cfg) -> torch.Tensor:
    """Sum of the indexed image features, positional and topological embeddings."""
    return embed_frame(FrameInputs(graph, image, cfg.spectral_dim), p, cfg)
