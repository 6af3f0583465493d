"""Vertex correspondence: attention aggregation, correlation, optimal transport, mutual matching."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .geom import Matching


def _affine(x, p, name):
    return x @ p[name + ".weight"].T + p[name + ".bias"]


def _attend(fa, fb, p, prefix):
    c = fa.shape[1]
    q = _affine(fa, p, prefix + ".q")
    k = _affine(fb, p, prefix + ".k")
    v = _affine(fb, p, prefix + ".v")
    w = torch.softmax(q @ k.T / math.sqrt(c), dim=1)
    return fa + w @ v


def self_attention(f, p, layer: int):
    return _attend(f, f, p, f"attn.{layer}.self")


def cross_attention(fa, fb, p, layer: int):
    return _attend(fa, fb, p, f"attn.{layer}.cross")


def aggregate(f0, f1, p, n_layers: int):
    for layer in range(n_layers):
        f0, f1 = self_attention(f0, p, layer), self_attention(f1, p, layer)
        f0, f1 = cross_attention(f0, f1, p, layer), cross_attention(f1, f0, p, layer)
    return f0, f1


def correlation(f0, f1):
    return f0 @ f1.T / math.sqrt(f0.shape[1])


@dataclass
class TransportPlan:
    """(K0+1) x (K1+1) plan, last row/column the dustbin; `scores` is the K0 x K1 input."""

    plan: torch.Tensor
    scores: torch.Tensor
    iterations: int

    @property
    def core(self) -> torch.Tensor:
        return self.plan[:-1, :-1]


def sinkhorn_ot(scores: torch.Tensor, alpha, iters: int = 100) -> TransportPlan:
    """Log-domain Sinkhorn on scores augmented with a dustbin row/column of value alpha.

    Row marginals (1, ..., 1, K1), column marginals (1, ..., 1, K0). The last update
    is the column step, so columns are exact and rows converge.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    k0, k1 = scores.shape
    dtype = scores.dtype
    alpha = torch.as_tensor(alpha, dtype=dtype)
    z = torch.cat([
        torch.cat([scores, alpha.expand(k0, 1)], 1),
        torch.cat([alpha.expand(1, k1), alpha.reshape(1, 1)], 1),
    ], 0)
    log_a = torch.cat([torch.zeros(k0, dtype=dtype), torch.tensor([math.log(k1)] if k1 else [-math.inf], dtype=dtype)])
    log_b = torch.cat([torch.zeros(k1, dtype=dtype), torch.tensor([math.log(k0)] if k0 else [-math.inf], dtype=dtype)])
    u = torch.zeros(k0 + 1, dtype=dtype)
    v = torch.zeros(k1 + 1, dtype=dtype)
    for _ in range(iters):
        u = log_a - torch.logsumexp(z + v[None, :], dim=1)
        v = log_b - torch.logsumexp(z + u[:, None], dim=0)
    return TransportPlan(torch.exp(z + u[:, None] + v[None, :]), scores, iters)


def mutual_match(plan, theta: float) -> Matching:
    """Mutual row/column argmax over the non-dustbin block, kept when above theta.

    Ties go to the lowest index (numpy argmax semantics).
    """
    core = plan.core if isinstance(plan, TransportPlan) else plan
    core = core.detach().cpu().numpy() if isinstance(core, torch.Tensor) else np.asarray(core)
    k0, k1 = core.shape
    if k0 == 0 or k1 == 0:
        return Matching.from_pairs([], k0, k1)
    best_j = core.argmax(axis=1)
    best_i = core.argmax(axis=0)
    rows = np.arange(k0)
    keep = (best_i[best_j] == rows) & (core[rows, best_j] > theta)
    return Matching.from_pairs(zip(rows[keep], best_j[keep]), k0, k1)
