"""Shift propagation for unmatched vertices, visibility prediction and graph fusion."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .branches import relu
from .geom import LineGraph, Matching


def propagate_shifts(f0, f1, plan, v0, v1):
    """Bidirectional shift fields r_01 (K0 x 2) and r_10 (K1 x 2).

    Each vertex takes a score-softmax average of the other frame's positions, and the
    resulting shifts are then pooled by feature self-similarity within its own frame.
    """
    scores = plan.scores
    dtype = f0.dtype
    v0 = torch.tensor(np.asarray(v0), dtype=dtype)
    v1 = torch.tensor(np.asarray(v1), dtype=dtype)
    c = f0.shape[1]
    s0 = torch.softmax(f0 @ f0.T / math.sqrt(c), dim=1)
    s1 = torch.softmax(f1 @ f1.T / math.sqrt(c), dim=1)
    r01 = s0 @ (torch.softmax(scores, dim=1) @ v1 - v0)
    r10 = s1 @ (torch.softmax(scores.T, dim=1) @ v0 - v1)
    return r01, r10


def final_repositioning(matching: Matching, v0, v1, r_prop, side: int = 0) -> np.ndarray:
    """Exact shifts for matched vertices, propagated ones elsewhere (side 1 swaps roles)."""
    r = np.array(r_prop.detach().cpu().numpy() if isinstance(r_prop, torch.Tensor) else r_prop,
                 dtype=np.float64, copy=True)
    v0 = np.asarray(v0, dtype=np.float64)
    v1 = np.asarray(v1, dtype=np.float64)
    i, j = matching.as_arrays()
    if side == 0:
        r[i] = v1[j] - v0[i]
    else:
        r[j] = v0[i] - v1[j]
    return r


@dataclass
class VisibilityMask:
    visible: np.ndarray
    logits: Optional[torch.Tensor] = None


def visibility_logits(f, p):
    h = relu(f @ p["vis.0.weight"].T + p["vis.0.bias"])
    h = relu(h @ p["vis.1.weight"].T + p["vis.1.bias"])
    return (h @ p["vis.2.weight"].T + p["vis.2.bias"])[:, 0]


def predict_visibility(f, p, threshold: float = 0.5) -> VisibilityMask:
    logits = visibility_logits(f, p)
    prob = torch.sigmoid(logits).detach().cpu().numpy()
    return VisibilityMask(prob >= threshold, logits)


def fuse(g0: LineGraph, g1: LineGraph, matching: Matching, r0, r1, m0, m1, t: float = 0.5) -> LineGraph:
    """Intermediate graph at time t: interpolated matched pairs plus visible repositioned leftovers."""
    if not 0 < t < 1:
        raise ValueError("t must lie in (0, 1)")
    m0 = np.asarray(getattr(m0, "visible", m0), dtype=bool)
    m1 = np.asarray(getattr(m1, "visible", m1), dtype=bool)
    r0 = np.asarray(r0, dtype=np.float64)
    r1 = np.asarray(r1, dtype=np.float64)
    v0, v1 = g0.vertices, g1.vertices
    new0 = np.full(g0.num_vertices, -1, dtype=np.int64)
    new1 = np.full(g1.num_vertices, -1, dtype=np.int64)
    pts = []
    for i, j in matching.pairs:
        new0[i] = new1[j] = len(pts)
        pts.append((1 - t) * v0[i] + t * v1[j])
    for i in np.flatnonzero(matching.occluded_0 & m0):
        new0[i] = len(pts)
        pts.append(v0[i] + t * r0[i])
    for j in np.flatnonzero(matching.occluded_1 & m1):
        new1[j] = len(pts)
        pts.append(v1[j] + (1 - t) * r1[j])
    edges = []
    for new, g in ((new0, g0), (new1, g1)):
        if len(g.edges):
            e = new[g.edges]
            edges.append(e[(e >= 0).all(axis=1)])
    e = np.concatenate(edges) if edges else np.zeros((0, 2), dtype=np.int64)
    w, h = max(g0.width, g1.width), max(g0.height, g1.height)
    v = np.array(pts, dtype=np.float64).reshape(-1, 2)
    if len(v):
        v[:, 0] = np.clip(v[:, 0], 0, w - 1)
        v[:, 1] = np.clip(v[:, 1], 0, h - 1)
    return LineGraph(w, h, v, e)
