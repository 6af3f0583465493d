"""End-to-end inbetweening of one frame pair."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .correspond import TransportPlan, aggregate, correlation, mutual_match, sinkhorn_ot
from .embed import FrameInputs, embed_frame
from .geom import LineGraph, Matching
from .model import ModelParams
from .reposefuse import (VisibilityMask, final_repositioning, fuse, predict_visibility, propagate_shifts,
                         visibility_logits)


@dataclass
class ForwardOutputs:
    f0: torch.Tensor
    f1: torch.Tensor
    plan: TransportPlan
    r01: torch.Tensor
    r10: torch.Tensor
    logits0: torch.Tensor
    logits1: torch.Tensor


def forward(frame0: FrameInputs, frame1: FrameInputs, p: dict, cfg, heads: bool = True) -> ForwardOutputs:
    """Differentiable part of the pipeline, from inputs to plan, shifts and visibility logits."""
    f0 = embed_frame(frame0, p, cfg)
    f1 = embed_frame(frame1, p, cfg)
    f0, f1 = aggregate(f0, f1, p, cfg.n_layers)
    plan = sinkhorn_ot(correlation(f0, f1), p["attn.dustbin"], cfg.sinkhorn_iters)
    if not heads:
        return ForwardOutputs(f0, f1, plan, None, None, None, None)
    r01, r10 = propagate_shifts(f0, f1, plan, frame0.graph.vertices, frame1.graph.vertices)
    return ForwardOutputs(f0, f1, plan, r01, r10, visibility_logits(f0, p), visibility_logits(f1, p))


@dataclass
class InbetweenResult:
    graph: LineGraph
    matching: Matching
    r0: np.ndarray
    r1: np.ndarray
    visible0: VisibilityMask
    visible1: VisibilityMask


def predict_matching(g0, g1, img0, img1, params: ModelParams) -> Matching:
    cfg = params.config
    with torch.no_grad():
        p = params.cast(torch.float64)
        out = forward(FrameInputs(g0, img0, cfg.spectral_dim), FrameInputs(g1, img1, cfg.spectral_dim), p, cfg,
                      heads=False)
    return mutual_match(out.plan, cfg.theta)


def inbetween(g0: LineGraph, g1: LineGraph, img0, img1, params: ModelParams, t: float = 0.5,
              frames=None) -> InbetweenResult:
    cfg = params.config
    if frames is None:
        frames = (FrameInputs(g0, img0, cfg.spectral_dim), FrameInputs(g1, img1, cfg.spectral_dim))
    if g0.num_vertices == 0 or g1.num_vertices == 0:
        empty = Matching.from_pairs([], g0.num_vertices, g1.num_vertices)
        z0, z1 = np.zeros((g0.num_vertices, 2)), np.zeros((g1.num_vertices, 2))
        vis0 = VisibilityMask(np.ones(g0.num_vertices, bool))
        vis1 = VisibilityMask(np.ones(g1.num_vertices, bool))
        return InbetweenResult(fuse(g0, g1, empty, z0, z1, vis0, vis1, t), empty, z0, z1, vis0, vis1)
    with torch.no_grad():
        p = params.cast(torch.float64)
        out = forward(frames[0], frames[1], p, cfg)
        matching = mutual_match(out.plan, cfg.theta)
        vis0 = predict_visibility(out.f0, p, cfg.vis_threshold)
        vis1 = predict_visibility(out.f1, p, cfg.vis_threshold)
    r0 = final_repositioning(matching, g0.vertices, g1.vertices, out.r01, side=0)
    r1 = final_repositioning(matching, g0.vertices, g1.vertices, out.r10, side=1)
    return InbetweenResult(fuse(g0, g1, matching, r0, r1, vis0, vis1, t), matching, r0, r1, vis0, vis1)
