"""Losses, pseudo labels, gradient verification and the training loop."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch

from .branches import absval, clamp, record_branches, same_pattern
from .embed import FrameInputs
from .geom import LineGraph, Matching, derive_matching, graph_stats
from .model import ModelParams
from .pipeline import forward
from .vectorize import binarize

log = logging.getLogger(__name__)

PLAN_FLOOR = 1e-12
PROB_CLAMP = 1e-7


# ----------------------------------------------------------------- losses


def loss_correspondence(plan, gt: Matching):
    """Mean negative log plan value over ground-truth pairs; returns (loss, empty_flag)."""
    core = plan.core if hasattr(plan, "core") else plan
    i, j = gt.as_arrays()
    if len(i) == 0:
        return core.sum() * 0.0, True
    vals = core[torch.as_tensor(i), torch.as_tensor(j)].to(torch.float64)
    return -torch.log(clamp(vals, PLAN_FLOOR)).mean(), False


def loss_reposition(r01, r01_gt, r10, r10_gt):
    out = 0.0
    for pred, gt in ((r01, r01_gt), (r10, r10_gt)):
        if len(pred):
            gt = torch.as_tensor(gt, dtype=torch.float64)
            out = out + absval(pred.to(torch.float64) - gt).sum() / len(pred)
    return torch.as_tensor(out, dtype=torch.float64)


def weighted_bce(logits, target, w: float):
    if len(logits) == 0:
        return torch.zeros((), dtype=torch.float64)
    prob = clamp(torch.sigmoid(logits.to(torch.float64)), PROB_CLAMP, 1 - PROB_CLAMP)
    y = torch.as_tensor(np.asarray(target, dtype=np.float64))
    return -(w * y * torch.log(prob) + (1 - w) * (1 - y) * torch.log(1 - prob)).mean()


def loss_visibility(logits0, logits1, m_gt0, m_gt1, w: float = 0.2):
    return weighted_bce(logits0, m_gt0, w) + weighted_bce(logits1, m_gt1, w)


# ----------------------------------------------------------------- pseudo labels


def _neighbor_fill(graph: LineGraph, r: np.ndarray, known: np.ndarray, tol=1e-6, sweeps=100) -> np.ndarray:
    """Jacobi neighbour averaging for the unknown rows; unreachable rows stay zero."""
    r = r.copy()
    r[~known] = 0.0
    assigned = known.copy()
    unknown = np.flatnonzero(~known)
    if len(unknown) == 0:
        return r
    nb = graph.neighbors()
    for _ in range(sweeps):
        new_r = r.copy()
        new_assigned = assigned.copy()
        for i in unknown:
            src = [k for k in nb[i] if assigned[k]]
            if src:
                new_r[i] = r[src].mean(axis=0)
                new_assigned[i] = True
        change = np.abs(new_r - r).max() if len(r) else 0.0
        grew = (new_assigned != assigned).any()
        r, assigned = new_r, new_assigned
        if change < tol and not grew:
            break
    return r


def backtrack_pseudo_shift(sequence: Sequence[LineGraph]) -> np.ndarray:
    """Shift of every vertex of sequence[0] to the last frame, propagated back frame by frame.

    Matched vertices inherit their counterpart's target position, so along a fully
    matched chain the result is exactly V_last - V_0.
    """
    if len(sequence) < 2:
        raise ValueError("need at least two frames")
    target = np.array(sequence[-1].vertices, dtype=np.float64, copy=True)  # V + r for the current frame
    for z in range(len(sequence) - 2, -1, -1):
        g, nxt = sequence[z], sequence[z + 1]
        i, j = derive_matching(g, nxt).as_arrays()
        r = np.zeros((g.num_vertices, 2))
        known = np.zeros(g.num_vertices, dtype=bool)
        r[i] = target[j] - g.vertices[i]
        known[i] = True
        r = _neighbor_fill(g, r, known)
        new_target = g.vertices + r
        # copy, not V + (T - V): keeps matched chains free of rounding
        new_target[i] = target[j]
        target = new_target
    return target - sequence[0].vertices


def _shift_to_end(graphs: Sequence[LineGraph]) -> np.ndarray:
    # a one-frame slice (adjacent key frames) has nothing to move towards
    if len(graphs) == 1:
        return np.zeros((graphs[0].num_vertices, 2))
    return backtrack_pseudo_shift(graphs)


def pseudo_visibility(v0: np.ndarray, r_half: np.ndarray, image_t: np.ndarray) -> np.ndarray:
    """1 where the shifted vertex lands on a line pixel of the 3x3-dilated target frame."""
    from scipy.ndimage import binary_dilation

    lines = binary_dilation(binarize(image_t), structure=np.ones((3, 3), dtype=bool))
    h, w = lines.shape
    px = np.floor(np.asarray(v0, dtype=np.float64) + np.asarray(r_half, dtype=np.float64) + 0.5).astype(np.int64)
    px = px.reshape(-1, 2)
    inside = (px[:, 0] >= 0) & (px[:, 0] < w) & (px[:, 1] >= 0) & (px[:, 1] < h)
    out = np.zeros(len(px), dtype=bool)
    out[inside] = lines[px[inside, 1], px[inside, 0]]
    return out


# ----------------------------------------------------------------- samples


@dataclass
class TrainSample:
    frame0: FrameInputs
    frame1: FrameInputs
    gt: Matching
    r01_gt: np.ndarray
    r10_gt: np.ndarray
    m0_gt: np.ndarray
    m1_gt: np.ndarray
    key: tuple = ()


def build_sample(graphs: Sequence[LineGraph], images: Sequence[np.ndarray], spectral_dim: int,
                 frames: Optional[tuple] = None, key=()) -> TrainSample:
    """Sample for the pair (graphs[0], graphs[-1]); intermediate frames feed the pseudo labels.

    The visibility labels use the frame at index len // 2 as the intermediate frame.
    """
    n = len(graphs)
    mid = n // 2
    g0, g1 = graphs[0], graphs[-1]
    if frames is None:
        frames = (FrameInputs(g0, images[0], spectral_dim), FrameInputs(g1, images[-1], spectral_dim))
    r01 = backtrack_pseudo_shift(graphs)
    r10 = backtrack_pseudo_shift(graphs[::-1])
    m0 = pseudo_visibility(g0.vertices, _shift_to_end(graphs[:mid + 1]), images[mid])
    m1 = pseudo_visibility(g1.vertices, _shift_to_end(graphs[mid:][::-1]), images[mid])
    return TrainSample(frames[0], frames[1], derive_matching(g0, g1), r01, r10, m0, m1, key)


def mirror_graph(g: LineGraph) -> LineGraph:
    """Left-right mirror image; vertex order, edges and IDs are kept."""
    v = np.array(g.vertices, dtype=np.float64, copy=True)
    v[:, 0] = g.width - 1 - v[:, 0]
    return LineGraph(g.width, g.height, v, g.edges, g.ref_ids)


def reverse_sample(s: TrainSample) -> TrainSample:
    """The same pair played backwards: frames, fields and labels swap sides."""
    gt = Matching.from_pairs([(j, i) for i, j in s.gt.pairs], s.frame1.k, s.frame0.k)
    return TrainSample(s.frame1, s.frame0, gt, s.r10_gt, s.r01_gt, s.m1_gt, s.m0_gt, s.key + ("reversed",))


class SampleFactory:
    """Builds and caches training samples from a synthetic Dataset."""

    def __init__(self, dataset, spectral_dim: int):
        self.dataset = dataset
        self.spectral_dim = spectral_dim
        self._frames = {}
        self._samples = {}

    def frame(self, seq: int, z: int, mirrored: bool = False) -> FrameInputs:
        key = (seq, z, mirrored)
        if key not in self._frames:
            g, img = self.dataset.graph(seq, z), self.dataset.image(seq, z)
            if mirrored:
                g, img = mirror_graph(g), np.asarray(img)[:, ::-1]
            self._frames[key] = FrameInputs(g, img, self.spectral_dim)
        return self._frames[key]

    def sample(self, seq: int, z0: int, z1: int, mirrored: bool = False, reverse: bool = False) -> TrainSample:
        key = (seq, z0, z1, mirrored)
        if key not in self._samples:
            if mirrored:
                base = self.sample(seq, z0, z1)
                flip = np.array([-1.0, 1.0])
                self._samples[key] = TrainSample(self.frame(seq, z0, True), self.frame(seq, z1, True), base.gt,
                                                 base.r01_gt * flip, base.r10_gt * flip, base.m0_gt, base.m1_gt,
                                                 base.key + ("mirrored",))
            else:
                zs = range(z0, z1 + 1)
                graphs = [self.dataset.graph(seq, z) for z in zs]
                images = [self.dataset.image(seq, z) for z in zs]
                self._samples[key] = build_sample(graphs, images, self.spectral_dim,
                                                  (self.frame(seq, z0), self.frame(seq, z1)), (seq, z0, z1))
        s = self._samples[key]
        return reverse_sample(s) if reverse else s


# ----------------------------------------------------------------- forward + loss


@dataclass
class LossTrace:
    """Recorded loss terms; `total` is the differentiable scalar."""

    total: torch.Tensor
    l_c: torch.Tensor
    l_r: torch.Tensor
    l_m: torch.Tensor
    empty_gt: bool = False

    def gradients(self, tensors: dict[str, torch.Tensor]) -> dict[str, np.ndarray]:
        """d total / d tensor for every named tensor; zero where the tensor took no part."""
        names = list(tensors)
        grads = torch.autograd.grad(self.total, [tensors[n] for n in names], allow_unused=True, retain_graph=True)
        return {n: (np.zeros(tuple(tensors[n].shape)) if g is None else g.detach().cpu().numpy().astype(np.float64))
                for n, g in zip(names, grads)}

    def values(self) -> dict[str, float]:
        return {k: float(v.detach()) for k, v in
                (("L_c", self.l_c), ("L_r", self.l_r), ("L_m", self.l_m), ("total", self.total))}


def forward_loss(sample: TrainSample, p: dict, cfg, phase: int = 2, bias_weight: float = 0.2) -> LossTrace:
    out = forward(sample.frame0, sample.frame1, p, cfg, heads=phase >= 2)
    l_c, empty = loss_correspondence(out.plan, sample.gt)
    zero = torch.zeros((), dtype=torch.float64)
    if phase < 2:
        return LossTrace(l_c, l_c, zero, zero, empty)
    l_r = loss_reposition(out.r01, sample.r01_gt, out.r10, sample.r10_gt)
    l_m = loss_visibility(out.logits0, out.logits1, sample.m0_gt, sample.m1_gt, bias_weight)
    return LossTrace(l_c + l_r + l_m, l_c, l_r, l_m, empty)


# ----------------------------------------------------------------- gradient check


@dataclass
class GradCheckReport:
    max_rel_error: float
    checked: int
    skipped: int  # coordinates whose +-eps stencil crossed a ReLU/abs/clamp branch
    worst: tuple = ()


def finite_difference_check(fn, tensors: dict[str, torch.Tensor], eps: float = 1e-3,
                            max_coords: Optional[int] = None, seed: int = 0) -> GradCheckReport:
    """Compare autograd against central differences of scalar fn(tensors), coordinate by coordinate.

    Relative error is |a - n| / max(1e-8, |a| + |n|). Tensors must be float64. When a
    perturbation changes the branch pattern of any piecewise-linear op the loss is not
    differentiable inside the stencil, so that coordinate is counted as skipped rather
    than compared. With max_coords set, a seeded subsample of max(200, max_coords)
    coordinates is checked.
    """
    for t in tensors.values():
        t.requires_grad_(True)
    with record_branches() as base_pattern:
        total = fn(tensors)
    names = list(tensors)
    grads = torch.autograd.grad(total, [tensors[n] for n in names], allow_unused=True)
    analytic = {n: (torch.zeros_like(tensors[n]) if g is None else g.detach()) for n, g in zip(names, grads)}
    coords = [(n, k) for n in names for k in range(tensors[n].numel())]
    if max_coords is not None and len(coords) > max(200, max_coords):
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(coords), size=max(200, max_coords), replace=False)
        coords = [coords[k] for k in sorted(pick)]
    worst, worst_at, skipped = 0.0, (), 0
    with torch.no_grad():
        for n, k in coords:
            flat = tensors[n].view(-1)
            orig = flat[k].item()
            flat[k] = orig + eps
            with record_branches() as pat_up:
                up = float(fn(tensors))
            flat[k] = orig - eps
            with record_branches() as pat_down:
                down = float(fn(tensors))
            flat[k] = orig
            if not (same_pattern(base_pattern, pat_up) and same_pattern(base_pattern, pat_down)):
                skipped += 1
                continue
            numeric = (up - down) / (2 * eps)
            a = float(analytic[n].view(-1)[k])
            rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            if rel > worst:
                worst, worst_at = rel, (n, k, a, numeric)
    return GradCheckReport(worst, len(coords) - skipped, skipped, worst_at)


def grad_check_report(params: ModelParams, sample: TrainSample, eps: float = 1e-3, phase: int = 2,
                      bias_weight: float = 0.2, max_coords: Optional[int] = None, seed: int = 0) -> GradCheckReport:
    cfg = params.config
    tensors = {k: v.detach().to(torch.float64).clone() for k, v in params.tensors.items()}
    return finite_difference_check(lambda p: forward_loss(sample, p, cfg, phase, bias_weight).total,
                                   tensors, eps, max_coords, seed)


def grad_check(params: ModelParams, sample: TrainSample, eps: float = 1e-3, phase: int = 2,
               bias_weight: float = 0.2, max_coords: Optional[int] = None, seed: int = 0) -> float:
    """Max relative analytic-vs-numeric gradient error over the loss of one sample."""
    return grad_check_report(params, sample, eps, phase, bias_weight, max_coords, seed).max_rel_error


# ----------------------------------------------------------------- training


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    epochs_total: int = 70
    epochs_phase1: int = 50
    accumulation_steps: int = 8
    bias_weight: float = 0.2
    gap_min: int = 1
    gap_max: int = 5
    pairs_per_epoch: Optional[int] = None
    splits: tuple = ("train",)
    seed: int = 0
    # step decay: from this epoch on the rate is multiplied by lr_decay_factor
    lr_decay_epoch: Optional[int] = None
    lr_decay_factor: float = 0.1
    # label-preserving augmentation: each drawn pair is mirrored left-right and/or
    # played backwards with probability 1/2
    augment: bool = False
    # start phase 2 with fresh Adam moments (phase-1 second moments are far below
    # the scale of the repositioning gradients)
    reset_optimizer_at_phase2: bool = False

    def validate(self) -> "TrainConfig":
        if not 0 <= self.epochs_phase1 <= self.epochs_total:
            raise ValueError("need 0 <= epochs_phase1 <= epochs_total")
        if self.accumulation_steps < 1:
            raise ValueError("accumulation_steps must be >= 1")
        if not 0 < self.bias_weight < 1:
            raise ValueError("bias_weight must lie in (0, 1)")
        if not 0 <= self.gap_min <= self.gap_max:
            raise ValueError("need 0 <= gap_min <= gap_max")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.lr_decay_epoch is not None and not 0 <= self.lr_decay_epoch <= self.epochs_total:
            raise ValueError("lr_decay_epoch must lie in [0, epochs_total]")
        if not 0 < self.lr_decay_factor <= 1:
            raise ValueError("lr_decay_factor must lie in (0, 1]")
        return self


def training_pairs(dataset, cfg: TrainConfig) -> list[tuple[int, int, int]]:
    pairs = []
    for gap in range(cfg.gap_min, cfg.gap_max + 1):
        pairs.extend(dataset.pairs(gap, cfg.splits))
    return sorted(pairs)


@dataclass
class TrainResult:
    params: ModelParams
    log: list[dict] = field(default_factory=list)


def train(dataset, cfg: TrainConfig, model_params: ModelParams, factory: Optional[SampleFactory] = None,
          callback=None) -> TrainResult:
    """Adam with gradient accumulation over single-pair forward passes.

    Epochs before `epochs_phase1` use the correspondence loss only, later ones the
    full loss. Returns trained parameters and one log row per optimizer step.
    """
    cfg.validate()
    torch.manual_seed(cfg.seed)
    params = model_params.clone()
    mcfg = params.config
    factory = factory or SampleFactory(dataset, mcfg.spectral_dim)
    pairs = training_pairs(dataset, cfg)
    if not pairs:
        raise ValueError("dataset has no training pairs")
    rng = np.random.default_rng(cfg.seed)
    leaves = list(params.tensors.values())
    for t in leaves:
        t.requires_grad_(True)
    opt = torch.optim.Adam(leaves, lr=cfg.learning_rate, betas=tuple(cfg.betas), eps=cfg.adam_eps)
    rows = []
    step = 0
    for epoch in range(cfg.epochs_total):
        phase = 1 if epoch < cfg.epochs_phase1 else 2
        if phase == 2 and epoch == cfg.epochs_phase1 > 0 and cfg.reset_optimizer_at_phase2:
            opt = torch.optim.Adam(leaves, lr=cfg.learning_rate, betas=tuple(cfg.betas), eps=cfg.adam_eps)
        decayed = cfg.lr_decay_epoch is not None and epoch >= cfg.lr_decay_epoch
        for group in opt.param_groups:
            group["lr"] = cfg.learning_rate * (cfg.lr_decay_factor if decayed else 1.0)
        n = cfg.pairs_per_epoch or len(pairs)
        order = rng.permutation(len(pairs))[:n] if n <= len(pairs) else rng.integers(0, len(pairs), n)
        acc = {"L_c": 0.0, "L_r": 0.0, "L_m": 0.0, "total": 0.0}
        count = 0
        opt.zero_grad(set_to_none=True)
        for k, idx in enumerate(order):
            if cfg.augment:
                mirrored, reverse = (bool(b) for b in rng.integers(0, 2, 2))
                sample = factory.sample(*pairs[idx], mirrored=mirrored, reverse=reverse)
            else:
                sample = factory.sample(*pairs[idx])
            p = {name: t.to(torch.float64) for name, t in params.tensors.items()}
            trace = forward_loss(sample, p, mcfg, phase, cfg.bias_weight)
            (trace.total / cfg.accumulation_steps).backward()
            for key, val in trace.values().items():
                acc[key] += val
            count += 1
            if count == cfg.accumulation_steps or k == len(order) - 1:
                if count < cfg.accumulation_steps:
                    for t in leaves:
                        if t.grad is not None:
                            t.grad.mul_(cfg.accumulation_steps / count)
                opt.step()
                opt.zero_grad(set_to_none=True)
                step += 1
                row = {"epoch": epoch, "step": step, **{key: val / count for key, val in acc.items()}}
                rows.append(row)
                if callback is not None:
                    callback(row, params)
                acc = {key: 0.0 for key in acc}
                count = 0
        log.info("epoch %d phase %d last L_c %.4f", epoch, phase, rows[-1]["L_c"] if rows else float("nan"))
    for t in leaves:
        t.requires_grad_(False)
        t.grad = None
    return TrainResult(params, rows)


def write_loss_log(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "step", "L_c", "L_r", "L_m", "total"])
        for r in rows:
            w.writerow([r["epoch"], r["step"]] + [repr(float(r[k])) for k in ("L_c", "L_r", "L_m", "total")])


def valid_accuracy(pred: Matching, gt: Matching) -> tuple[int, int]:
    """(correct, total) over ground-truth-matched vertices of graph 0."""
    partner = pred.partner_of_0()
    i, j = gt.as_arrays()
    return int((partner[i] == j).sum()), len(i)


def select_pairs(dataset, gaps, splits, max_shift: Optional[float] = None, min_shift: Optional[float] = None):
    """Pairs at the given gaps whose ground-truth average vertex shift lies in [min_shift, max_shift]."""
    out = []
    for gap in gaps:
        for key in dataset.pairs(gap, splits):
            if max_shift is None and min_shift is None:
                out.append(key)
                continue
            s = graph_stats(dataset.graph(key[0], key[1]), dataset.graph(key[0], key[2])).avg_shift
            if (max_shift is None or s <= max_shift) and (min_shift is None or s >= min_shift):
                out.append(key)
    return out


def matching_accuracy(params: ModelParams, dataset, keys, factory: Optional[SampleFactory] = None) -> float:
    """Valid-vertex accuracy pooled over pairs: correct partners / ground-truth-matched vertices."""
    from .correspond import mutual_match

    cfg = params.config
    factory = factory or SampleFactory(dataset, cfg.spectral_dim)
    p = params.cast(torch.float64)
    correct = total = 0
    with torch.no_grad():
        for key in keys:
            s = factory.sample(*key)
            out = forward(s.frame0, s.frame1, p, cfg, heads=False)
            c, t = valid_accuracy(mutual_match(out.plan, cfg.theta), s.gt)
            correct += c
            total += t
    return correct / total if total else float("nan")
