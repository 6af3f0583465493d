"""Procedural 2D articulated figures with persistent vertex IDs.

Each figure point carries an ID that survives across frames; hidden-line removal
against higher-depth closed parts and the canvas border deletes portions of lines.
Points created where a line is cut get IDs that are unique to their frame, so they
never match anything in another frame.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional

import numpy as np

from .geom import LineGraph, graph_stats, load_graph, merge_close_vertices, rasterize, save_graph, save_image, PairStats

# Humanoid template: (name, parent slot, rest angle relative to parent, length scale, half-width scale).
# Angles in radians, image coordinates (y down): -pi/2 points up.
_TEMPLATE = [
    ("torso", -1, -math.pi / 2, 1.00, 0.42),
    ("head", 0, 0.0, 0.42, 0.62),
    ("l_upper_arm", 0, 2.55, 0.60, 0.20),
    ("r_upper_arm", 0, -2.55, 0.60, 0.20),
    ("l_thigh", 0, math.pi - 0.25, 0.78, 0.24),
    ("r_thigh", 0, -math.pi + 0.25, 0.78, 0.24),
    ("l_forearm", 2, 0.30, 0.55, 0.17),
    ("r_forearm", 3, -0.30, 0.55, 0.17),
    ("l_shin", 4, -0.15, 0.72, 0.19),
    ("r_shin", 5, 0.15, 0.72, 0.19),
    ("l_hand", 6, 0.10, 0.22, 0.15),
    ("r_hand", 7, -0.10, 0.22, 0.15),
    ("l_foot", 8, -1.20, 0.26, 0.13),
    ("r_foot", 9, 1.20, 0.26, 0.13),
]
N_SLOTS = len(_TEMPLATE)
# bones used at each complexity level; 5 and above use the full template
_BONES_BY_COMPLEXITY = {1: 1, 2: 2, 3: 4, 4: 6, 5: 10}
# torso and thighs hang from the torso's *start* (hip); arms and head from its end (shoulder)
_ATTACH_AT_START = {"l_thigh", "r_thigh"}

FRESH_ID_BASE = 1_000_000
# decoration points closer than this (pixels) to their bone's outline or to each other
# would blur into neighbouring strokes at line width 2, so they are dropped
DECO_CLEARANCE = 4.0


def joint_count_range(complexity: int) -> tuple[int, int]:
    """Number of bones a figure of this complexity has (min, max)."""
    if complexity >= 6:
        return N_SLOTS, N_SLOTS
    n = _BONES_BY_COMPLEXITY[max(1, complexity)]
    return n, n


@dataclass
class Part:
    bone: int
    points: np.ndarray  # local (along-bone, across-bone) coordinates
    ids: np.ndarray
    closed: bool
    depth: int


@dataclass
class ArticulatedFigure:
    parents: list[int]
    rest_angles: np.ndarray
    lengths: np.ndarray
    slots: list[int]  # template slot of each bone
    parts: list[Part]
    canvas: int
    scale: float
    seed: int = 0
    complexity: int = 1

    @property
    def n_ids(self) -> int:
        return int(sum(len(p.ids) for p in self.parts))


@dataclass
class MotionScript:
    angles: np.ndarray  # (frames, N_SLOTS) offsets added to rest angles
    root: np.ndarray  # (frames, 2) root translation in pixels

    @property
    def n_frames(self) -> int:
        return len(self.angles)


def _capsule(length: float, hw: float, spacing: float, rng) -> np.ndarray:
    """Closed outline around a bone from 0 to length, as local points (no repeat)."""
    ext = 0.35 * hw
    n_side = max(1, int(round((length + 2 * ext) / spacing)))
    xs = np.linspace(-ext, length + ext, n_side + 1)
    jit = rng.uniform(-0.15, 0.15, size=len(xs)) * hw
    top = np.stack([xs, -hw + jit], 1)
    bottom = np.stack([xs[::-1], hw - jit[::-1]], 1)
    cap_end = np.array([[length + ext + 0.6 * hw, 0.0]])
    cap_start = np.array([[-ext - 0.6 * hw, 0.0]])
    return np.concatenate([top, cap_end, bottom, cap_start])


def _circle(cx: float, r: float, spacing: float) -> np.ndarray:
    n = max(6, int(round(2 * math.pi * r / spacing)))
    a = np.linspace(0, 2 * math.pi, n, endpoint=False)
    return np.stack([cx + r * np.cos(a), r * np.sin(a)], 1)


def _outline_distance(pts: np.ndarray, outline: np.ndarray) -> np.ndarray:
    a, b = outline, np.roll(outline, -1, axis=0)
    ab = b - a
    t = np.clip(np.einsum("pkc,kc->pk", pts[:, None] - a[None], ab) / np.maximum((ab * ab).sum(1), 1e-12), 0, 1)
    near = a[None] + t[..., None] * ab[None]
    return np.hypot(*(pts[:, None] - near).transpose(2, 0, 1)).min(1)


def _clear_points(pts, outline: np.ndarray, taken: list) -> np.ndarray:
    """Keep decoration points with DECO_CLEARANCE from the outline and from kept points."""
    pts = np.asarray(pts, dtype=np.float64)
    ok = _outline_distance(pts, outline) >= DECO_CLEARANCE
    out = []
    for p, good in zip(pts, ok):
        if good and all(np.hypot(*(p - q)) >= DECO_CLEARANCE for q in taken + out):
            out.append(p)
    return np.array(out).reshape(-1, 2)


def make_figure(seed: int, complexity: int, canvas: int = 128) -> ArticulatedFigure:
    """Seeded humanoid-like figure; complexity sets bone count and decoration density."""
    if complexity < 1:
        raise ValueError("complexity must be >= 1")
    rng = np.random.default_rng([seed, complexity, canvas])
    n_bones = joint_count_range(complexity)[0]
    scale = canvas * rng.uniform(0.20, 0.25)
    spacing = canvas * rng.uniform(0.075, 0.095)
    slots = list(range(n_bones))
    parents = [_TEMPLATE[s][1] for s in slots]
    rest = np.array([_TEMPLATE[s][2] + rng.uniform(-0.12, 0.12) for s in slots])
    lengths = np.array([_TEMPLATE[s][3] * scale * rng.uniform(0.85, 1.15) for s in slots])
    widths = np.array([_TEMPLATE[s][4] * scale * rng.uniform(0.85, 1.2) for s in slots])
    # depth: front side and back side chosen per figure
    front_left = bool(rng.integers(2))
    depth_of = {}
    for b, s in enumerate(slots):
        name = _TEMPLATE[s][0]
        if name == "torso":
            d = 50
        elif name == "head":
            d = 60
        else:
            left = name.startswith("l_")
            base = 70 if left == front_left else 10
            d = base + (5 if "arm" in name or "hand" in name else 0) + (b % 5)
        depth_of[b] = d
    parts: list[Part] = []
    next_id = 0

    def add(bone, pts, closed, depth):
        nonlocal next_id
        ids = np.arange(next_id, next_id + len(pts))
        next_id += len(pts)
        parts.append(Part(bone, np.asarray(pts, dtype=np.float64), ids, closed, depth))

    for b, s in enumerate(slots):
        name = _TEMPLATE[s][0]
        L, hw = lengths[b], widths[b]
        taken: list = []

        def deco(pts):
            kept = _clear_points(pts, outline, taken)
            if len(kept) >= 2:
                taken.extend(kept)
                add(b, kept, False, depth_of[b] + 1)

        if name == "head":
            r = hw
            outline = _circle(L * 0.5 + r * 0.2, r, spacing * 0.85)
            add(b, outline, True, depth_of[b])
            # face features
            deco([[L * 0.5, -0.35 * r], [L * 0.5 + 0.35 * r, -0.3 * r]])
            if complexity >= 3:
                deco([[L * 0.5 + 0.5 * r, 0.2 * r], [L * 0.5 + 0.5 * r, 0.5 * r]])
        else:
            outline = _capsule(L, hw, spacing, rng)
            add(b, outline, True, depth_of[b])
        n_deco = 0 if complexity < 2 else int(rng.integers(0, 2 + (complexity >= 5) + (complexity >= 6)))
        if name == "torso" and complexity >= 2:
            n_deco += 1
        for _ in range(n_deco):
            if name == "head":
                break
            kind = rng.integers(3)
            if kind == 0:  # stripe across the bone
                x = rng.uniform(0.2, 0.8) * L
                deco([[x, -0.5 * hw], [x + rng.uniform(-0.2, 0.2) * hw, 0.5 * hw]])
            elif kind == 1:  # seam along the bone
                x0, x1 = sorted(rng.uniform(0.05, 0.95, 2) * L)
                x1 = max(x1, x0 + 0.3 * L)
                y = rng.uniform(-0.4, 0.4) * hw
                n = max(2, int(round((x1 - x0) / spacing)) + 1)
                deco(np.stack([np.linspace(x0, x1, n), np.full(n, y)], 1))
            else:  # chevron
                x = rng.uniform(0.25, 0.75) * L
                deco([[x - 0.25 * hw, -0.45 * hw], [x + 0.3 * hw, 0.0], [x - 0.25 * hw, 0.45 * hw]])
    return ArticulatedFigure(parents, rest, lengths, slots, parts, canvas, scale, seed, complexity)


def make_motion(seed: int, n_frames: int, amplitude: float = 1.0, canvas: int = 128) -> MotionScript:
    """Smooth joint-angle trajectories (sums of slow sinusoids) plus a root drift."""
    rng = np.random.default_rng([seed, n_frames, 7919])
    t = np.arange(n_frames, dtype=np.float64)
    angles = np.zeros((n_frames, N_SLOTS))
    for s in range(N_SLOTS):
        amp = amplitude * (0.25 if s == 0 else rng.uniform(0.35, 0.7))
        for h in range(2):
            period = rng.uniform(34.0, 60.0) * (1 + h)
            phase = rng.uniform(0, 2 * math.pi)
            angles[:, s] += amp / (1 + h) * (np.sin(2 * math.pi * t / period + phase) - math.sin(phase))
    drift = rng.uniform(-1, 1, 2) * canvas * 0.006 * amplitude
    bob_period = rng.uniform(30.0, 50.0)
    root = np.outer(t, drift)
    root[:, 1] += amplitude * canvas * 0.02 * np.sin(2 * math.pi * t / bob_period)
    return MotionScript(angles, root)


def _pose_points(fig: ArticulatedFigure, script: MotionScript, z: int):
    """World positions of every part's points at frame z."""
    c = fig.canvas
    origin = np.array([c / 2, c / 2 + 0.12 * fig.scale]) + script.root[z]
    n = len(fig.slots)
    starts = np.zeros((n, 2))
    ends = np.zeros((n, 2))
    world = np.zeros(n)
    for b in range(n):
        p = fig.parents[b]
        a = fig.rest_angles[b] + script.angles[z, fig.slots[b]]
        if p < 0:
            world[b] = a
            starts[b] = origin
        else:
            world[b] = world[p] + a
            name = _TEMPLATE[fig.slots[b]][0]
            starts[b] = starts[p] if name in _ATTACH_AT_START else ends[p]
        ends[b] = starts[b] + fig.lengths[b] * np.array([math.cos(world[b]), math.sin(world[b])])
    out = []
    for part in fig.parts:
        ang = world[part.bone]
        rot = np.array([[math.cos(ang), -math.sin(ang)], [math.sin(ang), math.cos(ang)]])
        out.append(starts[part.bone] + part.points @ rot.T)
    return out


def point_in_polygon(pts: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd rule; points exactly on the boundary may go either way."""
    pts = np.atleast_2d(pts)
    x, y = pts[:, 0:1], pts[:, 1:2]
    x0, y0 = poly[:, 0], poly[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    cond = (y0 > y) != (y1 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
    cross = cond & (x < xint)
    return (cross.sum(1) % 2) == 1


def _segment_cuts(a: np.ndarray, b: np.ndarray, poly: np.ndarray) -> list[float]:
    """Parameters in (0, 1) where segment a->b crosses a closed polygon's edges."""
    p, q = poly, np.roll(poly, -1, axis=0)
    d = b - a
    e = q - p
    den = d[0] * e[:, 1] - d[1] * e[:, 0]
    ok = np.abs(den) > 1e-12
    w = p - a
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (w[:, 0] * e[:, 1] - w[:, 1] * e[:, 0]) / den
        u = (w[:, 0] * d[1] - w[:, 1] * d[0]) / den
    hit = ok & (t > 1e-9) & (t < 1 - 1e-9) & (u >= 0) & (u <= 1)
    return list(t[hit])


def pose_frame(fig: ArticulatedFigure, script: MotionScript, frame_index: int, merge_eps: float = 0.5) -> LineGraph:
    """Forward kinematics + hidden-line removal -> LineGraph with ref_ids."""
    if not 0 <= frame_index < script.n_frames:
        raise IndexError("frame_index out of range")
    c = fig.canvas
    world = _pose_points(fig, script, frame_index)
    lo, hi = 0.0, float(c - 1)
    box = np.array([[lo, lo], [hi, lo], [hi, hi], [lo, hi]])
    occluders = [(part.depth, pts) for part, pts in zip(fig.parts, world) if part.closed]

    verts: list[tuple[float, float]] = []
    ids: list[int] = []
    index: dict[int, int] = {}
    edges: list[tuple[int, int]] = []
    fresh = FRESH_ID_BASE + frame_index * 10_000

    def hidden(pts, depth):
        out = (pts[:, 0] < lo) | (pts[:, 0] > hi) | (pts[:, 1] < lo) | (pts[:, 1] > hi)
        for d, poly in occluders:
            if d > depth:
                out |= point_in_polygon(pts, poly)
        return out

    def persistent(pid, xy):
        if pid not in index:
            index[pid] = len(verts)
            verts.append((float(xy[0]), float(xy[1])))
            ids.append(int(pid))
        return index[pid]

    def split_vertex(xy):
        nonlocal fresh
        verts.append((float(xy[0]), float(xy[1])))
        ids.append(fresh)
        fresh += 1
        return len(verts) - 1

    for part, pts in zip(fig.parts, world):
        n = len(pts)
        segs = [(k, (k + 1) % n) for k in range(n if part.closed else n - 1)]
        for ka, kb in segs:
            a, b = pts[ka], pts[kb]
            cuts = _segment_cuts(a, b, box)
            for d, poly in occluders:
                if d > part.depth:
                    cuts += _segment_cuts(a, b, poly)
            ts = [0.0] + sorted(cuts) + [1.0]
            mids = np.array([a + (b - a) * (t0 + t1) / 2 for t0, t1 in zip(ts[:-1], ts[1:])])
            hid = hidden(mids, part.depth)
            for (t0, t1), h in zip(zip(ts[:-1], ts[1:]), hid):
                if h or t1 - t0 < 1e-9:
                    continue
                va = persistent(part.ids[ka], a) if t0 == 0.0 else split_vertex(a + (b - a) * t0)
                vb = persistent(part.ids[kb], b) if t1 == 1.0 else split_vertex(a + (b - a) * t1)
                if va != vb:
                    edges.append((va, vb))
    v = np.clip(np.array(verts, dtype=np.float64).reshape(-1, 2), lo, hi)
    g = LineGraph(c, c, v, np.array(edges, dtype=np.int64).reshape(-1, 2), np.array(ids, dtype=np.int64))
    return merge_close_vertices(g, merge_eps)


def pose_sequence(fig: ArticulatedFigure, script: MotionScript) -> list[LineGraph]:
    return [pose_frame(fig, script, z) for z in range(script.n_frames)]


# ---------------------------------------------------------------- datasets


@dataclass
class SynthConfig:
    n_figures: int = 6
    n_motions: int = 6
    frames_per_seq: int = 24
    canvas: int = 128
    seed: int = 7
    amplitude: float = 1.0
    complexity: tuple = (5, 6)
    line_width: int = 2


def split_assignment(n_figures: int, n_motions: int) -> dict[tuple[int, int], str]:
    """Train/val/test over the figure x motion grid with exclusive test figures and motions.

    The last third (at least one) of figures and of motions are held out: sequences
    pairing a held-out figure with a held-out motion form the test split, and sequences
    with exactly one held-out factor form the validation split.
    """
    hf = max(1, n_figures // 3) if n_figures > 1 else 0
    hm = max(1, n_motions // 3) if n_motions > 1 else 0
    out = {}
    for f in range(n_figures):
        for m in range(n_motions):
            held_f = f >= n_figures - hf
            held_m = m >= n_motions - hm
            out[(f, m)] = "test" if held_f and held_m else "val" if held_f or held_m else "train"
    return out


def _figure_for(cfg: SynthConfig, f: int) -> ArticulatedFigure:
    lo, hi = cfg.complexity
    cx = lo + (f % (hi - lo + 1))
    return make_figure(cfg.seed * 1000 + f, cx, cfg.canvas)


def _motion_for(cfg: SynthConfig, m: int) -> MotionScript:
    return make_motion(cfg.seed * 1000 + 500 + m, cfg.frames_per_seq, cfg.amplitude, cfg.canvas)


def generate_dataset(cfg: SynthConfig, out_dir) -> dict:
    """Write graphs, PNG rasters and manifest.json; returns the manifest."""
    if min(cfg.n_figures, cfg.n_motions, cfg.frames_per_seq) < 1:
        raise ValueError("counts must be >= 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    splits = split_assignment(cfg.n_figures, cfg.n_motions)
    seqs = []
    figures = [_figure_for(cfg, f) for f in range(cfg.n_figures)]
    for f in range(cfg.n_figures):
        for m in range(cfg.n_motions):
            name = f"seq_f{f:02d}_m{m:02d}"
            (out / name).mkdir(exist_ok=True)
            script = _motion_for(cfg, m)
            frames = []
            for z, g in enumerate(pose_sequence(figures[f], script)):
                gp, ip = f"{name}/frame_{z:03d}.json", f"{name}/frame_{z:03d}.png"
                save_graph(g, out / gp)
                save_image(rasterize(g, cfg.line_width), out / ip)
                frames.append({"graph": gp, "image": ip})
            seqs.append({"name": name, "figure": f, "motion": m, "split": splits[(f, m)], "frames": frames})
    manifest = {"format": "lineinbet-synth/1", "config": asdict(cfg), "sequences": seqs}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


@dataclass
class Dataset:
    root: Path
    manifest: dict
    _graphs: dict = field(default_factory=dict, repr=False)
    _images: dict = field(default_factory=dict, repr=False)

    @classmethod
    def open(cls, root) -> "Dataset":
        root = Path(root)
        return cls(root, json.loads((root / "manifest.json").read_text()))

    @property
    def sequences(self) -> list[dict]:
        return self.manifest["sequences"]

    def split(self, name: str) -> list[int]:
        return [k for k, s in enumerate(self.sequences) if s["split"] == name]

    def graph(self, seq: int, z: int) -> LineGraph:
        key = (seq, z)
        if key not in self._graphs:
            self._graphs[key] = load_graph(self.root / self.sequences[seq]["frames"][z]["graph"])
        return self._graphs[key]

    def image(self, seq: int, z: int) -> np.ndarray:
        from .geom import load_image

        key = (seq, z)
        if key not in self._images:
            self._images[key] = load_image(self.root / self.sequences[seq]["frames"][z]["image"])
        return self._images[key]

    def n_frames(self, seq: int) -> int:
        return len(self.sequences[seq]["frames"])

    def pairs(self, gap: int, splits=None) -> list[tuple[int, int, int]]:
        """(sequence, z0, z1) with gap frames strictly between z0 and z1."""
        out = []
        for k, s in enumerate(self.sequences):
            if splits is not None and s["split"] not in splits:
                continue
            for z in range(self.n_frames(k) - gap - 1):
                out.append((k, z, z + gap + 1))
        return out


def dataset_stats(dataset: Dataset, gaps=(0, 1, 5, 9), splits=None) -> dict[int, PairStats]:
    """Mean occlusion rate, mean average shift and mean max shift per gap."""
    table = {}
    for g in gaps:
        rows = [graph_stats(dataset.graph(k, a), dataset.graph(k, b)) for k, a, b in dataset.pairs(g, splits)]
        if not rows:
            continue
        table[g] = PairStats(
            float(np.mean([r.occlusion_rate for r in rows])),
            float(np.mean([r.avg_shift for r in rows])),
            float(np.mean([r.max_shift for r in rows])),
        )
    return table


def manifest_digest(root) -> str:
    return hashlib.sha256((Path(root) / "manifest.json").read_bytes()).hexdigest()
