"""Geometrized line drawings: the LineGraph data model and its basic operations."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components


class GraphError(ValueError):
    pass


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LineGraph:
    """Vertices (K x 2, x then y), undirected edges (E x 2, i < j, sorted) and optional reference IDs."""

    width: int
    height: int
    vertices: np.ndarray
    edges: np.ndarray
    ref_ids: Optional[np.ndarray] = None

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 2)
        e = np.array(self.edges, dtype=np.int64).reshape(-1, 2)
        if self.width <= 0 or self.height <= 0:
            raise GraphError(f"width/height must be positive, got {self.width}x{self.height}")
        k = len(v)
        for n, (i, j) in enumerate(e):
            if i == j:
                raise GraphError(f"edges[{n}]: self-loop on vertex {i}")
            if not (0 <= i < k and 0 <= j < k):
                raise GraphError(f"edges[{n}]: index out of range [0, {k})")
        if len(e):
            e = np.unique(np.sort(e, axis=1), axis=0)
        bad = ~np.isfinite(v).all(axis=1) | (v[:, 0] < 0) | (v[:, 0] > self.width - 1) \
            | (v[:, 1] < 0) | (v[:, 1] > self.height - 1)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise GraphError(f"vertices[{i}]: {tuple(v[i])} outside {self.width}x{self.height} canvas")
        r = None
        if self.ref_ids is not None:
            r = np.array(self.ref_ids, dtype=np.int64).reshape(-1)
            if len(r) != k:
                raise GraphError(f"ref_ids has length {len(r)}, expected {k}")
            if (r < 0).any():
                raise GraphError(f"ref_ids[{int(np.flatnonzero(r < 0)[0])}]: negative id")
            if len(np.unique(r)) != k:
                raise GraphError("ref_ids: duplicate ids within one frame")
            r = _freeze(r)
        object.__setattr__(self, "vertices", _freeze(v))
        object.__setattr__(self, "edges", _freeze(e))
        object.__setattr__(self, "ref_ids", r)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    def adjacency(self) -> np.ndarray:
        k = self.num_vertices
        a = np.zeros((k, k), dtype=np.float64)
        if len(self.edges):
            a[self.edges[:, 0], self.edges[:, 1]] = 1.0
            a[self.edges[:, 1], self.edges[:, 0]] = 1.0
        return a

    def neighbors(self) -> list[list[int]]:
        nb: list[list[int]] = [[] for _ in range(self.num_vertices)]
        for i, j in self.edges:
            nb[i].append(int(j))
            nb[j].append(int(i))
        return nb

    def __eq__(self, other) -> bool:
        if not isinstance(other, LineGraph):
            return NotImplemented
        if (self.width, self.height) != (other.width, other.height):
            return False
        if self.ref_ids is None or other.ref_ids is None:
            if self.ref_ids is not other.ref_ids:
                return False
        elif not np.array_equal(self.ref_ids, other.ref_ids):
            return False
        return np.array_equal(self.vertices, other.vertices) and np.array_equal(self.edges, other.edges)

    def to_dict(self) -> dict:
        d = {
            "width": int(self.width),
            "height": int(self.height),
            "vertices": [[float(x), float(y)] for x, y in self.vertices],
            "edges": [[int(i), int(j)] for i, j in self.edges],
        }
        if self.ref_ids is not None:
            d["ref_ids"] = [int(r) for r in self.ref_ids]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LineGraph":
        for key in ("width", "height", "vertices", "edges"):
            if key not in d:
                raise GraphError(f"missing key {key!r}")
        for n, e in enumerate(d["edges"]):
            if len(e) != 2:
                raise GraphError(f"edges[{n}]: expected a pair")
            if e[0] == e[1]:
                raise GraphError(f"edges[{n}]: self-loop on vertex {e[0]}")
        verts = np.array(d["vertices"], dtype=np.float64).reshape(-1, 2)
        return cls(int(d["width"]), int(d["height"]), verts, np.array(d["edges"], dtype=np.int64).reshape(-1, 2),
                   d.get("ref_ids"))


@dataclass(frozen=True)
class Matching:
    pairs: tuple  # of (i, j)
    occluded_0: np.ndarray
    occluded_1: np.ndarray

    @classmethod
    def from_pairs(cls, pairs, k0: int, k1: int) -> "Matching":
        pairs = tuple(sorted((int(i), int(j)) for i, j in pairs))
        occ0 = np.ones(k0, dtype=bool)
        occ1 = np.ones(k1, dtype=bool)
        for i, j in pairs:
            if not occ0[i] or not occ1[j]:
                raise ValueError(f"pair ({i}, {j}) reuses a vertex")
            occ0[i] = occ1[j] = False
        return cls(pairs, _freeze(occ0), _freeze(occ1))

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.pairs:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        p = np.array(self.pairs, dtype=np.int64)
        return p[:, 0], p[:, 1]

    def partner_of_0(self) -> np.ndarray:
        """Index into graph 1 for every graph-0 vertex, -1 when occluded."""
        out = np.full(len(self.occluded_0), -1, dtype=np.int64)
        i, j = self.as_arrays()
        out[i] = j
        return out

    def partner_of_1(self) -> np.ndarray:
        out = np.full(len(self.occluded_1), -1, dtype=np.int64)
        i, j = self.as_arrays()
        out[j] = i
        return out


@dataclass(frozen=True)
class PairStats:
    occlusion_rate: float
    avg_shift: float
    max_shift: float
    no_matches: bool = False


def load_graph(path) -> LineGraph:
    with open(path) as f:
        try:
            d = json.load(f)
        except json.JSONDecodeError as exc:
            raise GraphError(f"{path}: not valid JSON ({exc})") from exc
    return LineGraph.from_dict(d)


def save_graph(graph: LineGraph, path) -> None:
    Path(path).write_text(json.dumps(graph.to_dict()))


def merge_close_vertices(graph: LineGraph, eps: float) -> LineGraph:
    """Collapse eps-connected clusters of vertices onto their lowest-index member."""
    if eps < 0:
        raise ValueError("eps must be non-negative")
    k = graph.num_vertices
    if k == 0:
        return graph
    v = graph.vertices
    diff = v[:, None, :] - v[None, :, :]
    d = np.hypot(diff[..., 0], diff[..., 1])
    close = np.argwhere(np.triu(d <= eps, 1))
    if len(close) == 0:
        return graph
    adj = coo_matrix((np.ones(len(close)), (close[:, 0], close[:, 1])), shape=(k, k))
    _, labels = connected_components(adj, directed=False)
    rep_of_label = {}
    for i in range(k):
        rep_of_label.setdefault(labels[i], i)
    reps = sorted(rep_of_label.values())
    new_index = {r: n for n, r in enumerate(reps)}
    remap = np.array([new_index[rep_of_label[labels[i]]] for i in range(k)], dtype=np.int64)
    edges = remap[graph.edges] if len(graph.edges) else graph.edges
    edges = edges[edges[:, 0] != edges[:, 1]] if len(edges) else edges
    refs = graph.ref_ids[reps] if graph.ref_ids is not None else None
    return LineGraph(graph.width, graph.height, v[reps], edges, refs)


def _round_half_up(a) -> np.ndarray:
    return np.floor(np.asarray(a, dtype=np.float64) + 0.5).astype(np.int64)


def line_pixels(x0: int, y0: int, x1: int, y1: int) -> list[tuple[int, int]]:
    """Integer midpoint (Bresenham) line from (x0, y0) to (x1, y1), all octants."""
    pts = []
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    x, y = x0, y0
    while True:
        pts.append((x, y))
        if x == x1 and y == y1:
            return pts
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x += sx
        if e2 <= dx:
            err += dx
            y += sy


def rasterize(graph: LineGraph, line_width: int = 2) -> np.ndarray:
    """Render edges as thick digital lines; returns an H x W image, 1 = white, 0 = line."""
    if line_width < 1:
        raise ValueError("line_width must be >= 1")
    h, w = graph.height, graph.width
    ink = np.zeros((h, w), dtype=bool)
    pix = _round_half_up(graph.vertices)
    lo, hi = -((line_width - 1) // 2), line_width // 2

    def stamp(x, y):
        ink[max(0, y + lo):min(h, y + hi + 1), max(0, x + lo):min(w, x + hi + 1)] = True

    touched = np.zeros(graph.num_vertices, dtype=bool)
    for i, j in graph.edges:
        a, b = tuple(pix[i]), tuple(pix[j])
        # draw from the lexicographically smaller endpoint so edge orientation never matters
        if a > b:
            a, b = b, a
        for x, y in line_pixels(a[0], a[1], b[0], b[1]):
            stamp(x, y)
        touched[i] = touched[j] = True
    for i in np.flatnonzero(~touched):
        stamp(*pix[i])
    return np.where(ink, 0.0, 1.0)


def spectral_embedding(graph: LineGraph, dim: int, return_eigenvalues: bool = False):
    """Laplacian eigenvector coordinates, skipping each component's constant vector.

    Columns are sign-fixed so their largest-magnitude entry is positive. Columns
    past the number of usable eigenvectors are zero.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    k = graph.num_vertices
    out = np.zeros((k, dim), dtype=np.float64)
    if k == 0:
        return (out, np.zeros(0)) if return_eigenvalues else out
    a = graph.adjacency()
    lap = np.diag(a.sum(1)) - a
    n_comp, _ = connected_components(coo_matrix(a), directed=False)
    evals, evecs = np.linalg.eigh(lap)
    evals, evecs = evals[n_comp:], evecs[:, n_comp:]
    evals, evecs = evals[:dim], evecs[:, :dim].copy()
    pivots = np.empty(evecs.shape[1], dtype=np.int64)
    for c in range(evecs.shape[1]):
        col = evecs[:, c]
        mag = np.abs(col)
        # lowest index among (numerically) largest-magnitude entries
        p = int(np.flatnonzero(mag >= mag.max() - 1e-12)[0])
        if col[p] < 0:
            evecs[:, c] = -col
        pivots[c] = p
    order = _multiplet_order(evals, pivots)
    evals, evecs = evals[order], evecs[:, order]
    out[:, :evecs.shape[1]] = evecs
    return (out, evals) if return_eigenvalues else out


def _multiplet_order(evals: np.ndarray, pivots: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    order = []
    start = 0
    n = len(evals)
    while start < n:
        stop = start + 1
        while stop < n and evals[stop] - evals[stop - 1] < tol:
            stop += 1
        group = list(range(start, stop))
        order.extend(sorted(group, key=lambda c: (pivots[c], c)))
        start = stop
    return np.array(order, dtype=np.int64)


def _require_ids(*graphs: LineGraph) -> None:
    for g in graphs:
        if g.ref_ids is None:
            raise GraphError("graph has no ref_ids")


def derive_matching(g0: LineGraph, g1: LineGraph) -> Matching:
    """Ground-truth correspondence: pairs of vertices sharing a reference ID."""
    _require_ids(g0, g1)
    lookup = {int(r): j for j, r in enumerate(g1.ref_ids)}
    pairs = [(i, lookup[int(r)]) for i, r in enumerate(g0.ref_ids) if int(r) in lookup]
    return Matching.from_pairs(pairs, g0.num_vertices, g1.num_vertices)


def graph_stats(g0: LineGraph, g1: LineGraph) -> PairStats:
    m = derive_matching(g0, g1)
    total = g0.num_vertices + g1.num_vertices
    occ = (int(m.occluded_0.sum()) + int(m.occluded_1.sum())) / total if total else 0.0
    if not m.pairs:
        return PairStats(occ, 0.0, 0.0, no_matches=True)
    i, j = m.as_arrays()
    shift = np.linalg.norm(g1.vertices[j] - g0.vertices[i], axis=1)
    return PairStats(occ, float(shift.mean()), float(shift.max()))


def save_image(image: np.ndarray, path) -> None:
    """Write a [0, 1] grayscale image as 8-bit PNG or binary PGM (chosen by suffix)."""
    from PIL import Image

    arr = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    fmt = "PPM" if str(path).lower().endswith((".pgm", ".pnm")) else "PNG"
    Image.fromarray(arr, mode="L").save(path, format=fmt)


def load_image(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float64)
    return arr / 255.0
