"""Raster line drawing -> LineGraph: threshold, thin, trace, simplify."""
from __future__ import annotations

import numpy as np

from .geom import LineGraph, merge_close_vertices

# (dy, dx) for Zhang-Suen neighbours P2..P9, clockwise from north
_ZS_OFFSETS = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)]
_N8 = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def binarize(image: np.ndarray) -> np.ndarray:
    """Line mask: pixels darker than 0.99 x the image maximum."""
    image = np.asarray(image, dtype=np.float64)
    if image.size == 0:
        return np.zeros(image.shape, dtype=bool)
    return image < 0.99 * image.max()


def _shifted(padded: np.ndarray, dy: int, dx: int) -> np.ndarray:
    h, w = padded.shape[0] - 2, padded.shape[1] - 2
    return padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]


def skeletonize(mask: np.ndarray) -> np.ndarray:
    """Zhang-Suen thinning to a one-pixel-wide skeleton."""
    img = np.asarray(mask, dtype=bool).copy()
    if not img.any():
        return img
    while True:
        changed = False
        for step in (0, 1):
            p = np.pad(img, 1).astype(np.uint8)
            n = [_shifted(p, dy, dx) for dy, dx in _ZS_OFFSETS]
            b = sum(n)
            seq = n + [n[0]]
            a = sum((seq[k] == 0) & (seq[k + 1] == 1) for k in range(8))
            p2, p4, p6, p8 = n[0], n[2], n[4], n[6]
            if step == 0:
                c1, c2 = p2 * p4 * p6, p4 * p6 * p8
            else:
                c1, c2 = p2 * p4 * p8, p2 * p6 * p8
            kill = img & (b >= 2) & (b <= 6) & (a == 1) & (c1 == 0) & (c2 == 0)
            if kill.any():
                img[kill] = False
                changed = True
        if not changed:
            return img


def _pixel_graph(skel: np.ndarray) -> dict:
    """8-neighbour adjacency, dropping a diagonal link when a 4-connected detour exists.

    Without this, the pixels beside a crossing or a staircase step all look like
    junctions; with it, only true branch pixels have three or more neighbours.
    """
    h, w = skel.shape
    on = set(zip(*np.nonzero(skel)))
    adj = {}
    for (y, x) in on:
        nb = []
        for dy, dx in _N8:
            q = (y + dy, x + dx)
            if q not in on:
                continue
            if dy and dx and ((y + dy, x) in on or (y, x + dx) in on):
                continue
            nb.append(q)
        adj[(y, x)] = sorted(nb)
    return adj


def trace_polylines(skeleton: np.ndarray) -> list[np.ndarray]:
    """Split a skeleton into arcs between endpoint/junction pixels.

    Returns a list of (n, 2) arrays in (x, y) pixel coordinates. A loop with no
    junction comes back once with its first point repeated at the end.
    """
    adj = _pixel_graph(np.asarray(skeleton, dtype=bool))
    if not adj:
        return []
    seen_edges = set()
    polylines = []

    def key(a, b):
        return (a, b) if a < b else (b, a)

    def walk(start, nxt):
        path = [start, nxt]
        seen_edges.add(key(start, nxt))
        prev, cur = start, nxt
        while len(adj[cur]) == 2:
            a, b = adj[cur]
            step = b if a == prev else a
            if key(cur, step) in seen_edges:
                break
            seen_edges.add(key(cur, step))
            path.append(step)
            prev, cur = cur, step
            if cur == start:
                break
        return path

    nodes = sorted(p for p, nb in adj.items() if len(nb) != 2)
    for p in nodes:
        for q in adj[p]:
            if key(p, q) not in seen_edges:
                polylines.append(walk(p, q))
    # junction-free loops
    for p in sorted(adj):
        for q in adj[p]:
            if key(p, q) not in seen_edges:
                polylines.append(walk(p, q))
    return [np.array([(x, y) for (y, x) in pl], dtype=np.float64) for pl in polylines]


def _point_segment_distance(pts: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.linalg.norm(pts - a, axis=1)
    t = np.clip(((pts - a) @ ab) / denom, 0.0, 1.0)
    return np.linalg.norm(pts - (a + t[:, None] * ab), axis=1)


def simplify(polyline: np.ndarray, tol: float) -> np.ndarray:
    """Ramer-Douglas-Peucker; endpoints always kept."""
    if tol < 0:
        raise ValueError("tol must be non-negative")
    pts = np.asarray(polyline, dtype=np.float64)
    n = len(pts)
    if n <= 2 or tol == 0:
        return pts.copy()
    keep = np.zeros(n, dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, n - 1)]
    while stack:
        lo, hi = stack.pop()
        if hi - lo < 2:
            continue
        d = _point_segment_distance(pts[lo + 1:hi], pts[lo], pts[hi])
        k = int(np.argmax(d))
        # closed loops have coincident ends, so the farthest point must split them
        if d[k] > tol or np.array_equal(pts[lo], pts[hi]):
            mid = lo + 1 + k
            keep[mid] = True
            stack.append((lo, mid))
            stack.append((mid, hi))
    return pts[keep]


def geometrize(image: np.ndarray, tol: float = 1.5, merge_eps: float = 0.5) -> LineGraph:
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    skel = skeletonize(binarize(image))
    index = {}
    verts = []
    edges = set()

    def vid(p):
        p = (float(p[0]), float(p[1]))
        if p not in index:
            index[p] = len(verts)
            verts.append(p)
        return index[p]

    for pl in trace_polylines(skel):
        pl = simplify(pl, tol)
        ids = [vid(p) for p in pl]
        for a, b in zip(ids[:-1], ids[1:]):
            if a != b:
                edges.add((min(a, b), max(a, b)))
    # isolated skeleton pixels
    ys, xs = np.nonzero(skel)
    adj = _pixel_graph(skel)
    for y, x in zip(ys, xs):
        if not adj[(y, x)]:
            vid((x, y))
    g = LineGraph(w, h, np.array(verts).reshape(-1, 2), np.array(sorted(edges), dtype=np.int64).reshape(-1, 2))
    return merge_close_vertices(g, merge_eps)
