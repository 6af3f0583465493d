import json

import numpy as np
import pytest

from lineinbet.geom import derive_matching, load_image
from lineinbet.synth import (FRESH_ID_BASE, Dataset, MotionScript, SynthConfig, dataset_stats, generate_dataset,
                             make_figure, make_motion, manifest_digest, point_in_polygon, pose_frame, pose_sequence,
                             split_assignment)


def still(n_frames):
    return MotionScript(np.zeros((n_frames, 14)), np.zeros((n_frames, 2)))


def test_same_seed_same_figure():
    a, b = make_figure(3, 5), make_figure(3, 5)
    assert all(np.array_equal(p.points, q.points) and np.array_equal(p.ids, q.ids) for p, q in zip(a.parts, b.parts))
    assert pose_frame(a, still(1), 0) == pose_frame(b, still(1), 0)
    c = make_figure(4, 5)
    assert not np.array_equal(a.parts[0].points, c.parts[0].points)


def test_complexity_one_is_single_bone():
    fig = make_figure(0, 1)
    assert len(fig.slots) == 1 and fig.n_ids >= 2
    g = pose_frame(fig, still(1), 0)
    assert g.num_vertices >= 2 and len(g.edges) >= 1
    with pytest.raises(ValueError):
        make_figure(0, 0)


def test_zero_amplitude_frames_identical():
    fig = make_figure(1, 6)
    seq = pose_sequence(fig, make_motion(2, 5, amplitude=0.0))
    g0 = seq[0]
    persistent = g0.ref_ids < FRESH_ID_BASE
    for g in seq[1:]:
        assert np.array_equal(g.vertices, g0.vertices) and np.array_equal(g.edges, g0.edges)
        # cut points get frame-specific IDs so they never match across frames
        assert np.array_equal(g.ref_ids[persistent], g0.ref_ids[persistent])
        assert (g.ref_ids[~persistent] >= FRESH_ID_BASE).all()
    m = derive_matching(seq[0], seq[3])
    assert len(m.pairs) == int((seq[0].ref_ids < FRESH_ID_BASE).sum())


def test_motion_determinism_and_start():
    a, b = make_motion(5, 10), make_motion(5, 10)
    assert np.array_equal(a.angles, b.angles) and np.array_equal(a.root, b.root)
    assert np.allclose(a.angles[0], 0) and np.allclose(a.root[0], 0)


def test_point_in_polygon_square():
    sq = np.array([[0, 0], [4, 0], [4, 4], [0, 4]], float)
    assert point_in_polygon(np.array([[1, 1], [5, 1], [2, 3.9], [-1, 2]]), sq).tolist() == [True, False, True, False]


def test_occluded_points_lie_behind_front_parts():
    fig = make_figure(7, 6)
    g = pose_frame(fig, still(1), 0)
    from lineinbet.synth import _pose_points

    world = _pose_points(fig, still(1), 0)
    kept = set(int(i) for i in g.ref_ids)
    for part, pts in zip(fig.parts, world):
        for pid, xy in zip(part.ids, pts):
            front = [p for q, p in zip(fig.parts, world) if q.closed and q.depth > part.depth]
            covered = any(point_in_polygon(xy[None], poly)[0] for poly in front)
            inside = 0 <= xy[0] <= 127 and 0 <= xy[1] <= 127
            if covered and inside:
                assert int(pid) not in kept or np.min(np.hypot(*(g.vertices - xy).T)) < 0.6
    assert any(int(i) >= FRESH_ID_BASE for i in g.ref_ids)


def test_rigid_translation_moves_every_vertex():
    fig = make_figure(2, 5)
    base = still(2)
    moved = MotionScript(base.angles, np.array([[0.0, 0.0], [3.0, -2.0]]))
    g0, g1 = pose_frame(fig, base, 0), pose_frame(fig, moved, 1)
    m = derive_matching(g0, g1)
    i, j = m.as_arrays()
    interior = (g0.vertices[i] > 6).all(1) & (g0.vertices[i] < 121).all(1)
    assert interior.sum() > 10
    assert np.allclose(g1.vertices[j][interior] - g0.vertices[i][interior], [3.0, -2.0], atol=1e-9)


def test_frame_index_bounds():
    with pytest.raises(IndexError):
        pose_frame(make_figure(0, 2), still(2), 2)


def test_split_assignment_is_disjoint_and_exclusive():
    s = split_assignment(6, 6)
    test_f = {f for (f, m), v in s.items() if v == "test"}
    test_m = {m for (f, m), v in s.items() if v == "test"}
    train_f = {f for (f, m), v in s.items() if v == "train"}
    train_m = {m for (f, m), v in s.items() if v == "train"}
    assert test_f and not test_f & train_f and not test_m & train_m
    assert set(s.values()) == {"train", "val", "test"}
    assert set(split_assignment(1, 1).values()) == {"train"}


def test_generate_tiny_dataset(tmp_path):
    cfg = SynthConfig(n_figures=1, n_motions=1, frames_per_seq=2, canvas=64, complexity=(3, 3))
    man = generate_dataset(cfg, tmp_path / "a")
    assert len(man["sequences"]) == 1 and len(man["sequences"][0]["frames"]) == 2
    ds = Dataset.open(tmp_path / "a")
    g = ds.graph(0, 1)
    img = ds.image(0, 1)
    assert img.shape == (64, 64) and g.width == 64 and g.ref_ids is not None
    assert np.array_equal(img, load_image(tmp_path / "a" / man["sequences"][0]["frames"][1]["image"]))
    assert ds.pairs(0) == [(0, 0, 1)] and ds.pairs(1) == []
    generate_dataset(cfg, tmp_path / "b")
    assert manifest_digest(tmp_path / "a") == manifest_digest(tmp_path / "b")
    for f in man["sequences"][0]["frames"]:
        for key in ("graph", "image"):
            assert (tmp_path / "a" / f[key]).read_bytes() == (tmp_path / "b" / f[key]).read_bytes()
    assert json.loads((tmp_path / "a" / "manifest.json").read_text())["config"]["canvas"] == 64
    with pytest.raises(ValueError):
        generate_dataset(SynthConfig(n_figures=0), tmp_path / "c")


@pytest.mark.slow
def test_stats_monotone_over_gaps(tmp_path):
    generate_dataset(SynthConfig(n_figures=2, n_motions=2, frames_per_seq=16, canvas=96), tmp_path)
    st = dataset_stats(Dataset.open(tmp_path))
    gaps = sorted(st)
    assert gaps == [0, 1, 5, 9]
    for a, b in zip(gaps, gaps[1:]):
        assert st[a].occlusion_rate <= st[b].occlusion_rate and st[a].avg_shift <= st[b].avg_shift
