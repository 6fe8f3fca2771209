import math

import numpy as np
import pytest

from hvtrack.dataset import (
    CATEGORIES,
    EmptySearchArea,
    Frame,
    IngestionError,
    Tracklet,
    build_hv,
    crop_search_area,
    enlargement_offset,
    foreground_mask,
    load_cache,
    load_kitti_tracklets,
    make_search_sample,
    motion_stats,
    read_calib,
    sample_points,
    write_kitti_index,
    write_synth_index,
)
from hvtrack.geometry import Box7, rigid_transform_box, rigid_transform_points
from helpers import inside_box_oracle


def make_tracklet(n, step=(0.0, 0.0), category="Car", name="t"):
    frames = [Frame(i, Box7(10 + i * step[0], i * step[1], 0, 1.6, 3.9, 1.5, 0.0), points=np.zeros((1, 3)))
              for i in range(n)]
    return Tracklet(frames, category, name=name)


# --------------------------------------------------------------------------- KITTI fixture
# Tr_velo_cam maps LiDAR (x fwd, y left, z up) to camera (x right, y down, z fwd) and shifts by t.
TR = np.array([[0, -1, 0, 0.1], [0, 0, -1, -0.2], [1, 0, 0, 0.3]], dtype=float)
LABELS = [
    # frame, track, type, h, w, l, x, y, z, ry
    (0, 1, "Car", 1.5, 1.6, 3.9, 2.0, 1.7, 10.0, 0.3),
    (1, 1, "Car", 1.5, 1.6, 3.9, 2.2, 1.7, 11.0, 0.35),
    (2, 1, "Car", 1.5, 1.6, 3.9, 2.4, 1.7, 12.0, 0.4),
    (0, 2, "Pedestrian", 1.8, 0.6, 0.8, -3.0, 1.6, 8.0, -1.0),
]


def _label_line(frame, tid, typ, h, w, l, x, y, z, ry):
    return f"{frame} {tid} {typ} 0 0 0.0 0 0 50 50 {h} {w} {l} {x} {y} {z} {ry}"


@pytest.fixture
def kitti_root(tmp_path, request):
    spelling = getattr(request, "param", "tracking")
    root = tmp_path / "kitti" / "training"
    for d in ("label_02", "calib", "velodyne/0000", "velodyne/0019"):
        (root / d).mkdir(parents=True)
    lines = [_label_line(*r) for r in LABELS] + ["1 -1 DontCare -1 -1 -10 0 0 10 10 -1 -1 -1 -1000 -1000 -1000 -10"]
    (root / "label_02" / "0000.txt").write_text("\n".join(lines) + "\n")
    (root / "label_02" / "0019.txt").write_text("")
    r_key, t_key = ("R_rect", "Tr_velo_cam") if spelling == "tracking" else ("R0_rect:", "Tr_velo_to_cam:")
    calib = [
        "P0: " + " ".join(["0"] * 12),
        f"{r_key} " + " ".join(str(v) for v in np.eye(3).ravel()),
        f"{t_key} " + " ".join(str(v) for v in TR.ravel()),
    ]
    for seq in ("0000", "0019"):
        (root / "calib" / f"{seq}.txt").write_text("\n".join(calib) + "\n")
    rng = np.random.default_rng(0)
    for f in range(3):
        rng.normal(size=(50, 4)).astype("<f4").tofile(root / "velodyne" / "0000" / f"{f:06d}.bin")
    return tmp_path / "kitti"


def _hand_lidar_box(h, w, l, x, y, z, ry):
    # camera bottom-center -> geometric center, then invert Tr by hand: p_v = R^T (p_c - t)
    pc = np.array([x, y - h / 2, z]) - np.array([0.1, -0.2, 0.3])
    pv = np.array([pc[2], -pc[0], -pc[1]])
    return pv, -ry - math.pi / 2


@pytest.mark.parametrize("kitti_root", ["tracking", "object"], indirect=True)
def test_kitti_fixture_matches_hand_transform(kitti_root):
    cars = load_kitti_tracklets(kitti_root, "Car", "train")
    assert len(cars) == 1 and len(cars[0]) == 3
    assert cars[0].frame_ids == [0, 1, 2]
    for fr, row in zip(cars[0].frames, LABELS[:3]):
        center, yaw = _hand_lidar_box(*row[3:])
        np.testing.assert_allclose(fr.gt_box.center, center, atol=1e-9)
        assert math.cos(fr.gt_box.yaw - yaw) == pytest.approx(1.0)
        assert fr.gt_box.size == (1.6, 3.9, 1.5)
        assert fr.cloud().shape == (50, 3)
    peds = load_kitti_tracklets(kitti_root, "Pedestrian", "train")
    assert len(peds) == 1 and peds[0].category == "Pedestrian"


def test_kitti_splits_and_empty_labels(kitti_root):
    assert load_kitti_tracklets(kitti_root, "Car", "test") == []
    assert load_kitti_tracklets(kitti_root, "Car", "val") == []
    with pytest.raises(ValueError):
        load_kitti_tracklets(kitti_root, "Truck", "train")
    with pytest.raises(ValueError):
        load_kitti_tracklets(kitti_root, "Car", "holdout")


def test_kitti_missing_files_name_the_path(kitti_root):
    (kitti_root / "training" / "velodyne" / "0000" / "000001.bin").unlink()
    with pytest.raises(IngestionError, match="000001.bin"):
        load_kitti_tracklets(kitti_root, "Car", "train")


def test_kitti_corrupt_label(kitti_root):
    (kitti_root / "training" / "label_02" / "0000.txt").write_text("0 1 Car 0 0\n")
    with pytest.raises(IngestionError, match="0000.txt:1"):
        load_kitti_tracklets(kitti_root, "Car", "train")


def test_read_calib_missing_key(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("P0: 1 2 3\n")
    with pytest.raises(IngestionError, match="R_rect"):
        read_calib(p)


def test_kitti_index_round_trip(kitti_root, tmp_path):
    hv = build_hv(load_kitti_tracklets(kitti_root, "Car", "train"), 2)
    write_kitti_index(tmp_path / "cache", hv, kitti_root, "Car", "train", 2)
    header, loaded = load_cache(tmp_path / "cache")
    assert header["interval"] == 2
    assert [t.frame_ids for t in loaded] == [[0, 2], [1]]
    np.testing.assert_array_equal(loaded[0].frames[1].cloud(), hv[0].frames[1].cloud())


# --------------------------------------------------------------------------- HV builder
def test_build_hv_hand_traces():
    t7 = make_tracklet(7)
    assert [x.frame_ids for x in build_hv([t7], 3)] == [[0, 3, 6], [1, 4], [2, 5]]
    assert [x.frame_ids for x in build_hv([make_tracklet(2)], 10)] == [[0], [1]]
    same = build_hv([t7], 1)
    assert len(same) == 1 and same[0].frames == t7.frames and same[0].name == t7.name
    with pytest.raises(ValueError):
        build_hv([t7], 0)


@pytest.mark.parametrize("interval", [1, 2, 3, 5, 10])
def test_build_hv_conserves_frames(interval):
    src = [make_tracklet(n, name=f"t{n}") for n in (1, 2, 9, 37, 100)]
    out = build_hv(src, interval)
    assert sum(len(t) for t in out) == sum(len(t) for t in src)
    for t in out:
        assert all(b - a == interval for a, b in zip(t.frame_ids, t.frame_ids[1:]))


def test_tracklet_rejects_unordered_frames():
    f = [Frame(1, Box7(0, 0, 0, 1, 1, 1), points=np.zeros((0, 3))), Frame(0, Box7(0, 0, 0, 1, 1, 1), points=np.zeros((0, 3)))]
    with pytest.raises(ValueError):
        Tracklet(f, "Car")
    with pytest.raises(ValueError):
        Tracklet(f[:1], "Truck")


# --------------------------------------------------------------------------- offsets / crop / sample
def test_enlargement_offset_examples():
    assert enlargement_offset("Car", 5) == 4
    assert enlargement_offset("Pedestrian", 10) == 3
    assert all(enlargement_offset(c, 1) == 2 for c in CATEGORIES)
    assert enlargement_offset("Car", 4) == pytest.approx(3.5)
    with pytest.raises(ValueError):
        enlargement_offset("Truck", 1)


def test_crop_examples():
    ref = Box7(0, 0, 0, 1, 1, 1)
    assert crop_search_area([[50, 50, 0]], ref, 2).shape == (0, 3)
    out = crop_search_area([[1.4, 0, 0], [1.6, 0, 0], [0, 0, 0]], ref, 2)
    np.testing.assert_allclose(out, [[1.4, 0, 0], [0, 0, 0]])
    moved = Box7(3, -2, 1, 1, 2, 1, 0.8)
    np.testing.assert_allclose(crop_search_area([[3, -2, 1]], moved, 1), [[0, 0, 0]], atol=1e-12)
    # strict vertical extent
    assert len(crop_search_area([[0, 0, 0.9]], ref, 2, vertical_offset=0)) == 0
    assert len(crop_search_area([[0, 0, 0.9]], ref, 2)) == 1


def test_crop_rigid_invariance():
    rng = np.random.default_rng(3)
    cloud = rng.uniform(-6, 6, (3000, 3))
    ref = Box7(0.5, -0.3, 0.1, 1.6, 3.9, 1.5, 0.4)
    a = crop_search_area(cloud, ref, 2)
    b = crop_search_area(rigid_transform_points(cloud, 1.3, (4, -7, 0.5)), rigid_transform_box(ref, 1.3, (4, -7, 0.5)), 2)
    np.testing.assert_allclose(np.sort(a, axis=0), np.sort(b, axis=0), atol=1e-9)


def test_sample_points_contract():
    rng = np.random.default_rng(0)
    big = rng.normal(size=(2000, 3))
    s = sample_points(big, 1024, 7)
    assert s.shape == (1024, 3) and len(np.unique(s, axis=0)) == 1024
    small = rng.normal(size=(10, 3))
    s = sample_points(small, 1024, 7)
    assert s.shape == (1024, 3)
    assert {tuple(r) for r in s} <= {tuple(r) for r in small}
    np.testing.assert_array_equal(sample_points(big, 100, 5), sample_points(big, 100, 5))
    with pytest.raises(EmptySearchArea):
        sample_points(np.zeros((0, 3)), 10, 0)


def test_foreground_mask_examples_and_oracle():
    b = Box7(0, 0, 0, 1, 1, 1, math.pi / 4)
    np.testing.assert_array_equal(foreground_mask([[0, 0, 0], [2 * math.sqrt(3), 0, 0], [0.6, 0, 0]], b), [1, 0, 1])
    rng = np.random.default_rng(11)
    for _ in range(5):
        box = Box7(*rng.uniform(-3, 3, 3), *rng.uniform(0.5, 4, 3), rng.uniform(-4, 4))
        pts = box.center + rng.uniform(-3, 3, (1000, 3))
        np.testing.assert_array_equal(foreground_mask(pts, box).astype(bool), inside_box_oracle(pts, box))


def test_make_search_sample_is_canonical():
    ref = Box7(10, 5, 0, 1.6, 3.9, 1.5, 0.5)
    gt = ref.replace(cx=10.5)
    rng = np.random.default_rng(0)
    cloud = gt.center + rng.uniform(-1, 1, (500, 3)) * [2, 1, 0.7]
    s = make_search_sample(cloud, ref, gt, 2.0, 64, 0)
    assert s.points.shape == (64, 3)
    assert s.gt_box_local.yaw == pytest.approx(0, abs=1e-12)
    assert s.gt_box_local.cx == pytest.approx(0.5 * math.cos(0.5))
    assert s.fg_mask.sum() > 0


# --------------------------------------------------------------------------- motion stats
def test_motion_stats_examples():
    static = motion_stats([make_tracklet(20)], 1, (0.5, 1.0))
    assert static[0.5] == 0 and static["mean"] == 0
    moving = motion_stats([make_tracklet(50, step=(1.0, 0.0))], 5, (0.25, 0.5, 0.95))
    assert all(moving[q] == pytest.approx(5) for q in (0.25, 0.5, 0.95))
    # displacements {1, 2, 3, 4}: linear interpolation puts q=0.75 at position 2.25 -> 3.25
    xs = np.cumsum([0, 1, 2, 3, 4]).astype(float)
    frames = [Frame(i, Box7(x, 0, 0, 1, 1, 1), points=np.zeros((0, 3))) for i, x in enumerate(xs)]
    st = motion_stats([Tracklet(frames, "Car")], 1, (0.5, 0.75))
    assert st[0.5] == pytest.approx(2.5)
    assert st[0.75] == pytest.approx(3.25)
    assert st["mean"] == pytest.approx(2.5)
    with pytest.raises(ValueError):
        motion_stats([make_tracklet(1)], 1)


def test_synth_index_round_trip(tmp_path):
    from hvtrack.synth import SynthConfig, generate_dataset

    data = generate_dataset(SynthConfig(n_frames=5, seed=3), 2)
    write_synth_index(tmp_path, data)
    header, loaded = load_cache(tmp_path)
    assert header["source"] == "synth"
    for a, b in zip(data, loaded):
        assert a.boxes == b.boxes and a.category == b.category
        for fa, fb in zip(a.frames, b.frames):
            np.testing.assert_array_equal(fa.cloud(), fb.cloud())
