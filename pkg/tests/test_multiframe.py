import math

import numpy as np
import pytest

from oracles import yaw_matrix
from sfcpoint.cloud import WAYMO_BOX, PointCloud
from sfcpoint.errors import EmptyCloud, FrameMismatch, SequenceOrder, SingularPose
from sfcpoint.multiframe import Frame, align, assemble, check_pose, retention_report


def pose(rotation=None, translation=(0.0, 0.0, 0.0)):
    m = np.eye(4)
    if rotation is not None:
        m[:3, :3] = rotation
    m[:3, 3] = translation
    return m


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def pdist(coords):
    i, j = np.triu_indices(len(coords), 1)
    return np.linalg.norm(coords[i] - coords[j], axis=1)


def labelled(coords, label=0):
    coords = np.asarray(coords, dtype=float)
    return PointCloud(coords, np.ones((len(coords), 1)), np.full(len(coords), label))


class TestPose:
    def test_rejects_scaled_rotation(self):
        with pytest.raises(SingularPose):
            check_pose(pose(np.eye(3) * 1.01))

    def test_rejects_reflection(self):
        with pytest.raises(SingularPose):
            check_pose(pose(np.diag([1.0, 1.0, -1.0])))

    def test_rejects_bad_last_row(self):
        m = np.eye(4)
        m[3, 0] = 1.0
        with pytest.raises(SingularPose):
            check_pose(m)

    def test_accepts_float32_rotation(self):
        r = random_rotation(np.random.default_rng(0)).astype(np.float32)
        check_pose(pose(r))


class TestAlign:
    def test_identity_bitwise(self):
        coords = np.array([[1.25, -3.5, 0.125], [100.0, 2.0, -4.0]])
        out = align(Frame(labelled(coords)), np.eye(4))
        assert np.array_equal(out.coords, coords)

    def test_pure_translation(self):
        f = Frame(labelled([[1.0, 0.0, 0.0]]), pose(translation=(0, 0, 1)))
        assert align(f, np.eye(4)).coords.tolist() == [[1.0, 0.0, 1.0]]

    def test_yaw_against_hand_matrix(self):
        r = yaw_matrix(math.pi / 2)
        pts = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 5.0]]
        f = Frame(labelled(pts), pose(r, (1.0, 2.0, 0.0)))
        expected = [[1.0, 3.0, 0.0], [0.0, 2.0, 0.0], [0.0, 3.0, 5.0]]
        assert np.abs(align(f, np.eye(4)).coords - expected).max() <= 1e-12
        shifted = [[x, y, z - 1.0] for x, y, z in expected]
        out = align(f, pose(translation=(0, 0, 1)))
        assert np.abs(out.coords - shifted).max() <= 1e-12

    def test_self_alignment(self):
        rng = np.random.default_rng(1)
        p = pose(random_rotation(rng), rng.normal(size=3) * 20)
        coords = rng.normal(size=(50, 3)) * 30
        f = Frame(labelled(coords), p)
        assert np.array_equal(align(f, p).coords, coords)
        assert np.abs(align(f, p.copy() + 0.0).coords - coords).max() <= 1e-12

    def test_preserves_distances(self):
        rng = np.random.default_rng(2)
        coords = rng.normal(size=(40, 3)) * 50
        f = Frame(labelled(coords), pose(random_rotation(rng), rng.normal(size=3) * 100))
        target = pose(random_rotation(rng), rng.normal(size=3) * 100)
        before = pdist(coords)
        after = pdist(align(f, target).coords)
        assert np.abs(after - before).max() / before.max() <= 1e-9

    def test_carries_features_and_labels(self):
        f = Frame(labelled([[1.0, 2, 3]], label=5), pose(translation=(1, 1, 1)))
        out = align(f, np.eye(4))
        assert out.labels.tolist() == [5]
        assert out.features.tolist() == [[1.0]]


def make_frames():
    """Current: 100 near points. Past 1 (10 m ahead): 100 near + 20 at local x=70,
    i.e. x=80 after alignment. Past 2 (5 m behind): 100 near + 30 at local x=-72,
    i.e. x=-77 after alignment."""
    near = lambda n, k: np.column_stack([np.linspace(-20, 20, n), np.full(n, k), np.zeros(n)])
    far = lambda n, x: np.column_stack([np.full(n, x), np.linspace(-5, 5, n), np.zeros(n)])
    current = Frame(labelled(near(100, 0.0), 0), np.eye(4), timestamp=300)
    past1 = Frame(labelled(np.vstack([near(100, 1.0), far(20, 70.0)]), 1),
                  pose(translation=(10, 0, 0)), timestamp=200)
    past2 = Frame(labelled(np.vstack([near(100, 2.0), far(30, -72.0)]), 2),
                  pose(translation=(-5, 0, 0)), timestamp=100)
    return current, [past1, past2]


class TestAssemble:
    def test_counts_without_clip(self):
        current, past = make_frames()
        out = assemble(current, past)
        assert len(out) == 100 + 120 + 130
        assert np.bincount(out.frame_index).tolist() == [100, 120, 130]
        assert out.labels.tolist() == [0] * 100 + [1] * 120 + [2] * 130

    def test_clip_drops_distant_points(self):
        current, past = make_frames()
        out = assemble(current, past, WAYMO_BOX)
        assert np.bincount(out.frame_index).tolist() == [100, 100, 100]
        assert np.abs(out.coords[:, 0]).max() < 75.2

    def test_order_current_then_most_recent(self):
        current, past = make_frames()
        out = assemble(current, past)
        assert np.array_equal(out.coords[:100], current.cloud.coords)
        assert out.coords[100, 0] == pytest.approx(-20 + 10)
        assert out.coords[220, 0] == pytest.approx(-20 - 5)

    def test_no_past(self):
        current, _ = make_frames()
        out = assemble(current, [])
        assert np.array_equal(out.coords, current.cloud.coords)
        assert not out.frame_index.any()

    def test_deterministic(self):
        current, past = make_frames()
        a, b = assemble(current, past), assemble(current, past)
        assert np.array_equal(a.coords, b.coords) and np.array_equal(a.labels, b.labels)

    def test_rejects_out_of_order_timestamps(self):
        current, (p1, p2) = make_frames()
        with pytest.raises(SequenceOrder):
            assemble(current, [p2, p1])

    def test_rejects_mixed_labels(self):
        current, (p1, _) = make_frames()
        bare = Frame(PointCloud(np.zeros((2, 3)), np.ones((2, 1))), timestamp=1)
        with pytest.raises(FrameMismatch):
            assemble(current, [p1, bare])


class TestRetention:
    def test_all_inside(self):
        assert retention_report(labelled(np.zeros((5, 3))), WAYMO_BOX).retained == 1.0

    def test_none_inside(self):
        assert retention_report(labelled(np.full((5, 3), 100.0)), WAYMO_BOX).retained == 0.0

    def test_seven_of_ten(self):
        coords = np.zeros((10, 3))
        coords[[1, 4, 8], 0] = 90.0
        assert retention_report(labelled(coords), WAYMO_BOX).retained == 0.7

    def test_per_frame(self):
        current, past = make_frames()
        report = retention_report(assemble(current, past), WAYMO_BOX)
        assert report.per_frame == {0: 1.0, 1: 100 / 120, 2: 100 / 130}
        assert report.kept == 300 and report.total == 350

    def test_empty(self):
        with pytest.raises(EmptyCloud):
            retention_report(PointCloud(np.zeros((0, 3))), WAYMO_BOX)
