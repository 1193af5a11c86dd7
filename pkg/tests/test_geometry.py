import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from pseudolidar import synthetic
from pseudolidar.errors import DegeneratePolygon, FrameMismatch, NonPositiveDepth
from pseudolidar.geometry import (
    Box3D, PointCloud, box_cam_to_velo, box_corners_bev, box_velo_to_cam, cam_to_velo,
    cam_to_velo_xyz, convex_polygon_intersection_area, iou_3d, iou_bev, normalize_yaw,
    unproject, velo_to_cam, velo_to_cam_xyz,
)
from pseudolidar.oracles import mc_iou

UNIT = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)


def rotated_square(angle):
    c, s = math.cos(angle), math.sin(angle)
    return (UNIT - 0.5) @ np.array([[c, -s], [s, c]]).T + 0.5


class TestUnproject:
    def test_principal_point(self):
        calib = synthetic.simple_calibration(cx=320.0, cy=180.0)
        assert unproject(320.0, 180.0, 10.0, calib) == (0.0, 0.0, 10.0)

    def test_hand_computed(self):
        calib = synthetic.simple_calibration(fx=100, fy=100, cx=0, cy=0)
        assert unproject(50, -50, 2, calib) == pytest.approx((1.0, -1.0, 2.0))

    @pytest.mark.parametrize("depth", [0.0, -1.0])
    def test_non_positive_depth(self, depth):
        with pytest.raises(NonPositiveDepth):
            unproject(1, 1, depth, synthetic.simple_calibration())


class TestTransforms:
    def test_identity(self):
        calib = synthetic.simple_calibration()
        cloud = PointCloud([[1, 2, 3, 0.25]], "camera")
        out = cam_to_velo(cloud, calib)
        assert out.frame == "velodyne"
        assert out.points.tolist() == [[1, 2, 3, 0.25]]

    def test_translation_by_hand(self):
        calib = synthetic.simple_calibration(t=(0, 0, -0.27))
        out = cam_to_velo(PointCloud([[0, 0, 10, 0.0]], "camera"), calib)
        np.testing.assert_allclose(out.xyz[0], [0, 0, 10.27], atol=1e-6)

    def test_kitti_axes(self):
        # camera forward (z) is velodyne forward (x); camera right (x) is velodyne -y
        calib = synthetic.simple_calibration(axes=True)
        np.testing.assert_allclose(cam_to_velo_xyz(np.array([[1.0, 0, 10]]), calib), [[10, -1, 0]], atol=1e-12)

    def test_frame_checked(self):
        with pytest.raises(FrameMismatch):
            cam_to_velo(PointCloud([[0, 0, 1, 0]], "velodyne"), synthetic.simple_calibration())

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_roundtrip(self, seed):
        rng = np.random.default_rng(seed)
        calib = synthetic.random_calibration(rng)
        p = rng.uniform(-80, 80, (500, 3))
        assert np.abs(cam_to_velo_xyz(velo_to_cam_xyz(p, calib), calib) - p).max() < 1e-5
        assert np.abs(velo_to_cam_xyz(cam_to_velo_xyz(p, calib), calib) - p).max() < 1e-5

    def test_cloud_roundtrip_keeps_intensity(self):
        rng = np.random.default_rng(0)
        calib = synthetic.kitti_calibration()
        pts = np.column_stack([rng.uniform(-40, 40, (1000, 3)), rng.random(1000)])
        cloud = PointCloud(pts, "velodyne")
        back = cam_to_velo(velo_to_cam(cloud, calib), calib)
        assert np.abs(back.xyz - cloud.xyz).max() < 1e-5
        assert np.array_equal(back.intensity, cloud.intensity)


class TestBox:
    def test_yaw_normalized(self):
        assert Box3D((0, 0, 0), (1, 1, 1), -math.pi).yaw == math.pi
        assert Box3D((0, 0, 0), (1, 1, 1), 3 * math.pi / 2).yaw == pytest.approx(-math.pi / 2)

    def test_dims_positive(self):
        with pytest.raises(ValueError):
            Box3D((0, 0, 0), (1, 0, 1), 0)

    def test_box_frame_roundtrip(self):
        calib = synthetic.kitti_calibration()
        box = Box3D((2.0, 1.6, 20.0), (3.9, 1.6, 1.5), 0.4, "camera")
        back = box_velo_to_cam(box_cam_to_velo(box, calib), calib)
        np.testing.assert_allclose(back.center, box.center, atol=1e-9)
        # headings are projected onto each ground plane; the rig tilt costs ~1e-4 rad
        assert back.yaw == pytest.approx(box.yaw, abs=5e-4)
        assert iou_3d(back, box) > 0.999

    def test_axis_frame_conversion(self):
        # with pure KITTI axes: ry = -yaw_velo - pi/2, bottom = center + h/2 (y down)
        calib = synthetic.simple_calibration(axes=True)
        v = Box3D((10.0, 2.0, -1.0), (4.0, 2.0, 1.5), 0.3, "velodyne")
        c = box_velo_to_cam(v, calib)
        np.testing.assert_allclose(c.center, (-2.0, 1.75, 10.0), atol=1e-12)
        assert c.yaw == pytest.approx(normalize_yaw(-0.3 - math.pi / 2))


class TestCorners:
    def test_axis_aligned(self):
        c = box_corners_bev(Box3D((0, 5, 0), (4, 2, 1), 0.0, "camera"))
        assert sorted(map(tuple, c.round(12))) == [(-2, -1), (-2, 1), (2, -1), (2, 1)]

    def test_quarter_turn_swaps(self):
        c = box_corners_bev(Box3D((0, 0, 0), (4, 2, 1), math.pi / 2, "velodyne"))
        assert np.ptp(c[:, 0]) == pytest.approx(2) and np.ptp(c[:, 1]) == pytest.approx(4)

    def test_diagonal(self):
        c = box_corners_bev(Box3D((0, 0, 0), (2, 2, 1), math.pi / 4, "velodyne"))
        np.testing.assert_allclose(np.hypot(c[:, 0], c[:, 1]), math.sqrt(2))
        np.testing.assert_allclose(np.abs(c).min(axis=1), 0, atol=1e-12)

    def test_ccw(self):
        c = box_corners_bev(Box3D((1, 2, 3), (4, 2, 1), 1.0, "camera"))
        x, y = c[:, 0], c[:, 1]
        assert 0.5 * (np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))) == pytest.approx(8)

    def test_camera_heading_matches_kitti(self):
        # KITTI: length axis of a camera box points along (cos ry, 0, -sin ry)
        ry = 0.7
        c = box_corners_bev(Box3D((0, 0, 0), (4, 0.01, 1), ry, "camera"))
        front = c[0]
        assert (front[0], -front[1]) == pytest.approx((2 * math.cos(ry) - 0.005 * math.sin(ry),
                                                       -2 * math.sin(ry) - 0.005 * math.cos(ry)))


class TestPolygonIntersection:
    def test_identical(self):
        assert convex_polygon_intersection_area(UNIT, UNIT) == 1.0

    def test_disjoint(self):
        assert convex_polygon_intersection_area(UNIT, UNIT + 5) == 0.0

    def test_touching_edge_is_zero(self):
        assert convex_polygon_intersection_area(UNIT, UNIT + [1, 0]) == 0.0

    def test_half_shift(self):
        assert convex_polygon_intersection_area(UNIT, UNIT + [0.5, 0]) == pytest.approx(0.5, abs=1e-12)

    def test_octagon(self):
        got = convex_polygon_intersection_area(UNIT, rotated_square(math.pi / 4))
        assert abs(got - 2 * (math.sqrt(2) - 1)) < 1e-6

    def test_octagon_monte_carlo(self):
        rng = np.random.default_rng(0)
        p = rng.random((400_000, 2))
        # inside the rotated square <=> L1 distance to the center <= sqrt(2)/2
        inside = np.abs(p - 0.5).sum(axis=1) <= math.sqrt(2) / 2
        assert inside.mean() == pytest.approx(2 * (math.sqrt(2) - 1), abs=5e-3)

    def test_commutative(self):
        a, b = UNIT, rotated_square(0.3) + [0.4, 0.2]
        assert convex_polygon_intersection_area(a, b) == pytest.approx(convex_polygon_intersection_area(b, a))

    @pytest.mark.parametrize("bad", [UNIT[:2], UNIT[::-1], np.zeros((4, 2))])
    def test_degenerate(self, bad):
        with pytest.raises(DegeneratePolygon):
            convex_polygon_intersection_area(bad, UNIT)


class TestIoU:
    def test_identical(self):
        b = Box3D((1, 2, 3), (4, 2, 1.5), 0.3, "velodyne")
        assert iou_bev(b, b) == pytest.approx(1.0, abs=1e-12)
        assert iou_3d(b, b) == pytest.approx(1.0, abs=1e-12)

    def test_half_turn(self):
        a = Box3D((1, 2, 3), (4, 2, 1.5), 0.3, "velodyne")
        b = Box3D((1, 2, 3), (4, 2, 1.5), 0.3 + math.pi, "velodyne")
        assert iou_bev(a, b) == pytest.approx(1.0, abs=1e-12)

    def test_offset_along_length(self):
        a = Box3D((0, 0, 0), (4, 2, 1), 0, "velodyne")
        b = Box3D((2, 0, 0), (4, 2, 1), 0, "velodyne")
        assert iou_bev(a, b) == pytest.approx(1 / 3, abs=1e-12)

    def test_vertically_disjoint(self):
        a = Box3D((0, 0, 0), (4, 2, 1), 0, "velodyne")
        b = Box3D((0, 0, 1.0), (4, 2, 1), 0, "velodyne")
        assert iou_bev(a, b) == 1.0 and iou_3d(a, b) == 0.0

    def test_half_height_offset(self):
        a = Box3D((0, 0, 0), (4, 2, 2), 0.2, "velodyne")
        b = Box3D((0, 0, 1), (4, 2, 2), 0.2, "velodyne")
        assert abs(iou_3d(a, b) - 1 / 3) < 1e-9

    def test_half_height_offset_camera(self):
        a = Box3D((0, 1.5, 10), (4, 2, 2), 0.2, "camera")
        b = Box3D((0, 0.5, 10), (4, 2, 2), 0.2, "camera")
        assert abs(iou_3d(a, b) - 1 / 3) < 1e-9

    def test_frame_mismatch(self):
        with pytest.raises(FrameMismatch):
            iou_bev(Box3D((0, 0, 0), (1, 1, 1), 0, "camera"), Box3D((0, 0, 0), (1, 1, 1), 0, "velodyne"))

    def test_frame_invariance(self):
        calib = synthetic.kitti_calibration()
        rng = np.random.default_rng(4)
        for _ in range(20):
            a, b = synthetic.random_box_pair(rng, "velodyne")
            ca, cb = box_velo_to_cam(a, calib), box_velo_to_cam(b, calib)
            # the rig is slightly tilted, so vertical extents do not map exactly
            assert iou_bev(ca, cb) == pytest.approx(iou_bev(a, b), abs=2e-2)


boxes = st.builds(
    lambda c, l, w, h, yaw: Box3D(c, (l, w, h), yaw, "velodyne"),
    st.tuples(*[st.floats(-3, 3)] * 3), st.floats(0.3, 5), st.floats(0.3, 3),
    st.floats(0.3, 3), st.floats(-math.pi, math.pi),
)


@settings(max_examples=200, deadline=None)
@given(boxes, boxes)
def test_iou_symmetric_and_bounded(a, b):
    for fn in (iou_bev, iou_3d):
        v = fn(a, b)
        assert 0.0 <= v <= 1.0
        assert v == pytest.approx(fn(b, a), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(boxes, boxes, st.floats(-math.pi, math.pi), st.floats(-20, 20), st.floats(-20, 20))
def test_iou_rigid_motion_invariant(a, b, theta, tx, ty):
    c, s = math.cos(theta), math.sin(theta)

    def move(box):
        x, y, z = box.center
        return Box3D((c * x - s * y + tx, s * x + c * y + ty, z), box.dims, box.yaw + theta, box.frame)

    assert iou_bev(move(a), move(b)) == pytest.approx(iou_bev(a, b), abs=1e-6)
    assert iou_3d(move(a), move(b)) == pytest.approx(iou_3d(a, b), abs=1e-6)


@settings(max_examples=200, deadline=None)
@given(boxes, boxes)
def test_iou_3d_equals_bev_for_shared_vertical(a, b):
    b = Box3D((b.center[0], b.center[1], a.center[2]), (b.length, b.width, a.height), b.yaw, "velodyne")
    assert iou_3d(a, b) <= iou_bev(a, b) + 1e-9
    assert iou_3d(a, b) == pytest.approx(iou_bev(a, b), abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(boxes, boxes)
def test_iou_one_only_for_identical(a, b):
    assume(np.abs(np.subtract(a.center, b.center)).max() > 1e-3 or
           np.abs(np.subtract(a.dims, b.dims)).max() > 1e-3)
    assert iou_3d(a, b) < 1.0 - 1e-9


def test_monte_carlo_agreement_sample():
    rng = np.random.default_rng(99)
    for i in range(50):
        a, b = synthetic.random_box_pair(rng, "camera")
        m_bev, m_3d = mc_iou(a, b, seed=i)
        assert abs(m_bev - iou_bev(a, b)) < 2e-3
        assert abs(m_3d - iou_3d(a, b)) < 2e-3
