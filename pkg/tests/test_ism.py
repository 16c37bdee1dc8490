import math

import numpy as np
import pytest

from radardogm.grid import D, F, S, U, GridSpec, Pose
from radardogm.ism import (IsmParams, RadarDetection, RadarScan,
                           build_measurement_grid, compensated_range_rate)


def make_scan(detections, ego_pose=Pose(0, 0, 0), ego_velocity=(0.0, 0.0),
              sensor_pose=Pose(0, 0, 0), t=0.0):
    return RadarScan(timestamp=t, sensor_pose=sensor_pose, ego_pose=ego_pose,
                     ego_velocity=ego_velocity, detections=tuple(detections))


def scalar_expected_cell(cell_xy, detection_xy, rr_comp, params, spec,
                         on_ray: bool, near_center: bool):
    """Straight-line re-derivation of the evidence formulas for one detection."""
    r = math.hypot(*detection_xy)
    los = (detection_xy[0] / r, detection_xy[1] / r)
    dx = cell_xy[0] - detection_xy[0]
    dy = cell_xy[1] - detection_xy[1]
    d_par = dx * los[0] + dy * los[1]
    d_lat = -dx * los[1] + dy * los[0]
    sigma_lat = max(params.sigma_az * r, spec.resolution)
    maha = (d_par / params.sigma_r) ** 2 + (d_lat / sigma_lat) ** 2
    occ = params.m_occ * math.exp(-0.5 * maha) if maha <= params.kernel_cutoff ** 2 \
        else 0.0
    free = params.m_free if (on_ray and not near_center) else 0.0
    s_dyn = 1.0 / (1.0 + math.exp(-(abs(rr_comp) - params.v_sep) / params.w_sep))
    resid = (1 - free) * (1 - occ)
    return np.array([
        0.25 * resid,
        0.25 * resid + free * (1 - occ),
        0.25 * resid + occ * (1 - s_dyn),
        0.25 * resid + occ * s_dyn,
    ])


class TestEmptyScan:
    def test_all_uniform_with_infinite_distance(self, small_spec):
        mg = build_measurement_grid(make_scan([]), small_spec)
        assert np.allclose(mg.cells, 0.25, atol=1e-12)
        assert np.all(np.isinf(mg.nearest_detection_distance))
        assert mg.skipped_detections == 0


class TestSingleDetection:
    # 100 x 100 cells at 0.2 m: world spans [-10, 10)
    spec = GridSpec.centered(100, 100, 0.2)

    def detection_at(self, x, rr=0.0):
        return RadarDetection(range=x, azimuth=0.0, range_rate=rr)

    def test_static_detection_cell(self):
        # detection placed exactly at a cell center: x = 5.1 m
        scan = make_scan([self.detection_at(5.1)])
        mg = build_measurement_grid(scan, self.spec)
        cx, cy = self.spec.world_to_cell(np.array([5.1, 0.0]), scan.ego_pose)
        belief = mg.cells[cy, cx]
        assert belief[S] > belief[D]
        assert belief[S] + belief[D] > 0.5
        expected = scalar_expected_cell((5.1, 0.1), (5.1, 0.0), 0.0, IsmParams(),
                                        self.spec, on_ray=False, near_center=True)
        assert np.allclose(belief, expected, atol=1e-9)

    def test_ray_cells_become_free(self):
        scan = make_scan([self.detection_at(9.0)])
        mg = build_measurement_grid(scan, self.spec)
        for x in np.arange(1.0, 7.2, 0.2):
            cx, cy = self.spec.world_to_cell(np.array([x, 0.0]), scan.ego_pose)
            assert mg.cells[cy, cx, F] > 0.5, f"ray cell at {x} not free"

    def test_ray_cell_value_matches_scalar_oracle(self):
        scan = make_scan([self.detection_at(9.0)])
        mg = build_measurement_grid(scan, self.spec)
        cx, cy = self.spec.world_to_cell(np.array([3.0, 0.0]), scan.ego_pose)
        cell_center = self.spec.cell_center_world(cx, cy, scan.ego_pose)
        expected = scalar_expected_cell(tuple(cell_center), (9.0, 0.0), 0.0,
                                        IsmParams(), self.spec,
                                        on_ray=True, near_center=False)
        assert np.allclose(mg.cells[cy, cx], expected, atol=1e-9)

    def test_moving_detection_is_dynamic(self):
        scan = make_scan([self.detection_at(5.1, rr=5.0)])
        mg = build_measurement_grid(scan, self.spec)
        cx, cy = self.spec.world_to_cell(np.array([5.1, 0.0]), scan.ego_pose)
        assert mg.cells[cy, cx, D] > mg.cells[cy, cx, S]

    def test_slow_detection_is_static(self):
        scan = make_scan([self.detection_at(5.1, rr=0.2)])
        mg = build_measurement_grid(scan, self.spec)
        cx, cy = self.spec.world_to_cell(np.array([5.1, 0.0]), scan.ego_pose)
        assert mg.cells[cy, cx, S] > mg.cells[cy, cx, D]

    def test_distance_field_zero_at_detection(self):
        scan = make_scan([self.detection_at(5.1)])
        mg = build_measurement_grid(scan, self.spec)
        cx, cy = self.spec.world_to_cell(np.array([5.1, 0.0]), scan.ego_pose)
        assert mg.nearest_detection_distance[cy, cx] == 0.0
        assert mg.nearest_detection_distance[cy, cx + 5] == pytest.approx(1.0)


class TestEgoCompensation:
    def test_static_world_point_reads_zero(self):
        # ego drives +x at 8 m/s toward a static point: raw rr = -8
        det = RadarDetection(range=10.0, azimuth=0.0, range_rate=-8.0)
        scan = make_scan([det], ego_velocity=(8.0, 0.0))
        assert compensated_range_rate(det, scan) == pytest.approx(0.0, abs=1e-12)

    def test_compensation_respects_sensor_yaw(self):
        # sensor looks +y; ego moves +x: no radial ego component
        det = RadarDetection(range=10.0, azimuth=0.0, range_rate=1.5)
        scan = make_scan([det], ego_pose=Pose(0, 0, math.pi / 2),
                         ego_velocity=(8.0, 0.0))
        assert compensated_range_rate(det, scan) == pytest.approx(1.5, abs=1e-12)

    def test_ego_motion_flips_static_dynamic_split(self, small_spec):
        # same raw range rate: static for a driving ego, dynamic for a parked one
        det = RadarDetection(range=3.1, azimuth=0.0, range_rate=-6.0)
        moving = build_measurement_grid(make_scan([det], ego_velocity=(6.0, 0.0)),
                                        small_spec)
        parked = build_measurement_grid(make_scan([det]), small_spec)
        cx, cy = small_spec.world_to_cell(np.array([3.1, 0.0]), Pose(0, 0))
        assert moving.cells[cy, cx, S] > moving.cells[cy, cx, D]
        assert parked.cells[cy, cx, D] > parked.cells[cy, cx, S]


class TestEvidencePooling:
    def test_detection_order_does_not_matter(self, small_spec):
        rng = np.random.default_rng(11)
        dets = [RadarDetection(range=rng.uniform(1, 3.5),
                               azimuth=rng.uniform(-1.2, 1.2),
                               range_rate=rng.uniform(-5, 5),
                               snr_weight=rng.uniform(0.3, 1.0))
                for _ in range(12)]
        fwd = build_measurement_grid(make_scan(dets), small_spec)
        perm = [dets[i] for i in rng.permutation(len(dets))]
        rev = build_measurement_grid(make_scan(perm), small_spec)
        assert np.allclose(fwd.cells, rev.cells, atol=1e-12)
        assert np.array_equal(fwd.nearest_detection_distance,
                              rev.nearest_detection_distance)

    def test_adding_detection_never_reduces_own_occupancy(self, small_spec):
        rng = np.random.default_rng(13)
        base = [RadarDetection(range=rng.uniform(1, 3.5),
                               azimuth=rng.uniform(-1.2, 1.2),
                               range_rate=rng.uniform(-5, 5))
                for _ in range(6)]
        extra = RadarDetection(range=2.5, azimuth=0.3, range_rate=1.0)
        before = build_measurement_grid(make_scan(base), small_spec)
        after = build_measurement_grid(make_scan(base + [extra]), small_spec)
        scan = make_scan([extra])
        cx, cy = small_spec.world_to_cell(scan.detection_points_world()[0],
                                          Pose(0, 0))
        occ_before = before.cells[cy, cx, S] + before.cells[cy, cx, D]
        occ_after = after.cells[cy, cx, S] + after.cells[cy, cx, D]
        assert occ_after >= occ_before - 1e-12

    def test_occupied_wins_next_to_detection_center(self, small_spec):
        # a ray to a far detection crosses a near detection's center cell
        near = RadarDetection(range=2.0, azimuth=0.0, range_rate=0.0)
        far = RadarDetection(range=3.8, azimuth=0.0, range_rate=0.0)
        mg = build_measurement_grid(make_scan([near, far]), small_spec)
        cx, cy = small_spec.world_to_cell(np.array([2.0, 0.0]), Pose(0, 0))
        belief = mg.cells[cy, cx]
        assert belief[S] + belief[D] > 0.5
        assert belief[S] > belief[F]


class TestOutOfGrid:
    def test_outside_detection_skipped_and_tallied(self, small_spec):
        inside = RadarDetection(range=2.0, azimuth=0.0, range_rate=0.0)
        outside = RadarDetection(range=30.0, azimuth=0.0, range_rate=0.0)
        mg = build_measurement_grid(make_scan([inside, outside]), small_spec)
        assert mg.skipped_detections == 1
        assert np.isfinite(mg.nearest_detection_distance).any()


class TestParamValidation:
    def test_bad_params_rejected(self):
        with pytest.raises(ValueError):
            IsmParams(sigma_r=0.0)
        with pytest.raises(ValueError):
            IsmParams(m_free=1.5)
        with pytest.raises(ValueError):
            RadarDetection(range=-1.0, azimuth=0.0, range_rate=0.0)
        with pytest.raises(ValueError):
            RadarDetection(range=1.0, azimuth=0.0, range_rate=0.0, snr_weight=0.0)
