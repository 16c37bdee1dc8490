import json
import math

import numpy as np
import pytest

from radardogm.errors import ConfigError
from radardogm.simworld import (ScenarioConfig, Trajectory, Waypoint,
                                load_scenario, scenario_from_dict, simulate)


def base_scenario(**overrides):
    data = {
        "name": "test", "duration": 1.0, "dt": 0.1, "seed": 4,
        "ego": {"start": [0, 0], "velocity": [0, 0]},
        "actors": [],
        "walls": [],
        "sensor": {"max_range": 40.0, "sigma_range": 0.0, "sigma_azimuth": 0.0,
                   "sigma_range_rate": 0.0, "detections_per_actor_face": 3,
                   "detection_prob": 1.0, "clutter_rate": 0.0},
    }
    data.update(overrides)
    return data


class TestScenarioParsing:
    def test_minimal_scenario_fills_defaults(self):
        cfg = scenario_from_dict({"duration": 1.0, "dt": 0.1,
                                  "actors": [{"class_id": "car"}]})
        assert cfg.n_frames == 10
        assert cfg.sensor.max_range == 50.0
        assert cfg.actors[0].extent == (4.5, 1.8)

    def test_zero_dt_rejected(self):
        with pytest.raises(ConfigError, match="dt must be positive"):
            scenario_from_dict({"duration": 1.0, "dt": 0.0})

    def test_unknown_field_rejected(self):
        with pytest.raises(ConfigError, match="unknown field 'warp_drive'"):
            scenario_from_dict(base_scenario(warp_drive=True))
        with pytest.raises(ConfigError, match="unknown field"):
            scenario_from_dict(base_scenario(
                actors=[{"class_id": "car", "color": "red"}]))

    def test_waypoint_times_must_increase(self):
        with pytest.raises(ConfigError, match="strictly increasing"):
            scenario_from_dict(base_scenario(
                ego={"waypoints": [{"t": 0, "pos": [0, 0]},
                                   {"t": 0, "pos": [1, 0]}]}))

    def test_load_scenario_round_trip(self, tmp_path):
        path = tmp_path / "scenario.json"
        path.write_text(json.dumps(base_scenario()))
        cfg = load_scenario(path)
        assert cfg.name == "test"
        with pytest.raises(ConfigError, match="invalid JSON"):
            bad = tmp_path / "bad.json"
            bad.write_text("{nope")
            load_scenario(bad)


class TestTrajectory:
    def test_constant_velocity_sampling(self):
        tr = Trajectory.constant_velocity((1.0, 2.0), (2.0, -1.0), 10.0)
        pos, vel, yaw = tr.sample(2.0)
        assert np.allclose(pos, [5.0, 0.0])
        assert np.allclose(vel, [2.0, -1.0])
        assert yaw == pytest.approx(math.atan2(-1.0, 2.0))

    def test_waypoints_piecewise(self):
        tr = Trajectory((Waypoint(0, 0, 0), Waypoint(1, 1, 0), Waypoint(3, 1, 4)))
        pos, vel, _ = tr.sample(0.5)
        assert np.allclose(pos, [0.5, 0.0])
        pos, vel, _ = tr.sample(2.0)
        assert np.allclose(pos, [1.0, 2.0])
        assert np.allclose(vel, [0.0, 2.0])

    def test_clamped_outside_range(self):
        tr = Trajectory((Waypoint(0, 0, 0), Waypoint(1, 1, 0)))
        pos, vel, _ = tr.sample(5.0)
        assert np.allclose(pos, [1.0, 0.0])
        assert np.allclose(vel, [0.0, 0.0])


class TestSimulate:
    def test_static_wall_static_ego_zero_range_rates(self):
        cfg = scenario_from_dict(base_scenario(
            walls=[{"start": [8.0, -4.0], "end": [8.0, 4.0]}]))
        for scan, _gt in simulate(cfg):
            assert len(scan.detections) > 0
            for det in scan.detections:
                assert det.range_rate == pytest.approx(0.0, abs=1e-9)

    def test_head_on_target_range_rate(self):
        cfg = scenario_from_dict(base_scenario(
            actors=[{"class_id": "car", "extent": [4.0, 1.8],
                     "motion": {"start": [20.0, 0.0], "velocity": [-10.0, 0.0]}}]))
        scan, _ = simulate(cfg)[0]
        assert len(scan.detections) > 0
        for det in scan.detections:
            assert det.range_rate == pytest.approx(-10.0, abs=0.05)

    def test_perpendicular_crossing_reads_zero_range_rate(self):
        cfg = scenario_from_dict(base_scenario(
            actors=[{"class_id": "adult", "extent": [0.5, 0.5],
                     "motion": {"start": [10.0, 0.0], "velocity": [0.0, 1.5]}}]))
        scan, gt = simulate(cfg)[0]
        assert gt.boxes[0].speed == pytest.approx(1.5)
        assert len(scan.detections) > 0
        for det in scan.detections:
            # at closest approach the radial velocity is ~0 despite real motion
            assert abs(det.range_rate) < 0.12

    def test_range_rate_matches_analytic_radial_velocity(self):
        cfg = scenario_from_dict(base_scenario(
            ego={"start": [0, 0], "velocity": [3.0, 1.0]},
            actors=[{"class_id": "car", "extent": [4.0, 1.8],
                     "motion": {"start": [15.0, 5.0], "velocity": [-4.0, 2.0]}}]))
        for scan, _gt in simulate(cfg):
            origin, heading = scan.sensor_world()
            for det, point in zip(scan.detections,
                                  scan.detection_points_world()):
                los = (point - origin) / np.linalg.norm(point - origin)
                v_rel = np.array([-4.0, 2.0]) - np.array([3.0, 1.0])
                assert det.range_rate == pytest.approx(float(v_rel @ los),
                                                       abs=1e-9)

    def test_occlusion_blocks_far_wall(self):
        cfg = scenario_from_dict(base_scenario(
            walls=[{"start": [6.0, -5.0], "end": [6.0, 5.0]},
                   {"start": [12.0, -5.0], "end": [12.0, 5.0]}],
            sensor={"max_range": 40.0, "sigma_range": 0.0, "sigma_azimuth": 0.0,
                    "sigma_range_rate": 0.0, "detections_per_actor_face": 16,
                    "detection_prob": 1.0, "clutter_rate": 0.0}))
        for scan, _gt in simulate(cfg):
            assert len(scan.detections) > 0
            for det in scan.detections:
                assert det.range < 9.0          # nothing from the far wall

    def test_determinism(self):
        cfg = scenario_from_dict(base_scenario(
            actors=[{"class_id": "bicycle", "extent": [1.6, 0.6],
                     "motion": {"start": [9.0, -3.0], "velocity": [0.0, 2.0]}}],
            sensor={"max_range": 40.0, "sigma_range": 0.05, "sigma_azimuth": 0.004,
                    "sigma_range_rate": 0.05, "detections_per_actor_face": 3,
                    "detection_prob": 0.8, "clutter_rate": 1.5}))
        a = simulate(cfg)
        b = simulate(cfg)
        assert len(a) == len(b)
        for (sa, ga), (sb, gb) in zip(a, b):
            assert sa.detections == sb.detections
            assert ga.boxes == gb.boxes

    def test_clutter_rate(self):
        cfg = scenario_from_dict(base_scenario(
            duration=30.0,
            sensor={"max_range": 40.0, "sigma_range": 0.0, "sigma_azimuth": 0.0,
                    "sigma_range_rate": 0.0, "detections_per_actor_face": 3,
                    "detection_prob": 1.0, "clutter_rate": 3.0}))
        counts = [len(scan.detections) for scan, _gt in simulate(cfg)]
        assert np.mean(counts) == pytest.approx(3.0, abs=0.6)
        cl_rr = [d.range_rate for scan, _ in simulate(cfg) for d in scan.detections]
        assert np.min(cl_rr) >= -2.0 and np.max(cl_rr) <= 2.0

    def test_detection_prob_thinning(self):
        cfg = scenario_from_dict(base_scenario(
            duration=20.0,
            walls=[{"start": [8.0, -4.0], "end": [8.0, 4.0]}],
            sensor={"max_range": 40.0, "sigma_range": 0.0, "sigma_azimuth": 0.0,
                    "sigma_range_rate": 0.0, "detections_per_actor_face": 10,
                    "detection_prob": 0.5, "clutter_rate": 0.0}))
        counts = [len(scan.detections) for scan, _gt in simulate(cfg)]
        full = scenario_from_dict(base_scenario(
            duration=20.0,
            walls=[{"start": [8.0, -4.0], "end": [8.0, 4.0]}],
            sensor={"max_range": 40.0, "sigma_range": 0.0, "sigma_azimuth": 0.0,
                    "sigma_range_rate": 0.0, "detections_per_actor_face": 10,
                    "detection_prob": 1.0, "clutter_rate": 0.0}))
        full_counts = [len(scan.detections) for scan, _gt in simulate(full)]
        assert np.mean(counts) == pytest.approx(np.mean(full_counts) * 0.5, rel=0.2)
