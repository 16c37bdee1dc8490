import numpy as np
import pytest

from radardogm.corrector import CorrectionGrid
from radardogm.errors import CodecError
from radardogm.grid import DogmFrame, GridSpec, Pose
from radardogm.gridio import (frame_filename, read_correction, read_frame,
                              write_correction, write_frame, write_particles)
from radardogm.particles import ParticleSet

from conftest import random_beliefs


class TestFrameCodec:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        spec = GridSpec.centered(24, 16, 0.2, (3.0, -2.0))
        frame = DogmFrame(spec=spec, cells=random_beliefs(rng, (16, 24)),
                          ego_pose=Pose(3.0, -2.0, 0.7), timestamp=4.25)
        path = tmp_path / frame_filename(12)
        write_frame(frame, path)
        back = read_frame(path)
        assert back.spec == spec
        assert back.ego_pose == frame.ego_pose
        assert back.timestamp == frame.timestamp
        assert np.allclose(back.cells, frame.cells, atol=1e-6)
        assert np.abs(back.cells.sum(-1) - 1.0).max() < 1e-9

    def test_header_layout(self, tmp_path):
        spec = GridSpec.centered(8, 4, 0.25)
        frame = DogmFrame.initial(spec, Pose(0, 0))
        path = tmp_path / "f.dogm"
        write_frame(frame, path)
        raw = path.read_bytes()
        assert raw[:4] == b"DOGM"
        assert int.from_bytes(raw[4:6], "little") == 1
        assert int.from_bytes(raw[6:10], "little") == 8
        assert int.from_bytes(raw[10:14], "little") == 4
        assert len(raw) == 50 + 8 * 4 * 4 * 4

    def test_truncated_file_names_offset(self, tmp_path):
        spec = GridSpec.centered(8, 4, 0.25)
        frame = DogmFrame.initial(spec, Pose(0, 0))
        path = tmp_path / "f.dogm"
        write_frame(frame, path)
        path.write_bytes(path.read_bytes()[:-7])
        with pytest.raises(CodecError, match="byte"):
            read_frame(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "f.dogm"
        path.write_bytes(b"NOPE" + b"\x00" * 100)
        with pytest.raises(CodecError, match="magic"):
            read_frame(path)


class TestCorrectionCodec:
    def test_round_trip(self, tmp_path, small_spec):
        rng = np.random.default_rng(2)
        corr = CorrectionGrid(
            spec=small_spec,
            states=rng.integers(0, 4, (40, 40)).astype(np.uint8),
            confidence=rng.random((40, 40)).astype(np.float32).astype(float))
        path = tmp_path / frame_filename(3, "dogc")
        write_correction(corr, path)
        back = read_correction(path, expected_spec=small_spec)
        assert np.array_equal(back.states, corr.states)
        assert np.allclose(back.confidence, corr.confidence, atol=1e-7)

    def test_cell_layout_little_endian(self, tmp_path):
        spec = GridSpec.centered(2, 1, 0.2)
        corr = CorrectionGrid(spec=spec,
                              states=np.array([[3, 1]], dtype=np.uint8),
                              confidence=np.array([[1.0, 0.5]]))
        path = tmp_path / "c.dogc"
        write_correction(corr, path)
        raw = path.read_bytes()
        assert raw[:4] == b"DOGC"
        assert len(raw) == 14 + 2 * 5
        assert raw[14] == 3
        assert np.frombuffer(raw, "<f4", count=1, offset=15)[0] == 1.0
        assert raw[19] == 1

    def test_truncated(self, tmp_path, small_spec):
        corr = CorrectionGrid(spec=small_spec,
                              states=np.zeros((40, 40), np.uint8),
                              confidence=np.ones((40, 40)))
        path = tmp_path / "c.dogc"
        write_correction(corr, path)
        path.write_bytes(path.read_bytes()[:-1])
        with pytest.raises(CodecError, match="byte"):
            read_correction(path)

    def test_state_out_of_range(self, tmp_path):
        spec = GridSpec.centered(1, 1, 0.2)
        corr = CorrectionGrid(spec=spec, states=np.array([[0]], np.uint8),
                              confidence=np.array([[1.0]]))
        path = tmp_path / "c.dogc"
        write_correction(corr, path)
        raw = bytearray(path.read_bytes())
        raw[14] = 7
        path.write_bytes(bytes(raw))
        with pytest.raises(CodecError, match="out of range"):
            read_correction(path)

    def test_dimension_mismatch(self, tmp_path, small_spec):
        other = GridSpec.centered(8, 8, 0.2)
        corr = CorrectionGrid(spec=other, states=np.zeros((8, 8), np.uint8),
                              confidence=np.ones((8, 8)))
        path = tmp_path / "c.dogc"
        write_correction(corr, path)
        with pytest.raises(CodecError, match="do not match"):
            read_correction(path, expected_spec=small_spec)


class TestParticleDump:
    def test_format(self, tmp_path):
        particles = ParticleSet(pos=np.array([[1.5, -2.25]]),
                                vel=np.array([[3.0, 0.125]]),
                                weight=np.array([0.5]),
                                age=np.array([7], dtype=np.int64))
        path = tmp_path / "particles.txt"
        write_particles(particles, path)
        assert path.read_text() == "1.5 -2.25 3 0.125 0.5 7\n"

    def test_empty(self, tmp_path):
        path = tmp_path / "particles.txt"
        write_particles(ParticleSet.empty(), path)
        assert path.read_text() == ""
