import hashlib
import struct

import numpy as np
import pytest

from biphoton_epr.formats import (BPFS_HEADER, FormatError, read_bpfs, read_bpfs_header,
                                  read_projection, write_bpfs, write_projection,
                                  write_projection_csv)
from biphoton_epr.jpd import corrected_sum_projection
from biphoton_epr.synth import FrameStack, Roi, SensorModel

from conftest import small_sensor


def test_bpfs_round_trip(tmp_path, pair_stack):
    path = tmp_path / "s.bpfs"
    write_bpfs(path, pair_stack)
    back = read_bpfs(path, sensor=pair_stack.sensor)
    np.testing.assert_array_equal(back.indices, pair_stack.indices)
    np.testing.assert_array_equal(back.offsets, pair_stack.offsets)
    assert back.basis_tag == "momentum" and back.seed == 5
    assert back.config_hash == pair_stack.config_hash
    assert back.dropped_photons == pair_stack.dropped_photons


def test_bpfs_header_and_bit_order(tmp_path):
    # 5 x 3 sensor, 15 pixels -> 2 bytes per frame
    sensor = SensorModel(8.0, 5, 3, Roi(0, 0, 2, 2), Roi(3, 0, 2, 2))
    frames = np.zeros((2,) + sensor.shape, dtype=bool)
    frames[0, 0, 0] = True              # flat pixel 0 -> bit 0 of byte 0
    frames[1, 1, 3] = True              # flat pixel 8 -> bit 0 of byte 1
    stack = FrameStack.from_dense(frames, sensor, "position", seed=2**63 + 5)
    path = tmp_path / "t.bpfs"
    write_bpfs(path, stack)
    raw = path.read_bytes()
    magic, version, w, h, n, basis, seed, digest = BPFS_HEADER.unpack(raw[:55])
    assert (magic, version, w, h, n, basis, seed) == (b"BPFS", 1, 5, 3, 2, 0, 2**63 + 5)
    assert raw[55:59] == bytes([0b00000001, 0, 0, 0b00000001])
    assert raw[59:63] == b"META"
    head = read_bpfs_header(path)
    assert head["n_frames"] == 2 and head["basis_tag"] == "position"
    back = read_bpfs(path, sensor=sensor)
    np.testing.assert_array_equal(back.dense(), frames)


def test_bpfs_embedded_config(tmp_path):
    from biphoton_epr.config import RunConfig
    from biphoton_epr.pipeline import simulate

    config = RunConfig.from_text(
        'sensor.width_px = 36\nsensor.height_px = 16\nsensor.roi_signal = [0, 0, 16, 16]\n'
        'sensor.roi_idler = [20, 0, 16, 16]\nrun.n_frames = 20\n')
    stack = simulate(config, "position")
    assert stack.config_hash == hashlib.sha256(stack.config_text.encode()).digest()
    path = tmp_path / "c.bpfs"
    write_bpfs(path, stack)
    back = read_bpfs(path)
    assert back.sensor == config.sensor
    assert back.config_text == stack.config_text


def test_bpfs_errors(tmp_path, pair_stack):
    path = tmp_path / "s.bpfs"
    write_bpfs(path, pair_stack)
    raw = path.read_bytes()
    (tmp_path / "magic.bpfs").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError, match="not a BPFS"):
        read_bpfs(tmp_path / "magic.bpfs", sensor=pair_stack.sensor)
    (tmp_path / "short.bpfs").write_bytes(raw[:100])
    with pytest.raises(FormatError, match="truncated"):
        read_bpfs(tmp_path / "short.bpfs", sensor=pair_stack.sensor)
    (tmp_path / "head.bpfs").write_bytes(raw[:20])
    with pytest.raises(FormatError, match="header"):
        read_bpfs_header(tmp_path / "head.bpfs")
    with pytest.raises(FormatError, match="does not match"):
        read_bpfs(path, sensor=small_sensor(8))
    with pytest.raises(FormatError, match="embedded config"):
        read_bpfs(path)


def test_bpfs_hash_mismatch(tmp_path):
    from biphoton_epr.config import RunConfig
    from biphoton_epr.pipeline import simulate

    config = RunConfig.from_text('sensor.width_px = 36\nsensor.height_px = 16\n'
                                 'sensor.roi_signal = [0, 0, 16, 16]\n'
                                 'sensor.roi_idler = [20, 0, 16, 16]\nrun.n_frames = 5\n')
    path = tmp_path / "h.bpfs"
    write_bpfs(path, simulate(config))
    raw = bytearray(path.read_bytes())
    raw[23] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="hash"):
        read_bpfs(path)


def test_projection_round_trip(tmp_path, pair_stack):
    proj = corrected_sum_projection(pair_stack, 910.0, 730.0, n_blocks=5)
    path = tmp_path / "p.bprj"
    write_projection(path, proj)
    back = read_projection(path)
    np.testing.assert_array_equal(back.values, proj.values)
    np.testing.assert_array_equal(back.block_values, proj.block_values)
    np.testing.assert_array_equal(back.block_pairs, proj.block_pairs)
    for name in ("axis_kind", "bin_size", "center_index", "n_pairs", "stretch",
                 "lambda_signal", "lambda_idler", "accidentals", "config_hash"):
        assert getattr(back, name) == getattr(proj, name)
    write_projection(path, proj, include_blocks=False)
    assert read_projection(path).block_values is None
    assert path.read_bytes()[:4] == b"BPRJ"
    version, length = struct.unpack("<HI", path.read_bytes()[4:10])
    assert version == 1 and length > 0


def test_projection_errors(tmp_path):
    (tmp_path / "x.bprj").write_bytes(b"NOPE" + b"\0" * 20)
    with pytest.raises(FormatError):
        read_projection(tmp_path / "x.bprj")


def test_projection_csv(tmp_path, pair_stack):
    proj = corrected_sum_projection(pair_stack, 910.0, 730.0)
    path = tmp_path / "p.csv"
    write_projection_csv(path, proj)
    table = np.loadtxt(path, delimiter=",", skiprows=1)
    assert path.read_text().splitlines()[0] == "dy_bin,dx_bin,dy_um,dx_um,value"
    assert table.shape == (proj.values.size, 5)
    np.testing.assert_array_equal(table[:, 4], proj.values.ravel())
    np.testing.assert_array_equal(table[:, 2], table[:, 0] * 8.0)
