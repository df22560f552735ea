import struct
import zlib

import numpy as np
import pytest

from bridgekit.bridge import ObjectiveKind
from bridgekit.checkpoint import MAGIC, dumps, load_checkpoint, loads, save_checkpoint
from bridgekit.exceptions import CheckpointError
from bridgekit.net import AdamState, Architecture, RegressorParams, predict


def _params(objective=ObjectiveKind.ENDPOINT, seed=0):
    arch = Architecture(state_dim=2, out_dim=objective.output_width(2), cond_dim=1, hidden=8, depth=2,
                        embed_dim=8)
    p = RegressorParams.initialize(arch, np.random.default_rng(seed), zero_output=False)
    p.flat += 0.1 * np.random.default_rng(seed + 1).standard_normal(p.flat.size)
    return p


@pytest.mark.parametrize("kind", list(ObjectiveKind))
def test_round_trip_bit_exact(tmp_path, rng, kind):
    p = _params(kind)
    state = AdamState.zeros_like(p)
    state.m_flat[:] = rng.standard_normal(state.m_flat.size)
    state.v_flat[:] = rng.uniform(size=state.v_flat.size)
    state.step = 17
    path = tmp_path / "net.sbmk"
    save_checkpoint(path, p, kind, state, {"step": 17})
    ck = load_checkpoint(path)
    assert ck.objective is kind and ck.extra == {"step": 17}
    assert np.array_equal(ck.params.flat, p.flat)
    assert np.array_equal(ck.opt_state.m_flat, state.m_flat) and np.array_equal(ck.opt_state.v_flat, state.v_flat)
    assert ck.opt_state.step == 17
    y, c, t = rng.standard_normal((5, 2)), rng.standard_normal((5, 1)), rng.uniform(size=5)
    assert np.array_equal(predict(ck.params, y, c, t), predict(p, y, c, t))


def test_header_layout():
    blob = dumps(_params(), "posterior-length")
    assert blob[:4] == MAGIC
    version, code = struct.unpack_from("<IB", blob, 4)
    assert version == 1 and code == ObjectiveKind.POSTERIOR_LENGTH.code
    assert struct.unpack("<I", blob[-4:])[0] == zlib.crc32(blob[:-4]) & 0xFFFFFFFF


def test_without_optimizer_state():
    ck = loads(dumps(_params(), "endpoint"))
    assert ck.opt_state is None


def test_single_flipped_byte_detected():
    blob = bytearray(dumps(_params(), "endpoint"))
    for pos in (10, len(blob) // 2, len(blob) - 6):
        bad = blob.copy()
        bad[pos] ^= 0x01
        with pytest.raises(CheckpointError, match="CRC"):
            loads(bytes(bad))


def test_truncation_and_bad_magic(tmp_path):
    blob = dumps(_params(), "endpoint")
    with pytest.raises(CheckpointError):
        loads(blob[:-100])
    with pytest.raises(CheckpointError, match="magic"):
        loads(b"XXXX" + blob[4:])
    with pytest.raises(CheckpointError, match="not found"):
        load_checkpoint(tmp_path / "missing.sbmk")


def test_unknown_version_rejected():
    blob = bytearray(dumps(_params(), "endpoint")[:-4])
    blob[4:8] = struct.pack("<I", 99)
    blob += struct.pack("<I", zlib.crc32(bytes(blob)) & 0xFFFFFFFF)
    with pytest.raises(CheckpointError, match="version 99"):
        loads(bytes(blob))
