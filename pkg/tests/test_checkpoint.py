import struct
import zlib

import numpy as np
import pytest

from csnln.checkpoint import (BadMagicError, CheckpointError, CRCError, VersionError, dumps, load_checkpoint, loads,
                              save_checkpoint)


def sample(rng):
    return {"a.weight": rng.standard_normal((2, 3, 1, 1)).astype(np.float32),
            "scalar": np.array([1.5], dtype=np.float32),
            "ünïcode": np.arange(6, dtype=np.float32).reshape(2, 3)}


def test_round_trip(tmp_path, rng):
    data = sample(rng)
    save_checkpoint(tmp_path / "c.ckpt", data)
    back = load_checkpoint(tmp_path / "c.ckpt")
    assert list(back) == list(data)
    for k in data:
        assert back[k].dtype == np.float32
        np.testing.assert_array_equal(back[k], data[k])


def test_empty_checkpoint():
    blob = dumps({})
    assert len(blob) == 16 and loads(blob) == {}


def test_layout_header_and_crc(rng):
    blob = dumps({"x": np.ones((2,), dtype=np.float32)})
    assert blob[:4] == b"CSNL"
    assert struct.unpack_from("<II", blob, 4) == (1, 1)
    assert struct.unpack("<I", blob[-4:])[0] == zlib.crc32(blob[:-4])


def test_crc_error(rng):
    blob = bytearray(dumps(sample(rng)))
    blob[-10] ^= 0xFF
    with pytest.raises(CRCError):
        loads(bytes(blob))


def test_bad_magic(rng):
    with pytest.raises(BadMagicError):
        loads(b"NOPE" + dumps(sample(rng))[4:])


def test_bad_version(rng):
    body = bytearray(dumps(sample(rng))[:-4])
    body[4:8] = struct.pack("<I", 2)
    blob = bytes(body) + struct.pack("<I", zlib.crc32(bytes(body)))
    with pytest.raises(VersionError):
        loads(blob)


def test_truncated_is_checkpoint_error(rng):
    body = dumps(sample(rng))[:-4][:-8]
    with pytest.raises(CheckpointError):
        loads(body + struct.pack("<I", zlib.crc32(body)))


def test_errors_are_value_errors():
    assert issubclass(CheckpointError, ValueError)
    with pytest.raises(ValueError):
        loads(b"")


def test_save_is_atomic_replace(tmp_path, rng):
    path = tmp_path / "c.ckpt"
    save_checkpoint(path, sample(rng))
    save_checkpoint(path, {"y": np.zeros(1, dtype=np.float32)})
    assert list(load_checkpoint(path)) == ["y"]
    assert not (tmp_path / "c.ckpt.tmp").exists()
