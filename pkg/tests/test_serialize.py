import struct

import numpy as np
import pytest

from birescale.errors import FormatError
from birescale.model import ModelConfig, RescaleModel
from birescale.serialize import deserialize, load, save, serialize

CFG = ModelConfig(width=6, blocks=2, features=5, svf_hidden=7, swf_hidden=3)


def random_model(seed, dtype=np.float32, use_swf=True):
    return RescaleModel.init(CFG, seed=seed, dtype=dtype, use_swf=use_swf, near_identity=False)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("use_swf", [True, False])
def test_round_trip_bit_exact(seed, use_swf):
    m = random_model(seed, use_swf=use_swf)
    back = deserialize(serialize(m))
    assert back.config == CFG
    assert back.use_swf == use_swf
    for k, t in m.params.items():
        assert back.params[k].data.tobytes() == t.data.tobytes()
    assert serialize(back) == serialize(m)


def test_float64_model_loads_as_float32(tmp_path):
    m = random_model(1, dtype=np.float64)
    save(m, tmp_path / "m.bair")
    back = load(tmp_path / "m.bair")
    assert back.dtype == np.float32
    for k, t in m.params.items():
        assert back.params[k].data.tobytes() == t.data.astype(np.float32).tobytes()


def test_bad_magic():
    data = bytearray(serialize(random_model(0)))
    data[:4] = b"NOPE"
    with pytest.raises(FormatError, match="magic.*offset 0"):
        deserialize(bytes(data))


def test_bad_version():
    data = bytearray(serialize(random_model(0)))
    data[4:6] = struct.pack("<H", 99)
    with pytest.raises(FormatError, match="version.*offset 4"):
        deserialize(bytes(data))


@pytest.mark.parametrize("cut", [3, 5, 9, 100])
def test_truncation(cut):
    data = serialize(random_model(0))
    with pytest.raises(FormatError, match="offset"):
        deserialize(data[:cut])


def test_corrupted_payload_fails_checksum():
    data = bytearray(serialize(random_model(0)))
    data[40] ^= 0xFF
    with pytest.raises(FormatError, match="checksum"):
        deserialize(bytes(data))


def test_truncated_with_valid_checksum():
    import zlib
    data = serialize(random_model(0))
    body = data[6:-4][:-10]
    forged = data[:6] + body + struct.pack("<I", zlib.crc32(body))
    with pytest.raises(FormatError, match="truncated"):
        deserialize(forged)


def test_save_is_atomic(tmp_path):
    path = tmp_path / "m.bair"
    save(random_model(0), path)
    assert [p.name for p in tmp_path.iterdir()] == ["m.bair"]
