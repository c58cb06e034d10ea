import numpy as np
import pytest

from flowcodec.nn import checkpoint


def _params():
    rng = np.random.default_rng(0)
    return {
        "enc.conv0.weight": rng.normal(size=(4, 3, 3, 3)).astype(np.float32),
        "enc.conv0.bias": np.zeros((1, 4, 1, 1), np.float32),
    }


def test_round_trip(tmp_path):
    path = tmp_path / "m.ckpt"
    checkpoint.save(path, _params(), {"model_kind": "ms-anfic", "lambda2": "0.1"})
    params, meta = checkpoint.load(path)
    assert meta["model_kind"] == "ms-anfic"
    assert meta["lambda2"] == "0.1"
    for name, arr in _params().items():
        np.testing.assert_array_equal(params[name], arr)


def test_bytes_are_stable():
    blob1 = checkpoint.serialize(_params(), {"a": "1"})
    blob2 = checkpoint.serialize(_params(), {"a": "1"})
    assert blob1 == blob2
    assert blob1[:4] == b"FCKP"


def test_values_stored_little_endian_f32():
    blob = checkpoint.serialize({"w": np.array([[[[1.0]]]], np.float32)})
    assert np.frombuffer(blob[-4:], dtype="<f4")[0] == 1.0


def test_identity_hash_is_8_bytes_and_content_sensitive():
    blob = checkpoint.serialize(_params())
    h = checkpoint.identity_hash(blob)
    assert len(h) == 8
    other = checkpoint.serialize({"w": np.ones((1, 1, 1, 1), np.float32)})
    assert checkpoint.identity_hash(other) != h


def test_truncation_and_bad_magic_rejected():
    blob = checkpoint.serialize(_params())
    with pytest.raises(checkpoint.CheckpointError, match="truncated"):
        checkpoint.deserialize(blob[:-3])
    with pytest.raises(checkpoint.CheckpointError, match="magic"):
        checkpoint.deserialize(b"XXXX" + blob[4:])
