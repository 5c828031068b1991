import numpy as np
import pytest

from checkpoint import MAGIC, decode_checkpoint, encode_checkpoint, load_checkpoint, load_model, save_model
from errors import CheckpointError
from models import BackboneSpec, build_model, forward
from tensor.core import Tensor, no_grad


@pytest.fixture
def model(rng):
    spec = BackboneSpec.model_validate({"widths": [8, 16, 16], "fc_hidden": 32, "dida": {"reduction": 4}})
    model = build_model(spec, rng)
    model.dida.conv4.weight.data = rng.standard_normal(model.dida.conv4.weight.shape).astype(np.float32)
    # One train-mode pass so BN buffers differ from their defaults.
    forward(model, Tensor(rng.standard_normal((4, 1, 32, 32))), mode="train")
    return model


def test_round_trip_is_bit_exact(tmp_path, model, rng):
    path = str(tmp_path / "model.ckpt")
    save_model(path, model, {"seed": 5})
    restored, checkpoint = load_model(path)
    assert checkpoint.meta["seed"] == 5
    x = Tensor(rng.standard_normal((3, 1, 32, 32)))
    with no_grad():
        expected = forward(model, x).logits.data
        actual = forward(restored, x).logits.data
    np.testing.assert_array_equal(actual, expected)
    for name, value in model.state_dict().items():
        np.testing.assert_array_equal(restored.state_dict()[name], value)


def test_manifest_order_and_meta():
    tensors = {"b": np.arange(3, dtype=np.float32), "a": np.ones((2, 2), dtype=np.float32)}
    decoded = decode_checkpoint(encode_checkpoint(tensors, {"k": [1, 2]}))
    assert list(decoded.tensors) == ["b", "a"]
    assert decoded.meta == {"k": [1, 2]}


def test_bad_magic():
    blob = encode_checkpoint({"w": np.zeros(2, dtype=np.float32)})
    with pytest.raises(CheckpointError, match="magic"):
        decode_checkpoint(b"XXXX1" + blob[len(MAGIC):])


def test_truncated_payload():
    blob = encode_checkpoint({"w": np.zeros(8, dtype=np.float32)})
    with pytest.raises(CheckpointError, match="truncated"):
        decode_checkpoint(blob[:-4])


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError, match="not found"):
        load_checkpoint(str(tmp_path / "absent.ckpt"))


def test_state_mismatch_rejected(tmp_path, model):
    path = str(tmp_path / "model.ckpt")
    save_model(path, model)
    checkpoint = load_checkpoint(path)
    other = build_model(BackboneSpec.model_validate({"widths": [8, 16, 16], "fc_hidden": 32}), np.random.default_rng(0))
    with pytest.raises(CheckpointError, match="state mismatch"):
        other.load_state_dict(checkpoint.tensors, strict=True)
