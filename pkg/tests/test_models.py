import numpy as np
import pytest

from errors import ConfigError, ShapeError
from models import BackboneSpec, build_model, count_macs, count_params, count_params_by_prefix, forward, summarize
from tensor.core import Tensor, no_grad

SMALL = {"widths": [8, 16, 16], "fc_hidden": 32}


def _spec(**kwargs) -> BackboneSpec:
    return BackboneSpec.model_validate({**SMALL, **kwargs})


def _logits(model, x):
    with no_grad():
        return forward(model, x, mode="eval").logits.data


class TestForward:
    def test_digit3conv_batch_of_128(self, rng):
        model = build_model(BackboneSpec(variant="digit3conv"), rng)
        assert _logits(model, Tensor(rng.standard_normal((128, 1, 32, 32)))).shape == (128, 10)

    @pytest.mark.parametrize("variant", ["digit2conv", "smallresnet"])
    def test_other_variants_with_dida(self, rng, variant):
        spec = BackboneSpec.model_validate({"variant": variant, "dida": {"reduction": 4}})
        model = build_model(spec, rng)
        assert model.has_dida
        assert _logits(model, Tensor(rng.standard_normal((2, 1, 32, 32)))).shape == (2, 10)

    def test_zero_residual_matches_plain_backbone(self, rng):
        with_dida = build_model(_spec(dida={"reduction": 4}), np.random.default_rng(3))
        plain = build_model(_spec(), np.random.default_rng(4))
        shared = {k: v for k, v in with_dida.state_dict().items() if not k.startswith("dida.")}
        plain.load_state_dict(shared, strict=True)
        x = Tensor(rng.standard_normal((4, 1, 32, 32)))
        np.testing.assert_array_equal(_logits(with_dida, x), _logits(plain, x))

    def test_deterministic(self, rng):
        model = build_model(_spec(dida={"reduction": 4}), rng)
        x = Tensor(rng.standard_normal((3, 1, 32, 32)))
        np.testing.assert_array_equal(_logits(model, x), _logits(model, x))

    def test_eval_batch_equals_single_samples(self, rng, float64):
        model = build_model(_spec(dida={"reduction": 4}), rng)
        model.dida.conv4.weight.data = rng.standard_normal(model.dida.conv4.weight.shape) * 0.1
        x = rng.standard_normal((5, 1, 32, 32))
        batched = _logits(model, Tensor(x))
        alone = np.concatenate([_logits(model, Tensor(x[i:i + 1])) for i in range(5)])
        np.testing.assert_allclose(batched, alone, atol=1e-6)

    def test_features_are_last_stage_maps(self, rng):
        model = build_model(_spec(), rng)
        out = forward(model, Tensor(rng.standard_normal((2, 1, 32, 32))))
        assert out.features.shape == (2, 16, 8, 8)

    def test_wrong_input_channels(self, rng):
        model = build_model(_spec(), rng)
        with pytest.raises(ShapeError):
            model(Tensor(np.zeros((1, 3, 32, 32))))

    def test_bad_mode(self, rng):
        with pytest.raises(ConfigError):
            forward(build_model(_spec(), rng), Tensor(np.zeros((1, 1, 32, 32))), mode="predict")


class TestInsertion:
    def test_default_taps(self):
        assert _spec(dida={}).taps() == ["block2"]
        assert BackboneSpec(variant="smallresnet", dida={}).taps() == ["block3"]
        assert _spec().taps() == []

    def test_channel_mismatch_rejected(self, rng):
        spec = BackboneSpec.model_validate({"variant": "smallresnet", "insertion": "block3", "dida": {"in_channels": 32}})
        with pytest.raises(ConfigError, match="does not match"):
            build_model(spec, rng)

    def test_unknown_layer(self, rng):
        with pytest.raises(ConfigError, match="not a layer"):
            build_model(_spec(dida={"reduction": 4}, insertion="block9"), rng)

    def test_last_layer_has_nothing_to_fuse(self, rng):
        with pytest.raises(ConfigError, match="last layer"):
            build_model(_spec(dida={"reduction": 4}, insertion="block3"), rng)

    def test_multiple_insertion_points(self, rng):
        model = build_model(_spec(dida={"reduction": 4}, insertion=["block1", "block2"]), rng)
        assert sorted(model.dida_modules) == ["block1", "block2"]
        names = [name for name, _ in model.named_parameters()]
        assert any(name.startswith("dida.block1.") for name in names)
        assert _logits(model, Tensor(rng.standard_normal((2, 1, 32, 32)))).shape == (2, 10)

    def test_without_static_branch(self, rng):
        model = build_model(_spec(dida={"reduction": 4}, keep_static=False), rng)
        assert "block3" not in dict(model.children())
        assert _logits(model, Tensor(rng.standard_normal((2, 1, 32, 32)))).shape == (2, 10)

    def test_mixstyle_only_in_training(self, rng):
        model = build_model(_spec(mixstyle=True, mixstyle_prob=1.0), rng)
        x = Tensor(rng.standard_normal((4, 1, 32, 32)))
        assert forward(model, x, mode="train").logits.shape == (4, 10)
        np.testing.assert_array_equal(_logits(model, x), _logits(model, x))


class TestCounting:
    def test_prefixes_sum_to_total(self, rng):
        model = build_model(_spec(dida={"reduction": 4}), rng)
        by_prefix = count_params_by_prefix(model)
        assert sum(by_prefix.values()) == count_params(model)
        assert "dida" in by_prefix

    def test_dida_prefix_at_512_channels(self, rng):
        model = build_model(BackboneSpec.model_validate({"widths": [8, 512, 512], "fc_hidden": 0, "dida": {"reduction": 16}}), rng)
        assert count_params(model, "dida") == 24_594

    def test_classifier_params_and_macs(self, rng):
        model = build_model(BackboneSpec.model_validate({"variant": "smallresnet", "widths": [8, 8, 8, 8, 256]}), rng)
        report = summarize(model, (1, 1, 32, 32))
        classifier = next(row for row in report["layers"] if row["name"] == "classifier")
        assert classifier["params"] == 2_570
        assert classifier["macs"] == 2_560
        assert count_macs(model, (3, 1, 32, 32)) == 3 * report["total_macs"]

    def test_macs_sum_over_prefixes(self, rng):
        report = summarize(build_model(_spec(dida={"reduction": 4}), rng), (1, 1, 32, 32))
        assert sum(row["macs"] for row in report["prefixes"]) == report["total_macs"]
        assert sum(row["params"] for row in report["prefixes"]) == report["total_params"]

    def test_dida_adds_exactly_its_own_macs(self, rng):
        with_dida = build_model(_spec(dida={"reduction": 4}), np.random.default_rng(1))
        plain = build_model(_spec(), np.random.default_rng(1))
        shape = (1, 1, 32, 32)
        extra = count_macs(with_dida, shape) - count_macs(plain, shape)
        dida_row = next(row for row in summarize(with_dida, shape)["prefixes"] if row["prefix"] == "dida")
        assert extra == dida_row["macs"]
        # tap [1, 16, 8, 8], c/m = 4, dilations [1, 2], 3x3 kernels, 8 outputs per branch:
        # conv1 on maps + conv1 on pooled + 2 generators + 2 dynamic convs + 2 conv4
        assert extra == 4 * 64 * 16 + 4 * 16 + 2 * 9 * 4 + 2 * 4 * 64 * 9 + 2 * 8 * 64 * 4
