import numpy as np
import pytest
from pydantic import ValidationError

from dida.config import DidaConfig, DidaOptions
from dida.mixstyle import MixStyle, mixstyle
from dida.module import DidaModule, closed_form_param_count, dida_residual, fuse, generate_kernels, static_cnn_variant
from errors import ShapeError
from models import count_params
from tensor.core import Tensor


def _module(rng, **kwargs) -> DidaModule:
    module = DidaModule(DidaConfig(**kwargs), rng)
    module.bind_names("dida")
    return module


class TestParameterCounts:
    def test_dynamic_module_at_512_channels(self, rng):
        config = DidaConfig(in_channels=512, reduction=16, dilations=[1, 2], kernel_size=3)
        module = DidaModule(config, rng)
        assert module.conv1.weight.data.size == 16_384
        assert [g.weight.data.size for g in module.generators] == [9, 9]
        assert module.conv4.weight.data.size == 8_192
        assert count_params(module) == 24_594
        assert closed_form_param_count(config) == 24_594

    def test_static_cnn_variant_at_512_channels(self, rng):
        config = DidaConfig(in_channels=512, reduction=16, dilations=[1, 2], generator_mode="static_cnn")
        assert count_params(DidaModule(config, rng)) == 25_152
        assert closed_form_param_count(config) == 25_152

    @pytest.mark.parametrize("overrides", [
        {"dilations": [1]},
        {"dilations": [1, 2, 4], "out_channels": 48},
        {"branch_kernel_sizes": [1, 3]},
        {"share_reduction": False},
        {"kernel_size": 5},
    ])
    def test_closed_form_matches_instance(self, rng, overrides):
        config = DidaConfig(in_channels=32, reduction=4, **overrides)
        assert count_params(DidaModule(config, rng)) == closed_form_param_count(config)


class TestConfigValidation:
    def test_channels_not_divisible_by_reduction(self):
        with pytest.raises(ValidationError, match="divisible by reduction"):
            DidaConfig(in_channels=30, reduction=16)

    def test_out_channels_not_divisible_by_branches(self):
        with pytest.raises(ValidationError):
            DidaConfig(in_channels=8, reduction=2, dilations=[1, 2], out_channels=5)

    def test_even_kernel_rejected(self):
        with pytest.raises(ValidationError):
            DidaConfig(in_channels=8, reduction=2, kernel_size=4)

    def test_unknown_field_rejected(self):
        with pytest.raises(ValidationError):
            DidaConfig(in_channels=8, reduction=2, dilation=[1])

    def test_options_resolve_to_insertion_channels(self):
        config = DidaOptions(reduction=4).resolve(16, 32)
        assert (config.in_channels, config.resolved_out_channels, config.branch_out_channels) == (16, 32, 16)


class TestKernelGeneration:
    def test_bank_shape(self, rng):
        module = _module(rng, in_channels=512, reduction=16)
        bank = generate_kernels(Tensor(rng.standard_normal((2, 512, 4, 4))), module.conv1, module.generators[0]).bank
        assert bank.shape == (2, 32, 3, 3)

    def test_different_instances_get_different_banks(self, rng, float64):
        module = _module(rng, in_channels=8, reduction=2)
        x = rng.standard_normal((2, 8, 5, 5))
        x[1] += 1.5
        bank = generate_kernels(Tensor(x), module.conv1, module.generators[0]).bank.data
        assert not np.allclose(bank[0], bank[1])
        repeated = generate_kernels(Tensor(np.stack([x[0], x[0]])), module.conv1, module.generators[0]).bank.data
        np.testing.assert_array_equal(repeated[0], repeated[1])

    def test_zero_generator_gives_zero_bank(self, rng):
        module = _module(rng, in_channels=8, reduction=2)
        module.generators[0].weight.data[...] = 0.0
        bank = generate_kernels(Tensor(rng.standard_normal((3, 8, 5, 5))), module.conv1, module.generators[0]).bank
        assert not bank.data.any()

    def test_zero_reduction_gives_zero_features(self, rng):
        module = _module(rng, in_channels=8, reduction=2)
        module.conv1.weight.data[...] = 0.0
        assert not module.conv1(Tensor(rng.standard_normal((2, 8, 3, 3)))).data.any()


class TestResidual:
    def test_conv4_starts_at_zero(self, rng):
        module = _module(rng, in_channels=16, reduction=4)
        assert not module.conv4.weight.data.any()
        residual = module(Tensor(rng.standard_normal((2, 16, 6, 6))))
        assert residual.shape == (2, 16, 6, 6)
        assert not residual.data.any()

    def test_matches_per_sample_oracle(self, rng, float64):
        module = _module(rng, in_channels=8, reduction=2, dilations=[1, 2])
        module.conv4.weight.data = rng.standard_normal(module.conv4.weight.shape)
        x = rng.standard_normal((3, 8, 6, 6))
        out = module(Tensor(x)).data

        w1 = module.conv1.weight.data[:, :, 0, 0]
        w4 = module.conv4.weight.data[:, :, 0, 0]
        features = np.einsum("rc,nchw->nrhw", w1, x)
        reduced = x.mean(axis=(2, 3)) @ w1.T
        expected = []
        for generator, d in zip(module.generators, [1, 2]):
            bank = reduced[:, :, None, None] * generator.weight.data[:, 0, 0, 0].reshape(3, 3)
            padded = np.pad(features, ((0, 0), (0, 0), (d, d), (d, d)))
            mixed = np.zeros_like(features)
            for a in range(3):
                for b in range(3):
                    mixed += padded[:, :, a * d:a * d + 6, b * d:b * d + 6] * bank[:, :, a, b, None, None]
            expected.append(np.einsum("or,nrhw->nohw", w4, mixed))
        np.testing.assert_allclose(out, np.concatenate(expected, axis=1), atol=1e-10)

    def test_sample_depends_only_on_itself(self, rng, float64):
        module = _module(rng, in_channels=8, reduction=2)
        module.conv4.weight.data = rng.standard_normal(module.conv4.weight.shape)
        x = rng.standard_normal((4, 8, 5, 5))
        batched = module(Tensor(x)).data
        alone = module(Tensor(x[2:3])).data
        np.testing.assert_allclose(batched[2:3], alone, atol=1e-12)

    def test_wrong_channel_count(self, rng):
        module = _module(rng, in_channels=8, reduction=2)
        with pytest.raises(ShapeError):
            module(Tensor(np.zeros((1, 4, 5, 5))))

    def test_fuse_with_zero_residual_is_static(self, rng):
        static = Tensor(rng.standard_normal((2, 4, 3, 3)))
        np.testing.assert_array_equal(fuse(static, Tensor(np.zeros((2, 4, 3, 3)))).data, static.data)

    def test_fuse_shape_mismatch(self):
        with pytest.raises(ShapeError):
            fuse(Tensor(np.zeros((2, 4, 3, 3))), Tensor(np.zeros((2, 4, 2, 2))))


class TestStaticCnnVariant:
    def test_shared_kernel_with_zero_conv4(self, rng):
        module = _module(rng, in_channels=8, reduction=2, generator_mode="static_cnn")
        for kernel in module.static_kernels:
            kernel.weight.data[...] = 0.0
            kernel.weight.data[:, 1, 1] = 1.0
        assert not static_cnn_variant(Tensor(rng.standard_normal((2, 8, 4, 4))), module).data.any()

    def test_requires_static_module(self, rng):
        with pytest.raises(ShapeError):
            static_cnn_variant(Tensor(np.zeros((1, 8, 4, 4))), _module(rng, in_channels=8, reduction=2))


class TestBatchPermutation:
    @pytest.mark.parametrize("mode, apply", [("dynamic", dida_residual), ("static_cnn", static_cnn_variant)])
    def test_permuting_batch_permutes_residual(self, rng, float64, mode, apply):
        module = _module(rng, in_channels=8, reduction=2, generator_mode=mode)
        module.conv4.weight.data = rng.standard_normal(module.conv4.weight.shape)
        x = rng.standard_normal((5, 8, 6, 6))
        order = rng.permutation(5)
        out = apply(Tensor(x), module).data
        np.testing.assert_allclose(apply(Tensor(x[order]), module).data, out[order], atol=1e-12)

    @pytest.mark.parametrize("mode, apply", [("dynamic", dida_residual), ("static_cnn", static_cnn_variant)])
    def test_entry_points_match_module_call(self, rng, float64, mode, apply):
        module = _module(rng, in_channels=8, reduction=2, generator_mode=mode)
        module.conv4.weight.data = rng.standard_normal(module.conv4.weight.shape)
        x = Tensor(rng.standard_normal((2, 8, 4, 4)))
        np.testing.assert_array_equal(apply(x, module).data, module(x).data)


class TestMixStyle:
    def test_lambda_one_is_identity(self, rng, float64):
        x = rng.standard_normal((4, 3, 5, 5))
        out = mixstyle(Tensor(x), np.ones(4), np.array([1, 2, 3, 0]))
        np.testing.assert_allclose(out.data, x, atol=1e-12)

    def test_self_partner_is_identity(self, rng, float64):
        x = rng.standard_normal((3, 2, 4, 4))
        out = mixstyle(Tensor(x), rng.uniform(size=3), np.arange(3))
        np.testing.assert_allclose(out.data, x, atol=1e-12)

    def test_lambda_zero_takes_partner_moments(self, rng, float64):
        x = rng.standard_normal((2, 3, 6, 6)) * np.array([1.0, 3.0])[:, None, None, None]
        out = mixstyle(Tensor(x), np.zeros(2), np.array([1, 0])).data
        np.testing.assert_allclose(out[0].mean(axis=(1, 2)), x[1].mean(axis=(1, 2)), atol=1e-10)
        np.testing.assert_allclose(out[0].std(axis=(1, 2)), x[1].std(axis=(1, 2)), atol=1e-10)

    def test_single_pixel_maps_are_floored(self, float64):
        out = mixstyle(Tensor(np.array([[[[1.0]]], [[[2.0]]]])), np.zeros(2), np.array([1, 0]))
        assert np.isfinite(out.data).all()

    def test_inactive_in_eval(self, rng):
        layer = MixStyle(np.random.default_rng(0), apply_prob=1.0).eval()
        x = Tensor(rng.standard_normal((4, 2, 3, 3)))
        assert layer(x) is x
