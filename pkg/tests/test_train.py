import json
import math

import numpy as np
import pytest

from data.config import AugmentConfig
from data.sampler import BatchRecipe, sample_batch
from data.synthetic import make_toy_set
from errors import DataError, DivergenceError
from models import BackboneSpec, build_model
from tensor import ops
from tensor.core import Tensor
from train.engine import build_optimizer, evaluate, fit, grad_norms, scheduled_lr, train_step
from train.losses import loss_source, loss_target, pseudo_label, target_weights
from train.schemas import TrainConfig

SPEC = {"widths": [8, 16, 16], "fc_hidden": 32, "dida": {"reduction": 4}}
RECIPE = BatchRecipe(augment=AugmentConfig(), mean=0.1307, std=0.3081, image_size=32)


def _model(seed: int = 0):
    return build_model(BackboneSpec.model_validate(SPEC), np.random.default_rng(seed))


def _batches(count: int, batch_size: int = 8):
    sources = [make_toy_set(32, seed=0, domain="src")]
    target = make_toy_set(32, seed=1, domain="tgt").unlabeled()
    rng = np.random.default_rng(21)
    return [sample_batch(sources, target, batch_size, rng, RECIPE) for _ in range(count)]


def _ce(logits: np.ndarray, label: int) -> float:
    return float(np.log(np.exp(logits).sum()) - logits[label])


class TestLosses:
    def test_source_uniform(self):
        assert loss_source(Tensor(np.zeros((6, 10))), np.arange(6)).item() == pytest.approx(math.log(10), rel=1e-6)

    def test_source_two_domains_two_samples(self, float64):
        logits = np.array([[2.0, 0.5, -1.0], [0.0, 0.0, 1.0], [1.5, 1.5, 0.2], [-0.3, 2.2, 0.1]])
        labels = np.array([0, 2, 1, 1])
        expected = np.mean([_ce(row, label) for row, label in zip(logits, labels)])
        assert loss_source(Tensor(logits), labels).item() == pytest.approx(expected, rel=1e-12)

    def test_pseudo_label_saturated(self, float64):
        logits = np.zeros((1, 10))
        logits[0, 7] = 100.0
        labels, confidence = pseudo_label(Tensor(logits))
        assert labels.tolist() == [7]
        assert confidence[0] == pytest.approx(1.0)

    def test_pseudo_label_uniform(self):
        _, confidence = pseudo_label(Tensor(np.zeros((2, 10))))
        np.testing.assert_allclose(confidence, 0.1, rtol=1e-6)

    def test_tie_goes_to_lowest_class(self):
        labels, _ = pseudo_label(Tensor(np.array([[0.0, 3.0, 3.0, 1.0]])))
        assert labels.tolist() == [1]

    def test_threshold_keeps_confident_samples(self):
        np.testing.assert_array_equal(target_weights(np.array([0.96, 0.90]), 0.95, "hard_threshold"), [1.0, 0.0])

    def test_threshold_masked_loss(self, float64):
        logits = np.array([[2.0, 0.0], [0.0, 1.0]])
        loss = loss_target(Tensor(logits), np.array([0, 1]), np.array([0.96, 0.90]), 0.95)
        assert loss.item() == pytest.approx(_ce(logits[0], 0) / 2, rel=1e-12)

    def test_nothing_accepted_is_zero(self):
        loss = loss_target(Tensor(np.ones((3, 4))), np.zeros(3), np.array([0.2, 0.5, 0.94]), 0.95)
        assert loss.item() == 0.0

    def test_soft_weight(self, float64):
        logits = np.array([[0.0, math.log(math.e ** 2 - 1.0)]])
        loss = loss_target(Tensor(logits), np.array([0]), np.array([0.5]), 0.95, mode="soft_weight")
        assert loss.item() == pytest.approx(1.0, rel=1e-9)

    def test_raising_tau_never_accepts_more(self):
        rng = np.random.default_rng(3)
        _, confidence = pseudo_label(Tensor(rng.normal(scale=3.0, size=(64, 10))))
        previous = None
        for tau in np.linspace(0.05, 1.0, 20):
            kept = set(np.flatnonzero(target_weights(confidence, tau, "hard_threshold")).tolist())
            if previous is not None:
                assert kept <= previous
            previous = kept

    def test_losses_ignore_sample_order(self, float64):
        rng = np.random.default_rng(4)
        logits = rng.normal(size=(12, 10))
        labels = rng.integers(0, 10, size=12)
        confidence = rng.uniform(0.5, 1.0, size=12)
        order = rng.permutation(12)
        assert loss_source(Tensor(logits[order]), labels[order]).item() == pytest.approx(
            loss_source(Tensor(logits), labels).item(), rel=1e-12
        )
        for mode in ("hard_threshold", "soft_weight"):
            shuffled = loss_target(Tensor(logits[order]), labels[order], confidence[order], 0.8, mode)
            assert shuffled.item() == pytest.approx(loss_target(Tensor(logits), labels, confidence, 0.8, mode).item(), rel=1e-12)


class TestTrainStep:
    def test_total_is_source_plus_target(self):
        model = _model()
        cfg = TrainConfig(tau=0.05, base_lr=1e-3)
        metrics = train_step(model, _batches(1)[0], build_optimizer(model, cfg), cfg, lr=1e-3)
        assert metrics.L == pytest.approx(metrics.L_s + metrics.L_t, rel=1e-5)
        assert metrics.coverage == 1.0
        assert metrics.L_t > 0.0

    def test_gradients_reach_every_dida_parameter(self):
        model = _model()
        model.dida.conv4.weight.data[...] = np.random.default_rng(9).normal(scale=0.1, size=model.dida.conv4.weight.shape)
        cfg = TrainConfig(tau=0.05, base_lr=1e-3)
        train_step(model, _batches(1)[0], build_optimizer(model, cfg), cfg, lr=1e-3)
        norms = {name: value for name, value in grad_norms(model).items() if name.startswith("dida.")}
        assert {"dida.conv1.weight", "dida.conv4.weight"} <= set(norms)
        assert any(name.startswith("dida.generators.") for name in norms)
        assert all(value > 0.0 for value in norms.values()), norms

    def test_unreachable_threshold_equals_source_only(self):
        batches = _batches(2)
        masked_cfg = TrainConfig(base_lr=1e-3).model_copy(update={"tau": 1.01})
        source_cfg = TrainConfig(base_lr=1e-3, target_loss_mode="none")
        runs = []
        for cfg in (masked_cfg, source_cfg):
            model = _model(seed=5)
            optimizer = build_optimizer(model, cfg)
            history = [train_step(model, batch, optimizer, cfg, lr=1e-3, step=i) for i, batch in enumerate(batches)]
            runs.append((model, history))
        (masked, masked_history), (plain, plain_history) = runs
        assert [m.L for m in masked_history] == [m.L for m in plain_history]
        for (name, a), (_, b) in zip(masked.named_parameters(), plain.named_parameters()):
            np.testing.assert_array_equal(a.data, b.data, err_msg=name)
        for name, value in masked.state_dict().items():
            np.testing.assert_array_equal(value, plain.state_dict()[name], err_msg=name)

    def test_repeatable(self):
        cfg = TrainConfig(base_lr=1e-3, tau=0.1)
        batches = _batches(2)
        histories = []
        for _ in range(2):
            model = _model(seed=8)
            optimizer = build_optimizer(model, cfg)
            histories.append([train_step(model, b, optimizer, cfg, lr=1e-3, step=i).model_dump() for i, b in enumerate(batches)])
        assert histories[0] == histories[1]

    def test_warmup_skips_target_loss(self):
        model = _model()
        cfg = TrainConfig(tau=0.05, warmup_steps=5)
        metrics = train_step(model, _batches(1)[0], build_optimizer(model, cfg), cfg, lr=1e-3, step=0)
        assert metrics.L_t == 0.0 and metrics.coverage == 0.0

    def test_pseudo_label_accuracy_with_oracle(self):
        model = _model()
        cfg = TrainConfig(tau=0.05)
        batch = _batches(1)[0]
        metrics = train_step(model, batch, build_optimizer(model, cfg), cfg, lr=1e-3, oracle_labels=np.zeros(8, dtype=np.int64))
        assert 0.0 <= metrics.pseudo_label_accuracy <= 1.0

    def test_divergence_reports_lr(self):
        model = _model()
        cfg = TrainConfig(target_loss_mode="none")
        batch = _batches(1)[0]
        batch.source_x = Tensor(np.full(batch.source_x.shape, np.nan))
        with pytest.raises(DivergenceError) as info:
            train_step(model, batch, build_optimizer(model, cfg), cfg, lr=2e-4)
        assert info.value.exit_code == 3
        assert "lr=2.000e-04" in str(info.value)


class TestOptimizerWiring:
    def test_dida_parameters_get_multiplier(self):
        model = _model()
        optimizer = build_optimizer(model, TrainConfig(base_lr=5e-4))
        assert optimizer.effective_lr("dida.conv1.weight", 5e-4) == pytest.approx(5e-3)
        assert optimizer.effective_lr("block1.conv.weight", 5e-4) == pytest.approx(5e-4)

    def test_schedules(self):
        assert scheduled_lr(TrainConfig(schedule="constant", base_lr=0.1), 7, 10) == 0.1
        assert scheduled_lr(TrainConfig(base_lr=0.1), 5, 11) == pytest.approx(0.05)

    def test_cosine_endpoints_cover_first_and_last_step(self):
        cfg = TrainConfig(base_lr=0.1)
        assert scheduled_lr(cfg, 0, 10) == pytest.approx(0.1)
        assert scheduled_lr(cfg, 9, 10) == pytest.approx(0.0, abs=1e-12)
        assert scheduled_lr(cfg, 0, 1) == pytest.approx(0.1)


class TestEvaluate:
    def _constant_model(self, cls: int):
        model = _model()
        model.classifier.weight.data[...] = 0.0
        model.classifier.bias.data[...] = 0.0
        model.classifier.bias.data[cls] = 1.0
        return model

    def test_constant_prediction_on_balanced_set(self):
        assert evaluate(self._constant_model(3), make_toy_set(50, seed=2)) == pytest.approx(0.1)

    def test_all_correct(self):
        data = make_toy_set(10, seed=2)
        data.labels[:] = 3
        assert evaluate(self._constant_model(3), data) == 1.0

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            evaluate(_model(), None)


class TestFit:
    def test_log_accounting_and_checkpoints(self, tmp_path):
        sources = [make_toy_set(32, seed=0, domain="src")]
        target = make_toy_set(32, seed=1, domain="tgt")
        cfg = TrainConfig(epochs=1, steps_per_epoch=2, batch_size=8, base_lr=1e-3)
        state = fit(
            _model(), sources, target.unlabeled(), cfg, RECIPE, np.random.default_rng(0),
            run_dir=str(tmp_path), target_test=make_toy_set(20, seed=4, domain="tgt", split="test"),
        )
        records = [json.loads(line) for line in (tmp_path / "metrics.jsonl").read_text().splitlines()]
        assert [r["kind"] for r in records] == ["step", "step", "epoch"]
        assert {"L_s", "L_t", "L", "lr", "coverage"} <= set(records[0])
        assert state.step == 2 and state.epoch == 1
        assert (tmp_path / "last.ckpt").exists() and (tmp_path / "best.ckpt").exists()
        assert state.selected_checkpoint == str(tmp_path / "best.ckpt")
        assert 0.0 <= state.best_accuracy <= 1.0

    def test_epoch_defaults_to_target_coverage(self):
        sources = [make_toy_set(16, seed=0)]
        cfg = TrainConfig(epochs=2, batch_size=8, base_lr=1e-3, select="last")
        state = fit(_model(), sources, make_toy_set(20, seed=1).unlabeled(), cfg, RECIPE, np.random.default_rng(0))
        assert state.step == 6
        assert len(state.epochs) == 2 and state.epochs[-1].acc is None
        assert "data" in state.rng_state

    def test_lr_runs_from_base_to_zero(self, tmp_path):
        sources = [make_toy_set(32, seed=0, domain="src")]
        cfg = TrainConfig(epochs=1, steps_per_epoch=2, batch_size=8, base_lr=1e-3)
        fit(
            _model(), sources, make_toy_set(32, seed=1, domain="tgt").unlabeled(), cfg, RECIPE,
            np.random.default_rng(0), run_dir=str(tmp_path),
        )
        records = [json.loads(line) for line in (tmp_path / "metrics.jsonl").read_text().splitlines()]
        lrs = [r["lr"] for r in records if r["kind"] == "step"]
        assert lrs[0] == pytest.approx(1e-3)
        assert lrs[-1] < 1e-4

    def test_every_record_satisfies_metric_invariants(self, tmp_path):
        sources = [make_toy_set(32, seed=0, domain="src")]
        cfg = TrainConfig(epochs=2, steps_per_epoch=3, batch_size=8, base_lr=1e-3, tau=0.05)
        fit(
            _model(), sources, make_toy_set(32, seed=1, domain="tgt").unlabeled(), cfg, RECIPE,
            np.random.default_rng(0), run_dir=str(tmp_path),
            target_test=make_toy_set(20, seed=4, domain="tgt", split="test"),
        )
        records = [json.loads(line) for line in (tmp_path / "metrics.jsonl").read_text().splitlines()]
        assert len(records) == 8
        for record in records:
            assert {"step", "epoch", "L_s", "L_t", "L", "lr", "coverage"} <= set(record)
            assert record["L"] == pytest.approx(record["L_s"] + record["L_t"], rel=1e-5, abs=1e-6)
            assert 0.0 <= record["coverage"] <= 1.0
            assert np.isfinite(record["L"])
        epochs = [r for r in records if r["kind"] == "epoch"]
        assert all(0.0 <= r["acc"] <= 1.0 for r in epochs)
