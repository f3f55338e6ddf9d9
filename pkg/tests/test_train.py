import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hybridseg.config import TINY_MODEL, TrainConfig, reference_train_config, smoke_train_config
from hybridseg.data import synth_dataset
from hybridseg.heads import UNKNOWN, multitask_loss
from hybridseg.model import build_model
from hybridseg.tensor import Tensor
from hybridseg.train import (Checkpoint, ConfigMismatchError, DivergenceError, evaluate, lr_at, predict,
                             sgd_step, train)


def quick_config(**kw):
    base = dict(epochs=4, lr_drop_epochs=(2,), stride=32)
    base.update(kw)
    return smoke_train_config(**base)


@pytest.fixture(scope="module")
def scenes():
    return synth_dataset(1, 64, seed=11)


@pytest.fixture(scope="module")
def trained(scenes):
    return train(quick_config(), scenes)


class TestSchedule:
    def test_reference_anchors(self):
        cfg = reference_train_config()
        assert lr_at(10, cfg) == 0.01
        assert lr_at(30, cfg) == pytest.approx(0.001, rel=1e-15)
        assert lr_at(50, cfg) == pytest.approx(0.0001, rel=1e-15)

    def test_boundary(self):
        cfg = reference_train_config()
        assert lr_at(24, cfg) == 0.01
        assert lr_at(25, cfg) == pytest.approx(0.001, rel=1e-15)
        assert lr_at(45, cfg) == pytest.approx(0.0001, rel=1e-15)

    def test_out_of_range(self):
        cfg = reference_train_config()
        for e in (-1, 100):
            with pytest.raises(ValueError):
                lr_at(e, cfg)

    @given(st.lists(st.integers(1, 59), unique=True, max_size=4), st.floats(1e-4, 1.0))
    def test_piecewise_non_increasing(self, drops, base):
        cfg = TrainConfig(base_lr=base, epochs=60, lr_drop_epochs=tuple(sorted(drops)))
        rates = [lr_at(e, cfg) for e in range(60)]
        assert all(a >= b for a, b in zip(rates, rates[1:]))
        assert sum(a != b for a, b in zip(rates, rates[1:])) == len(drops)

    def test_config_invariants(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=30, lr_drop_epochs=(25, 45))
        with pytest.raises(ValueError):
            TrainConfig(lr_drop_epochs=(10, 5))
        with pytest.raises(ValueError):
            TrainConfig(base_lr=0)
        assert TrainConfig().lr_drop_epochs == (25,)


class TestSGD:
    def test_zero_grad_decays_velocity(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        p.grad = np.zeros(2)
        v = [np.array([1.0, 1.0])]
        for k in range(1, 4):
            sgd_step([p], v, 0.0, 0.5, 0.0)
            np.testing.assert_array_equal(v[0], 0.5 ** k)
        np.testing.assert_array_equal(p.data, [1.0, -2.0])

    def test_plain_descent(self):
        p = Tensor(np.array([3.0]), requires_grad=True)
        p.grad = np.array([2.0])
        sgd_step([p], [np.zeros(1)], 0.1, 0.0, 0.0)
        assert p.data[0] == pytest.approx(2.8, abs=1e-15)

    def test_quadratic_recurrence(self):
        # f(x) = x^2 / 2 so the gradient is x
        lr, m, wd = 0.1, 0.9, 0.01
        p = Tensor(np.array([1.0]), requires_grad=True)
        vel = [np.zeros(1)]
        x, v = 1.0, 0.0
        for _ in range(2):
            p.grad = p.data.copy()
            sgd_step([p], vel, lr, m, wd)
            v = m * v + x + wd * x
            x = x - lr * v
            assert p.data[0] == pytest.approx(x, abs=1e-15)
        # closed form after two steps
        g = 1.0 + wd
        assert x == pytest.approx(1 - lr * g - lr * (m * g + g * (1 - lr * g)), abs=1e-15)

    @given(st.integers(0, 1000))
    def test_zero_lr_is_identity(self, seed):
        r = np.random.default_rng(seed)
        p = Tensor(r.standard_normal(3), requires_grad=True)
        p.grad = r.standard_normal(3)
        before = p.data.copy()
        sgd_step([p], [r.standard_normal(3)], 0.0, 0.9, 0.1)
        np.testing.assert_array_equal(p.data, before)

    def test_shape_mismatch(self):
        p = Tensor(np.zeros(3), requires_grad=True)
        with pytest.raises(ValueError):
            sgd_step([p], [np.zeros(2)], 0.1, 0.9, 0.0)
        with pytest.raises(ValueError):
            sgd_step([p], [], 0.1, 0.9, 0.0)


def test_one_step_decreases_loss():
    decreased = 0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        model = build_model(TINY_MODEL, seed).train()
        img, dsm = Tensor(rng.random((2, 3, 32, 32))), Tensor(rng.standard_normal((2, 1, 32, 32)))
        gt = rng.integers(0, 6, (2, 32, 32))
        params = model.parameters()
        model.zero_grad()
        loss = multitask_loss(model(img, dsm), gt)
        loss.backward()
        sgd_step(params, [np.zeros_like(p.data) for p in params], 1e-3, 0.9, 0.0)
        decreased += multitask_loss(model(img, dsm), gt).item() < loss.item()
    assert decreased >= 9


class TestTrain:
    def test_history_and_determinism(self, scenes, trained):
        again = train(quick_config(), scenes)
        assert [h["loss"] for h in trained.history] == [h["loss"] for h in again.history]
        assert trained.to_bytes() == again.to_bytes()
        assert [h["lr"] for h in trained.history] == [0.1, 0.1, pytest.approx(0.01), pytest.approx(0.01)]
        assert trained.history[-1]["loss"] < trained.history[0]["loss"]

    def test_resume_bit_exact(self, scenes):
        cfg = quick_config(epochs=30, lr_drop_epochs=(25,), stride=32)
        full = train(cfg, scenes)
        half = train(cfg, scenes, stop_epoch=15)
        assert half.epoch == 15
        resumed = train(cfg, scenes, resume=Checkpoint.from_bytes(half.to_bytes()))
        assert resumed.epoch == full.epoch == 30
        assert resumed.to_bytes() == full.to_bytes()

    def test_divergence(self, scenes):
        with np.errstate(all="ignore"), pytest.raises(DivergenceError, match="became"):
            train(quick_config(base_lr=1e12, epochs=8, lr_drop_epochs=()), scenes)

    def test_resume_config_mismatch(self, scenes, trained):
        other = quick_config(model=TINY_MODEL.__class__(**{**TINY_MODEL.__dict__, "layers": 2}))
        with pytest.raises(ConfigMismatchError):
            train(other, scenes, resume=trained)

    def test_empty_dataset(self):
        with pytest.raises(ValueError):
            train(quick_config(), [])

    def test_validation_metrics_logged(self, scenes):
        ck = train(quick_config(epochs=1, lr_drop_epochs=()), scenes, val_scenes=scenes)
        assert {"val_oa", "val_kappa", "val_mean_f1"} <= set(ck.history[0])

    def test_writes_last_checkpoint(self, tmp_path, scenes):
        ck = train(quick_config(epochs=1, lr_drop_epochs=()), scenes, out_dir=tmp_path)
        assert Checkpoint.load(tmp_path / "last.ckpt").to_bytes() == ck.to_bytes()


class TestCheckpoint:
    def test_round_trip(self, tmp_path, trained):
        trained.save(tmp_path / "m.ckpt")
        back = Checkpoint.load(tmp_path / "m.ckpt")
        assert back.to_bytes() == trained.to_bytes()
        assert back.config == trained.config and back.stats == trained.stats
        assert not (tmp_path / "m.ckpt.tmp").exists()

    def test_hash_mismatch(self, trained):
        with pytest.raises(ConfigMismatchError):
            trained.build(expected_hash="0" * 64)
        assert trained.build(expected_hash=trained.config_hash) is not None

    def test_corrupt(self, trained):
        with pytest.raises(ValueError):
            Checkpoint.from_bytes(b"garbage")
        blob = trained.to_bytes().replace(b"layers=1", b"layers=2", 1)
        with pytest.raises(ConfigMismatchError):
            Checkpoint.from_bytes(blob)


class TestInference:
    def test_predict_has_no_unknown(self, scenes, trained):
        out = predict(trained, scenes[0])
        assert out.shape == scenes[0].shape and out.dtype == np.uint8
        assert not (out == UNKNOWN).any() and out.max() < 6

    def test_predict_deterministic(self, scenes, trained):
        np.testing.assert_array_equal(predict(trained, scenes[0]), predict(trained, scenes[0]))

    def test_gt_against_itself(self, scenes):
        from hybridseg.metrics import evaluate_maps
        rep = evaluate_maps([(s.labels, s.labels) for s in scenes])
        assert rep.overall_accuracy == 1 and rep.kappa == 1
        present = np.unique(scenes[0].labels)
        assert all(rep.per_class_f1[i] == 1 for i in present)

    def test_evaluate_report(self, scenes, trained):
        rep = evaluate(trained, scenes)
        assert rep.evaluated_pixels + rep.excluded_pixels == 64 * 64
        assert 0 <= rep.overall_accuracy <= 1 and -1 <= rep.kappa <= 1


def test_predict_without_any_positive(scenes, trained):
    model = trained.build()
    for head in model.heads:
        head.classifier.b.data[:] = [50.0, -50.0]
    out = predict(trained, scenes[0], model)
    assert not (out == UNKNOWN).any() and out.shape == scenes[0].shape
