import numpy as np
import pytest

from tcja_snn.data import FrameSample, frames_dataset, gen_synthetic, one_hot
from tcja_snn.network import build_network, parse_arch
from tcja_snn.tensor import Tensor
from tcja_snn.training import (
    Checkpoint,
    CheckpointError,
    NumericsError,
    OptimizerState,
    TrainConfig,
    evaluate,
    load_checkpoint,
    make_checkpoint,
    optimizer_step,
    predict_label,
    restore_network,
    save_checkpoint,
    smse_loss,
    train,
)

import oracles


def tiny_dataset(n_train=24, n_test=8, seed=0):
    streams_train = gen_synthetic(classes=4, height=8, width=8, t_steps=4, n=n_train, seed=seed)
    streams_test = gen_synthetic(classes=4, height=8, width=8, t_steps=4, n=n_test, seed=seed + 1)
    return (
        frames_dataset(streams_train, t_steps=4, num_classes=4),
        frames_dataset(streams_test, t_steps=4, num_classes=4),
    )


def tiny_net(seed=0, arch_text="4C3-LIF-MP2-16FC-LIF-Voting", dtype=np.float32):
    arch = parse_arch(arch_text, input_dims=(2, 8, 8), time_steps=4)
    return build_network(arch, num_classes=4, rng=np.random.default_rng(seed), dtype=dtype)


class TestLoss:
    def test_zero_when_outputs_equal_target(self):
        g = one_hot(4, 2)
        outputs = Tensor(np.tile(g, (5, 1)))
        assert smse_loss(outputs, g).item() == 0.0

    @pytest.mark.parametrize("t_steps", [1, 3, 8])
    def test_silent_outputs_against_one_hot(self, t_steps):
        n_classes = 5
        loss = smse_loss(Tensor(np.zeros((t_steps, n_classes))), one_hot(n_classes, 1))
        assert loss.item() == pytest.approx(1 / n_classes)

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(0)
        outputs = rng.random((6, 4))
        target = rng.random(4)
        loss = smse_loss(Tensor(outputs), target)
        assert loss.item() == pytest.approx(oracles.smse_loops(outputs, target), rel=1e-12)

    def test_loss_non_negative(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            loss = smse_loss(Tensor(rng.standard_normal((3, 4))), rng.standard_normal(4))
            assert loss.item() >= 0.0

    def test_differentiable(self):
        outputs = Tensor(np.array([[0.0, 1.0], [1.0, 0.0]]), requires_grad=True)
        smse_loss(outputs, one_hot(2, 0)).backward()
        # d/ds mean((s - g)^2) = 2 (s - g) / (T * C)
        expected = 2 * (outputs.data - np.array([1.0, 0.0])) / 4
        np.testing.assert_allclose(outputs.grad, expected, atol=1e-15)

    def test_dim_mismatch(self):
        from tcja_snn.tensor import ShapeError

        with pytest.raises(ShapeError):
            smse_loss(Tensor(np.zeros((3, 4))), np.zeros(5))


class TestPredict:
    def test_single_class_fires(self):
        outputs = np.zeros((6, 4))
        outputs[:, 2] = 1.0
        assert predict_label(outputs) == 2

    def test_all_zero_breaks_tie_to_class_zero(self):
        assert predict_label(np.zeros((4, 3))) == 0

    def test_tie_breaks_to_lowest_index(self):
        rates = np.array([[0.2, 0.7, 0.7]])
        assert predict_label(rates) == 1


class TestOptimizer:
    def scalar_param(self, value=1.0):
        return [("p", Tensor(np.array([value], dtype=np.float64), requires_grad=True))]

    def test_zero_gradient_keeps_parameters(self):
        params = self.scalar_param()
        params[0][1].grad = np.zeros(1)
        optimizer_step(params, OptimizerState(), TrainConfig(lr=0.1))
        assert params[0][1].data == pytest.approx([1.0])

    def test_first_step_magnitude_close_to_lr(self):
        params = self.scalar_param()
        params[0][1].grad = np.ones(1)
        cfg = TrainConfig(lr=1e-3)
        optimizer_step(params, OptimizerState(), cfg)
        # Bias-corrected first step is lr / (1 + eps-adjustment) ~ lr.
        assert params[0][1].data[0] == pytest.approx(1.0 - cfg.lr, abs=1e-6)

    def test_constant_gradient_step_approaches_lr(self):
        params = self.scalar_param(10.0)
        cfg = TrainConfig(lr=0.01)
        state = OptimizerState()
        prev = params[0][1].data[0]
        for _ in range(50):
            params[0][1].grad = np.ones(1)
            optimizer_step(params, state, cfg)
        step = prev - params[0][1].data[0]
        assert step / 50 == pytest.approx(cfg.lr, rel=1e-3)

    def test_adam_matches_hand_iterated_recurrence(self):
        rng = np.random.default_rng(2)
        grads = rng.standard_normal(5)
        params = self.scalar_param(0.0)
        cfg = TrainConfig(lr=0.05)
        state = OptimizerState()
        m = v = 0.0
        x = 0.0
        for t, g in enumerate(grads, start=1):
            params[0][1].grad = np.array([g])
            optimizer_step(params, state, cfg)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            x -= cfg.lr * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        assert params[0][1].data[0] == pytest.approx(x, rel=1e-12)

    def test_sgd_step(self):
        params = self.scalar_param()
        params[0][1].grad = np.array([2.0])
        optimizer_step(params, OptimizerState(kind="sgd"), TrainConfig(lr=0.1, optimizer="sgd"))
        assert params[0][1].data == pytest.approx([0.8])

    def test_missing_gradient_signals_broken_graph(self):
        with pytest.raises(ValueError, match="missing gradient"):
            optimizer_step(self.scalar_param(), OptimizerState(), TrainConfig())


class TestDescent:
    def test_single_step_decreases_loss_on_smooth_head(self):
        # A net ending in FC (no spiking head) has a smooth loss surface, so
        # a small enough step must strictly reduce a single sample's loss.
        arch = parse_arch("4C3-LIF-MP2-4FC", input_dims=(2, 8, 8), time_steps=4)
        net = build_network(arch, num_classes=4, rng=np.random.default_rng(1), dtype=np.float64)
        sample = tiny_dataset(n_train=1, n_test=1)[0][0]
        x = Tensor(sample.frames)
        cfg = TrainConfig(lr=1e-5, optimizer="sgd", precision="f64")

        def loss_value():
            return smse_loss(net.forward(x), sample.label).item()

        before = loss_value()
        out = net.forward(x)
        loss = smse_loss(out, sample.label)
        loss.backward()
        optimizer_step(net.parameters(), OptimizerState(kind="sgd"), cfg)
        assert loss_value() < before


class TestEvaluate:
    def test_twice_gives_identical_accuracy(self):
        net = tiny_net()
        _, test_samples = tiny_dataset()
        a = evaluate(net, test_samples)
        b = evaluate(net, test_samples)
        assert a.accuracy == b.accuracy
        assert a.per_class == b.per_class

    def test_single_correct_sample_is_full_accuracy(self):
        net = tiny_net()
        _, test_samples = tiny_dataset()
        sample = test_samples[0]
        out = net.forward(Tensor(sample.frames.astype(net.dtype)))
        sample_fixed = FrameSample(frames=sample.frames, label=one_hot(4, predict_label(out)))
        assert evaluate(net, [sample_fixed]).accuracy == 1.0

    def test_accuracy_matches_manual_recount(self):
        net = tiny_net(seed=3)
        _, test_samples = tiny_dataset()
        result = evaluate(net, test_samples)
        manual = 0
        for sample in test_samples:
            out = net.forward(Tensor(sample.frames.astype(net.dtype)))
            manual += int(predict_label(out) == sample.class_index)
        assert result.accuracy == pytest.approx(manual / len(test_samples))

    def test_firing_rates_reported_per_spiking_layer(self):
        net = tiny_net()
        _, test_samples = tiny_dataset()
        result = evaluate(net, test_samples)
        assert set(result.firing_rates) == {"lif0", "lif1"}
        for rate in result.firing_rates.values():
            assert 0.0 <= rate <= 1.0

    def test_detach_reset_toggle_leaves_evaluation_identical(self):
        from tcja_snn.neuron import LifConfig

        _, test_samples = tiny_dataset()
        accs = []
        for detach in (True, False):
            arch = parse_arch("4C3-LIF-MP2-16FC-LIF-Voting", input_dims=(2, 8, 8), time_steps=4)
            net = build_network(
                arch,
                num_classes=4,
                lif_cfg=LifConfig(detach_reset=detach),
                rng=np.random.default_rng(0),
            )
            accs.append(evaluate(net, test_samples).accuracy)
        assert accs[0] == accs[1]


class TestCheckpoint:
    def test_roundtrip_is_byte_identical(self, tmp_path):
        net = tiny_net()
        cfg = TrainConfig()
        ckpt = make_checkpoint(net, cfg, OptimizerState(), np.random.default_rng(0), epoch=3)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, ckpt)
        loaded = load_checkpoint(path)
        path2 = tmp_path / "model2.ckpt"
        save_checkpoint(path2, loaded)
        assert path.read_bytes() == path2.read_bytes()

    def test_restore_reproduces_evaluation(self, tmp_path):
        train_samples, test_samples = tiny_dataset()
        net = tiny_net(seed=5)
        cfg = TrainConfig(epochs=1, batch_size=8)
        rng = np.random.default_rng(cfg.seed)
        train(net, train_samples, test_samples, cfg, rng)
        before = evaluate(net, test_samples).accuracy
        ckpt = make_checkpoint(net, cfg, OptimizerState(), rng, epoch=1)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, ckpt)
        restored, _, _, _, _ = restore_network(load_checkpoint(path))
        after = evaluate(restored, test_samples).accuracy
        assert before == after

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOTMAGIC" + bytes(16))
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_arch_mismatch_rejected(self, tmp_path):
        net = tiny_net()
        ckpt = make_checkpoint(net, TrainConfig(), OptimizerState(), np.random.default_rng(0), 0)
        # Claim a different architecture than the stored tensors.
        broken = Checkpoint(arch="8C3-LIF-MP2-16FC-LIF-Voting", records=ckpt.records)
        with pytest.raises(CheckpointError):
            restore_network(broken)

    def test_rng_state_roundtrips(self, tmp_path):
        net = tiny_net()
        rng = np.random.default_rng(9)
        rng.random(13)  # advance
        ckpt = make_checkpoint(net, TrainConfig(), OptimizerState(), rng, epoch=2)
        _, _, _, rng_state, epoch = restore_network(ckpt)
        fresh = np.random.default_rng(0)
        fresh.bit_generator.state = rng_state
        np.testing.assert_array_equal(fresh.random(5), rng.random(5))
        assert epoch == 2


class TestTrainLoop:
    def test_zero_epochs_gives_empty_history_and_checkpoint(self, tmp_path):
        train_samples, test_samples = tiny_dataset()
        net = tiny_net()
        cfg = TrainConfig(epochs=0)
        result = train(net, train_samples, test_samples, cfg, np.random.default_rng(0),
                       out_dir=tmp_path)
        assert result.history == []
        assert (tmp_path / "metrics.csv").read_text() == "epoch,train_loss,test_acc\n"
        assert (tmp_path / "best.ckpt").exists()
        assert (tmp_path / "last.ckpt").exists()

    def test_initial_loss_in_unit_range(self):
        train_samples, test_samples = tiny_dataset()
        net = tiny_net(seed=11)
        cfg = TrainConfig(epochs=1, batch_size=8)
        result = train(net, train_samples, test_samples, cfg, np.random.default_rng(0))
        assert 0.0 < result.history[0]["train_loss"] < 1.0

    def test_metrics_and_checkpoints_reproducible(self, tmp_path):
        outs = []
        for run in ("a", "b"):
            train_samples, test_samples = tiny_dataset()
            net = tiny_net(seed=2)
            cfg = TrainConfig(epochs=2, batch_size=8, seed=3)
            train(net, train_samples, test_samples, cfg, np.random.default_rng(cfg.seed),
                  out_dir=tmp_path / run)
            outs.append(tmp_path / run)
        a, b = outs
        assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
        assert (a / "best.ckpt").read_bytes() == (b / "best.ckpt").read_bytes()
        assert (a / "last.ckpt").read_bytes() == (b / "last.ckpt").read_bytes()

    def test_nan_aborts_with_batch_index(self):
        # A spiking head squashes NaN to silence, so poison a smooth head.
        train_samples, test_samples = tiny_dataset()
        net = tiny_net(arch_text="4C3-LIF-MP2-4FC")
        net.layers[-1].weight.data[...] = np.nan
        cfg = TrainConfig(epochs=1, batch_size=8)
        with pytest.raises(NumericsError, match="batch 0"):
            train(net, train_samples, test_samples, cfg, np.random.default_rng(0))

    def test_empty_training_set_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            train(tiny_net(), [], [], TrainConfig(), np.random.default_rng(0))

    def test_augmented_training_runs_and_is_deterministic(self):
        from tcja_snn.data import AugmentPolicy, augment

        policy = AugmentPolicy(roll_max=2, cutout_max=3)
        augment_fn = lambda s, r, partner: augment(s, r, policy, partner)
        losses = []
        for _ in range(2):
            train_samples, test_samples = tiny_dataset()
            net = tiny_net(seed=4)
            cfg = TrainConfig(epochs=2, batch_size=8, augment=True)
            result = train(
                net,
                train_samples,
                test_samples,
                cfg,
                np.random.default_rng(cfg.seed),
                augment_fn=augment_fn,
            )
            losses.append([row["train_loss"] for row in result.history])
        assert losses[0] == losses[1]
        assert all(np.isfinite(v) for v in losses[0])
