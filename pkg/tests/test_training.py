import numpy as np
import pytest

from dtquant.dataset import fit_normalizer
from dtquant.dt import DTConfig
from dtquant.env import EnvConfig, scripted_expert
from dtquant.errors import ConfigError, ContractError
from dtquant.gpt2 import GPTConfig
from dtquant.lora import LoRAConfig
from dtquant.market import compute_indicators
from dtquant.synth import generate_panel
from dtquant.tensor import Tensor
from dtquant.training import (
    AdamState,
    BCPolicy,
    Checkpoint,
    TrainConfig,
    adam_step,
    build_dt_model,
    choose_bc_hidden,
    clip_gradients,
    load_bc_model,
    load_dt_model,
    train_bc,
    train_dt,
)

GPT_TOY = GPTConfig(n_layer=2, n_head=4, d_model=32, max_seq_len=64)


def toy_dataset(seed=0, n_days=70):
    panel = compute_indicators(generate_panel("gbm", 2, n_days, seed))
    traj, _ = scripted_expert("momentum", panel, EnvConfig())
    stats = fit_normalizer([traj])
    return [traj], stats, panel


def toy_model(trajs, seed=0):
    d_s = trajs[0].states.shape[1]
    d_a = trajs[0].actions.shape[1]
    dt_config = DTConfig(state_dim=d_s, action_dim=d_a, context_len=8, max_ep_len=512)
    return build_dt_model(GPT_TOY, dt_config, LoRAConfig(rank=2), seed)


class TestAdam:
    def test_first_step_magnitude_is_lr(self):
        w = Tensor(np.array([1.0]), requires_grad=True)
        w.grad = np.array([1.0])
        cfg = TrainConfig(learning_rate=0.01, weight_decay=0.0)
        adam_step({"w": w}, AdamState(), cfg)
        # bias-corrected first step moves by ~lr regardless of gradient scale
        assert abs((1.0 - w.data[0]) - 0.01) < 1e-6

    def test_zero_gradient_is_fixed_point(self):
        w = Tensor(np.array([2.5]), requires_grad=True)
        w.grad = np.array([0.0])
        adam_step({"w": w}, AdamState(), TrainConfig(weight_decay=0.0))
        assert w.data[0] == 2.5

    def test_scalar_quadratic_convergence(self):
        cfg = TrainConfig(learning_rate=0.1, weight_decay=0.0)
        w = Tensor(np.array([0.0]), requires_grad=True)
        opt = AdamState()
        # independent oracle: replay the same recurrence in plain floats
        m = v = 0.0
        w_ref = 0.0
        for t in range(1, 101):
            g = 2.0 * (w.data[0] - 3.0)
            w.grad = np.array([g])
            adam_step({"w": w}, opt, cfg)
            g_ref = 2.0 * (w_ref - 3.0)
            m = 0.9 * m + 0.1 * g_ref
            v = 0.999 * v + 0.001 * g_ref * g_ref
            w_ref -= 0.1 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert abs(w.data[0] - w_ref) < 1e-12
        assert abs(w.data[0] - 3.0) < 0.1

    def test_nan_gradient_aborts_with_name(self):
        w = Tensor(np.array([1.0]), requires_grad=True)
        w.grad = np.array([np.nan])
        with pytest.raises(ContractError, match="badparam"):
            adam_step({"badparam": w}, AdamState(), TrainConfig())

    def test_frozen_param_untouched(self):
        w = Tensor(np.array([1.0]), requires_grad=False)
        adam_step({"w": w}, AdamState(), TrainConfig())
        assert w.data[0] == 1.0

    def test_clip_rescales_global_norm(self):
        a = Tensor(np.array([3.0]), requires_grad=True)
        b = Tensor(np.array([4.0]), requires_grad=True)
        a.grad = np.array([3.0])
        b.grad = np.array([4.0])
        norm = clip_gradients({"a": a, "b": b}, 1.0)
        assert abs(norm - 5.0) < 1e-12
        assert abs(np.hypot(a.grad[0], b.grad[0]) - 1.0) < 1e-12


class TestTrainDT:
    def test_loss_decreases_and_checkpoint_round_trips(self, tmp_path):
        trajs, stats, _ = toy_dataset()
        model = toy_model(trajs, seed=1)
        cfg = TrainConfig(batch_size=16, iterations=60, seed=1)
        ckpt, losses = train_dt(trajs, model, cfg, stats)
        assert len(losses) == 60
        assert np.mean(losses[-10:]) < np.mean(losses[:10])

        ckpt.save(tmp_path / "ckpt")
        again = Checkpoint.load(tmp_path / "ckpt")
        restored = load_dt_model(again)
        from dtquant.dataset import WindowSampler
        batch = WindowSampler(trajs, model.dt_config.context_len, stats, 7).sample_batch(4)
        assert np.array_equal(model.predict_actions(batch).data,
                              restored.predict_actions(batch).data)

    def test_same_seed_bit_identical_checkpoints(self, tmp_path):
        trajs, stats, _ = toy_dataset()
        cfg = TrainConfig(batch_size=8, iterations=25, seed=20742)
        for name in ("a", "b"):
            model = toy_model(trajs, seed=3)
            ckpt, _ = train_dt(trajs, model, cfg, stats)
            ckpt.save(tmp_path / name)
        assert ((tmp_path / "a" / "model.bin").read_bytes()
                == (tmp_path / "b" / "model.bin").read_bytes())
        assert ((tmp_path / "a" / "config.json").read_bytes()
                == (tmp_path / "b" / "config.json").read_bytes())

    def test_frozen_backbone_unchanged_by_training(self):
        trajs, stats, _ = toy_dataset()
        model = toy_model(trajs, seed=4)
        before = {k: v.data.copy() for k, v in model.params.tensors.items()}
        train_dt(trajs, model, TrainConfig(batch_size=8, iterations=20, seed=0), stats)
        for k, v in model.params.tensors.items():
            assert np.array_equal(v.data, before[k]), k

    def test_only_trainables_change(self):
        trajs, stats, _ = toy_dataset()
        model = toy_model(trajs, seed=5)
        trainable_before = {k: v.data.copy() for k, v in model.trainable_tensors().items()}
        train_dt(trajs, model, TrainConfig(batch_size=8, iterations=20, seed=0), stats)
        changed = [k for k, v in model.trainable_tensors().items()
                   if not np.array_equal(v.data, trainable_before[k])]
        assert changed


class TestTrainBC:
    def test_param_budget_and_learning(self):
        trajs, stats, _ = toy_dataset()
        target = 50_000
        ckpt, losses = train_bc(trajs, TrainConfig(batch_size=16, iterations=80, seed=0),
                                stats, target_param_count=target)
        assert abs(ckpt.sidecar["param_count"] - target) <= 0.10 * target
        assert np.mean(losses[-10:]) < np.mean(losses[:10])

    def test_bc_ignores_history_by_construction(self):
        model = BCPolicy(state_dim=4, action_dim=2, hidden=(8, 8), seed=0)
        s = np.random.default_rng(0).normal(size=(1, 4))
        a1 = model.predict(s).data
        a2 = model.predict(s).data
        assert np.array_equal(a1, a2)
        assert model.predict(np.vstack([s, s * 2])).data.shape == (2, 2)

    def test_bc_checkpoint_round_trip(self, tmp_path):
        trajs, stats, _ = toy_dataset()
        ckpt, _ = train_bc(trajs, TrainConfig(batch_size=8, iterations=10, seed=0),
                           stats, target_param_count=10_000)
        ckpt.save(tmp_path / "bc")
        model = load_bc_model(Checkpoint.load(tmp_path / "bc"))
        s = stats.normalize_states(trajs[0].states[:3])
        out = model.predict(s).data
        assert out.shape == (3, trajs[0].actions.shape[1])
        assert np.all(np.abs(out) < 1.0)

    def test_choose_bc_hidden_matches_formula(self):
        h = choose_bc_hidden(900_000, state_dim=175, action_dim=29)
        count = (175 + 1) * h[0] + (h[0] + 1) * h[0] + (h[0] + 1) * 29
        assert abs(count - 900_000) <= 0.10 * 900_000

    def test_impossible_budget_rejected(self):
        with pytest.raises(ConfigError):
            choose_bc_hidden(10, state_dim=1000, action_dim=1000)


class TestTrainConfig:
    def test_rejects_nonpositive(self):
        with pytest.raises(ConfigError):
            TrainConfig(iterations=0)
