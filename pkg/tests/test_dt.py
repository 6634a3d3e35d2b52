import numpy as np
import pytest

from dtquant.dt import DTConfig, DecisionTransformer, EmbedderSet, WindowBatch, action_loss
from dtquant.errors import ContractError
from dtquant.gpt2 import GPTConfig, init_random
from dtquant.lora import LoRAConfig, attach
from dtquant.tensor import Tensor, finite_difference_grad, layer_norm

GPT_TOY = GPTConfig(n_layer=2, n_head=4, d_model=32, max_seq_len=64)
DT_TOY = DTConfig(state_dim=5, action_dim=3, context_len=8, max_ep_len=100)


def make_model(seed=0, with_lora=True):
    params = init_random(GPT_TOY, seed=seed)
    adapters = None
    if with_lora:
        adapters = attach(params, LoRAConfig(rank=2), seed=seed + 1)
        rng = np.random.default_rng(seed + 2)
        for pair in adapters.values():
            pair.B.data[:] = rng.normal(0, 0.02, size=pair.B.shape)
    embedders = EmbedderSet(DT_TOY, GPT_TOY.d_model, seed=seed + 3)
    return DecisionTransformer(GPT_TOY, DT_TOY, params, embedders, adapters)


def make_batch(seed=0, B=2, K=8, n_pad=0):
    rng = np.random.default_rng(seed)
    pad = np.zeros((B, K), dtype=bool)
    pad[:, :n_pad] = True
    return WindowBatch(
        rtg=rng.normal(size=(B, K, 1)),
        states=rng.normal(size=(B, K, DT_TOY.state_dim)),
        actions=rng.uniform(-1, 1, size=(B, K, DT_TOY.action_dim)),
        timesteps=np.tile(np.arange(K), (B, 1)),
        pad_mask=pad,
    )


class TestEmbedWindow:
    def test_token_count_is_three_per_timestep(self):
        model = make_model()
        H, mask = model.embed_window(make_batch())
        assert H.shape == (2, 24, 32)
        assert mask.shape == (2, 24)

    def test_paper_context_gives_sixty_tokens(self):
        assert DTConfig(state_dim=5, action_dim=3, context_len=20).token_len() == 60

    def test_state_token_position(self):
        # token 3(t-1)+2 (1-based) == index 3t+1 (0-based) holds timestep t's state
        model = make_model()
        batch = make_batch(seed=1)
        H1, _ = model.embed_window(batch)
        batch.states[:, 4] += 5.0
        H2, _ = model.embed_window(batch)
        changed = np.where(np.any(H1.data != H2.data, axis=-1))[1]
        assert set(changed) == {3 * 4 + 1}

    def test_zeroed_mlp_reduces_to_lift_plus_position(self):
        model = make_model(with_lora=False)
        e = model.embedders
        for m in ("rtg", "state", "action"):
            e.tensors[f"{m}.mlp.proj.weight"].data[:] = 0.0
        batch = make_batch(seed=2)
        H, _ = model.embed_window(batch)
        t = e.tensors
        lift = batch.states @ t["state.lift.weight"].data.T + t["state.lift.bias"].data
        p = t["time.weight"].data[batch.timesteps]
        expected = layer_norm(Tensor(lift + p), t["token_norm.gain"], t["token_norm.bias"])
        assert np.allclose(H.data[:, 1::3], expected.data)

    def test_timestep_range_error(self):
        model = make_model()
        batch = make_batch()
        batch.timesteps[:] = DT_TOY.max_ep_len
        with pytest.raises(ContractError):
            model.embed_window(batch)

    def test_pad_mask_replicated(self):
        model = make_model()
        _, mask = model.embed_window(make_batch(n_pad=3))
        assert np.all(mask[:, :9]) and not np.any(mask[:, 9:])


class TestPredictActions:
    def test_output_shape_and_bounds(self):
        model = make_model()
        out = model.predict_actions(make_batch())
        assert out.shape == (2, 8, 3)
        assert np.all(np.abs(out.data) < 1.0)

    def test_causality_over_timesteps(self):
        model = make_model(seed=11)
        batch = make_batch(seed=12)
        base = model.predict_actions(batch).data
        t_cut = 4
        batch.rtg[:, t_cut + 1:] += 3.0
        batch.states[:, t_cut + 1:] += 3.0
        batch.actions[:, t_cut + 1:] = 0.0
        out = model.predict_actions(batch).data
        assert np.array_equal(out[:, :t_cut + 1], base[:, :t_cut + 1])

    def test_return_conditioning_is_live(self):
        model = make_model(seed=13)
        batch = make_batch(seed=14)
        base = model.predict_actions(batch).data
        batch.rtg[:, -1] += 1.0
        out = model.predict_actions(batch).data
        assert not np.array_equal(out[:, -1], base[:, -1])

    def test_padding_neutrality(self):
        model = make_model(seed=15)
        rng = np.random.default_rng(16)
        K, n_real = 8, 5
        rtg = rng.normal(size=(1, n_real, 1))
        states = rng.normal(size=(1, n_real, DT_TOY.state_dim))
        actions = rng.uniform(-1, 1, size=(1, n_real, DT_TOY.action_dim))
        ts = np.arange(n_real).reshape(1, -1)

        short = WindowBatch(rtg, states, actions, ts, np.zeros((1, n_real), bool))
        pad = K - n_real
        padded = WindowBatch(
            np.concatenate([np.zeros((1, pad, 1)), rtg], axis=1),
            np.concatenate([np.zeros((1, pad, DT_TOY.state_dim)), states], axis=1),
            np.concatenate([np.zeros((1, pad, DT_TOY.action_dim)), actions], axis=1),
            np.concatenate([np.zeros((1, pad), int), ts], axis=1),
            np.concatenate([np.ones((1, pad), bool), np.zeros((1, n_real), bool)], axis=1),
        )
        out_short = model.predict_actions(short).data
        out_padded = model.predict_actions(padded).data
        assert np.max(np.abs(out_padded[:, pad:] - out_short)) < 1e-9

    def test_gradients_flow_to_all_groups(self):
        model = make_model(seed=17)
        batch = make_batch(seed=18)
        pred = model.predict_actions(batch)
        action_loss(pred, batch.actions, batch.pad_mask).backward()
        for group, tensors in model.named_trainable_groups().items():
            assert tensors, group
            assert any(t.grad is not None and np.any(t.grad != 0)
                       for t in tensors.values()), group

    def test_parameter_gradient_matches_finite_differences(self):
        model = make_model(seed=19)
        batch = make_batch(seed=20, B=1, K=4)

        def loss():
            return action_loss(model.predict_actions(batch), batch.actions, batch.pad_mask)

        loss().backward()
        # spot-check a few entries in representative trainable tensors
        names = ["embed.state.lift.weight", "embed.head.weight",
                 "blocks.0.attn.qkv.weight.lora_A", "blocks.0.attn.qkv.weight.lora_B"]
        trainables = model.trainable_tensors()
        rng = np.random.default_rng(21)
        for name in names:
            t = trainables[name]
            grad = t.grad.copy()
            flat_idx = rng.choice(t.data.size, size=min(4, t.data.size), replace=False)
            for fi in flat_idx:
                idx = np.unravel_index(fi, t.data.shape)
                orig = t.data[idx]
                h = 1e-6
                t.data[idx] = orig + h
                fp = loss().item()
                t.data[idx] = orig - h
                fm = loss().item()
                t.data[idx] = orig
                fd = (fp - fm) / (2 * h)
                # floor the denominator so near-zero entries are judged absolutely
                denom = max(abs(fd), abs(grad[idx]), 1e-3)
                assert abs(fd - grad[idx]) / denom < 1e-5, name


class TestActionLoss:
    def test_zero_residual(self):
        pred = Tensor(np.ones((2, 3, 2)))
        assert action_loss(pred, np.ones((2, 3, 2)), np.zeros((2, 3), bool)).item() == 0.0

    def test_single_cell_definition(self):
        pred = Tensor(np.full((1, 1, 1), 0.7))
        out = action_loss(pred, np.zeros((1, 1, 1)), np.zeros((1, 1), bool))
        assert abs(out.item() - 0.49) < 1e-12

    def test_matches_explicit_loop(self):
        rng = np.random.default_rng(22)
        B, K, d = 3, 5, 2
        pred = rng.normal(size=(B, K, d))
        target = rng.normal(size=(B, K, d))
        pad = np.zeros((B, K), bool)
        pad[0, :2] = True
        pad[2, :4] = True
        total, n = 0.0, 0
        for b in range(B):
            for t in range(K):
                if pad[b, t]:
                    continue
                for j in range(d):
                    total += (pred[b, t, j] - target[b, t, j]) ** 2
                    n += 1
        expected = total / n
        out = action_loss(Tensor(pred), target, pad)
        assert abs(out.item() - expected) < 1e-12

    def test_fully_padded_rejected(self):
        with pytest.raises(ContractError):
            action_loss(Tensor(np.zeros((1, 2, 1))), np.zeros((1, 2, 1)),
                        np.ones((1, 2), bool))
