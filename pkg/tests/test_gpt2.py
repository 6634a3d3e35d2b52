import numpy as np
import pytest

from dtquant import gpt2
from dtquant.container import write_container
from dtquant.errors import ConfigError, ContractError, WeightImportError
from dtquant.gpt2 import GPTConfig, init_random
from dtquant.tensor import Tensor, layer_norm

TOY = GPTConfig(n_layer=2, n_head=4, d_model=32, max_seq_len=64)


def toy_input(rng, B=2, L=10, d=32):
    return Tensor(rng.normal(size=(B, L, d)))


class TestForward:
    def test_residual_identity_with_zero_out_projections(self):
        params = init_random(TOY, seed=0)
        for i in range(TOY.n_layer):
            params[f"blocks.{i}.attn.proj.weight"].data[:] = 0.0
            params[f"blocks.{i}.mlp.proj.weight"].data[:] = 0.0
        rng = np.random.default_rng(1)
        H = toy_input(rng)
        out = gpt2.forward(H, None, params)
        expected = layer_norm(H, params["final_norm.gain"], params["final_norm.bias"])
        assert np.allclose(out.data, expected.data)

    def test_shape_preserved_at_paper_scale(self):
        cfg = GPTConfig()
        params = init_random(cfg, seed=0)
        H = Tensor(np.random.default_rng(2).normal(size=(2, 60, 768)))
        assert gpt2.forward(H, None, params).shape == (2, 60, 768)

    def test_sequence_length_limit(self):
        params = init_random(TOY, seed=0)
        H = Tensor(np.zeros((1, TOY.max_seq_len + 1, 32)))
        with pytest.raises(ContractError):
            gpt2.forward(H, None, params)

    def test_causality_bit_exact(self):
        params = init_random(TOY, seed=3)
        rng = np.random.default_rng(4)
        H = rng.normal(size=(1, 8, 32))
        base = gpt2.forward(Tensor(H), None, params).data
        H2 = H.copy()
        H2[0, 5:] += 7.0
        out = gpt2.forward(Tensor(H2), None, params).data
        assert np.array_equal(out[0, :5], base[0, :5])

    def test_padded_positions_do_not_leak(self):
        params = init_random(TOY, seed=5)
        rng = np.random.default_rng(6)
        H = rng.normal(size=(1, 6, 32))
        pad = np.array([[True, True, False, False, False, False]])
        base = gpt2.forward(Tensor(H), pad, params).data
        H2 = H.copy()
        H2[0, :2] = rng.normal(size=(2, 32))
        out = gpt2.forward(Tensor(H2), pad, params).data
        assert np.array_equal(out[0, 2:], base[0, 2:])

    def test_deterministic_forward(self):
        params = init_random(TOY, seed=7)
        H = Tensor(np.random.default_rng(8).normal(size=(2, 5, 32)))
        a = gpt2.forward(H, None, params).data
        b = gpt2.forward(H, None, params).data
        assert np.array_equal(a, b)


class TestInitRandom:
    def test_same_seed_bit_identical(self):
        a = init_random(TOY, seed=20742)
        b = init_random(TOY, seed=20742)
        for name in a.tensors:
            assert np.array_equal(a[name].data, b[name].data)

    def test_paper_seeds_differ(self):
        a = init_random(TOY, seed=20742)
        b = init_random(TOY, seed=55230)
        assert not np.array_equal(a["blocks.0.attn.qkv.weight"].data,
                                  b["blocks.0.attn.qkv.weight"].data)

    def test_weight_std_near_002(self):
        params = init_random(GPTConfig(), seed=0)
        std = params["blocks.0.attn.proj.weight"].data.std()
        assert abs(std - 0.02) / 0.02 < 0.10

    def test_frozen(self):
        params = init_random(TOY, seed=0)
        assert all(not t.requires_grad for t in params.tensors.values())

    def test_bad_head_split_rejected(self):
        with pytest.raises(ConfigError):
            GPTConfig(n_head=5, d_model=32)


class TestImportWeights:
    def _dump(self, tmp_path, drop=None, reshape=None):
        params = init_random(TOY, seed=9)
        tensors = {k: v.data for k, v in params.tensors.items()}
        if drop:
            del tensors[drop]
        if reshape:
            tensors[reshape] = np.zeros((3, 3))
        path = tmp_path / "weights.bin"
        write_container(path, tensors)
        return path, params

    def test_round_trip(self, tmp_path):
        path, params = self._dump(tmp_path)
        loaded = gpt2.import_weights(path, TOY)
        for name, t in params.tensors.items():
            assert np.array_equal(loaded[name].data, t.data)
            assert not loaded[name].requires_grad

    def test_missing_tensor_named(self, tmp_path):
        path, _ = self._dump(tmp_path, drop="blocks.1.ln_2.bias")
        with pytest.raises(WeightImportError, match="blocks.1.ln_2.bias"):
            gpt2.import_weights(path, TOY)

    def test_shape_mismatch_named(self, tmp_path):
        path, _ = self._dump(tmp_path, reshape="blocks.0.mlp.fc.weight")
        with pytest.raises(WeightImportError, match="expected"):
            gpt2.import_weights(path, TOY)
