import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from maskgram.errors import ConfigError, ContractError, NumericError
from maskgram.nn import tensor as tt
from maskgram.nn.layers import forward_transformer, init_block, sinusoidal_pe
from maskgram.nn.losses import masked_cross_entropy, mse_loss
from maskgram.nn.optim import AdamState, adam_step
from maskgram.nn.tensor import Tensor, backward, grad_map, no_grad

finite = st.floats(-5, 5, allow_nan=False, width=64)


def numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        o = flat[i]
        flat[i] = o + h
        up = f()
        flat[i] = o - h
        down = f()
        flat[i] = o
        gf[i] = (up - down) / (2 * h)
    return g


class TestAutodiff:
    def test_sum_gives_ones(self):
        p = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        g = grad_map(p.sum(), {"p": p})
        assert np.array_equal(g["p"], np.ones((2, 3)))

    def test_mse_against_detached_self_is_zero(self):
        p = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
        g = grad_map(mse_loss(p, p.detach()), {"p": p})
        assert np.array_equal(g["p"], np.zeros(3))

    def test_unreachable_param_gets_zero(self):
        a = Tensor(np.ones(3), requires_grad=True)
        b = Tensor(np.ones(2), requires_grad=True)
        g = grad_map((a * 2.0).sum(), {"a": a, "b": b})
        assert np.array_equal(g["b"], np.zeros(2))
        assert np.array_equal(g["a"], np.full(3, 2.0))

    def test_shared_subexpression_accumulates(self):
        x = Tensor(np.array([3.0]), requires_grad=True)
        y = x * x + x
        g = grad_map(y.sum(), {"x": x})
        assert g["x"][0] == pytest.approx(7.0)

    def test_no_grad_records_nothing(self):
        x = Tensor(np.ones(2), requires_grad=True)
        with no_grad():
            y = x * 3.0
        assert not y.requires_grad

    @pytest.mark.parametrize("op", ["gelu", "tanh", "softmax", "layer_norm", "matmul", "embedding"])
    def test_ops_match_finite_differences(self, op):
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
        w = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
        gain = Tensor(rng.normal(size=4), requires_grad=True)
        bias = Tensor(rng.normal(size=4), requires_grad=True)
        idx = np.array([[0, 2, 2], [1, 0, 3]])
        proj = rng.normal(size=(2, 3, 5))

        def build():
            if op == "gelu":
                out = tt.gelu(x)
            elif op == "tanh":
                out = tt.tanh(x)
            elif op == "softmax":
                out = tt.softmax(x)
            elif op == "layer_norm":
                out = tt.layer_norm(x, gain, bias)
            elif op == "matmul":
                return (tt.matmul(x, w) * proj).sum()
            else:
                return (tt.embedding(w, idx) * proj).sum()
            return (out * np.cos(np.arange(out.data.size)).reshape(out.shape)).sum()

        params = {"x": x, "w": w, "gain": gain, "bias": bias}
        grads = grad_map(build(), params)
        for name, p in params.items():
            num = numeric_grad(lambda: float(build().data), p.data)
            np.testing.assert_allclose(grads[name], num, rtol=1e-5, atol=1e-7, err_msg=name)

    def test_float32_gelu_tracks_exact_erf(self):
        x = np.linspace(-6, 6, 10001)
        exact = tt.gelu(Tensor(x)).data
        fast = tt.gelu(Tensor(x.astype(np.float32))).data
        assert fast.dtype == np.float32
        assert np.abs(fast - exact).max() < 2e-6

    @given(arrays(np.float64, (3, 5), elements=finite))
    def test_softmax_rows_sum_to_one(self, x):
        y = tt.softmax(Tensor(x)).data
        np.testing.assert_allclose(y.sum(-1), 1.0, atol=1e-6)

    @given(arrays(np.float64, (2, 4), elements=finite), arrays(np.float64, (4,), elements=finite))
    def test_broadcast_add_grad_shapes(self, a, b):
        ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
        g = grad_map((ta + tb).sum(), {"a": ta, "b": tb})
        assert np.array_equal(g["b"], np.full(4, 2.0))
        assert g["a"].shape == a.shape


class TestLayers:
    def test_pe_first_row(self):
        assert np.array_equal(sinusoidal_pe(1, 4)[0], [0.0, 1.0, 0.0, 1.0])

    def test_pe_second_row_d2(self):
        np.testing.assert_allclose(sinusoidal_pe(2, 2)[1], [math.sin(1), math.cos(1)])

    def test_pe_odd_width_rejected(self):
        with pytest.raises(ConfigError):
            sinusoidal_pe(3, 5)

    @given(st.integers(1, 50), st.integers(1, 16))
    def test_pe_range(self, T, half):
        pe = sinusoidal_pe(T, 2 * half)
        assert np.all(np.abs(pe) <= 1.0)

    def _params(self, d=8, blocks=2, seed=0):
        rng = np.random.default_rng(seed)
        arrays = {}
        for i in range(blocks):
            arrays.update(init_block(rng, f"s/block{i}", d, 4, np.float64))
        # generic weights so the permutation check is not trivially satisfied
        return {k: Tensor(v + rng.normal(0, 0.3, v.shape), requires_grad=True) for k, v in arrays.items()}

    def test_zero_blocks_is_identity(self):
        x = Tensor(np.random.default_rng(1).normal(size=(5, 8)))
        out = forward_transformer({}, x, "s", range(0), 2)
        assert np.array_equal(out.data, x.data)

    def test_shape_preserved(self):
        p = self._params()
        x = Tensor(np.random.default_rng(1).normal(size=(3, 7, 8)))
        assert forward_transformer(p, x, "s", range(2), 2).shape == (3, 7, 8)

    def test_permutation_equivariance(self):
        p = self._params()
        x = np.random.default_rng(2).normal(size=(5, 8))
        perm = np.array([3, 0, 4, 1, 2])
        a = forward_transformer(p, Tensor(x), "s", range(2), 2).data
        b = forward_transformer(p, Tensor(x[perm]), "s", range(2), 2).data
        np.testing.assert_allclose(a[perm], b, atol=1e-12)

    def test_nonfinite_activation_names_block(self):
        p = self._params()
        p["s/block1/mlp/b2"] = Tensor(np.full(8, np.inf))
        with pytest.raises(NumericError, match="block 1"):
            forward_transformer(p, Tensor(np.zeros((2, 8))), "s", range(2), 2)

    def test_missing_block_is_config_error(self):
        with pytest.raises(ConfigError):
            forward_transformer(self._params(blocks=1), Tensor(np.zeros((2, 8))), "s", range(2), 2)


class TestLosses:
    def test_uniform_logits(self):
        loss = masked_cross_entropy(Tensor(np.zeros((2, 3, 64))), np.zeros((2, 3), int))
        assert float(loss.data) == pytest.approx(math.log(64))

    def test_confident_target(self):
        logits = np.zeros((1, 4))
        logits[0, 2] = 30.0
        assert float(masked_cross_entropy(Tensor(logits), np.array([2])).data) < 1e-9

    def test_only_masked_positions_count(self):
        rng = np.random.default_rng(0)
        logits = rng.normal(size=(1, 5, 4))
        targets = np.array([[0, 3, 1, 2, 2]])
        mask = np.array([[False, True, False, True, False]])
        z = logits - logits.max(-1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(-1, keepdims=True))
        a, b = -logp[0, 1, 3], -logp[0, 3, 2]
        got = float(masked_cross_entropy(Tensor(logits), targets, mask).data)
        assert got == pytest.approx((a + b) / 2, rel=1e-12)

    def test_empty_mask_flags(self):
        out = masked_cross_entropy(Tensor(np.zeros((1, 3, 4))), np.zeros((1, 3), int),
                                   np.zeros((1, 3), bool))
        assert float(out.data) == 0.0 and out.empty

    def test_mask_sentinel_in_targets_rejected(self):
        with pytest.raises(ContractError):
            masked_cross_entropy(Tensor(np.zeros((1, 2, 4))), np.array([[4, 0]]))

    def test_mse_examples(self):
        assert float(mse_loss(Tensor(np.ones(3)), np.ones(3)).data) == 0.0
        assert float(mse_loss(Tensor(np.ones((2, 2)) + 1), np.ones((2, 2))).data) == 1.0
        assert float(mse_loss(Tensor(np.array([1.0, 2.0])), np.zeros(2)).data) == 2.5

    def test_mse_shape_mismatch(self):
        with pytest.raises(ContractError):
            mse_loss(Tensor(np.ones(3)), np.ones(4))

    @settings(max_examples=30)
    @given(arrays(np.float64, (2, 3, 5), elements=finite), st.integers(0, 2**31))
    def test_ce_nonnegative_and_order_invariant(self, logits, seed):
        rng = np.random.default_rng(seed)
        targets = rng.integers(0, 5, size=(2, 3))
        mask = rng.uniform(size=(2, 3)) < 0.6
        a = float(masked_cross_entropy(Tensor(logits), targets, mask).data)
        b = float(masked_cross_entropy(Tensor(logits[::-1].copy()), targets[::-1], mask[::-1]).data)
        assert a >= 0.0
        assert a == pytest.approx(b, abs=1e-6)


class TestAdam:
    def _p(self):
        return {"w": Tensor(np.array([1.0, -2.0]), requires_grad=True)}

    def test_zero_grad_leaves_params(self):
        p = self._p()
        adam_step(p, {"w": np.zeros(2)}, AdamState(), 1e-3)
        assert np.array_equal(p["w"].data, [1.0, -2.0])

    def test_first_step_moves_by_lr(self):
        p = self._p()
        state = adam_step(p, {"w": np.array([0.5, -3.0])}, AdamState(), 1e-3)
        np.testing.assert_allclose(p["w"].data, [1.0 - 1e-3, -2.0 + 1e-3], rtol=1e-6)
        assert state.step == 1

    def test_zero_lr_is_fixed_point(self):
        p = self._p()
        adam_step(p, {"w": np.array([0.5, -3.0])}, AdamState(), 0.0)
        assert np.array_equal(p["w"].data, [1.0, -2.0])

    def test_nonfinite_grad_names_param(self):
        p = self._p()
        with pytest.raises(NumericError, match="'w'"):
            adam_step(p, {"w": np.array([np.nan, 0.0])}, AdamState(), 1e-3)
        assert np.array_equal(p["w"].data, [1.0, -2.0])

    def test_update_does_not_mutate_snapshots(self):
        p = self._p()
        before = p["w"].data
        adam_step(p, {"w": np.ones(2)}, AdamState(), 1e-2)
        assert np.array_equal(before, [1.0, -2.0])


def test_backward_requires_scalar_or_grad():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        backward(x * 2.0)
