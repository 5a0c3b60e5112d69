import math
import struct

import numpy as np
import pytest
import torch
import torch.nn.functional as TF

from barcodemlm.nn import functional as F
from barcodemlm.nn.checkpoint import CheckpointError, load_tensors, manifest_path, read_metadata, save_tensors
from barcodemlm.nn.gradcheck import finite_difference_check
from barcodemlm.nn.optim import AdamW, OptimizerState, adamw_step, linear_schedule, step_schedule

D = torch.float64


def _rand(*shape, seed=0, requires_grad=True):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(*shape, generator=g, dtype=D, requires_grad=requires_grad)


class TestForwardAgainstTorch:
    def test_linear(self):
        x, w, b = _rand(4, 3), _rand(5, 3, seed=1), _rand(5, seed=2)
        torch.testing.assert_close(F.linear(x, w, b), TF.linear(x, w, b))

    def test_layer_norm(self):
        x, w, b = _rand(2, 3, 6), _rand(6, seed=1), _rand(6, seed=2)
        torch.testing.assert_close(F.layer_norm(x, w, b), TF.layer_norm(x, (6,), w, b))

    def test_softmax_stable_for_large_logits(self):
        x = torch.tensor([[1000.0, 1001.0, 999.0]], dtype=D)
        torch.testing.assert_close(F.softmax(x), TF.softmax(x, dim=-1))
        torch.testing.assert_close(F.log_softmax(x), TF.log_softmax(x, dim=-1))

    def test_gelu_exact(self):
        x = _rand(10)
        torch.testing.assert_close(F.gelu(x), TF.gelu(x))

    def test_conv1d(self):
        x, w, b = _rand(2, 5, 12), _rand(4, 5, 3, seed=1), _rand(4, seed=2)
        torch.testing.assert_close(F.conv1d(x, w, b), TF.conv1d(x, w, b))

    def test_max_pool(self):
        x = _rand(2, 3, 9)
        torch.testing.assert_close(F.max_pool1d(x, 2), TF.max_pool1d(x, 2))

    def test_attention_matches_reference(self):
        q, k, v = _rand(2, 4, 5, 8), _rand(2, 4, 5, 8, seed=1), _rand(2, 4, 5, 8, seed=2)
        mask = torch.tensor([[True] * 5, [True, True, True, False, False]])
        ref = TF.scaled_dot_product_attention(q, k, v, attn_mask=mask[:, None, None, :])
        torch.testing.assert_close(F.scaled_dot_product_attention(q, k, v, mask), ref)

    def test_padding_keys_do_not_leak(self):
        q, k, v = _rand(1, 1, 4, 2), _rand(1, 1, 4, 2, seed=1), _rand(1, 1, 4, 2, seed=2)
        mask = torch.tensor([[True, True, False, False]])
        out1 = F.scaled_dot_product_attention(q, k, v, mask)
        v2 = v.detach().clone()
        v2[..., 2:, :] = 1e6
        out2 = F.scaled_dot_product_attention(q, k, v2, mask)
        torch.testing.assert_close(out1, out2)

    def test_batch_norm_train_and_eval(self):
        x = _rand(6, 3, 4)
        w, b = torch.ones(3, dtype=D), torch.zeros(3, dtype=D)
        rm, rv = torch.zeros(3, dtype=D), torch.ones(3, dtype=D)
        rm2, rv2 = rm.clone(), rv.clone()
        out = F.batch_norm(x, w, b, rm, rv, training=True)
        ref = TF.batch_norm(x, rm2, rv2, w, b, training=True)
        torch.testing.assert_close(out, ref)
        torch.testing.assert_close(rm, rm2)
        torch.testing.assert_close(rv, rv2)
        torch.testing.assert_close(
            F.batch_norm(x, w, b, rm, rv, training=False), TF.batch_norm(x, rm2, rv2, w, b, training=False)
        )

    def test_masked_cross_entropy(self):
        logits, targets = _rand(3, 4, 7), torch.randint(0, 7, (3, 4), generator=torch.Generator().manual_seed(0))
        mask = torch.zeros(3, 4, dtype=torch.bool)
        mask[0, 1] = mask[2, 3] = True
        ref = TF.cross_entropy(logits[mask], targets[mask])
        torch.testing.assert_close(F.masked_cross_entropy(logits, targets, mask), ref)


class TestShapeErrors:
    def test_matmul(self):
        with pytest.raises(F.ShapeError, match=r"\(2, 3\)"):
            F.matmul(torch.zeros(2, 3), torch.zeros(4, 2))

    def test_linear(self):
        with pytest.raises(F.ShapeError):
            F.linear(torch.zeros(2, 3), torch.zeros(4, 5))

    def test_conv_too_short(self):
        with pytest.raises(F.ShapeError):
            F.conv1d(torch.zeros(1, 2, 2), torch.zeros(1, 2, 3))

    def test_empty_loss_mask(self):
        with pytest.raises(ValueError, match="no positions"):
            F.masked_cross_entropy(torch.zeros(2, 3), torch.zeros(2, dtype=torch.long), torch.zeros(2, dtype=torch.bool))


class TestDropout:
    def test_eval_identity(self):
        x = _rand(5)
        assert F.dropout(x, 0.5, training=False) is x

    def test_inverted_scaling(self):
        x = torch.ones(20000, dtype=D)
        y = F.dropout(x, 0.8, training=True, generator=torch.Generator().manual_seed(0))
        assert set(torch.unique(y).tolist()) == {0.0, 1.25}
        assert abs(y.mean().item() - 1.0) < 0.02

    def test_bad_keep_prob(self):
        with pytest.raises(ValueError):
            F.dropout(torch.ones(2), 0.0, True)


OP_TOL = 1e-5


def _x34(seed):
    return _rand(3, 4, seed=seed)


def _gen():
    return torch.Generator().manual_seed(11)


# each case: (builder of grad-requiring inputs, loss over those inputs); every input is 3x4-based
GRAD_CASES = {
    "matmul": (lambda: [_x34(0), _rand(4, 3, seed=1)], lambda a, b: (F.matmul(a, b) * _x34(9)[:, :3]).sum()),
    "add": (lambda: [_x34(0), _rand(4, seed=1)], lambda a, b: (F.add(a, b) ** 2).sum()),
    "linear": (lambda: [_x34(0), _rand(2, 4, seed=1), _rand(2, seed=2)],
               lambda x, w, b: (F.linear(x, w, b) ** 2).sum()),
    "embedding": (lambda: [_x34(0)], lambda w: (F.embedding(torch.tensor([[0, 2], [1, 1]]), w) ** 3).sum()),
    "layer_norm": (lambda: [_x34(0), _rand(4, seed=1), _rand(4, seed=2)],
                   lambda x, w, b: (F.layer_norm(x, w, b) * _x34(9)).sum()),
    "softmax": (lambda: [_x34(0)], lambda x: (F.softmax(x) * _x34(9)).sum()),
    "log_softmax": (lambda: [_x34(0)], lambda x: (F.log_softmax(x) * _x34(9)).sum()),
    "attention": (lambda: [_rand(1, 1, 3, 4, seed=s) for s in range(3)],
                  lambda q, k, v: (F.scaled_dot_product_attention(q, k, v, torch.tensor([[True, True, False]]))
                                   * _x34(9).view(1, 1, 3, 4)).sum()),
    "gelu": (lambda: [_x34(0)], lambda x: (F.gelu(x) * _x34(9)).sum()),
    "tanh": (lambda: [_x34(0)], lambda x: (F.tanh(x) * _x34(9)).sum()),
    "relu": (lambda: [_x34(0)], lambda x: (F.relu(x) * _x34(9)).sum()),
    "dropout": (lambda: [_x34(0)], lambda x: (F.dropout(x, 0.7, True, _gen()) * _x34(9)).sum()),
    "conv1d": (lambda: [_rand(1, 3, 4), _rand(2, 3, 2, seed=1), _rand(2, seed=2)],
               lambda x, w, b: (F.conv1d(x, w, b) ** 2).sum()),
    "batch_norm": (lambda: [_x34(0), _rand(4, seed=1), _rand(4, seed=2)],
                   lambda x, w, b: (F.batch_norm(x, w, b, torch.zeros(4, dtype=D), torch.ones(4, dtype=D), True)
                                    * _x34(9)).sum()),
    "max_pool1d": (lambda: [_rand(1, 3, 4)], lambda x: (F.max_pool1d(x, 2) ** 2).sum()),
    "flatten": (lambda: [_rand(3, 2, 2)], lambda x: (F.flatten(x) * _x34(9)).sum()),
    "masked_cross_entropy": (lambda: [_x34(0)], lambda x: F.masked_cross_entropy(
        x, torch.tensor([1, 0, 3]), torch.tensor([True, False, True]))),
}


@pytest.mark.parametrize("name", sorted(GRAD_CASES))
def test_op_gradients_on_3x4_inputs(name):
    build, loss = GRAD_CASES[name]
    params = build()
    n = sum(p.numel() for p in params)
    assert finite_difference_check(lambda: loss(*params), params, probe_count=3 * n) < OP_TOL


def test_quadratic_gradcheck_is_exact():
    p = _rand(10)
    assert finite_difference_check(lambda: 0.5 * (p ** 2).sum(), [p]) < 1e-8


def test_cross_entropy_uniform_logits_is_log_v():
    logits = torch.zeros(5, 258, dtype=D)
    loss = F.masked_cross_entropy(logits, torch.arange(5))
    assert loss.item() == pytest.approx(math.log(258), abs=1e-12)


def test_cross_entropy_one_hot_limit():
    targets = torch.tensor([2, 0])
    logits = 1e4 * TF.one_hot(targets, 4).to(D)
    assert F.masked_cross_entropy(logits, targets).item() < 1e-12


def test_softmax_rows_sum_to_one():
    x = _rand(6, 9, requires_grad=False) * 30
    assert (F.softmax(x).sum(-1) - 1).abs().max().item() < 1e-12


def test_masked_cross_entropy_sum_identity():
    logits, targets = _rand(4, 5, 6), torch.randint(0, 6, (4, 5), generator=torch.Generator().manual_seed(2))
    mask = torch.rand(4, 5, generator=torch.Generator().manual_seed(3)) > 0.4
    per_pos = -TF.log_softmax(logits, -1).gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    total = F.masked_cross_entropy(logits, targets, mask) * mask.sum()
    torch.testing.assert_close(total, per_pos[mask].sum())


def test_masked_positions_get_no_gradient():
    logits = _rand(2, 3, 5)
    mask = torch.tensor([[True, False, False], [False, False, True]])
    F.masked_cross_entropy(logits, torch.zeros(2, 3, dtype=torch.long), mask).backward()
    assert (logits.grad[~mask] == 0).all()


def test_gradcheck_detects_wrong_gradient():
    class Wrong(torch.autograd.Function):
        @staticmethod
        def forward(ctx, x):
            return x ** 2

        @staticmethod
        def backward(ctx, g):
            return g * 3.0

    x = _rand(5)
    assert finite_difference_check(lambda: Wrong.apply(x).sum(), [x]) > 0.1


def test_gradcheck_validation():
    x = _rand(3)
    with pytest.raises(ValueError):
        finite_difference_check(lambda: x.sum(), [x], probe_count=0)
    with pytest.raises(FloatingPointError):
        finite_difference_check(lambda: x.sum() * math.inf, [x])


class TestAdamW:
    def test_scalar_trace(self):
        # hand-unrolled decoupled AdamW on f(x) = x^2 / 2
        lr, b1, b2, eps, wd = 0.1, 0.9, 0.999, 1e-8, 0.01
        x = torch.tensor([1.0], dtype=D)
        state = OptimizerState(lr, b1, b2, eps, wd)
        ref, m, v = 1.0, 0.0, 0.0
        for t in range(1, 6):
            g = ref
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            ref = ref * (1 - lr * wd) - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
            adamw_step([x], [x.clone()], state)
            assert x.item() == pytest.approx(ref, abs=1e-12)
        assert state.step == 5

    def test_matches_torch_adamw(self):
        p1 = _rand(3, 3).detach().requires_grad_()
        p2 = p1.detach().clone().requires_grad_()
        ours = AdamW([p1], lr=1e-2, weight_decay=0.1)
        ref = torch.optim.AdamW([p2], lr=1e-2, weight_decay=0.1)
        for _ in range(4):
            for p, opt in ((p1, ours), (p2, ref)):
                opt.zero_grad()
                (p ** 3).sum().backward()
                opt.step()
        torch.testing.assert_close(p1, p2)

    def test_first_step_is_sign_times_lr(self):
        x = torch.tensor([2.0, -3.0], dtype=D)
        adamw_step([x], [torch.tensor([0.5, -4.0], dtype=D)], OptimizerState(lr=0.01, weight_decay=0.0, eps=0.0))
        torch.testing.assert_close(x, torch.tensor([1.99, -2.99], dtype=D))

    def test_zero_gradient_no_decay_is_identity(self):
        x = _rand(4, requires_grad=False)
        before = x.clone()
        adamw_step([x], [torch.zeros(4, dtype=D)], OptimizerState(lr=0.1, weight_decay=0.0))
        assert torch.equal(x, before)

    def test_zero_gradient_pure_decay(self):
        x = _rand(4, requires_grad=False)
        before = x.clone()
        adamw_step([x], [torch.zeros(4, dtype=D)], OptimizerState(lr=0.1, weight_decay=0.01))
        torch.testing.assert_close(x, before * (1 - 0.1 * 0.01), rtol=0, atol=1e-15)

    def test_non_finite_gradient_named(self):
        x = torch.zeros(2)
        with pytest.raises(FloatingPointError, match="w1"):
            adamw_step([x], [torch.tensor([0.0, math.nan])], OptimizerState(), names=["w1"])

    def test_negative_lr(self):
        with pytest.raises(ValueError):
            adamw_step([torch.zeros(1)], [torch.zeros(1)], OptimizerState(lr=-1))


class TestSchedules:
    def test_linear_endpoints_and_clamp(self):
        assert linear_schedule(0, 100, 1e-4) == 1e-4
        assert linear_schedule(50, 100, 1e-4) == pytest.approx(5e-5)
        assert linear_schedule(100, 100, 1e-4) == 0.0
        assert linear_schedule(150, 100, 1e-4) == 0.0

    @pytest.mark.parametrize("epoch,lr", [(0, 5e-3), (3, 2.5e-3), (7, 1.25e-3)])
    def test_step_examples(self, epoch, lr):
        assert step_schedule(epoch, 5e-3) == pytest.approx(lr, rel=1e-15)

    def test_step_halves_every_three_epochs(self):
        assert [step_schedule(e, 8.0) for e in range(7)] == [8, 8, 8, 4, 4, 4, 2]

    def test_bad_schedule_args(self):
        with pytest.raises(ValueError):
            linear_schedule(0, 0, 1.0)
        with pytest.raises(ValueError):
            step_schedule(-1, 1.0)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        tensors = {"a": np.arange(6.0).reshape(2, 3), "b.c": torch.tensor(2.5), "e": np.zeros((0, 4))}
        path = tmp_path / "x.ckpt"
        save_tensors(path, tensors, {"arch": "demo"})
        back = load_tensors(path)
        assert list(back) == ["a", "b.c", "e"]
        np.testing.assert_array_equal(back["a"], tensors["a"])
        assert back["b.c"].shape == () and back["b.c"] == 2.5
        assert back["e"].shape == (0, 4)
        assert read_metadata(path) == {"arch": "demo"}
        assert "a\t2x3" in manifest_path(path).read_text()

    def test_layout(self, tmp_path):
        path = tmp_path / "x.ckpt"
        save_tensors(path, {"w": np.array([1.5])})
        raw = path.read_bytes()
        assert raw[:8] == b"BMLMCKPT"
        assert struct.unpack_from("<I", raw, 8) == (1,)
        assert raw[-8:] == struct.pack("<d", 1.5)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.ckpt"
        path.write_bytes(b"garbage!")
        with pytest.raises(CheckpointError, match="magic"):
            load_tensors(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "x.ckpt"
        save_tensors(path, {"w": np.ones(10)})
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(CheckpointError):
            load_tensors(path)
