"""Tests for the matrix autodiff engine.

Analytic gradients are checked against independent oracles: hand-derived
closed forms where small, central finite differences everywhere else.
"""

import numpy as np
import pytest

from oan import diffcore as dc
from oan.errors import (
    ConfigError,
    DegenerateVectorError,
    DeterminismError,
    InsufficientPairsError,
    NumericError,
    ShapeError,
)


class TestTensorBasics:
    def test_scalar_promotes_to_1x1(self):
        t = dc.Tensor(3.5)
        assert t.shape == (1, 1)
        assert t.item() == 3.5

    def test_vector_promotes_to_row(self):
        t = dc.Tensor([1.0, 2.0, 3.0])
        assert t.shape == (1, 3)

    def test_3d_rejected(self):
        with pytest.raises(ShapeError):
            dc.Tensor(np.zeros((2, 2, 2)))

    def test_item_rejects_non_scalar(self):
        with pytest.raises(ShapeError):
            dc.Tensor([[1.0, 2.0]]).item()

    def test_data_is_float64_contiguous(self):
        t = dc.Tensor(np.arange(6, dtype=np.int32).reshape(2, 3).T)
        assert t.data.dtype == np.float64
        assert t.data.flags["C_CONTIGUOUS"]

    def test_detach_is_independent(self):
        t = dc.Tensor([[1.0, 2.0]], requires_grad=True)
        d = t.detach()
        d.data[0, 0] = 99.0
        assert t.data[0, 0] == 1.0
        assert not d.requires_grad


class TestForwardValues:
    def test_matmul_identity(self):
        a = dc.Tensor(np.arange(6.0).reshape(2, 3))
        eye = dc.Tensor(np.eye(3))
        np.testing.assert_array_equal((a @ eye).data, a.data)

    def test_matmul_hand_product(self):
        a = dc.Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = dc.Tensor([[5.0, 6.0], [7.0, 8.0]])
        np.testing.assert_array_equal((a @ b).data, [[19.0, 22.0], [43.0, 50.0]])

    def test_matmul_shape_mismatch(self):
        with pytest.raises(ShapeError):
            dc.matmul(dc.Tensor(np.zeros((2, 3))), dc.Tensor(np.zeros((2, 3))))

    def test_add_broadcast_row(self):
        a = dc.Tensor(np.zeros((3, 2)))
        b = dc.Tensor([[1.0, 2.0]])
        out = dc.add(a, b)
        np.testing.assert_array_equal(out.data, np.tile([1.0, 2.0], (3, 1)))

    def test_add_incompatible(self):
        with pytest.raises(ShapeError):
            dc.add(dc.Tensor(np.zeros((3, 2))), dc.Tensor(np.zeros((2, 2))))

    def test_scalar_sugar(self):
        t = dc.Tensor([[2.0]])
        assert (t + 1).item() == 3.0
        assert (1 + t).item() == 3.0
        assert (t - 1).item() == 1.0
        assert (5 - t).item() == 3.0
        assert (t * 3).item() == 6.0
        assert (-t).item() == -2.0

    def test_log_rejects_nonpositive(self):
        with pytest.raises(NumericError):
            dc.log(dc.Tensor([[1.0, 0.0]]))

    def test_clamp_values(self):
        out = dc.clamp(dc.Tensor([[-2.0, 0.5, 9.0]]), 0.0, 1.0)
        np.testing.assert_array_equal(out.data, [[0.0, 0.5, 1.0]])

    def test_clamp_bad_bounds(self):
        with pytest.raises(ConfigError):
            dc.clamp(dc.Tensor([[0.0]]), 1.0, 1.0)

    def test_relu(self):
        out = dc.relu(dc.Tensor([[-1.0, 0.0, 2.0]]))
        np.testing.assert_array_equal(out.data, [[0.0, 0.0, 2.0]])

    def test_sum_and_mean(self):
        t = dc.Tensor([[1.0, 2.0], [3.0, 4.0]])
        assert t.sum().item() == 10.0
        assert t.mean().item() == 2.5

    def test_take_rows_with_repeats(self):
        t = dc.Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = dc.take_rows(t, [1, 0, 1])
        np.testing.assert_array_equal(out.data, [[3.0, 4.0], [1.0, 2.0], [3.0, 4.0]])

    def test_take_rows_out_of_range(self):
        with pytest.raises(IndexError):
            dc.take_rows(dc.Tensor(np.zeros((2, 2))), [2])

    def test_pick_columns(self):
        t = dc.Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = dc.pick_columns(t, [1, 0])
        np.testing.assert_array_equal(out.data, [[2.0], [3.0]])

    def test_pick_columns_needs_one_per_row(self):
        with pytest.raises(ShapeError):
            dc.pick_columns(dc.Tensor(np.zeros((2, 2))), [0])

    def test_log_softmax_hand_row(self):
        # softmax([0, ln 3]) = (1/4, 3/4)
        out = dc.log_softmax_rows(dc.Tensor([[0.0, np.log(3.0)]]))
        np.testing.assert_allclose(out.data, [[-np.log(4.0), np.log(0.75)]], atol=1e-15)

    def test_log_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(42)
        x = dc.Tensor(rng.normal(size=(7, 5)) * 50.0)
        out = dc.log_softmax_rows(x)
        np.testing.assert_allclose(np.exp(out.data).sum(axis=1), np.ones(7), atol=1e-12)

    def test_log_softmax_shift_invariance(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(4, 6))
        a = dc.log_softmax_rows(dc.Tensor(x)).data
        b = dc.log_softmax_rows(dc.Tensor(x + 1000.0)).data
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_log_softmax_rejects_nan(self):
        with pytest.raises(NumericError):
            dc.log_softmax_rows(dc.Tensor([[np.nan, 0.0]]))

    def test_l2_normalize_345(self):
        out = dc.l2_normalize_rows(dc.Tensor([[3.0, 4.0]]))
        np.testing.assert_allclose(out.data, [[0.6, 0.8]], atol=1e-15)

    def test_l2_normalize_unit_norms(self):
        rng = np.random.default_rng(3)
        out = dc.l2_normalize_rows(dc.Tensor(rng.normal(size=(20, 9))))
        np.testing.assert_allclose((out.data ** 2).sum(axis=1), np.ones(20), atol=1e-12)

    def test_l2_normalize_rejects_zero_row(self):
        with pytest.raises(DegenerateVectorError):
            dc.l2_normalize_rows(dc.Tensor([[1.0, 0.0], [0.0, 0.0]]))

    def test_pairwise_sq_dist_345(self):
        out = dc.pairwise_sq_dist(dc.Tensor([[0.0, 0.0], [3.0, 4.0]]))
        np.testing.assert_allclose(out.data, [[0.0, 25.0], [25.0, 0.0]], atol=1e-12)

    def test_pairwise_sq_dist_brute_force(self):
        rng = np.random.default_rng(11)
        a = rng.normal(size=(10, 6))
        out = dc.pairwise_sq_dist(dc.Tensor(a)).data
        want = np.zeros((10, 10))
        for i in range(10):
            for j in range(10):
                diff = a[i] - a[j]
                want[i, j] = float(diff @ diff)
        np.testing.assert_allclose(out, want, atol=1e-10)

    def test_pairwise_sq_dist_exact_symmetry_zero_diag(self):
        rng = np.random.default_rng(5)
        out = dc.pairwise_sq_dist(dc.Tensor(rng.normal(size=(17, 8)))).data
        assert out.tobytes() == out.T.copy(order="C").tobytes()
        assert np.all(np.diag(out) == 0.0)
        assert np.all(out >= 0.0)

    def test_pairwise_needs_two_rows(self):
        with pytest.raises(InsufficientPairsError):
            dc.pairwise_sq_dist(dc.Tensor([[1.0, 2.0]]))


class TestBackward:
    def test_matmul_grads_hand(self):
        # f = sum(A @ B): dA = ones @ B^T, dB = A^T @ ones
        rng = np.random.default_rng(42)
        a = dc.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = dc.Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        with dc.Tape() as tape:
            out = (a @ b).sum()
        tape.backward(out)
        ones = np.ones((3, 2))
        np.testing.assert_allclose(a.grad, ones @ b.data.T, atol=1e-12)
        np.testing.assert_allclose(b.grad, a.data.T @ ones, atol=1e-12)

    def test_backward_requires_scalar(self):
        a = dc.Tensor(np.ones((2, 2)), requires_grad=True)
        with dc.Tape() as tape:
            out = a + a
        with pytest.raises(ShapeError):
            tape.backward(out)

    def test_grad_accumulates_across_uses(self):
        a = dc.Tensor([[2.0]], requires_grad=True)
        with dc.Tape() as tape:
            out = (a * a).sum()  # d/da (a^2) = 2a
        tape.backward(out)
        np.testing.assert_allclose(a.grad, [[4.0]])

    def test_unused_tracked_tensor_gets_zero_grad(self):
        a = dc.Tensor([[1.0]], requires_grad=True)
        b = dc.Tensor([[5.0]], requires_grad=True)
        with dc.Tape() as tape:
            out = (a * a).sum()
            _side = dc.scale(b, 2.0)  # on tape, not reachable from out
        tape.backward(out)
        np.testing.assert_array_equal(b.grad, [[0.0]])

    def test_backward_reruns_identically_after_zeroing(self):
        a = dc.Tensor([[3.0]], requires_grad=True)
        with dc.Tape() as tape:
            out = dc.scale(a, 5.0)
        tape.backward(out)
        g1 = a.grad.copy()
        a.zero_grad()
        out.zero_grad()
        tape.backward(out)
        np.testing.assert_array_equal(a.grad, g1)
        np.testing.assert_array_equal(a.grad, [[5.0]])

    def test_constant_inputs_get_no_grad(self):
        a = dc.Tensor([[1.0, 2.0]], requires_grad=False)
        with dc.Tape() as tape:
            out = dc.scale(a, 3.0).sum()
        tape.backward(out)
        assert a.grad is None

    def test_replay_is_bit_exact(self):
        rng = np.random.default_rng(9)
        a = dc.Tensor(rng.normal(size=(5, 3)), requires_grad=True)
        with dc.Tape() as tape:
            h = dc.l2_normalize_rows(a)
            out = dc.exp(dc.scale(dc.pairwise_sq_dist(h), -1.0)).sum()
        before = out.data.tobytes()
        tape.replay()
        assert out.data.tobytes() == before

    def test_replay_picks_up_leaf_updates(self):
        a = dc.Tensor([[2.0]], requires_grad=True)
        with dc.Tape() as tape:
            out = (a * a).sum()
        a.data[0, 0] = 3.0
        tape.replay()
        assert out.item() == 9.0


class TestGradCheckOracle:
    """Finite differences as the independent oracle for every op's vjp."""

    def test_sum_of_squares_tight(self):
        a = dc.Tensor(np.random.default_rng(0).normal(size=(4, 3)), requires_grad=True)
        report = dc.grad_check(lambda t: (t * t).sum(), [a], step=1e-5, tolerance=1e-4)
        assert report.passed
        assert report.max_rel_err < 1e-8

    def test_constant_function_zero_grad(self):
        a = dc.Tensor(np.ones((2, 2)), requires_grad=True)
        report = dc.grad_check(lambda t: dc.scale(t, 0.0).sum(), [a])
        assert report.passed
        assert report.max_rel_err == 0.0

    @pytest.mark.parametrize(
        "name,fn,shape",
        [
            ("matmul", lambda t: (t @ dc.transpose(t)).sum(), (4, 3)),
            ("add_bcast", lambda t: dc.add(t, dc.Tensor(np.arange(3.0))).sum(), (4, 3)),
            ("sub", lambda t: dc.sub(dc.scale(t, 2.0), t).sum(), (3, 3)),
            ("mul", lambda t: dc.mul(t, dc.add_scalar(t, 1.0)).sum(), (3, 4)),
            ("exp", lambda t: dc.exp(dc.scale(t, 0.5)).sum(), (3, 3)),
            ("log", lambda t: dc.log(dc.exp(t)).sum(), (2, 5)),
            ("softmax", lambda t: dc.mul(dc.log_softmax_rows(t), dc.log_softmax_rows(t)).sum(), (4, 5)),
            ("l2norm", lambda t: dc.mul(dc.l2_normalize_rows(t), dc.l2_normalize_rows(t) + 1.0).sum(), (5, 4)),
            ("pairwise", lambda t: dc.exp(dc.scale(dc.pairwise_sq_dist(t), -0.5)).sum(), (6, 3)),
            ("take_rows", lambda t: dc.mul(dc.take_rows(t, [2, 0, 2, 1]), dc.take_rows(t, [2, 0, 2, 1])).sum(), (4, 3)),
            ("pick_cols", lambda t: dc.mul(dc.pick_columns(t, [1, 0, 2]), dc.pick_columns(t, [1, 0, 2])).sum(), (3, 4)),
            ("transpose", lambda t: (dc.transpose(t) @ t).sum(), (4, 3)),
        ],
    )
    def test_op_gradients_match_fd(self, name, fn, shape):
        rng = np.random.default_rng(hash(name) % (2**32))
        t = dc.Tensor(rng.normal(size=shape), requires_grad=True)
        report = dc.grad_check(fn, [t], step=1e-5, tolerance=1e-4)
        assert report.passed, f"{name}: {report}"

    def test_relu_away_from_kink(self):
        rng = np.random.default_rng(21)
        vals = rng.normal(size=(4, 4))
        vals[np.abs(vals) < 0.1] = 0.5  # keep FD probes off the kink
        t = dc.Tensor(vals, requires_grad=True)
        report = dc.grad_check(lambda x: dc.mul(dc.relu(x), dc.relu(x)).sum(), [t])
        assert report.passed

    def test_clamp_away_from_edges(self):
        t = dc.Tensor([[0.2, 0.5, -3.0, 3.0]], requires_grad=True)
        report = dc.grad_check(lambda x: dc.mul(dc.clamp(x, -1.0, 1.0), dc.clamp(x, -1.0, 1.0)).sum(), [t])
        assert report.passed

    def test_multi_input(self):
        rng = np.random.default_rng(31)
        a = dc.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = dc.Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        report = dc.grad_check(lambda x, y: dc.mul(x @ y, x @ y).sum(), [a, b])
        assert report.passed
        assert len(report.per_input) == 2

    def test_nondeterministic_fn_rejected(self):
        counter = {"n": 0}

        def flaky(t):
            counter["n"] += 1
            return dc.add_scalar(t.sum(), float(counter["n"]))

        a = dc.Tensor([[1.0]], requires_grad=True)
        with pytest.raises(DeterminismError):
            dc.grad_check(flaky, [a])

    def test_step_validation(self):
        a = dc.Tensor([[1.0]], requires_grad=True)
        with pytest.raises(ConfigError):
            dc.grad_check(lambda t: t.sum(), [a], step=0.5)
        with pytest.raises(ConfigError):
            dc.grad_check(lambda t: t.sum(), [a], step=0.0)
        with pytest.raises(ConfigError):
            dc.grad_check(lambda t: t.sum(), [a], tolerance=-1.0)

    def test_report_str_mentions_verdict(self):
        a = dc.Tensor([[1.0]], requires_grad=True)
        report = dc.grad_check(lambda t: (t * t).sum(), [a])
        assert "PASS" in str(report)


class TestGradProperties:
    """Seeded randomized sweeps over shapes and values."""

    def test_composite_pipeline_many_seeds(self):
        for seed in range(8):
            rng = np.random.default_rng(seed)
            n = int(rng.integers(3, 7))
            d = int(rng.integers(2, 6))
            x = dc.Tensor(rng.normal(size=(n, d)), requires_grad=True)
            w = dc.Tensor(rng.normal(size=(d, 3)), requires_grad=True)

            def loss(xx, ww):
                h = dc.l2_normalize_rows(xx @ ww)
                logp = dc.log_softmax_rows(h)
                return dc.scale(logp.sum(), -1.0)

            report = dc.grad_check(loss, [x, w], step=1e-5, tolerance=1e-4)
            assert report.passed, f"seed {seed}: {report}"

    def test_gaussian_kernel_of_distances_many_seeds(self):
        for seed in range(8):
            rng = np.random.default_rng(100 + seed)
            n = int(rng.integers(3, 8))
            x = dc.Tensor(rng.normal(size=(n, 4)), requires_grad=True)

            def loss(xx):
                d = dc.pairwise_sq_dist(dc.l2_normalize_rows(xx))
                return dc.exp(dc.scale(d, -1.0)).mean()

            report = dc.grad_check(loss, [x], step=1e-5, tolerance=1e-4)
            assert report.passed, f"seed {seed}: {report}"
