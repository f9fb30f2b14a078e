import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sepsisrl.errors import OptimizerError, StructuralError, UsageError
from sepsisrl.nn import (Adam, BatchNorm, Dense, DuelingHead, Network, NetworkSpec, leaky_relu,
                         leaky_relu_grad, load_checkpoint, save_checkpoint, sigmoid)

from oracles import central_difference, relative_error


def _loss_and_grad(net, x, w, train=True):
    out = net(x, train=train)
    return float(np.sum(w * out)), w


def check_network_gradients(net, x, seed=0, h=1e-5):
    """Worst relative error over every parameter and the input."""
    w = np.random.default_rng(seed).normal(size=(x.shape[0], net.spec.output_dim))
    _, up = _loss_and_grad(net, x, w)
    dx = net.backward(up)
    analytic = {k: g.copy() for k, g in net.gradients().items()}
    f = lambda: _loss_and_grad(net, x, w)[0]
    worst = 0.0
    for name, p in net.parameters().items():
        worst = max(worst, relative_error(analytic[name], central_difference(f, p, h)))
    worst = max(worst, relative_error(dx, central_difference(f, x, h)))
    return worst


class TestActivations:
    def test_leaky_relu_values(self):
        z = np.array([-2.0, -0.5, 0.0, 0.5, 3.0])
        assert np.array_equal(leaky_relu(z), [-1.0, -0.25, 0.0, 0.5, 3.0])

    def test_leaky_relu_grad_at_zero_is_one(self):
        assert np.array_equal(leaky_relu_grad(np.array([-1.0, 0.0, 1.0])), [0.5, 1.0, 1.0])

    def test_sigmoid_is_stable_for_large_inputs(self):
        out = sigmoid(np.array([-800.0, 0.0, 800.0]))
        assert np.all(np.isfinite(out))
        assert out[1] == 0.5
        assert out[0] == 0.0 and out[2] == 1.0


class TestBatchNorm:
    def test_train_mode_output_is_standardized(self):
        bn = BatchNorm(3)
        x = np.random.default_rng(0).normal(5.0, 3.0, size=(64, 3))
        y = bn.forward(x, True)
        assert np.allclose(y.mean(axis=0), 0.0, atol=1e-12)
        assert np.allclose(y.var(axis=0), 1.0, atol=1e-3)

    def test_running_stats_use_momentum(self):
        bn = BatchNorm(2)
        x = np.array([[1.0, 2.0], [3.0, 6.0]])
        bn.forward(x, True)
        assert np.allclose(bn.running_mean, 0.01 * x.mean(axis=0))

    def test_eval_mode_uses_running_stats(self):
        bn = BatchNorm(2)
        bn.running_mean = np.array([1.0, -1.0])
        bn.running_var = np.array([4.0, 1.0])
        y = bn.forward(np.array([[3.0, 0.0]]), False)
        assert np.allclose(y, [[2.0 / np.sqrt(4.0 + 1e-5), 1.0 / np.sqrt(1.0 + 1e-5)]])

    def test_batch_of_one_in_train_mode_is_rejected(self):
        with pytest.raises(StructuralError):
            BatchNorm(2).forward(np.ones((1, 2)), True)


class TestDuelingHead:
    def test_advantages_are_mean_centred(self):
        head = DuelingHead(8, 5, np.random.default_rng(1))
        x = np.random.default_rng(2).normal(size=(4, 8))
        v, a = head.streams(x)
        q = head.forward(x, False)
        assert np.allclose(q.mean(axis=1, keepdims=True), v)
        assert np.allclose(q - v, a - a.mean(axis=1, keepdims=True))

    def test_odd_width_is_rejected(self):
        with pytest.raises(StructuralError):
            DuelingHead(7, 3)


class TestNetwork:
    def test_layer_order_is_dense_bn_activation(self):
        net = Network(NetworkSpec(input_dim=4, hidden=(6, 6), output_dim=3))
        names = [type(l).__name__ for l in net.layers]
        assert names == ["Dense", "BatchNorm", "LeakyReLU", "Dense", "BatchNorm", "LeakyReLU", "DuelingHead"]

    def test_wrong_input_width(self):
        net = Network(NetworkSpec(input_dim=4, hidden=(6,), output_dim=3))
        with pytest.raises(StructuralError):
            net(np.zeros((2, 5)))

    def test_backward_without_forward(self):
        net = Network(NetworkSpec(input_dim=4, hidden=(6,), output_dim=3))
        with pytest.raises(UsageError):
            net.backward(np.zeros((2, 3)))

    def test_invalid_specs(self):
        with pytest.raises(StructuralError):
            NetworkSpec(input_dim=4, hidden=(5,), head="dueling").validate()
        with pytest.raises(StructuralError):
            NetworkSpec(input_dim=4, activation="tanh").validate()
        with pytest.raises(StructuralError):
            NetworkSpec(input_dim=0).validate()

    def test_gradients_linear_head_no_batchnorm(self):
        spec = NetworkSpec(input_dim=3, hidden=(4,), output_dim=2, batch_norm=False, head="linear")
        net = Network(spec, seed=3)
        x = np.random.default_rng(4).normal(size=(5, 3))
        assert check_network_gradients(net, x) < 1e-4

    def test_gradients_sigmoid_network(self):
        spec = NetworkSpec(input_dim=3, hidden=(4,), output_dim=3, activation="sigmoid",
                           batch_norm=False, head="linear")
        net = Network(spec, seed=5)
        x = np.random.default_rng(6).normal(size=(6, 3))
        assert check_network_gradients(net, x) < 1e-4

    def test_clone_is_independent(self):
        net = Network(NetworkSpec(input_dim=3, hidden=(4,), output_dim=2), seed=0)
        twin = net.clone()
        x = np.random.default_rng(0).normal(size=(3, 3))
        assert np.array_equal(net(x), twin(x))
        twin.parameters()["0.W"][...] += 1.0
        assert not np.array_equal(net(x), twin(x))

    def test_same_seed_same_weights(self):
        a = Network(NetworkSpec(input_dim=3, hidden=(4,), output_dim=2), seed=9)
        b = Network(NetworkSpec(input_dim=3, hidden=(4,), output_dim=2), seed=9)
        for (ka, va), (kb, vb) in zip(a.parameters().items(), b.parameters().items()):
            assert ka == kb and np.array_equal(va, vb)


class TestAdam:
    def test_first_step_moves_by_learning_rate(self):
        p = {"w": np.array([1.0, -2.0])}
        Adam(lr=0.1).step(p, {"w": np.array([3.0, -0.5])})
        # bias-corrected first step is lr * sign(g) up to epsilon
        assert np.allclose(p["w"], [0.9, -1.9], atol=1e-6)

    def test_non_finite_gradient_names_block(self):
        p = {"layer.W": np.zeros(2)}
        with pytest.raises(OptimizerError, match="layer.W"):
            Adam().step(p, {"layer.W": np.array([np.nan, 0.0])})

    def test_minimizes_quadratic(self):
        p = {"x": np.array([5.0, -3.0])}
        opt = Adam(lr=0.1)
        for _ in range(2000):
            opt.step(p, {"x": 2.0 * p["x"]})
        assert np.allclose(p["x"], 0.0, atol=1e-3)


class TestCheckpoint:
    def test_round_trip_restores_outputs_and_optimizer(self, tmp_path):
        net = Network(NetworkSpec(input_dim=3, hidden=(4, 4), output_dim=5), seed=1)
        opt = Adam(lr=1e-3)
        x = np.random.default_rng(0).normal(size=(8, 3))
        out = net(x, train=True)
        net.backward(np.ones_like(out))
        opt.step(net.parameters(), net.gradients())
        path = save_checkpoint(tmp_path / "ck.npz", net, opt, extra={"note": "x"})
        net2, opt2, extra, _ = load_checkpoint(path)
        assert np.array_equal(net(x), net2(x))
        assert opt2.step_count == 1
        assert extra == {"note": "x"}
        for k in opt.m:
            assert np.array_equal(opt.m[k], opt2.m[k])

    def test_checkpoint_bytes_are_deterministic(self, tmp_path):
        net = Network(NetworkSpec(input_dim=3, hidden=(4,), output_dim=2), seed=1)
        a = save_checkpoint(tmp_path / "a.npz", net).read_bytes()
        b = save_checkpoint(tmp_path / "b.npz", net).read_bytes()
        assert a == b


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), batch=st.integers(2, 6), width=st.sampled_from([2, 4, 6]))
def test_gradient_check_property(seed, batch, width):
    """Analytic and finite-difference gradients agree on random dueling networks."""
    rng = np.random.default_rng(seed)
    spec = NetworkSpec(input_dim=int(rng.integers(1, 4)), hidden=(width, width), output_dim=int(rng.integers(2, 5)))
    net = Network(spec, seed=seed)
    x = rng.normal(size=(batch, spec.input_dim))
    assert check_network_gradients(net, x, seed=seed) < 1e-4


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_eval_mode_is_row_independent(seed):
    """In eval mode a row's output does not depend on the rest of the batch."""
    rng = np.random.default_rng(seed)
    net = Network(NetworkSpec(input_dim=3, hidden=(4,), output_dim=3), seed=seed)
    net(rng.normal(size=(16, 3)), train=True)
    x = rng.normal(size=(5, 3))
    full = net(x)
    assert np.allclose(full[2:3], net(x[2:3]))
