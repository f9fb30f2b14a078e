import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sepsisrl.autoencoder import (Autoencoder, SparseAEConfig, encode, kl_sparsity_grad, kl_sparsity_penalty,
                                  train_autoencoder)
from sepsisrl.errors import ConfigError, StructuralError
from sepsisrl.nn import Adam

from oracles import central_difference, relative_error


class TestKL:
    def test_zero_at_target(self):
        assert kl_sparsity_penalty(0.05, np.full(7, 0.05)) == 0.0
        assert np.all(kl_sparsity_grad(0.05, np.full(7, 0.05)) == 0.0)

    def test_known_value(self):
        expect = 0.05 * np.log(0.05 / 0.5) + 0.95 * np.log(0.95 / 0.5)
        assert kl_sparsity_penalty(0.05, [0.5]) == pytest.approx(expect)

    def test_clamped_extremes_are_finite(self):
        assert np.isfinite(kl_sparsity_penalty(0.05, [0.0, 1.0]))
        assert np.all(kl_sparsity_grad(0.05, [0.0, 1.0]) == 0.0)

    def test_gradient_by_finite_differences(self):
        q = np.random.default_rng(0).uniform(0.01, 0.99, 16)
        num = central_difference(lambda: kl_sparsity_penalty(0.05, q), q, 1e-6)
        assert relative_error(kl_sparsity_grad(0.05, q), num) < 1e-4


class TestAutoencoder:
    def test_shapes(self):
        ae = Autoencoder(6, 3, seed=0)
        x = np.random.default_rng(0).normal(size=(4, 6))
        assert ae.encode(x).shape == (4, 3)
        assert ae.reconstruct(x).shape == (4, 6)
        assert np.all((ae.encode(x) > 0) & (ae.encode(x) < 1))
        assert np.array_equal(encode(ae, x), ae.encode(x))

    def test_width_check(self):
        with pytest.raises(StructuralError):
            Autoencoder(6, 3).encode(np.zeros((2, 5)))

    def test_full_loss_gradient(self):
        """Backprop through reconstruction plus the injected sparsity term."""
        cfg = SparseAEConfig(hidden_dim=3, rho=0.1, beta_sparsity=2.0)
        ae = Autoencoder(4, 3, seed=1)
        x = np.random.default_rng(2).normal(size=(5, 4))
        captured = {}

        class Capture(Adam):
            def step(self, params, grads):
                captured.update({k: g.copy() for k, g in grads.items()})

        ae.gradient_step(x, cfg, Capture())
        f = lambda: ae.losses(x, cfg)[0]
        for name, p in ae.net.parameters().items():
            assert relative_error(captured[name], central_difference(f, p, 1e-6)) < 1e-4

    @pytest.mark.parametrize("bad", [dict(rho=0.0), dict(rho=1.0), dict(beta_sparsity=-1.0),
                                     dict(hidden_dim=0), dict(learning_rate=0.0)])
    def test_invalid_config(self, bad):
        with pytest.raises(ConfigError):
            SparseAEConfig(**bad).validate()

    def test_training_reduces_reconstruction(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(400, 3)) @ rng.normal(size=(3, 8))
        cfg = SparseAEConfig(hidden_dim=6, epochs=60, batch_size=32, beta_sparsity=0.0, learning_rate=1e-2)
        _, log = train_autoencoder(X, cfg)
        assert log[-1][2] < 0.1 * log[0][2]
        assert [row[0] for row in log] == list(range(1, 61))

    def test_sparsity_pulls_activation_to_rho(self):
        X = np.random.default_rng(0).normal(size=(1000, 10))
        run = lambda beta: train_autoencoder(X, SparseAEConfig(hidden_dim=8, rho=0.05, beta_sparsity=beta, epochs=60,
                                                               batch_size=50, learning_rate=1e-2))[1][-1][4]
        sparse, dense = run(1.0), run(0.0)
        assert sparse < 0.1 < dense

    def test_deterministic(self):
        X = np.random.default_rng(0).normal(size=(100, 5))
        cfg = SparseAEConfig(hidden_dim=4, epochs=3, batch_size=32, seed=2)
        a, _ = train_autoencoder(X, cfg)
        b, _ = train_autoencoder(X, SparseAEConfig(hidden_dim=4, epochs=3, batch_size=32, seed=2))
        assert np.array_equal(a.encode(X), b.encode(X))

    def test_save_load(self, tmp_path):
        X = np.random.default_rng(0).normal(size=(50, 5))
        ae, _ = train_autoencoder(X, SparseAEConfig(hidden_dim=4, epochs=2, batch_size=16))
        ae.save(tmp_path / "ae.npz", SparseAEConfig(hidden_dim=4))
        back = Autoencoder.load(tmp_path / "ae.npz")
        assert np.array_equal(back.encode(X), ae.encode(X))


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 0.99), st.lists(st.floats(1e-3, 1 - 1e-3), min_size=1, max_size=10))
def test_kl_is_non_negative(rho, rho_hat):
    assert kl_sparsity_penalty(rho, rho_hat) >= -1e-12
