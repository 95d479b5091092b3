import numpy as np
import pytest

from fspg import transport as tp
from fspg.client import ClientDataset, ClientNode
from fspg.errors import ConfigurationError, ProtocolError
from fspg.smoothloss import check_loss

from oracles import central_difference, smoothed_loss_ref


def random_node(rng, m, p, client_id=0):
    return ClientNode(ClientDataset.from_raw(rng.normal(size=(m, p)), rng.normal(size=m), client_id))


class TestDataset:
    def test_ones_column_required(self):
        with pytest.raises(ConfigurationError):
            ClientDataset(np.ones((3, 2)) * 2, np.zeros(3))

    def test_row_mismatch(self):
        with pytest.raises(ConfigurationError):
            ClientDataset.from_raw(np.zeros((3, 2)), np.zeros(4))

    def test_non_finite(self):
        X = np.zeros((3, 2))
        X[1, 0] = np.nan
        with pytest.raises(ConfigurationError):
            ClientDataset.from_raw(X, np.zeros(3))

    def test_shape_properties(self):
        ds = ClientDataset.from_raw(np.zeros((5, 3)), np.zeros(5), client_id=7)
        assert (ds.n_samples, ds.n_features, ds.client_id) == (5, 3, 7)
        assert np.all(ds.features[:, -1] == 1)


class TestGradient:
    def test_exact_fit_median_is_zero(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(6, 3))
        w = rng.normal(size=4)
        ds = ClientDataset.from_raw(X, np.column_stack([X, np.ones(6)]) @ w)
        g = ClientNode(ds).local_gradient(w, 0.5, 0.5)
        assert np.allclose(g, 0, atol=1e-14)

    def test_exact_fit_tau_term(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(6, 3))
        w = rng.normal(size=4)
        ds = ClientDataset.from_raw(X, np.column_stack([X, np.ones(6)]) @ w)
        g = ClientNode(ds).local_gradient(w, 0.5, 0.7)
        assert np.allclose(g, -0.2 * ds.features.sum(axis=0), atol=1e-13)

    def test_example_instance(self):
        rng = np.random.default_rng(2)
        node = random_node(rng, 10, 5)
        w = rng.normal(size=6)
        fd = central_difference(lambda v: node.local_loss(v, 0.5, 0.7), w)
        g = node.local_gradient(w, 0.5, 0.7)
        assert np.allclose(g, fd, rtol=1e-5, atol=1e-7)

    def test_finite_differences_random(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            node = random_node(rng, rng.integers(1, 17), rng.integers(1, 9))
            w = rng.normal(size=node.data.features.shape[1])
            mu, tau = rng.uniform(0.05, 2.0), rng.uniform(0.05, 0.95)
            fd = central_difference(lambda v: node.local_loss(v, mu, tau), w)
            g = node.local_gradient(w, mu, tau)
            assert np.linalg.norm(g - fd) <= 1e-5 * max(np.linalg.norm(fd), 1.0)

    def test_additive_over_row_partition(self):
        rng = np.random.default_rng(4)
        X, y = rng.normal(size=(20, 4)), rng.normal(size=20)
        w = rng.normal(size=5)
        whole = ClientNode(ClientDataset.from_raw(X, y)).local_gradient(w, 0.3, 0.6)
        parts = sum(ClientNode(ClientDataset.from_raw(X[s], y[s])).local_gradient(w, 0.3, 0.6)
                    for s in (slice(0, 7), slice(7, 8), slice(8, 20)))
        assert np.allclose(whole, parts, atol=1e-12)

    def test_dimension_mismatch(self):
        node = random_node(np.random.default_rng(5), 4, 3, client_id=2)
        with pytest.raises(ProtocolError) as info:
            node.local_gradient(np.zeros(3), 0.5, 0.5)
        assert info.value.client_id == 2


class TestLoss:
    def test_exact_fit_value(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(9, 2))
        w = rng.normal(size=3)
        ds = ClientDataset.from_raw(X, np.column_stack([X, np.ones(9)]) @ w)
        assert ClientNode(ds).local_loss(w, 0.8, 0.5) == pytest.approx(9 * 0.8 / 4, rel=1e-12)

    def test_matches_reference_and_bounds_check_loss(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            node = random_node(rng, 12, 3)
            w = rng.normal(size=4)
            val = node.local_loss(w, 0.4, 0.65)
            ref = smoothed_loss_ref(node.data.features, node.data.responses, w, 0.65, 0.4)
            assert val == pytest.approx(ref, rel=1e-12)
            assert val >= float(np.sum(check_loss(node.residuals(w), 0.65)))


class TestGram:
    def test_zero_and_identity(self):
        # with the ones column the only identity design is the 1x1 intercept-only one
        node = ClientNode(ClientDataset(np.eye(1), np.zeros(1)))
        assert np.array_equal(node.gram_vector_product(np.ones(1)), np.ones(1))
        X = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]])
        node = ClientNode(ClientDataset(X, np.zeros(2)))
        assert np.array_equal(node.gram_vector_product(np.zeros(3)), np.zeros(3))

    def test_dense_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            node = random_node(rng, 6, 2)
            X = node.data.features
            v = rng.normal(size=3)
            assert np.allclose(node.gram_vector_product(v), (X.T @ X) @ v, rtol=0, atol=1e-12)

    def test_linear_symmetric_psd(self):
        rng = np.random.default_rng(9)
        node = random_node(rng, 8, 4)
        u, v = rng.normal(size=5), rng.normal(size=5)
        G = node.gram_vector_product
        assert np.allclose(G(2 * u + 3 * v), 2 * G(u) + 3 * G(v), atol=1e-12)
        assert u @ G(v) == pytest.approx(v @ G(u), rel=1e-12)
        for _ in range(100):
            x = rng.normal(size=5)
            assert x @ G(x) >= -1e-12


class TestHandle:
    def test_grad_request(self):
        rng = np.random.default_rng(10)
        node = random_node(rng, 5, 2, client_id=3)
        w = rng.normal(size=3)
        reply = node.handle(tp.GradRequest(4, w, 0.5, 0.6))
        assert isinstance(reply, tp.GradResponse)
        assert (reply.client_id, reply.k) == (3, 4)
        assert np.allclose(reply.gradient, node.local_gradient(w, 0.5, 0.6))
        assert reply.local_loss == node.local_loss(w, 0.5, 0.6)

    def test_gram_request(self):
        node = random_node(np.random.default_rng(11), 5, 2, client_id=1)
        reply = node.handle(tp.GramVecRequest(9, np.ones(3)))
        assert (reply.client_id, reply.round) == (1, 9)

    def test_terminal_messages(self):
        node = random_node(np.random.default_rng(12), 5, 2)
        assert node.handle(tp.Shutdown()) is None
        assert node.handle(tp.FinalModel(np.zeros(3))) is None

    def test_unexpected_message(self):
        node = random_node(np.random.default_rng(13), 5, 2)
        with pytest.raises(ProtocolError):
            node.handle(tp.Hello(0, 5, 2))
