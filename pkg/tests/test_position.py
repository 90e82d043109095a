import math

import numpy as np
import pytest
import torch

from irwe.graph import Graph
from irwe.position import (
    PositionModule,
    build_contrastive_stats,
    contrastive_objective,
    position_loss,
    position_loss_sampled,
)

from conftest import toy_graph


def make_module(l=2, d=4, layers=1, seed=0):
    torch.manual_seed(seed)
    return PositionModule(l=l, d=d, reweight_mlp="d,d,s,d,s", layers=layers, heads=2, readout_heads=2).double()


def rand(*shape):
    return torch.randn(*shape, dtype=torch.float64)


def fit_free_logits(p, noise_weight, iters=100):
    """Minimize the sampled contrastive objective over free logits with L-BFGS."""
    z = torch.zeros_like(p, requires_grad=True)
    opt = torch.optim.LBFGS([z], lr=1.0, max_iter=iters, tolerance_grad=1e-14, tolerance_change=1e-16, line_search_fn="strong_wolfe")

    def closure():
        opt.zero_grad()
        loss = contrastive_objective(z, p, noise_weight)
        loss.backward()
        return loss

    for _ in range(5):
        opt.step(closure)
    return z.detach()


class TestReweight:
    def test_zero_mlp_outputs_give_zero(self, monkeypatch):
        m = make_module()
        monkeypatch.setattr(m.mlp_psi, "forward", lambda x: torch.zeros_like(x))
        monkeypatch.setattr(m.mlp_pos, "forward", lambda x: torch.zeros_like(x))
        assert torch.equal(m.reweight(rand(5, 4), rand(5, 4)), torch.zeros(5, 4, dtype=torch.float64))

    def test_equal_rows_equal_output(self):
        m = make_module().eval()
        psi, pi = rand(4, 4), rand(4, 4)
        psi[3], pi[3] = psi[1], pi[1]
        out = m.reweight(psi, pi)
        assert out.shape == (4, 4) and torch.equal(out[1], out[3])

    def test_train_mode_needs_two_rows(self):
        with pytest.raises(ValueError):
            make_module().train().reweight(rand(1, 4), rand(1, 4))


class TestTokens:
    def test_hand_product(self):
        m = make_module(l=1, d=2)
        w_t = torch.tensor([[1.0, 2.0, 3.0, 4.0], [0.5, -1.0, 0.0, 2.0]], dtype=torch.float64)
        with torch.no_grad():
            m.w_t.weight.copy_(w_t)
        pi_bar = torch.tensor([[1.0, -1.0], [2.0, 0.5]], dtype=torch.float64)
        tokens = m.fuse_tokens(torch.tensor([[0, 1]]), pi_bar)
        x = np.array([[1.0, -1.0, 1.0, 0.0], [2.0, 0.5, 0.0, 1.0]])
        np.testing.assert_allclose(tokens[0].detach().numpy(), x @ w_t.numpy().T, atol=1e-12)

    def test_zero_projection(self):
        m = make_module()
        with torch.no_grad():
            m.w_t.weight.zero_()
        assert not m.fuse_tokens(torch.tensor([[0, 1, 0]]), rand(2, 4)).any()

    def test_shared_node_same_position(self):
        m = make_module()
        t = m.fuse_tokens(torch.tensor([[0, 1, 2], [3, 1, 0]]), rand(4, 4))
        assert torch.equal(t[0, 1], t[1, 1])

    def test_missing_row(self):
        with pytest.raises(IndexError):
            make_module().fuse_tokens(torch.tensor([[0, 5, 1]]), rand(3, 4))


class TestWalkEncoding:
    def test_zero_layers_returns_first_token(self):
        m = make_module(layers=0)
        walks = torch.tensor([[[0, 1, 2], [0, 2, 1]], [[1, 0, 1], [1, 2, 0]]])
        pi_bar = rand(3, 4)
        out = m.encode_walks(walks, pi_bar)
        torch.testing.assert_close(out, m.fuse_tokens(walks, pi_bar)[:, :, 0])

    def test_duplicate_walks_and_start_check(self):
        m = make_module()
        walks = torch.tensor([[[0, 1, 2], [0, 1, 2], [0, 2, 1]]])
        out = m.encode_walks(walks, rand(3, 4), starts=torch.tensor([0]))
        assert out.shape == (1, 3, 4) and torch.equal(out[0, 0], out[0, 1])
        with pytest.raises(ValueError, match="does not start"):
            m.encode_walks(walks, rand(3, 4), starts=torch.tensor([1]))


class TestReadout:
    def test_single_walk(self):
        m = make_module()
        t_bar = rand(3, 1, 4)
        g, gb, w = m.attentive_readout(t_bar, rand(3, 4), return_weights=True)
        torch.testing.assert_close(w, torch.ones_like(w))
        z = m.readout.w_v(t_bar[:, 0])
        torch.testing.assert_close(g, m.w_gamma(z))
        torch.testing.assert_close(gb, m.w_context(z))

    def test_identical_rows(self):
        m = make_module()
        t_bar = rand(2, 1, 4).expand(2, 5, 4)
        g, _ = m.attentive_readout(t_bar, rand(2, 4))
        torch.testing.assert_close(g, m.w_gamma(m.readout.w_v(t_bar[:, 0])))

    def test_empty(self):
        with pytest.raises(ValueError):
            make_module().attentive_readout(rand(2, 0, 4), rand(2, 4))


class TestContrastiveStats:
    def test_single_edge(self):
        c = build_contrastive_stats(Graph.from_edges([(0, 1)], 2), Q=1)
        np.testing.assert_allclose(c.noise, [0.5, 0.5])
        np.testing.assert_allclose(c.dense(), [[0, math.log(2)], [math.log(2), 0]], atol=1e-15)

    def test_regular_graph(self):
        n, k, q = 12, 4, 5
        edges = [(i, (i + s) % n) for i in range(n) for s in (1, 2)]
        c = build_contrastive_stats(Graph.from_edges(edges, n), Q=q)
        np.testing.assert_allclose(c.noise, 1 / n)
        np.testing.assert_allclose(c.C.data, math.log(n / (k * q)), atol=1e-12)
        assert c.C.nnz == n * k

    def test_non_edges_zero_and_noise_normalized(self, toy):
        c = build_contrastive_stats(toy)
        dense = c.dense()
        assert (dense[toy.adjacency() == 0] == 0).all()
        assert c.noise.sum() == pytest.approx(1.0, abs=1e-15)

    def test_isolated_and_bad_params(self):
        with pytest.raises(ValueError, match="isolated"):
            build_contrastive_stats(Graph.from_edges([(0, 1)], 3))
        with pytest.raises(ValueError):
            build_contrastive_stats(Graph.from_edges([(0, 1)], 2), Q=0)

    def test_stationarity_symbolic(self):
        # d/dz of -[p ln s(z) + w ln s(-z)] = -p (1 - s(z)) + w s(z), zero at z = ln(p / w)
        rng = np.random.default_rng(0)
        p = rng.uniform(0.01, 1, 1000)
        w = rng.integers(1, 10, 1000) * rng.dirichlet(np.ones(1000))
        z = np.log(p) - np.log(w)
        s = 1 / (1 + np.exp(-z))
        assert np.abs(-p * (1 - s) + w * s).max() < 1e-10

    def test_free_logit_optimum_matches(self):
        g = toy_graph(seed=5, n=5, p=0.5)
        c = build_contrastive_stats(g, Q=5)
        coo = c.C.tocoo()
        p = torch.as_tensor(c.p.tocoo().data, dtype=torch.float64)
        w = torch.as_tensor(5 * c.noise[coo.col], dtype=torch.float64)
        z = fit_free_logits(p, w)
        assert np.abs(z.numpy() - coo.data).max() < 1e-4


class TestPositionLoss:
    def test_hand_values(self):
        one = torch.ones(2, 1, dtype=torch.float64)
        assert position_loss(one, one, torch.zeros(2, 2, dtype=torch.float64), 1.0).item() == 4.0
        zero = torch.zeros(3, 2, dtype=torch.float64)
        assert position_loss(zero, zero, torch.zeros(3, 3, dtype=torch.float64), 2.0).item() == 0.0

    def test_zero_iff_exact(self):
        a, b = rand(4, 3), rand(4, 3)
        assert position_loss(a, b, a @ b.T / 7.0, 7.0).item() < 1e-24

    def test_sampled_estimator_unbiased(self, toy):
        c = build_contrastive_stats(toy)
        coo = c.C.tocoo()
        edges = torch.as_tensor(np.stack([coo.row, coo.col], 1))
        targets = torch.as_tensor(coo.data)
        gam, ctx = rand(10, 3), rand(10, 3)
        dense = position_loss(gam, ctx, torch.as_tensor(c.dense()), 2.0).item()
        gen = torch.Generator().manual_seed(0)
        draws = [position_loss_sampled(gam, ctx, edges, targets, 2.0, 200, gen).item() for _ in range(300)]
        assert np.mean(draws) == pytest.approx(dense, rel=0.03)
