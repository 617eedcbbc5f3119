import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from stfit.topology import (
    TopologyLearner,
    gumbel_noise,
    init_adjacency_cosine,
    sample_adjacency,
    sparsify,
)


class TestSparsify:
    def test_paper_variant_at_threshold(self):
        out = sparsify(torch.tensor(0.9, dtype=torch.float64), 0.9, 0.1, "paper")
        # sigmoid(exp(0)) = sigmoid(1)
        assert float(out) == pytest.approx(0.7310585786300049, abs=1e-9)

    def test_soft_threshold_at_threshold_is_half(self):
        out = sparsify(torch.tensor(0.42), 0.42, 0.37, "soft-threshold")
        assert float(out) == pytest.approx(0.5, abs=1e-7)

    def test_low_score_values(self):
        p = torch.tensor(0.0, dtype=torch.float64)
        paper = sparsify(p, 0.9, 0.1, "paper")
        soft = sparsify(p, 0.9, 0.1, "soft-threshold")
        assert float(paper) == pytest.approx(1.0 / (1.0 + math.exp(-math.exp(-9.0))), abs=1e-9)
        assert float(paper) == pytest.approx(0.500031, abs=1e-6)
        assert float(soft) == pytest.approx(1.234e-4, abs=1e-7)

    def test_phi_must_be_positive(self):
        with pytest.raises(ValueError, match="phi"):
            sparsify(torch.tensor(0.5), 0.9, 0.0)

    def test_unknown_variant(self):
        with pytest.raises(ValueError, match="variant"):
            sparsify(torch.tensor(0.5), 0.9, 0.1, "hard")

    @given(
        st.floats(0.0, 1.0),
        st.floats(0.0, 1.0),
        st.floats(0.0, 1.0),
        st.floats(0.01, 2.0),
        st.sampled_from(["paper", "soft-threshold"]),
    )
    @settings(max_examples=60, deadline=None)
    def test_monotone_in_score_and_threshold(self, p1, p2, eps, phi, variant):
        lo, hi = sorted([p1, p2])
        v_lo = float(sparsify(torch.tensor(lo, dtype=torch.float64), eps, phi, variant))
        v_hi = float(sparsify(torch.tensor(hi, dtype=torch.float64), eps, phi, variant))
        assert v_lo <= v_hi + 1e-12
        # raising the threshold can only push probabilities down
        v_eps_hi = float(
            sparsify(torch.tensor(lo, dtype=torch.float64), min(eps + 0.1, 1.0), phi, variant)
        )
        assert v_eps_hi <= v_lo + 1e-12


class TestSampleAdjacency:
    def test_hard_mode_is_exact_bernoulli(self):
        draws = 20000
        gen = torch.Generator().manual_seed(123)
        p = torch.full((draws,), 0.7)
        adj = sample_adjacency(p.reshape(draws, 1, 1).expand(draws, 2, 2), 0.5,
                               hard=True, generator=gen)
        freq = float(adj[:, 0, 1].mean())
        bound = 3.0 * math.sqrt(0.7 * 0.3 / draws)
        assert abs(freq - 0.7) <= bound

    def test_soft_mode_high_temperature_tends_to_half(self):
        gen = torch.Generator().manual_seed(0)
        p = torch.rand(6, 6)
        adj = sample_adjacency(p, 1e6, hard=False, generator=gen)
        off_diag = adj[~torch.eye(6, dtype=bool)]
        assert torch.allclose(off_diag, torch.full_like(off_diag, 0.5), atol=1e-4)

    def test_diagonal_zeroed(self):
        gen = torch.Generator().manual_seed(1)
        adj = sample_adjacency(torch.full((5, 5), 0.99), 0.5, hard=True, generator=gen)
        assert torch.all(adj.diagonal() == 0)

    def test_deterministic_with_fixed_noise(self):
        p = torch.rand(4, 4)
        noise = gumbel_noise((4, 4), generator=torch.Generator().manual_seed(2))
        a = sample_adjacency(p, 0.5, hard=True, noise=noise)
        b = sample_adjacency(p, 0.5, hard=True, noise=noise)
        assert torch.equal(a, b)

    def test_near_one_probability_always_samples_edge(self):
        gen = torch.Generator().manual_seed(3)
        p = torch.full((2000, 2, 2), 1.0 - 1e-9)
        adj = sample_adjacency(p, 0.5, hard=True, generator=gen)
        assert torch.all(adj[:, 0, 1] == 1.0)

    def test_straight_through_gradient_equals_soft_gradient(self):
        # linear functional of the adjacency: the identity is exact by definition
        torch.manual_seed(4)
        weights = torch.randn(5, 5, dtype=torch.float64)
        p = torch.rand(5, 5, dtype=torch.float64)
        noise = gumbel_noise((5, 5), generator=torch.Generator().manual_seed(5),
                             dtype=torch.float64)

        p_hard = p.clone().requires_grad_(True)
        (sample_adjacency(p_hard, 0.5, hard=True, noise=noise) * weights).sum().backward()
        p_soft = p.clone().requires_grad_(True)
        (sample_adjacency(p_soft, 0.5, hard=False, noise=noise) * weights).sum().backward()
        assert torch.equal(p_hard.grad, p_soft.grad)

    def test_temperature_must_be_positive(self):
        with pytest.raises(ValueError, match="temperature"):
            sample_adjacency(torch.rand(3, 3), 0.0)

    def test_hard_edge_count_non_increasing_in_threshold(self):
        gen = torch.Generator().manual_seed(6)
        scores = torch.rand(30, 30, generator=gen)
        noise = gumbel_noise((30, 30), generator=torch.Generator().manual_seed(7))
        for variant in ("paper", "soft-threshold"):
            counts = []
            for eps in (0.0, 0.3, 0.6, 0.9):
                probs = sparsify(scores, eps, 0.1, variant)
                adj = sample_adjacency(probs, 0.5, hard=True, noise=noise)
                counts.append(int(adj.sum()))
            assert counts == sorted(counts, reverse=True)


class TestCosineInit:
    def test_threshold_minus_one_gives_complete_graph(self):
        adj = init_adjacency_cosine(6, 8, -1.0, seed=0)
        expected = np.ones((6, 6)) - np.eye(6)
        np.testing.assert_array_equal(adj, expected)

    def test_threshold_above_one_gives_empty_graph(self):
        adj = init_adjacency_cosine(6, 8, 1.5, seed=0)
        assert adj.sum() == 0

    def test_symmetric(self):
        adj = init_adjacency_cosine(10, 4, 0.3, seed=1)
        np.testing.assert_array_equal(adj, adj.T)

    def test_deterministic(self):
        a = init_adjacency_cosine(7, 5, 0.5, seed=9)
        b = init_adjacency_cosine(7, 5, 0.5, seed=9)
        np.testing.assert_array_equal(a, b)


class TestTopologyLearner:
    def make(self, kappa=6, channels=1, hidden=8):
        torch.manual_seed(11)
        return TopologyLearner(kappa, channels, hidden)

    def test_identical_windows_identical_reps(self):
        learner = self.make()
        w = torch.randn(1, 6, 1)
        reps = learner.encode_windows(w.expand(4, 6, 1))
        assert torch.equal(reps[0], reps[1])
        assert torch.equal(reps[0], reps[3])

    def test_node_count_agnostic(self):
        learner = self.make()
        assert learner.encode_windows(torch.randn(17, 6, 1)).shape == (17, 8)
        assert learner.encode_windows(torch.randn(170, 6, 1)).shape == (170, 8)

    def test_default_hidden_dim_is_64(self):
        learner = TopologyLearner(12, 1, 64)
        assert learner.encode_windows(torch.randn(3, 12, 1)).shape == (3, 64)

    def test_scores_constant_for_identical_reps(self):
        learner = self.make()
        reps = torch.randn(1, 8).expand(5, 8)
        scores = learner.pair_scores(reps)
        assert torch.allclose(scores, scores[0, 0])

    def test_scores_strictly_inside_unit_interval(self):
        learner = self.make()
        scores = learner.pair_scores(torch.randn(6, 8))
        assert torch.all(scores > 0) and torch.all(scores < 1)

    def test_score_gradient_matches_finite_differences(self):
        learner = self.make(kappa=3, hidden=4).double()
        reps = torch.randn(3, 4, dtype=torch.float64, requires_grad=True)
        learner.pair_scores(reps).sum().backward()
        analytic = reps.grad.clone()
        numeric = torch.zeros_like(analytic)
        h = 1e-4
        with torch.no_grad():
            flat = reps.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                lp = learner.pair_scores(reps).sum().item()
                flat[i] = orig - h
                lm = learner.pair_scores(reps).sum().item()
                flat[i] = orig
                numeric.view(-1)[i] = (lp - lm) / (2 * h)
        err = torch.linalg.norm(analytic - numeric) / torch.linalg.norm(numeric)
        assert float(err) <= 1e-4

    def test_extend_for_virtual_shapes(self):
        learner = self.make()
        real = torch.randn(5, 6, 1)
        gen = torch.Generator().manual_seed(0)
        state = learner.extend_for_virtual(
            real, torch.randn(0, 6, 1), 0.9, 0.1, 0.5, generator=gen
        )
        assert state.adjacency.shape == (5, 5)
        state = learner.extend_for_virtual(
            real, torch.randn(3, 6, 1), 0.9, 0.1, 0.5, generator=gen
        )
        assert state.adjacency.shape == (8, 8)
        assert state.scores.shape == (8, 8)

    def test_extend_blocks_all_reachable(self):
        # with eps=0 every pair is likely: real-real, real-virtual, virtual-virtual
        learner = self.make()
        gen = torch.Generator().manual_seed(3)
        state = learner.extend_for_virtual(
            torch.randn(4, 6, 1), torch.randn(3, 6, 1), 0.0, 0.1, 0.5, generator=gen
        )
        adj = state.adjacency
        assert adj[:4, 4:].sum() > 0  # real-virtual block populated
        assert adj[4:, :4].sum() > 0
        assert adj[4:, 4:].sum() > 0

    def test_full_pipeline_state_fields(self):
        learner = self.make()
        gen = torch.Generator().manual_seed(4)
        state = learner.forward(torch.randn(5, 6, 1), 0.9, 0.1, 0.5, generator=gen)
        assert torch.all((state.scores >= 0) & (state.scores <= 1))
        assert torch.all((state.edge_probs >= 0) & (state.edge_probs <= 1))
        assert set(torch.unique(state.adjacency).tolist()) <= {0.0, 1.0}
