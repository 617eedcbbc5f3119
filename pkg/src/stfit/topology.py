"""Learned sparse spatial topology: window encoder, pair scores, Gumbel sampling.

The pipeline is score -> sparsify -> sample. Scores P in [0, 1] come from a
shared MLP over per-node window encodings, the sparsification transform maps
them to edge probabilities controlled by a threshold and temperature, and a
two-class Gumbel-Softmax draws the adjacency (hard draws use the
straight-through estimator so gradients follow the soft relaxation).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

SPARSIFY_VARIANTS = ("soft-threshold", "paper")
_PROB_EPS = 1e-7


@dataclass
class TopologyState:
    """Score matrix, sparsified edge probabilities, and the sampled adjacency."""

    scores: torch.Tensor
    edge_probs: torch.Tensor
    adjacency: torch.Tensor
    eps: float
    phi: float
    s: float


def sparsify(
    scores: torch.Tensor, eps: float, phi: float, variant: str = "soft-threshold"
) -> torch.Tensor:
    """Map raw pair scores to edge probabilities under threshold eps.

    variant "soft-threshold": sigmoid((P - eps) / phi), which drives scores
    below eps toward 0. variant "paper": sigmoid(exp((P - eps) / phi)), which
    stays in (0.5, 1); kept selectable for fidelity runs.
    """
    if phi <= 0:
        raise ValueError("phi must be positive")
    if variant == "soft-threshold":
        return torch.sigmoid((scores - eps) / phi)
    if variant == "paper":
        return torch.sigmoid(torch.exp((scores - eps) / phi))
    raise ValueError(f"unknown sparsify variant {variant!r}; choose from {SPARSIFY_VARIANTS}")


def gumbel_noise(
    shape: tuple[int, ...],
    generator: torch.Generator | None = None,
    dtype: torch.dtype = torch.float32,
    device: torch.device | str = "cpu",
) -> tuple[torch.Tensor, torch.Tensor]:
    """Two independent standard Gumbel tensors (edge class, no-edge class)."""
    u = torch.rand((2,) + tuple(shape), generator=generator, dtype=dtype, device=device)
    exponential = (-torch.log(u.clamp(min=1e-12))).clamp(min=1e-12)
    g = -torch.log(exponential)
    return g[0], g[1]


def sample_adjacency(
    edge_probs: torch.Tensor,
    s: float,
    hard: bool = True,
    generator: torch.Generator | None = None,
    noise: tuple[torch.Tensor, torch.Tensor] | None = None,
) -> torch.Tensor:
    """Two-class Gumbel-Softmax over logits (ln p, ln(1-p)) per ordered pair.

    Hard mode takes the Gumbel-max argmax (an exact Bernoulli(p) sampler) and
    routes gradients through the soft relaxation. The diagonal is zeroed.
    """
    if s <= 0:
        raise ValueError("Gumbel temperature s must be positive")
    p = edge_probs.clamp(_PROB_EPS, 1.0 - _PROB_EPS)
    if noise is None:
        g_edge, g_none = gumbel_noise(
            tuple(p.shape), generator=generator, dtype=p.dtype, device=p.device
        )
    else:
        g_edge, g_none = noise
    logit = torch.log(p) - torch.log1p(-p)
    perturbed = logit + g_edge - g_none
    soft = torch.sigmoid(perturbed / s)
    if hard:
        hard_draw = (perturbed > 0).to(p.dtype)
        adj = hard_draw.detach() - soft.detach() + soft
    else:
        adj = soft
    mask = 1.0 - torch.eye(p.shape[-1], dtype=p.dtype, device=p.device)
    return adj * mask


def init_adjacency_cosine(
    n_nodes: int, dim: int, threshold: float, seed: int
) -> np.ndarray:
    """Fallback adjacency from cosine similarity of seeded random representations."""
    rng = np.random.default_rng(seed)
    reps = rng.standard_normal((n_nodes, dim))
    norms = np.linalg.norm(reps, axis=1, keepdims=True)
    unit = reps / np.maximum(norms, 1e-12)
    cos = unit @ unit.T
    adjacency = (cos >= threshold).astype(np.float32)
    np.fill_diagonal(adjacency, 0.0)
    return adjacency


class TopologyLearner(nn.Module):
    """Shared-weight window encoder plus pairwise edge scorer.

    Parameter shapes depend only on (kappa, in_channels, hidden_dim), never on
    the node count, so the same learner scores any node set.
    """

    def __init__(self, kappa: int, in_channels: int, hidden_dim: int):
        super().__init__()
        self.kappa = kappa
        self.in_channels = in_channels
        self.hidden_dim = hidden_dim
        self.encoder = nn.Sequential(
            nn.Linear(kappa * in_channels, hidden_dim),
            nn.ReLU(),
            nn.Linear(hidden_dim, hidden_dim),
        )
        self.scorer = nn.Sequential(
            nn.Linear(2 * hidden_dim, hidden_dim),
            nn.ReLU(),
            nn.Linear(hidden_dim, 1),
        )

    def encode_windows(self, windows: torch.Tensor) -> torch.Tensor:
        # windows: [..., M, kappa, C] -> [..., M, d]
        if windows.shape[-2] != self.kappa or windows.shape[-1] != self.in_channels:
            raise ValueError(
                f"expected windows [..., M, {self.kappa}, {self.in_channels}], "
                f"got {tuple(windows.shape)}"
            )
        flat = windows.reshape(*windows.shape[:-2], self.kappa * self.in_channels)
        return self.encoder(flat)

    def pair_scores(self, reps: torch.Tensor) -> torch.Tensor:
        # reps: [..., M, d] -> scores [..., M, M] with entry (i, j) from [rep_i || rep_j]
        m = reps.shape[-2]
        left = reps.unsqueeze(-2).expand(*reps.shape[:-1], m, reps.shape[-1])
        right = reps.unsqueeze(-3).expand_as(left)
        pair = torch.cat([left, right], dim=-1)
        return torch.sigmoid(self.scorer(pair).squeeze(-1))

    def forward(
        self,
        windows: torch.Tensor,
        eps: float,
        phi: float,
        s: float,
        hard: bool = True,
        variant: str = "soft-threshold",
        generator: torch.Generator | None = None,
        noise: tuple[torch.Tensor, torch.Tensor] | None = None,
    ) -> TopologyState:
        reps = self.encode_windows(windows)
        scores = self.pair_scores(reps)
        edge_probs = sparsify(scores, eps, phi, variant)
        adjacency = sample_adjacency(edge_probs, s, hard=hard, generator=generator, noise=noise)
        return TopologyState(
            scores=scores, edge_probs=edge_probs, adjacency=adjacency, eps=eps, phi=phi, s=s
        )

    def extend_for_virtual(
        self,
        real_windows: torch.Tensor,
        virtual_windows: torch.Tensor,
        eps: float,
        phi: float,
        s: float,
        hard: bool = True,
        variant: str = "soft-threshold",
        generator: torch.Generator | None = None,
        noise: tuple[torch.Tensor, torch.Tensor] | None = None,
    ) -> TopologyState:
        """Joint topology over real train nodes plus generated virtual nodes."""
        joint = torch.cat([real_windows, virtual_windows], dim=-3)
        return self.forward(
            joint, eps, phi, s, hard=hard, variant=variant, generator=generator, noise=noise
        )
