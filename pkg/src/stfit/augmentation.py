"""Temporal data augmentation: window VAE, latent mixup, and its training losses.

New series are generated by encoding two real (kappa+tau)-length windows,
convex-combining their sampled latents, and decoding. The similarity loss
pulls the re-encoded generated series toward both parents in latent space,
the forecast-consistency loss asks the backbone to forecast the generated
series itself, and the KL term regularizes the posterior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

LOG_SIGMA_CLAMP = 8.0


@dataclass
class MixPair:
    """An ordered pair of distinct training nodes to mix."""

    v_i: int
    v_j: int


@dataclass
class GeneratedSeries:
    """One generated virtual-node series aligned to anchor step xi."""

    series: np.ndarray
    pair: MixPair
    anchor: int


class WindowVAE(nn.Module):
    """Two-layer MLP encoder over the flattened window, mirrored decoder.

    The log-sigma head is clamped to [-8, 8]; sigma is strictly positive.
    Weights are shared across nodes and anchors.
    """

    def __init__(self, window_len: int, in_channels: int, hidden_dim: int):
        super().__init__()
        self.window_len = window_len
        self.in_channels = in_channels
        self.hidden_dim = hidden_dim
        flat = window_len * in_channels
        self.enc_hidden = nn.Linear(flat, hidden_dim)
        self.mu_head = nn.Linear(hidden_dim, hidden_dim)
        self.log_sigma_head = nn.Linear(hidden_dim, hidden_dim)
        self.dec_hidden = nn.Linear(hidden_dim, hidden_dim)
        self.dec_out = nn.Linear(hidden_dim, flat)

    def encode(self, window: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        # window: [..., window_len, C] -> mu, sigma each [..., d]
        if window.shape[-2] != self.window_len or window.shape[-1] != self.in_channels:
            raise ValueError(
                f"expected window [..., {self.window_len}, {self.in_channels}], "
                f"got {tuple(window.shape)}"
            )
        flat = window.reshape(*window.shape[:-2], -1)
        h = F.relu(self.enc_hidden(flat))
        mu = self.mu_head(h)
        log_sigma = self.log_sigma_head(h).clamp(-LOG_SIGMA_CLAMP, LOG_SIGMA_CLAMP)
        return mu, torch.exp(log_sigma)

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        h = F.relu(self.dec_hidden(z))
        out = self.dec_out(h)
        return out.reshape(*z.shape[:-1], self.window_len, self.in_channels)


def sample_latent(
    mu: torch.Tensor,
    sigma: torch.Tensor,
    generator: torch.Generator | None = None,
    noise: torch.Tensor | None = None,
) -> torch.Tensor:
    """Reparameterized draw z = mu + sigma * eps with eps ~ N(0, I)."""
    if noise is None:
        noise = torch.randn(
            mu.shape, generator=generator, dtype=mu.dtype, device=mu.device
        )
    return mu + sigma * noise


def mixup(z_i: torch.Tensor, z_j: torch.Tensor, lam: float) -> torch.Tensor:
    """Convex combination lam * z_i + (1 - lam) * z_j.

    The training config restricts lam to (0, 0.5]; the combination itself is
    valid for any lam in (0, 1).
    """
    if not 0.0 < lam < 1.0:
        raise ValueError(f"mixup ratio must lie in (0, 1), got {lam}")
    if z_i.shape != z_j.shape:
        raise ValueError("latent shapes must match")
    return lam * z_i + (1.0 - lam) * z_j


def sample_pairs(
    train_nodes: list[int], k: int, rng: np.random.Generator
) -> list[MixPair]:
    """Draw k ordered pairs of distinct training nodes, uniformly per pair."""
    nodes = list(train_nodes)
    n = len(nodes)
    if n < 2:
        raise ValueError("need at least 2 training nodes to sample pairs")
    if k < 1:
        raise ValueError("k must be >= 1")
    first = rng.integers(0, n, size=k)
    offset = rng.integers(1, n, size=k)
    second = (first + offset) % n
    return [MixPair(nodes[int(i)], nodes[int(j)]) for i, j in zip(first, second)]


def generate_batch(
    vae: WindowVAE,
    windows: torch.Tensor,
    idx_i: torch.Tensor,
    idx_j: torch.Tensor,
    lam: float,
    generator: torch.Generator | None = None,
    noise: torch.Tensor | None = None,
) -> dict[str, torch.Tensor]:
    """Encode all windows, sample latents, mix the indexed pairs, decode.

    windows: [B, N, L, C] per-node full windows; idx_i/idx_j: positions into
    the node axis, length K. Returns the generated series plus every latent
    needed by the losses (parents, mixed, re-encoded mean, posterior stats).
    """
    mu, sigma = vae.encode(windows)  # [B, N, d]
    z = sample_latent(mu, sigma, generator=generator, noise=noise)
    z_i = z[:, idx_i, :]
    z_j = z[:, idx_j, :]
    z_mixed = mixup(z_i, z_j, lam)
    x_hat = vae.decode(z_mixed)  # [B, K, L, C]
    mu_gen, _ = vae.encode(x_hat)  # re-encoded posterior mean of the generated series
    return {
        "x_hat": x_hat,
        "z_i": z_i,
        "z_j": z_j,
        "z_mixed": z_mixed,
        "z_gen": mu_gen,
        "mu": mu,
        "sigma": sigma,
    }


def generate(
    vae: WindowVAE,
    windows: torch.Tensor,
    pairs: list[MixPair],
    lam: float,
    anchor: int,
    generator: torch.Generator | None = None,
) -> list[GeneratedSeries]:
    """Generate one virtual series per pair from per-node windows [N, L, C].

    Pair node ids index the node axis of `windows`.
    """
    idx_i = torch.tensor([p.v_i for p in pairs], dtype=torch.long)
    idx_j = torch.tensor([p.v_j for p in pairs], dtype=torch.long)
    out = generate_batch(
        vae, windows.unsqueeze(0), idx_i, idx_j, lam, generator=generator
    )
    series = out["x_hat"].squeeze(0).detach().cpu().numpy()
    return [
        GeneratedSeries(series=series[k], pair=pairs[k], anchor=anchor)
        for k in range(len(pairs))
    ]


def similarity_loss(
    z_gen: torch.Tensor, z_i: torch.Tensor, z_j: torch.Tensor, lam: float
) -> torch.Tensor:
    """Negated mixed cosine similarity between the generated latent and its parents.

    The per-pair similarity lam*cos(z_gen, z_i) + (1-lam)*cos(z_gen, z_j) is
    maximized, so its negation enters the minimized objective. Cosine against
    a zero vector counts as 0.
    """
    cos_i = F.cosine_similarity(z_gen, z_i, dim=-1)
    cos_j = F.cosine_similarity(z_gen, z_j, dim=-1)
    return -(lam * cos_i + (1.0 - lam) * cos_j).mean()


def kl_loss(mu: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
    """KL(N(mu, sigma^2) || N(0, I)) averaged over all leading dimensions."""
    per_code = 0.5 * (mu.pow(2) + sigma.pow(2) - 1.0 - 2.0 * torch.log(sigma))
    return per_code.sum(-1).mean()


def forecast_consistency_loss(
    x_hat: torch.Tensor,
    real_inputs: torch.Tensor,
    backbone: nn.Module,
    adjacency: torch.Tensor,
    kappa: int,
    tau: int,
) -> torch.Tensor:
    """Backbone forecast error on the generated series, run jointly with real nodes.

    x_hat: [B, K, kappa+tau, C] generated series; real_inputs: [B, kappa, Nt, C].
    The first kappa generated steps join the real inputs as virtual nodes, the
    backbone runs over the joint adjacency, and the mean squared error is taken
    on the virtual nodes' last tau steps only.
    """
    if x_hat.shape[-2] != kappa + tau:
        raise ValueError(
            f"generated series length {x_hat.shape[-2]} != kappa+tau={kappa + tau}"
        )
    n_real = real_inputs.shape[2]
    virtual_inputs = x_hat[:, :, :kappa, :].permute(0, 2, 1, 3)  # [B, kappa, K, C]
    joint = torch.cat([real_inputs, virtual_inputs], dim=2)
    preds = backbone(joint, adjacency)  # [B, tau, Nt+K, C]
    virtual_preds = preds[:, :, n_real:, :]
    target = x_hat[:, :, kappa:, :].permute(0, 2, 1, 3)
    mask = torch.isfinite(target)
    if not mask.all():
        return F.mse_loss(virtual_preds[mask], target[mask])
    return F.mse_loss(virtual_preds, target)
