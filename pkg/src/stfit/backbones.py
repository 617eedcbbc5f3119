"""Forecasting backbones: spectral-graph convolutional net, per-node LSTM, historical average.

All backbones share one contract: forward(x, adjacency) maps a normalized
input window [B, kappa, N, C] (or unbatched [kappa, N, C]) plus an N x N
adjacency (or per-sample [B, N, N]) to a forecast [B, tau, N, C]. None of
them carry node-indexed parameters, so any node count is accepted.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

LAPLACIAN_LAMBDA_MAX = 2.0


@dataclass
class BackboneConfig:
    hidden_dim: int = 64
    cheb_order: int = 3
    temporal_kernel: int = 3
    num_st_blocks: int = 2
    kappa: int = 12
    tau: int = 12
    in_channels: int = 1

    @property
    def receptive_field(self) -> int:
        return self.num_st_blocks * 2 * (self.temporal_kernel - 1) + 1

    def validate(self) -> None:
        if self.hidden_dim <= 0:
            raise ValueError("hidden_dim must be positive")
        if self.cheb_order < 1:
            raise ValueError("cheb_order must be >= 1")
        if self.temporal_kernel < 1:
            raise ValueError("temporal_kernel must be >= 1")
        if self.kappa < self.receptive_field:
            raise ValueError(
                f"kappa={self.kappa} below temporal receptive field "
                f"{self.receptive_field} for {self.num_st_blocks} blocks of "
                f"kernel {self.temporal_kernel}"
            )


def scaled_laplacian(adjacency: torch.Tensor) -> torch.Tensor:
    """Scaled graph Laplacian 2L/lambda_max - I with lambda_max fixed to 2.

    L = I - D^{-1/2} A D^{-1/2}; zero-degree nodes get a zero D^{-1/2} entry.
    Accepts [N, N] or batched [B, N, N]; differentiable in the adjacency.
    """
    degree = adjacency.sum(-1)
    inv_sqrt = torch.where(
        degree > 0, degree.clamp(min=1e-12).pow(-0.5), torch.zeros_like(degree)
    )
    norm_adj = inv_sqrt.unsqueeze(-1) * adjacency * inv_sqrt.unsqueeze(-2)
    eye = torch.eye(adjacency.shape[-1], dtype=adjacency.dtype, device=adjacency.device)
    lap = eye - norm_adj
    return 2.0 * lap / LAPLACIAN_LAMBDA_MAX - eye


class ChebGraphConv(nn.Module):
    """Chebyshev-polynomial graph convolution over the scaled Laplacian."""

    def __init__(self, in_features: int, out_features: int, order: int):
        super().__init__()
        if order < 1:
            raise ValueError("Chebyshev order must be >= 1")
        self.order = order
        self.weight = nn.Parameter(torch.empty(order, in_features, out_features))
        self.bias = nn.Parameter(torch.zeros(out_features))
        nn.init.xavier_uniform_(self.weight)

    def forward(self, x: torch.Tensor, lap: torch.Tensor) -> torch.Tensor:
        # x: [..., N, F_in]; lap: [N, N] or [B, N, N] broadcast over leading dims
        if lap.dim() == 3 and x.dim() == 4:
            lap = lap.unsqueeze(1)  # broadcast over the time axis
        t_prev = x
        out = t_prev @ self.weight[0]
        if self.order > 1:
            t_cur = lap @ x
            out = out + t_cur @ self.weight[1]
            for k in range(2, self.order):
                t_next = 2.0 * (lap @ t_cur) - t_prev
                t_prev, t_cur = t_cur, t_next
                out = out + t_cur @ self.weight[k]
        return out + self.bias


class GatedTemporalConv(nn.Module):
    """Gated temporal convolution: conv_a(x) * sigmoid(conv_b(x)) + projected residual.

    Shrinks the time axis by kernel-1. The residual always passes through a
    1x1 projection so that an all-zero parameter set yields an all-zero output.
    """

    def __init__(self, in_features: int, out_features: int, kernel: int):
        super().__init__()
        if kernel < 1:
            raise ValueError("temporal kernel must be >= 1")
        self.kernel = kernel
        self.conv = nn.Conv2d(in_features, 2 * out_features, (kernel, 1))
        self.residual = nn.Conv2d(in_features, out_features, (1, 1), bias=False)
        # no normalization layers anywhere in the stack, so keep the signal
        # scale alive across blocks
        nn.init.xavier_uniform_(self.conv.weight)
        nn.init.zeros_(self.conv.bias)
        nn.init.xavier_uniform_(self.residual.weight)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: [B, L, N, F]
        if x.shape[1] < self.kernel:
            raise ValueError(
                f"time length {x.shape[1]} shorter than kernel {self.kernel}"
            )
        h = x.permute(0, 3, 1, 2)  # [B, F, L, N]
        gate_in = self.conv(h)
        lin, gate = gate_in.chunk(2, dim=1)
        res = self.residual(h)[:, :, self.kernel - 1 :, :]
        out = lin * torch.sigmoid(gate) + res
        return out.permute(0, 2, 3, 1)


class STGCNBackbone(nn.Module):
    """Sandwich blocks of gated temporal convs around Chebyshev graph convs.

    The output head collapses the remaining time length with one temporal
    convolution and maps each node state linearly to tau * C values.
    """

    def __init__(self, config: BackboneConfig):
        super().__init__()
        config.validate()
        self.config = config
        hid = config.hidden_dim
        blocks = []
        in_feat = config.in_channels
        for _ in range(config.num_st_blocks):
            blocks.append(
                nn.ModuleDict(
                    {
                        "time_a": GatedTemporalConv(in_feat, hid, config.temporal_kernel),
                        "graph": ChebGraphConv(hid, hid, config.cheb_order),
                        "time_b": GatedTemporalConv(hid, hid, config.temporal_kernel),
                    }
                )
            )
            in_feat = hid
        self.blocks = nn.ModuleList(blocks)
        remaining = config.kappa - config.num_st_blocks * 2 * (config.temporal_kernel - 1)
        self.collapse = nn.Conv2d(hid, hid, (remaining, 1))
        self.head = nn.Linear(hid, config.tau * config.in_channels)
        nn.init.xavier_uniform_(self.collapse.weight)
        nn.init.zeros_(self.collapse.bias)
        nn.init.xavier_uniform_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, x: torch.Tensor, adjacency: torch.Tensor) -> torch.Tensor:
        squeeze = x.dim() == 3
        if squeeze:
            x = x.unsqueeze(0)
        if x.shape[2] == 0:
            raise ValueError("empty node set")
        if x.shape[1] != self.config.kappa:
            raise ValueError(
                f"input length {x.shape[1]} does not match kappa={self.config.kappa}"
            )
        lap = scaled_laplacian(adjacency)
        for block in self.blocks:
            x = block["time_a"](x)
            x = F.relu(block["graph"](x, lap))
            x = block["time_b"](x)
        h = F.relu(self.collapse(x.permute(0, 3, 1, 2)))  # [B, hid, 1, N]
        h = h.squeeze(2).permute(0, 2, 1)  # [B, N, hid]
        out = self.head(h)  # [B, N, tau*C]
        b, n = out.shape[0], out.shape[1]
        out = out.view(b, n, self.config.tau, self.config.in_channels)
        out = out.permute(0, 2, 1, 3)
        return out.squeeze(0) if squeeze else out


class FCLSTMForecaster(nn.Module):
    """Shared-weight sequence-to-sequence LSTM applied to each node independently."""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        if config.hidden_dim <= 0:
            raise ValueError("hidden_dim must be positive")
        self.config = config
        self.encoder = nn.LSTM(config.in_channels, config.hidden_dim, batch_first=True)
        self.decoder = nn.LSTMCell(config.in_channels, config.hidden_dim)
        self.proj = nn.Linear(config.hidden_dim, config.in_channels)

    def forward(self, x: torch.Tensor, adjacency: torch.Tensor | None = None) -> torch.Tensor:
        squeeze = x.dim() == 3
        if squeeze:
            x = x.unsqueeze(0)
        b, length, n, c = x.shape
        seq = x.permute(0, 2, 1, 3).reshape(b * n, length, c)
        _, (h, cell) = self.encoder(seq)
        hx, cx = h[-1], cell[-1]
        step = seq[:, -1, :]
        outputs = []
        for _ in range(self.config.tau):
            hx, cx = self.decoder(step, (hx, cx))
            step = self.proj(hx)
            outputs.append(step)
        out = torch.stack(outputs, dim=1)  # [B*N, tau, C]
        out = out.view(b, n, self.config.tau, c).permute(0, 2, 1, 3)
        return out.squeeze(0) if squeeze else out


class HAForecaster(nn.Module):
    """Historical average: every forecast step is the mean of the input window."""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config

    def forward(self, x: torch.Tensor, adjacency: torch.Tensor | None = None) -> torch.Tensor:
        return ha_forecast(x, self.config.tau)


def ha_forecast(x: torch.Tensor, tau: int) -> torch.Tensor:
    """Uniform-weight average of the input steps, repeated tau times."""
    time_dim = x.dim() - 3
    mean = x.mean(dim=time_dim, keepdim=True)
    reps = [1] * x.dim()
    reps[time_dim] = tau
    return mean.repeat(*reps)


BACKBONES = {
    "stgcn": STGCNBackbone,
    "fclstm": FCLSTMForecaster,
    "ha": HAForecaster,
}


def build_backbone(name: str, config: BackboneConfig) -> nn.Module:
    if name not in BACKBONES:
        raise ValueError(f"unknown backbone {name!r}; choose from {sorted(BACKBONES)}")
    return BACKBONES[name](config)
