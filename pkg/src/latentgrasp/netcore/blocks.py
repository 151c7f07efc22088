"""Shared network building blocks for the temporal models."""

import math

import torch
import torch.nn as nn


class SinusoidalPosEmb(nn.Module):
    """Classic sinusoidal embedding of a scalar timestep."""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        half = self.dim // 2
        freqs = torch.exp(
            torch.arange(half, dtype=x.dtype, device=x.device)
            * (-math.log(10000.0) / (half - 1)))
        args = x[:, None] * freqs[None, :]
        return torch.cat([args.sin(), args.cos()], dim=-1)


class Conv1dBlock(nn.Module):
    """Conv1d ('same' zero padding) -> GroupNorm -> SiLU."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 n_groups: int = 8):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv1d(in_channels, out_channels, kernel_size,
                      padding=kernel_size // 2),
            nn.GroupNorm(min(n_groups, out_channels), out_channels),
            nn.SiLU(),
        )

    def forward(self, x):
        return self.block(x)


class ConditionalResBlock1d(nn.Module):
    """Residual temporal block with FiLM conditioning from a global feature."""

    def __init__(self, in_channels: int, out_channels: int, cond_dim: int,
                 kernel_size: int = 5, n_groups: int = 8):
        super().__init__()
        self.block1 = Conv1dBlock(in_channels, out_channels, kernel_size, n_groups)
        self.block2 = Conv1dBlock(out_channels, out_channels, kernel_size, n_groups)
        self.cond_proj = nn.Linear(cond_dim, 2 * out_channels)
        self.residual = (nn.Conv1d(in_channels, out_channels, 1)
                         if in_channels != out_channels else nn.Identity())

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        h = self.block1(x)
        scale, bias = self.cond_proj(cond).chunk(2, dim=-1)
        h = h * (1.0 + scale.unsqueeze(-1)) + bias.unsqueeze(-1)
        h = self.block2(h)
        return h + self.residual(x)


class Downsample1d(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv1d(channels, channels, 3, stride=2, padding=1)

    def forward(self, x):
        return self.conv(x)


class Upsample1d(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.ConvTranspose1d(channels, channels, 4, stride=2, padding=1)

    def forward(self, x):
        return self.conv(x)


def mlp(dims, activation=nn.SiLU) -> nn.Sequential:
    """Dense stack with the activation between layers (none after the last)."""
    layers = []
    for i in range(len(dims) - 1):
        layers.append(nn.Linear(dims[i], dims[i + 1]))
        if i < len(dims) - 2:
            layers.append(activation())
    return nn.Sequential(*layers)
