"""Learned analysis/synthesis transforms and the hyper pair.

Desk-scale reference architecture: the image-side pair uses two
downsampling stages (strides 4 then 2, so one token per 8x8 patch) of
small convolutional residual blocks; the hyper pair is two pointwise
linear layers per token.  The interfaces are architecture-agnostic, so a
heavier backbone can be substituted without touching the rest of the
pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .entropy_model import SIGMA_MIN, LatentPriorParams
from .errors import DimensionError


@dataclass
class LatentTokens:
    """Token matrix (l, c) plus the patch grid it unflattens to."""

    tokens: torch.Tensor
    grid: tuple[int, int]

    def __post_init__(self) -> None:
        gh, gw = self.grid
        if self.tokens.dim() != 2 or self.tokens.shape[0] != gh * gw:
            raise DimensionError(
                f"token matrix {tuple(self.tokens.shape)} does not match grid {self.grid}"
            )


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.GELU(),
            nn.Conv2d(channels, channels, 3, padding=1),
        )

    def forward(self, x):
        return x + self.body(x)


class AnalysisTransform(nn.Module):
    """Image (3, H, W) in [0,1] -> latent tokens (l, c), one per p x p patch."""

    def __init__(self, channels: int, strides: tuple[int, int] = (4, 2)):
        super().__init__()
        self.strides = strides
        s1, s2 = strides
        self.down1 = nn.Conv2d(3, channels, kernel_size=s1, stride=s1)
        self.res1 = ResidualBlock(channels)
        self.down2 = nn.Conv2d(channels, channels, kernel_size=s2, stride=s2)
        self.res2 = ResidualBlock(channels)

    @property
    def patch_size(self) -> int:
        return self.strides[0] * self.strides[1]

    def forward(self, x: torch.Tensor) -> LatentTokens:
        if x.dim() != 3 or x.shape[0] != 3:
            raise DimensionError(f"expected (3, H, W) image, got {tuple(x.shape)}")
        p = self.patch_size
        _, height, width = x.shape
        if height % p or width % p:
            raise DimensionError(
                f"image dims {height}x{width} not divisible by patch size {p}"
            )
        u = self.down1(x.unsqueeze(0))
        u = self.res1(u)
        u = self.down2(u)
        u = self.res2(u)
        _, c, gh, gw = u.shape
        tokens = u.squeeze(0).permute(1, 2, 0).reshape(gh * gw, c)
        return LatentTokens(tokens=tokens, grid=(gh, gw))


class SynthesisTransform(nn.Module):
    """Latent tokens -> image (3, H, W); clamped to [0,1] only when asked
    (evaluation), so gradient steps see the unclamped surface."""

    def __init__(self, channels: int, strides: tuple[int, int] = (4, 2)):
        super().__init__()
        s1, s2 = strides
        self.res1 = ResidualBlock(channels)
        self.up1 = nn.ConvTranspose2d(channels, channels, kernel_size=s2, stride=s2)
        self.res2 = ResidualBlock(channels)
        self.up2 = nn.ConvTranspose2d(channels, 3, kernel_size=s1, stride=s1)

    def forward(self, latents: LatentTokens, clamp: bool = False) -> torch.Tensor:
        gh, gw = latents.grid
        tokens = latents.tokens
        u = tokens.reshape(gh, gw, -1).permute(2, 0, 1).unsqueeze(0)
        u = self.res1(u)
        u = self.up1(u)
        u = self.res2(u)
        u = self.up2(u)
        x = u.squeeze(0)
        return x.clamp(0.0, 1.0) if clamp else x


class HyperAnalysis(nn.Module):
    """Tokens (l, c) -> hyper latent (l, cz), pointwise over tokens."""

    def __init__(self, channels: int, hyper_channels: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(channels, channels),
            nn.GELU(),
            nn.Linear(channels, hyper_channels),
        )

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        return self.net(tokens)


class HyperSynthesis(nn.Module):
    """Hyper latent -> per-token-per-channel (mu, sigma), sigma floored."""

    def __init__(self, channels: int, hyper_channels: int, sigma_min: float = SIGMA_MIN):
        super().__init__()
        self.sigma_min = sigma_min
        self.net = nn.Sequential(
            nn.Linear(hyper_channels, channels),
            nn.GELU(),
            nn.Linear(channels, 2 * channels),
        )

    def forward(self, z: torch.Tensor) -> LatentPriorParams:
        mu, raw = self.net(z).chunk(2, dim=-1)
        sigma = self.sigma_min + nn.functional.softplus(raw)
        return LatentPriorParams(mu=mu, sigma=sigma)
