"""Latent-prior / hyperprior rate estimation and bandwidth allocation.

The latent tokens are priced under a per-element Gaussian convolved with a
unit uniform (so the unit-bin mass is a probability and the rate is
non-negative); the hyper latent is priced under a learned non-parametric
per-channel univariate density, likewise convolved with a unit uniform.
Token rates drive the per-token bandwidth allocation over a small value
set V of symbols-per-token, signaled with q = log2|V| side-info bits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import torch
from torch import nn

from .errors import ConfigError, DimensionError

#: Lower bound on the latent prior scale; keeps the unit-bin log-mass finite
#: and avoids degenerate zero-rate collapse.
SIGMA_MIN = 0.11

#: Floor on probability masses before taking logs.
LIKELIHOOD_BOUND = 1e-12

LOG2E = math.log2(math.e)


class LatentPriorParams(NamedTuple):
    """Per-token-per-channel Gaussian prior parameters (mu, sigma)."""

    mu: torch.Tensor
    sigma: torch.Tensor


def gaussian_bin_mass(
    y: torch.Tensor, mu: torch.Tensor, sigma: torch.Tensor
) -> torch.Tensor:
    """Mass of N(mu, sigma^2) over the unit bin centered at y.

    Evaluates both CDF terms in the lower Gaussian tail for numerical
    stability; symmetric, so the value is unchanged.
    """
    if torch.any(sigma <= 0):
        raise ConfigError("sigma must be > 0")
    centered = (y - mu).abs()
    upper = torch.special.ndtr((0.5 - centered) / sigma)
    lower = torch.special.ndtr((-0.5 - centered) / sigma)
    return upper - lower


def latent_rate(y: torch.Tensor, params: LatentPriorParams) -> torch.Tensor:
    """Per-token rate in bits: sum over channels of -log2 unit-bin mass.

    ``y`` has shape (l, c); returns shape (l,).  Differentiable in y, mu,
    and sigma.
    """
    if y.shape != params.mu.shape or y.shape != params.sigma.shape:
        raise DimensionError("latent / prior parameter shape mismatch")
    mass = gaussian_bin_mass(y, params.mu, params.sigma)
    mass = torch.clamp(mass, min=LIKELIHOOD_BOUND)
    return -torch.log2(mass).sum(dim=-1)


def add_uniform_noise(
    x: torch.Tensor, rng: Optional[torch.Generator] = None, width: float = 1.0
) -> torch.Tensor:
    """Perturb each element by i.i.d. U(-width/2, width/2)."""
    o = (torch.rand(x.shape, generator=rng, dtype=x.dtype) - 0.5) * width
    return x + o


class FactorizedDensity(nn.Module):
    """Learned per-channel univariate density for the hyper latent.

    Each channel's CDF is a composition of small monotone nonlinear maps
    (softplus-parameterized matrices, tanh-gated nonlinearities, final
    sigmoid); the density is its derivative.  Three hidden layers of width
    three per channel.
    """

    def __init__(self, channels: int, filters: Sequence[int] = (3, 3, 3),
                 init_scale: float = 3.0):
        super().__init__()
        self.channels = channels
        self.filters = tuple(int(f) for f in filters)
        dims = (1,) + self.filters + (1,)
        scale = init_scale ** (1.0 / (len(dims) - 1))
        self._matrices = nn.ParameterList()
        self._biases = nn.ParameterList()
        self._factors = nn.ParameterList()
        for i in range(len(dims) - 1):
            init = math.log(math.expm1(1.0 / scale / dims[i + 1]))
            m = torch.full((channels, dims[i + 1], dims[i]), init)
            self._matrices.append(nn.Parameter(m))
            b = torch.empty(channels, dims[i + 1], 1).uniform_(-0.5, 0.5)
            self._biases.append(nn.Parameter(b))
            if i < len(dims) - 2:
                self._factors.append(nn.Parameter(torch.zeros(channels, dims[i + 1], 1)))

    def _logits_cdf(self, x: torch.Tensor) -> torch.Tensor:
        # x: (channels, 1, n) -> logits of the per-channel CDF, same shape.
        u = x
        for i, matrix in enumerate(self._matrices):
            u = torch.matmul(nn.functional.softplus(matrix), u) + self._biases[i]
            if i < len(self._factors):
                u = u + torch.tanh(self._factors[i]) * torch.tanh(u)
        return u

    def _to_channel_major(self, z: torch.Tensor) -> torch.Tensor:
        if z.dim() == 1:
            z = z.unsqueeze(0)
        if z.shape[-1] != self.channels:
            raise DimensionError(
                f"expected trailing dim {self.channels}, got {tuple(z.shape)}"
            )
        return z.reshape(-1, self.channels).t().unsqueeze(1)

    def cdf(self, z: torch.Tensor) -> torch.Tensor:
        """Per-element CDF value; ``z`` shaped (..., channels)."""
        x = self._to_channel_major(z)
        out = torch.sigmoid(self._logits_cdf(x))
        return out.squeeze(1).t().reshape(z.shape)

    def bin_mass(self, z: torch.Tensor) -> torch.Tensor:
        """Mass of the learned density over the unit bin centered at z.

        Computed from CDF logits with a sign flip toward the better-
        conditioned sigmoid tail.
        """
        x = self._to_channel_major(z)
        lower = self._logits_cdf(x - 0.5)
        upper = self._logits_cdf(x + 0.5)
        sign = -torch.sign(lower + upper).detach()
        mass = torch.abs(torch.sigmoid(sign * upper) - torch.sigmoid(sign * lower))
        return mass.squeeze(1).t().reshape(z.shape)

    def integral(self, lo: float = -30.0, hi: float = 30.0) -> torch.Tensor:
        """Integral of each channel's density over [lo, hi] (CDF difference)."""
        dtype = self._matrices[0].dtype
        with torch.no_grad():
            hi_t = torch.full((1, self.channels), float(hi), dtype=dtype)
            lo_t = torch.full((1, self.channels), float(lo), dtype=dtype)
            return (self.cdf(hi_t) - self.cdf(lo_t)).squeeze(0)


def hyper_rate(z: torch.Tensor, prior) -> torch.Tensor:
    """Total rate in bits of the hyper latent under ``prior``.

    ``prior`` is anything exposing ``bin_mass`` (unit-bin mass per element);
    non-negative because the convolved density never exceeds 1 per bin.
    """
    mass = torch.clamp(prior.bin_mass(z), min=LIKELIHOOD_BOUND)
    return -torch.log2(mass).sum()


@dataclass(frozen=True)
class RateAllocation:
    """Per-token channel bandwidth drawn from the value set V."""

    k_bar: torch.Tensor  # (l,) long tensor, each entry in value_set
    value_set: tuple[int, ...]
    side_info_bits: int  # q bits per token signaling the chosen value

    @property
    def total_symbols(self) -> int:
        return int(self.k_bar.sum())

    def spans(self) -> list[tuple[int, int]]:
        """Symbol index ranges carrying each token, in token order."""
        out = []
        pos = 0
        for k in self.k_bar.tolist():
            out.append((pos, pos + k))
            pos += k
        return out


def allocate_bandwidth(
    token_rate_bits: torch.Tensor, eta_y: float, value_set: Sequence[int]
) -> RateAllocation:
    """Quantize eta_y * rate onto the nearest element of V (ties round up).

    Monotone non-decreasing in the token rate.  q = log2 |V| bits per token
    are accounted as side information.
    """
    if len(value_set) == 0:
        raise ConfigError("empty bandwidth value set")
    vs = sorted(int(v) for v in value_set)
    q = int(math.log2(len(vs)))
    if 2**q != len(vs):
        raise ConfigError(f"|V| must be a power of two, got {len(vs)}")
    if eta_y <= 0:
        raise ConfigError("eta_y must be > 0")
    k = eta_y * token_rate_bits.detach().to(torch.float64)
    values = torch.tensor(vs, dtype=torch.float64)
    # Midpoints between consecutive values; a tie at the midpoint takes the
    # larger value, so allocation never undershoots at ties.
    mids = (values[:-1] + values[1:]) / 2
    idx = torch.searchsorted(mids, k, right=True)
    k_bar = torch.tensor(vs, dtype=torch.long)[idx]
    return RateAllocation(k_bar=k_bar, value_set=tuple(vs), side_info_bits=q)
