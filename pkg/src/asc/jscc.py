"""Variable-rate deep JSCC encoder/decoder over latent tokens.

Each token is mapped to k_bar_i channel symbols through a per-rate FC
head after a small token-mixing backbone; rate-token embeddings tell the
backbone which head will fire.  The optional Channel ModNet conditions
the token features on SNR: a stack of FC layers interleaved with SNR
modulation (SM) modules, each gating features elementwise by a learned
sigmoid mask of the SNR.  The transmitter only sees the scalar CQI; the
receiver sees exact per-token SNRs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .entropy_model import RateAllocation
from .errors import (
    AllocationError,
    ConfigError,
    DegenerateInputError,
    DimensionError,
)

Span = tuple[int, int]


@dataclass
class ChannelSymbols:
    """A real channel-input vector plus which symbols carry which token."""

    symbols: torch.Tensor
    spans: list[Span]

    def __len__(self) -> int:
        return self.symbols.numel()


def power_normalize(s: torch.Tensor) -> torch.Tensor:
    """Scale to unit average power: s * sqrt(k / sum(s^2))."""
    energy = (s**2).sum()
    if float(energy.detach()) == 0.0:
        raise DegenerateInputError("cannot power-normalize an all-zero vector")
    return s * torch.sqrt(s.numel() / energy)


class SnrModulator(nn.Module):
    """SM module: three FC layers mapping an SNR scalar to a (0,1)^N gate.

    The dB input is standardized by (snr - 10) / 10 to keep activations in
    range over roughly -5..20 dB.
    """

    def __init__(self, width: int):
        super().__init__()
        self.fc1 = nn.Linear(1, width)
        self.fc2 = nn.Linear(width, width)
        self.fc3 = nn.Linear(width, width)

    def gate(self, snr_db: torch.Tensor) -> torch.Tensor:
        t = ((snr_db.reshape(-1, 1) - 10.0) / 10.0).to(self.fc1.weight.dtype)
        u = torch.relu(self.fc1(t))
        u = torch.relu(self.fc2(u))
        return torch.sigmoid(self.fc3(u))

    def forward(self, feature: torch.Tensor, snr_db: torch.Tensor) -> torch.Tensor:
        return feature * self.gate(snr_db)


class ChannelModNet(nn.Module):
    """Plug-in SNR conditioning: 8 FC layers separated by 7 SM modules.

    Runs at constant width; shared across tokens, applied token-wise with
    that token's SNR.  ``init_passthrough`` initializes the FC layers near
    identity and the gates near one, so plugging the module into a trained
    codec barely perturbs it before finetuning.
    """

    def __init__(self, width: int, fc_layers: int = 8, init_passthrough: bool = True):
        super().__init__()
        self.fcs = nn.ModuleList(nn.Linear(width, width) for _ in range(fc_layers))
        self.sms = nn.ModuleList(SnrModulator(width) for _ in range(fc_layers - 1))
        if init_passthrough:
            with torch.no_grad():
                for fc in self.fcs:
                    nn.init.eye_(fc.weight)
                    fc.weight.add_(torch.randn_like(fc.weight) * 1e-3)
                    nn.init.zeros_(fc.bias)
                for sm in self.sms:
                    nn.init.zeros_(sm.fc3.weight)
                    nn.init.constant_(sm.fc3.bias, 4.0)  # sigmoid(4) ~ 0.982

    def forward(self, tokens: torch.Tensor, snr_db: torch.Tensor) -> torch.Tensor:
        if snr_db.numel() == 1:
            snr_db = snr_db.expand(tokens.shape[0])
        if snr_db.numel() != tokens.shape[0]:
            raise DimensionError("need one SNR per token (or a scalar)")
        x = tokens
        for i, fc in enumerate(self.fcs):
            x = fc(x)
            if i < len(self.sms):
                x = self.sms[i](x, snr_db)
        return x


class MixerBlock(nn.Module):
    """Residual token-mixing block: single-head attention + pointwise MLP."""

    def __init__(self, channels: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(channels)
        self.qkv = nn.Linear(channels, 3 * channels)
        self.proj = nn.Linear(channels, channels)
        self.norm2 = nn.LayerNorm(channels)
        self.mlp = nn.Sequential(
            nn.Linear(channels, 2 * channels),
            nn.GELU(),
            nn.Linear(2 * channels, channels),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        u = self.norm1(x)
        q, k, v = self.qkv(u).chunk(3, dim=-1)
        att = torch.softmax(q @ k.t() / math.sqrt(q.shape[-1]), dim=-1)
        x = x + self.proj(att @ v)
        return x + self.mlp(self.norm2(x))


def _rate_index(alloc: RateAllocation, value_set: tuple[int, ...]) -> torch.Tensor:
    lut = {v: i for i, v in enumerate(value_set)}
    try:
        return torch.tensor([lut[int(k)] for k in alloc.k_bar], dtype=torch.long)
    except KeyError as exc:
        raise AllocationError(
            f"allocation uses bandwidth {exc.args[0]} outside value set {value_set}"
        ) from exc


class JsccEncoder(nn.Module):
    """Tokens (l, c) -> power-normalized channel symbols per the allocation."""

    def __init__(
        self,
        channels: int,
        value_set: tuple[int, ...],
        backbone_blocks: int = 2,
        modnet: bool = False,
    ):
        super().__init__()
        self.value_set = tuple(sorted(int(v) for v in value_set))
        self.rate_tokens = nn.Parameter(torch.randn(len(self.value_set), channels) * 0.02)
        self.blocks = nn.ModuleList(MixerBlock(channels) for _ in range(backbone_blocks))
        self.modnet = ChannelModNet(channels) if modnet else None
        self.heads = nn.ModuleDict(
            {str(v): nn.Linear(channels, v) for v in self.value_set}
        )

    def forward(
        self,
        tokens: torch.Tensor,
        alloc: RateAllocation,
        cqi_db: float | None = None,
    ) -> ChannelSymbols:
        if alloc.k_bar.numel() != tokens.shape[0]:
            raise DimensionError("allocation length does not match token count")
        idx = _rate_index(alloc, self.value_set)
        x = tokens + self.rate_tokens[idx]
        for block in self.blocks:
            x = block(x)
        if self.modnet is not None:
            if cqi_db is None:
                raise ConfigError("channel-adaptive encoder needs the CQI")
            x = self.modnet(x, torch.tensor([float(cqi_db)], dtype=x.dtype))
        spans = alloc.spans()
        total = alloc.total_symbols
        out = x.new_zeros(total)
        for v in self.value_set:
            rows = (alloc.k_bar == v).nonzero(as_tuple=True)[0]
            if rows.numel() == 0:
                continue
            chunk = self.heads[str(v)](x[rows])
            pos = torch.cat(
                [torch.arange(*spans[int(r)]) for r in rows]
            )
            out = out.index_put((pos,), chunk.reshape(-1))
        return ChannelSymbols(symbols=power_normalize(out), spans=spans)


class JsccDecoder(nn.Module):
    """Received symbols -> reconstructed tokens, SNR-conditioned per token."""

    def __init__(
        self,
        channels: int,
        value_set: tuple[int, ...],
        backbone_blocks: int = 2,
        modnet: bool = False,
    ):
        super().__init__()
        self.value_set = tuple(sorted(int(v) for v in value_set))
        self.rate_tokens = nn.Parameter(torch.randn(len(self.value_set), channels) * 0.02)
        self.heads = nn.ModuleDict(
            {str(v): nn.Linear(v, channels) for v in self.value_set}
        )
        self.modnet = ChannelModNet(channels) if modnet else None
        self.blocks = nn.ModuleList(MixerBlock(channels) for _ in range(backbone_blocks))

    def forward(
        self,
        s_hat: ChannelSymbols,
        alloc: RateAllocation,
        snr_db: torch.Tensor | None = None,
    ) -> torch.Tensor:
        spans = s_hat.spans
        if [b - a for a, b in spans] != alloc.k_bar.tolist():
            raise DimensionError("symbol spans do not match the allocation")
        idx = _rate_index(alloc, self.value_set)
        l = alloc.k_bar.numel()
        sym = s_hat.symbols
        x = sym.new_zeros(l, self.rate_tokens.shape[1])
        for v in self.value_set:
            rows = (alloc.k_bar == v).nonzero(as_tuple=True)[0]
            if rows.numel() == 0:
                continue
            chunk = torch.stack([sym[spans[int(r)][0] : spans[int(r)][1]] for r in rows])
            x = x.index_put((rows,), self.heads[str(v)](chunk))
        x = x + self.rate_tokens[idx]
        if self.modnet is not None:
            if snr_db is None:
                raise ConfigError("channel-adaptive decoder needs per-token SNR")
            x = self.modnet(x, snr_db.to(x.dtype))
        for block in self.blocks:
            x = block(x)
        return x
