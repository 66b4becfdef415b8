"""The assembled transmission model and its end-to-end forward pass.

One ``Codec`` owns the four nonlinear transforms, the factorized hyper
density, and the JSCC encoder/decoder.  Its forward runs a full
transmit-over-channel-decode pass for a single source instance and
returns every intermediate needed by the losses, the bandwidth
accounting, and the adaptation loops.  Parameters are addressed by
named groups so adaptation can update and freeze the right subsets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import torch
from torch import nn

from .channel import average_snr, per_token_snr, transmit
from .entropy_model import (
    SIGMA_MIN,
    FactorizedDensity,
    LatentPriorParams,
    RateAllocation,
    add_uniform_noise,
    allocate_bandwidth,
    hyper_rate,
    latent_rate,
)
from .errors import ConfigError, DimensionError
from .jscc import ChannelSymbols, JsccDecoder, JsccEncoder
from .transforms import (
    AnalysisTransform,
    HyperAnalysis,
    HyperSynthesis,
    LatentTokens,
    SynthesisTransform,
)

#: dB cap applied to SNR values fed to the ModNet (keeps the noiseless
#: test mode finite).
SNR_CAP_DB = 40.0

#: Named parameter groups and the submodule prefix that owns each.
PARAM_GROUPS = {
    "phi_g": "analysis.",
    "phi_h": "hyper_a.",
    "phi_f": "enc.",
    "theta_g": "synthesis.",
    "theta_h": "hyper_s.",
    "theta_f": "dec.",
    "psi": "z_prior.",
}

#: Groups updated by the transmitter; groups shipped to the receiver.
ENCODER_GROUPS = ("phi_g", "phi_f")
RECEIVER_GROUPS = ("theta_g", "theta_f")


@dataclass(frozen=True)
class CodecConfig:
    latent_channels: int = 32
    hyper_channels: int = 8
    stage_strides: tuple[int, int] = (4, 2)
    value_set: tuple[int, ...] = (2, 4, 8, 16)
    backbone_blocks: int = 2
    modnet: bool = False
    sigma_min: float = SIGMA_MIN

    def __post_init__(self) -> None:
        q = math.log2(len(self.value_set))
        if q != int(q):
            raise ConfigError("|value_set| must be a power of two")
        if len(set(self.value_set)) != len(self.value_set):
            raise ConfigError("value_set entries must be distinct")
        if any(v < 1 for v in self.value_set):
            raise ConfigError("bandwidth values must be >= 1")

    @property
    def patch_size(self) -> int:
        return self.stage_strides[0] * self.stage_strides[1]

    @property
    def side_info_bits(self) -> int:
        return int(math.log2(len(self.value_set)))


@dataclass
class TransmissionOutputs:
    """Every intermediate of one transmit-decode pass."""

    latents: LatentTokens
    z: torch.Tensor
    z_proxy: torch.Tensor
    prior: LatentPriorParams
    token_bits: torch.Tensor
    hyper_bits: torch.Tensor
    alloc: RateAllocation
    h: torch.Tensor
    s: ChannelSymbols
    s_hat: torch.Tensor
    y_hat: torch.Tensor
    x_hat: torch.Tensor
    cqi_db: float
    snr_token_db: torch.Tensor

    @property
    def rate_y_bits(self) -> torch.Tensor:
        return self.token_bits.sum()


def snr_inputs(
    h: torch.Tensor,
    noise_power: float,
    spans,
    decoder_snr: str = "csi",
) -> tuple[torch.Tensor, float]:
    """Per-token SNR vector for the decoder and the scalar CQI, both in dB
    and capped so a noiseless channel stays finite.

    ``decoder_snr='cqi'`` degrades the decoder input to the broadcast CQI,
    mimicking a receiver without exact CSI.
    """
    nv = max(noise_power, 10.0 ** (-SNR_CAP_DB / 10.0) / 10.0)
    per_tok = per_token_snr(h, nv, spans).clamp(-SNR_CAP_DB, SNR_CAP_DB)
    cqi = min(max(average_snr(h, nv), -SNR_CAP_DB), SNR_CAP_DB)
    if decoder_snr == "cqi":
        per_tok = torch.full_like(per_tok, cqi)
    elif decoder_snr != "csi":
        raise ConfigError(f"unknown decoder_snr mode {decoder_snr!r}")
    return per_tok, cqi


class Codec(nn.Module):
    """Full transmission model for a single source instance."""

    def __init__(self, config: CodecConfig):
        super().__init__()
        self.config = config
        c, cz = config.latent_channels, config.hyper_channels
        self.analysis = AnalysisTransform(c, config.stage_strides)
        self.synthesis = SynthesisTransform(c, config.stage_strides)
        self.hyper_a = HyperAnalysis(c, cz)
        self.hyper_s = HyperSynthesis(c, cz, config.sigma_min)
        self.z_prior = FactorizedDensity(cz)
        self.enc = JsccEncoder(c, config.value_set, config.backbone_blocks, config.modnet)
        self.dec = JsccDecoder(c, config.value_set, config.backbone_blocks, config.modnet)

    # -- parameter bookkeeping -------------------------------------------

    def group_parameters(self, *groups: str) -> dict[str, nn.Parameter]:
        """Named parameters of the requested groups, in a fixed order."""
        prefixes = []
        for g in groups:
            if g not in PARAM_GROUPS:
                raise ConfigError(f"unknown parameter group {g!r}")
            prefixes.append(PARAM_GROUPS[g])
        out = {}
        for name, p in self.named_parameters():
            if any(name.startswith(pre) for pre in prefixes):
                out[name] = p
        return out

    def parameter_count(self, *groups: str) -> int:
        return sum(p.numel() for p in self.group_parameters(*groups).values())

    # -- forward ----------------------------------------------------------

    def forward(
        self,
        x: torch.Tensor,
        csi,
        noise_power: float,
        eta_y: float,
        rng: Optional[torch.Generator] = None,
        train_mode: bool = True,
        proxy_noise: Optional[bool] = None,
        alloc: Optional[RateAllocation] = None,
        channel_noise: Optional[torch.Tensor] = None,
        z_noise: Optional[torch.Tensor] = None,
        decoder_snr: str = "csi",
        latents: Optional[LatentTokens] = None,
    ) -> TransmissionOutputs:
        """Transmit ``x`` over the channel and decode it.

        ``csi`` is either a sampler with ``sample(k)`` or a gain vector of
        the right length.  In train mode the hyper latent is perturbed by
        unit uniform noise before h_s and the rate terms (the side
        information is never transmitted, so evaluation uses the exact z)
        and the reconstruction is left unclamped so gradients stay alive;
        ``proxy_noise`` decouples the noise proxy from the mode for
        deterministic diagnostics.  Code adaptation passes ``latents``
        directly, bypassing the analysis transform.
        """
        if latents is None:
            latents = self.analysis(x)
        y = latents.tokens
        z = self.hyper_a(y)
        use_noise = train_mode if proxy_noise is None else proxy_noise
        if z_noise is not None:
            z_proxy = z + z_noise
        elif use_noise:
            z_proxy = add_uniform_noise(z, rng)
        else:
            z_proxy = z
        prior = self.hyper_s(z_proxy)
        token_bits = latent_rate(y, prior)
        hyper_bits = hyper_rate(z_proxy, self.z_prior)
        if alloc is None:
            alloc = allocate_bandwidth(token_bits, eta_y, self.config.value_set)
        k = alloc.total_symbols
        h = csi.sample(k) if hasattr(csi, "sample") else csi
        if h.numel() != k:
            raise DimensionError(f"CSI length {h.numel()} != symbol count {k}")
        snr_tok, cqi = snr_inputs(h, noise_power, alloc.spans(), decoder_snr)
        s = self.enc(y, alloc, cqi if self.config.modnet else None)
        s_hat = transmit(s.symbols, h, noise_power, rng, noise=channel_noise)
        y_hat = self.dec(
            ChannelSymbols(symbols=s_hat, spans=s.spans),
            alloc,
            snr_tok if self.config.modnet else None,
        )
        x_hat = self.synthesis(LatentTokens(y_hat, latents.grid), clamp=not train_mode)
        return TransmissionOutputs(
            latents=latents,
            z=z,
            z_proxy=z_proxy,
            prior=prior,
            token_bits=token_bits,
            hyper_bits=hyper_bits,
            alloc=alloc,
            h=h,
            s=s,
            s_hat=s_hat,
            y_hat=y_hat,
            x_hat=x_hat,
            cqi_db=cqi,
            snr_token_db=snr_tok,
        )


def build_codec(config: CodecConfig, seed: int = 0) -> Codec:
    """Construct a codec with deterministic, seed-controlled initialization."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return Codec(config)


def source_dims(x: torch.Tensor) -> int:
    return x.numel()
