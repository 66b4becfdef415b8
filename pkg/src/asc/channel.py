"""Wireless channel simulation.

Implements the per-symbol fading-plus-noise channel s_hat = h * s + n,
CSI sampling from configurable gain domains (AWGN, block fading,
frequency-selective fading, or a recorded trace file), and the SNR
bookkeeping used by the SNR-conditioned codec: per-token SNR at the
receiver (exact CSI) and the scalar average-SNR CQI fed back to the
transmitter.

All functions are pure given an explicit ``torch.Generator``; parallel
callers must own separate generator streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import torch

from .errors import ConfigError, DataError, DimensionError

Span = tuple[int, int]

CHANNEL_KINDS = ("awgn", "block_fading", "selective_fading", "csi_file")

#: Rayleigh scale giving unit mean-square gain, E[g^2] = 2 * scale^2 = 1.
RAYLEIGH_UNIT_SCALE = 1.0 / math.sqrt(2.0)


@dataclass(frozen=True)
class ChannelConfig:
    """Channel model configuration.

    Exactly one of ``noise_power`` (sigma_n^2 per real symbol) or ``snr_db``
    must be given; with ``snr_db`` the noise power is derived assuming the
    configured per-symbol signal power (the codec's power normalization
    enforces signal power 1 by default, so the SNR parameterization is
    unambiguous).
    """

    kind: str = "awgn"
    noise_power: Optional[float] = None
    snr_db: Optional[float] = None
    rayleigh_scale: float = RAYLEIGH_UNIT_SCALE
    csi_path: Optional[str] = None
    wrap: bool = True
    signal_power: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in CHANNEL_KINDS:
            raise ConfigError(f"unknown channel kind {self.kind!r}")
        if (self.noise_power is None) == (self.snr_db is None):
            raise ConfigError("give exactly one of noise_power / snr_db")
        if self.noise_power is not None and self.noise_power < 0:
            raise ConfigError("noise_power must be >= 0")
        if self.kind == "csi_file" and not self.csi_path:
            raise ConfigError("csi_file channel requires csi_path")
        if self.rayleigh_scale <= 0:
            raise ConfigError("rayleigh_scale must be > 0")
        if self.signal_power <= 0:
            raise ConfigError("signal_power must be > 0")

    @property
    def noise_variance(self) -> float:
        """sigma_n^2 per real symbol, whichever way it was parameterized."""
        if self.noise_power is not None:
            return float(self.noise_power)
        return self.signal_power / (10.0 ** (self.snr_db / 10.0))


class CsiTrace:
    """A recorded per-symbol gain trace loaded from a text file.

    Format: UTF-8, one non-negative decimal gain magnitude per line;
    ``#``-prefixed lines and blank lines are ignored.  Reads wrap around by
    default, with the wrap count recorded.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        gains: list[float] = []
        try:
            text = self.path.read_text(encoding="utf-8")
        except OSError as exc:
            raise DataError(f"cannot read CSI trace {self.path}: {exc}") from exc
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                g = float(line)
            except ValueError as exc:
                raise DataError(
                    f"{self.path}:{lineno}: not a decimal gain: {line!r}"
                ) from exc
            if not math.isfinite(g) or g < 0:
                raise DataError(f"{self.path}:{lineno}: gain must be finite and >= 0")
            gains.append(g)
        if not gains:
            raise DataError(f"CSI trace {self.path} holds no gains")
        self.gains = torch.tensor(gains, dtype=torch.float64)
        self.offset = 0
        self.wrap_count = 0

    def __len__(self) -> int:
        return self.gains.numel()

    def take(self, k: int, wrap: bool = True) -> torch.Tensor:
        """Return the next ``k`` gains, advancing the read offset."""
        n = len(self)
        if not wrap and self.offset + k > n:
            raise DataError(
                f"CSI trace {self.path} exhausted: need {k} gains at offset "
                f"{self.offset}, trace holds {n} (wrap disabled)"
            )
        idx = (self.offset + torch.arange(k)) % n
        self.wrap_count += (self.offset + k) // n - self.offset // n if k else 0
        self.offset = (self.offset + k) % n
        return self.gains[idx]


def sample_csi(
    cfg: ChannelConfig,
    k: int,
    rng: Optional[torch.Generator] = None,
    trace: Optional[CsiTrace] = None,
    dtype: torch.dtype = torch.float32,
) -> torch.Tensor:
    """Draw a length-``k`` CSI gain vector from the configured domain.

    awgn: all ones.  block_fading: one Rayleigh draw repeated k times.
    selective_fading: k i.i.d. Rayleigh draws.  csi_file: next k gains
    from the loaded trace.
    """
    if k < 1:
        raise DimensionError("k must be >= 1")
    if cfg.kind == "awgn":
        return torch.ones(k, dtype=dtype)
    if cfg.kind == "csi_file":
        if trace is None:
            raise DataError("csi_file channel needs a loaded CsiTrace")
        return trace.take(k, wrap=cfg.wrap).to(dtype)
    n = 1 if cfg.kind == "block_fading" else k
    u = torch.rand(n, generator=rng, dtype=torch.float64)
    # Inverse-CDF Rayleigh draw; 1-u keeps the argument strictly positive.
    g = cfg.rayleigh_scale * torch.sqrt(-2.0 * torch.log1p(-u))
    if cfg.kind == "block_fading":
        g = g.expand(k).clone()
    return g.to(dtype)


def transmit(
    s: torch.Tensor,
    h: torch.Tensor,
    noise_power: float,
    rng: Optional[torch.Generator] = None,
    noise: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Pass symbols through the fading channel: s_hat = h * s + n.

    Differentiable with respect to ``s`` (gains and noise are constants).
    ``noise`` may be supplied explicitly to reuse a fixed realization;
    otherwise it is drawn i.i.d. Gaussian(0, noise_power) from ``rng``.
    """
    if s.shape != h.shape:
        raise DimensionError(f"symbol/CSI length mismatch: {s.shape} vs {h.shape}")
    if noise_power < 0:
        raise ConfigError("noise_power must be >= 0")
    out = h.detach().to(s.dtype) * s
    if noise is not None:
        if noise.shape != s.shape:
            raise DimensionError("explicit noise length mismatch")
        return out + noise.detach().to(s.dtype)
    if noise_power == 0:
        return out
    n = torch.randn(s.shape, generator=rng, dtype=s.dtype) * math.sqrt(noise_power)
    return out + n


def _check_partition(spans: Sequence[Span], k: int) -> None:
    pos = 0
    for a, b in spans:
        if a != pos or b <= a:
            raise DimensionError(f"spans do not partition [0, {k}): bad span ({a}, {b})")
        pos = b
    if pos != k:
        raise DimensionError(f"spans cover [0, {pos}) but vector has length {k}")


def per_token_snr(
    h: torch.Tensor,
    noise_power: float,
    spans: Sequence[Span],
    signal_power: float = 1.0,
) -> torch.Tensor:
    """Receiver-side SNR per token: linear mean of h^2 * P over the token's
    symbol span, divided by the noise power, in dB."""
    if noise_power <= 0:
        raise ConfigError("per-token SNR needs noise_power > 0")
    _check_partition(spans, h.numel())
    h2 = (h.detach().to(torch.float64) ** 2) * signal_power
    vals = [h2[a:b].mean() / noise_power for a, b in spans]
    return 10.0 * torch.log10(torch.stack(vals))


def average_snr(
    h: torch.Tensor, noise_power: float, signal_power: float = 1.0
) -> float:
    """Transmitter-side CQI: the SNR averaged over all symbols, in dB."""
    if h.numel() == 0:
        raise DimensionError("empty CSI vector")
    snr = per_token_snr(h, noise_power, [(0, h.numel())], signal_power)
    return float(snr[0])


class CsiSampler:
    """Stateful CSI source bound to one channel config and rng stream.

    ``sample(k)`` returns a fresh gain vector of the requested length; the
    trace file (if any) is loaded once and its read offset advances across
    calls.
    """

    def __init__(
        self,
        cfg: ChannelConfig,
        rng: Optional[torch.Generator] = None,
        dtype: torch.dtype = torch.float32,
    ):
        self.cfg = cfg
        self.rng = rng
        self.dtype = dtype
        self.trace = CsiTrace(cfg.csi_path) if cfg.kind == "csi_file" else None

    @property
    def noise_variance(self) -> float:
        return self.cfg.noise_variance

    def sample(self, k: int) -> torch.Tensor:
        return sample_csi(self.cfg, k, self.rng, trace=self.trace, dtype=self.dtype)


class FixedCsi:
    """A degenerate sampler that always returns the same gain vector.

    Used for fixed-realization evaluations; the requested length must match.
    """

    def __init__(self, h: torch.Tensor, noise_variance: float):
        self.h = h
        self.noise_variance = noise_variance

    def sample(self, k: int) -> torch.Tensor:
        if k != self.h.numel():
            raise DimensionError(
                f"fixed CSI has length {self.h.numel()}, requested {k}"
            )
        return self.h
