import math

import pytest
import torch

from asc.channel import (
    ChannelConfig,
    CsiSampler,
    CsiTrace,
    FixedCsi,
    average_snr,
    per_token_snr,
    sample_csi,
    transmit,
)
from asc.errors import ConfigError, DataError, DimensionError


def gen(seed=0):
    return torch.Generator().manual_seed(seed)


class TestChannelConfig:
    def test_exactly_one_parameterization(self):
        with pytest.raises(ConfigError):
            ChannelConfig(kind="awgn", noise_power=0.1, snr_db=10.0)
        with pytest.raises(ConfigError):
            ChannelConfig(kind="awgn")

    def test_snr_to_noise_power(self):
        cfg = ChannelConfig(kind="awgn", snr_db=10.0)
        assert cfg.noise_variance == pytest.approx(0.1)
        cfg = ChannelConfig(kind="awgn", snr_db=0.0)
        assert cfg.noise_variance == pytest.approx(1.0)

    def test_negative_noise_power_rejected(self):
        with pytest.raises(ConfigError):
            ChannelConfig(kind="awgn", noise_power=-1.0)

    def test_csi_file_needs_path(self):
        with pytest.raises(ConfigError):
            ChannelConfig(kind="csi_file", noise_power=0.1)


class TestTransmit:
    def test_noiseless_identity(self):
        s = torch.tensor([1.0, -1.0, 2.0])
        h = torch.ones(3)
        out = transmit(s, h, 0.0, gen())
        assert torch.equal(out, s)

    def test_pure_scaling(self):
        out = transmit(torch.tensor([2.0]), torch.tensor([0.5]), 0.0, gen())
        assert torch.equal(out, torch.tensor([1.0]))

    def test_monte_carlo_noise_variance(self):
        k = 10_000
        s = torch.ones(k)
        out = transmit(s, torch.ones(k), 0.1, gen(1))
        emp = float(((out - s) ** 2).mean())
        assert 0.09 <= emp <= 0.11

    def test_noise_statistics_within_two_percent(self):
        k = 200_000
        s = torch.zeros(k)
        for var in (0.05, 1.0):
            out = transmit(s, torch.ones(k), var, gen(2))
            emp = float(out.var(correction=0))
            assert abs(emp - var) <= 0.02 * var

    def test_determinism(self):
        s = torch.randn(64, generator=gen(3))
        h = torch.ones(64)
        a = transmit(s, h, 0.3, gen(7))
        b = transmit(s, h, 0.3, gen(7))
        assert torch.equal(a, b)

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            transmit(torch.ones(3), torch.ones(4), 0.1, gen())

    def test_negative_noise_power(self):
        with pytest.raises(ConfigError):
            transmit(torch.ones(3), torch.ones(3), -0.1, gen())

    def test_differentiable_in_symbols(self):
        s = torch.randn(8, generator=gen(4)).requires_grad_(True)
        h = torch.full((8,), 0.7)
        out = transmit(s, h, 0.2, gen(5))
        out.sum().backward()
        assert torch.allclose(s.grad, h)


class TestSampleCsi:
    def test_awgn_all_ones_regardless_of_rng(self):
        cfg = ChannelConfig(kind="awgn", snr_db=10.0)
        for seed in (0, 1, 99):
            g = sample_csi(cfg, 4, gen(seed))
            assert torch.equal(g, torch.ones(4))

    def test_block_fading_constant_within_block(self):
        cfg = ChannelConfig(kind="block_fading", snr_db=10.0)
        g = sample_csi(cfg, 3, gen(0))
        assert g.numel() == 3
        assert torch.equal(g, g[0].expand(3))

    def test_selective_rayleigh_second_moment(self):
        cfg = ChannelConfig(kind="selective_fading", snr_db=10.0)
        g = sample_csi(cfg, 100_000, gen(11))
        assert 0.98 <= float((g.double() ** 2).mean()) <= 1.02

    def test_k_must_be_positive(self):
        cfg = ChannelConfig(kind="awgn", snr_db=10.0)
        with pytest.raises(DimensionError):
            sample_csi(cfg, 0, gen())


class TestCsiTrace:
    def make_trace(self, tmp_path, body):
        p = tmp_path / "trace.txt"
        p.write_text(body, encoding="utf-8")
        return p

    def test_loads_and_skips_comments(self, tmp_path):
        p = self.make_trace(tmp_path, "# header\n1.0\n0.5\n\n2.0\n")
        trace = CsiTrace(p)
        assert len(trace) == 3
        got = trace.take(2)
        assert torch.allclose(got, torch.tensor([1.0, 0.5], dtype=torch.float64))

    def test_wraps_with_count(self, tmp_path):
        p = self.make_trace(tmp_path, "1.0\n2.0\n3.0\n")
        trace = CsiTrace(p)
        got = trace.take(7)
        assert got.tolist() == [1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0]
        assert trace.wrap_count == 2

    def test_exhausted_without_wrap(self, tmp_path):
        p = self.make_trace(tmp_path, "1.0\n2.0\n")
        trace = CsiTrace(p)
        with pytest.raises(DataError):
            trace.take(3, wrap=False)

    def test_rejects_garbage(self, tmp_path):
        with pytest.raises(DataError):
            CsiTrace(self.make_trace(tmp_path, "1.0\nnope\n"))
        with pytest.raises(DataError):
            CsiTrace(self.make_trace(tmp_path, "-1.0\n"))

    def test_sampler_integration(self, tmp_path):
        p = self.make_trace(tmp_path, "0.5\n1.5\n")
        cfg = ChannelConfig(kind="csi_file", snr_db=10.0, csi_path=str(p))
        sampler = CsiSampler(cfg, gen(0))
        assert sampler.sample(3).tolist() == pytest.approx([0.5, 1.5, 0.5])


class TestPerTokenSnr:
    def test_unit_gain_ten_db(self):
        h = torch.ones(8)
        snr = per_token_snr(h, 0.1, [(0, 4), (4, 8)])
        assert torch.allclose(snr, torch.full((2,), 10.0, dtype=torch.float64))

    def test_half_power_span(self):
        h = torch.tensor([1.0, 1.0, 0.0, 0.0])
        snr = per_token_snr(h, 1.0, [(0, 4)])
        assert float(snr[0]) == pytest.approx(10 * math.log10(0.5), abs=1e-9)

    def test_matches_bruteforce_recomputation(self):
        g = gen(5)
        h = torch.rand(32, generator=g) + 0.1
        spans = [(0, 5), (5, 12), (12, 32)]
        var = 0.37
        snr = per_token_snr(h, var, spans, signal_power=2.0)
        for i, (a, b) in enumerate(spans):
            expect = 10 * math.log10(
                sum(2.0 * float(h[j]) ** 2 for j in range(a, b)) / (b - a) / var
            )
            assert float(snr[i]) == pytest.approx(expect, rel=1e-9)

    def test_bad_partition(self):
        h = torch.ones(4)
        with pytest.raises(DimensionError):
            per_token_snr(h, 0.1, [(0, 2), (3, 4)])
        with pytest.raises(DimensionError):
            per_token_snr(h, 0.1, [(0, 2), (2, 2)])

    def test_requires_positive_noise(self):
        with pytest.raises(ConfigError):
            per_token_snr(torch.ones(4), 0.0, [(0, 4)])


class TestAverageSnr:
    def test_zero_db(self):
        assert average_snr(torch.ones(16), 1.0) == pytest.approx(0.0)

    def test_twenty_db(self):
        assert average_snr(torch.ones(16), 0.01) == pytest.approx(20.0)

    def test_equals_single_span_per_token(self):
        h = torch.rand(50, generator=gen(9)) + 0.05
        a = average_snr(h, 0.2)
        b = float(per_token_snr(h, 0.2, [(0, 50)])[0])
        assert a == pytest.approx(b, rel=1e-12)

    def test_empty_vector(self):
        with pytest.raises(DimensionError):
            average_snr(torch.ones(0), 0.1)


class TestFixedCsi:
    def test_returns_fixed_vector(self):
        h = torch.tensor([0.5, 1.0])
        fx = FixedCsi(h, 0.1)
        assert torch.equal(fx.sample(2), h)
        with pytest.raises(DimensionError):
            fx.sample(3)
