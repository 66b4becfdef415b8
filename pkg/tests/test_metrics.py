import math

import numpy as np
import pytest
import torch

from asc.entropy_model import RateAllocation
from asc.errors import ConfigError, DimensionError, EvaluationError
from asc.metrics import (
    RDMRecord,
    bd_psnr,
    bd_rate,
    content_cbr,
    model_cbr,
    mse,
    psnr,
    read_report,
    write_report,
)


def make_alloc(k_bars, q=2):
    return RateAllocation(
        k_bar=torch.tensor(k_bars, dtype=torch.long),
        value_set=(2, 4, 8, 16),
        side_info_bits=q,
    )


class TestPsnr:
    def test_known_mse(self):
        x = torch.zeros(3, 4, 4)
        x_hat = torch.full((3, 4, 4), 0.1)
        assert psnr(x, x_hat) == pytest.approx(20.0)

    def test_identical_gives_inf(self):
        x = torch.rand(3, 8, 8, generator=torch.Generator().manual_seed(0))
        assert psnr(x, x.clone()) == math.inf

    def test_matches_direct_recomputation(self):
        g = torch.Generator().manual_seed(1)
        x = torch.rand(3, 8, 8, generator=g)
        y = torch.rand(3, 8, 8, generator=g)
        direct = -10 * math.log10(float(((x - y) ** 2).mean()))
        assert psnr(x, y) == pytest.approx(direct, rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            mse(torch.zeros(3, 4, 4), torch.zeros(3, 4, 5))


class TestCbr:
    def test_side_info_off(self):
        alloc = make_alloc([16, 16, 16])
        assert content_cbr(alloc, 3072, count_side_info=False) == pytest.approx(
            48 / 3072
        )
        assert 48 / 3072 == pytest.approx(0.015625)

    def test_side_info_symbols(self):
        # q=2 bits/token, 64 tokens, 2 bits/symbol -> 64 extra symbols.
        alloc = make_alloc([2] * 64)
        with_si = content_cbr(alloc, 12288, count_side_info=True, bits_per_symbol=2.0)
        without = content_cbr(alloc, 12288, count_side_info=False)
        assert (with_si - without) * 12288 == pytest.approx(64)

    def test_model_cbr_amortization(self):
        m = model_cbr(1000.0, 12288, bits_per_symbol=2.0, amortize_over=10)
        assert m == pytest.approx(1000 / 2 / 12288 / 10)
        assert model_cbr(0.0, 12288) == 0.0

    def test_reported_model_rates_decrease_with_beta(self):
        # Published trend data: model rate shrinks as its weight grows.
        m_column = [0.02828, 0.00378, 0.00073, 0.00027, 0.00011]
        assert all(a > b for a, b in zip(m_column, m_column[1:]))

    def test_bad_dims(self):
        with pytest.raises(ConfigError):
            content_cbr(make_alloc([2]), 0)
        with pytest.raises(ConfigError):
            model_cbr(10.0, 100, amortize_over=0)


class TestRecord:
    def test_total_is_sum(self):
        rec = RDMRecord(
            scope="img0", snr_db=10.0, lambda_=16.0, beta=1.0,
            cbr_content=0.05, cbr_model=0.001, mse=0.001, psnr_db=30.0,
        )
        assert rec.cbr_total == pytest.approx(0.051, abs=1e-12)

    def test_csv_round_trip(self, tmp_path):
        recs = [
            RDMRecord("a", 10.0, 16.0, 1.0, 0.05, 0.001, 0.001, 30.0),
            RDMRecord("b", 0.0, 4.0, 0.0, 0.125, 0.0, 0.01, 20.0),
        ]
        path = write_report(tmp_path / "r.csv", recs)
        back = read_report(path)
        assert back == recs
        header = path.read_text().splitlines()[0]
        assert header == "scope,snr_db,lambda,beta,R,M,R_plus_M,mse,psnr"


def smooth_curve(seed, n=10, lo_q=28.0, hi_q=40.0):
    """A smooth random monotone RD curve sampled densely."""
    rng = np.random.default_rng(seed)
    q = np.linspace(lo_q, hi_q, n)
    a = rng.uniform(0.05, 0.12)
    b = rng.uniform(-0.002, 0.002)
    log_rate = -3.0 + a * (q - lo_q) + b * (q - lo_q) ** 2
    return np.stack([10.0**log_rate, q], axis=1)


class TestBdRate:
    def test_identical_curves_zero(self):
        c = smooth_curve(0)
        assert bd_rate(c, c) == 0.0

    def test_constant_rate_scaling(self):
        c = smooth_curve(1)
        cheaper = c.copy()
        cheaper[:, 0] *= 0.9
        assert bd_rate(c, cheaper) == pytest.approx(-10.0, abs=1e-9)
        assert bd_rate(cheaper, c) == pytest.approx(100 * (1 / 0.9 - 1), abs=1e-9)

    def test_matches_trapezoid_oracle(self):
        # Independent integrator: dense linear interpolation + trapezoid.
        for seed in range(5):
            a = smooth_curve(seed, n=25)
            b = smooth_curve(seed + 100, n=25)
            got = bd_rate(a, b)
            qa, ra = a[:, 1], np.log10(a[:, 0])
            qb, rb = b[:, 1], np.log10(b[:, 0])
            lo = max(qa.min(), qb.min())
            hi = min(qa.max(), qb.max())
            grid = np.linspace(lo, hi, 20_001)
            fa = np.interp(grid, qa, ra)
            fb = np.interp(grid, qb, rb)
            avg = np.trapezoid(fb - fa, grid) / (hi - lo)
            ref = (10.0**avg - 1) * 100
            assert got == pytest.approx(ref, abs=0.1)

    def test_antisymmetry_for_nearby_curves(self):
        rng = np.random.default_rng(7)
        a = smooth_curve(7, n=12)
        b = a.copy()
        b[:, 0] *= 1.02 * np.exp(rng.normal(0, 0.003, size=len(b)))
        assert bd_rate(a, b) == pytest.approx(-bd_rate(b, a), abs=0.5)

    def test_no_overlap_raises(self):
        a = smooth_curve(2, lo_q=20, hi_q=25)
        b = smooth_curve(3, lo_q=30, hi_q=35)
        with pytest.raises(EvaluationError):
            bd_rate(a, b)

    def test_needs_four_points(self):
        c = smooth_curve(4)[:3]
        with pytest.raises(EvaluationError):
            bd_rate(c, c)

    def test_bd_psnr_direction(self):
        c = smooth_curve(5)
        better = c.copy()
        better[:, 1] += 1.0
        assert bd_psnr(c, better) == pytest.approx(1.0, abs=1e-6)
