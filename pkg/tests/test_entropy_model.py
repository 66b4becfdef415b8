import math

import numpy as np
import pytest
import torch
from scipy import integrate
from scipy.stats import norm

from asc.entropy_model import (
    SIGMA_MIN,
    FactorizedDensity,
    LatentPriorParams,
    add_uniform_noise,
    allocate_bandwidth,
    gaussian_bin_mass,
    hyper_rate,
    latent_rate,
)
from asc.errors import ConfigError, DimensionError


def gen(seed=0):
    return torch.Generator().manual_seed(seed)


class TestLatentRate:
    def test_centered_unit_sigma_closed_form(self):
        y = torch.zeros(1, 1)
        params = LatentPriorParams(mu=torch.zeros(1, 1), sigma=torch.ones(1, 1))
        rate = latent_rate(y, params)
        expect = -math.log2(norm.cdf(0.5) - norm.cdf(-0.5))
        assert float(rate[0]) == pytest.approx(expect, rel=1e-6)
        assert expect == pytest.approx(1.385, abs=2e-3)

    def test_sigma_floor_rate_vanishes(self):
        y = torch.zeros(1, 1)
        params = LatentPriorParams(
            mu=torch.zeros(1, 1), sigma=torch.full((1, 1), SIGMA_MIN)
        )
        assert float(latent_rate(y, params)[0]) < 1e-4

    def test_matches_quadrature_oracle(self):
        g = gen(1)
        y = torch.randn(4, 3, generator=g, dtype=torch.float64) * 2
        mu = torch.randn(4, 3, generator=g, dtype=torch.float64)
        sigma = torch.rand(4, 3, generator=g, dtype=torch.float64) * 2 + SIGMA_MIN
        mass = gaussian_bin_mass(y, mu, sigma)
        for i in range(4):
            for j in range(3):
                ref, _ = integrate.quad(
                    lambda t: norm.pdf(t, loc=float(mu[i, j]), scale=float(sigma[i, j])),
                    float(y[i, j]) - 0.5,
                    float(y[i, j]) + 0.5,
                    epsabs=1e-12,
                )
                assert float(mass[i, j]) == pytest.approx(ref, abs=1e-6)

    def test_rates_non_negative(self):
        g = gen(2)
        y = torch.randn(16, 8, generator=g) * 5
        mu = torch.randn(16, 8, generator=g)
        sigma = torch.rand(16, 8, generator=g) + SIGMA_MIN
        assert (latent_rate(y, LatentPriorParams(mu, sigma)) >= 0).all()

    def test_rejects_nonpositive_sigma(self):
        y = torch.zeros(1, 1)
        with pytest.raises(ConfigError):
            latent_rate(y, LatentPriorParams(torch.zeros(1, 1), torch.zeros(1, 1)))

    def test_gradient_matches_finite_differences(self):
        g = gen(3)
        y = (torch.randn(3, 2, generator=g, dtype=torch.float64)).requires_grad_(True)
        mu = torch.randn(3, 2, generator=g, dtype=torch.float64)
        sigma = torch.rand(3, 2, generator=g, dtype=torch.float64) + 0.5
        rate = latent_rate(y, LatentPriorParams(mu, sigma)).sum()
        rate.backward()
        eps = 1e-4
        for i in range(3):
            for j in range(2):
                yp = y.detach().clone()
                yp[i, j] += eps
                ym = y.detach().clone()
                ym[i, j] -= eps
                fd = (
                    float(latent_rate(yp, LatentPriorParams(mu, sigma)).sum())
                    - float(latent_rate(ym, LatentPriorParams(mu, sigma)).sum())
                ) / (2 * eps)
                assert float(y.grad[i, j]) == pytest.approx(fd, rel=1e-3, abs=1e-8)


class TestAddUniformNoise:
    def test_reproducible(self):
        z = torch.randn(100, generator=gen(4))
        a = add_uniform_noise(z, gen(5))
        b = add_uniform_noise(z, gen(5))
        assert torch.equal(a, b)

    def test_bounded_by_half(self):
        z = torch.zeros(10_000)
        noisy = add_uniform_noise(z, gen(6))
        assert float(noisy.abs().max()) <= 0.5

    def test_zero_mean_lln(self):
        z = torch.zeros(1_000_000, dtype=torch.float64)
        noisy = add_uniform_noise(z, gen(7))
        assert -0.002 <= float(noisy.mean()) <= 0.002


class UniformStub:
    """Box density of width W centered at zero, for the hyper-rate formula."""

    def __init__(self, width: float):
        self.width = width

    def bin_mass(self, z):
        upper = torch.clamp(z + 0.5, -self.width / 2, self.width / 2)
        lower = torch.clamp(z - 0.5, -self.width / 2, self.width / 2)
        return (upper - lower) / self.width


class TestHyperRate:
    def test_uniform_box_oracle(self):
        # Convolving a width-W box with the unit box and sampling at the
        # center gives mass 1/W, so the rate is log2(W) per element.
        for width in (1.0, 2.0, 8.0):
            rate = hyper_rate(torch.zeros(5), UniformStub(width))
            assert float(rate) == pytest.approx(5 * math.log2(width), abs=1e-6)

    def test_non_negative_on_learned_prior(self):
        prior = FactorizedDensity(4)
        z = torch.randn(32, 4, generator=gen(8)) * 10
        assert float(hyper_rate(z, prior)) >= 0

    def test_matches_quadrature_of_learned_density(self):
        prior = FactorizedDensity(2).double()
        points = torch.tensor([[-1.7, 0.3], [0.9, -2.2], [4.0, 6.5]], dtype=torch.float64)
        mass = prior.bin_mass(points)
        # Gauss-Legendre quadrature of the density (autograd of the CDF).
        nodes, weights = np.polynomial.legendre.leggauss(64)
        for i in range(points.shape[0]):
            for j in range(2):
                zc = float(points[i, j])
                ts = torch.tensor(zc + 0.5 * nodes, dtype=torch.float64).requires_grad_(True)
                grids = torch.zeros(len(nodes), 2, dtype=torch.float64)
                grids[:, j] = ts
                cdf = prior.cdf(grids)[:, j].sum()
                (pdf,) = torch.autograd.grad(cdf, ts)
                ref = 0.5 * float((pdf * torch.tensor(weights)).sum())
                assert float(mass[i, j]) == pytest.approx(ref, abs=1e-5)

    def test_density_normalization(self):
        prior = FactorizedDensity(6)
        integral = prior.integral(-30.0, 30.0)
        assert ((integral >= 0.999) & (integral <= 1.001)).all()


class TestAllocateBandwidth:
    V = (2, 4, 8, 16)

    def test_clamps_to_minimum(self):
        alloc = allocate_bandwidth(torch.tensor([1.385]), 0.2, self.V)
        assert alloc.k_bar.tolist() == [2]

    def test_nearest_value(self):
        alloc = allocate_bandwidth(torch.tensor([25.0]), 0.4, self.V)
        assert alloc.k_bar.tolist() == [8]

    def test_tie_rounds_up(self):
        # eta*rate = 3 sits exactly between 2 and 4.
        alloc = allocate_bandwidth(torch.tensor([3.0]), 1.0, self.V)
        assert alloc.k_bar.tolist() == [4]
        alloc = allocate_bandwidth(torch.tensor([12.0]), 1.0, self.V)
        assert alloc.k_bar.tolist() == [16]

    def test_side_info_bits(self):
        alloc = allocate_bandwidth(torch.tensor([1.0, 50.0]), 0.4, self.V)
        assert alloc.side_info_bits == 2
        assert alloc.total_symbols == 2 + 16
        assert alloc.spans() == [(0, 2), (2, 18)]

    def test_membership_and_monotonicity_property(self):
        g = gen(9)
        rates = torch.rand(256, generator=g) * 60
        alloc = allocate_bandwidth(rates, 0.35, self.V)
        assert all(int(k) in self.V for k in alloc.k_bar)
        order = torch.argsort(rates)
        sorted_k = alloc.k_bar[order]
        assert (sorted_k[1:] >= sorted_k[:-1]).all()

    def test_empty_value_set(self):
        with pytest.raises(ConfigError):
            allocate_bandwidth(torch.tensor([1.0]), 0.2, ())

    def test_value_set_power_of_two(self):
        with pytest.raises(ConfigError):
            allocate_bandwidth(torch.tensor([1.0]), 0.2, (2, 4, 8))
