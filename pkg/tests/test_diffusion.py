import numpy as np
import pytest
import torch

from boxsplit.diffusion import (
    ddim_invert,
    ddim_sample,
    ddim_timesteps,
    eps_loss,
    forward_diffuse,
    schedule_new,
)


def zero_predictor(x_t, t, condition):
    return torch.zeros_like(x_t)


@pytest.fixture(scope="module")
def sched():
    return schedule_new(1000)


class TestSchedule:
    def test_default_construction(self, sched):
        assert sched.T == 1000
        assert sched.betas[0] == pytest.approx(1e-4)
        assert sched.betas[-1] == pytest.approx(0.02)
        assert np.all(np.diff(sched.alpha_bars) < 0)

    def test_single_step(self):
        s = schedule_new(1)
        assert s.T == 1
        assert s.alpha_bars[0] == pytest.approx(1 - 1e-4)

    def test_terminal_alpha_bar_small(self, sched):
        # independently pinned: exp(sum(log1p(-beta))) for the linear schedule
        expected = float(np.exp(np.sum(np.log1p(-np.linspace(1e-4, 0.02, 1000)))))
        assert sched.alpha_bars[-1] == pytest.approx(expected, rel=1e-12)
        assert sched.alpha_bars[-1] < 0.01


class TestForwardDiffuse:
    def test_zero_eps_scales_x0(self, sched):
        x0 = torch.randn(4, 2, 15, generator=torch.Generator().manual_seed(0))
        xt = forward_diffuse(x0, 100, torch.zeros_like(x0), sched)
        assert torch.allclose(xt, float(np.sqrt(sched.alpha_bars[100])) * x0)

    def test_identity_limit(self):
        # a near-1 alpha_bar leaves x0 almost unchanged
        s = schedule_new(1, beta_start=1e-12)
        x0 = torch.randn(3, 15)
        xt = forward_diffuse(x0, 0, torch.zeros_like(x0), s)
        assert torch.allclose(xt, x0, atol=1e-6)

    def test_second_moment(self, sched):
        # E ||x_t||^2 = abar ||x0||^2 + (1 - abar) * dim, Monte-Carlo at 2%
        g = torch.Generator().manual_seed(1)
        x0 = torch.randn(30, generator=g)
        t = 400
        sq = []
        for _ in range(10_000):
            eps = torch.randn(30, generator=g)
            sq.append(float(forward_diffuse(x0, t, eps, sched).pow(2).sum()))
        a = sched.alpha_bars[t]
        expected = a * float(x0.pow(2).sum()) + (1 - a) * 30
        assert np.mean(sq) == pytest.approx(expected, rel=0.02)

    def test_terminal_distribution_standard_normal(self, sched):
        # KS test of x_T against N(0,1) at the last step (abar ~ 0)
        from scipy import stats

        g = torch.Generator().manual_seed(2)
        x0 = torch.full((4000,), 2.5)
        eps = torch.randn(4000, generator=g)
        xt = forward_diffuse(x0, sched.T - 1, eps, sched).numpy()
        assert stats.kstest(xt, "norm").pvalue > 0.01

    def test_out_of_range_t(self, sched):
        with pytest.raises(ValueError):
            forward_diffuse(torch.zeros(1, 15), 1000, torch.zeros(1, 15), sched)


class TestEpsLoss:
    def test_zero_predictor_near_one(self, sched):
        g = torch.Generator().manual_seed(3)
        x0 = torch.randn(512, 2, 15, generator=g)
        loss = eps_loss(zero_predictor, x0, None, g, sched)
        assert float(loss) == pytest.approx(1.0, rel=0.03)

    def test_oracle_predictor_zero_loss(self, sched):
        # wrap forward_diffuse so the predictor can invert it exactly
        g = torch.Generator().manual_seed(4)
        x0 = torch.randn(64, 2, 15, generator=g)
        abar = torch.as_tensor(sched.alpha_bars, dtype=x0.dtype)

        def oracle(x_t, t, condition):
            a = abar[t].reshape(-1, 1, 1)
            return (x_t - torch.sqrt(a) * x0) / torch.sqrt(1 - a)

        loss = eps_loss(oracle, x0, None, g, sched)
        assert float(loss) < 1e-10

    def test_nonnegative(self, sched):
        g = torch.Generator().manual_seed(5)
        for _ in range(5):
            x0 = torch.randn(8, 15, generator=g)
            assert float(eps_loss(zero_predictor, x0, None, g, sched)) >= 0.0


class TestDdim:
    def test_deterministic_per_seed(self, sched):
        a = ddim_sample(zero_predictor, None, (2, 15), sched, steps=50, rng_seed=9)
        b = ddim_sample(zero_predictor, None, (2, 15), sched, steps=50, rng_seed=9)
        assert torch.equal(a, b)
        c = ddim_sample(zero_predictor, None, (2, 15), sched, steps=50, rng_seed=10)
        assert not torch.equal(a, c)

    def test_zero_predictor_closed_form(self, sched):
        # with eps_hat = 0 the updates telescope to x_T / sqrt(abar_first)
        g = torch.Generator().manual_seed(11)
        x_T = torch.randn(2, 15, generator=g)
        out = ddim_sample(zero_predictor, None, (2, 15), sched, steps=50, x_T=x_T)
        first = ddim_timesteps(sched, 50)[0]
        expected = x_T / np.sqrt(sched.alpha_bars[first])
        assert torch.allclose(out, expected, atol=1e-5)

    def test_output_shape(self, sched):
        out = ddim_sample(zero_predictor, None, (3, 2, 15), sched, steps=10, rng_seed=0)
        assert out.shape == (3, 2, 15)

    def test_exactly_steps_predictor_calls(self, sched):
        calls = []

        def counting(x_t, t, condition):
            calls.append(t)
            return torch.zeros_like(x_t)

        ddim_sample(counting, None, (2, 15), sched, steps=37, rng_seed=1)
        assert len(calls) == 37

    def test_steps_validation(self, sched):
        with pytest.raises(ValueError):
            ddim_sample(zero_predictor, None, (2, 15), sched, steps=0, rng_seed=0)
        with pytest.raises(ValueError):
            ddim_sample(zero_predictor, None, (2, 15), sched, steps=1001, rng_seed=0)


class TestDdimInvert:
    def test_linear_roundtrip_exact(self, sched):
        g = torch.Generator().manual_seed(12)
        x0 = torch.randn(2, 15, generator=g)
        x_T = ddim_invert(zero_predictor, None, x0, sched, steps=50)
        back = ddim_sample(zero_predictor, None, x0.shape, sched, steps=50, x_T=x_T)
        assert torch.allclose(back, x0, atol=1e-5)

    def test_full_steps_zero_predictor_coefficient(self, sched):
        # at steps = T the inversion is exactly x0 * sqrt(abar_{T-1})
        x0 = torch.ones(1, 15)
        x_T = ddim_invert(zero_predictor, None, x0, sched, steps=sched.T)
        expected = float(np.sqrt(sched.alpha_bars[-1]))
        assert torch.allclose(x_T, torch.full_like(x0, expected), atol=1e-7)
