import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from garmentdiff.diffusion import (ParameterError, add_noise, ddim_step, ddim_timesteps, make_schedule,
                                   simple_loss)


def test_constant_beta_schedule():
    s = make_schedule(2, 0.5, 0.5)
    np.testing.assert_allclose(s.alphas_cumprod, [0.5, 0.25])


def test_long_schedule_against_product():
    s = make_schedule(1000, 1e-4, 2e-2)
    prod, ref = 1.0, []
    for i in range(1000):
        beta = 1e-4 + (2e-2 - 1e-4) * i / 999
        prod *= 1.0 - beta
        ref.append(prod)
    np.testing.assert_allclose(s.alphas_cumprod, ref, rtol=1e-12)
    assert np.all(np.diff(s.alphas_cumprod) < 0)
    assert s.alphas_cumprod[-1] < 1e-2


@pytest.mark.parametrize("args", [(100, 0.0, 0.1), (100, 0.2, 0.1), (1, 0.1, 0.1), (10, 0.1, 1.0)])
def test_schedule_rejects(args):
    with pytest.raises(ParameterError):
        make_schedule(*args)


@given(st.integers(2, 300), st.floats(1e-5, 0.3), st.floats(0.0, 0.6))
@settings(max_examples=40, deadline=None)
def test_schedule_monotone(T, bs, extra):
    be = min(bs + extra, 0.99)
    ab = make_schedule(T, bs, be).alphas_cumprod
    assert np.all(np.diff(ab) < 0)


def test_add_noise_cases():
    s = make_schedule(100, 1e-3, 0.1)
    x0 = torch.randn(2, 3, 4, 4, dtype=torch.float64)
    out = add_noise(x0, torch.zeros_like(x0), 40, s)
    torch.testing.assert_close(out, math.sqrt(s.alpha_bar(40)) * x0, rtol=0, atol=1e-15)
    tiny = make_schedule(10, 1e-8, 1e-8)
    eps = torch.randn_like(x0)
    assert (add_noise(x0, eps, 0, tiny) - x0).abs().max() < 1e-3


def test_add_noise_loop_oracle():
    s = make_schedule(100, 1e-3, 0.1)
    g = torch.Generator().manual_seed(0)
    x0 = torch.randn(2, 3, 4, 4, generator=g, dtype=torch.float64)
    eps = torch.randn(2, 3, 4, 4, generator=g, dtype=torch.float64)
    out = add_noise(x0, eps, 10, s)
    ab = 1.0
    for i in range(11):
        ab *= 1.0 - s.betas[i]
    flat_x, flat_e, flat_o = x0.flatten().tolist(), eps.flatten().tolist(), out.flatten().tolist()
    for a, e, o in zip(flat_x, flat_e, flat_o):
        assert abs(math.sqrt(ab) * a + math.sqrt(1 - ab) * e - o) < 1e-9
    # per-sample tensor timesteps agree with scalar ones
    t = torch.tensor([10, 10])
    torch.testing.assert_close(add_noise(x0, eps, t, s), out, rtol=0, atol=1e-12)


def test_add_noise_linear():
    s = make_schedule(50, 1e-3, 0.1)
    x0, eps = torch.randn(1, 3, 4, 4, dtype=torch.float64), torch.randn(1, 3, 4, 4, dtype=torch.float64)
    torch.testing.assert_close(add_noise(2.5 * x0, 2.5 * eps, 7, s), 2.5 * add_noise(x0, eps, 7, s))


def test_add_noise_shape_mismatch():
    s = make_schedule(10, 1e-3, 0.1)
    with pytest.raises(ParameterError):
        add_noise(torch.zeros(1, 3, 4, 4), torch.zeros(1, 3, 4, 5), 1, s)
    with pytest.raises(ParameterError):
        add_noise(torch.zeros(1, 3, 4, 4), torch.zeros(1, 3, 4, 4), 10, s)


def test_ddim_perfect_inversion():
    s = make_schedule(1000, 1e-10, 2e-2)
    x0 = torch.randn(1, 3, 8, 8, dtype=torch.float64)
    eps = torch.randn_like(x0)
    for t in (5, 100, 500, 999):
        xt = add_noise(x0, eps, t, s)
        x = ddim_step(xt, eps, t, 0, s)
        assert (x - x0).abs().max() < 1e-4
        # landing on t_prev=-1 reconstructs x0 exactly up to rounding
        assert (ddim_step(xt, eps, t, -1, s) - x0).abs().max() < 1e-6


def test_ddim_loop_oracle_and_determinism():
    s = make_schedule(100, 1e-3, 0.1)
    g = torch.Generator().manual_seed(3)
    xt = torch.randn(1, 2, 3, 3, generator=g, dtype=torch.float64)
    ep = torch.randn(1, 2, 3, 3, generator=g, dtype=torch.float64)
    out = ddim_step(xt, ep, 60, 40, s)
    assert torch.equal(out, ddim_step(xt, ep, 60, 40, s))
    ab_t, ab_p = float(np.prod(1 - s.betas[:61])), float(np.prod(1 - s.betas[:41]))
    for x, e, o in zip(xt.flatten().tolist(), ep.flatten().tolist(), out.flatten().tolist()):
        x0 = (x - math.sqrt(1 - ab_t) * e) / math.sqrt(ab_t)
        assert abs(math.sqrt(ab_p) * x0 + math.sqrt(1 - ab_p) * e - o) < 1e-9


def test_ddim_rejects():
    s = make_schedule(10, 1e-3, 0.1)
    x = torch.zeros(1, 1, 2, 2)
    with pytest.raises(ParameterError):
        ddim_step(x, x, 3, 3, s)
    with pytest.raises(ParameterError):
        ddim_step(x, x, 3, 1, s, eta=0.5)


def test_ddim_clip_keeps_range():
    s = make_schedule(100, 1e-3, 0.1)
    xt = torch.full((1, 1, 2, 2), 5.0, dtype=torch.float64)
    out = ddim_step(xt, torch.zeros_like(xt), 50, -1, s, clip=1.0)
    assert out.abs().max() <= 1.0


def test_ddim_timesteps():
    assert ddim_timesteps(100, 25)[0] == 99
    ts = ddim_timesteps(100, 25)
    assert len(ts) == 25 and all(a > b for a, b in zip(ts, ts[1:])) and ts[-1] >= 0
    assert ddim_timesteps(100, 1) == [99]
    assert ddim_timesteps(10, 50) == list(range(9, -1, -1))


def test_simple_loss():
    e = torch.randn(2, 3, 4, 4, dtype=torch.float64)
    assert simple_loss(e, e) == 0
    assert float(simple_loss(e + 1, e)) == pytest.approx(1.0, abs=1e-12)
    g = torch.Generator().manual_seed(9)
    a, b = torch.randn(5, 7, generator=g, dtype=torch.float64), torch.randn(5, 7, generator=g, dtype=torch.float64)
    ref = sum((x - y) ** 2 for x, y in zip(a.flatten().tolist(), b.flatten().tolist())) / 35
    assert abs(float(simple_loss(a, b)) - ref) < 1e-12
