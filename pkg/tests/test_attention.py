import math

import pytest
import torch

from garmentdiff.attention import asa, attention, csa


def loop_attention(q, k, v):
    out = []
    for qi in q.tolist():
        logits = [sum(a * b for a, b in zip(qi, kj)) / math.sqrt(len(qi)) for kj in k.tolist()]
        m = max(logits)
        w = [math.exp(x - m) for x in logits]
        z = sum(w)
        out.append([sum(w[j] / z * v[j][c] for j in range(len(w))) for c in range(len(v[0]))])
    return torch.tensor(out, dtype=torch.float64)


def rand(*shape, seed=0):
    return torch.randn(*shape, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)


def test_single_key():
    q, k, v = rand(5, 4), rand(1, 4, seed=1), rand(1, 4, seed=2)
    out = attention(q, k, v)
    torch.testing.assert_close(out, v.expand(5, 4))


def test_dominant_diagonal():
    eye = torch.eye(4, dtype=torch.float64) * 50
    v = rand(4, 4, seed=3)
    torch.testing.assert_close(attention(eye, eye, v), v, atol=1e-6, rtol=0)


def test_loop_oracle():
    q, k, v = rand(3, 4), rand(3, 4, seed=1), rand(3, 4, seed=2)
    assert (attention(q, k, v) - loop_attention(q, k, v)).abs().max() < 1e-9


def test_row_stochastic():
    q, k = rand(2, 6, 4), rand(2, 9, 4, seed=1)
    out = attention(q, k, torch.ones(2, 9, 4, dtype=torch.float64))
    torch.testing.assert_close(out, torch.ones_like(out))


def test_multihead_equals_per_head():
    q, k, v = rand(5, 8), rand(6, 8, seed=1), rand(6, 8, seed=2)
    out = attention(q, k, v, heads=2)
    torch.testing.assert_close(out[:, :4], attention(q[:, :4], k[:, :4], v[:, :4]))
    with pytest.raises(ValueError):
        attention(q, k, v, heads=3)


def test_dim_mismatch():
    with pytest.raises(ValueError):
        attention(rand(2, 4), rand(2, 3), rand(2, 3))
    with pytest.raises(ValueError):
        asa(rand(2, 4), rand(2, 4), rand(2, 4), rand(2, 3), rand(2, 3))


def test_asa_identities():
    q, k, v = rand(4, 4), rand(5, 4, seed=1), rand(5, 4, seed=2)
    base = attention(q, k, v)
    torch.testing.assert_close(asa(q, k, v, rand(3, 4, seed=4), torch.zeros(3, 4, dtype=torch.float64)), base)
    torch.testing.assert_close(asa(q, k, v, k, v), 2 * base)
    kg, vg = rand(3, 4, seed=5), rand(3, 4, seed=6)
    ref = loop_attention(q, k, v) + loop_attention(q, kg, vg)
    assert (asa(q, k, v, kg, vg) - ref).abs().max() < 1e-9


def test_csa_identities():
    q, k, v = rand(4, 4), rand(5, 4, seed=1), rand(5, 4, seed=2)
    base = attention(q, k, v)
    empty = torch.zeros(0, 4, dtype=torch.float64)
    torch.testing.assert_close(csa(q, k, v, empty, empty), base)
    # garment keys pointing away from every query are suppressed
    kg = -1e3 * q.sum(0, keepdim=True).sign().expand(2, 4) * q.abs().max()
    out = csa(q, k, v, kg, rand(2, 4, seed=7))
    assert (out - base).abs().max() < 1e-6
    kg, vg = rand(3, 4, seed=5), rand(3, 4, seed=6)
    ref = loop_attention(q, torch.cat([k, kg]), torch.cat([v, vg]))
    assert (csa(q, k, v, kg, vg) - ref).abs().max() < 1e-9


def test_asa_csa_differ_and_hull():
    q, k, v = rand(6, 8), rand(6, 8, seed=1), rand(6, 8, seed=2)
    kg, vg = rand(4, 8, seed=3), rand(4, 8, seed=4)
    assert (asa(q, k, v, kg, vg) - csa(q, k, v, kg, vg)).abs().max() > 1e-4
    stacked = torch.cat([v, vg])
    out = csa(q, k, v, kg, vg)
    assert (out <= stacked.max(0).values + 1e-12).all() and (out >= stacked.min(0).values - 1e-12).all()
    ones = torch.ones(6, 8, dtype=torch.float64)
    a = asa(q, k, ones, kg, ones[:4])
    assert (a > 1.0 + 1e-9).any()  # 2.0 everywhere: outside the hull of all-ones rows
