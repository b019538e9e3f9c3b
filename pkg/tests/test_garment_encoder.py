import pytest
import torch

from garmentdiff.garment_encoder import GarmentEncoder, encode_garment
from garmentdiff.models import build_bundle
from garmentdiff.unet import InjectionSet


def _garments(seed=0):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(1, 3, 32, 32, generator=g, dtype=torch.float64)


def test_site_count_and_shapes(bundle64):
    b = bundle64
    ctx = b.text.embed("t-shirt", torch.float64).vectors[None]
    kv = encode_garment(b.garment_encoder, b.codec, _garments(), ctx, 5)
    assert tuple(kv.sites) == b.denoiser.config.attention_sites
    for name, (k, v) in kv.sites.items():
        assert k.shape == v.shape and k.shape[0] == 1


def test_exact_copy_gives_denoiser_kv(bundle64):
    b = bundle64
    ctx = b.text.embed("t-shirt", torch.float64).vectors[None]
    z = b.codec.encode(_garments())
    kv = b.garment_encoder(z, 5, ctx)
    ref = b.denoiser.collect_kv(z, 5, ctx)
    for name in kv.sites:
        torch.testing.assert_close(kv.sites[name][1], ref[name][1])


def test_different_garments_differ_and_determinism(bundle64):
    b = bundle64
    ctx = b.text.embed("t-shirt", torch.float64).vectors[None]
    a = encode_garment(b.garment_encoder, b.codec, _garments(0), ctx, 5)
    c = encode_garment(b.garment_encoder, b.codec, _garments(1), ctx, 5)
    assert max((a.sites[n][1] - c.sites[n][1]).abs().max() for n in a.sites) > 1e-4
    a2 = encode_garment(b.garment_encoder, b.codec, _garments(0), ctx, 5)
    assert all(torch.equal(a.sites[n][0], a2.sites[n][0]) and torch.equal(a.sites[n][1], a2.sites[n][1])
               for n in a.sites)


def test_every_parameter_gets_gradient(bundle64):
    b = bundle64
    enc = b.garment_encoder
    enc.requires_grad_(True)
    ctx = b.text.embed("t-shirt", torch.float64).vectors[None]
    kv = enc(b.codec.encode(_garments()), 5, ctx)
    x = torch.randn(1, 3, 8, 8, dtype=torch.float64)
    out = b.denoiser(x, 5, b.text.embed("a person", torch.float64).vectors[None],
                     InjectionSet(garment_kv=kv, attention_mode="asa"))
    out.square().sum().backward()
    dead = [n for n, p in enc.named_parameters() if p.grad is None or p.grad.abs().max() == 0]
    assert not dead


def test_finite_difference_through_asa(bundle64):
    b = bundle64
    enc = b.garment_encoder
    ctx = b.text.embed("t-shirt", torch.float64).vectors[None]
    tctx = b.text.embed("a person", torch.float64).vectors[None]
    zg = b.codec.encode(_garments())
    x = torch.randn(1, 3, 8, 8, dtype=torch.float64, generator=torch.Generator().manual_seed(2))

    def loss():
        kv = enc(zg, 5, ctx)
        return b.denoiser(x, 5, tctx, InjectionSet(garment_kv=kv, attention_mode="asa")).square().mean()

    enc.requires_grad_(True)
    enc.zero_grad()
    loss().backward()
    params = [p for p in enc.parameters()]
    gen = torch.Generator().manual_seed(0)
    checked = 0
    while checked < 3:
        p = params[int(torch.randint(len(params), (1,), generator=gen))]
        i = int(torch.randint(p.numel(), (1,), generator=gen))
        an = float(p.grad.view(-1)[i])
        if abs(an) < 1e-7:
            continue
        with torch.no_grad():
            orig = float(p.view(-1)[i])
            p.view(-1)[i] = orig + 1e-5
            lp = float(loss())
            p.view(-1)[i] = orig - 1e-5
            lm = float(loss())
            p.view(-1)[i] = orig
        fd = (lp - lm) / 2e-5
        assert abs(fd - an) / max(abs(an), 1e-12) < 1e-2
        checked += 1
