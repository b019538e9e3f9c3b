"""Image and feature-distribution metrics."""

from __future__ import annotations

import numpy as np

from .. import kernels
from .embedders import Embedder


class MetricError(ValueError):
    pass


LUMA = np.array([0.299, 0.587, 0.114])


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise MetricError("cosine similarity undefined for a zero-norm embedding")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def dino_m(tryon_image: np.ndarray, mask: np.ndarray, garment_image: np.ndarray, emb: Embedder) -> float:
    """Garment identity: cosine between emb(tryon * mask) and emb(garment).

    The mask is applied elementwise on the full frame (no crop).
    """
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim == 2:
        mask = mask[None]
    if not np.isin(mask, (0.0, 1.0)).all():
        raise MetricError("mask must be binary")
    if mask.shape[-2:] != tryon_image.shape[-2:]:
        raise MetricError("mask and try-on image sizes differ")
    return cosine(emb.embed_image(tryon_image * mask), emb.embed_image(garment_image))


def embedding_similarity(a, b, emb: Embedder, mode: str = "image_image") -> float:
    """CLIP-I style (image vs image) or CLIP-T style (image vs text) cosine similarity."""
    if mode == "image_image":
        return cosine(emb.embed_image(a), emb.embed_image(b))
    if mode == "image_text":
        if emb.embed_text is None:
            raise MetricError(f"embedder {emb.id} has no text tower")
        return cosine(emb.embed_image(a), emb.embed_text(b))
    raise MetricError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# SSIM


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-(x**2) / (2 * sigma**2))
    return w / w.sum()


def to_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.shape[0] == 1:
        return img[0]
    if img.shape[0] == 3:
        return np.tensordot(LUMA, img, axes=1)
    raise MetricError(f"cannot convert shape {img.shape} to grayscale")


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0, win_size: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM over all fully-inside Gaussian windows (no padding)."""
    x, y = to_gray(a), to_gray(b)
    if x.shape != y.shape:
        raise MetricError(f"image sizes differ: {x.shape} vs {y.shape}")
    if min(x.shape) < win_size:
        raise MetricError(f"image {x.shape} smaller than the {win_size}x{win_size} window")
    w = gaussian_window(win_size, sigma)
    f = kernels.filter_valid
    mx, my = f(x, w), f(y, w)
    sxx = f(x * x, w) - mx * mx
    syy = f(y * y, w) - my * my
    sxy = f(x * y, w) - mx * my
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    smap = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
    return float(smap.mean())


# ---------------------------------------------------------------------------
# FID / KID


def _check_feats(*feats):
    for f in feats:
        if not np.all(np.isfinite(f)):
            raise MetricError("features contain non-finite values")


def trace_sqrt_product(cov_a: np.ndarray, cov_b: np.ndarray, tol: float = 1e-8) -> float:
    """tr((A B)^{1/2}) for PSD A, B via the symmetric form A^{1/2} B A^{1/2}."""
    ea, va = np.linalg.eigh((cov_a + cov_a.T) / 2)
    scale = max(1.0, float(np.abs(ea).max()))
    if ea.min() < -tol * scale:
        raise MetricError(f"covariance not positive semidefinite (eigenvalue {ea.min():.3e})")
    ra = (va * np.sqrt(np.clip(ea, 0.0, None))) @ va.T
    m = ra @ cov_b @ ra
    em = np.linalg.eigvalsh((m + m.T) / 2)
    mscale = max(1.0, float(np.abs(em).max()))
    if em.min() < -tol * mscale:
        raise MetricError(f"matrix square root unstable (eigenvalue {em.min():.3e})")
    # eigenvalues at round-off level belong to the null space; their square roots would not be small
    em = np.where(em > 1e-12 * mscale, em, 0.0)
    return float(np.sqrt(em).sum())


def fid(feats_a: np.ndarray, feats_b: np.ndarray) -> float:
    """Frechet distance between Gaussian fits (sample covariance, ddof=1)."""
    a = np.atleast_2d(np.asarray(feats_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(feats_b, dtype=np.float64))
    _check_feats(a, b)
    if a.shape[1] != b.shape[1]:
        raise MetricError("feature dimensions differ")
    mu_a, mu_b = a.mean(0), b.mean(0)
    ca = np.atleast_2d(np.cov(a, rowvar=False))
    cb = np.atleast_2d(np.cov(b, rowvar=False))
    scale = float(((mu_a - mu_b) ** 2).sum() + np.trace(ca) + np.trace(cb))
    val = scale - 2.0 * trace_sqrt_product(ca, cb)
    return max(val, 0.0) if val > -1e-9 * max(1.0, scale) else val


def kid(feats_a: np.ndarray, feats_b: np.ndarray) -> float:
    """Unbiased MMD^2 with the kernel k(x, y) = (x.y / d + 1)^3 over the full sets."""
    a = np.asarray(feats_a, dtype=np.float64)
    b = np.asarray(feats_b, dtype=np.float64)
    _check_feats(a, b)
    n, m = a.shape[0], b.shape[0]
    if n < 2 or m < 2:
        raise MetricError("KID needs at least two samples per set")
    if a.shape[1] != b.shape[1]:
        raise MetricError("feature dimensions differ")
    sxx, syy, sxy = kernels.poly_mmd_sums(a, b)
    return float(sxx / (n * (n - 1)) + syy / (m * (m - 1)) - 2.0 * sxy / (n * m))
