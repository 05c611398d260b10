"""PSNR, SSIM and BT.601 colour conversion on unit-range images."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation

# BT.601 studio swing, rows give (Y, Cb, Cr) * 255 from unit-range RGB
YCBCR_MATRIX = np.array([
    [65.481, 128.553, 24.966],
    [-37.797, -74.203, 112.0],
    [112.0, -93.786, -18.214],
]) / 255.0
YCBCR_OFFSET = np.array([16.0, 128.0, 128.0]) / 255.0

PSNR_INF = math.inf
SSIM_K1, SSIM_K2 = 0.01, 0.03
SSIM_WINDOW, SSIM_SIGMA = 11, 1.5


@dataclass(frozen=True)
class MetricSpace:
    mode: str = "rgb"   # "rgb" or "y"
    crop: int = 0       # pixels dropped on every side

    def __post_init__(self):
        if self.mode not in ("rgb", "y"):
            raise ContractViolation("MetricSpace", f"mode must be 'rgb' or 'y', got {self.mode!r}")
        if self.crop < 0:
            raise ContractViolation("MetricSpace", "crop must be non-negative")


def _space(space) -> MetricSpace:
    if space is None:
        return MetricSpace()
    if isinstance(space, str):
        return MetricSpace("y" if space in ("y", "luminance") else space)
    return space


def to_ycbcr(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ContractViolation("to_ycbcr", f"expected (3, H, W), got {image.shape}")
    return np.einsum("ij,jhw->ihw", YCBCR_MATRIX, image) + YCBCR_OFFSET[:, None, None]


def from_ycbcr(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ContractViolation("from_ycbcr", f"expected (3, H, W), got {image.shape}")
    inv = np.linalg.inv(YCBCR_MATRIX)
    return np.einsum("ij,jhw->ihw", inv, image - YCBCR_OFFSET[:, None, None])


def _prepare(a, b, space: MetricSpace, op: str):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractViolation(op, f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if space.mode == "y":
        if a.shape[0] == 3:
            a, b = to_ycbcr(a)[:1], to_ycbcr(b)[:1]
        elif a.shape[0] != 1:
            raise ContractViolation(op, "luminance mode needs 1 or 3 channels")
    c = space.crop
    if c:
        a, b = a[:, c:-c, c:-c], b[:, c:-c, c:-c]
    return a, b


def psnr(a, b, space=None) -> float:
    """Peak signal-to-noise ratio in dB for unit peak; ``math.inf`` when equal."""
    a, b = _prepare(a, b, _space(space), "psnr")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return PSNR_INF
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img, g):
    # separable correlation, valid positions only
    n = len(g)
    h, w = img.shape
    tmp = sum(g[i] * img[i:h - n + 1 + i, :] for i in range(n))
    return sum(g[i] * tmp[:, i:w - n + 1 + i] for i in range(n))


def _ssim_channel(a, b):
    g = _gaussian_window()
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    aa, bb, ab = _filter_valid(a * a, g), _filter_valid(b * b, g), _filter_valid(a * b, g)
    var_a = aa - mu_a * mu_a
    var_b = bb - mu_b * mu_b
    cov = ab - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a, b, space=None) -> float:
    """Single-scale SSIM (11x11 Gaussian, sigma 1.5, L = 1), channel mean."""
    a, b = _prepare(a, b, _space(space), "ssim")
    if min(a.shape[-2:]) < SSIM_WINDOW:
        raise ContractViolation("ssim", f"image {a.shape[-2:]} smaller than the {SSIM_WINDOW}px window")
    return float(np.mean([_ssim_channel(x, y) for x, y in zip(a, b)]))
