"""Non-learned reference resamplers.

All kernels are separable: each axis gets a dense ``(n_out, n_in)`` weight
matrix whose rows sum to one, and an image ``(C, H, W)`` is resampled as
``Wv @ image @ Wh.T``.  Coordinates are centre-aligned,
``src = (dst + 0.5) * n_in / n_out - 0.5``, and source indices outside the
image are clamped to the edge.

``area`` weights come straight from the exact subpixel lattice and equal box
averaging over pixel coverage (the INTER_AREA behaviour for downscaling).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, UnsupportedConfiguration
from .lattice import build_axis_lattice

KINDS = ("nearest", "bilinear", "bicubic", "area")
CUBIC_A = -0.5


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "bicubic"
    antialias: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractViolation("KernelSpec", f"unknown kernel {self.kind!r}; expected one of {KINDS}")


def cubic(t, a: float = CUBIC_A):
    """Two-piece cubic convolution kernel (Keys)."""
    t = np.abs(np.asarray(t, dtype=np.float64))
    t2, t3 = t * t, t * t * t
    near = (a + 2) * t3 - (a + 3) * t2 + 1
    far = a * t3 - 5 * a * t2 + 8 * a * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


def triangle(t):
    return np.maximum(0.0, 1.0 - np.abs(np.asarray(t, dtype=np.float64)))


_SUPPORT = {"bilinear": (triangle, 1.0), "bicubic": (cubic, 2.0)}


def axis_weights(n_in: int, n_out: int, spec: KernelSpec) -> np.ndarray:
    """Dense (n_out, n_in) resampling matrix for one axis; rows sum to one."""
    if n_in < 1 or n_out < 1:
        raise ContractViolation("resample", f"sizes must be positive, got {n_in} -> {n_out}")
    w = np.zeros((n_out, n_in))
    if spec.kind == "area":
        ax = build_axis_lattice(n_in, n_out)
        for s in ax.segments:
            w[s.out_index, s.in_index] += (s.end - s.start) * n_out
        return w / ax.denominator
    scale = n_in / n_out
    centers = (np.arange(n_out) + 0.5) * scale - 0.5
    if spec.kind == "nearest":
        idx = np.minimum(np.floor((np.arange(n_out) + 0.5) * scale).astype(np.int64), n_in - 1)
        w[np.arange(n_out), idx] = 1.0
        return w
    kernel, support = _SUPPORT[spec.kind]
    stretch = scale if (spec.antialias and n_out < n_in) else 1.0
    reach = support * stretch
    for j, c in enumerate(centers):
        taps = np.arange(int(np.floor(c - reach)), int(np.ceil(c + reach)) + 1)
        k = kernel((taps - c) / stretch)
        np.add.at(w[j], np.clip(taps, 0, n_in - 1), k)
    return w / w.sum(axis=1, keepdims=True)


def resample(image: np.ndarray, out_h: int, out_w: int, spec: KernelSpec | str = KernelSpec()) -> np.ndarray:
    """Resample a (C, H, W) or (H, W) array; same size returns an exact copy."""
    if isinstance(spec, str):
        spec = KernelSpec(spec)
    image = np.asarray(image)
    if image.ndim not in (2, 3):
        raise ContractViolation("resample", f"expected (C, H, W) or (H, W), got {image.shape}")
    if int(out_h) != out_h or int(out_w) != out_w or out_h < 1 or out_w < 1:
        raise ContractViolation("resample", f"invalid output size {out_h}x{out_w}")
    h, w = image.shape[-2:]
    if (h, w) == (out_h, out_w):
        return image.copy()
    dtype = image.dtype if np.issubdtype(image.dtype, np.floating) else np.float64
    wv = axis_weights(h, int(out_h), spec)
    wh = axis_weights(w, int(out_w), spec)
    out = np.einsum("oh,...hw,pw->...op", wv, image.astype(np.float64), wh)
    return out.astype(dtype)


def bilnn_cycle(image: np.ndarray, lr_h: int, lr_w: int) -> np.ndarray:
    """Bilinear downscale then nearest-neighbour upscale back to the input size.

    The bilinear step samples without antialiasing, so at an integer ratio it
    only reads pixels inside each output block; the nearest upscale then
    copies blocks and a second cycle reproduces the first bit for bit.
    """
    h, w = np.asarray(image).shape[-2:]
    if h % lr_h or w % lr_w:
        raise UnsupportedConfiguration(
            f"bilnn_cycle needs integer ratios, got {h}x{w} -> {lr_h}x{lr_w}")
    lr = resample(image, lr_h, lr_w, KernelSpec("bilinear", antialias=False))
    return resample(lr, h, w, KernelSpec("nearest"))
