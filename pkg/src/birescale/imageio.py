"""Image files, 8-bit quantization and the synthetic corpus.

Images are float arrays (C, H, W) in [0, 1].  PNG carries 8-bit RGB, PFM
carries float32 intermediates.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ContractViolation, FormatError


def quantize(image: np.ndarray) -> np.ndarray:
    """Round to the 8-bit grid (half away from zero, clamped), back in [0, 1]."""
    return to_uint8(image).astype(np.float64) / 255.0


def to_uint8(image: np.ndarray) -> np.ndarray:
    scaled = np.asarray(image, dtype=np.float64) * 255.0
    return np.clip(np.sign(scaled) * np.floor(np.abs(scaled) + 0.5), 0, 255).astype(np.uint8)


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr.transpose(2, 0, 1)


def write_png(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ContractViolation("write_png", f"expected (3, H, W), got {image.shape}")
    Image.fromarray(to_uint8(image).transpose(1, 2, 0), mode="RGB").save(path, format="PNG")


def write_pfm(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.float32)
    if image.ndim == 2:
        image = image[None]
    c, h, w = image.shape
    if c not in (1, 3):
        raise ContractViolation("write_pfm", f"PFM stores 1 or 3 channels, got {c}")
    header = f"{'PF' if c == 3 else 'Pf'}\n{w} {h}\n-1.0\n".encode("ascii")
    rows = image.transpose(1, 2, 0)[::-1]  # PFM rows run bottom to top
    Path(path).write_bytes(header + np.ascontiguousarray(rows, dtype="<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    m = re.match(rb"(PF|Pf)\s+(\d+)\s+(\d+)\s+(\S+)\s", data)
    if not m:
        raise FormatError(f"{path}: not a PFM file", 0)
    c = 3 if m.group(1) == b"PF" else 1
    w, h, scale = int(m.group(2)), int(m.group(3)), float(m.group(4))
    dtype = "<f4" if scale < 0 else ">f4"
    count = w * h * c
    payload = data[m.end():]
    if len(payload) < 4 * count:
        raise FormatError(f"{path}: truncated pixel data", m.end() + len(payload))
    arr = np.frombuffer(payload[:4 * count], dtype=dtype).reshape(h, w, c)[::-1]
    return arr.transpose(2, 0, 1).astype(np.float64)


def read_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        return read_pfm(path)
    return read_png(path)


def write_image(path, image: np.ndarray) -> None:
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        write_pfm(path, image)
    else:
        write_png(path, image)


def load_corpus(directory) -> list[tuple[str, np.ndarray]]:
    """(name, image) pairs for every PNG/PFM in ``directory``, sorted by name."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"corpus directory not found: {directory}")
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in (".png", ".pfm"))
    return [(p.name, read_image(p)) for p in files]


# --------------------------------------------------------------------------
# synthetic corpus
# --------------------------------------------------------------------------

def _band_limited_noise(rng, size, cutoff):
    noise = rng.standard_normal((3, size, size))
    f = np.fft.fftfreq(size)
    radius = np.hypot(f[:, None], f[None, :])
    spectrum = np.fft.fft2(noise) * np.exp(-(radius / cutoff) ** 2)
    field = np.real(np.fft.ifft2(spectrum))
    field -= field.mean(axis=(1, 2), keepdims=True)
    field /= field.std(axis=(1, 2), keepdims=True) + 1e-12
    return field


def _gradient(rng, size):
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    angle = rng.uniform(0, 2 * np.pi)
    t = np.cos(angle) * xx + np.sin(angle) * yy
    t = (t - t.min()) / (np.ptp(t) + 1e-12)
    c0, c1 = rng.uniform(0.1, 0.9, 3), rng.uniform(0.1, 0.9, 3)
    return c0[:, None, None] * (1 - t) + c1[:, None, None] * t


def _checker(size, period, phase=(0, 0)):
    yy, xx = np.mgrid[0:size, 0:size]
    return (((yy + phase[0]) // period + (xx + phase[1]) // period) % 2).astype(np.float64)


def _glyphs(rng, size):
    """Text-like raster: short strokes on a baseline grid."""
    mask = np.zeros((size, size))
    line_h = int(rng.integers(7, 12))
    for top in range(2, size - line_h, line_h + 3):
        x = int(rng.integers(1, 5))
        while x < size - 4:
            gw = int(rng.integers(3, 7))
            stroke = int(rng.integers(1, 3))
            for _ in range(int(rng.integers(2, 4))):
                if rng.random() < 0.5:  # vertical stroke
                    cx = x + int(rng.integers(0, gw))
                    mask[top:top + line_h, cx:cx + stroke] = 1
                else:  # horizontal stroke
                    cy = top + int(rng.integers(0, line_h))
                    mask[cy:cy + stroke, x:x + gw] = 1
            x += gw + int(rng.integers(1, 4))
    return mask


def synth_image(rng: np.random.Generator, size: int, checker_period: int | None = None) -> np.ndarray:
    """One mixed-content image: smooth gradient, band-limited texture, a checker
    patch and a glyph patch."""
    img = _gradient(rng, size)
    img = img + 0.12 * _band_limited_noise(rng, size, cutoff=rng.uniform(0.04, 0.25))
    period = checker_period or int(rng.choice([1, 2, 3, 4, 6]))
    ph, pw = int(rng.integers(size // 4, size // 2 + 1)), int(rng.integers(size // 4, size // 2 + 1))
    y0, x0 = int(rng.integers(0, size - ph + 1)), int(rng.integers(0, size - pw + 1))
    lo, hi = rng.uniform(0.0, 0.3), rng.uniform(0.7, 1.0)
    check = lo + (hi - lo) * _checker(size, period, (int(rng.integers(0, 2)), 0))
    img[:, y0:y0 + ph, x0:x0 + pw] = check[None, y0:y0 + ph, x0:x0 + pw]
    ink = rng.uniform(0.0, 1.0, 3)
    glyph = _glyphs(rng, size)
    gh, gw = size // 2, size // 2
    gy, gx = int(rng.integers(0, size - gh + 1)), int(rng.integers(0, size - gw + 1))
    region = np.zeros((size, size), bool)
    region[gy:gy + gh, gx:gx + gw] = True
    sel = (glyph > 0) & region
    img[:, sel] = ink[:, None]
    return np.clip(img, 0.0, 1.0)


def synth_corpus(out_dir, count: int, size: int, seed: int) -> list[Path]:
    """Write ``count`` deterministic PNGs; image 0 always has a 1-pixel checker."""
    if size < 16:
        raise ContractViolation("synth_corpus", f"size must be >= 16, got {size}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(count):
        img = synth_image(rng, size, checker_period=1 if i == 0 else None)
        path = out_dir / f"synth_{i:04d}.png"
        write_png(path, img)
        paths.append(path)
    return paths


def synth_images(count: int, size: int, seed: int) -> list[np.ndarray]:
    """The same images as :func:`synth_corpus`, quantized, without touching disk."""
    rng = np.random.default_rng(seed)
    return [quantize(synth_image(rng, size, checker_period=1 if i == 0 else None))
            for i in range(count)]
