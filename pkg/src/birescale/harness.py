"""Evaluation protocols and CSV reports.

Every protocol takes an *engine*: anything with ``down(image, h, w)`` and
``up(image, h, w)`` on float (C, H, W) arrays.  Reports share one CSV schema;
rows are emitted in corpus order, so two runs with the same inputs differ
only in the runtime column.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractViolation
from .imageio import quantize
from .metrics import MetricSpace, psnr, ssim
from .model import RescaleModel, downscale, upscale
from .resample import KINDS, KernelSpec, resample
from .training import lr_dim

log = logging.getLogger(__name__)

CSV_HEADER = ("scale_h", "scale_w", "cycle", "mode", "psnr_db", "ssim", "runtime_ms")
ENGINE_KERNELS = KINDS + ("bilnn",)


# --------------------------------------------------------------------------
# engines
# --------------------------------------------------------------------------

class ModelEngine:
    """Learned rescaler; records every lattice it evaluates as (in_h, in_w, out_h, out_w)."""

    def __init__(self, model: RescaleModel, name: str = "model"):
        self.model = model
        self.name = name
        self.calls: list[tuple[str, tuple[int, int, int, int]]] = []

    def _check(self, image, h, w):
        _, ih, iw = image.shape
        if (h - ih) * (w - iw) < 0:
            raise ContractViolation(
                "model", f"{ih}x{iw} -> {h}x{w} mixes up- and downscaling; rescale each axis "
                         "to the symmetric scale s_m = sqrt(s_v * s_h) with a kernel first")
        return ih, iw

    def down(self, image, h, w):
        ih, iw = self._check(image, h, w)
        self.calls.append(("down", (ih, iw, h, w)))
        log.debug("model down lattice %dx%d -> %dx%d", ih, iw, h, w)
        return downscale(self.model, image, h, w).data.astype(np.float64)

    def up(self, image, h, w):
        ih, iw = self._check(image, h, w)
        self.calls.append(("up", (ih, iw, h, w)))
        log.debug("model up lattice %dx%d -> %dx%d", ih, iw, h, w)
        return upscale(self.model, image, h, w).data.astype(np.float64)


@dataclass
class KernelEngine:
    kind: str = "bicubic"
    name: str = field(init=False)

    def __post_init__(self):
        if self.kind not in ENGINE_KERNELS:
            raise ContractViolation("engine", f"unknown kernel {self.kind!r}; expected one of {ENGINE_KERNELS}")
        self.name = self.kind

    def down(self, image, h, w):
        if self.kind == "bilnn":
            return resample(image, h, w, KernelSpec("bilinear", antialias=False))
        return resample(image, h, w, self.kind)

    def up(self, image, h, w):
        return resample(image, h, w, "nearest" if self.kind == "bilnn" else self.kind)


def make_engine(model_path=None, kernel=None):
    from .serialize import load

    if (model_path is None) == (kernel is None):
        raise ContractViolation("engine", "give exactly one of a model path or a kernel")
    if model_path is not None:
        return ModelEngine(load(model_path), name=Path(model_path).name)
    return KernelEngine(kernel)


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Row:
    scale_h: float   # factor along the image height (vertical)
    scale_w: float   # factor along the image width (horizontal)
    cycle: int
    mode: str
    psnr_db: float
    ssim: float
    runtime_ms: float


@dataclass
class Report:
    rows: list[Row] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow([_num(r.scale_h), _num(r.scale_w), r.cycle, r.mode,
                        _fixed(r.psnr_db), _fixed(r.ssim), f"{r.runtime_ms:.3f}"])
        return buf.getvalue()

    def write(self, path) -> None:
        path = Path(path)
        path.write_text(self.to_csv())
        path.with_name(path.name + ".meta.json").write_text(json.dumps(self.meta, indent=2, sort_keys=True) + "\n")


def _num(v: float) -> str:
    return repr(round(float(v), 10))


def _fixed(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:.6f}"


def read_csv(text: str) -> list[dict]:
    rows = list(csv.DictReader(io.StringIO(text)))
    for r in rows:
        for k in ("scale_h", "scale_w", "psnr_db", "ssim", "runtime_ms"):
            r[k] = float(r[k])
        r["cycle"] = int(r["cycle"])
    return rows


def _maybe_quantize(image, flag: bool):
    return quantize(image) if flag else image


def _score(gt, out, space):
    # SSIM needs an 11 px window; tiny images report nan rather than fail
    s = ssim(gt, out, space) if min(gt.shape[-2:]) >= 11 else math.nan
    return psnr(gt, out, space), s


def _check_corpus(corpus):
    if not corpus:
        raise ContractViolation("harness", "corpus is empty")


# --------------------------------------------------------------------------
# protocols
# --------------------------------------------------------------------------

def cmd_idem(corpus: Sequence[np.ndarray], engine, scale: float, cycles: int = 5,
             mode: str = "closed", quantize_between: bool = True, space=None) -> Report:
    """Repeated down/up round trips, each scored against the original.

    Closed mode downscales with the engine itself, open mode with area
    averaging.  One row per cycle, averaged over the corpus.
    """
    _check_corpus(corpus)
    if cycles < 1:
        raise ContractViolation("idem", "cycles must be >= 1")
    if scale < 1:
        raise ContractViolation("idem", "scale must be >= 1")
    if mode not in ("closed", "open"):
        raise ContractViolation("idem", f"mode must be closed or open, got {mode!r}")
    space = MetricSpace() if space is None else space
    scores = np.zeros((cycles, len(corpus), 2))
    times = np.zeros(cycles)
    for i, gt in enumerate(corpus):
        _, h, w = gt.shape
        lh, lw = lr_dim(h, scale), lr_dim(w, scale)
        current = gt
        for n in range(cycles):
            t0 = time.perf_counter()
            lr = engine.down(current, lh, lw) if mode == "closed" else resample(current, lh, lw, "area")
            lr = _maybe_quantize(lr, quantize_between)
            current = _maybe_quantize(engine.up(lr, h, w), quantize_between)
            times[n] += (time.perf_counter() - t0) * 1e3
            scores[n, i] = _score(gt, current, space)
    rows = [Row(scale, scale, n + 1, mode, float(np.mean(scores[n, :, 0])),
                float(np.mean(scores[n, :, 1])), times[n]) for n in range(cycles)]
    meta = {"protocol": "idem", "engine": engine.name, "quantize": quantize_between,
            "space": space.mode, "images": len(corpus), "per_image_psnr": scores[:, :, 0].T.tolist()}
    return Report(rows, meta)


def parse_scales(text: str) -> list[float]:
    """``lo:hi:step`` (inclusive) or a comma list."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ContractViolation("sweep", f"scale range must be lo:hi:step, got {text!r}")
        lo, hi, step = map(float, parts)
        if step <= 0 or hi < lo:
            raise ContractViolation("sweep", f"empty scale range {text!r}")
        count = int(math.floor((hi - lo) / step + 1e-9)) + 1
        scales = [round(lo + i * step, 10) for i in range(count)]
    else:
        scales = [float(s) for s in text.split(",") if s.strip()]
    if not scales or min(scales) < 1:
        raise ContractViolation("sweep", "scales must be >= 1")
    return scales


def cmd_sweep(corpus: Sequence[np.ndarray], engine, scales: Sequence[float],
              quantize_between: bool = True, space=None) -> Report:
    """One down/up round trip per (scale, image); rows ordered by scale then image."""
    _check_corpus(corpus)
    if min(scales) < 1:
        raise ContractViolation("sweep", "scales must be >= 1")
    space = MetricSpace() if space is None else space
    rows = []
    for s in scales:
        for gt in corpus:
            _, h, w = gt.shape
            lh, lw = lr_dim(h, s), lr_dim(w, s)
            t0 = time.perf_counter()
            lr = _maybe_quantize(engine.down(gt, lh, lw), quantize_between)
            out = _maybe_quantize(engine.up(lr, h, w), quantize_between)
            ms = (time.perf_counter() - t0) * 1e3
            p, q = _score(gt, out, space)
            rows.append(Row(s, s, 1, "closed", p, q, ms))
    meta = {"protocol": "sweep", "engine": engine.name, "quantize": quantize_between,
            "space": space.mode, "images": len(corpus), "scales": list(scales)}
    return Report(rows, meta)


def symmetric_scale(s_v: float, s_h: float) -> float:
    return math.sqrt(s_v * s_h)


def cmd_asym(corpus: Sequence[np.ndarray], engine, s_v: float, s_h: float,
             conversion: str = "native", quantize_between: bool = True, space=None) -> Report:
    """Asymmetric rescaling by (s_v, s_h).

    ``pre-interp`` first stretches the image bicubically by (s_m/s_v, s_m/s_h)
    so the engine downscales symmetrically by s_m = sqrt(s_v * s_h), then
    upscales straight back to the original size.  ``native`` hands the
    asymmetric lattices to the engine directly.  Either way the LR size is
    (round(H/s_v), round(W/s_h)).
    """
    _check_corpus(corpus)
    if s_v < 1 or s_h < 1:
        raise ContractViolation("asym", f"scales must be >= 1, got ({s_v}, {s_h})")
    if conversion not in ("pre-interp", "native"):
        raise ContractViolation("asym", f"conversion must be pre-interp or native, got {conversion!r}")
    space = MetricSpace() if space is None else space
    s_m = symmetric_scale(s_v, s_h)
    rows, stretched = [], []
    for gt in corpus:
        _, h, w = gt.shape
        lh, lw = lr_dim(h, s_v), lr_dim(w, s_h)
        t0 = time.perf_counter()
        src = gt
        if conversion == "pre-interp":
            ih, iw = max(1, round(h * s_m / s_v)), max(1, round(w * s_m / s_h))
            stretched.append((ih, iw))
            src = _maybe_quantize(resample(gt, ih, iw, "bicubic"), quantize_between)
        lr = _maybe_quantize(engine.down(src, lh, lw), quantize_between)
        out = _maybe_quantize(engine.up(lr, h, w), quantize_between)
        ms = (time.perf_counter() - t0) * 1e3
        p, q = _score(gt, out, space)
        rows.append(Row(s_v, s_h, 1, conversion, p, q, ms))
    meta = {"protocol": "asym", "engine": engine.name, "quantize": quantize_between, "space": space.mode,
            "s_v": s_v, "s_h": s_h, "s_m": s_m, "conversion": conversion, "stretched_sizes": stretched}
    return Report(rows, meta)


def cmd_bigscale(corpus: Sequence[np.ndarray], engine, scale: float,
                 quantize_between: bool = True, space=None) -> Report:
    """Large-scale round trip with the engine's downscale capped at x4.

    The LR size is round(dim / s).  The image is first resized bicubically to
    exactly four times the LR size, the engine downscales by 4 and upscales
    by ~s straight to the original size.  A bicubic down/up baseline at the
    same LR size is reported alongside (mode ``bicubic``).
    """
    _check_corpus(corpus)
    if not scale > 4:
        raise ContractViolation("bigscale", f"scale must exceed 4, got {scale}")
    space = MetricSpace() if space is None else space
    rows, lattices = [], []
    for gt in corpus:
        _, h, w = gt.shape
        lh, lw = lr_dim(h, scale), lr_dim(w, scale)
        t0 = time.perf_counter()
        pre = _maybe_quantize(resample(gt, 4 * lh, 4 * lw, "bicubic"), quantize_between)
        lr = _maybe_quantize(engine.down(pre, lh, lw), quantize_between)
        out = _maybe_quantize(engine.up(lr, h, w), quantize_between)
        ms = (time.perf_counter() - t0) * 1e3
        lattices.append({"down": [4 * lh, 4 * lw, lh, lw], "up": [lh, lw, h, w]})
        log.info("bigscale lattice down %dx%d -> %dx%d, up %dx%d -> %dx%d",
                 4 * lh, 4 * lw, lh, lw, lh, lw, h, w)
        rows.append(Row(scale, scale, 1, engine.name, *_score(gt, out, space), ms))
        t0 = time.perf_counter()
        base_lr = _maybe_quantize(resample(gt, lh, lw, "bicubic"), quantize_between)
        base = _maybe_quantize(resample(base_lr, h, w, "bicubic"), quantize_between)
        ms = (time.perf_counter() - t0) * 1e3
        rows.append(Row(scale, scale, 1, "bicubic", *_score(gt, base, space), ms))
    meta = {"protocol": "bigscale", "engine": engine.name, "quantize": quantize_between,
            "space": space.mode, "scale": scale, "pre_factor": scale / 4, "lattices": lattices}
    return Report(rows, meta)


def cmd_metrics(ref: np.ndarray, test: np.ndarray, space=None) -> tuple[float, float]:
    space = MetricSpace() if space is None else space
    return psnr(ref, test, space), ssim(ref, test, space)
