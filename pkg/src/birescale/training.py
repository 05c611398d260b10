"""Losses, scale sampling, the multi-cycle objective and the staged schedule."""

from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractViolation
from .metrics import YCBCR_MATRIX
from .model import ModelConfig, RescaleModel, cycle
from .resample import resample

REC_KINDS = ("L1", "Ls")
REF_KINDS = ("L2_pixel", "L2_chroma", "L2_mean", "none")
STAGES = ("pretrain", "base", "finetune-N", "finetune-asym")


@dataclass(frozen=True)
class LossSpec:
    rec_kind: str = "L1"
    ref_kind: str = "L2_pixel"
    lambda1: float = 1.0
    lambda2: float | None = None   # None picks the per-kind default
    cycles: int = 1                # N, the largest cycle count drawn

    def __post_init__(self):
        if self.rec_kind not in REC_KINDS:
            raise ContractViolation("LossSpec", f"rec_kind must be one of {REC_KINDS}")
        if self.ref_kind not in REF_KINDS:
            raise ContractViolation("LossSpec", f"ref_kind must be one of {REF_KINDS}")
        if not self.lambda1 > 0:
            raise ContractViolation("LossSpec", "lambda1 must be positive")
        if self.lambda2 is None:
            object.__setattr__(self, "lambda2", 2.0 if self.ref_kind == "L2_chroma" else 1.0)
        if self.lambda2 < 0:
            raise ContractViolation("LossSpec", "lambda2 must be non-negative")
        if self.cycles < 1:
            raise ContractViolation("LossSpec", "cycles (N) must be >= 1")


@dataclass(frozen=True)
class TrainConfig:
    batch: int = 4
    patch: int = 48
    scale_low: float = 1.0
    scale_high: float = 2.0
    asymmetric: bool = False
    lr: float = 1e-4
    halve_every: int = 0          # steps between learning-rate halvings, 0 = never
    steps: int = 2000
    steps_per_epoch: int = 500
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    model: ModelConfig = field(default_factory=ModelConfig)
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if self.scale_low < 1 or self.scale_high < self.scale_low:
            raise ContractViolation("TrainConfig", f"bad scale range [{self.scale_low}, {self.scale_high}]")
        if self.patch < 8:
            raise ContractViolation("TrainConfig", "patch must be >= 8")
        if self.batch < 1 or self.steps < 0 or self.steps_per_epoch < 1:
            raise ContractViolation("TrainConfig", "batch, steps and steps_per_epoch must be positive")


# --------------------------------------------------------------------------
# config files
# --------------------------------------------------------------------------

_MODEL_KEYS = {f.name for f in fields(ModelConfig)}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"model"}
_LOSS_KEYS = {"rec_kind", "ref_kind", "lambda1", "lambda2", "cycles"}
CONFIG_KEYS = sorted(_TRAIN_KEYS | _LOSS_KEYS | {"stage", "init"} | {f"model.{k}" for k in _MODEL_KEYS})


def _coerce(text: str, like):
    if isinstance(like, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    return text


def parse_config(text: str) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment, blank lines are ignored."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractViolation("config", f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ContractViolation("config", f"line {lineno}: unknown key {key!r}")
        out[key] = value
    return out


def configs_from_mapping(raw: dict[str, str]) -> tuple[TrainConfig, LossSpec | None, str | None, str | None]:
    """(TrainConfig, LossSpec override or None, stage or None, init model path or None)."""
    base, mcfg = TrainConfig(), ModelConfig()
    try:
        model_kw = {k[6:]: _coerce(v, getattr(mcfg, k[6:])) for k, v in raw.items() if k.startswith("model.")}
        train_kw = {}
        for k, v in raw.items():
            if k in _TRAIN_KEYS:
                default = getattr(base, k)
                train_kw[k] = v if default is None else _coerce(v, default)
        loss_kw = {}
        for k in _LOSS_KEYS & raw.keys():
            loss_kw[k] = {"cycles": int, "lambda1": float, "lambda2": float}.get(k, str)(raw[k])
    except ValueError as exc:
        raise ContractViolation("config", str(exc)) from exc
    config = replace(base, model=replace(mcfg, **model_kw), **train_kw)
    loss = LossSpec(**loss_kw) if loss_kw else None
    return config, loss, raw.get("stage"), raw.get("init")


def load_config(path) -> tuple[TrainConfig, LossSpec | None, str | None, str | None]:
    return configs_from_mapping(parse_config(Path(path).read_text()))


# --------------------------------------------------------------------------
# scales and losses
# --------------------------------------------------------------------------

def lr_dim(n: int, s: float) -> int:
    """round(n / s) with halves rounded up, clamped to [1, n]."""
    return int(min(max(math.floor(n / s + 0.5), 1), n))


def sample_scale(config: TrainConfig, rng: np.random.Generator) -> tuple[int, int]:
    """LR patch size for one draw; symmetric mode uses one scale for both axes."""
    if config.patch < 8:
        raise ContractViolation("sample_scale", "patch must be >= 8")
    sv = rng.uniform(config.scale_low, config.scale_high)
    sh = rng.uniform(config.scale_low, config.scale_high) if config.asymmetric else sv
    return lr_dim(config.patch, sv), lr_dim(config.patch, sh)


def effective_scale(hr_shape: Sequence[int], lr_shape: Sequence[int]) -> float:
    """Exact HR/LR ratio; the geometric mean of the two axes when they differ."""
    sv = hr_shape[0] / lr_shape[0]
    sh = hr_shape[1] / lr_shape[1]
    return sv if sv == sh else math.sqrt(sv * sh)


def rec_loss(x, x_hat, kind: str = "L1", scale: float = 1.0) -> Tensor:
    x, x_hat = ad.as_tensor(x), ad.as_tensor(x_hat)
    if x.shape != x_hat.shape:
        raise ContractViolation("rec_loss", f"shape mismatch {x.shape} vs {x_hat.shape}")
    l1 = ad.mean(ad.abs_(ad.sub(x_hat, x)))
    if kind == "L1":
        return l1
    if kind == "Ls":
        return ad.scalar_mul(l1, 1.0 / scale)
    raise ContractViolation("rec_loss", f"unknown kind {kind!r}")


def _chroma_rows(image: Tensor) -> Tensor:
    # Cb and Cr without their offsets, which cancel in a difference
    m = YCBCR_MATRIX[1:].T.astype(image.dtype)
    return ad.linear(ad.image_to_rows(image), m)


def ref_loss(x, x_lr, kind: str = "L2_pixel") -> Tensor:
    """Weak supervision of the LR output ``x_lr`` by the HR image ``x``."""
    x, x_lr = ad.as_tensor(x), ad.as_tensor(x_lr)
    if x.data.ndim != 3 or x_lr.data.ndim != 3 or x.shape[0] != x_lr.shape[0]:
        raise ContractViolation("ref_loss", f"incompatible shapes {x.shape} and {x_lr.shape}")
    if x_lr.shape[1] > x.shape[1] or x_lr.shape[2] > x.shape[2]:
        raise ContractViolation("ref_loss", "LR image is larger than the HR image")
    if kind == "none":
        return Tensor(np.zeros(1, dtype=x_lr.dtype))
    if kind == "L2_mean":
        target = Tensor(x.data.mean(axis=(1, 2)).astype(x_lr.dtype))
        return ad.mean(ad.square(ad.sub(ad.mean(x_lr, axis=(1, 2)), target)))
    ref = Tensor(resample(x.data, x_lr.shape[1], x_lr.shape[2], "bicubic").astype(x_lr.dtype))
    if kind == "L2_pixel":
        return ad.mean(ad.square(ad.sub(x_lr, ref)))
    if kind == "L2_chroma":
        if x.shape[0] != 3:
            raise ContractViolation("ref_loss", "L2_chroma needs RGB input")
        return ad.mean(ad.square(ad.sub(_chroma_rows(x_lr), _chroma_rows(ref))))
    raise ContractViolation("ref_loss", f"unknown kind {kind!r}")


def _objective(model, x, lr_lr, recon, spec: LossSpec, scale) -> Tensor:
    loss = ad.scalar_mul(rec_loss(x, recon, spec.rec_kind, scale), spec.lambda1)
    if spec.ref_kind != "none" and spec.lambda2 > 0:
        loss = ad.add(loss, ad.scalar_mul(ref_loss(x, lr_lr, spec.ref_kind), spec.lambda2))
    return loss


def one_cycle_loss(model: RescaleModel, x, lr_size: tuple[int, int], spec: LossSpec) -> Tensor:
    """The plain reconstruction objective for a single round trip."""
    x = ad.as_tensor(np.asarray(x.data if isinstance(x, Tensor) else x, dtype=model.dtype))
    lr, recon = cycle(model, x, *lr_size)
    return _objective(model, x, lr, recon, spec, effective_scale(x.shape[1:], lr_size))


def run_cycles(model: RescaleModel, x: Tensor, lr_size: tuple[int, int], n: int) -> tuple[Tensor, Tensor]:
    """Apply ``n`` differentiable round trips; returns the last (LR, HR) pair."""
    current = x
    lr = None
    for _ in range(n):
        lr, current = cycle(model, current, *lr_size)
    return lr, current


def multi_cycle_loss(model: RescaleModel, x, lr_size: tuple[int, int], spec: LossSpec,
                     rng: np.random.Generator, n: int | None = None) -> tuple[Tensor, int]:
    """Reconstruction after ``n`` cycles, ``n`` uniform in 1..N; returns (loss, n)."""
    if spec.cycles < 1:
        raise ContractViolation("multi_cycle_loss", "N must be >= 1")
    if n is None:
        n = int(rng.integers(1, spec.cycles + 1))
    x = ad.as_tensor(np.asarray(x.data if isinstance(x, Tensor) else x, dtype=model.dtype))
    lr, recon = run_cycles(model, x, lr_size, n)
    return _objective(model, x, lr, recon, spec, effective_scale(x.shape[1:], lr_size)), n


# --------------------------------------------------------------------------
# optimizer and data
# --------------------------------------------------------------------------

class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= update.astype(p.data.dtype)


def random_patch(image: np.ndarray, patch: int, rng: np.random.Generator) -> np.ndarray:
    """Random crop with a random flip / transpose (dihedral augmentation)."""
    _, h, w = image.shape
    if h < patch or w < patch:
        raise ContractViolation("random_patch", f"image {h}x{w} smaller than patch {patch}")
    y, x = int(rng.integers(0, h - patch + 1)), int(rng.integers(0, w - patch + 1))
    p = image[:, y:y + patch, x:x + patch]
    k = int(rng.integers(0, 8))
    if k & 1:
        p = p[:, :, ::-1]
    if k & 2:
        p = p[:, ::-1, :]
    if k & 4:
        p = p.transpose(0, 2, 1)
    return np.ascontiguousarray(p)


# --------------------------------------------------------------------------
# schedule
# --------------------------------------------------------------------------

def stage_loss(stage: str, cycles: int = 1) -> LossSpec:
    """The loss each stage of the schedule trains with."""
    if stage == "pretrain":
        return LossSpec("L1", "L2_pixel")
    if stage in ("base", "finetune-asym"):
        return LossSpec("Ls", "L2_mean")
    if stage == "finetune-N":
        return LossSpec("Ls", "L2_mean", cycles=cycles)
    raise ContractViolation("train", f"unknown stage {stage!r}; expected one of {STAGES}")


@dataclass
class TrainResult:
    model: RescaleModel
    curve: list[tuple[int, float, float]]   # (step, loss, psnr_train)
    checkpoints: list[Path]


def train(config: TrainConfig, loss_spec: LossSpec | None, corpus: Sequence[np.ndarray],
          stage: str = "pretrain", model: RescaleModel | None = None,
          log=None) -> TrainResult:
    """Optimize ``model`` (a fresh one when None) for ``config.steps`` steps.

    ``pretrain`` merges downscaled subpixels with area weights; every later
    stage switches the learned weights on.  ``finetune-asym`` samples the two
    axes' scales independently.
    """
    from .serialize import save

    if not corpus:
        raise ContractViolation("train", "corpus is empty")
    if stage not in STAGES:
        raise ContractViolation("train", f"unknown stage {stage!r}; expected one of {STAGES}")
    spec = loss_spec or stage_loss(stage)
    if stage == "finetune-asym" and not config.asymmetric:
        config = replace(config, asymmetric=True)
    rng = np.random.default_rng(config.seed)
    if model is None:
        model = RescaleModel.init(config.model, seed=config.seed)
    model = model.copy()
    model.use_swf = stage != "pretrain"
    params = model.parameters()
    opt = Adam(params, config.lr, config.beta1, config.beta2, config.eps)
    ckpt_dir = Path(config.checkpoint_dir) if config.checkpoint_dir else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    curve, checkpoints = [], []
    for step in range(1, config.steps + 1):
        if config.halve_every:
            opt.lr = config.lr * 0.5 ** ((step - 1) // config.halve_every)
        items = [random_patch(corpus[int(rng.integers(0, len(corpus)))], config.patch, rng)
                 for _ in range(config.batch)]
        sizes = [sample_scale(config, rng) for _ in items]
        draws = [int(rng.integers(1, spec.cycles + 1)) for _ in items]
        with ad.Tape() as tape:
            losses, psnrs = [], []
            for x, size, n in zip(items, sizes, draws):
                xt = Tensor(x.astype(model.dtype))
                lr_img, recon = run_cycles(model, xt, size, n)
                losses.append(_objective(model, xt, lr_img, recon, spec, effective_scale(x.shape[1:], size)))
                mse = float(np.mean((recon.data.astype(np.float64) - x) ** 2))
                psnrs.append(10 * math.log10(1 / mse) if mse > 0 else math.inf)
            loss = ad.scalar_mul(functools.reduce(ad.add, losses), 1.0 / len(losses))
        grads = tape.gradient(loss, params)
        opt.step(grads)
        value = loss.item()
        if not math.isfinite(value):
            raise ContractViolation("train", f"loss became non-finite at step {step}")
        curve.append((step, value, float(np.mean(psnrs))))
        if log is not None and (step % 50 == 0 or step == config.steps):
            log(f"[{stage}] step {step}/{config.steps} loss {value:.5f} psnr {curve[-1][2]:.2f}")
        if ckpt_dir is not None and (step % config.steps_per_epoch == 0 or step == config.steps):
            path = ckpt_dir / f"{stage}_step{step:06d}.bair"
            save(model, path)
            checkpoints.append(path)
    return TrainResult(model, curve, checkpoints)


def write_curve(curve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss", "psnr_train"])
        for step, loss, p in curve:
            w.writerow([step, repr(loss), repr(p)])


def smoothed(values: Sequence[float], window: int = 10) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    return np.convolve(v, np.ones(window) / window, mode="valid")
