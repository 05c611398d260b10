"""The learned bidirectional rescaler.

Both directions run the same three steps:

    features = encode(image)                       # shared conv encoder
    values   = split(features, lattice, direction) # per-subpixel MLP
    output   = merge(values, weights, lattice)     # normalized weighted sum

Downscaling merges with weights from a small positive MLP over the subpixel's
offsets to its output pixel (when ``use_swf`` is on, else plain areas);
upscaling always merges with subpixel areas.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractViolation
from .lattice import SubpixelLattice, build_lattice

SWF_EPS = 1e-6


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 3
    width: int = 32        # encoder conv channels
    blocks: int = 4        # residual blocks
    features: int = 32     # feature dimension per pixel
    svf_hidden: int = 64
    swf_hidden: int = 16
    mlp_layers: int = 5


@lru_cache(maxsize=256)
def lattice_for(in_h: int, in_w: int, out_h: int, out_w: int) -> SubpixelLattice:
    lat = build_lattice(in_h, in_w, out_h, out_w)
    lat.arrays  # materialize once, lattices are shared read-only
    return lat


def _kaiming(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class RescaleModel:
    """Parameter container plus the flags that select the merge weighting."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor], use_swf: bool = True):
        self.config = config
        self.params = params
        self.use_swf = use_swf

    @classmethod
    def init(cls, config: ModelConfig = ModelConfig(), seed: int = 0,
             dtype=ad.DEFAULT_DTYPE, use_swf: bool = True,
             near_identity: bool = True) -> "RescaleModel":
        """Kaiming-uniform weights and zero biases.

        With ``near_identity`` a reserved set of channels carries each pixel's
        colour from the input through the encoder and the value MLPs, so the
        untrained model already downscales by area averaging and upscales by
        replication; all other units start random.
        """
        rng = np.random.default_rng(seed)
        p: dict[str, np.ndarray] = {}
        c, wd, f = config.channels, config.width, config.features

        def conv(name, cin, cout):
            p[f"{name}.weight"] = _kaiming(rng, (cout, cin, 3, 3), cin * 9, dtype)
            p[f"{name}.bias"] = np.zeros(cout, dtype)

        def mlp(name, din, hidden, dout):
            dims = [din] + [hidden] * (config.mlp_layers - 1) + [dout]
            for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
                p[f"{name}.{i}.weight"] = _kaiming(rng, (a, b), a, dtype)
                p[f"{name}.{i}.bias"] = np.zeros(b, dtype)

        conv("encoder.head", c, wd)
        for b in range(config.blocks):
            conv(f"encoder.block{b}.conv1", wd, wd)
            conv(f"encoder.block{b}.conv2", wd, wd)
        conv("encoder.tail", wd, f)
        mlp("svf_down", f + 4, config.svf_hidden, c)
        mlp("svf_up", f + 4, config.svf_hidden, c)
        mlp("swf", 4, config.swf_hidden, 1)
        if near_identity:
            _pass_colour_through(p, config)
        params = {k: Tensor(v, requires_grad=True, name=k) for k, v in p.items()}
        return cls(config, params, use_swf)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def group(self, prefix: str) -> list[Tensor]:
        return [t for k, t in self.params.items() if k.startswith(prefix)]

    def astype(self, dtype) -> "RescaleModel":
        params = {k: Tensor(t.data.astype(dtype), requires_grad=True, name=k)
                  for k, t in self.params.items()}
        return RescaleModel(self.config, params, self.use_swf)

    def copy(self) -> "RescaleModel":
        return self.astype(self.dtype)

    def with_params(self, arrays: dict[str, np.ndarray]) -> "RescaleModel":
        """A model sharing config and flags but with new parameter values."""
        params = {k: Tensor(np.array(arrays[k], dtype=self.params[k].dtype),
                            requires_grad=True, name=k) for k in self.params}
        return RescaleModel(self.config, params, self.use_swf)

    def __repr__(self):
        n = sum(t.data.size for t in self.params.values())
        return f"RescaleModel({asdict(self.config)}, use_swf={self.use_swf}, params={n})"


RESIDUAL_INIT_SCALE = 0.1


def _pass_colour_through(p: dict[str, np.ndarray], config: ModelConfig) -> None:
    c = config.channels
    if min(config.width, config.features, config.svf_hidden) < c:
        raise ContractViolation("init", "near-identity init needs widths >= channel count")
    eye = np.arange(c)

    def carry(name, gain):
        # output channels [0, c) read only their own input channel's centre tap
        w = p[f"{name}.weight"]
        w[:c] = 0
        w[eye, eye, 1, 1] = gain

    carry("encoder.head", 1.0)
    for b in range(config.blocks):
        p[f"encoder.block{b}.conv2.weight"] *= RESIDUAL_INIT_SCALE
        p[f"encoder.block{b}.conv2.weight"][:c] = 0
    # head reaches the tail twice when blocks exist (block path + global skip)
    carry("encoder.tail", 0.5 if config.blocks else 1.0)
    for name in ("svf_down", "svf_up"):
        last = config.mlp_layers - 1
        for i in range(config.mlp_layers):
            w = p[f"{name}.{i}.weight"]  # (in, out)
            if i < last:
                w[:, :c] = 0
                w[eye, eye] = 1
            else:
                w[:] = 0  # the random hidden units start with no say in the output
                w[eye, eye] = 1


def _image_tensor(model: RescaleModel, image, op: str) -> Tensor:
    t = image if isinstance(image, Tensor) else Tensor(np.asarray(image, dtype=model.dtype))
    if t.data.ndim != 3 or t.shape[0] != model.config.channels:
        raise ContractViolation(op, f"expected ({model.config.channels}, H, W) image, got {t.shape}")
    if not np.all(np.isfinite(t.data)):
        raise ContractViolation(op, "non-finite input")
    return t


def _mlp(model: RescaleModel, name: str, x: Tensor) -> Tensor:
    n = model.config.mlp_layers
    for i in range(n):
        x = ad.linear(x, model.params[f"{name}.{i}.weight"], model.params[f"{name}.{i}.bias"])
        if i < n - 1:
            x = ad.relu(x)
    return x


def encode(model: RescaleModel, image) -> Tensor:
    """Per-pixel features (F, H, W) from an image (C, H, W)."""
    x = _image_tensor(model, image, "encode")
    c, h, w = x.shape
    p = model.params
    x = ad.reshape(x, (1, c, h, w))
    head = ad.conv2d(x, p["encoder.head.weight"], p["encoder.head.bias"])
    y = head
    for b in range(model.config.blocks):
        r = ad.relu(ad.conv2d(y, p[f"encoder.block{b}.conv1.weight"], p[f"encoder.block{b}.conv1.bias"]))
        r = ad.conv2d(r, p[f"encoder.block{b}.conv2.weight"], p[f"encoder.block{b}.conv2.bias"])
        y = ad.add(y, r)
    if model.config.blocks:
        y = ad.add(y, head)
    z = ad.conv2d(y, p["encoder.tail.weight"], p["encoder.tail.bias"])
    return ad.reshape(z, (model.config.features, h, w))


def split(model: RescaleModel, features: Tensor, lattice: SubpixelLattice, direction: str) -> Tensor:
    """Subpixel values (K, C) from features on the lattice's input grid."""
    if direction not in ("down", "up"):
        raise ContractViolation("split", f"direction must be 'down' or 'up', got {direction!r}")
    features = ad.as_tensor(features)
    if features.data.ndim != 3 or features.shape[1:] != lattice.in_shape:
        raise ContractViolation("split", f"features {features.shape} do not match lattice input "
                                         f"{lattice.in_shape}")
    arr = lattice.arrays
    rows = ad.gather_rows(ad.image_to_rows(features), arr["in_flat"])
    phi = Tensor(arr["phi"].astype(features.dtype))
    return _mlp(model, "svf_down" if direction == "down" else "svf_up", ad.concat([rows, phi], axis=1))


def subpixel_weights(model: RescaleModel, lattice: SubpixelLattice) -> Tensor:
    """Learned positive merge weights (K,) from each subpixel's psi."""
    raw = _mlp(model, "swf", Tensor(lattice.arrays["psi"].astype(model.dtype)))
    sp = ad.softplus(ad.reshape(raw, (raw.shape[0],)))
    return ad.add(sp, np.full(sp.shape, SWF_EPS, dtype=sp.dtype))


def merge(values: Tensor, weights, lattice: SubpixelLattice) -> Tensor:
    """Output image (C, out_h, out_w) as the weighted mean of each pixel's subpixels."""
    out_h, out_w = lattice.out_shape
    rows = ad.weighted_scatter_reduce(values, weights, lattice.arrays["out_flat"], out_h * out_w)
    return ad.rows_to_image(rows, out_h, out_w)


def _area(model: RescaleModel, lattice: SubpixelLattice) -> np.ndarray:
    # scaled by the output pixel count so weights are O(1); the merge normalizes anyway
    return (lattice.arrays["area"] * (lattice.out_shape[0] * lattice.out_shape[1])).astype(model.dtype)


def downscale(model: RescaleModel, x, out_h: int, out_w: int) -> Tensor:
    x = _image_tensor(model, x, "downscale")
    lat = lattice_for(x.shape[1], x.shape[2], out_h, out_w)
    values = split(model, encode(model, x), lat, "down")
    weights = subpixel_weights(model, lat) if model.use_swf else _area(model, lat)
    return merge(values, weights, lat)


def upscale(model: RescaleModel, x, out_h: int, out_w: int) -> Tensor:
    x = _image_tensor(model, x, "upscale")
    lat = lattice_for(x.shape[1], x.shape[2], out_h, out_w)
    return merge(split(model, encode(model, x), lat, "up"), _area(model, lat), lat)


def cycle(model: RescaleModel, x, lr_h: int, lr_w: int) -> tuple[Tensor, Tensor]:
    """One downscale-then-upscale round trip; returns (low-res, reconstruction)."""
    x = _image_tensor(model, x, "cycle")
    lr = downscale(model, x, lr_h, lr_w)
    return lr, upscale(model, lr, x.shape[1], x.shape[2])


def identity_replicating(config: ModelConfig, dtype=np.float64) -> RescaleModel:
    """A model whose subpixel values copy their parent pixel's colour.

    The encoder passes colours through in its first channels and the value
    MLPs route them unchanged through ReLU (inputs are non-negative), so
    merging with area weights reproduces exact area averaging.  Used as a
    geometric reference, never trained.
    """
    if config.features < config.channels or config.width < config.channels \
            or config.svf_hidden < config.channels:
        raise ContractViolation("identity_replicating", "widths must be >= channel count")
    model = RescaleModel.init(config, seed=0, dtype=dtype, use_swf=False)
    c = config.channels
    arrays = {k: np.zeros_like(t.data) for k, t in model.params.items()}
    eye = np.arange(c)
    arrays["encoder.head.weight"][eye, eye, 1, 1] = 1
    arrays["encoder.tail.weight"][eye, eye, 1, 1] = 1
    if config.blocks:
        # head output reaches the tail twice (block path + global skip)
        arrays["encoder.tail.weight"][eye, eye, 1, 1] = 0.5
    for name in ("svf_down", "svf_up"):
        for i in range(config.mlp_layers):
            arrays[f"{name}.{i}.weight"][eye, eye] = 1
    return model.with_params(arrays)
