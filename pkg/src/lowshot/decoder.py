"""DCGAN-style generator G(z; theta).

Layer table for a resolution R = 2**L (L >= 4) and width multiplier w::

    z (k) -> convT k -> c0, K4 s1 p0      4x4   -> BN -> relu
          -> convT c0 -> c1, K4 s2 p1     8x8   -> BN -> relu
          ...
          -> convT c_last -> 3, K4 s2 p1  R x R -> tanh

with hidden widths c_i = 64 * w * 2**(L-3-i). For R=64, w=1 this is the
usual 512-256-128-64 generator. Convolutions carry no bias.

Normalization statistics are per sample (over H, W), so a batch of codes
decodes to exactly what the codes produce one at a time, and pre-training
(batch S) sees the same network as inversion (batch 1).
"""

from dataclasses import asdict, dataclass

import numpy as np

from . import engine
from .engine import Tensor
from .errors import ConfigError, ShapeError

KERNEL = 4
BN_EPS = 1e-5
INIT_STD = 0.02


@dataclass(frozen=True)
class Descriptor:
    latent_dim: int = 128
    resolution: int = 64
    channels: int = 3
    width: float = 1.0

    def __post_init__(self):
        r = self.resolution
        if r < 16 or r & (r - 1):
            raise ConfigError(f"resolution must be a power of two >= 16, got {r}")
        if self.latent_dim < 1 or self.channels < 1:
            raise ConfigError("latent_dim and channels must be positive")
        if self.width <= 0 or min(self.widths) < 1:
            raise ConfigError(f"width multiplier {self.width} leaves an empty layer")

    @property
    def n_hidden(self):
        return int(np.log2(self.resolution)) - 2

    @property
    def widths(self):
        n = self.n_hidden
        return [int(round(64 * self.width * 2 ** (n - 1 - i))) for i in range(n)]

    @property
    def image_shape(self):
        return (self.channels, self.resolution, self.resolution)

    @property
    def n_pixels(self):
        return self.channels * self.resolution * self.resolution

    def layer_shapes(self):
        """Ordered ``name -> shape`` for every parameter leaf."""
        shapes = {}
        cin = self.latent_dim
        for i, cout in enumerate(self.widths):
            shapes[f"conv{i}.weight"] = (cin, cout, KERNEL, KERNEL)
            shapes[f"bn{i}.gamma"] = (cout,)
            shapes[f"bn{i}.beta"] = (cout,)
            cin = cout
        shapes[f"conv{self.n_hidden}.weight"] = (cin, self.channels, KERNEL, KERNEL)
        return shapes

    def param_count(self):
        return sum(int(np.prod(s)) for s in self.layer_shapes().values())

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(
            latent_dim=int(d["latent_dim"]),
            resolution=int(d["resolution"]),
            channels=int(d.get("channels", 3)),
            width=float(d.get("width", 1.0)),
        )


# desk-scale model used throughout the tests and acceptance runs
DESK = Descriptor(latent_dim=16, resolution=32, channels=3, width=0.25)


@dataclass
class DecoderParams:
    descriptor: Descriptor
    arrays: dict

    def __post_init__(self):
        expected = self.descriptor.layer_shapes()
        if list(self.arrays) != list(expected):
            raise ShapeError(f"parameter names {list(self.arrays)} do not match {list(expected)}")
        for name, shape in expected.items():
            if self.arrays[name].shape != shape:
                raise ShapeError(f"{name}: shape {self.arrays[name].shape}, expected {shape}")

    @property
    def count(self):
        return sum(a.size for a in self.arrays.values())

    @property
    def dtype(self):
        return next(iter(self.arrays.values())).dtype

    def copy(self):
        return DecoderParams(self.descriptor, {k: v.copy() for k, v in self.arrays.items()})

    def astype(self, dtype):
        return DecoderParams(self.descriptor, {k: v.astype(dtype) for k, v in self.arrays.items()})


def init_params(seed, descriptor=DESK, dtype=np.float32):
    """Gaussian init: weights N(0, 0.02^2), BN gamma N(1, 0.02^2), beta 0."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in descriptor.layer_shapes().items():
        if name.endswith(".weight"):
            arrays[name] = rng.normal(0.0, INIT_STD, size=shape)
        elif name.endswith(".gamma"):
            arrays[name] = rng.normal(1.0, INIT_STD, size=shape)
        else:
            arrays[name] = np.zeros(shape)
    return DecoderParams(descriptor, {k: v.astype(dtype) for k, v in arrays.items()})


def generate(z, leaves, descriptor):
    """Differentiable decoder pass on engine tensors.

    ``z`` is a (B, k) Tensor, ``leaves`` maps parameter names to Tensors.
    Returns a (B, C, R, R) Tensor.
    """
    if z.ndim != 2 or z.shape[1] != descriptor.latent_dim:
        raise ShapeError(f"latent batch must be (B, {descriptor.latent_dim}), got {z.shape}")
    h = z.reshape(z.shape[0], descriptor.latent_dim, 1, 1)
    for i in range(descriptor.n_hidden):
        stride, pad = (1, 0) if i == 0 else (2, 1)
        h = engine.conv_transpose2d(h, leaves[f"conv{i}.weight"], stride, pad)
        h = engine.batch_norm(h, leaves[f"bn{i}.gamma"], leaves[f"bn{i}.beta"], BN_EPS, per_sample=True)
        h = engine.relu(h)
    h = engine.conv_transpose2d(h, leaves[f"conv{descriptor.n_hidden}.weight"], 2, 1)
    return engine.tanh(h)


def forward(z, params):
    """Decode a single code (k,) to an image (C, R, R), or a batch (B, k) to (B, C, R, R)."""
    z = np.asarray(z, dtype=params.dtype)
    single = z.ndim == 1
    zb = z[None] if single else z
    leaves = {k: Tensor(v) for k, v in params.arrays.items()}
    out = generate(Tensor(zb), leaves, params.descriptor).data
    return out[0] if single else out
