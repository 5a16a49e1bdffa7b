"""Measurement operators ``y = A x (+ noise)``.

Images live in [-1, 1] with shape (C, H, W). Three operators are provided:

* ``gaussian``: dense m x n matrix with i.i.d. N(0, 1) entries acting on the
  flattened image;
* ``luma``: ITU-R 601-2 channel mix applied to the [0, 1]-scaled image,
  producing an (H, W) grayscale map in [0, 1];
* ``identity``.
"""

from dataclasses import dataclass, field

import numpy as np

from . import engine
from .errors import ConfigError, ShapeError

LUMA_COEFFS = (0.299, 0.587, 0.114)


@dataclass
class MeasurementOperator:
    kind: str
    image_shape: tuple
    m: int
    seed: int = None
    matrix: np.ndarray = None
    coeffs: tuple = None
    _transposed: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n(self):
        return int(np.prod(self.image_shape))

    @property
    def ratio(self):
        """Compression ratio m / n."""
        return self.m / self.n

    @property
    def output_shape(self):
        if self.kind == "gaussian":
            return (self.m,)
        if self.kind == "luma":
            return tuple(self.image_shape[1:])
        return tuple(self.image_shape)

    def describe(self):
        d = {"kind": self.kind, "image_shape": list(self.image_shape), "m": self.m}
        if self.kind == "gaussian":
            d["seed"] = self.seed
        return d

    def matrix_t(self, dtype):
        dtype = np.dtype(dtype)
        if dtype not in self._transposed:
            self._transposed[dtype] = np.ascontiguousarray(self.matrix.T, dtype=dtype)
        return self._transposed[dtype]

    def _check_input(self, shape):
        if tuple(shape[-len(self.image_shape):]) != tuple(self.image_shape):
            raise ShapeError(f"operator expects images of shape {self.image_shape}, got {shape}")

    def apply(self, x):
        """Noiseless measurement of an image (C, H, W) or a batch (B, C, H, W)."""
        x = np.asarray(x)
        self._check_input(x.shape)
        batch = x.shape[:x.ndim - len(self.image_shape)]
        if self.kind == "gaussian":
            flat = x.reshape(batch + (self.n,))
            return flat @ self.matrix_t(x.dtype)
        if self.kind == "luma":
            c = np.asarray(self.coeffs, dtype=x.dtype)
            unit = (x + 1) / 2
            return np.tensordot(unit, c, axes=([-3], [0]))
        return x.copy()

    def apply_tensor(self, x):
        """Differentiable version of :meth:`apply` for a (B, C, H, W) Tensor."""
        self._check_input(x.shape)
        b = x.shape[0]
        if self.kind == "gaussian":
            return engine.matmul(x.reshape(b, self.n), self.matrix_t(x.dtype))
        if self.kind == "luma":
            c = np.asarray(self.coeffs, dtype=x.dtype).reshape(1, -1, 1, 1)
            return ((x + 1.0) * (c / 2)).sum(axis=1)
        return x

    def mix(self, unit_image):
        """Linear channel mix of a [0, 1]-scaled image (luma operator only)."""
        if self.kind != "luma":
            raise ConfigError("mix() is only defined for the luma operator")
        return np.tensordot(np.asarray(unit_image), np.asarray(self.coeffs), axes=([-3], [0]))


def gaussian_operator(m, n_or_shape, seed):
    if isinstance(n_or_shape, int):
        shape = (n_or_shape,)
    else:
        shape = tuple(n_or_shape)
    n = int(np.prod(shape))
    if m < 1 or n < 1:
        raise ConfigError(f"need m >= 1 and n >= 1, got m={m}, n={n}")
    rng = np.random.default_rng(seed)
    matrix = rng.standard_normal((m, n))
    return MeasurementOperator("gaussian", shape, m, seed=seed, matrix=matrix)


def gaussian_for_ratio(ratio, image_shape, seed):
    n = int(np.prod(image_shape))
    m = max(1, int(round(ratio * n)))
    return gaussian_operator(m, image_shape, seed)


def luma_operator(image_shape, coeffs=LUMA_COEFFS):
    image_shape = tuple(image_shape)
    if image_shape[0] != 3:
        raise ConfigError("luma operator needs 3-channel images")
    if abs(sum(coeffs) - 1.0) > 1e-9:
        raise ConfigError(f"luma coefficients must sum to 1, got {sum(coeffs)}")
    m = image_shape[1] * image_shape[2]
    return MeasurementOperator("luma", image_shape, m, coeffs=tuple(coeffs))


def identity_operator(image_shape):
    image_shape = tuple(image_shape)
    return MeasurementOperator("identity", image_shape, int(np.prod(image_shape)))


def make_operator(kind, image_shape, ratio=None, seed=0):
    if kind == "gaussian":
        if ratio is None:
            raise ConfigError("gaussian operator needs a compression ratio")
        return gaussian_for_ratio(ratio, image_shape, seed)
    if kind == "luma":
        return luma_operator(image_shape)
    if kind == "identity":
        return identity_operator(image_shape)
    raise ConfigError(f"unknown operator kind {kind!r}")


def luma_8bit(rgb):
    """Reference 8-bit luma: ``(R*299 + G*587 + B*114) // 1000`` on uint8 pixels."""
    rgb = np.asarray(rgb, dtype=np.int64)
    return (rgb[..., 0] * 299 + rgb[..., 1] * 587 + rgb[..., 2] * 114) // 1000


@dataclass
class Measurement:
    values: np.ndarray
    noise_std: float = 0.0
    noise_seed: int = None


def add_noise(y, noise_std=0.0, seed=None):
    """Seeded i.i.d. Gaussian noise; ``noise_std == 0`` returns ``y`` untouched."""
    if noise_std < 0:
        raise ConfigError(f"noise_std must be nonnegative, got {noise_std}")
    y = np.asarray(y)
    if noise_std == 0:
        return Measurement(y.copy(), 0.0, seed)
    rng = np.random.default_rng(seed)
    noisy = y + rng.normal(0.0, noise_std, size=y.shape).astype(y.dtype)
    return Measurement(noisy, float(noise_std), seed)


def measure(op, x, noise_std=0.0, seed=None):
    return add_noise(op.apply(x), noise_std, seed)
