"""Joint fitting of decoder weights and per-shot latent codes.

Every iteration is full-batch: all S shots are decoded together and one
Adam step is taken on (theta, z_1..z_S).
"""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import engine, losses
from .checkpoint import load_checkpoint, save_checkpoint
from .decoder import DESK, DecoderParams, generate, init_params
from .engine import dtype_for
from .errors import ConfigError, DegenerateInputError, NumericError, OptimizationError
from .optim import Adam

log = logging.getLogger(__name__)

STD_FLOOR = 0.1


@dataclass
class PretrainConfig:
    loss: str = "l2"
    iterations: int = 50_000
    lr: float = 1e-3
    seed: int = 0
    alpha: float = None  # MMD bandwidth; None -> median heuristic on the shots
    estimator: str = "literal"
    precision: str = "standard"
    snapshot_every: int = 100

    def __post_init__(self):
        if self.loss not in ("l2", "mmd"):
            raise ConfigError(f"loss must be 'l2' or 'mmd', got {self.loss!r}")
        if self.iterations < 1 or self.lr <= 0:
            raise ConfigError("iterations must be >= 1 and lr > 0")


@dataclass
class PretrainResult:
    theta: DecoderParams
    latents: np.ndarray
    loss_history: np.ndarray
    config: PretrainConfig
    alpha: float = None
    optimizer_state: dict = field(default_factory=dict, repr=False)

    def manifest(self):
        return {"pretrain": asdict(self.config), "alpha": self.alpha}


def training_objective(shots, descriptor, loss, alpha=None, estimator="literal"):
    """Closure computing the pre-training loss from ``theta`` leaves plus ``latents``."""

    def objective(leaves):
        out = generate(leaves["latents"], leaves, descriptor)
        if loss == "l2":
            return losses.l2_loss(out, shots)
        return losses.mmd_loss(out, shots, alpha, estimator)

    return objective


def pretrain(shots, cfg, descriptor=DESK, progress=None):
    """Fit ``theta`` and one latent code per shot by minimizing the chosen loss.

    ``shots`` is an (S, C, R, R) array in [-1, 1]. Returns a
    :class:`PretrainResult` with the loss recorded before every step.
    """
    shots = np.asarray(shots)
    s = shots.shape[0]
    if shots.shape[1:] != descriptor.image_shape:
        raise ConfigError(f"shots have shape {shots.shape[1:]}, model produces {descriptor.image_shape}")
    if cfg.loss == "mmd" and s < 2:
        raise DegenerateInputError("MMD pre-training needs at least two shots")
    dtype = dtype_for(cfg.precision)
    shots = shots.astype(dtype)

    alpha = None
    if cfg.loss == "mmd":
        alpha = cfg.alpha if cfg.alpha is not None else losses.median_bandwidth(shots)

    rng = np.random.default_rng(cfg.seed)
    theta = init_params(int(rng.integers(2**31)), descriptor, dtype)
    point = dict(theta.arrays)
    point["latents"] = rng.standard_normal((s, descriptor.latent_dim)).astype(dtype)

    objective = training_objective(shots, descriptor, cfg.loss, alpha, cfg.estimator)
    opt = Adam(lr=cfg.lr)
    history = np.empty(cfg.iterations)
    snapshot = ({k: v.copy() for k, v in point.items()}, 0)
    for it in range(cfg.iterations):
        try:
            value, grads = engine.value_and_grad(objective, point)
            opt.step(point, grads)
        except NumericError as exc:
            good, good_it = snapshot
            fallback = PretrainResult(
                DecoderParams(descriptor, {k: good[k] for k in descriptor.layer_shapes()}),
                good["latents"], history[:good_it].copy(), cfg, alpha,
            )
            raise OptimizationError(exc.primitive, it, fallback, good_it) from exc
        history[it] = value
        if cfg.snapshot_every and (it + 1) % cfg.snapshot_every == 0:
            snapshot = ({k: v.copy() for k, v in point.items()}, it + 1)
        if progress is not None:
            progress(it, value)
        elif it % 1000 == 0:
            log.debug("pretrain %s iter %d loss %.6g", cfg.loss, it, value)

    latents = point.pop("latents")
    return PretrainResult(
        DecoderParams(descriptor, point), latents, history, cfg, alpha, opt.state_dict()
    )


@dataclass
class LatentFit:
    mean: np.ndarray
    std: np.ndarray
    floor: float = STD_FLOOR


def fit_latent_gaussian(latents, floor=STD_FLOOR):
    """Diagonal Gaussian over the learned codes; each std is at least ``floor``."""
    z = np.asarray(latents, dtype=np.float64)
    if z.ndim != 2 or len(z) < 1:
        raise DegenerateInputError("need a non-empty (S, k) latent table")
    mean = z.mean(axis=0)
    std = z.std(axis=0, ddof=1) if len(z) > 1 else np.zeros(z.shape[1])
    return LatentFit(mean, np.maximum(std, floor), floor)


def sample_latent(fit, seed):
    rng = np.random.default_rng(seed)
    return fit.mean + fit.std * rng.standard_normal(fit.mean.shape)


def pretrained_from_checkpoint(path, expected=None):
    """Load ``(theta, latents, manifest)`` written by :func:`save_pretrained`."""
    theta, latents, _, manifest = load_checkpoint(path, expected)
    return theta, latents, manifest


def save_pretrained(path, result, extra_manifest=None):
    manifest = result.manifest()
    manifest.update(extra_manifest or {})
    extra = {"loss_history": result.loss_history}
    extra.update(result.optimizer_state)
    save_checkpoint(path, result.theta, result.latents, manifest, extra)

