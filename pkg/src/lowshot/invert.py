"""Two-stage inversion with a pre-trained decoder, plus the untrained baseline.

Stage 1 searches the latent space with the weights frozen; stage 2 refines
weights and latent jointly, starting from the stage-1 solution. Both
minimize ``0.5 * ||A G(z; theta) - y||^2``.
"""

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from . import engine
from .decoder import DecoderParams, generate, init_params
from .engine import dtype_for
from .errors import ConfigError, NumericError, OptimizationError
from .losses import psnr
from .optim import Adam, RMSProp
from .pretrain import sample_latent

log = logging.getLogger(__name__)


@dataclass
class InversionConfig:
    stage1_iterations: int = 1250
    stage1_lr: float = 5e-2
    stage2_iterations: int = 350
    stage2_lr: float = 1e-4
    restarts: int = 1
    seed: int = 0
    precision: str = "standard"

    def __post_init__(self):
        if self.stage1_iterations < 0 or self.stage2_iterations < 0:
            raise ConfigError("iteration counts must be nonnegative")
        if self.stage1_lr <= 0 or self.stage2_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if self.restarts < 1:
            raise ConfigError("need at least one restart")


@dataclass
class StageReport:
    losses: np.ndarray
    final_loss: float
    restart_losses: list = field(default_factory=list)
    best_iteration: int = None


@dataclass
class InversionResult:
    z0: np.ndarray
    theta0: DecoderParams
    reconstruction: np.ndarray
    stage1: StageReport = None
    stage2: StageReport = None
    metrics: dict = field(default_factory=dict)


def measurement_objective(op, y, descriptor):
    """``0.5 * ||A G(z; theta) - y||^2`` as a closure over engine leaves."""
    y = np.asarray(y).reshape(-1)

    def objective(leaves):
        x = generate(leaves["z"], leaves, descriptor)
        r = op.apply_tensor(x).reshape(-1) - y
        return r.square().sum() * 0.5

    return objective


def _values(y):
    return getattr(y, "values", y)


def _prepare(y, theta, precision):
    dtype = dtype_for(precision)
    return np.asarray(_values(y), dtype=dtype).reshape(-1), theta.astype(dtype), dtype


def restart_seed(seed, restart):
    """Seed for restart ``restart``; a fixed prefix of restarts keeps its seeds."""
    digest = hashlib.sha256(f"{seed}:{restart}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def solve_latent(y, op, theta_hat, latent_fit, cfg):
    """Stage 1: minimize over z only with Adam, best of ``cfg.restarts`` starts."""
    yv, theta, dtype = _prepare(y, theta_hat, cfg.precision)
    desc = theta.descriptor
    objective = measurement_objective(op, yv, desc)
    best = None
    restart_losses = []
    for r in range(cfg.restarts):
        point = dict(theta.arrays)
        point["z"] = sample_latent(latent_fit, restart_seed(cfg.seed, r)).astype(dtype)[None]
        opt = Adam(lr=cfg.stage1_lr)
        history = np.empty(cfg.stage1_iterations)
        for it in range(cfg.stage1_iterations):
            try:
                value, grads = engine.value_and_grad(objective, point, wrt=("z",))
                opt.step(point, grads)
            except NumericError as exc:
                raise OptimizationError(exc.primitive, it) from exc
            history[it] = value
        final, _ = engine.value_and_grad(objective, point, wrt=())
        restart_losses.append(final)
        if best is None or final < best[0]:
            best = (final, point["z"][0].copy(), history)
    final, z_hat, history = best
    return z_hat, StageReport(history, final, restart_losses)


def refine_joint(y, op, theta_hat, z_hat, cfg, stage1=None):
    """Stage 2: joint Adam over (theta, z) from (theta_hat, z_hat).

    Returns the iterate with the lowest measurement loss seen, the starting
    point included, so the result is never worse than stage 1.
    """
    yv, theta, dtype = _prepare(y, theta_hat, cfg.precision)
    desc = theta.descriptor
    objective = measurement_objective(op, yv, desc)
    point = dict(theta.arrays)
    point["z"] = np.asarray(z_hat, dtype=dtype).reshape(1, -1).copy()
    opt = Adam(lr=cfg.stage2_lr)
    history = np.empty(cfg.stage2_iterations + 1)
    best_loss, best_point, best_it = np.inf, None, 0
    for it in range(cfg.stage2_iterations + 1):
        try:
            value, grads = engine.value_and_grad(objective, point)
        except NumericError as exc:
            raise OptimizationError(exc.primitive, it, fallback=stage1) from exc
        history[it] = value
        if value < best_loss:
            best_loss, best_it = value, it
            best_point = {k: v.copy() for k, v in point.items()}
        if it == cfg.stage2_iterations:
            break
        try:
            opt.step(point, grads)
        except NumericError as exc:
            raise OptimizationError(exc.primitive, it, fallback=stage1) from exc
    z0 = best_point.pop("z")[0]
    theta0 = DecoderParams(desc, best_point)
    x = _decode(z0, theta0)
    report = StageReport(history, float(best_loss), best_iteration=best_it)
    return InversionResult(z0, theta0, x, stage1, report)


def _decode(z, theta):
    leaves = {k: engine.Tensor(v) for k, v in theta.arrays.items()}
    return generate(engine.Tensor(z[None]), leaves, theta.descriptor).data[0]


def invert(y, op, theta_hat, latent_fit, cfg, truth=None):
    """Stage 1 followed by stage 2; adds PSNR to ``metrics`` when ``truth`` is given."""
    z_hat, report1 = solve_latent(y, op, theta_hat, latent_fit, cfg)
    result = refine_joint(y, op, theta_hat, z_hat, cfg, stage1=report1)
    result.metrics["stage1_loss"] = report1.final_loss
    result.metrics["stage2_loss"] = result.stage2.final_loss
    if truth is not None:
        result.metrics["psnr"] = psnr(result.reconstruction, truth)
    return result


def untrained_iterations(ratio):
    """Iteration budget of the untrained baseline as a function of m/n."""
    if ratio <= 0.025:
        return 350
    if ratio <= 0.5:
        return 500
    return 1000


def schedule_ratio(op):
    """Ratio used to pick the untrained budget; luma and identity use the top bucket."""
    return op.ratio if op.kind == "gaussian" else 1.0


def solve_untrained(y, op, descriptor, compression_ratio=None, seed=0, iterations=None,
                    lr=1e-3, momentum=0.9, precision="standard", truth=None):
    """Fit a freshly initialized decoder's weights to ``y`` with z held fixed.

    RMSProp with momentum; the iteration count follows
    :func:`untrained_iterations` unless given explicitly.
    """
    if iterations is None:
        ratio = schedule_ratio(op) if compression_ratio is None else compression_ratio
        iterations = untrained_iterations(ratio)
    dtype = dtype_for(precision)
    yv = np.asarray(_values(y), dtype=dtype).reshape(-1)
    rng = np.random.default_rng(seed)
    theta = init_params(int(rng.integers(2**31)), descriptor, dtype)
    point = dict(theta.arrays)
    point["z"] = rng.standard_normal((1, descriptor.latent_dim)).astype(dtype)
    objective = measurement_objective(op, yv, descriptor)
    wrt = tuple(descriptor.layer_shapes())
    opt = RMSProp(lr=lr, momentum=momentum)
    history = np.empty(iterations)
    for it in range(iterations):
        try:
            value, grads = engine.value_and_grad(objective, point, wrt=wrt)
            opt.step(point, grads)
        except NumericError as exc:
            raise OptimizationError(exc.primitive, it) from exc
        history[it] = value
    final, _ = engine.value_and_grad(objective, point, wrt=())
    z0 = point.pop("z")[0]
    theta0 = DecoderParams(descriptor, point)
    result = InversionResult(
        z0, theta0, _decode(z0, theta0), stage2=StageReport(history, final)
    )
    result.metrics["iterations"] = iterations
    result.metrics["final_loss"] = final
    if truth is not None:
        result.metrics["psnr"] = psnr(result.reconstruction, truth)
    return result
