"""Central finite-difference checks of engine gradients in float64.

Each parameter leaf is probed along a random unit direction ``d``: the
analytic directional derivative ``<grad, d>`` is compared with
``(f(p + h d) - f(p - h d)) / 2h``. Probing every leaf covers every
coordinate of (z, theta) without one evaluation pair per coordinate.
"""

from dataclasses import dataclass

import numpy as np

from . import engine, losses
from .decoder import DESK, generate, init_params
from .invert import measurement_objective
from .operators import gaussian_for_ratio, luma_operator

STEP = 1e-6


@dataclass
class LeafCheck:
    objective: str
    point: int
    leaf: str
    analytic: float
    numeric: float

    @property
    def rel_error(self):
        scale = max(abs(self.analytic), abs(self.numeric))
        if scale == 0.0:
            return 0.0
        return abs(self.analytic - self.numeric) / scale


def directional_checks(objective, point, wrt=None, rng=None, step=STEP, label="", index=0):
    rng = np.random.default_rng(rng)
    _, grads = engine.value_and_grad(objective, point, wrt)
    results = []
    for name, g in grads.items():
        d = rng.standard_normal(g.shape)
        d /= np.linalg.norm(d)
        analytic = float(np.sum(g * d))
        base = point[name]
        vals = []
        for sign in (1.0, -1.0):
            shifted = dict(point)
            shifted[name] = base + sign * step * d
            vals.append(float(objective({k: engine.Tensor(v) for k, v in shifted.items()}).data))
        numeric = (vals[0] - vals[1]) / (2 * step)
        results.append(LeafCheck(label, index, name, analytic, numeric))
    return results


def coordinate_checks(f, x, step=1e-6):
    """Full central-difference gradient of a scalar numpy function ``f`` at ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.empty_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        hi = f(x)
        flat[i] = old - step
        lo = f(x)
        flat[i] = old
        gf[i] = (hi - lo) / (2 * step)
    return g


def pipeline_objectives(descriptor, rng, shots=3):
    """The four checked compositions: l2 and MMD pre-training, CS and colorization inversion."""
    images = np.tanh(rng.standard_normal((shots,) + descriptor.image_shape))
    alpha = losses.median_bandwidth(images)

    def pretrain_objective(kind):
        def objective(leaves):
            out = generate(leaves["z"], leaves, descriptor)
            if kind == "l2":
                return losses.l2_loss(out, images)
            return losses.mmd_loss(out, images, alpha)
        return objective

    truth = np.tanh(rng.standard_normal(descriptor.image_shape))
    cs = gaussian_for_ratio(0.1, descriptor.image_shape, int(rng.integers(2**31)))
    luma = luma_operator(descriptor.image_shape)
    return {
        "l2": (pretrain_objective("l2"), shots),
        "mmd": (pretrain_objective("mmd"), shots),
        "cs": (measurement_objective(cs, cs.apply(truth).astype(np.float64), descriptor), 1),
        "colorization": (measurement_objective(luma, luma.apply(truth), descriptor), 1),
    }


def check_pipeline(descriptor=DESK, n_points=5, seed=0, step=STEP):
    """Run directional checks of all four objectives at ``n_points`` random points."""
    rng = np.random.default_rng(seed)
    objectives = pipeline_objectives(descriptor, rng)
    results = []
    for p in range(n_points):
        theta = init_params(int(rng.integers(2**31)), descriptor, np.float64)
        for name, (objective, batch) in objectives.items():
            point = dict(theta.arrays)
            point["z"] = rng.standard_normal((batch, descriptor.latent_dim))
            results.extend(directional_checks(objective, point, rng=rng, step=step,
                                              label=name, index=p))
    return results
