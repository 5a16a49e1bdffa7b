"""Adam and RMSProp (with momentum) acting in place on dicts of arrays."""

import numpy as np

from .errors import NumericError


def _check_grads(grads):
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"gradient of {name}")


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads):
        """One update of every ``params[name]`` that has an entry in ``grads``.

        Non-finite gradients abort the step before any state is touched.
        """
        _check_grads(grads)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, g in grads.items():
            p = params[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)

    def state_dict(self):
        out = {"opt/t": np.array(self.t, dtype=np.int64)}
        for name in self.m:
            out[f"opt/m/{name}"] = self.m[name]
            out[f"opt/v/{name}"] = self.v[name]
        return out

    def load_state_dict(self, state):
        self.t = int(state["opt/t"])
        self.m = {k[len("opt/m/"):]: v.copy() for k, v in state.items() if k.startswith("opt/m/")}
        self.v = {k[len("opt/v/"):]: v.copy() for k, v in state.items() if k.startswith("opt/v/")}


class RMSProp:
    """RMSProp with heavy-ball momentum on the normalized gradient.

    ``s <- rho*s + (1-rho)*g^2``, ``b <- mu*b + g/(sqrt(s)+eps)``, ``p <- p - lr*b``.
    """

    def __init__(self, lr=1e-3, rho=0.99, momentum=0.9, eps=1e-8):
        self.lr = lr
        self.rho = rho
        self.momentum = momentum
        self.eps = eps
        self.t = 0
        self.square_avg = {}
        self.buf = {}

    def step(self, params, grads):
        _check_grads(grads)
        self.t += 1
        for name, g in grads.items():
            p = params[name]
            if name not in self.square_avg:
                self.square_avg[name] = np.zeros_like(p)
                self.buf[name] = np.zeros_like(p)
            s, b = self.square_avg[name], self.buf[name]
            s *= self.rho
            s += (1 - self.rho) * (g * g)
            b *= self.momentum
            b += g / (np.sqrt(s) + self.eps)
            p -= (self.lr * b).astype(p.dtype)

    def state_dict(self):
        out = {"opt/t": np.array(self.t, dtype=np.int64)}
        for name in self.square_avg:
            out[f"opt/s/{name}"] = self.square_avg[name]
            out[f"opt/b/{name}"] = self.buf[name]
        return out

    def load_state_dict(self, state):
        self.t = int(state["opt/t"])
        self.square_avg = {k[len("opt/s/"):]: v.copy() for k, v in state.items() if k.startswith("opt/s/")}
        self.buf = {k[len("opt/b/"):]: v.copy() for k, v in state.items() if k.startswith("opt/b/")}
