from dataclasses import dataclass

import numpy as np


@dataclass
class AdamHyper:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-8


def adam_init(params):
    return {"t": 0,
            "m": {k: np.zeros_like(v) for k, v in params.items()},
            "v": {k: np.zeros_like(v) for k, v in params.items()}}


def adam_update(params, grads, state, hyper: AdamHyper):
    """One bias-corrected Adam step, updating ``params`` arrays in place.

    Returns ``(params, state)`` for convenience.
    """
    state["t"] += 1
    t = state["t"]
    c1 = 1.0 - hyper.beta1 ** t
    c2 = 1.0 - hyper.beta2 ** t
    for k, p in params.items():
        g = grads[k]
        m = state["m"][k]
        v = state["v"][k]
        m *= hyper.beta1
        m += (1.0 - hyper.beta1) * g
        v *= hyper.beta2
        v += (1.0 - hyper.beta2) * g * g
        p -= hyper.lr * (m / c1) / (np.sqrt(v / c2) + hyper.eps)
    return params, state


class Adam:
    def __init__(self, params, hyper: AdamHyper):
        self.hyper = hyper
        self.state = adam_init(params)

    def step(self, params, grads):
        adam_update(params, grads, self.state, self.hyper)
