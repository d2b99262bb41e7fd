"""Adam on a flat parameter vector."""

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError


@dataclass
class AdamState:
    """First/second moment accumulators and the step counter."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, num_params, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(m=np.zeros(num_params), v=np.zeros(num_params),
                   t=0, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params, grad, state, lr):
    """One bias-corrected Adam update.

    Returns (new_params, new_state); the inputs are left untouched.  A
    NaN anywhere in the gradient raises instead of corrupting the state.
    """
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape or params.ndim != 1:
        raise ShapeError("params and grad must be flat vectors of equal length")
    if not np.all(np.isfinite(grad)):
        raise NumericError("refusing to apply a non-finite gradient")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    mhat = m / (1.0 - state.beta1 ** t)
    vhat = v / (1.0 - state.beta2 ** t)
    new_params = params - lr * mhat / (np.sqrt(vhat) + state.eps)
    new_state = AdamState(m=m, v=v, t=t, beta1=state.beta1,
                          beta2=state.beta2, eps=state.eps)
    return new_params, new_state
