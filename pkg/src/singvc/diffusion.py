"""Forward noising, the noise-prediction loss, and the reverse sampler.

Generic over any epsilon predictor: a callable (y_t, t, cond) -> tensor of
the same shape as y_t, where t is the 1-based step index and cond is passed
through opaquely.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .rng import RandomStream
from .schedule import NoiseSchedule, step_stats
from .tensor import Tensor


def gaussian(shape, rng: RandomStream) -> Tensor:
    """i.i.d. standard normal tensor from the given stream."""
    return Tensor(rng.normal(shape))


def forward_sample(s: NoiseSchedule, y0: Tensor, t: int, eps: Tensor) -> Tensor:
    """y_t = sqrt(alpha_bar_t) * y0 + sqrt(1 - alpha_bar_t) * eps."""
    if y0.shape != eps.shape:
        raise ShapeError(f"noise shape {eps.shape} != data shape {y0.shape}")
    sqrt_ab, sqrt_1mab, _ = step_stats(s, t)
    return T.add(T.scale(y0, sqrt_ab), T.scale(eps, sqrt_1mab))


def diffusion_loss(s: NoiseSchedule, model, y0: Tensor, cond, t: int, eps: Tensor) -> Tensor:
    """Mean squared error between eps and the model's prediction at step t.

    Mean reduction over elements (not the plain squared norm): it rescales
    the gradient by a constant that folds into the learning rate and keeps
    the loss scale independent of segment length and mel depth.
    """
    y_t = forward_sample(s, y0, t, eps)
    pred = model(y_t, t, cond)
    if pred.shape != eps.shape:
        raise ShapeError(f"model output shape {pred.shape} != noise shape {eps.shape}")
    return T.mse(eps, pred)


def reverse_step(s: NoiseSchedule, model, y_t: Tensor, t: int, cond, z: Tensor) -> Tensor:
    """One Langevin update:

    y_{t-1} = (y_t - (1 - alpha_t)/sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_t)
              + sigma_t * z
    """
    if z.shape != y_t.shape:
        raise ShapeError(f"z shape {z.shape} != y_t shape {y_t.shape}")
    _, sqrt_1mab, sigma = step_stats(s, t)
    alpha = float(s.alpha[t - 1])
    eps_hat = model(y_t, t, cond)
    inner = T.sub(y_t, T.scale(eps_hat, (1.0 - alpha) / sqrt_1mab))
    return T.add(T.scale(inner, 1.0 / np.sqrt(alpha)), T.scale(z, sigma))


def sample(s: NoiseSchedule, model, cond, frames: int, n_mels: int, rng: RandomStream) -> Tensor:
    """Run the full T-step reverse chain from y_T ~ N(0, I).

    Fresh z is drawn for every step t > 1; z = 0 at t = 1.  Deterministic
    given the stream.
    """
    y = gaussian((frames, n_mels), rng)
    for t in range(s.steps, 0, -1):
        z = gaussian(y.shape, rng) if t > 1 else T.zeros(y.shape)
        y = reverse_step(s, model, y, t, cond, z)
    return y
