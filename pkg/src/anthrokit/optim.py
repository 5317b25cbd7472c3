"""First-order optimizer shared by the body fitting and ambiguity code."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass
class OptimConfig:
    """Settings for :func:`adam_minimize`.

    ``lr`` multiplies the per-parameter ``scale`` passed by the caller, so
    one config can drive parameters with different units. The step size
    decays geometrically to ``lr * final_lr_fraction`` over ``max_iter``.
    Iteration stops once the best objective has not improved by a relative
    ``tol`` for ``patience`` iterations.
    """

    lr: float = 1.0
    max_iter: int = 2000
    tol: float = 1e-8
    patience: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    final_lr_fraction: float = 0.01
    seed: int = 0
    n_starts: int = 5

    def __post_init__(self):
        if self.lr < 0 or self.max_iter < 1 or self.patience < 1:
            raise ValueError("lr must be >= 0, max_iter and patience >= 1")
        if not 0 < self.final_lr_fraction <= 1:
            raise ValueError("final_lr_fraction must be in (0, 1]")

    def to_dict(self):
        return asdict(self)


def adam_minimize(fun, x0, config: OptimConfig, scale=1.0):
    """Minimize ``fun(x) -> (value, grad)`` with Adam and a decaying step.

    Returns ``(x_best, f_best, iterations)``; the best iterate seen is
    returned, never a worse final one.
    """
    x = np.array(x0, dtype=float)
    scale = np.broadcast_to(np.asarray(scale, dtype=float), x.shape)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    decay = config.final_lr_fraction ** (1.0 / max(config.max_iter - 1, 1))
    f_best, x_best = np.inf, x.copy()
    last_gain = 0
    b1, b2 = config.beta1, config.beta2
    it = 0
    for it in range(1, config.max_iter + 1):
        f, g = fun(x)
        if not np.isfinite(f):
            break
        if f < f_best:
            if f_best - f > config.tol * max(abs(f_best), 1e-300) or not np.isfinite(f_best):
                last_gain = it
            f_best, x_best = f, x.copy()
        if f_best == 0.0 or it - last_gain >= config.patience:
            break
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**it)
        v_hat = v / (1 - b2**it)
        step = config.lr * decay ** (it - 1)
        x = x - step * scale * m_hat / (np.sqrt(v_hat) + config.eps)
    return x_best, float(f_best), it
