"""Variance-exploding forward diffusion and the denoising score-matching target.

The noising process follows the geometric schedule sigma(t) =
sigma_min * (sigma_max / sigma_min)**t on t in [0, 1].  Its transition
kernel is Gaussian: x_t = x_0 + n, n ~ N(0, [sigma(t)^2 - sigma(0)^2] I),
so everything needed for training reduces to the marginal std below.
"""

from __future__ import annotations

import numpy as np


class VESDE:
    """Geometric variance-exploding schedule with closed-form perturbation.

    t is sampled uniformly from [t_floor, 1]; the floor keeps the marginal
    std strictly positive so the score target -(x_t - x_0) / std^2 is
    always defined.
    """

    def __init__(self, sigma_min=0.01, sigma_max=50.0, t_floor=1e-5):
        if not (0.0 < sigma_min < sigma_max):
            raise ValueError(f"need 0 < sigma_min < sigma_max, got {sigma_min}, {sigma_max}")
        if not (0.0 < t_floor < 1.0):
            raise ValueError(f"t_floor must be in (0, 1), got {t_floor}")
        self.sigma_min = float(sigma_min)
        self.sigma_max = float(sigma_max)
        self.t_floor = float(t_floor)

    def sigma(self, t):
        t = np.asarray(t, dtype=np.float64)
        return self.sigma_min * (self.sigma_max / self.sigma_min) ** t

    def marginal_std(self, t):
        """Std of x_t - x_0: sqrt(sigma(t)^2 - sigma(0)^2)."""
        s = self.sigma(t)
        return np.sqrt(s * s - self.sigma_min**2)

    def marginal_var(self, t):
        s = self.sigma(t)
        return s * s - self.sigma_min**2

    def sample_t(self, rng, n):
        return rng.uniform(self.t_floor, 1.0, size=n)

    def perturb(self, x0, t, rng):
        """Draw x_t | x_0 at per-sample times t (shape (B,)).

        Returns (x_t, eps, std) with x_t = x_0 + std * eps and eps standard
        normal; std is broadcast-shaped (B, 1, ..., 1) to match x0.
        """
        x0 = np.asarray(x0, dtype=np.float64)
        t = np.asarray(t, dtype=np.float64)
        if t.shape != (x0.shape[0],):
            raise ValueError(f"t must have shape ({x0.shape[0]},), got {t.shape}")
        std = self.marginal_std(t).reshape((-1,) + (1,) * (x0.ndim - 1))
        eps = rng.standard_normal(x0.shape)
        return x0 + std * eps, eps, std

    def score_target(self, x0, xt, t):
        """The conditional score grad_x log p(x_t | x_0) = -(x_t - x_0)/var."""
        var = self.marginal_var(np.asarray(t)).reshape((-1,) + (1,) * (np.ndim(x0) - 1))
        return -(np.asarray(xt) - np.asarray(x0)) / var

    def weight(self, t):
        """Loss weighting lambda(t) = sigma(t)^2 - sigma(0)^2 (the marginal var)."""
        return self.marginal_var(t)

    def input_scale(self, t):
        """1 / sqrt(var + 1): brings x_t to O(1) magnitude for the nets."""
        return 1.0 / np.sqrt(self.marginal_var(t) + 1.0)


def grid_times(k):
    """k+1 read-out times {i/k}, i = 0..k, evenly spaced on [0, 1]."""
    if k < 1:
        raise ValueError(f"granularity k must be >= 1, got {k}")
    return np.arange(k + 1, dtype=np.float64) / k
