"""Information-theoretic analyses of trajectory codes.

Mutual information between per-time codes is estimated with a neural
Donsker-Varadhan bound (a small statistics net trained to separate joint
from product-of-marginals samples).  Entropy normalizers reuse the same
estimator on (X, X), which makes the normalized score of a variable with
itself exactly 1.  Attention-profile similarity is measured with the
Jensen-Shannon divergence in bits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .models import Model, _glorot, _he, linear
from .optim import Adam
from .rng import seed_stream
from .tensor import Tensor


@dataclass
class MineConfig:
    iterations: int = 1500
    batch_size: int = 256
    width: int = 128
    lr: float = 5e-4
    ema_alpha: float = 0.01       # correction EMA for the log-partition gradient
    smooth: float = 0.05          # EMA for the reported bound value
    seeds: tuple = (0, 1, 2)


class _StatsNet(Model):
    """T(x, y): 2 ReLU hidden layers, width per config, scalar output."""

    def __init__(self, rng, in_dim, width):
        super().__init__()
        self.param("w1", _he(rng, in_dim, (in_dim, width)))
        self.param("b1", np.zeros(width))
        self.param("w2", _he(rng, width, (width, width)))
        self.param("b2", np.zeros(width))
        self.param("w3", _glorot(rng, width, 1, (width, 1)))
        self.param("b3", np.zeros(1))

    def forward(self, xy):
        p = self.params
        h = tt.relu(linear(xy, p["w1"], p["b1"]))
        h = tt.relu(linear(h, p["w2"], p["b2"]))
        return linear(h, p["w3"], p["b3"])


def _standardize(a):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    std = np.maximum(a.std(axis=0), 1e-9)
    return (a - a.mean(axis=0)) / std


def _log_mean_exp(v):
    m = v.max()
    return float(m + np.log(np.mean(np.exp(v - m))))


def mine_estimate(x, y, seed, config=None):
    """Donsker-Varadhan lower bound on I(X; Y) in nats, one estimator seed.

    Marginal samples come from shuffling y within the batch.  The
    log-partition term's gradient uses an exponential-moving-average
    denominator (treated as constant) to cut bias; the reported value is
    an EMA of the plain bound, clamped at 0 since MI is nonnegative.
    """
    config = config or MineConfig()
    x = _standardize(x)
    y = _standardize(y)
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"sample counts differ: {x.shape[0]} vs {y.shape[0]}")
    n = x.shape[0]
    net = _StatsNet(seed_stream(seed, "mine", "init"), x.shape[1] + y.shape[1],
                    config.width)
    opt = Adam(net.params, lr=config.lr)
    order = seed_stream(seed, "mine", "order")

    log_ema = None
    value = None
    for _ in range(config.iterations):
        idx = order.integers(0, n, size=config.batch_size)
        shuf = order.permutation(config.batch_size)
        joint = Tensor(np.concatenate([x[idx], y[idx]], axis=1))
        marg = Tensor(np.concatenate([x[idx], y[idx][shuf]], axis=1))
        t_joint = net.forward(joint)
        t_marg = net.forward(marg)

        lme = _log_mean_exp(t_marg.data[:, 0])
        log_ema = lme if log_ema is None else float(
            np.logaddexp(log_ema + np.log1p(-config.ema_alpha),
                         lme + np.log(config.ema_alpha)))

        # bias-corrected gradient: d/dtheta [ -E_J T + E_M e^T / ema ]
        corrected = tt.mean(tt.exp(tt.sub(t_marg, Tensor(log_ema))))
        loss = tt.add(tt.neg(tt.mean(t_joint)), corrected)
        tt.zero_grad(net.params)
        tt.backward(loss)
        opt.step()

        bound = float(t_joint.data.mean()) - lme
        value = bound if value is None else (1 - config.smooth) * value + config.smooth * bound
    return max(value, 0.0)


def mine_mi(x, y, config=None):
    """Seed-averaged MI estimate in nats."""
    config = config or MineConfig()
    return float(np.mean([mine_estimate(x, y, s, config) for s in config.seeds]))


def mine_mi_matrix(codes, config=None, progress=None):
    """Pairwise MI between per-time codes: (T, T), symmetric by construction.

    codes: (N, T, c).  Diagonal cells estimate I(X; X), the entropy proxy
    used for normalization.
    """
    codes = np.asarray(codes)
    n_times = codes.shape[1]
    mi = np.zeros((n_times, n_times))
    for i in range(n_times):
        for j in range(i, n_times):
            val = mine_mi(codes[:, i, :], codes[:, j, :], config)
            mi[i, j] = mi[j, i] = val
            if progress is not None:
                progress(i, j, val)
    return mi


def nmi_from_mi(mi, clamp_hi=1.2):
    """Normalize MI by sqrt of the diagonal entropy proxies.

    Returns (nmi, n_clamped).  Values land in [0, clamp_hi]; estimator
    noise can push cells past 1, they are clamped and counted.  The
    diagonal is exactly 1 by construction.
    """
    mi = np.asarray(mi, dtype=np.float64)
    h = np.maximum(np.diag(mi), 1e-9)
    nmi = mi / np.sqrt(np.outer(h, h))
    n_clamped = int((nmi > clamp_hi).sum())
    return np.clip(nmi, 0.0, clamp_hi), n_clamped


def band_contrast(nmi, near=1, far=5):
    """Mean over cells |i-j| <= near minus mean over cells |i-j| >= far."""
    nmi = np.asarray(nmi)
    n = nmi.shape[0]
    d = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    if not (d >= far).any():
        raise ValueError(f"no cells with |i-j| >= {far} in a {n}x{n} matrix")
    return float(nmi[d <= near].mean() - nmi[d >= far].mean())


# --- Jensen-Shannon divergence ----------------------------------------------------


def jsd_bits(p, q):
    """JSD between two distributions, base 2: in [0, 1], 0 iff p == q."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    for name, d in (("p", p), ("q", q)):
        if d.min() < -1e-12 or abs(d.sum() - 1.0) > 1e-9:
            raise ValueError(f"{name} is not a distribution (sum {d.sum()}, min {d.min()})")
    m = 0.5 * (p + q)

    def kl(a):
        mask = a > 0
        return float(np.sum(a[mask] * (np.log2(a[mask]) - np.log2(m[mask]))))

    return 0.5 * kl(p) + 0.5 * kl(q)


def jsd_matrix(profiles):
    """Pairwise JSD (bits) between rows of profiles (n_tasks, T)."""
    profiles = np.asarray(profiles, dtype=np.float64)
    n = profiles.shape[0]
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = jsd_bits(profiles[i], profiles[j])
    return out


# --- code-separation check ---------------------------------------------------------


def separation_stats(codes):
    """Pairwise code distances at t=0 versus the max over the time grid.

    codes: (N, T, c) with grid time 0 at index 0.  Returns a dict with the
    flattened upper-triangle distances (d0, dsup), the grid index where
    each pair peaks, and the count of pairs violating dsup >= d0 (zero by
    construction, since t=0 participates in the max).
    """
    codes = np.asarray(codes, dtype=np.float64)
    n, n_times, _ = codes.shape
    iu = np.triu_indices(n, k=1)
    dist = np.empty((n_times, iu[0].size))
    for ti in range(n_times):
        z = codes[:, ti, :]
        sq = (z * z).sum(axis=1)
        d2 = sq[:, None] + sq[None, :] - 2.0 * (z @ z.T)
        dist[ti] = np.sqrt(np.maximum(d2[iu], 0.0))
    d0 = dist[0]
    dsup = dist.max(axis=0)
    argmax_t = dist.argmax(axis=0)
    return {
        "d0": d0,
        "dsup": dsup,
        "argmax_t": argmax_t,
        "violations": int((dsup < d0).sum()),
    }
