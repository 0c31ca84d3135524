"""Denoising score-matching training for the conditioned representation.

The net predicts the standard-normal noise eps added by the forward
process; with the variance weighting lambda(t) = std(t)^2 the weighted
score-matching objective collapses to a plain mean squared error between
predicted and true noise (per-sample sum over dimensions, mean over the
batch).  An encoder-conditioned net receives the clean sample's code as
side information, which in principle lets this loss approach zero; the
unconditioned variant of the same net is the ablation baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as tt
from .models import ImageScoreNet, TrajectoryEncoder, VectorScoreNet, time_embedding
from .optim import Adam
from .rng import seed_stream
from .sde import VESDE
from .tensor import NonFiniteError, Tensor


class TrainingDiverged(RuntimeError):
    """Loss went non-finite; carries the iteration where it happened."""

    def __init__(self, iteration, cause):
        super().__init__(f"training diverged at iteration {iteration}: {cause}")
        self.iteration = iteration


@dataclass
class ReprConfig:
    """Knobs for representation training; defaults are the desk-scale setup."""

    mode: str = "drl"             # "drl" (deterministic + L1) or "vdrl" (variational + KL)
    latent_dim: int = 128
    iterations: int = 3000
    batch_size: int = 32
    lr: float = 2e-4
    lambda_reg: float | None = None       # None: 1e-5 for drl, 1e-6 for vdrl
    conditioned: bool = True
    sigma_min: float = 0.01
    sigma_max: float = 50.0
    t_floor: float = 1e-5
    enc_width: int = 16
    net_width: int = 40
    temb_dim: int = 64

    def resolved_lambda(self):
        if self.lambda_reg is not None:
            return self.lambda_reg
        return 1e-5 if self.mode == "drl" else 1e-6

    def sde(self):
        return VESDE(self.sigma_min, self.sigma_max, self.t_floor)


@dataclass
class ReprResult:
    encoder: TrajectoryEncoder | None
    score_net: ImageScoreNet
    history: list                     # rows (iteration, dsm_term, reg_term, total)
    config: ReprConfig
    seed: int


def smoothed_final(history, frac=0.1):
    """Mean total loss over the trailing `frac` of recorded iterations."""
    tail = history[-max(1, int(len(history) * frac)):]
    return float(np.mean([row[3] for row in tail]))


def _merged_params(encoder, net):
    params = {f"net.{k}": v for k, v in net.params.items()}
    if encoder is not None:
        params.update({f"enc.{k}": v for k, v in encoder.params.items()})
    return params


def train_representation(dataset, config, seed, progress=None):
    """Train (encoder, score net) on a Dataset; returns a ReprResult.

    With config.conditioned False no encoder is built and the same loop
    trains the baseline net; all data/noise/time streams are keyed
    identically, so a conditioned and an unconditioned run with one seed
    see the exact same batches and noise draws.
    """
    sde = config.sde()
    images = dataset.images
    n = images.shape[0]
    canvas = dataset.canvas

    encoder = None
    if config.conditioned:
        encoder = TrajectoryEncoder(
            seed_stream(seed, "init", "encoder"), mode=config.mode,
            latent_dim=config.latent_dim, width=config.enc_width,
            temb_dim=config.temb_dim, canvas=canvas)
    net = ImageScoreNet(
        seed_stream(seed, "init", "scorenet"),
        latent_dim=config.latent_dim if config.conditioned else 0,
        width=config.net_width, temb_dim=config.temb_dim, canvas=canvas)

    order = seed_stream(seed, "order")
    time_rng = seed_stream(seed, "time")
    noise = seed_stream(seed, "noise")
    enc_noise = seed_stream(seed, "encnoise")

    params = _merged_params(encoder, net)
    opt = Adam(params, lr=config.lr)
    lam = config.resolved_lambda()
    history = []

    for it in range(1, config.iterations + 1):
        idx = order.integers(0, n, size=config.batch_size)
        x0 = images[idx]
        t = sde.sample_t(time_rng, config.batch_size)
        try:
            xt, eps, std = sde.perturb(x0, t, noise)
            scale = sde.input_scale(t).reshape(-1, 1, 1, 1)
            x_scaled = Tensor(xt * scale)
            temb = time_embedding(t, config.temb_dim)

            z = None
            reg = Tensor(0.0)
            enc_out = None
            if encoder is not None:
                sample_rng = enc_noise if config.mode == "vdrl" else None
                enc_out = encoder.encode(x0, t, sample_rng=sample_rng)
                z = enc_out["z"]
                reg = encoder.penalty(enc_out)

            eps_hat = net.forward(x_scaled, z, temb)
            diff = tt.sub(eps_hat, Tensor(eps))
            dsm = tt.mean(tt.sum_(tt.mul(diff, diff), axis=(1, 2, 3)))
            total = tt.add(dsm, tt.mul(reg, Tensor(lam)))

            tt.zero_grad(params)
            tt.backward(total)
            opt.step()
        except NonFiniteError as err:
            raise TrainingDiverged(it, err) from err

        history.append((it, dsm.item(), lam * reg.item(), total.item()))
        if progress is not None and (it % 200 == 0 or it == 1):
            progress(it, history[-1])

    return ReprResult(encoder, net, history, config, seed)


# --- flat-vector variant (sanity studies on analytic distributions) -------------


@dataclass
class VectorConfig:
    iterations: int = 2000
    batch_size: int = 1024
    lr: float = 3e-3
    width: int = 128
    temb_dim: int = 32
    sigma_min: float = 0.01
    sigma_max: float = 50.0
    t_floor: float = 1e-5

    def sde(self):
        return VESDE(self.sigma_min, self.sigma_max, self.t_floor)


def _eps_scale(sde, t):
    # For data of roughly unit scale the predictable part of eps has
    # magnitude ~ std/sqrt(1 + std^2); scaling the net output by it keeps
    # the regression target O(1) at every noise level instead of spanning
    # two orders of magnitude across t.
    std = sde.marginal_std(t)
    return std / np.sqrt(1.0 + std * std)


def train_vector_score(data, config, seed, progress=None):
    """Unconditioned noise-predictor on flat vectors (N, D)."""
    data = np.asarray(data, dtype=np.float64)
    n, dim = data.shape
    sde = config.sde()
    net = VectorScoreNet(seed_stream(seed, "init", "scorenet"),
                         dim=dim, width=config.width, temb_dim=config.temb_dim)
    order = seed_stream(seed, "order")
    time_rng = seed_stream(seed, "time")
    noise = seed_stream(seed, "noise")
    opt = Adam(net.params, lr=config.lr)
    history = []
    for it in range(1, config.iterations + 1):
        # cosine decay to zero; the late small steps matter for score
        # accuracy at mid noise levels
        opt.lr = config.lr * 0.5 * (1 + np.cos(np.pi * (it - 1) / config.iterations))
        idx = order.integers(0, n, size=config.batch_size)
        x0 = data[idx]
        t = sde.sample_t(time_rng, config.batch_size)
        try:
            xt, eps, std = sde.perturb(x0, t, noise)
            x_scaled = Tensor(xt * sde.input_scale(t)[:, None])
            raw = net.forward(x_scaled, time_embedding(t, config.temb_dim))
            eps_hat = tt.mul(raw, Tensor(_eps_scale(sde, t)[:, None]))
            diff = tt.sub(eps_hat, Tensor(eps))
            loss = tt.mean(tt.sum_(tt.mul(diff, diff), axis=1))
            tt.zero_grad(net.params)
            tt.backward(loss)
            opt.step()
        except NonFiniteError as err:
            raise TrainingDiverged(it, err) from err
        history.append((it, loss.item(), 0.0, loss.item()))
        if progress is not None and it % 500 == 0:
            progress(it, history[-1])
    return net, history


def vector_score(net, sde, x, t):
    """Model score -eps_hat/std at times t (shape (B,)), as a numpy array."""
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    with tt.no_grad():
        raw = net.forward(Tensor(x * sde.input_scale(t)[:, None]),
                          time_embedding(t, net.temb_dim))
    return -(raw.data * _eps_scale(sde, t)[:, None]) / sde.marginal_std(t)[:, None]
