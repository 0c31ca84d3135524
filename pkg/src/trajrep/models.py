"""Encoders and denoising nets.

The encoder maps (clean input, noise time t) to a latent code; the score
nets map (noised input, optional code, t) to a predicted standard-normal
noise vector eps_hat.  The score itself is -eps_hat / std(t), so the nets
never see the exploding magnitudes of the noising process directly:
callers feed x_t pre-scaled by VESDE.input_scale(t).

All parameters are float64 Tensors registered in a name -> Tensor dict;
construction consumes the init generator in a fixed order, so one seed
fixes every weight.
"""

from __future__ import annotations

import numpy as np

from . import tensor as tt
from .tensor import Tensor


def time_embedding(t, dim, max_freq=1000.0):
    """Sinusoidal features of t (shape (B,)) -> constant Tensor (B, dim).

    Frequencies run geometrically from 1 to max_freq; with the base
    frequency at 1 rad the (sin, cos) pair is injective on [0, 1], so
    distinct times always get distinct embeddings.  dim must be even and
    at least 4.
    """
    if dim % 2 or dim < 4:
        raise ValueError(f"embedding dim must be even and >= 4, got {dim}")
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = max_freq ** (np.arange(half) / (half - 1))
    ang = t[:, None] * freqs[None, :]
    return Tensor(np.concatenate([np.sin(ang), np.cos(ang)], axis=1))


def coord_channels(h, w):
    """Two constant channels with x and y coordinates in [-1, 1]."""
    ys = np.linspace(-1.0, 1.0, h)
    xs = np.linspace(-1.0, 1.0, w)
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([gy, gx])


def _he(rng, fan_in, shape):
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


def _glorot(rng, fan_in, fan_out, shape):
    return rng.standard_normal(shape) * np.sqrt(2.0 / (fan_in + fan_out))


class Model:
    """Base: a flat name -> Tensor parameter registry."""

    def __init__(self):
        self.params = {}

    def param(self, name, array):
        if name in self.params:
            raise ValueError(f"duplicate parameter name '{name}'")
        p = Tensor(np.asarray(array, dtype=np.float64), requires_grad=True)
        self.params[name] = p
        return p

    def n_params(self):
        return sum(p.size for p in self.params.values())


def linear(x, w, b=None):
    out = tt.matmul(x, w)
    return tt.add(out, b) if b is not None else out


def _film(h, temb, w, b, channels):
    """Per-channel scale/shift of h (B,C,H,W) from the time embedding."""
    sh = linear(temb, w, b)                       # (B, 2C)
    batch = sh.shape[0]
    scale = tt.reshape(sh[:, :channels], (batch, channels, 1, 1))
    shift = tt.reshape(sh[:, channels:], (batch, channels, 1, 1))
    return tt.add(tt.mul(h, tt.add(scale, Tensor(1.0))), shift)


class TrajectoryEncoder(Model):
    """Conv encoder E(x_0, t) -> latent code.

    mode "drl": a deterministic code, regularized toward sparsity with an
    L1 penalty.  mode "vdrl": a Gaussian posterior (mu, logvar) with a KL
    penalty toward N(0, I); training samples via the reparameterization
    trick, read-out uses the mean.

    The conv trunk sees only the image; t joins at the fc stage.  That
    keeps the trunk reusable across read-out times, so extracting a code
    trajectory runs the convs once per image.
    """

    MODES = ("drl", "vdrl")

    def __init__(self, rng, mode="drl", latent_dim=128, width=16, temb_dim=64,
                 fc_hidden=256, in_ch=3, canvas=16):
        super().__init__()
        if mode not in self.MODES:
            raise ValueError(f"mode must be one of {self.MODES}, got '{mode}'")
        self.mode = mode
        self.latent_dim = int(latent_dim)
        self.width = int(width)
        self.temb_dim = int(temb_dim)
        self.fc_hidden = int(fc_hidden)
        self.in_ch = int(in_ch)
        self.canvas = int(canvas)
        self._coords = coord_channels(canvas, canvas)

        w, c = self.width, self.latent_dim
        cin = in_ch + 2                              # data + coordinate channels
        self.param("conv0_w", _he(rng, cin * 9, (w, cin, 3, 3)))
        self.param("conv0_b", np.zeros((w, 1, 1)))
        self.param("conv1_w", _he(rng, w * 9, (2 * w, w, 3, 3)))
        self.param("conv1_b", np.zeros((2 * w, 1, 1)))
        self.param("conv2_w", _he(rng, 2 * w * 9, (4 * w, 2 * w, 3, 3)))
        self.param("conv2_b", np.zeros((4 * w, 1, 1)))
        side = canvas // 4
        self._trunk_dim = 4 * w * side * side
        flat = self._trunk_dim + temb_dim
        self.param("fc1_w", _he(rng, flat, (flat, self.fc_hidden)))
        self.param("fc1_b", np.zeros(self.fc_hidden))
        out_dim = c if mode == "drl" else 2 * c
        self.param("fc2_w", _glorot(rng, self.fc_hidden, out_dim, (self.fc_hidden, out_dim)))
        fc2_b = np.zeros(out_dim)
        if mode == "vdrl":
            fc2_b[c:] = -2.0                         # start with small posterior std
        self.param("fc2_b", fc2_b)

    def _trunk(self, x0):
        x0 = x0 if isinstance(x0, Tensor) else Tensor(x0)
        batch = x0.shape[0]
        p = self.params
        coords = Tensor(np.broadcast_to(self._coords, (batch,) + self._coords.shape))
        h = tt.concat([x0, coords], axis=1)
        h = tt.relu(tt.add(tt.conv2d(h, p["conv0_w"], padding=1), p["conv0_b"]))
        h = tt.relu(tt.add(tt.conv2d(h, p["conv1_w"], stride=2, padding=1), p["conv1_b"]))
        h = tt.relu(tt.add(tt.conv2d(h, p["conv2_w"], stride=2, padding=1), p["conv2_b"]))
        return tt.reshape(h, (batch, self._trunk_dim))

    def _head(self, trunk, t, sample_rng):
        p = self.params
        temb = time_embedding(t, self.temb_dim)
        h = tt.concat([trunk, temb], axis=1)
        h = tt.relu(linear(h, p["fc1_w"], p["fc1_b"]))
        out = linear(h, p["fc2_w"], p["fc2_b"])
        if self.mode == "drl":
            return {"z": out}
        c = self.latent_dim
        mu, logvar = out[:, :c], out[:, c:]
        if sample_rng is not None:
            eps = Tensor(sample_rng.standard_normal((mu.shape[0], c)))
            z = tt.add(mu, tt.mul(tt.exp(tt.mul(logvar, Tensor(0.5))), eps))
        else:
            z = mu
        return {"z": z, "mu": mu, "logvar": logvar}

    def encode(self, x0, t, sample_rng=None):
        """Returns {"z": code} plus {"mu","logvar"} in vdrl mode.

        x0: array or Tensor (B, in_ch, H, W); t: array (B,).  In vdrl mode
        z is a reparameterized sample when sample_rng is given, otherwise
        the posterior mean.
        """
        return self._head(self._trunk(x0), t, sample_rng)

    def penalty(self, enc_out):
        """Regularizer: L1 on the code (drl) or KL to N(0, I) (vdrl).

        Mean over the batch of the per-sample sum over latent dims.
        """
        if self.mode == "drl":
            return tt.mean(tt.sum_(tt.abs_(enc_out["z"]), axis=1))
        mu, logvar = enc_out["mu"], enc_out["logvar"]
        per_dim = tt.sub(tt.add(tt.mul(mu, mu), tt.exp(logvar)),
                         tt.add(logvar, Tensor(1.0)))
        return tt.mul(tt.mean(tt.sum_(per_dim, axis=1)), Tensor(0.5))

    def read_codes(self, x0, times, chunk=512):
        """Deterministic codes on a time grid, no graph: (B, len(times), c).

        vdrl uses the posterior mean.  The conv trunk runs once per image
        chunk; only the fc head repeats across grid times.
        """
        x0 = np.asarray(x0, dtype=np.float64)
        n = x0.shape[0]
        key = "mu" if self.mode == "vdrl" else "z"
        out = np.empty((n, len(times), self.latent_dim))
        with tt.no_grad():
            for lo in range(0, n, chunk):
                hi = min(lo + chunk, n)
                trunk = self._trunk(x0[lo:hi])
                for i, ti in enumerate(times):
                    enc = self._head(trunk, np.full(hi - lo, float(ti)), None)
                    out[lo:hi, i, :] = enc[key].data
        return out


class ImageScoreNet(Model):
    """Conv noise-predictor for image-shaped data.

    With latent_dim > 0 the code is broadcast over the canvas and joined
    to the input as extra channels (a 1x1 mixing layer keeps that cheap);
    latent_dim=0 builds the unconditioned variant used as the ablation
    baseline.

    Two pathways: a local 3x3 branch for pixel-scale denoising, and a
    global-context branch (two stride-2 convs, spatial average, a
    t-modulated vector added back over the canvas).  The context branch
    gives every output pixel a full-canvas receptive field, so scene-level
    attributes that survive averaging are read from the noised input
    itself at moderate noise instead of leaning on the code for them.
    """

    def __init__(self, rng, latent_dim=128, width=40, temb_dim=64, in_ch=3, canvas=16):
        super().__init__()
        self.latent_dim = int(latent_dim)
        self.width = int(width)
        self.temb_dim = int(temb_dim)
        self.in_ch = int(in_ch)
        self.canvas = int(canvas)
        self._coords = coord_channels(canvas, canvas)

        w = self.width
        cin = in_ch + 2 + self.latent_dim
        mix = _he(rng, cin, (w, cin, 1, 1))
        if self.latent_dim:
            # damp the code channels at init so early training tracks the
            # noised input; the encoder path grows as it becomes useful
            mix[:, in_ch + 2:] *= 0.3
        self.param("mix_w", mix)
        self.param("mix_b", np.zeros((w, 1, 1)))
        self.param("conv1_w", _he(rng, w * 9, (w, w, 3, 3)))
        self.param("conv1_b", np.zeros((w, 1, 1)))
        self.param("film1_w", _glorot(rng, temb_dim, 2 * w, (temb_dim, 2 * w)))
        self.param("film1_b", np.zeros(2 * w))
        self.param("down1_w", _he(rng, w * 9, (w, w, 3, 3)))
        self.param("down1_b", np.zeros((w, 1, 1)))
        self.param("down2_w", _he(rng, w * 9, (w, w, 3, 3)))
        self.param("down2_b", np.zeros((w, 1, 1)))
        self.param("ctx_w", _glorot(rng, w, w, (w, w)))
        self.param("ctx_b", np.zeros(w))
        self.param("film2_w", _glorot(rng, temb_dim, 2 * w, (temb_dim, 2 * w)))
        self.param("film2_b", np.zeros(2 * w))
        # zero-init output: the net starts as eps_hat = 0, the natural baseline
        self.param("out_w", np.zeros((in_ch, w, 1, 1)))
        self.param("out_b", np.zeros((in_ch, 1, 1)))

    def forward(self, x_scaled, z, temb):
        """x_scaled (B,C,H,W) pre-scaled by input_scale(t); z (B,latent) or None."""
        batch = x_scaled.shape[0]
        p = self.params
        coords = Tensor(np.broadcast_to(self._coords, (batch,) + self._coords.shape))
        parts = [x_scaled if isinstance(x_scaled, Tensor) else Tensor(x_scaled), coords]
        if self.latent_dim:
            if z is None:
                raise ValueError("conditioned net called without a code")
            zmap = tt.broadcast_to(tt.reshape(z, (batch, self.latent_dim, 1, 1)),
                                   (batch, self.latent_dim, self.canvas, self.canvas))
            parts.append(zmap)
        h = tt.relu(tt.add(tt.conv2d(tt.concat(parts, axis=1), p["mix_w"]), p["mix_b"]))
        u = tt.add(tt.conv2d(h, p["conv1_w"], padding=1), p["conv1_b"])
        u = tt.relu(_film(u, temb, p["film1_w"], p["film1_b"], self.width))
        g = tt.relu(tt.add(tt.conv2d(h, p["down1_w"], stride=2, padding=1), p["down1_b"]))
        g = tt.relu(tt.add(tt.conv2d(g, p["down2_w"], stride=2, padding=1), p["down2_b"]))
        gvec = tt.mul(tt.sum_(g, axis=(2, 3)), Tensor(1.0 / (g.shape[2] * g.shape[3])))
        ctx = tt.reshape(linear(gvec, p["ctx_w"], p["ctx_b"]), (batch, self.width, 1, 1))
        ctx = _film(ctx, temb, p["film2_w"], p["film2_b"], self.width)
        h = tt.add(tt.add(h, u),
                   tt.broadcast_to(ctx, (batch, self.width, self.canvas, self.canvas)))
        return tt.add(tt.conv2d(h, p["out_w"]), p["out_b"])


class VectorScoreNet(Model):
    """MLP noise-predictor for flat vector data (sanity studies, tests)."""

    def __init__(self, rng, dim, width=128, temb_dim=32):
        super().__init__()
        self.dim = int(dim)
        self.temb_dim = int(temb_dim)
        cin = dim + temb_dim
        self.param("w1", _he(rng, cin, (cin, width)))
        self.param("b1", np.zeros(width))
        self.param("w2", _he(rng, width, (width, width)))
        self.param("b2", np.zeros(width))
        self.param("w3", np.zeros((width, dim)))
        self.param("b3", np.zeros(dim))

    def forward(self, x_scaled, temb):
        x = x_scaled if isinstance(x_scaled, Tensor) else Tensor(x_scaled)
        p = self.params
        h = tt.concat([x, temb], axis=1)
        h = tt.relu(linear(h, p["w1"], p["b1"]))
        h = tt.relu(linear(h, p["w2"], p["b2"]))
        return linear(h, p["w3"], p["b3"])
