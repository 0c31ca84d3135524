"""Downstream classifiers over trajectory codes, and their training loop.

Three families per task:
  * "mlp": one independent single-hidden-layer net per grid time; the
    strongest single-time read-out is the baseline trajectory methods
    must beat.
  * "gru": a recurrent pass over the code sequence.
  * "attn": multi-head attention where a learned query attends over the
    trajectory tokens; keys and values are the tokens only, so each
    attention map is a distribution over the k+1 grid times.

Tokens for the sequence heads are the per-time codes with a small
sinusoidal embedding of the grid time appended; passing token_time_dim=0
removes order information entirely, making the attention head permutation
equivariant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tt
from .models import Model, _glorot, _he, linear, time_embedding
from .optim import Adam
from .rng import seed_stream
from .sde import grid_times
from .tensor import Tensor


# --- feature preparation ------------------------------------------------------


def standardize_fit(codes):
    """Per-(grid time, dimension) mean/std over the sample axis.

    codes: (N, T, c).  Returns (mean, std) with std floored at 1e-6; an
    affine per-coordinate map, so it changes no information content.
    """
    codes = np.asarray(codes)
    mean = codes.mean(axis=0)
    std = np.maximum(codes.std(axis=0), 1e-6)
    return mean, std


def standardize_apply(codes, stats):
    mean, std = stats
    return (np.asarray(codes) - mean) / std


def build_tokens(codes, token_time_dim=8):
    """Append a small grid-time embedding to each per-time code."""
    codes = np.asarray(codes)
    if token_time_dim == 0:
        return codes.copy()
    times = grid_times(codes.shape[1] - 1)
    emb = time_embedding(times, token_time_dim).data        # (T, d)
    tiled = np.broadcast_to(emb, (codes.shape[0],) + emb.shape)
    return np.concatenate([codes, tiled], axis=2)


def split_train_val(n, val_frac, seed):
    """Deterministic shuffled split; returns (train_idx, val_idx)."""
    perm = seed_stream(seed, "split").permutation(n)
    n_val = max(1, int(round(n * val_frac)))
    return perm[n_val:], perm[:n_val]


def cross_entropy(logits, labels):
    """Mean negative log-likelihood; labels broadcast against leading dims."""
    logp = tt.log_softmax(logits, axis=-1)
    idx = np.broadcast_to(np.asarray(labels), logp.shape[:-1])
    return tt.neg(tt.mean(tt.take_along_last(logp, idx)))


# --- head models ---------------------------------------------------------------


class PerTimeMLP(Model):
    """Independent 1-hidden-layer classifiers, one per grid time, trained
    jointly via batched matmuls over the time axis."""

    kind = "mlp"

    def __init__(self, rng, n_times, in_dim, n_classes, hidden=512, drop=0.25):
        super().__init__()
        self.n_times, self.in_dim, self.n_classes = n_times, in_dim, n_classes
        self.drop = drop
        self.param("w1", _he(rng, in_dim, (n_times, in_dim, hidden)))
        self.param("b1", np.zeros((n_times, 1, hidden)))
        self.param("w2", _glorot(rng, hidden, n_classes, (n_times, hidden, n_classes)))
        self.param("b2", np.zeros((n_times, 1, n_classes)))

    def forward(self, codes, training=False, rng=None):
        """codes (B, T, in_dim) -> logits (T, B, n_classes)."""
        x = codes if isinstance(codes, Tensor) else Tensor(codes)
        x = tt.transpose(x, (1, 0, 2))
        h = tt.relu(tt.add(tt.matmul(x, self.params["w1"]), self.params["b1"]))
        h = tt.dropout(h, self.drop, rng, training)
        return tt.add(tt.matmul(h, self.params["w2"]), self.params["b2"])

    def loss(self, codes, labels, training=False, rng=None):
        return cross_entropy(self.forward(codes, training, rng), labels)

    def predict(self, codes):
        """(T, B) predicted classes, one row per grid time."""
        with tt.no_grad():
            return self.forward(codes).data.argmax(axis=-1)


class GRUHead(Model):
    """Single-layer recurrent head over the token sequence."""

    kind = "gru"

    def __init__(self, rng, in_dim, n_classes, hidden=256, drop=0.25):
        super().__init__()
        self.in_dim, self.n_classes, self.hidden = in_dim, n_classes, hidden
        self.drop = drop
        h = hidden
        self.param("wi", _glorot(rng, in_dim, 3 * h, (in_dim, 3 * h)))
        self.param("wh", _glorot(rng, h, 3 * h, (h, 3 * h)))
        self.param("bi", np.zeros(3 * h))
        self.param("bh", np.zeros(3 * h))
        self.param("wout", _glorot(rng, h, n_classes, (h, n_classes)))
        self.param("bout", np.zeros(n_classes))

    def forward(self, tokens, training=False, rng=None):
        x = tokens if isinstance(tokens, Tensor) else Tensor(tokens)
        batch, n_times, _ = x.shape
        p = self.params
        hdim = self.hidden
        h = Tensor(np.zeros((batch, hdim)))
        for i in range(n_times):
            gx = linear(x[:, i, :], p["wi"], p["bi"])
            gh = linear(h, p["wh"], p["bh"])
            r = tt.sigmoid(tt.add(gx[:, :hdim], gh[:, :hdim]))
            u = tt.sigmoid(tt.add(gx[:, hdim:2 * hdim], gh[:, hdim:2 * hdim]))
            n = tt.tanh(tt.add(gx[:, 2 * hdim:], tt.mul(r, gh[:, 2 * hdim:])))
            h = tt.add(tt.mul(tt.sub(Tensor(1.0), u), n), tt.mul(u, h))
        h = tt.dropout(h, self.drop, rng, training)
        return linear(h, p["wout"], p["bout"])

    def loss(self, tokens, labels, training=False, rng=None):
        return cross_entropy(self.forward(tokens, training, rng), labels)

    def predict(self, tokens):
        with tt.no_grad():
            return self.forward(tokens).data.argmax(axis=-1)


class AttentionHead(Model):
    """A learned query cross-attends over the trajectory tokens.

    n_layers refinement steps share one set of weights.  Attention maps
    normalize over the k+1 token positions, so each head's map is a
    relevance distribution over grid times; profiles are read from a
    single-layer pass.
    """

    kind = "attn"

    def __init__(self, rng, in_dim, n_classes, model_dim=128, n_heads=4,
                 n_layers=2, drop=0.25):
        super().__init__()
        if model_dim % n_heads:
            raise ValueError(f"model_dim {model_dim} not divisible by n_heads {n_heads}")
        self.in_dim, self.n_classes = in_dim, n_classes
        self.model_dim, self.n_heads, self.n_layers = model_dim, n_heads, n_layers
        self.drop = drop
        m = model_dim
        self.param("w_in", _glorot(rng, in_dim, m, (in_dim, m)))
        self.param("b_in", np.zeros(m))
        self.param("q0", rng.standard_normal(m) * 0.1)
        for nm in ("wq", "wk", "wv", "wo"):
            self.param(nm, _glorot(rng, m, m, (m, m)))
        self.param("ff1", _he(rng, m, (m, 2 * m)))
        self.param("ff1_b", np.zeros(2 * m))
        self.param("ff2", _glorot(rng, 2 * m, m, (2 * m, m)))
        self.param("ff2_b", np.zeros(m))
        self.param("cls_w", _glorot(rng, m, n_classes, (m, n_classes)))
        self.param("cls_b", np.zeros(n_classes))

    def forward(self, tokens, training=False, rng=None, n_layers=None):
        """Returns (logits, first_attention) with attention (B, heads, T)."""
        x = tokens if isinstance(tokens, Tensor) else Tensor(tokens)
        batch, n_times, _ = x.shape
        p = self.params
        m, nh = self.model_dim, self.n_heads
        dk = m // nh
        layers = self.n_layers if n_layers is None else n_layers

        tok = linear(x, p["w_in"], p["b_in"])                    # (B, T, m)
        kmat = tt.transpose(tt.reshape(tt.matmul(tok, p["wk"]),
                                       (batch, n_times, nh, dk)), (0, 2, 1, 3))
        vmat = tt.transpose(tt.reshape(tt.matmul(tok, p["wv"]),
                                       (batch, n_times, nh, dk)), (0, 2, 1, 3))
        q = tt.broadcast_to(tt.reshape(p["q0"], (1, m)), (batch, m))
        first_attn = None
        for _ in range(layers):
            qh = tt.transpose(tt.reshape(tt.matmul(q, p["wq"]),
                                         (batch, 1, nh, dk)), (0, 2, 1, 3))
            scores = tt.mul(tt.matmul(qh, tt.transpose(kmat, (0, 1, 3, 2))),
                            Tensor(1.0 / np.sqrt(dk)))          # (B, nh, 1, T)
            attn = tt.softmax(scores, axis=-1)
            if first_attn is None:
                first_attn = tt.reshape(attn, (batch, nh, n_times))
            ctx = tt.reshape(tt.transpose(tt.matmul(attn, vmat), (0, 2, 1, 3)),
                             (batch, m))
            q = tt.layer_norm(tt.add(q, tt.dropout(linear(ctx, p["wo"]), self.drop, rng, training)))
            ff = linear(tt.relu(linear(q, p["ff1"], p["ff1_b"])), p["ff2"], p["ff2_b"])
            q = tt.layer_norm(tt.add(q, tt.dropout(ff, self.drop, rng, training)))
        return linear(q, p["cls_w"], p["cls_b"]), first_attn

    def loss(self, tokens, labels, training=False, rng=None):
        logits, _ = self.forward(tokens, training, rng)
        return cross_entropy(logits, labels)

    def predict(self, tokens):
        with tt.no_grad():
            logits, _ = self.forward(tokens)
        return logits.data.argmax(axis=-1)

    def attention_profile(self, tokens, batch=512):
        """Head- and sample-averaged single-layer attention over grid times."""
        tokens = np.asarray(tokens)
        total = np.zeros(tokens.shape[1])
        with tt.no_grad():
            for lo in range(0, tokens.shape[0], batch):
                _, attn = self.forward(tokens[lo:lo + batch], n_layers=1)
                total += attn.data.mean(axis=1).sum(axis=0)
        return total / total.sum()


# --- training ------------------------------------------------------------------

# the six-point learning-rate ladder used for model selection
DEFAULT_LR_GRID = (1e-3, 7.5e-4, 5e-4, 2.5e-4, 1e-4, 5e-5)


@dataclass
class HeadConfig:
    kind: str = "attn"                  # "mlp" | "gru" | "attn"
    epochs: int = 20
    batch_size: int = 128
    lr_grid: tuple = DEFAULT_LR_GRID
    dropout: float = 0.25
    val_frac: float = 0.1
    mlp_hidden: int = 512
    gru_hidden: int = 256
    attn_dim: int = 128
    attn_heads: int = 4
    attn_layers: int = 2
    token_time_dim: int = 8


@dataclass
class HeadResult:
    model: object
    config: HeadConfig
    task: str
    best_lr: float
    val_acc: float                       # best-lr validation accuracy
    test_acc: float | None = None
    per_lr: dict = field(default_factory=dict)      # lr -> val accuracy
    stats: tuple | None = None                      # standardization (mean, std)
    # mlp only: per grid time, accuracy of the best lr for that time
    per_time_val: np.ndarray | None = None
    per_time_lr: np.ndarray | None = None
    per_time_test: np.ndarray | None = None


def _make_head(config, rng, in_dim, n_classes, n_times):
    if config.kind == "mlp":
        return PerTimeMLP(rng, n_times, in_dim, n_classes,
                          hidden=config.mlp_hidden, drop=config.dropout)
    if config.kind == "gru":
        return GRUHead(rng, in_dim, n_classes,
                       hidden=config.gru_hidden, drop=config.dropout)
    if config.kind == "attn":
        return AttentionHead(rng, in_dim, n_classes, model_dim=config.attn_dim,
                             n_heads=config.attn_heads, n_layers=config.attn_layers,
                             drop=config.dropout)
    raise ValueError(f"unknown head kind '{config.kind}'")


def _inputs_for(config, codes):
    if config.kind == "mlp":
        return np.asarray(codes)
    return build_tokens(codes, config.token_time_dim)


def accuracy(model, inputs, labels, batch=1024):
    """Mean top-1 accuracy; for the per-time MLP, an array over grid times."""
    labels = np.asarray(labels)
    if isinstance(model, PerTimeMLP):
        correct = np.zeros(model.n_times)
        for lo in range(0, len(labels), batch):
            pred = model.predict(inputs[lo:lo + batch])
            correct += (pred == labels[lo:lo + batch]).sum(axis=1)
        return correct / len(labels)
    hits = 0
    for lo in range(0, len(labels), batch):
        hits += int((model.predict(inputs[lo:lo + batch]) == labels[lo:lo + batch]).sum())
    return hits / len(labels)


def _fit_one(config, inputs, labels, tr_idx, lr, seed, tag, n_classes):
    n_times = inputs.shape[1]
    model = _make_head(config, seed_stream(seed, "init", config.kind, tag),
                       inputs.shape[2], n_classes, n_times)
    opt = Adam(model.params, lr=lr)
    order = seed_stream(seed, "order", config.kind, tag)
    drop_rng = seed_stream(seed, "dropout", config.kind, tag)
    steps = max(1, len(tr_idx) // config.batch_size)
    for _ in range(config.epochs):
        perm = order.permutation(len(tr_idx))
        for s in range(steps):
            b = tr_idx[perm[s * config.batch_size:(s + 1) * config.batch_size]]
            loss = model.loss(inputs[b], labels[b], training=True, rng=drop_rng)
            tt.zero_grad(model.params)
            tt.backward(loss)
            opt.step()
    return model


def train_head(codes, labels, config, seed, task="task", n_classes=None,
               test_codes=None, test_labels=None):
    """Select a learning rate on a validation split, return the best head.

    codes: (N, T, c) raw (unstandardized) trajectory codes; per-(time, dim)
    standardization is fit on the train split here.  For the per-time MLP
    the selection happens per grid time; `model` is then the full grid of
    nets trained at the overall-best lr, with per_time_val/per_time_lr
    recording the per-time maxima across the lr ladder.
    """
    labels = np.asarray(labels)
    if n_classes is None:
        n_classes = int(labels.max()) + 1
    tr_idx, va_idx = split_train_val(len(labels), config.val_frac, seed)
    stats = standardize_fit(np.asarray(codes)[tr_idx])
    inputs = _inputs_for(config, standardize_apply(codes, stats))

    per_lr = {}
    best = None
    n_times = inputs.shape[1]
    per_time_best = np.zeros(n_times)
    per_time_pick = np.zeros(n_times, dtype=np.intp)
    mlp_models = []
    for li, lr in enumerate(config.lr_grid):
        model = _fit_one(config, inputs, labels, tr_idx, lr, seed, li, n_classes)
        acc = accuracy(model, inputs[va_idx], labels[va_idx])
        if isinstance(model, PerTimeMLP):
            mlp_models.append(model)
            better = acc > per_time_best
            per_time_best[better] = acc[better]
            per_time_pick[better] = li
            scalar = float(acc.max())
        else:
            scalar = float(acc)
        per_lr[lr] = scalar
        if best is None or scalar > best[0]:
            best = (scalar, lr, model)

    val_acc, best_lr, model = best
    result = HeadResult(model=model, config=config, task=task, best_lr=best_lr,
                        val_acc=val_acc, per_lr=per_lr, stats=stats)
    if config.kind == "mlp":
        result.per_time_val = per_time_best
        result.per_time_lr = np.asarray(config.lr_grid)[per_time_pick]
    if test_codes is not None:
        test_inputs = _inputs_for(config, standardize_apply(test_codes, stats))
        if config.kind == "mlp":
            # each grid time gets the net trained at its own best lr
            per_time = np.zeros(n_times)
            for li in np.unique(per_time_pick):
                acc = accuracy(mlp_models[li], test_inputs, np.asarray(test_labels))
                sel = per_time_pick == li
                per_time[sel] = acc[sel]
            result.per_time_test = per_time
            result.test_acc = float(per_time.max())
        else:
            result.test_acc = float(accuracy(model, test_inputs, np.asarray(test_labels)))
    return result
