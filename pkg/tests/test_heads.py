import numpy as np
import pytest

from trajrep import tensor as tt
from trajrep.heads import (
    AttentionHead,
    GRUHead,
    HeadConfig,
    PerTimeMLP,
    accuracy,
    build_tokens,
    cross_entropy,
    split_train_val,
    standardize_apply,
    standardize_fit,
    train_head,
)
from trajrep.rng import seed_stream


def test_standardize_roundtrip():
    codes = seed_stream(0, "c").normal(3.0, 2.0, (50, 4, 6))
    stats = standardize_fit(codes)
    out = standardize_apply(codes, stats)
    assert np.abs(out.mean(axis=0)).max() < 1e-12
    assert np.abs(out.std(axis=0) - 1.0).max() < 1e-12


def test_standardize_constant_dim_floors_std():
    codes = np.zeros((10, 2, 3))
    mean, std = standardize_fit(codes)
    assert np.all(std == 1e-6)
    assert np.all(np.isfinite(standardize_apply(codes, (mean, std))))


def test_build_tokens():
    codes = seed_stream(0, "c").random((5, 4, 7))
    tok = build_tokens(codes, token_time_dim=6)
    assert tok.shape == (5, 4, 13)
    assert np.array_equal(tok[:, :, :7], codes)
    # time block: constant over the batch, distinct across grid times
    tblock = tok[:, :, 7:]
    assert np.ptp(tblock, axis=0).max() == 0.0
    assert not np.array_equal(tblock[0, 0], tblock[0, 1])
    assert np.array_equal(build_tokens(codes, 0), codes)


def test_split_train_val():
    tr, va = split_train_val(100, 0.1, seed=4)
    assert len(va) == 10 and len(tr) == 90
    assert set(tr) | set(va) == set(range(100))
    tr2, va2 = split_train_val(100, 0.1, seed=4)
    assert np.array_equal(tr, tr2) and np.array_equal(va, va2)


def test_cross_entropy_matches_manual():
    rng = seed_stream(1, "ce")
    logits = rng.normal(size=(5, 4))
    labels = rng.integers(0, 4, 5)
    p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    want = -np.mean(np.log(p[np.arange(5), labels]))
    got = cross_entropy(tt.Tensor(logits), labels).data
    assert abs(got - want) < 1e-12


def test_cross_entropy_broadcasts_labels_over_leading_axes():
    rng = seed_stream(1, "ce")
    logits = rng.normal(size=(3, 5, 4))      # (T, B, C)
    labels = rng.integers(0, 4, 5)           # (B,)
    per_t = [cross_entropy(tt.Tensor(logits[t]), labels).data for t in range(3)]
    got = cross_entropy(tt.Tensor(logits), labels).data
    assert abs(got - np.mean(per_t)) < 1e-12


# --- model mechanics -----------------------------------------------------------


def test_per_time_mlp_isolation():
    """Weights of one grid time must not move another time's logits."""
    rng = seed_stream(0, "mlp")
    m = PerTimeMLP(rng, n_times=3, in_dim=5, n_classes=4, hidden=8)
    x = seed_stream(1, "x").random((6, 3, 5))
    with tt.no_grad():
        before = m.forward(x).data
    m.params["w1"].data[1] += 0.5
    with tt.no_grad():
        after = m.forward(x).data
    assert not np.allclose(before[1], after[1])
    assert np.array_equal(before[0], after[0])
    assert np.array_equal(before[2], after[2])


def test_gru_matches_numpy_reference():
    rng = seed_stream(0, "gru")
    m = GRUHead(rng, in_dim=3, n_classes=2, hidden=4, drop=0.0)
    x = seed_stream(1, "x").normal(size=(2, 5, 3))
    with tt.no_grad():
        got = m.forward(x).data

    def sig(a):
        return 1.0 / (1.0 + np.exp(-a))

    p = {k: v.data for k, v in m.params.items()}
    h = np.zeros((2, 4))
    for i in range(5):
        gx = x[:, i, :] @ p["wi"] + p["bi"]
        gh = h @ p["wh"] + p["bh"]
        r = sig(gx[:, :4] + gh[:, :4])
        u = sig(gx[:, 4:8] + gh[:, 4:8])
        n = np.tanh(gx[:, 8:] + r * gh[:, 8:])
        h = (1.0 - u) * n + u * h
    want = h @ p["wout"] + p["bout"]
    assert np.abs(got - want).max() < 1e-12


def test_attention_normalizes_over_times():
    m = AttentionHead(seed_stream(0, "a"), in_dim=6, n_classes=3,
                      model_dim=8, n_heads=2, n_layers=2, drop=0.0)
    x = seed_stream(1, "x").normal(size=(4, 7, 6))
    with tt.no_grad():
        logits, attn = m.forward(x)
    assert logits.shape == (4, 3)
    assert attn.shape == (4, 2, 7)
    assert np.abs(attn.data.sum(axis=-1) - 1.0).max() < 1e-9
    assert attn.data.min() >= 0.0


def test_attention_without_time_features_is_permutation_invariant():
    m = AttentionHead(seed_stream(0, "a"), in_dim=6, n_classes=3,
                      model_dim=8, n_heads=2, n_layers=2, drop=0.0)
    codes = seed_stream(1, "x").normal(size=(4, 7, 6))
    perm = seed_stream(2, "p").permutation(7)
    with tt.no_grad():
        a, attn_a = m.forward(codes)
        b, attn_b = m.forward(codes[:, perm, :])
    assert np.allclose(a.data, b.data, atol=1e-12)
    assert np.allclose(attn_a.data[:, :, perm], attn_b.data, atol=1e-12)


def test_time_features_tag_codes_with_their_grid_time():
    # pooling ignores token order, but reassigning codes to other grid
    # times must change the output once time features are attached
    m = AttentionHead(seed_stream(0, "a"), in_dim=10, n_classes=3,
                      model_dim=8, n_heads=2, n_layers=1, drop=0.0)
    codes = seed_stream(1, "x").normal(size=(4, 7, 6))
    perm = np.roll(np.arange(7), 1)
    with tt.no_grad():
        a, _ = m.forward(build_tokens(codes, 4))
        b, _ = m.forward(build_tokens(codes[:, perm, :], 4))
    assert not np.allclose(a.data, b.data)


def test_attention_profile_is_distribution():
    m = AttentionHead(seed_stream(0, "a"), in_dim=6, n_classes=3,
                      model_dim=8, n_heads=2, n_layers=2)
    tok = seed_stream(1, "x").normal(size=(30, 7, 6))
    prof = m.attention_profile(tok, batch=8)
    assert prof.shape == (7,)
    assert prof.min() >= 0.0
    assert abs(prof.sum() - 1.0) < 1e-9


def test_attention_rejects_bad_head_split():
    with pytest.raises(ValueError):
        AttentionHead(seed_stream(0, "a"), in_dim=4, n_classes=2,
                      model_dim=10, n_heads=4)


def test_attention_on_single_position():
    m = AttentionHead(seed_stream(0, "a"), in_dim=6, n_classes=3,
                      model_dim=8, n_heads=2)
    tok = seed_stream(1, "x").normal(size=(3, 1, 6))
    with tt.no_grad():
        _, attn = m.forward(tok)
    assert np.all(attn.data == 1.0)


def test_equal_keys_give_uniform_attention():
    m = AttentionHead(seed_stream(0, "a"), in_dim=6, n_classes=3,
                      model_dim=8, n_heads=2)
    m.params["wk"].data[:] = 0.0       # every position scores identically
    tok = seed_stream(1, "x").normal(size=(3, 7, 6))
    with tt.no_grad():
        _, attn = m.forward(tok)
    assert np.abs(attn.data - 1.0 / 7).max() < 1e-12


def test_gru_ignores_zero_padded_columns_with_zero_weights():
    rng = seed_stream(0, "gru")
    m = GRUHead(rng, in_dim=3, n_classes=2, hidden=4, drop=0.0)
    wide = GRUHead(seed_stream(9, "w"), in_dim=5, n_classes=2, hidden=4, drop=0.0)
    # copy the narrow weights into the first 3 input rows, zero the rest
    for k in m.params:
        wide.params[k].data[:] = m.params[k].data if k != "wi" else 0.0
    wide.params["wi"].data[:3] = m.params["wi"].data
    x = seed_stream(1, "x").normal(size=(2, 6, 3))
    xpad = np.concatenate([x, np.zeros((2, 6, 2))], axis=2)
    with tt.no_grad():
        a = m.forward(x).data
        b = wide.forward(xpad).data
    assert np.array_equal(a, b)


# --- training ------------------------------------------------------------------


def _toy_codes(n=600, seed=0):
    """Codes whose middle grid time linearly encodes the label."""
    rng = seed_stream(seed, "toy")
    codes = rng.normal(size=(n, 3, 6))
    labels = (codes[:, 1, 0] + 0.5 * codes[:, 1, 1] > 0).astype(np.int64)
    return codes, labels


SMALL = dict(epochs=30, batch_size=64, lr_grid=(1e-2, 3e-3), dropout=0.1,
             mlp_hidden=32, gru_hidden=12, attn_dim=16, attn_heads=2,
             token_time_dim=4)


@pytest.mark.parametrize("kind", ["mlp", "gru", "attn"])
def test_train_head_learns_separable_task(kind):
    codes, labels = _toy_codes()
    res = train_head(codes, labels, HeadConfig(kind=kind, **SMALL), seed=0)
    assert res.val_acc > 0.9, (kind, res.per_lr)
    assert res.best_lr in SMALL["lr_grid"]
    assert set(res.per_lr) == set(SMALL["lr_grid"])


def test_train_head_mlp_per_time_fields():
    codes, labels = _toy_codes()
    tcodes, tlabels = _toy_codes(seed=1)
    res = train_head(codes, labels, HeadConfig(kind="mlp", **SMALL), seed=0,
                     test_codes=tcodes, test_labels=tlabels)
    assert res.per_time_val.shape == (3,)
    assert all(lr in SMALL["lr_grid"] for lr in res.per_time_lr)
    # the label lives at grid time 1; that column must dominate
    assert res.per_time_val[1] == res.per_time_val.max()
    assert res.per_time_val[1] > 0.9
    assert res.per_time_test.shape == (3,)
    assert res.test_acc == res.per_time_test.max()
    assert res.per_time_test[1] > 0.85


def test_train_head_deterministic():
    codes, labels = _toy_codes()
    cfg = HeadConfig(kind="attn", **SMALL)
    a = train_head(codes, labels, cfg, seed=3)
    b = train_head(codes, labels, cfg, seed=3)
    assert a.val_acc == b.val_acc and a.best_lr == b.best_lr
    for k in a.model.params:
        assert np.array_equal(a.model.params[k].data, b.model.params[k].data)


def test_train_head_infers_class_count():
    codes, labels = _toy_codes()
    res = train_head(codes, labels, HeadConfig(kind="attn", **SMALL), seed=0)
    assert res.model.n_classes == 2


def test_accuracy_shapes():
    rng = seed_stream(0, "m")
    mlp = PerTimeMLP(rng, n_times=3, in_dim=5, n_classes=4, hidden=8)
    x = seed_stream(1, "x").random((9, 3, 5))
    y = seed_stream(2, "y").integers(0, 4, 9)
    acc = accuracy(mlp, x, y, batch=4)
    assert acc.shape == (3,)
    assert np.all((0 <= acc) & (acc <= 1))
    gru = GRUHead(rng, in_dim=5, n_classes=4, hidden=6)
    scalar = accuracy(gru, x, y, batch=4)
    assert isinstance(scalar, float) and 0 <= scalar <= 1
