import numpy as np
import pytest

from trajrep import tensor as tt
from trajrep.models import (
    ImageScoreNet,
    TrajectoryEncoder,
    VectorScoreNet,
    coord_channels,
    time_embedding,
)
from trajrep.rng import seed_stream

from oracles import fd_gradient, max_rel_err


def small_encoder(mode="drl", seed=0):
    return TrajectoryEncoder(seed_stream(seed, "enc"), mode=mode,
                             latent_dim=6, width=4, temb_dim=8,
                             fc_hidden=16, canvas=8)


# --- time embedding ----------------------------------------------------------


def test_time_embedding_shape_and_range():
    e = time_embedding(np.linspace(0, 1, 7), 16)
    assert e.shape == (7, 16)
    assert np.all(np.abs(e.data) <= 1.0 + 1e-12)


def test_time_embedding_distinguishes_times():
    # every pair of grid times must map to a distinct embedding
    t = np.linspace(0, 1, 101)
    e = time_embedding(t, 8).data
    d = np.linalg.norm(e[:, None, :] - e[None, :, :], axis=-1)
    d[np.diag_indices(101)] = np.inf
    assert d.min() > 1e-4


@pytest.mark.parametrize("dim", [0, 3, 7])
def test_time_embedding_rejects_bad_dim(dim):
    with pytest.raises(ValueError):
        time_embedding(np.array([0.5]), dim)


def test_coord_channels_corners():
    c = coord_channels(16, 16)
    assert c.shape == (2, 16, 16)
    assert c[0, 0, 0] == -1.0 and c[0, -1, 0] == 1.0
    assert c[1, 0, 0] == -1.0 and c[1, 0, -1] == 1.0


# --- encoder -----------------------------------------------------------------


def test_encoder_output_shapes():
    enc = small_encoder()
    x = seed_stream(1, "x").random((3, 3, 8, 8))
    out = enc.encode(x, np.full(3, 0.4))
    assert out["z"].shape == (3, 6)
    assert "mu" not in out


def test_encoder_vdrl_outputs():
    enc = small_encoder(mode="vdrl")
    x = seed_stream(1, "x").random((3, 3, 8, 8))
    out = enc.encode(x, np.full(3, 0.4))
    assert set(out) == {"z", "mu", "logvar"}
    # no sampling rng given: read-out is the posterior mean
    assert np.array_equal(out["z"].data, out["mu"].data)
    out2 = enc.encode(x, np.full(3, 0.4), sample_rng=seed_stream(2, "eps"))
    assert not np.array_equal(out2["z"].data, out2["mu"].data)


def test_encoder_rejects_unknown_mode():
    with pytest.raises(ValueError):
        TrajectoryEncoder(seed_stream(0, "e"), mode="vae")


def test_encoder_depends_on_time():
    enc = small_encoder()
    x = seed_stream(1, "x").random((2, 3, 8, 8))
    a = enc.encode(x, np.full(2, 0.1))["z"].data
    b = enc.encode(x, np.full(2, 0.9))["z"].data
    assert not np.allclose(a, b)


def test_drl_penalty_matches_l1():
    enc = small_encoder()
    x = seed_stream(1, "x").random((4, 3, 8, 8))
    out = enc.encode(x, np.full(4, 0.3))
    want = np.abs(out["z"].data).sum(axis=1).mean()
    got = enc.penalty(out).data
    assert abs(got - want) < 1e-12


def test_vdrl_penalty_matches_gaussian_kl():
    enc = small_encoder(mode="vdrl")
    x = seed_stream(1, "x").random((4, 3, 8, 8))
    out = enc.encode(x, np.full(4, 0.3), sample_rng=seed_stream(0, "eps"))
    mu, lv = out["mu"].data, out["logvar"].data
    want = 0.5 * (mu**2 + np.exp(lv) - lv - 1.0).sum(axis=1).mean()
    assert abs(enc.penalty(out).data - want) < 1e-10


@pytest.mark.parametrize("mode", ["drl", "vdrl"])
def test_read_codes_matches_encode(mode):
    enc = small_encoder(mode=mode)
    x = seed_stream(1, "x").random((5, 3, 8, 8))
    times = [0.0, 0.5, 1.0]
    codes = enc.read_codes(x, times, chunk=2)
    assert codes.shape == (5, 3, 6)
    key = "mu" if mode == "vdrl" else "z"
    for i, t in enumerate(times):
        ref = enc.encode(x, np.full(5, t))[key].data
        # chunked GEMMs may round differently than one full-batch pass
        assert np.allclose(codes[:, i, :], ref, rtol=1e-12, atol=1e-12)


def test_encoder_init_deterministic():
    a, b = small_encoder(seed=7), small_encoder(seed=7)
    for k in a.params:
        assert np.array_equal(a.params[k].data, b.params[k].data)
    c = small_encoder(seed=8)
    assert not np.array_equal(a.params["conv0_w"].data, c.params["conv0_w"].data)


def test_param_registry():
    enc = small_encoder()
    assert len(enc.params) == len(set(enc.params))
    assert all(p.requires_grad for p in enc.params.values())
    assert enc.n_params() == sum(p.data.size for p in enc.params.values())
    with pytest.raises(ValueError):
        enc.param("conv0_w", np.zeros(3))   # duplicate name


def test_encoder_gradients_flow_to_all_params():
    enc = small_encoder()
    x = seed_stream(1, "x").random((2, 3, 8, 8))
    out = enc.encode(x, np.full(2, 0.5))
    loss = tt.add(tt.mean(tt.mul(out["z"], out["z"])), enc.penalty(out))
    tt.backward(loss)
    for name, p in enc.params.items():
        assert p.grad is not None and np.any(p.grad != 0), name


def test_encoder_fd_gradient_spot_check():
    """Finite differences through the whole conv stack on one weight slice."""
    enc = TrajectoryEncoder(seed_stream(3, "enc"), latent_dim=2, width=2,
                            temb_dim=4, fc_hidden=4, canvas=8)
    x = seed_stream(4, "x").random((2, 3, 8, 8))
    t = np.array([0.2, 0.8])

    def loss_value():
        z = enc.encode(x, t)["z"]
        return tt.sum_(tt.mul(z, z))

    loss = loss_value()
    tt.backward(loss)
    w = enc.params["conv0_w"]
    got = w.grad[0, :2, :, :]

    def f(block):
        with tt.no_grad():
            w.data[0, :2, :, :] = block
            return float(loss_value().data)

    fd = fd_gradient(f, w.data[0, :2, :, :].copy())
    assert max_rel_err(got, fd) < 1e-4


# --- score networks ----------------------------------------------------------


def as_tensor(a):
    return tt.Tensor(np.asarray(a, dtype=np.float64))


def test_image_score_net_shapes_and_zero_init():
    rng = seed_stream(0, "net")
    net = ImageScoreNet(rng, latent_dim=6, width=8, temb_dim=8, canvas=8)
    x = seed_stream(1, "x").random((3, 3, 8, 8))
    z = seed_stream(2, "z").random((3, 6))
    temb = time_embedding(np.full(3, 0.5), 8)
    out = net.forward(as_tensor(x), as_tensor(z), temb)
    assert out.shape == x.shape
    # final layer starts at zero so the initial prediction is exactly zero
    assert np.all(out.data == 0.0)


def test_image_score_net_uses_conditioning():
    rng = seed_stream(0, "net")
    net = ImageScoreNet(rng, latent_dim=6, width=8, temb_dim=8, canvas=8)
    # perturb the head off zero so conditioning can reach the output
    net.params["out_w"].data[:] = seed_stream(9, "w").random(
        net.params["out_w"].shape) * 0.1
    x = seed_stream(1, "x").random((2, 3, 8, 8))
    temb = time_embedding(np.full(2, 0.5), 8)
    za = np.zeros((2, 6))
    zb = np.ones((2, 6))
    a = net.forward(as_tensor(x), as_tensor(za), temb).data
    b = net.forward(as_tensor(x), as_tensor(zb), temb).data
    assert not np.allclose(a, b)


def test_image_score_net_unconditioned_variant():
    net = ImageScoreNet(seed_stream(0, "net"), latent_dim=0, width=8,
                        temb_dim=8, canvas=8)
    x = seed_stream(1, "x").random((2, 3, 8, 8))
    temb = time_embedding(np.full(2, 0.5), 8)
    out = net.forward(as_tensor(x), None, temb)
    assert out.shape == x.shape


def test_vector_score_net():
    net = VectorScoreNet(seed_stream(0, "net"), dim=4, width=16, temb_dim=8)
    x = seed_stream(1, "x").random((5, 4))
    temb = time_embedding(np.full(5, 0.3), 8)
    out = net.forward(as_tensor(x), temb)
    assert out.shape == (5, 4)
    assert np.all(out.data == 0.0)   # zero-init head

    loss = tt.sum_(tt.mul(out, out))
    tt.backward(loss)
    assert net.params["w1"].grad is not None
