import numpy as np
import pytest

from csicodec.entropy import FactorizedPrior
from csicodec.network import (
    ArchConfig,
    Autoencoder,
    FeatureDecoder,
    FeatureEncoder,
    ResidualBlock,
    ResidualGroup,
    ShapeError,
    complex_to_planes,
    feature_decode,
    feature_encode,
    planes_to_complex,
)
from csicodec.training import RateDistortionModel
from gradcheck import numeric_grad, rel_error, sample_index

SMALL = ArchConfig(width=8)


def _trained_stats(model, n_c=32, n_t=16, seed=0):
    """One train-mode pass so batch norm has running statistics."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((4, 2, n_c, n_t)).astype(model.dtype)
    model.train()
    model.decoder(model.encoder(x))
    model.eval()


def _zero_convs(module):
    for name, p in module.named_parameters():
        if name.endswith("weight") or name.endswith("bias"):
            p.data[:] = 0


@pytest.mark.parametrize("n_c,n_t", [(256, 32), (64, 16), (48, 16), (16, 16)])
def test_shapes_and_element_count(n_c, n_t):
    model = Autoencoder(SMALL)
    _trained_stats(model)
    rng = np.random.default_rng(1)
    h = (rng.standard_normal((n_c, n_t)) + 1j * rng.standard_normal((n_c, n_t))).astype(np.complex64)
    m = feature_encode(h, model)
    assert m.shape == (256, n_c // 16, n_t // 16)
    assert m.size == n_c * n_t
    h_hat = feature_decode(m, model)
    assert h_hat.shape == h.shape and h_hat.dtype == np.complex64
    assert np.isfinite(h_hat.view(np.float32)).all()


def test_encode_is_deterministic_and_batch_consistent():
    model = Autoencoder(SMALL)
    _trained_stats(model)
    rng = np.random.default_rng(2)
    h = rng.standard_normal((3, 64, 16)) + 1j * rng.standard_normal((3, 64, 16))
    a, b = feature_encode(h, model), feature_encode(h, model)
    assert a.tobytes() == b.tobytes()
    np.testing.assert_allclose(feature_encode(h[1], model), a[1], rtol=1e-5, atol=1e-5)


def test_dimension_errors():
    model = Autoencoder(SMALL)
    with pytest.raises(ShapeError, match="n_c=60 needs 4 more"):
        feature_encode(np.zeros((60, 16), np.complex64), model)
    with pytest.raises(ShapeError, match="n_t=8 needs 8 more"):
        feature_encode(np.zeros((64, 8), np.complex64), model)
    with pytest.raises(ShapeError, match="256 channels"):
        feature_decode(np.zeros((128, 4, 1)), model)
    with pytest.raises(ValueError):
        ArchConfig(encoder_pools=(2, 2, 2))
    with pytest.raises(ValueError):
        ArchConfig(latent_channels=128)


def test_encoder_zero_weight_collapse():
    rng = np.random.default_rng(3)
    enc = FeatureEncoder(SMALL, rng)
    _zero_convs(enc)
    last = enc.net.layers[-2]
    last.bias.data[:] = rng.standard_normal(256).astype(np.float32)
    enc.train()
    m = enc(rng.standard_normal((2, 2, 64, 16)).astype(np.float32))
    np.testing.assert_array_equal(m, np.broadcast_to(last.bias.data.reshape(1, 256, 1, 1), m.shape))


def test_residual_group_zero_weights_is_identity():
    rng = np.random.default_rng(4)
    group = ResidualGroup(6, 3, rng)
    _zero_convs(group)
    group.train()
    x = rng.standard_normal((2, 6, 4, 2)).astype(np.float32)
    np.testing.assert_array_equal(group(x), x)
    block = ResidualBlock(6, 3, rng)
    _zero_convs(block)
    block.train()
    np.testing.assert_array_equal(block(x), x)


def test_residual_block_hand_computation():
    block = ResidualBlock(1, 1, np.random.default_rng(0), dtype=np.float64)
    conv1, bn1, act, conv2, bn2 = block.body.layers
    conv1.weight.data[:] = 2.0
    conv1.bias.data[:] = 0.5
    bn1.gamma.data[:] = 1.5
    bn1.beta.data[:] = -0.2
    act.slope.data[:] = 0.25
    conv2.weight.data[:] = -1.0
    conv2.bias.data[:] = 0.3
    bn2.gamma.data[:] = 0.7
    bn2.beta.data[:] = 0.1
    x = np.array([[[[1.0, -2.0], [0.5, 3.0]]]])

    def norm(v, g, b):
        return g * (v - v.mean()) / np.sqrt(v.var() + 1e-5) + b

    t = norm(2.0 * x + 0.5, 1.5, -0.2)
    t = np.where(t >= 0, t, 0.25 * t)
    expect = x + norm(-1.0 * t + 0.3, 0.7, 0.1)
    block.train()
    np.testing.assert_allclose(block(x), expect, rtol=1e-12)


def test_residual_channel_mismatch():
    block = ResidualBlock(4, 3, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        block(np.zeros((1, 3, 4, 4), np.float32))


def test_decoder_rejects_wrong_channels():
    dec = FeatureDecoder(SMALL, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        dec(np.zeros((1, 255, 1, 1), np.float32))


def test_planes_round_trip():
    h = np.array([[1 + 2j, -3.5j]], dtype=np.complex64)
    x = complex_to_planes(h)
    assert x.shape == (2, 1, 2)
    np.testing.assert_array_equal(x[0], [[1, 0]])
    np.testing.assert_array_equal(planes_to_complex(x), h)


def test_normalization_inverts():
    model = Autoencoder(SMALL)
    model.sigma_norm = 2.5
    h = np.array([[1 + 2j, -5j]], dtype=np.complex64)
    np.testing.assert_allclose(model.denormalize(model.normalize(h)), h, rtol=1e-6)


# -- end-to-end gradient ---------------------------------------------------------------


def _loss_setup(dtype):
    model = Autoencoder(ArchConfig(width=4), seed=5).astype(dtype)
    prior = FactorizedPrior(256).astype(dtype)
    rd = RateDistortionModel(model, prior, lam=1e5)
    rng = np.random.default_rng(6)
    h = rng.standard_normal((4, 16, 16)) + 1j * rng.standard_normal((4, 16, 16))
    return rd, complex_to_planes(h, np.float64)


def _analytic(rd, x, dtype):
    rd.train()
    rd.zero_grad()
    _, gx = rd.loss(x.astype(dtype), np.random.default_rng(7), backward=True, input_grad=True)
    return gx, {n: p.grad.copy() for n, p in _named(rd)}


def _named(rd):
    return list(rd.model.named_parameters("model.")) + list(rd.prior.named_parameters("prior."))


# Relative error is |a - n| / max(|a|, |n|, floor * G) with G the largest
# gradient magnitude in the check.  Entries whose true gradient vanishes (conv
# biases feeding batch norm, shifts cancelled by a later normalization of a
# 1x1 latent) are thereby held to an absolute error of tol * floor * G.
@pytest.mark.parametrize("dtype,tol,floor", [(np.float64, 1e-6, 1e-3), (np.float32, 1e-3, 1e-2)])
def test_end_to_end_gradients(dtype, tol, floor):
    rd, x = _loss_setup(dtype)
    gx, analytic = _analytic(rd, x, dtype)
    rd.model.astype(np.float64)
    rd.prior.astype(np.float64)
    rd.train()
    scale = max(float(np.abs(g).max()) for g in [gx, *analytic.values()])

    def loss():
        return rd.loss(x, np.random.default_rng(7)).total

    # central differences on the deep composite are truncation-limited at
    # step 1e-4 (error ~ step^2); 1e-5 keeps the float64 reference accurate
    step = 1e-5
    pick = np.random.default_rng(8)
    num = numeric_grad(loss, x, step, index=sample_index(x.size, 40, pick))
    err = rel_error(gx, num, floor * scale)
    assert err < tol, f"input: relative error {err:.2e}"
    for name, p in _named(rd):
        num = numeric_grad(loss, p.data, step, index=sample_index(p.data.size, 6, pick))
        err = rel_error(analytic[name], num, floor * scale)
        assert err < tol, f"{name}: relative error {err:.2e}"
