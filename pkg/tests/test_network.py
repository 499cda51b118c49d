import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcfnet.grid import Grid, periodic_convolve
from mcfnet.network import (
    DRNet1,
    DRNet2,
    FormatError,
    init_identity_mlp,
    init_mlp,
    init_net,
    loss_and_gradient,
    loss_only,
    mlp_backward,
    mlp_eval,
    net_deserialize,
    net_serialize,
    param_count,
)
from mcfnet.phasefield import Ball, field_from_shape


def ref_mlp(p, x):
    """Scalar MLP written out layer by layer."""
    W1, b1 = p[0:8], p[8:16]
    W2, b2 = p[16:40].reshape(3, 8), p[40:43]
    W3, b3 = p[43:46], p[46]
    h1 = np.exp(-(np.multiply.outer(x, W1) + b1) ** 2)
    h2 = np.exp(-(h1 @ W2.T + b2) ** 2)
    return h2 @ W3 + b3


def ref_drnet1(net, u, g):
    return ref_mlp(net.reaction, periodic_convolve(u, net.kernel, g))


def ref_drnet2(net, u, g):
    a1, a2, a3, a4, a5 = net.mix
    u1 = periodic_convolve(ref_mlp(net.reaction(1), u), net.kernel1, g)
    z = a1 * ref_mlp(net.reaction(2), u1) + a2 * u + a3 * (u1 + ref_mlp(net.reaction(3), u1))
    return a4 * periodic_convolve(z, net.kernel2, g) + a5 * u


def test_parameter_counts():
    g = Grid(2, 64)
    rng = np.random.default_rng(0)
    assert param_count(init_net("s1", g, rng)) == 336
    assert param_count(init_net("s2", g, rng)) == 724
    assert DRNet1.structural_count(3) == 17**3 + 47
    assert DRNet2.structural_count(3) == 2 * 17**3 + 146


def test_wrong_parameter_length_rejected():
    with pytest.raises(ValueError):
        DRNet1(np.zeros(335))
    with pytest.raises(ValueError):
        DRNet1(np.zeros(336), kernel_size=16)


def test_mlp_matches_reference():
    rng = np.random.default_rng(1)
    p = rng.standard_normal(47)
    x = rng.uniform(-1, 2, 20000)
    np.testing.assert_allclose(mlp_eval(p, x), ref_mlp(p, x), rtol=1e-13, atol=1e-14)


def test_mlp_backward_matches_reference_derivative():
    rng = np.random.default_rng(2)
    p = rng.standard_normal(47)
    x = rng.uniform(-1, 2, 50)
    g_out = rng.standard_normal(50)
    _, g_in = mlp_backward(p, x, g_out)
    h = 1e-6
    fd = (ref_mlp(p, x + h) - ref_mlp(p, x - h)) / (2 * h)
    np.testing.assert_allclose(g_in, g_out * fd, rtol=1e-6, atol=1e-9)


def test_init_mlp_layout():
    p = init_mlp(np.random.default_rng(3))
    assert p.shape == (47,)
    assert np.all(p[8:16] == 0) and np.all(p[40:43] == 0) and p[46] == 0
    assert np.all(np.abs(p) <= 0.5)


@pytest.mark.parametrize("kind", ["s1", "s2"])
def test_forward_matches_reference(kind):
    g = Grid(2, 32)
    rng = np.random.default_rng(4)
    net = init_net(kind, g, rng)
    net = net.with_theta(net.theta + 0.05 * rng.standard_normal(net.theta.size))
    u = field_from_shape(g, Ball((0.5, 0.5), 0.25), "oriented")
    ref = ref_drnet1 if kind == "s1" else ref_drnet2
    np.testing.assert_allclose(net(u), ref(net, u, g), rtol=1e-12, atol=1e-13)


@pytest.mark.parametrize("kind", ["s1", "s2"])
def test_batched_forward_equals_per_sample(kind):
    g = Grid(2, 32)
    rng = np.random.default_rng(5)
    net = init_net(kind, g, rng)
    batch = rng.random((3,) + g.shape)
    out = net(batch)
    for b in range(3):
        np.testing.assert_allclose(out[b], net(batch[b]), rtol=1e-13, atol=1e-14)


def test_3d_forward_matches_reference():
    g = Grid(3, 20)
    rng = np.random.default_rng(6)
    net = init_net("s1", g, rng, kernel_size=5)
    u = rng.random(g.shape)
    np.testing.assert_allclose(net(u), ref_drnet1(net, u, g), rtol=1e-12, atol=1e-13)


def richardson_gradient(f, theta, h=1e-3):
    """Central differences at h and h/2 combined to fourth order."""
    out = np.empty_like(theta)
    for i in range(theta.size):
        def central(step):
            tp, tm = theta.copy(), theta.copy()
            tp[i] += step
            tm[i] -= step
            return (f(tp) - f(tm)) / (2 * step)
        out[i] = (4 * central(h / 2) - central(h)) / 3
    return out


def relative_errors(analytic, numeric):
    # coordinates with vanishing gradient are compared on the gradient's scale
    floor = 1e-6 * np.max(np.abs(analytic))
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def _gradient_problem(kind, seed=7, k=2):
    g = Grid(2, 32)
    rng = np.random.default_rng(seed)
    net = init_net(kind, g, rng)
    net = net.with_theta(net.theta + 0.02 * rng.standard_normal(net.theta.size))
    radii = [0.2, 0.3]
    inputs = np.stack([field_from_shape(g, Ball((0.5, 0.5), r), "oriented") for r in radii])
    targets = np.stack([[field_from_shape(g, Ball((0.5, 0.5), np.sqrt(r * r - 2 * (j + 1) * g.delta_t)), "oriented")
                         for j in range(k)] for r in radii])
    return g, net, inputs, targets


@pytest.mark.parametrize("kind", ["s1", "s2"])
def test_gradient_matches_finite_differences(kind):
    g, net, inputs, targets = _gradient_problem(kind)
    loss, grad = loss_and_gradient(net, inputs, targets, g.cell_volume)
    assert loss == pytest.approx(loss_only(net, inputs, targets, g.cell_volume), rel=1e-13)
    f = lambda th: loss_only(net.with_theta(th), inputs, targets, g.cell_volume)
    numeric = richardson_gradient(f, net.theta)
    err = relative_errors(grad, numeric)
    assert err.max() < 1e-6, f"worst coordinate {err.argmax()} rel err {err.max():.3e}"


def test_serialization_round_trip_bit_exact():
    g = Grid(2, 32)
    for kind in ("s1", "s2"):
        net = init_net(kind, g, np.random.default_rng(8))
        buf = net_serialize(net)
        assert len(buf) == 8 + 8 * param_count(net)
        again = net_deserialize(buf)
        assert type(again) is type(net)
        assert again.theta.tobytes() == net.theta.tobytes()
        assert net_serialize(again) == buf


def test_deserialize_errors():
    net = init_net("s1", Grid(2, 32), np.random.default_rng(9))
    buf = net_serialize(net)
    with pytest.raises(FormatError):
        net_deserialize(b"XXXX" + buf[4:])
    with pytest.raises(FormatError):
        net_deserialize(buf[:-8])
    with pytest.raises(FormatError):
        net_deserialize(buf + b"\0")
    with pytest.raises(FormatError):  # DRN1 magic with a DRNet2 count
        net_deserialize(b"DRN1" + struct.pack("<I", 724) + bytes(8 * 724))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), sx=st.integers(0, 31), sy=st.integers(0, 31),
       kind=st.sampled_from(["s1", "s2"]))
def test_networks_commute_with_translation(seed, sx, sy, kind):
    g = Grid(2, 32)
    rng = np.random.default_rng(seed)
    net = init_net(kind, g, rng)
    u = rng.random(g.shape)
    lhs = net(np.roll(u, (sx, sy), axis=(0, 1)))
    rhs = np.roll(net(u), (sx, sy), axis=(0, 1))
    assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_identity_mlp_init():
    p = init_identity_mlp(np.random.default_rng(3))
    x = np.linspace(-0.3, 1.05, 501)
    assert np.max(np.abs(mlp_eval(p, x) - x)) < 1e-2
    np.testing.assert_allclose(mlp_eval(p, x), ref_mlp(p, x), rtol=1e-12, atol=1e-12)


def test_drnet2_starts_near_identity():
    g = Grid(2, 32)
    net = init_net("s2", g, np.random.default_rng(4), kernel_size=5)
    assert net.kernel1.sum() == 1.0 and net.kernel1[2, 2] == 1.0
    u = field_from_shape(g, Ball((0.5, 0.5), 0.3), "oriented")
    # delta kernels, identity-like first reaction, silent second and third reactions
    np.testing.assert_allclose(net(u), mlp_eval(net.reaction(1), u), atol=1e-12)
    assert np.max(np.abs(net(u) - u)) < 1e-2
