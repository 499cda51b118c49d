"""Diffusion-reaction networks with hand-derived reverse-mode gradients.

A diffusion neuron is one learnable centered kernel applied by periodic
convolution; a reaction network is a pointwise 1 -> 8 -> 3 -> 1 MLP with
Gaussian activations ``g(x) = exp(-x^2)`` and a linear output layer.

Every net keeps all trainable parameters in one flat vector ``theta``.
Layouts (kernels flattened in C order, ``W2`` row-major 3 x 8)::

    ReactionMLP  [W1(8), b1(8), W2(24), b2(3), W3(3), b3(1)]          47
    DRNet1       [kernel(NK^d), R(47)]                                NK^d + 47
    DRNet2       [kernel1, kernel2, R1(47), R2(47), R3(47), mix(5)]   2 NK^d + 146

DRNet2 wiring, with ``D1, D2`` diffusions and ``R1, R2, R3`` reactions::

    U1  = D1(R1(u))
    Z   = a1 R2(U1) + a2 u + a3 (U1 + R3(U1))
    out = a4 D2(Z) + a5 u
"""
from __future__ import annotations

import struct

import numpy as np

from .grid import (
    Grid,
    extract_window,
    forward as fft_forward,
    inverse as fft_inverse,
    kernel_symbol,
    semi_implicit_symbol,
    symbol_to_spatial_kernel,
)

MLP_SIZE = 47
MIX_SIZE = 5
DEFAULT_KERNEL_SIZE = 17


class FormatError(Exception):
    """Malformed serialized network or checkpoint."""


def _unpack_mlp(p: np.ndarray):
    return p[0:8], p[8:16], p[16:40].reshape(3, 8), p[40:43], p[43:46], p[46]


_CHUNK = 8192  # points per block; keeps the (8, chunk) temporaries cache resident


def _gauss(a):
    out = np.multiply(a, a)
    np.negative(out, out=out)
    return np.exp(out, out=out)


def mlp_eval(p: np.ndarray, x):
    """Apply the reaction MLP with parameters ``p`` pointwise to ``x``."""
    W1, b1, W2, b2, W3, b3 = _unpack_mlp(p)
    W1c, b1c, b2c = W1[:, None], b1[:, None], b2[:, None]
    x = np.asarray(x, dtype=float)
    flat = x.reshape(-1)
    out = np.empty(flat.size)
    for lo in range(0, flat.size, _CHUNK):
        xc = flat[lo:lo + _CHUNK]
        h1 = _gauss(W1c * xc + b1c)
        h2 = _gauss(W2 @ h1 + b2c)
        out[lo:lo + _CHUNK] = W3 @ h2 + b3
    return out.reshape(x.shape)


def mlp_backward(p: np.ndarray, x: np.ndarray, g_out: np.ndarray):
    """Gradient of ``sum(g_out * mlp(x))`` w.r.t. parameters and input."""
    W1, b1, W2, b2, W3, b3 = _unpack_mlp(p)
    W1c, b1c, b2c, W3c = W1[:, None], b1[:, None], b2[:, None], W3[:, None]
    flat = np.asarray(x, dtype=float).reshape(-1)
    go_all = np.asarray(g_out, dtype=float).reshape(-1)
    gW1, gb1 = np.zeros(8), np.zeros(8)
    gW2, gb2 = np.zeros((3, 8)), np.zeros(3)
    gW3, gb3 = np.zeros(3), 0.0
    g_in = np.empty(flat.size)
    for lo in range(0, flat.size, _CHUNK):
        xc = flat[lo:lo + _CHUNK]
        go = go_all[lo:lo + _CHUNK]
        a1 = W1c * xc + b1c
        h1 = _gauss(a1)
        a2 = W2 @ h1 + b2c
        h2 = _gauss(a2)

        gW3 += h2 @ go
        gb3 += go.sum()
        da2 = W3c * go
        da2 *= a2
        da2 *= h2
        da2 *= -2.0
        gW2 += da2 @ h1.T
        gb2 += da2.sum(axis=1)
        da1 = W2.T @ da2
        da1 *= a1
        da1 *= h1
        da1 *= -2.0
        gW1 += da1 @ xc
        gb1 += da1.sum(axis=1)
        g_in[lo:lo + _CHUNK] = W1 @ da1
    grad = np.concatenate([gW1, gb1, gW2.reshape(-1), gb2, gW3, [gb3]])
    return grad, g_in.reshape(np.shape(x))


def init_mlp(rng: np.random.Generator) -> np.ndarray:
    p = np.zeros(MLP_SIZE)
    W1, b1, W2, b2, W3, b3 = _unpack_mlp(p)
    W1[:] = rng.uniform(-0.5, 0.5, 8)
    W2[:] = rng.uniform(-0.5, 0.5, (3, 8))
    W3[:] = rng.uniform(-0.5, 0.5, 3)
    return p


def init_identity_mlp(rng: np.random.Generator, slope: float = 0.1, span=(-0.3, 1.05)) -> np.ndarray:
    """Random MLP rewired so that it approximates ``s -> s`` on ``span``.

    One unit per hidden layer sits at the inflection point of the Gaussian,
    where it is linear to second order; the output layer undoes the offset
    and scale (fitted on a sample of ``span``).  The other units keep random
    input weights but start with no path to the output.
    """
    p = init_mlp(rng)
    W1, b1, W2, b2, W3, _ = _unpack_mlp(p)
    knee = -1.0 / np.sqrt(2.0)
    gain = np.sqrt(2.0) * np.exp(-0.5)  # slope of exp(-z^2) at its inflection
    W1[0], b1[0] = slope, knee
    W2[0, :] = 0.0
    W2[0, 0] = 1.0 / gain
    b2[0] = knee - W2[0, 0] * np.exp(-0.5)
    W3[:] = 0.0
    W3[0] = 1.0
    x = np.linspace(*span, 257)
    a, c = np.polyfit(x, mlp_eval(p, x), 1)
    W3[0] = 1.0 / a
    p[-1] = -c / a
    return p


class _Convolver:
    """Per-call cache of kernel spectra for one spatial size."""

    def __init__(self, d: int, shape: tuple):
        self.grid = Grid(d, shape[-1])
        self._symbols = {}

    def symbol(self, key, kernel):
        if key not in self._symbols:
            self._symbols[key] = kernel_symbol(kernel, self.grid)
        return self._symbols[key]

    def hat(self, u):
        return fft_forward(u, self.grid)

    def inv(self, u_hat):
        return fft_inverse(u_hat, self.grid)

    def kernel_grad(self, g_hat, u_hat, size):
        """Window of ``sum_b sum_k g_{b,k} u_{b,k-l}`` (adjoint w.r.t. the kernel)."""
        d = self.grid.d
        prod = g_hat * np.conj(u_hat)
        if prod.ndim > d:
            prod = prod.reshape((-1,) + prod.shape[-d:]).sum(axis=0)
        return extract_window(self.inv(prod), size, self.grid)


class DRNet:
    """Common plumbing for the two architectures."""

    tag = b""

    def __init__(self, theta: np.ndarray, d: int = 2, kernel_size: int = DEFAULT_KERNEL_SIZE):
        if kernel_size % 2 == 0 or kernel_size < 1:
            raise ValueError(f"kernel size must be a positive odd integer, got {kernel_size}")
        self.d = d
        self.kernel_size = kernel_size
        theta = np.array(theta, dtype=float)
        if theta.shape != (self.structural_count(d, kernel_size),):
            raise ValueError(f"{type(self).__name__} expects {self.structural_count(d, kernel_size)} parameters, got {theta.shape}")
        self.theta = theta

    @property
    def kernel_len(self) -> int:
        return self.kernel_size**self.d

    def _kernel(self, i: int) -> np.ndarray:
        m = self.kernel_len
        return self.theta[i * m:(i + 1) * m].reshape((self.kernel_size,) * self.d)

    def _check_input(self, u: np.ndarray) -> None:
        spatial = u.shape[-self.d:] if u.ndim >= self.d else ()
        if len(spatial) != self.d or len(set(spatial)) != 1:
            raise ValueError(f"input of shape {u.shape} is not a {self.d}-d square field")
        if spatial[0] < self.kernel_size:
            raise ValueError(f"grid size {spatial[0]} smaller than kernel size {self.kernel_size}")

    def __call__(self, u: np.ndarray) -> np.ndarray:
        return self.forward_with_tape(u, keep=False)[0]

    def with_theta(self, theta: np.ndarray) -> "DRNet":
        return type(self)(theta, self.d, self.kernel_size)

    def copy(self) -> "DRNet":
        return self.with_theta(self.theta.copy())

    def __len__(self):
        return self.theta.size


class DRNet1(DRNet):
    """One diffusion neuron followed by one reaction MLP: ``R(K * u)``."""

    tag = b"DRN1"

    @staticmethod
    def structural_count(d: int, kernel_size: int = DEFAULT_KERNEL_SIZE) -> int:
        return kernel_size**d + MLP_SIZE

    @property
    def kernel(self):
        return self._kernel(0)

    @property
    def reaction(self):
        return self.theta[self.kernel_len:]

    def forward_with_tape(self, u, keep=True):
        self._check_input(u)
        conv = _Convolver(self.d, u.shape)
        u_hat = conv.hat(u)
        v = conv.inv(u_hat * conv.symbol(1, self.kernel))
        out = mlp_eval(self.reaction, v)
        tape = (conv, u_hat, v) if keep else None
        return out, tape

    def backward(self, tape, g_out):
        conv, u_hat, v = tape
        grad = np.empty_like(self.theta)
        m = self.kernel_len
        grad[m:], g_v = mlp_backward(self.reaction, v, g_out)
        g_hat = conv.hat(g_v)
        grad[:m] = conv.kernel_grad(g_hat, u_hat, self.kernel_size).reshape(-1)
        g_u = conv.inv(g_hat * np.conj(conv.symbol(1, self.kernel)))
        return grad, g_u


class DRNet2(DRNet):
    """Two diffusions, three reactions, one residual reaction and five edge weights."""

    tag = b"DRN2"

    @staticmethod
    def structural_count(d: int, kernel_size: int = DEFAULT_KERNEL_SIZE) -> int:
        return 2 * kernel_size**d + 3 * MLP_SIZE + MIX_SIZE

    @property
    def kernel1(self):
        return self._kernel(0)

    @property
    def kernel2(self):
        return self._kernel(1)

    def reaction(self, i: int):
        start = 2 * self.kernel_len + (i - 1) * MLP_SIZE
        return self.theta[start:start + MLP_SIZE]

    @property
    def mix(self):
        return self.theta[-MIX_SIZE:]

    def forward_with_tape(self, u, keep=True):
        self._check_input(u)
        a1, a2, a3, a4, a5 = self.mix
        conv = _Convolver(self.d, u.shape)
        r1 = mlp_eval(self.reaction(1), u)
        r1_hat = conv.hat(r1)
        U1 = conv.inv(r1_hat * conv.symbol(1, self.kernel1))
        ra = mlp_eval(self.reaction(2), U1)
        residual = U1 + mlp_eval(self.reaction(3), U1)
        Z = a1 * ra + a2 * u + a3 * residual
        Z_hat = conv.hat(Z)
        w = conv.inv(Z_hat * conv.symbol(2, self.kernel2))
        out = a4 * w + a5 * u
        tape = (conv, u, r1_hat, U1, ra, residual, Z_hat, w) if keep else None
        return out, tape

    def backward(self, tape, g_out):
        conv, u, r1_hat, U1, ra, residual, Z_hat, w = tape
        a1, a2, a3, a4, a5 = self.mix
        m, nk = self.kernel_len, self.kernel_size
        grad = np.empty_like(self.theta)
        mix = grad[-MIX_SIZE:]
        bsum = lambda x, y: float(np.sum(x * y))  # noqa: E731

        mix[3] = bsum(g_out, w)
        mix[4] = bsum(g_out, u)
        g_u = a5 * g_out

        g_w_hat = conv.hat(a4 * g_out)
        grad[m:2 * m] = conv.kernel_grad(g_w_hat, Z_hat, nk).reshape(-1)
        g_Z = conv.inv(g_w_hat * np.conj(conv.symbol(2, self.kernel2)))

        mix[0] = bsum(g_Z, ra)
        mix[1] = bsum(g_Z, u)
        mix[2] = bsum(g_Z, residual)
        g_u += a2 * g_Z

        o1 = 2 * m
        grad[o1 + MLP_SIZE:o1 + 2 * MLP_SIZE], g_U1_a = mlp_backward(self.reaction(2), U1, a1 * g_Z)
        grad[o1 + 2 * MLP_SIZE:o1 + 3 * MLP_SIZE], g_U1_c = mlp_backward(self.reaction(3), U1, a3 * g_Z)
        g_U1 = a3 * g_Z + g_U1_a + g_U1_c

        g_U1_hat = conv.hat(g_U1)
        grad[:m] = conv.kernel_grad(g_U1_hat, r1_hat, nk).reshape(-1)
        g_r1 = conv.inv(g_U1_hat * np.conj(conv.symbol(1, self.kernel1)))
        grad[o1:o1 + MLP_SIZE], g_u1 = mlp_backward(self.reaction(1), u, g_r1)
        g_u += g_u1
        return grad, g_u


NETS = {"s1": DRNet1, "s2": DRNet2}


def param_count(net: DRNet) -> int:
    return int(net.theta.size)


def _initial_kernel(grid: Grid, size: int, rng: np.random.Generator) -> np.ndarray:
    base = symbol_to_spatial_kernel(semi_implicit_symbol(grid), size, grid)
    return base + rng.uniform(-1e-3, 1e-3, base.shape)


def _delta_kernel(d: int, size: int) -> np.ndarray:
    k = np.zeros((size,) * d)
    k[(size // 2,) * d] = 1.0
    return k


def _silent(p: np.ndarray) -> np.ndarray:
    W1, b1, W2, b2, W3, b3 = _unpack_mlp(p)
    W3[:] = 0.0
    return p


def init_net(kind: str, grid: Grid, rng: np.random.Generator, kernel_size: int = DEFAULT_KERNEL_SIZE) -> DRNet:
    """Untrained network.

    DRNet1: kernel near the truncated semi-implicit kernel, random MLP with
    zero biases.  DRNet2 starts close to the identity map: both kernels are
    discrete deltas, the first MLP approximates ``s -> s`` and the other two
    output zero.
    """
    if kind not in NETS:
        raise ValueError(f"unknown network {kind!r}; expected one of {sorted(NETS)}")
    cls = NETS[kind]
    if cls is DRNet1:
        parts = [_initial_kernel(grid, kernel_size, rng).ravel(), init_mlp(rng)]
    else:
        parts = [
            _delta_kernel(grid.d, kernel_size).ravel(),
            _delta_kernel(grid.d, kernel_size).ravel(),
            init_identity_mlp(rng), _silent(init_mlp(rng)), _silent(init_mlp(rng)),
            np.array([1.0, 0.0, 1.0, 1.0, 0.0]),
        ]
    return cls(np.concatenate(parts), grid.d, kernel_size)


def iterate(net, u: np.ndarray, steps: int) -> np.ndarray:
    for _ in range(steps):
        u = net(u)
    return u


def loss_and_gradient(net: DRNet, inputs: np.ndarray, targets: np.ndarray, cell_volume: float):
    """Multipoint squared loss and its exact gradient.

    ``inputs`` has shape ``(B, *spatial)`` and ``targets`` ``(B, k, *spatial)``;
    the loss is ``(1/B) sum_i sum_j dx^d ||S^j(X_i) - Y_ij||^2``.
    """
    inputs = np.asarray(inputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if inputs.ndim != net.d + 1 or targets.ndim != net.d + 2:
        raise ValueError(f"expected batched inputs/targets, got shapes {inputs.shape} and {targets.shape}")
    if targets.shape[0] != inputs.shape[0] or targets.shape[2:] != inputs.shape[1:]:
        raise ValueError(f"targets {targets.shape} do not match inputs {inputs.shape}")
    batch, k = targets.shape[:2]
    if batch == 0 or k == 0:
        raise ValueError("empty batch or horizon")

    tapes, residuals = [], []
    u = inputs
    loss = 0.0
    for j in range(k):
        u, tape = net.forward_with_tape(u)
        r = u - targets[:, j]
        tapes.append(tape)
        residuals.append(r)
        loss += cell_volume * float(np.sum(r * r))
    scale = 2.0 * cell_volume / batch

    grad = np.zeros_like(net.theta)
    g = np.zeros_like(inputs)
    for j in reversed(range(k)):
        g = g + scale * residuals[j]
        gj, g = net.backward(tapes[j], g)
        grad += gj
    return loss / batch, grad


def loss_only(net: DRNet, inputs: np.ndarray, targets: np.ndarray, cell_volume: float) -> float:
    u = np.asarray(inputs, dtype=float)
    loss = 0.0
    for j in range(targets.shape[1]):
        u = net(u)
        loss += cell_volume * float(np.sum((u - targets[:, j]) ** 2))
    return loss / inputs.shape[0]


# Binary layout: magic (4 bytes) | u32 parameter count | count little-endian doubles.

def _shape_from_count(cls, count: int):
    for d in (2, 3, 1):
        for size in range(1, 200, 2):
            c = cls.structural_count(d, size)
            if c == count:
                return d, size
            if c > count:
                break
    raise FormatError(f"parameter count {count} matches no {cls.__name__} structure")


def net_serialize(net: DRNet) -> bytes:
    theta = np.ascontiguousarray(net.theta, dtype="<f8")
    return net.tag + struct.pack("<I", theta.size) + theta.tobytes()


def net_deserialize_prefix(buf: bytes):
    """Parse a serialized net at the start of ``buf``; returns ``(net, bytes_used)``."""
    if len(buf) < 8:
        raise FormatError("buffer too short for a network header")
    tag = bytes(buf[:4])
    cls = {c.tag: c for c in NETS.values()}.get(tag)
    if cls is None:
        raise FormatError(f"bad magic {tag!r}")
    (count,) = struct.unpack("<I", buf[4:8])
    d, size = _shape_from_count(cls, count)
    end = 8 + 8 * count
    if len(buf) < end:
        raise FormatError(f"truncated parameter block: need {end} bytes, have {len(buf)}")
    theta = np.frombuffer(buf[8:end], dtype="<f8").astype(float)
    return cls(theta, d, size), end


def net_deserialize(buf: bytes) -> DRNet:
    net, used = net_deserialize_prefix(buf)
    if used != len(buf):
        raise FormatError(f"{len(buf) - used} trailing bytes after network")
    return net
