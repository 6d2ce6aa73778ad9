"""A small feed-forward network with hand-written gradients.

Parameters live in one flat float64 vector. Layer ``l`` stores a weight matrix
of shape ``(fan_out, fan_in)`` followed by a bias of length ``fan_out``. Hidden
layers use the chosen activation; the last layer is linear.

Besides ordinary reverse mode, the network supports the second-order pass
needed by the gradient penalty: the parameter gradient of a function of the
input gradient ``d output / d x``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import DivergedParameters, ShapeMismatch

_MAGIC = "fmaxlab-mlp"


class Activation(str, Enum):
    TANH = "tanh"
    RELU = "relu"


def _act(kind: Activation, z):
    if kind is Activation.TANH:
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _act_d1(kind: Activation, z, h):
    if kind is Activation.TANH:
        return 1.0 - h * h
    return (z > 0).astype(float)


def _act_d2(kind: Activation, z, h):
    if kind is Activation.TANH:
        return -2.0 * h * (1.0 - h * h)
    return np.zeros_like(z)


def n_params(layer_sizes) -> int:
    return int(sum((i + 1) * o for i, o in zip(layer_sizes[:-1], layer_sizes[1:])))


class MLP:
    """Multilayer perceptron over a flat parameter vector.

    Inputs may be a single vector ``(d_in,)`` or a batch ``(n, d_in)``; outputs
    follow the same convention.
    """

    def __init__(self, layer_sizes, activation="tanh", seed: int = 0, params=None):
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"need at least input and output sizes, got {layer_sizes!r}")
        self.layer_sizes = sizes
        self.activation = Activation(activation)
        self.seed = int(seed)
        if params is None:
            params = self._init_params(np.random.default_rng(self.seed))
        params = np.asarray(params, dtype=float).ravel().copy()
        if params.size != n_params(sizes):
            raise ShapeMismatch(f"expected {n_params(sizes)} params, got {params.size}")
        self.params = params

    def _init_params(self, rng):
        chunks = []
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            chunks.append(rng.uniform(-bound, bound, size=fan_out * fan_in))
            chunks.append(np.zeros(fan_out))
        return np.concatenate(chunks)

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    def _slices(self):
        out, k = [], 0
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            w = slice(k, k + fan_in * fan_out)
            k += fan_in * fan_out
            b = slice(k, k + fan_out)
            k += fan_out
            out.append((w, b, fan_in, fan_out))
        return out

    def layers(self, params=None):
        """List of ``(W, b)`` views into ``params`` (defaults to own params)."""
        p = self.params if params is None else params
        return [(p[w].reshape(fo, fi), p[b]) for w, b, fi, fo in self._slices()]

    def copy(self) -> "MLP":
        return MLP(self.layer_sizes, self.activation, self.seed, self.params)

    def _batch(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        xb = x[None, :] if single else x
        if xb.ndim != 2 or xb.shape[1] != self.in_dim:
            raise ShapeMismatch(f"input has shape {x.shape}, network expects last dim {self.in_dim}")
        return xb, single

    def _forward_cache(self, xb):
        hs, zs = [xb], []
        layers = self.layers()
        for l, (w, b) in enumerate(layers):
            z = hs[-1] @ w.T + b
            zs.append(z)
            hs.append(z if l == len(layers) - 1 else _act(self.activation, z))
        return hs, zs

    def forward(self, x):
        xb, single = self._batch(x)
        out = self._forward_cache(xb)[0][-1]
        return out[0] if single else out

    __call__ = forward

    def _grad_out(self, grad_out, n):
        g = np.asarray(grad_out, dtype=float)
        if g.ndim == 1 and n == 1 and g.shape[0] == self.out_dim:
            g = g[None, :]
        if g.shape != (n, self.out_dim):
            raise ShapeMismatch(f"output gradient has shape {g.shape}, expected {(n, self.out_dim)}")
        return g

    def backward(self, x, grad_out) -> np.ndarray:
        """Parameter gradient of ``sum(grad_out * forward(x))`` summed over the batch."""
        return self.backward_full(x, grad_out)[0]

    def input_gradient(self, x, grad_out) -> np.ndarray:
        """Gradient of ``sum(grad_out * forward(x))`` with respect to ``x``."""
        xb, single = self._batch(x)
        gx = self.backward_full(xb, grad_out)[1]
        return gx[0] if single else gx

    def backward_full(self, x, grad_out):
        xb, _ = self._batch(x)
        g = self._grad_out(grad_out, xb.shape[0])
        hs, zs = self._forward_cache(xb)
        layers = self.layers()
        grad = np.zeros_like(self.params)
        gl = self.layers(grad)
        delta = g
        for l in range(len(layers) - 1, -1, -1):
            w, _ = layers[l]
            gw, gb = gl[l]
            gw += delta.T @ hs[l]
            gb += delta.sum(axis=0)
            up = delta @ w
            if l > 0:
                delta = up * _act_d1(self.activation, zs[l - 1], hs[l])
            else:
                gx = up
        return grad, gx

    def set_params(self, params) -> None:
        params = np.asarray(params, dtype=float).ravel()
        if params.size != self.params.size:
            raise ShapeMismatch(f"expected {self.params.size} params, got {params.size}")
        if not np.all(np.isfinite(params)):
            raise DivergedParameters("non-finite network parameters")
        self.params = params.copy()

    def save(self, path) -> None:
        save_checkpoint(self, path)


def penalty_of_input_gradients(mlp: MLP, x, weight: float):
    """``weight * mean_i (||d out / d x (x_i)|| - 1)^2`` and its parameter gradient.

    The network must have a scalar output. The parameter gradient is obtained
    by differentiating through the backward pass (double backpropagation).
    """
    if mlp.out_dim != 1:
        raise ShapeMismatch("gradient penalty needs a scalar-output network")
    xb, _ = mlp._batch(x)
    n = xb.shape[0]
    kind = mlp.activation
    hs, zs = mlp._forward_cache(xb)
    layers = mlp.layers()
    L = len(layers)

    # backward pass for d out / d x, keeping per-layer quantities
    # d[l]: grad wrt pre-activation of layer l; a[l]: grad wrt input of layer l
    d = [None] * L
    a = [None] * L
    d[L - 1] = np.ones((n, 1))
    for l in range(L - 1, -1, -1):
        a[l] = d[l] @ layers[l][0]
        if l > 0:
            d[l - 1] = a[l] * _act_d1(kind, zs[l - 1], hs[l])
    g0 = a[0]
    norms = np.linalg.norm(g0, axis=1)
    penalty = float(weight * np.mean((norms - 1.0) ** 2))

    grad = np.zeros_like(mlp.params)
    gl = mlp.layers(grad)
    safe = np.where(norms > 0, norms, 1.0)
    a_bar = (weight * 2.0 / n) * ((norms - 1.0) / safe)[:, None] * g0
    a_bar[norms == 0] = 0.0

    # reverse through the backward pass, from input side to output side
    z_bar = [np.zeros_like(z) for z in zs]
    for l in range(L):
        w, _ = layers[l]
        gl[l][0][...] += d[l].T @ a_bar
        d_bar = a_bar @ w.T
        if l == L - 1:
            break
        s1 = _act_d1(kind, zs[l], hs[l + 1])
        s2 = _act_d2(kind, zs[l], hs[l + 1])
        z_bar[l] += s2 * a[l + 1] * d_bar
        a_bar = s1 * d_bar

    # pre-activation adjoints flow back through the forward graph
    carry = np.zeros_like(zs[L - 1])
    for l in range(L - 1, -1, -1):
        total = z_bar[l] + carry
        gl[l][0][...] += total.T @ hs[l]
        gl[l][1][...] += total.sum(axis=0)
        if l > 0:
            carry = (total @ layers[l][0]) * _act_d1(kind, zs[l - 1], hs[l])
    return penalty, grad


def interpolate_batches(expert, policy, rng) -> np.ndarray:
    """Random convex combinations of shuffled expert/policy pairs, one weight per pair."""
    xe = np.atleast_2d(np.asarray(expert, dtype=float))
    xp = np.atleast_2d(np.asarray(policy, dtype=float))
    if xe.shape[1] != xp.shape[1]:
        raise ShapeMismatch(f"expert dim {xe.shape[1]} != policy dim {xp.shape[1]}")
    n = min(len(xe), len(xp))
    if n == 0:
        raise ValueError("gradient penalty needs nonempty batches")
    ie = rng.permutation(len(xe))[:n]
    ip = rng.permutation(len(xp))[:n]
    eps = rng.uniform(size=(n, 1))
    return eps * xe[ie] + (1.0 - eps) * xp[ip]


def gradient_penalty(mlp: MLP, expert_batch, policy_batch, weight: float, rng=None):
    """Gradient penalty on interpolates; returns ``(penalty, parameter_gradient)``."""
    rng = np.random.default_rng(0) if rng is None else rng
    x_hat = interpolate_batches(expert_batch, policy_batch, rng)
    return penalty_of_input_gradients(mlp, x_hat, weight)


@dataclass
class Adam:
    """Adam optimiser for minimisation of a flat parameter vector."""

    step_size: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)

    def step(self, params, grad) -> np.ndarray:
        params = np.asarray(params, dtype=float)
        grad = np.asarray(grad, dtype=float)
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.step_count += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.step_count)
        v_hat = self.v / (1 - self.beta2**self.step_count)
        new = params - self.step_size * m_hat / (np.sqrt(v_hat) + self.epsilon)
        if not np.all(np.isfinite(new)):
            raise DivergedParameters(f"non-finite parameters after step {self.step_count}")
        return new


def save_checkpoint(mlp: MLP, path, extra: dict | None = None) -> None:
    """One JSON header line, then the parameters as little-endian float64."""
    header = {
        "format": _MAGIC,
        "layer_sizes": mlp.layer_sizes,
        "activation": mlp.activation.value,
        "seed": mlp.seed,
        "n_params": int(mlp.params.size),
    }
    if extra:
        header["extra"] = extra
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(mlp.params.astype("<f8").tobytes())
    tmp.replace(path)


def load_checkpoint(path) -> tuple[MLP, dict]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        payload = fh.read()
    if header.get("format") != _MAGIC:
        raise ValueError(f"{path}: not a network checkpoint")
    params = np.frombuffer(payload, dtype="<f8").astype(float)
    mlp = MLP(header["layer_sizes"], header["activation"], header["seed"], params)
    return mlp, header.get("extra", {})


def central_difference(fn, theta, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar ``fn`` at ``theta``."""
    theta = np.asarray(theta, dtype=float)
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        up = theta.copy()
        dn = theta.copy()
        up.flat[i] += h
        dn.flat[i] -= h
        grad.flat[i] = (fn(up) - fn(dn)) / (2 * h)
    return grad


@dataclass
class InputNormalizer:
    """Affine input standardisation with the standard deviation floored at ``1e-6``."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).ravel()
        self.std = np.maximum(np.asarray(self.std, dtype=float).ravel(), 1e-6)
        if self.mean.shape != self.std.shape:
            raise ShapeMismatch("mean and std must have the same length")

    @classmethod
    def fit(cls, x) -> "InputNormalizer":
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[0] == 0:
            raise ValueError("cannot fit a normalizer on zero samples")
        return cls(x.mean(axis=0), x.std(axis=0))

    @classmethod
    def identity(cls, dim: int) -> "InputNormalizer":
        return cls(np.zeros(dim), np.ones(dim))

    @property
    def dim(self) -> int:
        return self.mean.size

    def __call__(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d) -> "InputNormalizer":
        return cls(d["mean"], d["std"])
