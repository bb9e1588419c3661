"""One-hidden-layer networks for policies and value functions.

Three architectures share the same conventions:

* :class:`PolicyNetwork` -- ReLU hidden layer, one independent hidden layer per
  control component, output squashed into the control set (affine sigmoid on a
  box, identity when unbounded).
* :class:`ValueNetwork` -- sigmoid hidden layer, linear scalar output.
* :class:`SoftmaxPolicyNetwork` -- shared ReLU hidden layer, softmax over a
  finite action set.

Parameters are bounded by the kernel norm ``eta`` (every hidden kernel row) and
the total variation ``gamma`` (l1 norm of output weights including the offset).
Inputs are batches ``(M, d)``. ``backward`` returns the gradient of
``sum(upstream * forward(x))`` with respect to the flat parameter vector and to
the input.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import ConfigurationError
from .rng import seed_stream

FORMAT_VERSION = 1


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def project_l1_ball(v: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``{w : ||w||_1 <= radius}`` (sort-based)."""
    v = np.asarray(v, dtype=float)
    if np.abs(v).sum() <= radius:
        return v.copy()
    u = np.sort(np.abs(v))[::-1]
    css = np.cumsum(u)
    k = np.arange(1, len(u) + 1)
    rho = np.nonzero(u * k > css - radius)[0][-1]
    theta = (css[rho] - radius) / (rho + 1.0)
    return np.sign(v) * np.maximum(np.abs(v) - theta, 0.0)


def project_rows_l2(rows: np.ndarray, radius: float) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=-1, keepdims=True)
    scale = np.where(norms > radius, radius / np.where(norms > 0, norms, 1.0), 1.0)
    return rows * scale


def _as_batch(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        # a lone point, or a column of scalars when d == 1
        x = x[None, :] if x.shape[0] == d else (x[:, None] if d == 1 else x)
    if x.ndim != 2 or x.shape[1] != d:
        raise ConfigurationError(f"input has shape {x.shape}, expected (M, {d})")
    return x


class _Net:
    """Shared flat-parameter plumbing. Subclasses list their fields in ``_fields``."""

    _fields: tuple[str, ...] = ()

    def get_params(self) -> np.ndarray:
        return np.concatenate([np.ravel(getattr(self, f)) for f in self._fields])

    def with_params(self, flat: np.ndarray):
        flat = np.asarray(flat, dtype=float)
        out, pos = {}, 0
        for f in self._fields:
            ref = np.asarray(getattr(self, f))
            out[f] = flat[pos:pos + ref.size].reshape(ref.shape).copy()
            pos += ref.size
        if pos != flat.size:
            raise ConfigurationError("parameter vector has the wrong length")
        return replace(self, **out)

    @property
    def num_params(self) -> int:
        return sum(np.asarray(getattr(self, f)).size for f in self._fields)

    def __call__(self, x):
        return self.forward(x)


@dataclass(frozen=True, eq=False)
class PolicyNetwork(_Net):
    kernels: np.ndarray  # (q, K, d)
    biases: np.ndarray  # (q, K)
    output_weights: np.ndarray  # (q, K)
    output_offset: np.ndarray  # (q,)
    eta: float
    gamma: float
    low: Optional[np.ndarray] = None
    high: Optional[np.ndarray] = None

    _fields = ("kernels", "biases", "output_weights", "output_offset")

    @property
    def input_dim(self) -> int:
        return self.kernels.shape[2]

    @property
    def output_dim(self) -> int:
        return self.kernels.shape[0]

    @property
    def hidden_units(self) -> int:
        return self.kernels.shape[1]

    def _pre(self, x):
        pre = np.einsum("qkd,md->mqk", self.kernels, x) + self.biases[None]
        h = np.maximum(pre, 0.0)
        z = np.einsum("mqk,qk->mq", h, self.output_weights) + self.output_offset[None]
        return pre, h, z

    def _squash(self, z):
        if self.low is None:
            return z, np.ones_like(z)
        s = sigmoid(z)
        width = self.high - self.low
        return self.low + width * s, width * s * (1.0 - s)

    def forward(self, x) -> np.ndarray:
        x = _as_batch(x, self.input_dim)
        out, _ = self._squash(self._pre(x)[2])
        return out

    def backward(self, x, upstream, params: bool = True):
        x = _as_batch(x, self.input_dim)
        pre, h, z = self._pre(x)
        _, dsq = self._squash(z)
        dz = np.asarray(upstream, dtype=float).reshape(z.shape) * dsq  # (M, q)
        dpre = dz[:, :, None] * self.output_weights[None] * (pre > 0)  # (M, q, K)
        dx = np.einsum("mqk,qkd->md", dpre, self.kernels)
        if not params:
            return None, dx
        grads = np.concatenate([
            np.einsum("mqk,md->qkd", dpre, x).ravel(),
            dpre.sum(axis=0).ravel(),
            np.einsum("mq,mqk->qk", dz, h).ravel(),
            dz.sum(axis=0),
        ])
        return grads, dx

    def project(self) -> "PolicyNetwork":
        c = np.concatenate([self.output_weights, self.output_offset[:, None]], axis=1)
        c = np.stack([project_l1_ball(row, self.gamma) for row in c])
        return replace(
            self,
            kernels=project_rows_l2(self.kernels, self.eta),
            output_weights=c[:, :-1].copy(),
            output_offset=c[:, -1].copy(),
        )


@dataclass(frozen=True, eq=False)
class ValueNetwork(_Net):
    kernels: np.ndarray  # (K, d)
    biases: np.ndarray  # (K,)
    output_weights: np.ndarray  # (K,)
    output_offset: np.ndarray  # (1,)
    eta: float
    gamma: float

    _fields = ("kernels", "biases", "output_weights", "output_offset")

    @property
    def input_dim(self) -> int:
        return self.kernels.shape[1]

    @property
    def hidden_units(self) -> int:
        return self.kernels.shape[0]

    def forward(self, x) -> np.ndarray:
        x = _as_batch(x, self.input_dim)
        h = sigmoid(x @ self.kernels.T + self.biases)
        return h @ self.output_weights + self.output_offset[0]

    def backward(self, x, upstream, params: bool = True):
        x = _as_batch(x, self.input_dim)
        h = sigmoid(x @ self.kernels.T + self.biases)
        up = np.asarray(upstream, dtype=float).reshape(x.shape[0])
        dpre = up[:, None] * self.output_weights[None] * h * (1.0 - h)
        dx = dpre @ self.kernels
        if not params:
            return None, dx
        grads = np.concatenate([
            (dpre.T @ x).ravel(),
            dpre.sum(axis=0),
            h.T @ up,
            [up.sum()],
        ])
        return grads, dx

    def project(self) -> "ValueNetwork":
        c = project_l1_ball(np.append(self.output_weights, self.output_offset), self.gamma)
        return replace(
            self,
            kernels=project_rows_l2(self.kernels, self.eta),
            output_weights=c[:-1].copy(),
            output_offset=c[-1:].copy(),
        )


@dataclass(frozen=True, eq=False)
class SoftmaxPolicyNetwork(_Net):
    kernels: np.ndarray  # (K, d)
    biases: np.ndarray  # (K,)
    output_weights: np.ndarray  # (L, K)
    output_offset: np.ndarray  # (L,)
    eta: float
    gamma: float

    _fields = ("kernels", "biases", "output_weights", "output_offset")

    @property
    def input_dim(self) -> int:
        return self.kernels.shape[1]

    @property
    def num_actions(self) -> int:
        return self.output_weights.shape[0]

    def _hidden(self, x):
        pre = x @ self.kernels.T + self.biases
        return pre, np.maximum(pre, 0.0)

    def forward(self, x) -> np.ndarray:
        x = _as_batch(x, self.input_dim)
        _, h = self._hidden(x)
        z = h @ self.output_weights.T + self.output_offset
        z = z - z.max(axis=1, keepdims=True)
        p = np.exp(z)
        return p / p.sum(axis=1, keepdims=True)

    def backward(self, x, upstream, params: bool = True):
        x = _as_batch(x, self.input_dim)
        pre, h = self._hidden(x)
        p = self.forward(x)
        up = np.asarray(upstream, dtype=float).reshape(p.shape)
        dz = p * (up - (up * p).sum(axis=1, keepdims=True))
        dpre = (dz @ self.output_weights) * (pre > 0)
        dx = dpre @ self.kernels
        if not params:
            return None, dx
        grads = np.concatenate([
            (dpre.T @ x).ravel(),
            dpre.sum(axis=0),
            (dz.T @ h).ravel(),
            dz.sum(axis=0),
        ])
        return grads, dx

    def project(self) -> "SoftmaxPolicyNetwork":
        c = np.concatenate([self.output_weights, self.output_offset[:, None]], axis=1)
        c = np.stack([project_l1_ball(row, self.gamma) for row in c])
        return replace(
            self,
            kernels=project_rows_l2(self.kernels, self.eta),
            output_weights=c[:, :-1].copy(),
            output_offset=c[:, -1].copy(),
        )


Network = PolicyNetwork | ValueNetwork | SoftmaxPolicyNetwork


def forward(net: Network, x) -> np.ndarray:
    return net.forward(x)


def backward(net: Network, x, upstream):
    return net.backward(x, upstream)


def project_constraints(net: Network) -> Network:
    """Radially shrink kernel rows to norm ``eta`` and l1-project output weights onto ``gamma``."""
    return net.project()


# ---------------------------------------------------------------------------
# initialization

INIT_SCHEMES = ("default", "zeros", "spread")


def _init_arrays(rng, kernel_shape, bias_shape, out_shape, offset_shape, d, K, scheme, bias_scale):
    if scheme == "zeros":
        return (np.zeros(kernel_shape), np.zeros(bias_shape), np.zeros(out_shape),
                np.zeros(offset_shape))
    s = 1.0 / np.sqrt(d)
    kern = rng.uniform(-s, s, kernel_shape)
    out = rng.uniform(-1.0, 1.0, out_shape) / np.sqrt(K)
    if scheme == "default":
        bias = np.zeros(bias_shape)
    else:
        # hidden units centred at scattered points so the layer covers the input range
        bias = rng.uniform(-bias_scale, bias_scale, bias_shape)
    return kern, bias, out, np.zeros(offset_shape)


def _check_shape(d, K, eta, gamma, scheme):
    if d < 1 or K < 1:
        raise ConfigurationError(f"invalid network shape d={d}, K={K}")
    if not (eta > 0 and gamma > 0):
        raise ConfigurationError("eta and gamma must be positive")
    if scheme not in INIT_SCHEMES:
        raise ConfigurationError(f"unknown init scheme {scheme!r}; choose from {INIT_SCHEMES}")


def init_policy(d: int, K: int, q: int, eta: float, gamma: float, seed: int,
                low=None, high=None, scheme: str = "default", bias_scale: float = 1.0) -> PolicyNetwork:
    _check_shape(d, K, eta, gamma, scheme)
    if q < 1:
        raise ConfigurationError("output dimension must be positive")
    rng = seed_stream(seed, "init", "policy")
    kern, bias, out, off = _init_arrays(rng, (q, K, d), (q, K), (q, K), (q,), d, K, scheme, bias_scale)
    low = None if low is None else np.atleast_1d(np.asarray(low, dtype=float))
    high = None if high is None else np.atleast_1d(np.asarray(high, dtype=float))
    return PolicyNetwork(kern, bias, out, off, float(eta), float(gamma), low, high).project()


def init_value(d: int, K: int, eta: float, gamma: float, seed: int,
               scheme: str = "default", bias_scale: float = 1.0) -> ValueNetwork:
    _check_shape(d, K, eta, gamma, scheme)
    rng = seed_stream(seed, "init", "value")
    kern, bias, out, off = _init_arrays(rng, (K, d), (K,), (K,), (1,), d, K, scheme, bias_scale)
    return ValueNetwork(kern, bias, out, off, float(eta), float(gamma)).project()


def init_softmax(d: int, K: int, L: int, eta: float, gamma: float, seed: int,
                 scheme: str = "default", bias_scale: float = 1.0) -> SoftmaxPolicyNetwork:
    _check_shape(d, K, eta, gamma, scheme)
    if L < 1:
        raise ConfigurationError("softmax head needs at least one action")
    rng = seed_stream(seed, "init", "softmax")
    kern, bias, out, off = _init_arrays(rng, (K, d), (K,), (L, K), (L,), d, K, scheme, bias_scale)
    return SoftmaxPolicyNetwork(kern, bias, out, off, float(eta), float(gamma)).project()


def initialize(kind: str, shape: dict, scheme: str = "default", seed: int = 0, **kw) -> Network:
    """Build a network of ``kind`` in {"policy", "value", "softmax"} from a shape dict."""
    if kind == "policy":
        return init_policy(shape["d"], shape["K"], shape.get("q", 1), shape["eta"], shape["gamma"],
                           seed, shape.get("low"), shape.get("high"), scheme, **kw)
    if kind == "value":
        return init_value(shape["d"], shape["K"], shape["eta"], shape["gamma"], seed, scheme, **kw)
    if kind == "softmax":
        return init_softmax(shape["d"], shape["K"], shape["L"], shape["eta"], shape["gamma"],
                            seed, scheme, **kw)
    raise ConfigurationError(f"unknown network kind {kind!r}")


# ---------------------------------------------------------------------------
# serialization

_KINDS = {PolicyNetwork: "policy", ValueNetwork: "value", SoftmaxPolicyNetwork: "softmax"}
_CLASSES = {v: k for k, v in _KINDS.items()}


def network_to_dict(net: Network) -> dict:
    out = {
        "format": "nncontrol.network",
        "version": FORMAT_VERSION,
        "kind": _KINDS[type(net)],
        "kernels": net.kernels.tolist(),
        "biases": net.biases.tolist(),
        "output_weights": net.output_weights.tolist(),
        "output_offset": np.asarray(net.output_offset).tolist(),
        "bounds": {"eta": net.eta, "gamma": net.gamma},
    }
    if isinstance(net, PolicyNetwork) and net.low is not None:
        out["control_box"] = {"low": net.low.tolist(), "high": net.high.tolist()}
    return out


def network_from_dict(data: dict) -> Network:
    if data.get("format") != "nncontrol.network":
        raise ConfigurationError("not a serialized network")
    if data.get("version") != FORMAT_VERSION:
        raise ConfigurationError(f"unsupported network format version {data.get('version')}")
    cls = _CLASSES[data["kind"]]
    kw = dict(
        kernels=np.array(data["kernels"], dtype=float),
        biases=np.array(data["biases"], dtype=float),
        output_weights=np.array(data["output_weights"], dtype=float),
        output_offset=np.array(data["output_offset"], dtype=float),
        eta=float(data["bounds"]["eta"]),
        gamma=float(data["bounds"]["gamma"]),
    )
    if cls is PolicyNetwork:
        box = data.get("control_box")
        kw["low"] = None if box is None else np.array(box["low"], dtype=float)
        kw["high"] = None if box is None else np.array(box["high"], dtype=float)
    return cls(**kw)


def dumps(net: Network) -> str:
    return json.dumps(network_to_dict(net), sort_keys=True)


def loads(text: str) -> Network:
    return network_from_dict(json.loads(text))
