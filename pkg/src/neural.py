"""Fixed input encodings and a small fully-connected network with manual gradients.

The network maps [position features, SH(omega_o), SH(normal), OneBlob(albedo)]
to a non-negative RGB value: ReLU hidden layers, softplus output.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from scipy.special import erf, expit

from .errors import ValidationError

MAX_SH_DEGREE = 4
UNIT_TOLERANCE = 1e-4


def sh_width(degree: int) -> int:
    return (degree + 1) ** 2


def sh_encode(directions, degree: int = 3) -> np.ndarray:
    """Real spherical harmonics up to ``degree`` at unit ``directions``.

    Coefficients are ordered by l, then m from -l to l. A single 3-vector
    gives a single coefficient vector.
    """
    if not 0 <= degree <= MAX_SH_DEGREE:
        raise ValidationError(f"SH degree must lie in [0, {MAX_SH_DEGREE}], got {degree}")
    d = np.asarray(directions, dtype=np.float64)
    scalar = d.ndim == 1
    d = np.atleast_2d(d)
    norm = np.linalg.norm(d, axis=1)
    if np.any(np.abs(norm - 1.0) > UNIT_TOLERANCE):
        i = int(np.flatnonzero(np.abs(norm - 1.0) > UNIT_TOLERANCE)[0])
        raise ValidationError(f"direction {d[i].tolist()} is not unit length (norm {norm[i]:.6g})")

    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    xy, yz, xz = x * y, y * z, x * z
    x2, y2, z2 = x * x, y * y, z * z
    out = np.empty((len(d), sh_width(degree)))
    out[:, 0] = 0.28209479177387814
    if degree >= 1:
        out[:, 1] = -0.48860251190291987 * y
        out[:, 2] = 0.48860251190291987 * z
        out[:, 3] = -0.48860251190291987 * x
    if degree >= 2:
        out[:, 4] = 1.0925484305920792 * xy
        out[:, 5] = -1.0925484305920792 * yz
        out[:, 6] = 0.94617469575755997 * z2 - 0.31539156525251999
        out[:, 7] = -1.0925484305920792 * xz
        out[:, 8] = 0.54627421529603959 * (x2 - y2)
    if degree >= 3:
        out[:, 9] = 0.59004358992664352 * y * (-3.0 * x2 + y2)
        out[:, 10] = 2.8906114426405538 * xy * z
        out[:, 11] = 0.45704579946446572 * y * (1.0 - 5.0 * z2)
        out[:, 12] = 0.3731763325901154 * z * (5.0 * z2 - 3.0)
        out[:, 13] = 0.45704579946446572 * x * (1.0 - 5.0 * z2)
        out[:, 14] = 1.4453057213202769 * z * (x2 - y2)
        out[:, 15] = 0.59004358992664352 * x * (-x2 + 3.0 * y2)
    if degree >= 4:
        out[:, 16] = 2.5033429417967046 * xy * (x2 - y2)
        out[:, 17] = 1.7701307697799304 * yz * (-3.0 * x2 + y2)
        out[:, 18] = 0.94617469575756008 * xy * (7.0 * z2 - 1.0)
        out[:, 19] = 0.66904654355728921 * yz * (7.0 * z2 - 3.0)
        out[:, 20] = -3.1735664074561294 * z2 + 3.7024941420321507 * z2 * z2 + 0.31735664074561293
        out[:, 21] = 0.66904654355728921 * xz * (7.0 * z2 - 3.0)
        out[:, 22] = 0.47308734787878004 * (x2 - y2) * (7.0 * z2 - 1.0)
        out[:, 23] = 1.7701307697799304 * xz * (-x2 + 3.0 * y2)
        out[:, 24] = (-3.7550144126950569 * x2 * y2 + 0.62583573544917614 * x2 * x2
                      + 0.62583573544917614 * y2 * y2)
    return out[0] if scalar else out


def oneblob_encode(x, bins: int = 4) -> np.ndarray:
    """Gaussian (sigma = 1/bins) mass centered at x falling in each of ``bins`` equal bins.

    x is clamped to [0, 1]. A scalar gives a vector of length ``bins``,
    an array of shape S gives shape S + (bins,).
    """
    if bins < 1:
        raise ValidationError(f"OneBlob needs at least one bin, got {bins}")
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    sigma = 1.0 / bins
    edges = np.arange(bins + 1) / bins
    cdf = 0.5 * (1.0 + erf((edges - x[..., None]) / (sigma * math.sqrt(2.0))))
    return np.diff(cdf, axis=-1)


def softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


@dataclasses.dataclass
class ForwardCache:
    inputs: np.ndarray
    pre: list[np.ndarray]  # pre-activations per layer
    post: list[np.ndarray]  # activations feeding each layer (post[0] is the input)


class MLP:
    """ReLU hidden layers, softplus output; weights are (fan_in, fan_out)."""

    def __init__(self, n_inputs: int, hidden_layers: int = 3, hidden_width: int = 64,
                 n_outputs: int = 3, seed: int = 0, dtype=np.float64) -> None:
        if min(n_inputs, hidden_layers, hidden_width, n_outputs) < 1:
            raise ValidationError("MLP dimensions must all be >= 1")
        self.n_inputs = n_inputs
        self.n_outputs = n_outputs
        self.hidden_layers = hidden_layers
        self.hidden_width = hidden_width
        self.dtype = np.dtype(dtype)
        widths = [n_inputs] + [hidden_width] * hidden_layers + [n_outputs]
        rng = np.random.default_rng(seed)
        self.weights = [
            (rng.standard_normal((fan_in, fan_out)) * math.sqrt(2.0 / fan_in)).astype(self.dtype)
            for fan_in, fan_out in zip(widths[:-1], widths[1:], strict=True)
        ]
        self.biases = [np.zeros(fan_out, dtype=self.dtype) for fan_out in widths[1:]]
        self.weight_grads = [np.zeros_like(w) for w in self.weights]
        self.bias_grads = [np.zeros_like(b) for b in self.biases]

    def forward(self, inputs: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
        inputs = np.asarray(inputs)
        if inputs.ndim != 2 or inputs.shape[1] != self.n_inputs:
            raise ValidationError(
                f"MLP expects input of shape (n, {self.n_inputs}), got {inputs.shape}"
            )
        a = inputs.astype(self.dtype, copy=False)
        pre, post = [], [a]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases, strict=True)):
            z = a @ w + b
            pre.append(z)
            a = softplus(z) if i == last else np.maximum(z, 0.0)
            if i != last:
                post.append(a)
        return a, ForwardCache(inputs=inputs, pre=pre, post=post)

    def backward(self, cache: ForwardCache, upstream: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients; return d(loss)/d(inputs)."""
        g = np.asarray(upstream, dtype=self.dtype) * expit(cache.pre[-1])
        for i in range(len(self.weights) - 1, -1, -1):
            self.weight_grads[i] += cache.post[i].T @ g
            self.bias_grads[i] += g.sum(axis=0)
            g = g @ self.weights[i].T
            if i > 0:
                g = g * (cache.pre[i - 1] > 0.0)
        return g

    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases, strict=True) for p in pair]

    def grads(self) -> list[np.ndarray]:
        return [g for pair in zip(self.weight_grads, self.bias_grads, strict=True) for g in pair]

    def zero_grad(self) -> None:
        for g in self.grads():
            g.fill(0.0)

    def param_count(self) -> int:
        return sum(p.size for p in self.params())

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases, strict=True)):
            state[f"w{i}"] = w
            state[f"b{i}"] = b
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for i in range(len(self.weights)):
            w, b = np.asarray(state[f"w{i}"]), np.asarray(state[f"b{i}"])
            if w.shape != self.weights[i].shape or b.shape != self.biases[i].shape:
                raise ValidationError(f"layer {i} shape mismatch in MLP state")
            self.weights[i] = w.astype(self.dtype)
            self.biases[i] = b.astype(self.dtype)
        self.weight_grads = [np.zeros_like(w) for w in self.weights]
        self.bias_grads = [np.zeros_like(b) for b in self.biases]


def mlp_forward(params: MLP, inputs) -> np.ndarray:
    return params.forward(np.atleast_2d(inputs))[0]


def mlp_backward(params: MLP, inputs, upstream) -> np.ndarray:
    """Gradients for ``inputs`` after accumulating the parameter gradients."""
    _, cache = params.forward(np.atleast_2d(inputs))
    return params.backward(cache, np.atleast_2d(upstream))
