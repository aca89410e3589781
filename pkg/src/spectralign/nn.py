"""Small fully-connected networks with explicit reverse-mode gradients.

Both deformation fields in the pipeline are plain MLPs evaluated row-wise
on per-vertex feature matrices. The forward/backward pair below plus the
Adam step is the entire training machinery: full batch, no graphs, no GPU.
"""

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .errors import NumericalError

__all__ = [
    "MlpField",
    "AdamState",
    "adam_step",
    "mlp_forward",
    "mlp_backward",
    "backward_from_cache",
    "cosine_lr",
]


def cosine_lr(base, it, total, floor_fraction=0.0):
    """Cosine step-size decay from ``base`` toward zero.

    A constant Adam step size leaves parameters bouncing at a radius
    proportional to it; annealing to zero lets full-batch fits settle
    onto fixed points instead of hovering at the final step size.
    """
    lo = floor_fraction * base
    return lo + 0.5 * (base - lo) * (1.0 + np.cos(np.pi * it / max(total - 1, 1)))

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _gelu(z):
    return 0.5 * z * (1.0 + erf(z / _SQRT2))


def _gelu_grad(z):
    return 0.5 * (1.0 + erf(z / _SQRT2)) + z * _INV_SQRT_2PI * np.exp(-0.5 * z * z)


_ACTIVATIONS = {
    "gelu": (_gelu, _gelu_grad),
    "identity": (lambda z: z, lambda z: np.ones_like(z)),
}


@dataclass
class MlpField:
    """Fully-connected network parameters, one weight/bias pair per layer.

    Hidden layers use a smooth activation (default GELU); the output layer
    is linear. ``zero_last=True`` zero-initializes the final layer so the
    field starts as the zero map, which is the contract both deformation
    stages rely on at iteration 0.
    """

    weights: list
    biases: list
    activation: str = "gelu"

    @classmethod
    def create(cls, widths, rng, activation="gelu", zero_last=True):
        """Fresh network for the given layer widths, e.g. [K, 256, 256, 3].

        Hidden layers draw from the uniform fan-in distribution
        U(-1/sqrt(d_in), 1/sqrt(d_in)).
        """
        if len(widths) < 2:
            raise ValueError("need at least input and output widths")
        weights, biases = [], []
        for a, b in zip(widths[:-1], widths[1:]):
            bound = 1.0 / np.sqrt(a)
            weights.append(rng.uniform(-bound, bound, size=(a, b)))
            biases.append(rng.uniform(-bound, bound, size=b))
        if zero_last:
            weights[-1][:] = 0.0
            biases[-1][:] = 0.0
        return cls(weights=weights, biases=biases, activation=activation)

    @property
    def widths(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def d_in(self):
        return self.weights[0].shape[0]

    @property
    def d_out(self):
        return self.weights[-1].shape[1]

    @property
    def n_params(self):
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def parameters(self):
        """Flat list of parameter arrays (weights then bias per layer)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def set_parameters(self, params):
        it = iter(params)
        for i in range(len(self.weights)):
            self.weights[i] = next(it)
            self.biases[i] = next(it)

    def save(self, path):
        """Checkpoint: widths header then row-major float64 per layer."""
        widths = self.widths
        with open(path, "wb") as fh:
            fh.write(b"MLPF")
            fh.write(struct.pack("<q", len(widths)))
            fh.write(np.asarray(widths, dtype="<i8").tobytes())
            tag = self.activation.encode("ascii")
            fh.write(struct.pack("<q", len(tag)))
            fh.write(tag)
            for w, b in zip(self.weights, self.biases):
                fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
                fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            if fh.read(4) != b"MLPF":
                raise NumericalError(f"{path}: not an MLP checkpoint")
            (nw,) = struct.unpack("<q", fh.read(8))
            widths = np.frombuffer(fh.read(8 * nw), dtype="<i8").tolist()
            (nt,) = struct.unpack("<q", fh.read(8))
            activation = fh.read(nt).decode("ascii")
            weights, biases = [], []
            for a, b in zip(widths[:-1], widths[1:]):
                weights.append(
                    np.frombuffer(fh.read(8 * a * b), dtype="<f8").reshape(a, b).copy()
                )
                biases.append(np.frombuffer(fh.read(8 * b), dtype="<f8").copy())
        return cls(weights=weights, biases=biases, activation=activation)


def mlp_forward(net, X, cache=None):
    """Row-wise evaluation of the network on an (n, d_in) matrix.

    Pass a list as ``cache`` to record pre-activations for a subsequent
    backward call.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.d_in:
        raise ValueError(f"input must be (n, {net.d_in}), got {X.shape}")
    act = _ACTIVATIONS[net.activation][0]
    a = X
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w + b
        if i < last:
            if cache is not None:
                cache.append((a, z))
            a = act(z)
        else:
            if cache is not None:
                cache.append((a, z))
            a = z
    return a


def mlp_backward(net, X, upstream):
    """Gradients of sum(upstream * forward(X)) by reverse mode.

    Parameters
    ----------
    net : MlpField
    X : ndarray
        (n, d_in) inputs of the forward pass.
    upstream : ndarray
        (n, d_out) cotangent of the network output.

    Returns
    -------
    grads : list
        Arrays matching ``net.parameters()`` order.
    d_input : ndarray
        (n, d_in) gradient with respect to X.
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    cache = []
    out = mlp_forward(net, X, cache=cache)
    if upstream.shape != out.shape:
        raise ValueError(f"upstream must be {out.shape}, got {upstream.shape}")
    return backward_from_cache(net, cache, upstream)


def backward_from_cache(net, cache, upstream):
    """Reverse pass reusing pre-activations recorded by ``mlp_forward``.

    Training loops call forward once with a cache and this afterwards,
    avoiding the recomputation ``mlp_backward`` does for the standalone
    API.
    """
    dact = _ACTIVATIONS[net.activation][1]
    grads = [None] * (2 * len(net.weights))
    delta = upstream
    for i in range(len(net.weights) - 1, -1, -1):
        a_prev, z = cache[i]
        if i < len(net.weights) - 1:
            delta = delta * dact(z)
        grads[2 * i] = a_prev.T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        delta = delta @ net.weights[i].T
    return grads, delta


@dataclass
class AdamState:
    """First/second moment accumulators for one parameter list."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )


def adam_step(state, params, grads):
    """One bias-corrected adaptive update; returns the new parameter list.

    Raises
    ------
    NumericalError
        If any gradient is non-finite, naming the offending tensor.
    """
    if len(params) != len(state.m) or len(params) != len(grads):
        raise ValueError("parameter/gradient/state length mismatch")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient for parameter tensor {i}")
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        mhat = state.m[i] / c1
        vhat = state.v[i] / c2
        out.append(p - state.lr * mhat / (np.sqrt(vhat) + state.eps))
    return out
