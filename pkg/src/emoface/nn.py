"""Feed-forward networks, the Adam optimizer, and a finite-difference checker."""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tape, Tensor

ACTIVATIONS = {
    "tanh": ad.tanh,
    "sigmoid": ad.sigmoid,
    "softplus": ad.softplus,
    None: lambda t: t,
}


@dataclass
class MLP:
    """Dense layers; `hidden` applies between layers, `output` after the last."""

    weights: list
    biases: list
    hidden: str = "tanh"
    output: str | None = None

    @property
    def in_width(self):
        return self.weights[0].shape[0]

    @property
    def out_width(self):
        return self.weights[-1].shape[1]

    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def named_params(self, prefix):
        out = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out.append((f"{prefix}.w{i}", w))
            out.append((f"{prefix}.b{i}", b))
        return out


def uniform_init(rng, shape, fan_in, dtype=np.float64):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def mlp_init(sizes, rng, hidden="tanh", output=None, dtype=np.float64):
    """Build an MLP with weights uniform in +-1/sqrt(fan_in)."""
    if len(sizes) < 2:
        raise ValueError("mlp needs at least input and output widths")
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        weights.append(Tensor(uniform_init(rng, (n_in, n_out), n_in, dtype), dtype=dtype))
        biases.append(Tensor(uniform_init(rng, (n_out,), n_in, dtype), dtype=dtype))
    return MLP(weights, biases, hidden=hidden, output=output)


def mlp_apply(net, x):
    """Forward `x` (width in_width, or batch of rows) through the network."""
    xd = x.data if isinstance(x, Tensor) else np.asarray(x)
    if xd.shape[-1] != net.in_width:
        raise DimensionError(
            f"mlp input width {xd.shape[-1]} != expected {net.in_width}")
    act = ACTIVATIONS[net.hidden]
    h = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = ad.add(ad.matmul(h, w), b)
        h = ACTIVATIONS[net.output](h) if i == last else act(h)
    return h


@dataclass
class AdamState:
    """Moment accumulators for one parameter list; step counts from 0."""

    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_init(params, lr=5e-4, beta1=0.9, beta2=0.999, eps=1e-8):
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    state.m = [np.zeros_like(p.data) for p in params]
    state.v = [np.zeros_like(p.data) for p in params]
    return state


def adam_step(state, params, grads, lr=None):
    """One bias-corrected Adam update, in place on `params`."""
    if len(params) != len(state.m):
        raise DimensionError("parameter count does not match optimizer state")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    alpha = state.lr if lr is None else lr
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.zeros_like(p.data) if g is None else g
        if g.shape != p.data.shape:
            raise DimensionError(f"gradient shape {g.shape} != param shape {p.data.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= alpha * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


class GradCheckError(RuntimeError):
    pass


def grad_check(f, x, eps=1e-5, coords=None, rng=None):
    """Max relative error between tape gradients and central differences.

    `f` maps a Tensor to a scalar Tensor and must be pure. `coords` caps how
    many coordinates are probed (seeded subset via `rng`); default is all.
    Relative error is |analytic - central| / max(1, |central|).
    """
    x.grad = None
    with Tape() as tape:
        out = f(x)
    if out.data.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    tape.backward(out)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    x.grad = None

    flat = x.data.reshape(-1)
    aflat = analytic.reshape(-1)
    idxs = np.arange(flat.size)
    if coords is not None and coords < flat.size:
        rng = np.random.default_rng(0) if rng is None else rng
        idxs = rng.choice(flat.size, size=coords, replace=False)
    max_rel = 0.0
    for i in idxs:
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x).data)
        flat[i] = orig - eps
        fm = float(f(x).data)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise GradCheckError(f"non-finite value probing coordinate {int(i)}")
        central = (fp - fm) / (2.0 * eps)
        rel = abs(aflat[i] - central) / max(1.0, abs(central))
        if rel > max_rel:
            max_rel = rel
    return max_rel
