"""Minimal dense-network substrate: forward/backward passes, ELU, Adam,
and finite-difference gradient verification.

Everything is float64 and pure: forward/backward never mutate the net,
``adam_step`` returns fresh arrays.  All model heads in the library are
built from :class:`DenseNet`.
"""

from dataclasses import dataclass

import numpy as np


def elu(x):
    """ELU with alpha=1: x for x >= 0, exp(x)-1 below."""
    return np.where(x >= 0.0, x, np.expm1(np.minimum(x, 0.0)))


def elu_grad(x):
    """Derivative of ELU at pre-activation x (continuous at 0)."""
    return np.where(x >= 0.0, 1.0, np.exp(np.minimum(x, 0.0)))


class ShapeError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


class DenseNet:
    """Fully connected net with ELU hidden activations and identity output.

    Weight matrices are (out_dim, in_dim); layer dims must chain and all
    parameters must be finite.
    """

    def __init__(self, weights, biases):
        if len(weights) != len(biases):
            raise ShapeError("weights and biases must pair up")
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ShapeError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i > 0 and w.shape[1] != weights[i - 1].shape[0]:
                raise ShapeError(
                    f"layer {i}: in_dim {w.shape[1]} != previous out_dim {weights[i - 1].shape[0]}"
                )
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise NumericError(f"layer {i}: non-finite parameters")
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]

    @classmethod
    def init(cls, dims, rng):
        """Random net with layer sizes ``dims`` (e.g. [4, 64, 64, 2])."""
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            weights.append(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def in_dim(self):
        return self.weights[0].shape[1]

    @property
    def out_dim(self):
        return self.weights[-1].shape[0]

    @property
    def params(self):
        """Flat parameter list [W0, b0, W1, b1, ...] (live arrays)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def set_params(self, params):
        n = len(self.weights)
        if len(params) != 2 * n:
            raise ShapeError(f"expected {2 * n} parameter arrays, got {len(params)}")
        for i in range(n):
            w, b = params[2 * i], params[2 * i + 1]
            if w.shape != self.weights[i].shape or b.shape != self.biases[i].shape:
                raise ShapeError(f"layer {i}: shape mismatch on set_params")
            self.weights[i] = np.asarray(w, dtype=np.float64)
            self.biases[i] = np.asarray(b, dtype=np.float64)

    def forward(self, x):
        y, _ = self.forward_cached(x)
        return y

    def forward_cached(self, x):
        """Forward pass returning (output, cache) for a later backward call."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.shape[-1] != self.in_dim:
            raise ShapeError(f"input dim {h.shape[-1]} != net in_dim {self.in_dim}")
        pre = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = h @ w.T + b
            pre.append(a)
            h = a if i == len(self.weights) - 1 else elu(a)
        out = h[0] if single else h
        return out, (x, pre, single)

    def backward(self, cache, grad_out):
        """Backprop an upstream gradient through a cached forward pass.

        Returns (param_grads, input_grad); param_grads matches ``params``.
        """
        x, pre, single = cache
        g = np.asarray(grad_out, dtype=np.float64)
        if single:
            g = g[None, :]
        if g.shape != pre[-1].shape:
            raise ShapeError(f"upstream gradient shape {g.shape} != output {pre[-1].shape}")
        x2d = x[None, :] if single else x
        grads = [None] * (2 * len(self.weights))
        d = g
        for i in reversed(range(len(self.weights))):
            if i < len(self.weights) - 1:
                d = d * elu_grad(pre[i])
            h_prev = x2d if i == 0 else elu(pre[i - 1])
            grads[2 * i] = d.T @ h_prev
            grads[2 * i + 1] = d.sum(axis=0)
            d = d @ self.weights[i]
        grad_in = d[0] if single else d
        return grads, grad_in


def zeros_like_params(params):
    return [np.zeros_like(p) for p in params]


def add_params(acc, grads, scale=1.0):
    """acc += scale * grads, in place."""
    for a, g in zip(acc, grads):
        a += scale * g
    return acc


@dataclass(frozen=True)
class AdamState:
    """Adam accumulators shaped like the tracked parameters."""

    m: tuple
    v: tuple
    t: int
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        return cls(
            m=tuple(np.zeros_like(p) for p in params),
            v=tuple(np.zeros_like(p) for p in params),
            t=0,
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


def adam_step(state, params, grads):
    """One bias-corrected Adam update; returns (new_params, new_state)."""
    if len(params) != len(state.m) or len(grads) != len(state.m):
        raise ShapeError("params/grads do not match the Adam state")
    for i, g in enumerate(grads):
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {i}")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m2 = b1 * m + (1.0 - b1) * g
        v2 = b2 * v + (1.0 - b2) * g * g
        mhat = m2 / (1.0 - b1**t)
        vhat = v2 / (1.0 - b2**t)
        new_params.append(p - state.lr * mhat / (np.sqrt(vhat) + state.eps))
        new_m.append(m2)
        new_v.append(v2)
    new_state = AdamState(
        m=tuple(new_m), v=tuple(new_v), t=t,
        lr=state.lr, beta1=b1, beta2=b2, eps=state.eps,
    )
    return new_params, new_state


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    worst_param: int
    worst_coord: int
    h: float


def grad_check_params(loss_fn, params, h=1e-5, max_coords_per_param=None, rng=None,
                      noise_floor=1e-8):
    """Compare analytic gradients against central finite differences.

    ``loss_fn(params) -> (loss, grads)`` must be deterministic.  Relative
    error per coordinate is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8);
    the report carries the worst coordinate.  Coordinates where
    |analytic - numeric| <= noise_floor count as consistent: central
    differences cannot resolve an exactly-zero gradient below rounding noise
    (~eps * |loss| / h), and a genuine defect shows up at the gradient's own
    scale.  ``max_coords_per_param`` limits the check to a random subsample
    for large parameter arrays.
    """
    params = [np.array(p, dtype=np.float64) for p in params]
    _, grads = loss_fn(params)
    worst = (0.0, 0, 0)
    for pi, (p, g) in enumerate(zip(params, grads)):
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords_per_param is not None and flat.size > max_coords_per_param:
            if rng is None:
                raise ValueError("rng required when subsampling coordinates")
            idx = rng.choice(flat.size, size=max_coords_per_param, replace=False)
        for ci in idx:
            orig = flat[ci]
            flat[ci] = orig + h
            lo_plus, _ = loss_fn(params)
            flat[ci] = orig - h
            lo_minus, _ = loss_fn(params)
            flat[ci] = orig
            numeric = (lo_plus - lo_minus) / (2.0 * h)
            analytic = g.reshape(-1)[ci]
            gap = abs(analytic - numeric)
            if gap <= noise_floor:
                continue
            rel = gap / max(abs(analytic), abs(numeric), 1e-8)
            if rel > worst[0]:
                worst = (rel, pi, int(ci))
    return GradCheckReport(max_rel_error=float(worst[0]), worst_param=worst[1],
                           worst_coord=worst[2], h=h)


def grad_check(net, loss_fn, batch, h=1e-5):
    """Finite-difference check of a scalar loss over a net's parameters.

    ``loss_fn(net, batch) -> (loss, param_grads)``.
    """
    def on_params(params):
        net.set_params(params)
        return loss_fn(net, batch)

    original = [p.copy() for p in net.params]
    try:
        return grad_check_params(on_params, original, h=h)
    finally:
        net.set_params(original)


CHECKPOINT_FORMAT = "infoprior-params"
CHECKPOINT_VERSION = 1


def params_to_doc(named_nets, extra=None):
    """Serialize named DenseNets into a plain JSON-ready document.

    Arrays are stored row-major with their shapes; the document carries a
    format tag and version so readers can reject unknown layouts.
    """
    doc = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "nets": {}}
    for name, net in named_nets.items():
        doc["nets"][name] = {
            "dims": [net.in_dim] + [w.shape[0] for w in net.weights],
            "weights": [w.reshape(-1).tolist() for w in net.weights],
            "biases": [b.tolist() for b in net.biases],
        }
    if extra:
        doc.update(extra)
    return doc


def params_from_doc(doc):
    """Rebuild {name: DenseNet} from a document written by params_to_doc."""
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unknown checkpoint format {doc.get('format')!r}")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    nets = {}
    for name, spec in doc["nets"].items():
        dims = spec["dims"]
        weights = [
            np.array(flat, dtype=np.float64).reshape(dims[i + 1], dims[i])
            for i, flat in enumerate(spec["weights"])
        ]
        biases = [np.array(b, dtype=np.float64) for b in spec["biases"]]
        nets[name] = DenseNet(weights, biases)
    return nets
