"""Dense multilayer perceptrons with hand-written backprop and Adam.

Everything is float64. ``forward`` accepts a single input vector or a batch
(rows are samples); ``backward`` returns gradients of
``sum(output * output_gradient)`` so batch losses must be scaled by the
caller.
"""

from dataclasses import dataclass, field
import io
import struct

import numpy as np

MAGIC = b"SPNN1"
_ACTIVATIONS = ("identity", "tanh")
_OPTIMIZERS = ("none", "adam", "sgd")


class NonFiniteError(FloatingPointError):
    """A loss or gradient contained NaN or inf."""


@dataclass
class MlpParams:
    layer_dims: list
    weights: list  # weights[k] has shape (layer_dims[k+1], layer_dims[k])
    biases: list
    output_activation: str = "identity"

    def __post_init__(self):
        if self.output_activation not in _ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_dims[k + 1], self.layer_dims[k]) or b.shape != (self.layer_dims[k + 1],):
                raise ValueError(f"layer {k} shapes do not match layer_dims {self.layer_dims}")

    @property
    def n_layers(self):
        return len(self.weights)

    def params(self):
        """Flat list [W0, b0, W1, b1, ...]; arrays are shared, not copied."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self):
        return MlpParams(list(self.layer_dims), [w.copy() for w in self.weights],
                         [b.copy() for b in self.biases], self.output_activation)

    def same_shape(self, other):
        return list(self.layer_dims) == list(other.layer_dims)


def init_mlp(layer_dims, rng, output_activation="identity"):
    """Glorot-uniform weights, zero biases."""
    dims = [int(d) for d in layer_dims]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-lim, lim, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(dims, weights, biases, output_activation)


def zeros_mlp(layer_dims, output_activation="identity"):
    dims = [int(d) for d in layer_dims]
    return MlpParams(dims, [np.zeros((o, i)) for i, o in zip(dims[:-1], dims[1:])],
                     [np.zeros(o) for o in dims[1:]], output_activation)


def forward(net, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    a = x[None, :] if single else x
    if a.shape[1] != net.layer_dims[0]:
        raise ValueError(f"input width {a.shape[1]} != {net.layer_dims[0]}")
    inputs = []
    last = net.n_layers - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(a)
        z = a @ w.T + b
        if k < last:
            a = np.maximum(z, 0.0)
        elif net.output_activation == "tanh":
            a = np.tanh(z)
        else:
            a = z
    cache = {"inputs": inputs, "output": a, "single": single}
    return (a[0] if single else a), cache


def backward(net, cache, output_gradient):
    """Returns (grads, input_gradient); grads follows ``net.params()`` order.

    ReLU uses subgradient 0 at a zero pre-activation.
    """
    out = cache["output"]
    g = np.asarray(output_gradient, dtype=float)
    g = g[None, :] if cache["single"] else g
    if g.shape != out.shape:
        raise ValueError(f"output gradient shape {g.shape} != output shape {out.shape}")
    if net.output_activation == "tanh":
        g = g * (1.0 - out * out)
    grads = [None] * (2 * net.n_layers)
    for k in range(net.n_layers - 1, -1, -1):
        a_in = cache["inputs"][k]
        grads[2 * k] = g.T @ a_in
        grads[2 * k + 1] = g.sum(axis=0)
        g = g @ net.weights[k]
        if k > 0:
            # a_in is the ReLU output of layer k-1; zero where the unit was off
            g = g * (a_in > 0.0)
    return grads, (g[0] if cache["single"] else g)


def grad_norm(grads):
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_grads(grads, max_norm):
    norm = grad_norm(grads)
    if max_norm is None or norm <= max_norm:
        return grads
    scale = max_norm / norm
    return [g * scale for g in grads]


@dataclass
class AdamState:
    first_moment: list
    second_moment: list
    step_count: int = 0
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    kind: str = "adam"  # "sgd" skips the moment estimates

    @classmethod
    def for_params(cls, net, learning_rate=0.01, kind="adam", **kw):
        if kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {kind!r}")
        return cls([np.zeros_like(p) for p in net.params()], [np.zeros_like(p) for p in net.params()],
                   learning_rate=learning_rate, kind=kind, **kw)


def adam_step(net, grads, opt):
    """Apply one in-place update to ``net``; refuses non-finite gradients."""
    params = net.params()
    if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
        raise ValueError("gradient shapes do not match parameters")
    if not all(np.all(np.isfinite(g)) for g in grads):
        raise NonFiniteError("non-finite gradient, update refused")
    opt.step_count += 1
    if opt.kind == "sgd":
        for p, g in zip(params, grads):
            p -= opt.learning_rate * g
        return net, opt
    t = opt.step_count
    c1 = 1.0 - opt.beta1 ** t
    c2 = 1.0 - opt.beta2 ** t
    for p, g, m, v in zip(params, grads, opt.first_moment, opt.second_moment):
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * (g * g)
        p -= opt.learning_rate * (m / c1) / (np.sqrt(v / c2) + opt.eps)
    return net, opt


# --- binary checkpoint records -------------------------------------------
#
# record := "SPNN1" u32 n_dims u32 dims[n_dims] u8 output_activation
#           (f64 W row-major, f64 b) per layer
#           u8 optimizer_kind [u64 step f64 lr f64 beta1 f64 beta2 f64 eps
#                              (f64 m, f64 v) per parameter array]
# all little-endian.


def _write_arrays(buf, arrays):
    for a in arrays:
        buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def _read_array(buf, shape):
    n = int(np.prod(shape))
    raw = buf.read(8 * n)
    if len(raw) != 8 * n:
        raise ValueError("truncated checkpoint record")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(float)


def write_record(buf, net, opt=None):
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(net.layer_dims)))
    buf.write(struct.pack(f"<{len(net.layer_dims)}I", *net.layer_dims))
    buf.write(struct.pack("<B", _ACTIVATIONS.index(net.output_activation)))
    _write_arrays(buf, net.params())
    if opt is None:
        buf.write(struct.pack("<B", 0))
        return
    buf.write(struct.pack("<B", _OPTIMIZERS.index(opt.kind)))
    buf.write(struct.pack("<Q4d", opt.step_count, opt.learning_rate, opt.beta1, opt.beta2, opt.eps))
    for m, v in zip(opt.first_moment, opt.second_moment):
        _write_arrays(buf, [m, v])


def read_record(buf):
    if buf.read(len(MAGIC)) != MAGIC:
        raise ValueError("bad checkpoint magic")
    (n,) = struct.unpack("<I", buf.read(4))
    dims = list(struct.unpack(f"<{n}I", buf.read(4 * n)))
    (act,) = struct.unpack("<B", buf.read(1))
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(_read_array(buf, (fan_out, fan_in)))
        biases.append(_read_array(buf, (fan_out,)))
    net = MlpParams(dims, weights, biases, _ACTIVATIONS[act])
    (kind,) = struct.unpack("<B", buf.read(1))
    if kind == 0:
        return net, None
    step_count, lr, b1, b2, eps = struct.unpack("<Q4d", buf.read(40))
    ms, vs = [], []
    for p in net.params():
        ms.append(_read_array(buf, p.shape))
        vs.append(_read_array(buf, p.shape))
    opt = AdamState(ms, vs, step_count, lr, b1, b2, eps, _OPTIMIZERS[kind])
    return net, opt


def dumps(net, opt=None):
    buf = io.BytesIO()
    write_record(buf, net, opt)
    return buf.getvalue()


def loads(data):
    return read_record(io.BytesIO(data))
