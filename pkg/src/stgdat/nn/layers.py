"""Dense, convolution and GRU layers built on :mod:`stgdat.nn.tensor`."""
from __future__ import annotations



from . import tensor as tt

LEAKY_SLOPE = 0.2

ACTIVATIONS = {
    "none": lambda x: x,
    "leaky_relu": lambda x: tt.leaky_relu(x, LEAKY_SLOPE),
    "tanh": tt.tanh,
    "sigmoid": tt.sigmoid,
}


def activate(x, activation):
    try:
        fn = ACTIVATIONS[activation]
    except KeyError:
        raise ValueError(f"unknown activation {activation!r}") from None
    return fn(x)


def dense_forward(inputs, weights, bias, activation="none"):
    """Affine map ``inputs @ weights + bias`` followed by ``activation``."""
    inputs, weights, bias = tt.as_tensor(inputs), tt.as_tensor(weights), tt.as_tensor(bias)
    if weights.ndim != 2 or inputs.shape[-1] != weights.shape[0]:
        raise ValueError(
            f"dense shape mismatch: input {inputs.shape} (last dim {inputs.shape[-1]}) "
            f"vs weights {weights.shape} (rows {weights.shape[0] if weights.ndim else None})"
        )
    if bias.shape != (weights.shape[1],):
        raise ValueError(f"bias shape {bias.shape} does not match weights {weights.shape}")
    return activate(tt.matmul(inputs, weights) + bias, activation)


class Dense:
    def __init__(self, store, name, n_in, n_out, rng, activation="none"):
        self.name = name
        self.activation = activation
        self.w = store.glorot(f"{name}.w", (n_in, n_out), rng)
        self.b = store.zeros(f"{name}.b", (n_out,))

    def __call__(self, x):
        return dense_forward(x, self.w, self.b, self.activation)


class MLP:
    """Stack of dense layers; hidden layers share one activation."""

    def __init__(self, store, name, sizes, rng, activation="leaky_relu", out_activation="none"):
        self.layers = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            act = out_activation if i == len(sizes) - 2 else activation
            self.layers.append(Dense(store, f"{name}.{i}", a, b, rng, act))

    def __call__(self, x):
        for layer in self.layers:
            x = layer(x)
        return x


def gru_step(hidden, inputs, params):
    """One GRU update.

    ``params`` maps ``w`` (in, 3H), ``u`` (H, 3H), ``b`` (3H,) with gate blocks
    ordered (update, reset, candidate)::

        z = sigmoid(x Wz + h Uz + bz)
        r = sigmoid(x Wr + h Ur + br)
        n = tanh(x Wn + r * (h Un) + bn)
        h' = (1 - z) * n + z * h
    """
    hidden, inputs = tt.as_tensor(hidden), tt.as_tensor(inputs)
    w, u, b = params["w"], params["u"], params["b"]
    H = u.shape[0]
    if hidden.shape[-1] != H or inputs.shape[-1] != w.shape[0] or w.shape[1] != 3 * H:
        raise ValueError(
            f"gru shape mismatch: hidden {hidden.shape}, input {inputs.shape}, w {w.shape}, u {u.shape}"
        )
    xw = tt.matmul(inputs, w) + b
    hu = tt.matmul(hidden, u)
    z = tt.sigmoid(xw[..., :H] + hu[..., :H])
    r = tt.sigmoid(xw[..., H : 2 * H] + hu[..., H : 2 * H])
    n = tt.tanh(xw[..., 2 * H :] + r * hu[..., 2 * H :])
    return (1.0 - z) * n + z * hidden


class GRUCell:
    def __init__(self, store, name, n_in, n_hidden, rng):
        self.n_hidden = n_hidden
        self.params = {
            "w": store.glorot(f"{name}.w", (n_in, 3 * n_hidden), rng, n_in, n_hidden),
            "u": store.glorot(f"{name}.u", (n_hidden, 3 * n_hidden), rng, n_hidden, n_hidden),
            "b": store.zeros(f"{name}.b", (3 * n_hidden,)),
        }

    def __call__(self, hidden, inputs):
        return gru_step(hidden, inputs, self.params)


def conv2d_forward(inputs, kernels, bias=None, stride=1, padding=0):
    """Cross-correlation of an (H, W, C) grid or (B, H, W, C) batch."""
    x = tt.as_tensor(inputs)
    squeeze = x.ndim == 3
    if squeeze:
        x = tt.reshape(x, (1,) + x.shape)
    out = tt.conv2d(x, kernels, bias, stride, padding)
    if squeeze:
        out = tt.reshape(out, out.shape[1:])
    return out


class Conv2d:
    def __init__(self, store, name, c_in, c_out, rng, kernel=3, stride=2, padding=1, activation="leaky_relu"):
        fan_in, fan_out = kernel * kernel * c_in, kernel * kernel * c_out
        self.k = store.glorot(f"{name}.k", (kernel, kernel, c_in, c_out), rng, fan_in, fan_out)
        self.b = store.zeros(f"{name}.b", (c_out,))
        self.stride, self.padding, self.activation = stride, padding, activation

    def __call__(self, x):
        return activate(tt.conv2d(x, self.k, self.b, self.stride, self.padding), self.activation)

