"""A small convolutional network in numpy: forward, backprop, Adam.

Images are NHWC float64 arrays of shape (batch, 24, 24, 1).  The default
stack is

    conv128 3x3 relu -> maxpool 2x2 -> conv64 3x3 relu -> maxpool 2x2 -> flatten
    -> dense800 relu -> dropout 0.2 -> dense400 relu -> dropout 0.2
    -> dense200 relu -> dense2 softmax

with valid convolutions (24 -> 22 -> 11 -> 9 -> 4, flatten width 1024).
"""

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .binfmt import load_arrays, save_arrays

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # conv2d | maxpool2d | flatten | dense | dropout
    channels: int = 0
    kernel: int = 3
    stride: int = 1
    units: int = 0
    rate: float = 0.0
    activation: str = ""


def table_layers(conv=(128, 64), dense=(800, 400, 200), dropout=0.2):
    c1, c2 = conv
    d1, d2, d3 = dense
    return [
        LayerSpec("conv2d", channels=c1, kernel=3, stride=1, activation="relu"),
        LayerSpec("maxpool2d", kernel=2, stride=2),
        LayerSpec("conv2d", channels=c2, kernel=3, stride=1, activation="relu"),
        LayerSpec("maxpool2d", kernel=2, stride=2),
        LayerSpec("flatten"),
        LayerSpec("dense", units=d1, activation="relu"),
        LayerSpec("dropout", rate=dropout),
        LayerSpec("dense", units=d2, activation="relu"),
        LayerSpec("dropout", rate=dropout),
        LayerSpec("dense", units=d3, activation="relu"),
        LayerSpec("dense", units=2, activation="softmax"),
    ]


DEFAULT_LAYERS = table_layers()
DESK_LAYERS = table_layers(conv=(16, 8), dense=(128, 64, 32))
TINY_LAYERS = table_layers(conv=(2, 2), dense=(8, 8, 8))


def _glorot(rng, shape, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _rows(a):
    """Contiguous 2-D view (pixels x channels) of a strided NHWC slice."""
    return np.ascontiguousarray(a).reshape(-1, a.shape[-1])


class Conv2D:
    """Valid, stride-1 cross-correlation.

    Shallow inputs use an explicit im2col matrix; deeper inputs accumulate one
    matmul per kernel offset, which avoids materializing the large column
    buffer.
    """

    def __init__(self, in_ch, out_ch, k, rng, activation):
        self.k = k
        self.activation = activation
        self.need_input_grad = True
        self.params = {
            "W": _glorot(rng, (k, k, in_ch, out_ch), k * k * in_ch, k * k * out_ch),
            "b": np.zeros(out_ch),
        }

    def out_shape(self, shape):
        h, w, _ = shape
        return (h - self.k + 1, w - self.k + 1, self.params["W"].shape[3])

    def _im2col(self, x):
        k = self.k
        B, H, W, C = x.shape
        win = sliding_window_view(x, (k, k), axis=(1, 2))  # B,Ho,Wo,C,k,k
        return win.transpose(0, 1, 2, 4, 5, 3).reshape(-1, k * k * C)

    def forward(self, x, training, rng):
        k = self.k
        B, H, W, C = x.shape
        Ho, Wo = H - k + 1, W - k + 1
        Wt = self.params["W"]
        self.x = x
        self.use_cols = k * k * C <= 64
        if self.use_cols:
            self.cols = self._im2col(x)
            z = self.cols @ Wt.reshape(k * k * C, -1)
            z = z.reshape(B, Ho, Wo, -1)
        else:
            z = np.zeros((B * Ho * Wo, Wt.shape[3]))
            for i in range(k):
                for j in range(k):
                    z += _rows(x[:, i : i + Ho, j : j + Wo, :]) @ Wt[i, j]
            z = z.reshape(B, Ho, Wo, -1)
        z += self.params["b"]
        if self.activation == "relu":
            np.maximum(z, 0.0, out=z)
        self.out = z
        return z

    def backward(self, g):
        if self.activation == "relu":
            g = g * (self.out > 0)
        x, k = self.x, self.k
        B, H, W, C = x.shape
        Ho, Wo = H - k + 1, W - k + 1
        Wt = self.params["W"]
        F = Wt.shape[3]
        g2 = g.reshape(-1, F)
        if self.use_cols:
            dW = (self.cols.T @ g2).reshape(Wt.shape)
        else:
            dW = np.empty_like(Wt)
            for i in range(k):
                for j in range(k):
                    dW[i, j] = _rows(x[:, i : i + Ho, j : j + Wo, :]).T @ g2
        self.grads = {"W": dW, "b": g2.sum(axis=0)}
        if not self.need_input_grad:
            return None
        dx = np.zeros((B, H, W, C))
        for i in range(k):
            for j in range(k):
                dx[:, i : i + Ho, j : j + Wo, :] += (g2 @ Wt[i, j].T).reshape(B, Ho, Wo, C)
        return dx


class MaxPool2D:
    """2x2 / stride-2 pooling; odd trailing rows and columns are dropped.

    The gradient goes to the first maximal element of each window in
    row-major order.
    """

    params = {}
    grads = {}

    def out_shape(self, shape):
        h, w, c = shape
        return (h // 2, w // 2, c)

    def _windows(self, x):
        Ho, Wo = x.shape[1] // 2, x.shape[2] // 2
        return [x[:, di : 2 * Ho : 2, dj : 2 * Wo : 2, :] for di in (0, 1) for dj in (0, 1)]

    def forward(self, x, training, rng):
        self.x = x
        a, b, c, d = self._windows(x)
        self.out = np.maximum(np.maximum(a, b), np.maximum(c, d))
        return self.out

    def backward(self, g):
        x = self.x
        dx = np.zeros_like(x)
        Ho, Wo = x.shape[1] // 2, x.shape[2] // 2
        taken = np.zeros(self.out.shape, dtype=bool)
        for (di, dj), w in zip(((0, 0), (0, 1), (1, 0), (1, 1)), self._windows(x)):
            hit = (w == self.out) & ~taken
            taken |= hit
            dx[:, di : 2 * Ho : 2, dj : 2 * Wo : 2, :] = g * hit
        return dx


class Flatten:
    params = {}
    grads = {}

    def out_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x, training, rng):
        self.shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, g):
        return g.reshape(self.shape)


class Dense:
    def __init__(self, n_in, n_out, rng, activation):
        self.activation = activation
        self.params = {"W": _glorot(rng, (n_in, n_out), n_in, n_out), "b": np.zeros(n_out)}

    def out_shape(self, shape):
        return (self.params["W"].shape[1],)

    def forward(self, x, training, rng):
        self.x = x
        z = x @ self.params["W"] + self.params["b"]
        if self.activation == "relu":
            self.mask = z > 0
            return z * self.mask
        if self.activation == "softmax":
            z = z - z.max(axis=1, keepdims=True)
            e = np.exp(z)
            return e / e.sum(axis=1, keepdims=True)
        return z

    def backward(self, g):
        # For the softmax head, ``g`` is already the gradient w.r.t. the logits.
        if self.activation == "relu":
            g = g * self.mask
        self.grads = {"W": self.x.T @ g, "b": g.sum(axis=0)}
        return g @ self.params["W"].T


class Dropout:
    """Inverted dropout: survivors are scaled by 1 / keep so the expectation is unchanged."""

    params = {}
    grads = {}

    def __init__(self, rate):
        self.rate = rate

    def out_shape(self, shape):
        return shape

    def forward(self, x, training, rng):
        if not training or self.rate == 0.0:
            self.mask = None
            return x
        keep = 1.0 - self.rate
        self.mask = (rng.random(x.shape) < keep) / keep
        return x * self.mask

    def backward(self, g):
        return g if self.mask is None else g * self.mask


class CnnModel:
    def __init__(self, layers=DEFAULT_LAYERS, input_shape=(24, 24, 1), seed=0):
        self.specs = list(layers)
        self.input_shape = tuple(input_shape)
        rng = np.random.default_rng(seed)
        self.layers = []
        self.shapes = [self.input_shape]
        shape = self.input_shape
        for s in self.specs:
            if s.kind == "conv2d":
                if s.stride != 1:
                    raise ValueError("only stride-1 convolutions are supported")
                layer = Conv2D(shape[2], s.channels, s.kernel, rng, s.activation)
            elif s.kind == "maxpool2d":
                if (s.kernel, s.stride) != (2, 2):
                    raise ValueError("only 2x2 / stride-2 pooling is supported")
                layer = MaxPool2D()
            elif s.kind == "flatten":
                layer = Flatten()
            elif s.kind == "dense":
                if len(shape) != 1:
                    raise ValueError("dense layer needs a flattened input")
                layer = Dense(shape[0], s.units, rng, s.activation)
            elif s.kind == "dropout":
                layer = Dropout(s.rate)
            else:
                raise ValueError(f"unknown layer kind {s.kind!r}")
            shape = layer.out_shape(shape)
            if not self.layers and isinstance(layer, Conv2D):
                layer.need_input_grad = False
            self.layers.append(layer)
            self.shapes.append(shape)
        if self.specs[-1].activation != "softmax":
            raise ValueError("the last layer must be a softmax dense layer")
        self.training = False

    def parameters(self):
        """(layer index, name, array) for every trainable tensor, in a fixed order."""
        return [(i, k, v) for i, l in enumerate(self.layers) for k, v in l.params.items()]

    def forward(self, x, training=False, rng=None):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 3:
            x = x[..., None]
        if x.shape[1:] != self.input_shape:
            raise ValueError(f"expected input of shape (batch, {self.input_shape}), got {x.shape}")
        if training and rng is None:
            raise ValueError("training mode needs a generator for dropout masks")
        for layer in self.layers:
            x = layer.forward(x, training, rng)
        return x

    def backward(self, probs, labels):
        """Backpropagate mean cross-entropy from the cached forward pass; returns grads aligned with parameters()."""
        labels = np.asarray(labels, dtype=np.int64)
        g = probs.copy()
        g[np.arange(len(labels)), labels] -= 1.0
        g /= len(labels)
        for layer in reversed(self.layers):
            g = layer.backward(g)
            if g is None:
                break
        return [self.layers[i].grads[k] for i, k, _ in self.parameters()]

    def predict_proba(self, x, batch_size=500):
        x = np.asarray(x, dtype=np.float64)
        out = [self.forward(x[i : i + batch_size], training=False) for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros((0, 2))

    def predict(self, x):
        return np.argmax(self.predict_proba(x), axis=1)

    def save(self, path):
        arrays = {f"{i}.{k}": v for i, k, v in self.parameters()}
        meta = {"input_shape": list(self.input_shape), "layers": [s.__dict__ for s in self.specs]}
        save_arrays(path, "cnn", arrays, meta)

    @classmethod
    def load(cls, path):
        meta, arrays = load_arrays(path, "cnn")
        model = cls([LayerSpec(**d) for d in meta["layers"]], tuple(meta["input_shape"]))
        for i, k, v in model.parameters():
            v[...] = arrays[f"{i}.{k}"]
        return model


def check_shapes(model):
    """The default stack must produce the 24 -> 22 -> 11 -> 9 -> 4 ladder and a 1024-wide flatten."""
    spatial = [s[0] for s in model.shapes[:5]]
    if spatial != [24, 22, 11, 9, 4] or model.shapes[5] != (1024,):
        raise AssertionError(f"unexpected shape ladder {model.shapes}")


def loss(probs, labels):
    """Sparse categorical cross-entropy (mean of -log p[label], floored at 1e-12)."""
    labels = np.asarray(labels, dtype=np.int64)
    p = probs[np.arange(len(labels)), labels]
    return float(np.mean(-np.log(np.maximum(p, PROB_FLOOR))))


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-7):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1**t)
            v_hat = v / (1.0 - b2**t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def train(model, X, y, epochs=15, batch_size=200, adam=None, rng=None, log=None):
    """Minibatch Adam on shuffled data; returns the per-epoch mean training loss."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        X = X[..., None]
    y = np.asarray(y, dtype=np.int64)
    rng = rng if rng is not None else np.random.default_rng(0)
    params = [p for _, _, p in model.parameters()]
    adam = adam if adam is not None else Adam(params)
    history = []
    for epoch in range(epochs):
        perm = rng.permutation(len(X))
        total = 0.0
        for start in range(0, len(X), batch_size):
            idx = perm[start : start + batch_size]
            probs = model.forward(X[idx], training=True, rng=rng)
            batch_loss = loss(probs, y[idx])
            if not math.isfinite(batch_loss):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch}, batch starting {start}; "
                    f"max |param| = {max(float(np.abs(p).max()) for p in params):.3e}"
                )
            total += batch_loss * len(idx)
            grads = model.backward(probs, y[idx])
            adam.step(params, grads)
        history.append(total / len(X))
        if log is not None:
            log(f"epoch {epoch + 1}/{epochs} loss {history[-1]:.4f}")
    model.training = False
    return history
