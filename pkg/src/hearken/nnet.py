"""Minimal dense-tensor neural network engine.

A network is a fixed sequential chain of layers (3x3 valid convolutions,
max pooling with stride equal to pool size, ReLU, flatten, fully connected,
inverted dropout, softmax) operating on numpy arrays.  Training minimizes
cross entropy with an L1 penalty on the weights via mini-batch SGD with
momentum.  Everything supports float32 compute with a float64 copy for
finite-difference gradient verification.

Conventions:
    - Batches are (N, C, H, W) for spatial layers and (N, D) after flatten.
    - `forward(x, mode, rng)` caches whatever `backward(dy)` needs; dropout is
      the only layer whose behavior differs between train and eval mode.
    - Parameter gradients accumulate into `layer.dW` / `layer.db` on backward.
"""

import numpy as np

from hearken import kernels
from hearken.errors import DomainError, ShapeError

EPS_PROB = 1e-12


class Layer:
    kind = "layer"

    def forward(self, x, mode="train", rng=None):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def param_items(self):
        return []

    def grad_items(self):
        return []

    def zero_grads(self):
        pass

    def out_shape(self, shape):
        """Shape algebra for one sample (no batch dim)."""
        return shape

    def astype(self, dtype):
        return self


class _ParamLayer(Layer):
    """Shared W/b bookkeeping; gradient buffers materialize on first use."""

    def __init__(self):
        self.W = None
        self.b = None
        self.dW = None
        self.db = None

    def _ensure_grads(self):
        if self.dW is None:
            self.dW = np.zeros(self.W.shape, dtype=self.W.dtype)
            self.db = np.zeros(self.b.shape, dtype=self.b.dtype)

    def param_items(self):
        return [("W", self.W), ("b", self.b)]

    def grad_items(self):
        self._ensure_grads()
        return [("W", self.dW), ("b", self.db)]

    def zero_grads(self):
        if self.dW is None:
            self._ensure_grads()
        else:
            self.dW[...] = 0.0
            self.db[...] = 0.0


class Conv3x3(_ParamLayer):
    """3x3 convolution, stride 1, no padding: (C,H,W) -> (O,H-2,W-2)."""

    kind = "conv3x3"

    def __init__(self, c_in, c_out, dtype=np.float32):
        super().__init__()
        self.c_in = c_in
        self.c_out = c_out
        self.W = np.zeros((c_out, c_in, 3, 3), dtype=dtype)
        self.b = np.zeros(c_out, dtype=dtype)
        self._x = None

    def init_params(self, rng):
        fan_in = self.c_in * 9
        self.W[...] = (rng.standard_normal(self.W.shape) * np.sqrt(2.0 / fan_in)).astype(self.W.dtype)
        self.b[...] = 0.0

    def forward(self, x, mode="train", rng=None):
        self._x = x
        return kernels.conv3x3_forward(x, self.W, self.b)

    def backward(self, dy):
        dx, dw, db = kernels.conv3x3_backward(self._x, self.W, dy)
        self._ensure_grads()
        self.dW += dw
        self.db += db
        return dx

    def out_shape(self, shape):
        c, h, w = shape
        if c != self.c_in:
            raise ShapeError(f"conv3x3 expects {self.c_in} input maps, got {c}")
        if h < 3 or w < 3:
            raise ShapeError(f"conv3x3 input {h}x{w} smaller than the kernel")
        return (self.c_out, h - 2, w - 2)

    def astype(self, dtype):
        other = Conv3x3(self.c_in, self.c_out, dtype=dtype)
        other.W = self.W.astype(dtype)
        other.b = self.b.astype(dtype)
        return other


class MaxPool(Layer):
    """Max pooling over (time t, frequency f) blocks; trailing remainder dropped."""

    kind = "maxpool"

    def __init__(self, th, tw):
        if th < 1 or tw < 1:
            raise DomainError("pool sizes must be >= 1")
        self.th = th
        self.tw = tw
        self._idx = None
        self._x_shape = None

    def forward(self, x, mode="train", rng=None):
        y, idx = kernels.maxpool_forward(x, self.th, self.tw)
        self._idx = idx
        self._x_shape = x.shape
        return y

    def backward(self, dy):
        return kernels.maxpool_backward(dy, self._idx, self._x_shape, self.th, self.tw)

    def out_shape(self, shape):
        c, h, w = shape
        if h < self.th or w < self.tw:
            raise ShapeError(f"pool {self.th}x{self.tw} larger than input {h}x{w}")
        return (c, h // self.th, w // self.tw)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, mode="train", rng=None):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy):
        return dy * self._mask


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, mode="train", rng=None):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)

    def out_shape(self, shape):
        return (int(np.prod(shape)),)


class Linear(_ParamLayer):
    kind = "linear"

    def __init__(self, n_in, n_out, dtype=np.float32):
        super().__init__()
        self.n_in = n_in
        self.n_out = n_out
        self.W = np.zeros((n_in, n_out), dtype=dtype)
        self.b = np.zeros(n_out, dtype=dtype)
        self._x = None

    def init_params(self, rng):
        self.W[...] = (rng.standard_normal(self.W.shape) * np.sqrt(2.0 / self.n_in)).astype(self.W.dtype)
        self.b[...] = 0.0

    def forward(self, x, mode="train", rng=None):
        if x.shape[1] != self.n_in:
            raise ShapeError(f"linear expects {self.n_in} inputs, got {x.shape[1]}")
        self._x = x
        return x @ self.W + self.b

    def backward(self, dy):
        self._ensure_grads()
        self.dW += self._x.T @ dy
        self.db += dy.sum(axis=0)
        return dy @ self.W.T

    def out_shape(self, shape):
        if len(shape) != 1 or shape[0] != self.n_in:
            raise ShapeError(f"linear expects ({self.n_in},), got {shape}")
        return (self.n_out,)

    def astype(self, dtype):
        other = Linear(self.n_in, self.n_out, dtype=dtype)
        other.W = self.W.astype(dtype)
        other.b = self.b.astype(dtype)
        return other


class Dropout(Layer):
    """Inverted dropout: scale by 1/keep at train time, pass through at eval."""

    kind = "dropout"

    def __init__(self, keep=0.5):
        if not 0.0 < keep <= 1.0:
            raise DomainError("keep probability must be in (0, 1]")
        self.keep = keep
        self._mask = None

    def forward(self, x, mode="train", rng=None):
        if mode != "train" or self.keep == 1.0:
            self._mask = None
            return x
        if rng is None:
            raise DomainError("dropout in train mode needs an rng")
        self._mask = (rng.random(x.shape) < self.keep).astype(x.dtype) / self.keep
        return x * self._mask

    def backward(self, dy):
        if self._mask is None:
            return dy
        return dy * self._mask


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x, mode="train", rng=None):
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        self._p = e / e.sum(axis=-1, keepdims=True)
        return self._p

    def backward(self, dy):
        p = self._p
        return p * (dy - (dy * p).sum(axis=-1, keepdims=True))


class Network:
    """A sequential chain of layers with a shared He/zero initialization."""

    def __init__(self, layers, dtype=np.float32):
        self.layers = list(layers)
        self.dtype = np.dtype(dtype)

    def init_params(self, rng):
        for layer in self.layers:
            if hasattr(layer, "init_params"):
                layer.init_params(rng)
        return self

    def forward(self, x, mode="eval", rng=None, upto=None):
        """Run layers[:upto]; `mode` controls dropout sampling."""
        x = np.ascontiguousarray(x, dtype=self.dtype)
        for i, layer in enumerate(self.layers[:upto]):
            try:
                x = layer.forward(x, mode=mode, rng=rng)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.kind}): {exc}") from None
        return x

    def backward(self, dy, upto=None):
        for layer in reversed(self.layers[:upto]):
            dy = layer.backward(dy)
        return dy

    def zero_grads(self):
        for layer in self.layers:
            layer.zero_grads()

    def named_params(self):
        for i, layer in enumerate(self.layers):
            for name, p in layer.param_items():
                yield f"{i:02d}.{layer.kind}.{name}", p

    def named_grads(self):
        for i, layer in enumerate(self.layers):
            for name, g in layer.grad_items():
                yield f"{i:02d}.{layer.kind}.{name}", g

    def weights(self):
        return [p for name, p in self.named_params() if name.endswith(".W")]

    def param_count(self):
        return sum(int(p.size) for _, p in self.named_params())

    def out_shape(self, in_shape):
        shape = tuple(in_shape)
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.out_shape(shape)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.kind}): {exc}") from None
        return shape

    def astype(self, dtype):
        return Network([layer.astype(dtype) for layer in self.layers], dtype=dtype)


def cross_entropy_l1(p, labels, weights=(), rho=0.0):
    """Mean negative log-likelihood plus rho * sum|W| over the given weights.

    Probabilities are clamped at 1e-12 before the log so pathological inputs
    yield a large finite loss instead of -inf.
    """
    labels = np.asarray(labels)
    picked = np.maximum(p[np.arange(len(labels)), labels], EPS_PROB)
    loss = -np.mean(np.log(picked))
    for w in weights:
        loss += rho * float(np.abs(w).sum())
    return float(loss)


def cross_entropy_grad(p, labels):
    """d(mean NLL)/dp; pair with `l1_subgradient` for the full objective."""
    labels = np.asarray(labels)
    dp = np.zeros_like(p)
    picked = np.maximum(p[np.arange(len(labels)), labels], EPS_PROB)
    dp[np.arange(len(labels)), labels] = -1.0 / (len(labels) * picked)
    return dp


def l1_subgradient(net, rho):
    """Add rho*sign(W) to every weight gradient; sign(0) = 0."""
    if rho == 0.0:
        return
    for i, layer in enumerate(net.layers):
        params = dict(layer.param_items())
        grads = dict(layer.grad_items())
        if "W" in params:
            grads["W"] += (rho * np.sign(params["W"])).astype(grads["W"].dtype)


class SgdMomentum:
    """Classical momentum: v <- mu*v - lr*g; w <- w + v."""

    def __init__(self, net, lr=0.01, momentum=0.9):
        self.net = net
        self.lr = lr
        self.momentum = momentum
        self.velocity = {name: np.zeros_like(p) for name, p in net.named_params()}

    def step(self):
        grads = dict(self.net.named_grads())
        for name, p in self.net.named_params():
            v = self.velocity[name]
            v *= self.momentum
            v -= self.lr * grads[name]
            p += v


def batch_loss_and_grads(net, x, labels, rho=0.0, mode="train", rng=None):
    """One forward/backward pass; returns the scalar objective."""
    net.zero_grads()
    p = net.forward(x, mode=mode, rng=rng)
    loss = cross_entropy_l1(p, labels, net.weights(), rho)
    net.backward(cross_entropy_grad(p, labels))
    l1_subgradient(net, rho)
    return loss, p


def fd_check_params(net64, objective, analytic, eps=1e-5, max_per_layer=200, rng=None):
    """Central finite differences against `analytic` for sampled parameters.

    A piecewise-linear network has kinks (ReLU zeros, pooling ties); when the
    +/-eps interval of a parameter straddles one, the difference quotient no
    longer measures the local slope.  Such parameters are re-checked with the
    step shrunk (eps/16, then eps/256), which moves the interval off the kink;
    a genuinely wrong gradient stays wrong at every step.

    Returns {tensor name: max relative error}.
    """
    rng = rng or np.random.default_rng(0)
    report = {}
    for name, param in net64.named_params():
        flat = param.reshape(-1)
        n = flat.size
        picks = np.arange(n) if n <= max_per_layer else rng.choice(n, size=max_per_layer, replace=False)
        worst = 0.0
        ga = analytic[name].reshape(-1)
        for j in picks:
            orig = flat[j]
            best = np.inf
            for step in (eps, eps / 16.0, eps / 256.0):
                flat[j] = orig + step
                lp = objective()
                flat[j] = orig - step
                lm = objective()
                flat[j] = orig
                gf = (lp - lm) / (2.0 * step)
                rel = abs(ga[j] - gf) / max(abs(ga[j]), abs(gf), 1e-8)
                best = min(best, rel)
                if best < 1e-5:
                    break
            worst = max(worst, best)
        report[name] = worst
    return report


def grad_check(net, x, labels, rho=0.0, eps=1e-5, max_per_layer=200, rng=None, corrupt=None):
    """Compare analytic gradients against central finite differences.

    Runs on a float64 copy with dropout disabled (eval mode).  Samples up to
    `max_per_layer` parameters per layer and reports the max relative error
    per parameter tensor plus the overall maximum.  `corrupt`(name pattern)
    multiplies matching analytic gradients by 1.01 as a negative control.

    Returns (report dict, overall max relative error).
    """
    net64 = net.astype(np.float64)
    x64 = np.asarray(x, dtype=np.float64)

    def objective():
        p = net64.forward(x64, mode="eval")
        return cross_entropy_l1(p, labels, net64.weights(), rho)

    net64.zero_grads()
    p = net64.forward(x64, mode="eval")
    net64.backward(cross_entropy_grad(p, labels))
    l1_subgradient(net64, rho)
    analytic = {name: g.copy() for name, g in net64.named_grads()}
    if corrupt is not None:
        for name in analytic:
            if corrupt in name:
                analytic[name] *= 1.01

    report = fd_check_params(net64, objective, analytic, eps=eps,
                             max_per_layer=max_per_layer, rng=rng)
    overall = max(report.values()) if report else 0.0
    return report, overall
