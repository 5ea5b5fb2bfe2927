"""Small sequential network kernel on numpy.

Images are NHWC float32 arrays. Every layer computes in float64 and casts
back to the network dtype, so float32 nets stay float32 end to end while
dot products accumulate in double precision.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

ACTIVATIONS = ("tanh", "relu", "sigmoid", "linear")

_net_ids = itertools.count()


class ShapeError(ValueError):
    pass


class StaleCacheError(RuntimeError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def _conv_out(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _im2col(x, kernel, stride, padding):
    """(B, H, W, C) -> (B, Ho, Wo, kh, kw, C) patch view, copied."""
    k = kernel
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    ho = _conv_out(x.shape[1] - 2 * padding, k, stride, padding)
    wo = _conv_out(x.shape[2] - 2 * padding, k, stride, padding)
    win = sliding_window_view(x, (k, k), axis=(1, 2))  # (B, H', W', C, k, k)
    win = win[:, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride]
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))


def _col2im(cols, in_hw, stride, padding):
    """Adjoint of _im2col on kernel-major patches (kh, kw, B, Ho, Wo, C)."""
    k, _, b, ho, wo, c = cols.shape
    h, w = in_hw
    out = np.zeros((b, h + 2 * padding, w + 2 * padding, c), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += cols[i, j]
    if padding:
        out = out[:, padding:-padding, padding:-padding]
    return out


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}

    def output_shape(self, in_shape: tuple) -> tuple:
        raise NotImplementedError

    def init(self, rng: np.random.Generator, dtype) -> None:
        pass

    def forward(self, x):
        raise NotImplementedError

    def backward(self, cache, dy, need_dx=True):
        raise NotImplementedError

    def describe(self) -> str:
        return self.kind


class Dense(Layer):
    kind = "dense"

    def __init__(self, units: int):
        super().__init__()
        self.units = units

    def output_shape(self, in_shape):
        if len(in_shape) != 1:
            raise ShapeError(f"dense expects a flat input, got {in_shape}")
        self.fan_in = in_shape[0]
        return (self.units,)

    def init(self, rng, dtype):
        lim = 1.0 / np.sqrt(self.fan_in)
        self.params = {
            "W": rng.uniform(-lim, lim, (self.fan_in, self.units)).astype(dtype),
            "b": np.zeros(self.units, dtype=dtype),
        }

    def forward(self, x):
        W, b = self.params["W"], self.params["b"]
        y = np.matmul(x, W, dtype=np.float64) + b
        return y.astype(W.dtype), x

    def backward(self, x, dy, need_dx=True):
        W = self.params["W"]
        dW = np.matmul(x.T, dy, dtype=np.float64).astype(W.dtype)
        db = dy.sum(axis=0, dtype=np.float64).astype(W.dtype)
        dx = np.matmul(dy, W.T, dtype=np.float64).astype(W.dtype) if need_dx else None
        return {"W": dW, "b": db}, dx

    def describe(self):
        return f"dense({self.units})"


class Conv2D(Layer):
    """Square-kernel convolution, weights (k, k, c_in, c_out)."""

    kind = "conv2d"

    def __init__(self, filters: int, kernel: int, stride: int = 1, padding: int = 0):
        super().__init__()
        self.filters, self.kernel, self.stride, self.padding = filters, kernel, stride, padding

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"conv2d expects (H, W, C), got {in_shape}")
        h, w, c = in_shape
        ho = _conv_out(h, self.kernel, self.stride, self.padding)
        wo = _conv_out(w, self.kernel, self.stride, self.padding)
        if ho < 1 or wo < 1:
            raise ShapeError(f"conv2d kernel {self.kernel} does not fit input {in_shape}")
        self.in_shape = in_shape
        return (ho, wo, self.filters)

    def init(self, rng, dtype):
        c = self.in_shape[2]
        lim = 1.0 / np.sqrt(self.kernel * self.kernel * c)
        self.params = {
            "W": rng.uniform(-lim, lim, (self.kernel, self.kernel, c, self.filters)).astype(dtype),
            "b": np.zeros(self.filters, dtype=dtype),
        }

    def forward(self, x):
        W, b = self.params["W"], self.params["b"]
        cols = _im2col(x, self.kernel, self.stride, self.padding)
        bsz, ho, wo = cols.shape[:3]
        flat = cols.reshape(bsz * ho * wo, -1)
        y = np.matmul(flat, W.reshape(-1, self.filters), dtype=np.float64) + b
        return y.reshape(bsz, ho, wo, self.filters).astype(W.dtype), (flat, cols.shape, x.shape[1:3])

    def backward(self, cache, dy, need_dx=True):
        flat, cols_shape, in_hw = cache
        W = self.params["W"]
        dy2 = dy.reshape(-1, self.filters)
        dW = np.matmul(flat.T, dy2, dtype=np.float64).reshape(W.shape).astype(W.dtype)
        db = dy2.sum(axis=0, dtype=np.float64).astype(W.dtype)
        if not need_dx:
            return {"W": dW, "b": db}, None
        b, ho, wo, k, _, c = cols_shape
        Wk = W.reshape(k * k, c, self.filters).transpose(0, 2, 1)
        dcols = np.matmul(dy2, Wk, dtype=np.float64).reshape(k, k, b, ho, wo, c)
        dx = _col2im(dcols, in_hw, self.stride, self.padding)
        return {"W": dW, "b": db}, dx.astype(W.dtype)

    def describe(self):
        return f"conv2d({self.filters}, k={self.kernel}, s={self.stride}, p={self.padding})"


class Deconv2D(Layer):
    """Transpose of a Conv2D that maps (out_hw, filters) -> the input shape here.

    Weights are (k, k, filters, c_in): the same layout as the mirrored
    convolution, so forward here is exactly that convolution's input gradient.
    """

    kind = "deconv2d"

    def __init__(self, filters: int, kernel: int, stride: int = 1, padding: int = 0, out_hw: tuple | None = None):
        super().__init__()
        self.filters, self.kernel, self.stride, self.padding = filters, kernel, stride, padding
        self.out_hw = out_hw

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"deconv2d expects (H, W, C), got {in_shape}")
        h, w, c = in_shape
        if self.out_hw is None:
            oh = (h - 1) * self.stride + self.kernel - 2 * self.padding
            ow = (w - 1) * self.stride + self.kernel - 2 * self.padding
        else:
            oh, ow = self.out_hw
        if (_conv_out(oh, self.kernel, self.stride, self.padding), _conv_out(ow, self.kernel, self.stride, self.padding)) != (h, w):
            raise ShapeError(f"deconv2d output {(oh, ow)} is not the conv preimage of {(h, w)}")
        self.in_shape = in_shape
        self.out_hw = (oh, ow)
        return (oh, ow, self.filters)

    def init(self, rng, dtype):
        c = self.in_shape[2]
        lim = 1.0 / np.sqrt(self.kernel * self.kernel * c)
        self.params = {
            "W": rng.uniform(-lim, lim, (self.kernel, self.kernel, self.filters, c)).astype(dtype),
            "b": np.zeros(self.filters, dtype=dtype),
        }

    def forward(self, x):
        W, b = self.params["W"], self.params["b"]
        bsz, h, w, c = x.shape
        k = self.kernel
        x2 = x.reshape(-1, c)
        Wk = W.reshape(k * k, self.filters, c).transpose(0, 2, 1)
        cols = np.matmul(x2, Wk, dtype=np.float64).reshape(k, k, bsz, h, w, self.filters)
        y = _col2im(cols, self.out_hw, self.stride, self.padding) + b
        return y.astype(W.dtype), x2

    def backward(self, x2, dy, need_dx=True):
        W = self.params["W"]
        c = self.in_shape[2]
        dcols = _im2col(dy, self.kernel, self.stride, self.padding)
        bsz, h, w = dcols.shape[:3]
        dflat = dcols.reshape(bsz * h * w, -1)
        dW = np.matmul(dflat.T, x2, dtype=np.float64).reshape(W.shape).astype(W.dtype)
        db = dy.sum(axis=(0, 1, 2), dtype=np.float64).astype(W.dtype)
        dx = np.matmul(dflat, W.reshape(-1, c), dtype=np.float64).reshape(bsz, h, w, c)
        return {"W": dW, "b": db}, dx.astype(W.dtype)

    def describe(self):
        return f"deconv2d({self.filters}, k={self.kernel}, s={self.stride}, p={self.padding}, out={self.out_hw})"


class Activation(Layer):
    """Elementwise nonlinearity; ``scale`` multiplies the output (bounded actions)."""

    kind = "activation"

    def __init__(self, name: str, scale: float = 1.0):
        super().__init__()
        if name not in ACTIVATIONS:
            raise ValueError(f"unknown activation {name!r}")
        self.name, self.scale = name, scale

    def output_shape(self, in_shape):
        return in_shape

    def forward(self, x):
        if self.name == "tanh":
            y = np.tanh(x)
        elif self.name == "sigmoid":
            y = 1.0 / (1.0 + np.exp(-x))
        elif self.name == "relu":
            y = np.maximum(x, 0)
        else:
            y = x
        return (y * self.scale).astype(x.dtype, copy=False), (x, y)

    def backward(self, cache, dy, need_dx=True):
        x, y = cache
        if self.name == "tanh":
            d = 1.0 - y * y
        elif self.name == "sigmoid":
            d = y * (1.0 - y)
        elif self.name == "relu":
            d = (x > 0).astype(x.dtype)
        else:
            d = 1.0
        return {}, (dy * (d * self.scale)).astype(x.dtype, copy=False)

    def describe(self):
        return self.name if self.scale == 1.0 else f"{self.name}*{self.scale:g}"


class Reshape(Layer):
    """Shape-only adapter between conv and dense stages."""

    kind = "reshape"

    def __init__(self, shape: tuple):
        super().__init__()
        self.shape = tuple(shape)

    def output_shape(self, in_shape):
        if int(np.prod(in_shape)) != int(np.prod(self.shape)):
            raise ShapeError(f"cannot reshape {in_shape} to {self.shape}")
        return self.shape

    def forward(self, x):
        return x.reshape((x.shape[0],) + self.shape), x.shape

    def backward(self, in_shape, dy, need_dx=True):
        return {}, dy.reshape(in_shape)

    def describe(self):
        return f"reshape{self.shape}"


def flatten() -> Reshape:
    return Reshape((-1,))


@dataclass
class ForwardCache:
    net_id: int
    version: int
    layer_caches: list
    input_shape: tuple


class Network:
    """Ordered layer stack with shapes validated at construction."""

    def __init__(self, name: str, input_shape: tuple, layers: list[Layer], seed: int = 0, dtype=np.float32):
        self.name = name
        self.input_shape = tuple(input_shape)
        self.layers = layers
        self.dtype = np.dtype(dtype)
        self._id = next(_net_ids)
        self.version = 0
        shape = self.input_shape
        self.shapes = [shape]
        for i, layer in enumerate(layers):
            if isinstance(layer, Reshape) and layer.shape == (-1,):
                layer.shape = (int(np.prod(shape)),)
            try:
                shape = layer.output_shape(shape)
            except ShapeError as exc:
                raise ShapeError(f"{name}: layer {i} ({layer.describe()}): {exc}") from None
            self.shapes.append(shape)
        self.output_shape = shape
        rng = np.random.default_rng(seed)
        for layer in layers:
            layer.init(rng, self.dtype)

    def __repr__(self):
        inner = " -> ".join(l.describe() for l in self.layers)
        return f"Network({self.name}: {self.input_shape} -> {inner} -> {self.output_shape})"

    @property
    def num_params(self) -> int:
        return sum(p.size for p in self.param_list())

    def param_list(self) -> list[np.ndarray]:
        return [p for layer in self.layers for _, p in sorted(layer.params.items())]

    def named_params(self) -> list[tuple[str, np.ndarray]]:
        return [
            (f"{self.name}.{i}.{k}", p)
            for i, layer in enumerate(self.layers)
            for k, p in sorted(layer.params.items())
        ]

    def touch(self) -> None:
        """Mark parameters as modified; outstanding caches become stale."""
        self.version += 1

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
        x = np.asarray(x)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"{self.name}: layer 0 expects input {self.input_shape}, got {x.shape[1:]}")
        x = x.astype(self.dtype, copy=False)
        caches = []
        for layer in self.layers:
            x, c = layer.forward(x)
            caches.append(c)
        return x, ForwardCache(self._id, self.version, caches, x.shape)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backprop(self, cache: ForwardCache, output_grad: np.ndarray, need_input_grad: bool = True):
        """Returns (per-parameter grads aligned with param_list(), input grad)."""
        if cache.net_id != self._id or cache.version != self.version:
            raise StaleCacheError(f"{self.name}: cache does not belong to the current parameters")
        if output_grad.shape != cache.input_shape:
            raise ShapeError(f"{self.name}: output grad {output_grad.shape} != output {cache.input_shape}")
        g = output_grad.astype(self.dtype, copy=False)
        per_layer = []
        for i in range(len(self.layers) - 1, -1, -1):
            grads, g = self.layers[i].backward(cache.layer_caches[i], g, need_dx=need_input_grad or i > 0)
            per_layer.append(grads)
        per_layer.reverse()
        flat = [gr[k] for gr in per_layer for k in sorted(gr)]
        return flat, g

    def copy(self, name: str | None = None, dtype=None) -> "Network":
        import copy

        clone = copy.deepcopy(self)
        clone._id = next(_net_ids)
        clone.version = 0
        if name is not None:
            clone.name = name
        if dtype is not None:
            clone.dtype = np.dtype(dtype)
            for layer in clone.layers:
                layer.params = {k: v.astype(dtype) for k, v in layer.params.items()}
        return clone

    def assign(self, params: list[np.ndarray]) -> None:
        for dst, src in zip(self.param_list(), params, strict=True):
            dst[...] = src
        self.touch()

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for p in self.param_list():
            h.update(np.ascontiguousarray(p).tobytes())
        return h.hexdigest()


# --- optimizers -------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **hyper) -> "AdamState":
        st = cls(**hyper)
        st.m = [np.zeros_like(p) for p in params]
        st.v = [np.zeros_like(p) for p in params]
        return st


def check_finite(grads, names=None) -> None:
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            label = names[i] if names else f"tensor {i}"
            raise NonFiniteError(f"non-finite gradient in {label}")


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState, names=None) -> None:
    """In-place bias-corrected Adam update; increments ``state.step``."""
    check_finite(grads, names)
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v, strict=True):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)


def sgd_step(params, grads, lr: float, names=None) -> None:
    check_finite(grads, names)
    for p, g in zip(params, grads, strict=True):
        p -= (lr * g).astype(p.dtype)


class Adam:
    """Adam bound to one network."""

    def __init__(self, net: Network, **hyper):
        self.net = net
        self.state = AdamState.for_params(net.param_list(), **hyper)

    def step(self, grads) -> None:
        names = [n for n, _ in self.net.named_params()]
        adam_step(self.net.param_list(), grads, self.state, names)
        self.net.touch()


def soft_update(target: Network, online: Network, tau: float) -> None:
    """target <- tau * online + (1 - tau) * target, elementwise."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    if tau == 0.0:
        return
    for t, o in zip(target.param_list(), online.param_list(), strict=True):
        if tau == 1.0:
            t[...] = o
        else:
            t *= 1.0 - tau
            t += tau * o
    target.touch()


# --- gradient verification --------------------------------------------------


def mse_loss(target: np.ndarray):
    """Loss 0.5 * sum((y - target)^2) with its output gradient."""
    target = np.asarray(target, dtype=np.float64)

    def loss(y):
        d = y.astype(np.float64) - target
        return 0.5 * float(np.sum(d * d)), d

    return loss


def grad_check(net: Network, loss, x: np.ndarray, h: float = 1e-5, check_input: bool = False) -> float:
    """Max relative error between backprop and central differences.

    ``loss(y)`` returns (value, dvalue/dy). The check runs on a float64 copy
    of the network, so a small ``h`` keeps the O(h^2) truncation error well
    below the tolerance even for tiny gradient components.
    """
    if net.num_params >= 10_000:
        raise ValueError(f"grad_check on {net.num_params} parameters exceeds the 1e4 cost guard")
    net64 = net.copy(dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    y, cache = net64.forward(x)
    _, dy = loss(y)
    analytic, dx = net64.backprop(cache, np.asarray(dy, dtype=np.float64))

    def f():
        return loss(net64(x))[0]

    worst = 0.0
    for p, a in zip(net64.param_list(), analytic):
        flat, aflat = p.reshape(-1), a.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = f()
            flat[i] = old - h
            fm = f()
            flat[i] = old
            num = (fp - fm) / (2 * h)
            worst = max(worst, _rel(aflat[i], num))
    if check_input:
        xf, dxf = x.reshape(-1), dx.reshape(-1)
        for i in range(xf.size):
            old = xf[i]
            xf[i] = old + h
            fp = loss(net64(x))[0]
            xf[i] = old - h
            fm = loss(net64(x))[0]
            xf[i] = old
            worst = max(worst, _rel(dxf[i], (fp - fm) / (2 * h)))
    return worst


def _rel(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


# --- checkpoint container ---------------------------------------------------

MAGIC = "ICAC-CKPT-1"


def save_checkpoint(path, tensors: list[tuple[str, np.ndarray]], extra_header: list[str] | None = None) -> None:
    """Text header of (name, shape) lines, then raw little-endian float32 payloads."""
    lines = [MAGIC, str(len(tensors))]
    for name, t in tensors:
        if any(c.isspace() for c in name):
            raise ValueError(f"tensor name {name!r} contains whitespace")
        shape = "x".join(str(d) for d in np.shape(t)) or "scalar"
        lines.append(f"{name} {shape}")
    for extra in extra_header or []:
        lines.append(f"# {extra}")
    lines.append("END")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for _, t in tensors:
            fh.write(np.ascontiguousarray(t, dtype="<f4").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.readline().decode("ascii").strip()
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {MAGIC}")
        count = int(fh.readline())
        header = []
        for _ in range(count):
            name, shape = fh.readline().decode("ascii").split()
            dims = () if shape == "scalar" else tuple(int(d) for d in shape.split("x"))
            header.append((name, dims))
        while fh.readline().decode("ascii").strip() != "END":
            pass
        out = {}
        for name, dims in header:
            n = int(np.prod(dims)) if dims else 1
            buf = fh.read(4 * n)
            if len(buf) != 4 * n:
                raise ValueError(f"{path}: truncated payload for {name}")
            out[name] = np.frombuffer(buf, dtype="<f4").astype(np.float32).reshape(dims)
    return out


def load_into(nets: list[Network], tensors: dict[str, np.ndarray]) -> None:
    for net in nets:
        for name, p in net.named_params():
            if name not in tensors:
                raise KeyError(f"checkpoint has no tensor {name}")
            if tensors[name].shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {tensors[name].shape} != {p.shape}")
            p[...] = tensors[name]
        net.touch()
