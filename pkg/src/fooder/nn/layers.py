"""Layer modules built on the autodiff primitives."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterator

import numpy as np

from . import functional as F
from .tensor import (DEFAULT_DTYPE, ShapeError, Tensor, concat, leaky_relu, matmul, no_grad, relu, reshape, sigmoid,
                     softmax, transpose)


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data):
        super().__init__(np.asarray(data), requires_grad=True)


def kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(DEFAULT_DTYPE)


class Module:
    training: bool = True

    def __init__(self) -> None:
        self._buffers: dict[str, np.ndarray] = {}
        self.name = type(self).__name__

    def forward(self, x):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for key, val in vars(self).items():
            if isinstance(val, Module):
                yield key, val
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield f"{key}.{i}", item

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix, self
        for key, mod in self.children():
            yield from mod.named_modules(f"{prefix}.{key}" if prefix else key)

    def assign_names(self, prefix: str = "") -> None:
        for name, mod in self.named_modules(prefix):
            mod.name = f"{name or type(self).__name__}:{type(mod).__name__}"

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, mod in self.named_modules(prefix):
            for key, val in vars(mod).items():
                if isinstance(val, Parameter):
                    yield (f"{name}.{key}" if name else key), val

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, mod in self.named_modules(prefix):
            for key, val in mod._buffers.items():
                yield (f"{name}.{key}" if name else key), val

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {k: p.data for k, p in self.named_parameters()}
        state.update(dict(self.named_buffers()))
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = []
        for name, mod in self.named_modules():
            for key in list(mod._buffers):
                full = f"{name}.{key}" if name else key
                if full not in state:
                    missing.append(full)
                    continue
                mod._buffers[key] = np.array(state[full], dtype=mod._buffers[key].dtype)
        for name, p in params.items():
            if name not in state:
                missing.append(name)
                continue
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data = np.array(arr, dtype=p.dtype)
            p.grad = np.zeros_like(p.data)
        if missing:
            raise KeyError(f"missing state entries: {missing}")

    def train(self, mode: bool = True) -> "Module":
        for _, mod in self.named_modules():
            mod.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def astype(self, dtype) -> "Module":
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
            p.grad = np.zeros_like(p.data)
        for _, mod in self.named_modules():
            for key in mod._buffers:
                mod._buffers[key] = mod._buffers[key].astype(dtype)
        return self

    def freeze(self) -> "Module":
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None
        return self.eval()


class Sequential(Module):
    def __init__(self, *layers: Module):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def __len__(self) -> int:
        return len(self.layers)

    def __getitem__(self, i):
        return self.layers[i]


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int = 3, stride: int = 2, padding: int = 1,
                 bias: bool = True, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.in_ch, self.out_ch, self.kernel, self.stride, self.padding = in_ch, out_ch, kernel, stride, padding
        fan_in = in_ch * kernel * kernel
        self.weight = Parameter(kaiming_uniform(rng, (out_ch, in_ch, kernel, kernel), fan_in))
        self.bias = Parameter(np.zeros(out_ch, dtype=DEFAULT_DTYPE)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise ShapeError(f"{self.name}: expected (N, {self.in_ch}, H, W), got {x.shape}")
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int = 3, stride: int = 2, padding: int = 1,
                 output_padding: int = 1, bias: bool = True, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.in_ch, self.out_ch, self.kernel = in_ch, out_ch, kernel
        self.stride, self.padding, self.output_padding = stride, padding, output_padding
        fan_in = out_ch * kernel * kernel
        self.weight = Parameter(kaiming_uniform(rng, (in_ch, out_ch, kernel, kernel), fan_in))
        self.bias = Parameter(np.zeros(out_ch, dtype=DEFAULT_DTYPE)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise ShapeError(f"{self.name}: expected (N, {self.in_ch}, H, W), got {x.shape}")
        return F.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding, self.output_padding)


class BatchNorm(Module):
    """Batch normalization over axis 1; works for (N, C) and (N, C, H, W)."""

    expected_ndim: int | None = None

    def __init__(self, num_features: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.num_features, self.momentum, self.eps = num_features, momentum, eps
        self.gamma = Parameter(np.ones(num_features, dtype=DEFAULT_DTYPE))
        self.beta = Parameter(np.zeros(num_features, dtype=DEFAULT_DTYPE))
        self._buffers["running_mean"] = np.zeros(num_features, dtype=DEFAULT_DTYPE)
        self._buffers["running_var"] = np.ones(num_features, dtype=DEFAULT_DTYPE)

    def forward(self, x: Tensor) -> Tensor:
        if (self.expected_ndim and x.ndim != self.expected_ndim) or x.shape[1] != self.num_features:
            raise ShapeError(f"{self.name}: expected {self.num_features} features on axis 1, got {x.shape}")
        return F.batch_norm(
            x, self.gamma, self.beta, self._buffers["running_mean"], self._buffers["running_var"],
            self.training, self.momentum, self.eps,
        )


class BatchNorm2d(BatchNorm):
    expected_ndim = 4


class BatchNorm1d(BatchNorm):
    expected_ndim = 2


def recalibrate_batchnorm(model: Module, run_batch, batches) -> int:
    """Replace every batch-norm running estimate by the plain average over ``batches``.

    ``run_batch(batch)`` must push one batch through ``model``. Weights are
    untouched; only the running mean/variance buffers change. Setting the
    momentum to 1/(k+1) on the k-th batch turns the exponential update into a
    cumulative mean. Returns the number of batches seen.
    """
    bns = [m for _, m in model.named_modules() if isinstance(m, BatchNorm)]
    saved = [m.momentum for m in bns]
    was_training = model.training
    model.train()
    k = 0
    try:
        with no_grad():
            for batch in batches:
                for m in bns:
                    m.momentum = 1.0 / (k + 1)
                run_batch(batch)
                k += 1
    finally:
        for m, mom in zip(bns, saved):
            m.momentum = mom
        model.train(was_training)
    return k


class LeakyReLU(Module):
    def __init__(self, slope: float = 0.01):
        super().__init__()
        self.slope = slope

    def forward(self, x):
        return leaky_relu(x, self.slope)


class ReLU(Module):
    def forward(self, x):
        return relu(x)


class Sigmoid(Module):
    def forward(self, x):
        return sigmoid(x)


class Softmax(Module):
    def __init__(self, axis: int = -1):
        super().__init__()
        self.axis = axis

    def forward(self, x):
        return softmax(x, self.axis)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, bias: bool = True,
                 rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.in_features, self.out_features = in_features, out_features
        self.weight = Parameter(kaiming_uniform(rng, (out_features, in_features), in_features))
        self.bias = Parameter(np.zeros(out_features, dtype=DEFAULT_DTYPE)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise ShapeError(f"{self.name}: expected (..., {self.in_features}), got {x.shape}")
        return F.linear(x, self.weight, self.bias)


class Flatten(Module):
    def forward(self, x):
        return reshape(x, (x.shape[0], -1))


class Reshape(Module):
    def __init__(self, shape: tuple[int, ...]):
        super().__init__()
        self.shape = tuple(shape)

    def forward(self, x):
        if int(np.prod(x.shape[1:])) != int(np.prod(self.shape)):
            raise ShapeError(f"{self.name}: cannot reshape {x.shape} to (N, *{self.shape})")
        return reshape(x, (x.shape[0],) + self.shape)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.dim, self.eps = dim, eps
        self.gamma = Parameter(np.ones(dim, dtype=DEFAULT_DTYPE))
        self.beta = Parameter(np.zeros(dim, dtype=DEFAULT_DTYPE))

    def forward(self, x):
        if x.shape[-1] != self.dim:
            raise ShapeError(f"{self.name}: expected (..., {self.dim}), got {x.shape}")
        return F.layer_norm(x, self.gamma, self.beta, self.eps)


class GlobalAvgPool(Module):
    def forward(self, x):
        return x.mean(axis=(2, 3))


class MultiHeadAttention(Module):
    """Scaled dot-product self-attention over tokens (N, T, D)."""

    def __init__(self, dim: int, heads: int = 2, rng: np.random.Generator | None = None):
        super().__init__()
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        rng = rng or np.random.default_rng(0)
        self.dim, self.heads = dim, heads
        self.q = Linear(dim, dim, rng=rng)
        self.k = Linear(dim, dim, rng=rng)
        self.v = Linear(dim, dim, rng=rng)
        self.out = Linear(dim, dim, rng=rng)
        self.last_weights: np.ndarray | None = None

    def _split(self, t: Tensor, n: int, tokens: int) -> Tensor:
        return transpose(reshape(t, (n, tokens, self.heads, self.dim // self.heads)), (0, 2, 1, 3))

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 3 or x.shape[-1] != self.dim:
            raise ShapeError(f"{self.name}: expected (N, T, {self.dim}), got {x.shape}")
        n, t, _ = x.shape
        q, k, v = (self._split(proj(x), n, t) for proj in (self.q, self.k, self.v))
        scale = 1.0 / math.sqrt(self.dim // self.heads)
        att = softmax(matmul(q, transpose(k, (0, 1, 3, 2))) * scale, axis=-1)
        self.last_weights = att.data
        ctx = reshape(transpose(matmul(att, v), (0, 2, 1, 3)), (n, t, self.dim))
        return self.out(ctx)


class SeparableAttention(Module):
    """Linear-complexity attention: one context vector per sequence.

    Context scores come from a softmax over tokens of a single learned
    projection; the score-weighted sum of key projections gates a ReLU value
    projection by broadcasting.
    """

    def __init__(self, dim: int, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.dim = dim
        self.score = Linear(dim, 1, rng=rng)
        self.key = Linear(dim, dim, rng=rng)
        self.value = Linear(dim, dim, rng=rng)
        self.out = Linear(dim, dim, rng=rng)
        self.last_weights: np.ndarray | None = None

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 3 or x.shape[-1] != self.dim:
            raise ShapeError(f"{self.name}: expected (N, T, {self.dim}), got {x.shape}")
        scores = softmax(self.score(x), axis=1)  # (N, T, 1)
        self.last_weights = scores.data[..., 0]
        context = (scores * self.key(x)).sum(axis=1, keepdims=True)  # (N, 1, D)
        return self.out(relu(self.value(x)) * context)


class ResidualBlock(Module):
    """ResNet basic block: two 3x3 convs with batch norm and an identity or
    1x1-projection shortcut."""

    def __init__(self, in_ch: int, out_ch: int, stride: int = 1, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.in_ch, self.out_ch, self.stride = in_ch, out_ch, stride
        self.conv1 = Conv2d(in_ch, out_ch, 3, stride, 1, bias=False, rng=rng)
        self.bn1 = BatchNorm2d(out_ch)
        self.conv2 = Conv2d(out_ch, out_ch, 3, 1, 1, bias=False, rng=rng)
        self.bn2 = BatchNorm2d(out_ch)
        if stride != 1 or in_ch != out_ch:
            self.proj = Conv2d(in_ch, out_ch, 1, stride, 0, bias=False, rng=rng)
            self.proj_bn = BatchNorm2d(out_ch)
        else:
            self.proj = None
            self.proj_bn = None

    def forward(self, x):
        h = relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        skip = self.proj_bn(self.proj(x)) if self.proj is not None else x
        return relu(h + skip)


class Patchify(Module):
    """(N, C, H, W) -> (N, H/p * W/p, C*p*p) non-overlapping patch tokens."""

    def __init__(self, patch: int = 2):
        super().__init__()
        self.patch = patch

    def forward(self, x):
        n, c, h, w = x.shape
        p = self.patch
        if h % p or w % p:
            raise ShapeError(f"{self.name}: spatial dims {h}x{w} not divisible by patch {p}")
        t = reshape(x, (n, c, h // p, p, w // p, p))
        t = transpose(t, (0, 2, 4, 1, 3, 5))
        return reshape(t, (n, (h // p) * (w // p), c * p * p))


class Unpatchify(Module):
    def __init__(self, channels: int, height: int, width: int, patch: int = 2):
        super().__init__()
        self.channels, self.height, self.width, self.patch = channels, height, width, patch

    def forward(self, x):
        n = x.shape[0]
        p, c, h, w = self.patch, self.channels, self.height, self.width
        t = reshape(x, (n, h // p, w // p, c, p, p))
        t = transpose(t, (0, 3, 1, 4, 2, 5))
        return reshape(t, (n, c, h, w))


@dataclass
class LayerSpec:
    """Declarative layer description used by :func:`build_layer`."""

    kind: str
    params: dict[str, Any] = field(default_factory=dict)


LAYER_KINDS = {
    "conv2d": lambda rng, p: Conv2d(p["in_ch"], p["out_ch"], p.get("kernel", 3), p.get("stride", 2), p.get("padding", 1), rng=rng),
    "conv_transpose2d": lambda rng, p: ConvTranspose2d(
        p["in_ch"], p["out_ch"], p.get("kernel", 3), p.get("stride", 2), p.get("padding", 1), p.get("output_padding", 1), rng=rng
    ),
    "batch_norm2d": lambda rng, p: BatchNorm2d(p["channels"], p.get("momentum", 0.1), p.get("eps", 1e-5)),
    "batch_norm1d": lambda rng, p: BatchNorm1d(p["features"], p.get("momentum", 0.1), p.get("eps", 1e-5)),
    "leaky_relu": lambda rng, p: LeakyReLU(p.get("slope", 0.01)),
    "relu": lambda rng, p: ReLU(),
    "sigmoid": lambda rng, p: Sigmoid(),
    "linear": lambda rng, p: Linear(p["in_features"], p["out_features"], rng=rng),
    "flatten": lambda rng, p: Flatten(),
    "reshape": lambda rng, p: Reshape(tuple(p["shape"])),
    "softmax": lambda rng, p: Softmax(p.get("axis", -1)),
    "layer_norm": lambda rng, p: LayerNorm(p["dim"]),
    "multi_head_attention": lambda rng, p: MultiHeadAttention(p["dim"], p.get("heads", 2), rng=rng),
    "separable_attention": lambda rng, p: SeparableAttention(p["dim"], rng=rng),
    "residual_block": lambda rng, p: ResidualBlock(p["in_ch"], p["out_ch"], p.get("stride", 1), rng=rng),
    "global_avg_pool": lambda rng, p: GlobalAvgPool(),
    "patchify": lambda rng, p: Patchify(p.get("patch", 2)),
}


def build_layer(spec: LayerSpec, rng: np.random.Generator | None = None) -> Module:
    try:
        factory = LAYER_KINDS[spec.kind]
    except KeyError:
        raise ValueError(f"unknown layer kind {spec.kind!r}") from None
    return factory(rng or np.random.default_rng(0), spec.params)


def build_sequential(specs: list[LayerSpec], rng: np.random.Generator | None = None) -> Sequential:
    rng = rng or np.random.default_rng(0)
    model = Sequential(*(build_layer(s, rng) for s in specs))
    model.assign_names()
    return model


__all__ = [
    "BatchNorm1d", "BatchNorm2d", "Conv2d", "ConvTranspose2d", "Flatten", "GlobalAvgPool", "LayerNorm",
    "LayerSpec", "LeakyReLU", "Linear", "Module", "MultiHeadAttention", "Parameter", "Patchify", "ReLU",
    "Reshape", "ResidualBlock", "SeparableAttention", "Sequential", "Sigmoid", "Softmax", "Unpatchify",
    "build_layer", "build_sequential", "concat",
]
