"""Layer containers and the reusable composite blocks (DoubleConv, MBConv, SE).

Parameters are addressed by dot paths built from attribute names, e.g.
``effunet.enc.stage2.block1.dwconv.w``.  Initial values depend only on the
global seed and that path, so adding a layer never perturbs the others.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import tensor as T
from .params import ParamStore, kaiming_uniform
from .tensor import ShapeError, Tensor


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_inits", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def param(self, name: str, shape: tuple, init: str = "kaiming", fan_in: int = 1) -> Tensor:
        t = Tensor(np.zeros(shape), requires_grad=True)
        self._params[name] = t
        self._inits[name] = (init, fan_in)
        object.__setattr__(self, name, t)
        return t

    def buffer(self, name: str, value: np.ndarray) -> np.ndarray:
        arr = np.array(value, dtype=np.float64)
        self._buffers[name] = arr
        object.__setattr__(self, name, arr)
        return arr

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix, self
        for name, child in self._children.items():
            yield from child.named_modules(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for mpath, mod in self.named_modules():
            for name, t in mod._params.items():
                yield (f"{mpath}.{name}" if mpath else name), t

    def named_buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        for mpath, mod in self.named_modules():
            for name, arr in mod._buffers.items():
                yield (f"{mpath}.{name}" if mpath else name), arr

    def parameters(self) -> list[Tensor]:
        return [t for _, t in sorted(self.named_parameters(), key=lambda kv: kv[0])]

    def train(self, mode: bool = True) -> "Module":
        for _, mod in self.named_modules():
            object.__setattr__(mod, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for _, t in self.named_parameters():
            t.grad = None

    def init_params(self, seed: int) -> "Module":
        for mpath, mod in self.named_modules():
            for name, t in mod._params.items():
                path = f"{mpath}.{name}" if mpath else name
                kind, fan_in = mod._inits[name]
                if kind == "kaiming":
                    t.data[...] = kaiming_uniform(t.shape, fan_in, seed, path)
                elif kind == "ones":
                    t.data[...] = 1.0
                else:
                    t.data[...] = 0.0
        return self

    def param_store(self) -> ParamStore:
        return ParamStore(dict(self.named_parameters()))

    def buffer_store(self) -> ParamStore:
        return ParamStore({k: Tensor(v) for k, v in self.named_buffers()})

    def load_params(self, store: ParamStore) -> None:
        own = dict(self.named_parameters())
        if set(own) != set(store):
            missing = sorted(set(own) - set(store))[:3]
            extra = sorted(set(store) - set(own))[:3]
            raise KeyError(f"parameter set mismatch (missing {missing}, unexpected {extra})")
        for path, t in own.items():
            src = store[path].data
            if src.shape != t.shape:
                raise ShapeError(f"{path}: stored shape {src.shape} != model shape {t.shape}")
            t.data[...] = src

    def load_buffers(self, store: ParamStore) -> None:
        own = dict(self.named_buffers())
        if set(own) != set(store):
            raise KeyError("buffer set mismatch")
        for path, arr in own.items():
            arr[...] = store[path].data

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items: list[Module] = []
        for m in modules:
            self.append(m)

    def append(self, module: Module) -> None:
        self._children[str(len(self._items))] = module
        self._items.append(module)

    def __getitem__(self, i) -> Module:
        return self._items[i]

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)


# ---------------------------------------------------------------------------
# primitive layers
# ---------------------------------------------------------------------------

class Conv2d(Module):
    def __init__(self, cin: int, cout: int, kernel: int = 3, stride: int = 1,
                 padding: int | None = None, groups: int = 1, bias: bool = True):
        super().__init__()
        if cin % groups or cout % groups:
            raise ShapeError(f"channels {cin}->{cout} not divisible by groups={groups}")
        self.cin, self.cout, self.stride, self.groups = cin, cout, stride, groups
        self.padding = kernel // 2 if padding is None else padding
        fan_in = (cin // groups) * kernel * kernel
        self.param("w", (cout, cin // groups, kernel, kernel), "kaiming", fan_in)
        self.b = self.param("b", (cout,), "zeros") if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.cin:
            raise ShapeError(f"conv expects {self.cin} input channels, got {x.shape[1]}")
        return T.conv2d(x, self.w, self.b, self.stride, self.padding, self.groups)


class ConvTranspose2d(Module):
    def __init__(self, cin: int, cout: int, kernel: int = 2, stride: int = 2):
        super().__init__()
        self.cin, self.stride = cin, stride
        self.param("w", (cin, cout, kernel, kernel), "kaiming", cin * kernel * kernel // (stride * stride))
        self.param("b", (cout,), "zeros")

    def forward(self, x: Tensor) -> Tensor:
        return T.transposed_conv2d(x, self.w, self.b, self.stride)


class BatchNorm2d(Module):
    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.eps, self.momentum = eps, momentum
        self.param("gamma", (channels,), "ones")
        self.param("beta", (channels,), "zeros")
        self.buffer("running_mean", np.zeros(channels))
        self.buffer("running_var", np.ones(channels))

    def forward(self, x: Tensor) -> Tensor:
        return T.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                            self.training, self.eps, self.momentum)


class Linear(Module):
    """Affine map over the last axis; weight stored as d_in x d_out."""

    def __init__(self, d_in: int, d_out: int, bias: bool = True):
        super().__init__()
        self.d_in = d_in
        self.param("w", (d_in, d_out), "kaiming", d_in)
        self.b = self.param("b", (d_out,), "zeros") if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return linear(x, self.w, self.b)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.param("gamma", (dim,), "ones")
        self.param("beta", (dim,), "zeros")

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear expects last extent {w.shape[0]}, got input {x.shape}")
    y = T.matmul(x, w) if x.ndim >= 2 else T.matmul(x.reshape(1, -1), w).reshape(-1)
    return y if b is None else y + b


# ---------------------------------------------------------------------------
# composite blocks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BlockSpec:
    in_channels: int
    out_channels: int
    kernel: int = 3
    stride: int = 1
    expansion_ratio: float = 6.0
    se_ratio: float = 0.25
    use_se: bool = True

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.kernel % 2 == 0:
            raise ValueError(f"kernel must be odd, got {self.kernel}")
        if self.stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {self.stride}")
        if self.expansion_ratio <= 0:
            raise ValueError("expansion_ratio must be positive")
        if not 0 < self.se_ratio <= 1:
            raise ValueError("se_ratio must lie in (0, 1]")

    @property
    def expanded(self) -> int:
        return max(1, int(round(self.in_channels * self.expansion_ratio)))

    @property
    def residual(self) -> bool:
        return self.stride == 1 and self.in_channels == self.out_channels


class ConvBN(Module):
    def __init__(self, cin, cout, kernel=3, stride=1, groups=1, act=None):
        super().__init__()
        self.conv = Conv2d(cin, cout, kernel, stride, groups=groups, bias=False)
        self.bn = BatchNorm2d(cout)
        self.act = act

    def forward(self, x):
        y = self.bn(self.conv(x))
        return self.act(y) if self.act is not None else y


class DoubleConv(Module):
    """(3x3 conv -> BN -> ReLU) twice; spatial extents preserved."""

    def __init__(self, cin: int, cout: int, mid: int | None = None):
        super().__init__()
        self.cin = cin
        mid = cout if mid is None else mid
        self.conv1 = ConvBN(cin, mid, 3, act=T.relu)
        self.conv2 = ConvBN(mid, cout, 3, act=T.relu)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.cin:
            raise ShapeError(f"DoubleConv expects {self.cin} channels, got {x.shape[1]}")
        return self.conv2(self.conv1(x))


class SqueezeExcite(Module):
    def __init__(self, channels: int, squeezed: int):
        super().__init__()
        self.reduce = Linear(channels, squeezed)
        self.expand = Linear(squeezed, channels)

    def gates(self, x: Tensor) -> Tensor:
        pooled = T.global_avg_pool(x)
        return T.sigmoid(self.expand(T.swish(self.reduce(pooled))))

    def forward(self, x: Tensor) -> Tensor:
        n, c = x.shape[:2]
        return x * self.gates(x).reshape(n, c, 1, 1)


class MBConv(Module):
    """Inverted bottleneck: expand -> depthwise -> SE -> project (+ residual)."""

    def __init__(self, spec: BlockSpec):
        super().__init__()
        self.spec = spec
        e = spec.expanded
        self.expand = ConvBN(spec.in_channels, e, 1, act=T.swish) if spec.expansion_ratio != 1 else None
        self.dwconv = ConvBN(e, e, spec.kernel, spec.stride, groups=e, act=T.swish)
        if spec.use_se:
            self.se = SqueezeExcite(e, max(1, int(spec.in_channels * spec.se_ratio)))
        else:
            self.se = None
        self.project = ConvBN(e, spec.out_channels, 1)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.spec.in_channels:
            raise ShapeError(f"MBConv expects {self.spec.in_channels} channels, got {x.shape[1]}")
        y = self.expand(x) if self.expand is not None else x
        y = self.dwconv(y)
        if self.se is not None:
            y = self.se(y)
        y = self.project(y)
        return y + x if self.spec.residual else y


def mbconv_stage(cin: int, cout: int, depth: int, stride: int, kernel: int,
                 expansion: float, se_ratio: float, use_se: bool) -> list[MBConv]:
    """One stage: the first block carries the stride and channel change."""
    blocks = []
    for i in range(depth):
        blocks.append(MBConv(BlockSpec(cin if i == 0 else cout, cout, kernel,
                                       stride if i == 0 else 1, expansion, se_ratio, use_se)))
    return blocks


class Sequential(Module):
    def __init__(self, modules=(), prefix: str = "block"):
        super().__init__()
        self._order: list[Module] = []
        for i, m in enumerate(modules):
            setattr(self, f"{prefix}{i}", m)
            self._order.append(m)

    def forward(self, x):
        for m in self._order:
            x = m(x)
        return x

    def __len__(self):
        return len(self._order)

    def __iter__(self):
        return iter(self._order)
