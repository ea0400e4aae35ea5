"""Parameter containers: modules, linear layers, layer norm, seeded RNG."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from .conv import conv2d, conv3d
from .tensor import NumericsError, Tensor, as_tensor, layer_norm, matmul


class Rng:
    """Seeded generator.

    Wraps numpy's PCG64 bit generator (O'Neill's permuted congruential
    generator, 128-bit state), so a given seed reproduces the same stream on
    every platform numpy supports.
    """

    algorithm = "PCG64"

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, lo, hi, size=None):
        return self.gen.uniform(lo, hi, size)

    def integers(self, lo, hi=None, size=None):
        return self.gen.integers(lo, hi, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.gen.normal(loc, scale, size)

    def choice(self, a, size=None, replace=True):
        return self.gen.choice(a, size=size, replace=replace)

    def spawn(self, key: int) -> "Rng":
        """Independent child stream, derived deterministically from seed and key."""
        return Rng(np.random.SeedSequence([self.seed, key]).generate_state(1, np.uint64)[0])


def param(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


class Module:
    """Attribute-based parameter registry.

    Parameters are ``Tensor`` attributes with ``requires_grad``; submodules
    are ``Module`` attributes or lists of modules.  Names are dotted paths in
    attribute definition order.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        unknown = set(state) - set(own)
        if missing or unknown:
            raise NumericsError("load_state_dict", "parameter names differ",
                                expected=sorted(missing), got=sorted(unknown))
        for k, p in own.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise NumericsError("load_state_dict", f"shape of {k}", expected=p.shape,
                                    got=arr.shape)
            p.data = arr.copy()


def _uniform_init(rng: Rng, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape)


class Linear(Module):
    """y = x @ weight.T + bias, with ``weight[out, in]``.

    Weights are uniform in +-1/sqrt(fan_in); biases start at zero.  ``zero``
    gives an all-zero layer.
    """

    def __init__(self, n_in: int, n_out: int, rng: Rng, zero: bool = False):
        w = np.zeros((n_out, n_in)) if zero else _uniform_init(rng, (n_out, n_in), n_in)
        self.weight = param(w)
        self.bias = param(np.zeros(n_out))

    def __call__(self, x: Tensor) -> Tensor:
        x = as_tensor(x)
        if x.shape[-1] != self.weight.shape[1]:
            raise NumericsError("Linear", "input width", expected=self.weight.shape[1],
                                got=x.shape[-1])
        return matmul(x, self.weight.T) + self.bias


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = param(np.ones(dim))
        self.beta = param(np.zeros(dim))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self.eps)


class Conv3d(Module):
    def __init__(self, cin: int, cout: int, rng: Rng, kernel: int = 3):
        fan_in = cin * kernel ** 3
        self.weight = param(_uniform_init(rng, (cout, cin) + (kernel,) * 3, fan_in))
        self.bias = param(np.zeros(cout))

    def __call__(self, x: Tensor) -> Tensor:
        return conv3d(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, rng: Rng, kernel: int = 3):
        fan_in = cin * kernel ** 2
        self.weight = param(_uniform_init(rng, (cout, cin) + (kernel,) * 2, fan_in))
        self.bias = param(np.zeros(cout))

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias)
