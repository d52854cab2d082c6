"""Linear weight parameterizations for neural blocks.

Two kinds: plain affine maps, and the Perron-Frobenius factorization that
keeps the dominant eigenvalue of a square transition weight inside a chosen
interval. The factorization builds a nonnegative matrix whose row sums all
lie in [lambda_min, lambda_max]; by the Perron-Frobenius theorem its
spectral radius is then trapped in the same interval.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError


class LinearMap:
    """Affine map x -> W x + b with unconstrained weights."""

    def __init__(self, weight, bias=None, name: str = "linear", trainable: bool = True):
        w = np.atleast_2d(np.asarray(weight, dtype=np.float64))
        self.weight = Tensor(w, requires_grad=trainable, name=f"{name}.W")
        self.has_bias = bias is not None
        if self.has_bias:
            self.bias = Tensor(np.asarray(bias, dtype=np.float64).reshape(-1, 1),
                               requires_grad=trainable, name=f"{name}.b")
            if self.bias.shape[0] != w.shape[0]:
                raise ShapeError(f"{name}: bias length {self.bias.shape[0]} "
                                 f"!= output dim {w.shape[0]}")
        self.name = name

    @classmethod
    def randn(cls, out_dim: int, in_dim: int, rng: np.random.Generator,
              name: str = "linear", bias: bool = True) -> "LinearMap":
        # scaled normal init keeps pre-activations O(1) at any width
        w = rng.normal(0.0, 1.0 / np.sqrt(in_dim), size=(out_dim, in_dim))
        b = np.zeros(out_dim) if bias else None
        return cls(w, b, name=name)

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    def apply(self, x: Tensor) -> Tensor:
        out = ad.matmul(self.weight, x)
        if self.has_bias:
            out = ad.add(out, self.bias)
        return out

    def weight_values(self) -> np.ndarray:
        return self.weight.values

    def params(self) -> list[Tensor]:
        return [self.weight, self.bias] if self.has_bias else [self.weight]


@dataclass
class ComposedWeight:
    """Transition weight assembled from the factorized parameters.

    ``weight`` is the nonnegative matrix applied to the state; ``damping``
    holds the per-entry row-sum budget in [lambda_min, lambda_max].
    """

    weight: Tensor
    damping: Tensor


class PerronFrobeniusMap:
    """Square affine map whose weight has a bounded spectral radius.

    The weight is composed as rowsoftmax(raw_mixing) * damping, where
    damping = lambda_max - (lambda_max - lambda_min) * sigmoid(raw_damping).
    Every entry is nonnegative and every row sums to a value inside
    [lambda_min, lambda_max], for any parameter values. The composition is
    rebuilt from the raw parameters on every application, never cached.
    """

    def __init__(self, raw_damping, raw_mixing, lambda_min: float, lambda_max: float,
                 bias=None, name: str = "pf"):
        if not (0.0 <= lambda_min <= lambda_max):
            raise ConfigError(
                f"{name}: need 0 <= lambda_min <= lambda_max, got "
                f"[{lambda_min}, {lambda_max}]")
        dm = np.atleast_2d(np.asarray(raw_damping, dtype=np.float64))
        mx = np.atleast_2d(np.asarray(raw_mixing, dtype=np.float64))
        if dm.shape[0] != dm.shape[1] or dm.shape != mx.shape:
            raise ShapeError(f"{name}: factor matrices must be square and equal-shape, "
                             f"got {dm.shape} and {mx.shape}")
        self.raw_damping = Tensor(dm, requires_grad=True, name=f"{name}.damping")
        self.raw_mixing = Tensor(mx, requires_grad=True, name=f"{name}.mixing")
        self.lambda_min = float(lambda_min)
        self.lambda_max = float(lambda_max)
        self.has_bias = bias is not None
        if self.has_bias:
            self.bias = Tensor(np.asarray(bias, dtype=np.float64).reshape(-1, 1),
                               requires_grad=True, name=f"{name}.b")
        self.name = name

    @classmethod
    def randn(cls, dim: int, rng: np.random.Generator, lambda_min: float = 0.8,
              lambda_max: float = 1.0, name: str = "pf",
              bias: bool = True) -> "PerronFrobeniusMap":
        return cls(rng.normal(size=(dim, dim)), rng.normal(size=(dim, dim)),
                   lambda_min, lambda_max,
                   bias=np.zeros(dim) if bias else None, name=name)

    @property
    def out_dim(self) -> int:
        return self.raw_damping.shape[0]

    in_dim = out_dim

    def compose(self) -> ComposedWeight:
        span = self.lambda_max - self.lambda_min
        damping = ad.add(ad.scale(ad.sigmoid(self.raw_damping), -span),
                         Tensor(self.lambda_max))
        weight = ad.hadamard(ad.row_softmax(self.raw_mixing), damping)
        return ComposedWeight(weight=weight, damping=damping)

    def apply(self, x: Tensor) -> Tensor:
        out = ad.matmul(self.compose().weight, x)
        if self.has_bias:
            out = ad.add(out, self.bias)
        return out

    def weight_values(self) -> np.ndarray:
        with ad.no_grad():
            return self.compose().weight.values

    def eigenvalue_bounds(self) -> tuple[float, float]:
        return (self.lambda_min, self.lambda_max)

    def params(self) -> list[Tensor]:
        out = [self.raw_damping, self.raw_mixing]
        if self.has_bias:
            out.append(self.bias)
        return out
