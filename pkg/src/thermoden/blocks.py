"""Neural block architectures: MLP, ResNet, and stacked RNN.

All blocks share one interface: forward(Tensor) -> Tensor, reset(), params().
Inputs are column matrices [in_dim x batch]. MLP and ResNet are pure
functions of (parameters, input); RNN blocks carry per-layer hidden state
that persists across calls within one rollout and must be cleared with
reset() beforehand.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError, StateError
from .linmap import LinearMap, PerronFrobeniusMap

ACTIVATIONS = {"gelu": ad.gelu, "relu": ad.relu, "identity": ad.identity}
BLOCK_KINDS = ("mlp", "rnn", "resnet")
WEIGHT_KINDS = ("linear", "pf")


@dataclass
class BlockConfig:
    in_dim: int
    out_dim: int
    kind: str = "mlp"
    layers: int = 2
    width: int = 80
    activation: str = "gelu"
    weight_kind: str = "linear"
    lambda_min: float = 0.8
    lambda_max: float = 1.0

    def __post_init__(self):
        if self.kind not in BLOCK_KINDS:
            raise ConfigError(f"unknown block kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.weight_kind not in WEIGHT_KINDS:
            raise ConfigError(f"unknown weight kind {self.weight_kind!r}")
        if min(self.in_dim, self.out_dim, self.width, self.layers) < 1:
            raise ConfigError("block dimensions and depth must be positive")
        if self.weight_kind == "pf" and self.kind in ("mlp", "resnet"):
            if not (self.in_dim == self.width == self.out_dim):
                raise ConfigError(
                    f"pf weights need square layers: in_dim={self.in_dim}, "
                    f"width={self.width}, out_dim={self.out_dim} must all match")

    def layer_dims(self) -> list[tuple[int, int]]:
        dims = []
        for l in range(self.layers):
            d_in = self.in_dim if l == 0 else self.width
            d_out = self.out_dim if l == self.layers - 1 else self.width
            dims.append((d_in, d_out))
        return dims


def _make_map(d_out, d_in, cfg: BlockConfig, rng, name):
    if cfg.weight_kind == "pf":
        return PerronFrobeniusMap.randn(d_out, rng, cfg.lambda_min, cfg.lambda_max,
                                        name=name)
    return LinearMap.randn(d_out, d_in, rng, name=name)


class Block:
    """Shared plumbing; concrete forward rules live in the subclasses."""

    def __init__(self, config: BlockConfig, rng: np.random.Generator, name: str):
        self.config = config
        self.name = name
        self.act = ACTIVATIONS[config.activation]
        self.layer_maps = []
        self._build(rng)

    def _build(self, rng):
        raise NotImplementedError

    @property
    def in_dim(self) -> int:
        return self.config.in_dim

    @property
    def out_dim(self) -> int:
        return self.config.out_dim

    def reset(self) -> None:
        pass

    def params(self) -> list[Tensor]:
        return [p for m in self.layer_maps for p in m.params()]

    def forward(self, z: Tensor) -> Tensor:
        raise NotImplementedError

    def square_weights(self):
        """(label, matrix, eigenvalue bounds or None) for every square weight."""
        out = []
        for i, m in enumerate(self.layer_maps):
            w = m.weight_values()
            if w.shape[0] == w.shape[1]:
                bounds = m.eigenvalue_bounds() if isinstance(m, PerronFrobeniusMap) else None
                out.append((f"{self.name}.layer{i}", w, bounds))
        return out

    def _check_input(self, z: Tensor) -> None:
        if z.shape[0] != self.in_dim:
            raise ShapeError(f"{self.name}: expected input dim {self.in_dim}, "
                             f"got {z.shape[0]}")


class MLPBlock(Block):
    """Feed-forward stack; activation between layers, linear final layer."""

    def _build(self, rng):
        for l, (d_in, d_out) in enumerate(self.config.layer_dims()):
            self.layer_maps.append(
                _make_map(d_out, d_in, self.config, rng, f"{self.name}.layer{l}"))

    def forward(self, z: Tensor) -> Tensor:
        self._check_input(z)
        h = z
        last = len(self.layer_maps) - 1
        for l, m in enumerate(self.layer_maps):
            h = m.apply(h)
            if l != last:
                h = self.act(h)
        return h


class ResNetBlock(Block):
    """Residual stack: h <- h + act(W h + b) on square layers.

    Layers whose input and output widths differ (entry/exit projections)
    run without the identity skip.
    """

    def _build(self, rng):
        self._square = []
        for l, (d_in, d_out) in enumerate(self.config.layer_dims()):
            self.layer_maps.append(
                _make_map(d_out, d_in, self.config, rng, f"{self.name}.layer{l}"))
            self._square.append(d_in == d_out)

    def forward(self, z: Tensor) -> Tensor:
        self._check_input(z)
        h = z
        for m, square in zip(self.layer_maps, self._square):
            branch = self.act(m.apply(h))
            h = ad.add(h, branch) if square else branch
        return h


class RNNBlock(Block):
    """Stacked recurrent layers: h_l <- act(W_l h_{l-1} + U_l h_l^prev + b_l).

    Each depth keeps its own hidden vector and square recurrent map; all
    depths advance one step per forward() call. With pf weights the
    recurrent maps carry the eigenvalue bound while the input maps stay
    unconstrained. Hidden state is lazily sized to the incoming batch.
    """

    def _build(self, rng):
        cfg = self.config
        self.recurrent_maps = []
        for l, (d_in, d_out) in enumerate(cfg.layer_dims()):
            self.layer_maps.append(
                LinearMap.randn(d_out, d_in, rng, name=f"{self.name}.layer{l}"))
            if cfg.weight_kind == "pf":
                rec = PerronFrobeniusMap.randn(d_out, rng, cfg.lambda_min,
                                               cfg.lambda_max, bias=False,
                                               name=f"{self.name}.recurrent{l}")
            else:
                rec = LinearMap.randn(d_out, d_out, rng, bias=False,
                                      name=f"{self.name}.recurrent{l}")
            self.recurrent_maps.append(rec)
        self.hidden = None  # None = never reset; list of per-layer tensors after

    def reset(self) -> None:
        self.hidden = [None] * self.config.layers

    def params(self) -> list[Tensor]:
        out = super().params()
        for m in self.recurrent_maps:
            out.extend(m.params())
        return out

    def forward(self, z: Tensor) -> Tensor:
        self._check_input(z)
        if self.hidden is None:
            raise StateError(f"{self.name}: RNN block used before reset()")
        h = z
        batch = z.shape[1]
        for l, (m, rec) in enumerate(zip(self.layer_maps, self.recurrent_maps)):
            prev = self.hidden[l]
            if prev is None:
                prev = Tensor(np.zeros((rec.out_dim, batch)))
            h = self.act(ad.add(m.apply(h), rec.apply(prev)))
            self.hidden[l] = h
        return h

    def square_weights(self):
        out = super().square_weights()
        for i, m in enumerate(self.recurrent_maps):
            bounds = m.eigenvalue_bounds() if isinstance(m, PerronFrobeniusMap) else None
            out.append((f"{self.name}.recurrent{i}", m.weight_values(), bounds))
        return out


_BLOCK_CLASSES = {"mlp": MLPBlock, "rnn": RNNBlock, "resnet": ResNetBlock}


def build_block(config: BlockConfig, rng: np.random.Generator, name: str) -> Block:
    return _BLOCK_CLASSES[config.kind](config, rng, name)


def observe(observer: Block, past_y: np.ndarray) -> Tensor:
    """Initial latent state from a window of past outputs.

    ``past_y`` is [N x n_y] (or [N x n_y x batch]), oldest row first; it is
    flattened in time order and pushed through the observer block.
    """
    arr = np.asarray(past_y, dtype=np.float64)
    if arr.ndim == 2:
        flat = arr.reshape(-1, 1)
    elif arr.ndim == 3:
        flat = arr.reshape(-1, arr.shape[2])
    else:
        raise ShapeError(f"past output window must be 2-D or 3-D, got ndim={arr.ndim}")
    if flat.shape[0] != observer.in_dim:
        raise ShapeError(
            f"observer expects a flattened window of length {observer.in_dim}, "
            f"got {flat.shape[0]} (window rows x output channels)")
    return observer.forward(Tensor(flat))
