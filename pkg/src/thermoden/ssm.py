"""Recurrent neural state-space models and their multi-step rollouts.

The structured model advances the latent state through three additive
blocks (state transition, control input, disturbance); the unstructured
model pushes the concatenated [state; input; disturbance] vector through a
single lumped block. Both read the initial state off a window of past
outputs via an observer block, and both support open-loop simulation over a
whole data split: one anchoring, then free running on recorded inputs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .blocks import Block, BlockConfig, build_block, observe
from .errors import NumericError, ShapeError
from .linmap import LinearMap


@dataclass
class RolloutResult:
    """Per-step tensors from one differentiable rollout.

    ``states`` has horizon+1 entries (the observer state first); the
    contribution lists are only populated by structured models.
    """

    pred_y: list = field(default_factory=list)
    states: list = field(default_factory=list)
    fu_contrib: list | None = None
    fd_contrib: list | None = None

    @property
    def horizon(self) -> int:
        return len(self.pred_y)

    def pred_y_values(self) -> np.ndarray:
        """[N x n_y] prediction matrix (batch axis kept only when batched)."""
        stacked = np.stack([t.values for t in self.pred_y])
        return stacked[:, :, 0] if stacked.shape[2] == 1 else stacked

    def state_values(self) -> np.ndarray:
        stacked = np.stack([t.values for t in self.states])
        return stacked[:, :, 0] if stacked.shape[2] == 1 else stacked


def _as_step_matrix(name, arr, horizon):
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or a.shape[0] != horizon:
        raise ShapeError(f"{name}: expected {horizon} rows, got shape {np.shape(arr)}")
    return a


def _check_finite(x: Tensor, step: int, what: str) -> None:
    if not np.all(np.isfinite(x.values)):
        raise NumericError(f"non-finite {what} at rollout step {step}")


class _SSMBase:
    def reset(self) -> None:
        for b in self._blocks():
            b.reset()

    def params(self) -> list[Tensor]:
        out = []
        for b in self._blocks():
            out.extend(b.params())
        return out

    def named_params(self) -> list[tuple[str, Tensor]]:
        return [(p.name, p) for p in self.params()]

    def open_loop(self, y: np.ndarray, u: np.ndarray, d: np.ndarray):
        """Free-running simulation across a full split.

        The observer consumes the first N observed outputs; the model then
        runs on recorded inputs with no re-anchoring. Returns (pred, ref)
        matrices covering rows N..end of the split.
        """
        n = self.horizon
        y = np.asarray(y, dtype=np.float64)
        u = np.asarray(u, dtype=np.float64)
        d = np.asarray(d, dtype=np.float64)
        if len(y) <= n:
            raise ShapeError(f"split has {len(y)} rows; need more than the "
                             f"observer window N={n}")
        steps = len(y) - n
        with ad.no_grad():
            result = self.rollout(y[:n], u[n - 1:-1], d[n - 1:-1], horizon=steps)
        return result.pred_y_values(), y[n:]


class StructuredSSM(_SSMBase):
    """Additively decomposed dynamics: x+ = f_x(x) + f_u(u) + f_d(d), y = f_y(x)."""

    def __init__(self, transition: Block, input_block: Block, disturbance: Block,
                 output_map, observer: Block, horizon: int):
        self.transition = transition
        self.input_block = input_block
        self.disturbance = disturbance
        self.output_map = output_map
        self.observer = observer
        self.horizon = int(horizon)
        self.structured = True

    def _blocks(self):
        blocks = [self.transition, self.input_block, self.disturbance, self.observer]
        if isinstance(self.output_map, Block):
            blocks.append(self.output_map)
        return blocks

    def params(self):
        out = super().params()
        if isinstance(self.output_map, LinearMap):
            out.extend(self.output_map.params())
        return out

    def _output(self, x: Tensor) -> Tensor:
        if isinstance(self.output_map, Block):
            return self.output_map.forward(x)
        return self.output_map.apply(x)

    def rollout(self, past_y, u, d, x0: Tensor | None = None,
                horizon: int | None = None) -> RolloutResult:
        """Differentiable N-step prediction from a past-output window.

        u[t] and d[t] drive the transition from states[t] to states[t+1];
        pred_y[t] is the output of states[t+1]. Passing ``x0`` skips the
        observer (used for continuation rollouts).
        """
        n = self.horizon if horizon is None else int(horizon)
        u = _as_step_matrix("inputs", u, n)
        d = _as_step_matrix("disturbances", d, n)
        self.reset()
        if x0 is None:
            x0 = observe(self.observer, np.asarray(past_y, dtype=np.float64))
        result = RolloutResult(fu_contrib=[], fd_contrib=[])
        result.states.append(x0)
        x = x0
        for t in range(n):
            from_u = self.input_block.forward(Tensor(u[t]))
            from_d = self.disturbance.forward(Tensor(d[t]))
            x = ad.add(ad.add(self.transition.forward(x), from_u), from_d)
            _check_finite(x, t, "state")
            y = self._output(x)
            _check_finite(y, t, "output")
            result.states.append(x)
            result.pred_y.append(y)
            result.fu_contrib.append(from_u)
            result.fd_contrib.append(from_d)
        return result

    def dynamics_weights(self):
        """Square transition weights for spectral analysis."""
        return self.transition.square_weights()


class UnstructuredSSM(_SSMBase):
    """Lumped dynamics: x+ = f([x; u; d]), y = f_y(x)."""

    def __init__(self, dynamics: Block, output_map, observer: Block, horizon: int):
        self.dynamics = dynamics
        self.output_map = output_map
        self.observer = observer
        self.horizon = int(horizon)
        self.structured = False

    def _blocks(self):
        blocks = [self.dynamics, self.observer]
        if isinstance(self.output_map, Block):
            blocks.append(self.output_map)
        return blocks

    def params(self):
        out = super().params()
        if isinstance(self.output_map, LinearMap):
            out.extend(self.output_map.params())
        return out

    def _output(self, x: Tensor) -> Tensor:
        if isinstance(self.output_map, Block):
            return self.output_map.forward(x)
        return self.output_map.apply(x)

    def rollout(self, past_y, u, d, x0: Tensor | None = None,
                horizon: int | None = None) -> RolloutResult:
        n = self.horizon if horizon is None else int(horizon)
        u = _as_step_matrix("inputs", u, n)
        d = _as_step_matrix("disturbances", d, n)
        self.reset()
        if x0 is None:
            x0 = observe(self.observer, np.asarray(past_y, dtype=np.float64))
        result = RolloutResult()
        result.states.append(x0)
        x = x0
        for t in range(n):
            stacked = ad.concat_rows([x, Tensor(u[t]), Tensor(d[t])])
            x = self.dynamics.forward(stacked)
            _check_finite(x, t, "state")
            y = self._output(x)
            _check_finite(y, t, "output")
            result.states.append(x)
            result.pred_y.append(y)
        return result

    def dynamics_weights(self):
        return self.dynamics.square_weights()


def open_loop_simulate(model, y, u, d):
    """Module-level alias for model.open_loop (full-split free run)."""
    return model.open_loop(y, u, d)


def build_structured(n_y: int, n_u: int, n_d: int, horizon: int, seed: int,
                     n_x: int = 80, layers: int = 2, width: int = 80,
                     block_kind: str = "mlp", weight_kind: str = "linear",
                     activation: str = "gelu", lambda_min: float = 0.8,
                     lambda_max: float = 1.0) -> StructuredSSM:
    """Standard structured model; pf weights go on the transition block only."""
    rng = np.random.default_rng(seed)
    common = dict(layers=layers, width=width, activation=activation,
                  lambda_min=lambda_min, lambda_max=lambda_max)
    transition = build_block(
        BlockConfig(n_x, n_x, kind=block_kind, weight_kind=weight_kind, **common),
        rng, "fx")
    input_block = build_block(
        BlockConfig(n_u, n_x, kind=block_kind, **common), rng, "fu")
    disturbance = build_block(
        BlockConfig(n_d, n_x, kind=block_kind, **common), rng, "fd")
    output_map = LinearMap.randn(n_y, n_x, rng, name="fy")
    observer = build_block(
        BlockConfig(horizon * n_y, n_x, kind="mlp", **common), rng, "fo")
    return StructuredSSM(transition, input_block, disturbance, output_map,
                         observer, horizon)


def build_unstructured(n_y: int, n_u: int, n_d: int, horizon: int, seed: int,
                       n_x: int = 80, layers: int = 2, width: int = 80,
                       block_kind: str = "mlp", weight_kind: str = "linear",
                       activation: str = "gelu", lambda_min: float = 0.8,
                       lambda_max: float = 1.0) -> UnstructuredSSM:
    """Lumped model; pf on a non-square mlp/resnet dynamics block falls back
    to linear weights (the eigenvalue factorization needs square layers)."""
    rng = np.random.default_rng(seed)
    common = dict(layers=layers, width=width, activation=activation,
                  lambda_min=lambda_min, lambda_max=lambda_max)
    eff_weight = weight_kind
    if weight_kind == "pf" and block_kind in ("mlp", "resnet"):
        eff_weight = "linear"
    dynamics = build_block(
        BlockConfig(n_x + n_u + n_d, n_x, kind=block_kind, weight_kind=eff_weight,
                    **common), rng, "f")
    output_map = LinearMap.randn(n_y, n_x, rng, name="fy")
    observer = build_block(
        BlockConfig(horizon * n_y, n_x, kind="mlp", **common), rng, "fo")
    return UnstructuredSSM(dynamics, output_map, observer, horizon)


def write_rollout_csv(path, pred: np.ndarray, ref: np.ndarray) -> None:
    """Trajectory export: step, y_pred_1..n, y_ref_1..n."""
    pred = np.asarray(pred)
    ref = np.asarray(ref)
    if pred.shape != ref.shape:
        raise ShapeError(f"prediction {pred.shape} and reference {ref.shape} differ")
    n_y = pred.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step"] + [f"y_pred_{i + 1}" for i in range(n_y)]
                        + [f"y_ref_{i + 1}" for i in range(n_y)])
        for step in range(pred.shape[0]):
            row = [step] + [f"{v:.17g}" for v in pred[step]] + \
                  [f"{v:.17g}" for v in ref[step]]
            writer.writerow(row)
