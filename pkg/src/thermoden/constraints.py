"""Penalty-based inequality constraints and the multi-term training loss.

Constraint violations enter the loss as squared slack magnitudes computed
with relu, so gradients vanish inside the feasible region. The total loss
stacks reference-tracking error, a state-smoothness term, output bound
slacks, and per-step magnitude caps on the input/disturbance contributions
of structured models.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError


@dataclass
class PenaltyBounds:
    """Box bounds on outputs plus magnitude caps on block contributions.

    Defaults live in normalized units: the output box sits just outside the
    min-max [0, 1] range so the training data itself is always feasible,
    and the contribution caps limit how hard inputs/disturbances may push
    the latent state in one step.
    """

    y_lower: np.ndarray
    y_upper: np.ndarray
    fu_cap: np.ndarray
    fd_cap: np.ndarray

    @classmethod
    def default(cls, n_y: int, n_x: int, y_lower: float = -0.05,
                y_upper: float = 1.05, contrib_cap: float = 0.05) -> "PenaltyBounds":
        return cls(np.full(n_y, y_lower), np.full(n_y, y_upper),
                   np.full(n_x, contrib_cap), np.full(n_x, contrib_cap))

    def __post_init__(self):
        self.y_lower = np.asarray(self.y_lower, dtype=np.float64)
        self.y_upper = np.asarray(self.y_upper, dtype=np.float64)
        self.fu_cap = np.asarray(self.fu_cap, dtype=np.float64)
        self.fd_cap = np.asarray(self.fd_cap, dtype=np.float64)
        if np.any(self.y_lower > self.y_upper):
            raise ConfigError("output bounds crossed: lower > upper on some channel")
        if np.any(self.fu_cap < 0) or np.any(self.fd_cap < 0):
            raise ConfigError("contribution caps must be nonnegative")


@dataclass
class LossWeights:
    """Relative weights of the loss terms beyond the tracking MSE."""

    smoothness: float = 0.2
    output_slack: float = 1.0
    input_slack: float = 0.2
    disturbance_slack: float = 0.2

    def __post_init__(self):
        for name in ("smoothness", "output_slack", "input_slack", "disturbance_slack"):
            if getattr(self, name) < 0:
                raise ConfigError(f"loss weight {name} must be nonnegative")

    @classmethod
    def unconstrained(cls) -> "LossWeights":
        """Inequality penalties off; the smoothness regularizer stays."""
        return cls(output_slack=0.0, input_slack=0.0, disturbance_slack=0.0)


@dataclass
class LossBreakdown:
    total: float
    mse: float
    smoothness: float
    slack_y: float
    slack_u: float
    slack_d: float
    contrib_terms_skipped: bool = False


def slack_upper(v: Tensor, upper) -> Tensor:
    """Violation of v <= upper: max(0, v - upper), elementwise."""
    u = _col(upper)
    if u.shape[0] != v.shape[0]:
        raise ShapeError(f"slack_upper: value dim {v.shape[0]} != bound dim {u.shape[0]}")
    return ad.relu(ad.sub(v, Tensor(u)))


def slack_lower(v: Tensor, lower) -> Tensor:
    """Violation of lower <= v: max(0, lower - v), elementwise."""
    lo = _col(lower)
    if lo.shape[0] != v.shape[0]:
        raise ShapeError(f"slack_lower: value dim {v.shape[0]} != bound dim {lo.shape[0]}")
    return ad.relu(ad.sub(Tensor(lo), v))


def magnitude_excess(v: Tensor, cap) -> Tensor:
    """max(0, |v| - cap) built from two relu arms, keeping gradients exact
    away from the kinks."""
    c = Tensor(_col(cap))
    return ad.add(ad.relu(ad.sub(v, c)), ad.relu(ad.sub(ad.scale(v, -1.0), c)))


def _col(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64).reshape(-1, 1)


def _sq_sum(t: Tensor) -> Tensor:
    return ad.sum_all(ad.hadamard(t, t))


def multi_term_loss(ref_y: np.ndarray, rollout, bounds: PenaltyBounds,
                    weights: LossWeights) -> tuple[Tensor, LossBreakdown]:
    """Differentiable total loss plus its per-term breakdown.

    ``ref_y`` is [N x n_y] (or [N x n_y x batch]) aligned with the rollout's
    predictions. Every term is averaged over steps and batch. Rollouts
    without recorded contributions (unstructured models) get zero
    input/disturbance slack terms, flagged on the breakdown.
    """
    n = rollout.horizon
    ref = np.asarray(ref_y, dtype=np.float64)
    if ref.ndim == 2:
        ref = ref[:, :, None]
    if ref.shape[0] != n:
        raise ShapeError(f"reference has {ref.shape[0]} rows, rollout horizon is {n}")
    batch = rollout.pred_y[0].shape[1]
    if ref.shape[2] != batch:
        raise ShapeError(f"reference batch {ref.shape[2]} != rollout batch {batch}")
    norm = 1.0 / (n * batch)

    mse_terms = []
    smooth_terms = []
    slack_y_terms = []
    slack_u_terms = []
    slack_d_terms = []
    has_contrib = rollout.fu_contrib is not None
    for t in range(n):
        y = rollout.pred_y[t]
        mse_terms.append(_sq_sum(ad.sub(y, Tensor(ref[t]))))
        smooth_terms.append(_sq_sum(ad.sub(rollout.states[t + 1], rollout.states[t])))
        slack_y_terms.append(ad.add(_sq_sum(slack_upper(y, bounds.y_upper)),
                                    _sq_sum(slack_lower(y, bounds.y_lower))))
        if has_contrib:
            slack_u_terms.append(_sq_sum(magnitude_excess(rollout.fu_contrib[t],
                                                          bounds.fu_cap)))
            slack_d_terms.append(_sq_sum(magnitude_excess(rollout.fd_contrib[t],
                                                          bounds.fd_cap)))

    def total_of(terms):
        acc = terms[0]
        for term in terms[1:]:
            acc = ad.add(acc, term)
        return ad.scale(acc, norm)

    mse = total_of(mse_terms)
    smooth = total_of(smooth_terms)
    sy = total_of(slack_y_terms)
    zero = Tensor(0.0)
    su = total_of(slack_u_terms) if has_contrib else zero
    sd = total_of(slack_d_terms) if has_contrib else zero

    total = mse
    total = ad.add(total, ad.scale(smooth, weights.smoothness))
    total = ad.add(total, ad.scale(sy, weights.output_slack))
    total = ad.add(total, ad.scale(su, weights.input_slack))
    total = ad.add(total, ad.scale(sd, weights.disturbance_slack))

    breakdown = LossBreakdown(
        total=total.item(), mse=mse.item(), smoothness=smooth.item(),
        slack_y=sy.item(), slack_u=su.item(), slack_d=sd.item(),
        contrib_terms_skipped=not has_contrib)
    return total, breakdown
