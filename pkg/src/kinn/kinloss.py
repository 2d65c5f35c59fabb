"""Training losses: plain MSE and the velocity-consistency (kinematic) loss.

Predictions and targets for the kinematic loss use the layout produced by
:func:`kinn.dataset.assemble_vectors`: ``T_f`` values followed by ``T_f - 1``
velocities. For predicted values ``v``, predicted velocities ``e`` and
observed values ``v_hat``::

    L = mean_t (v_t - v_hat_t)^2 + w * mean_{t>=2} (v_t - v_{t-1} - e_{t-1})^2

The second term involves predictions only, so velocity outputs are shaped by
consistency, not by supervision, unless ``velocity_supervision`` is set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from kinn import kernels
from kinn.autodiff import Graph


@dataclass(frozen=True)
class LossSpec:
    kind: str = "mse"
    t_f: int = 30
    velocity_supervision: bool = False
    weight: float = 1.0

    def __post_init__(self):
        if self.kind not in ("mse", "kinematic"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.kind == "kinematic" and self.t_f < 2:
            raise ValueError("kinematic loss needs T_f >= 2")

    @property
    def width(self) -> int:
        return 2 * self.t_f - 1 if self.kind == "kinematic" else self.t_f


def mse_loss(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def kinematic_terms(pred, target, t_f: int) -> tuple[float, float, float]:
    """(value term, consistency term, velocity term) averaged over rows."""
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if t_f < 2:
        raise ValueError("kinematic loss needs T_f >= 2")
    if pred.shape != target.shape or pred.shape[-1] != 2 * t_f - 1:
        raise ValueError(f"expected matching (..., {2 * t_f - 1}) arrays, "
                         f"got {pred.shape} and {target.shape}")
    v, e = pred[:, :t_f], pred[:, t_f:]
    l_v = np.mean(np.sum((v - target[:, :t_f]) ** 2, axis=1) / t_f)
    l_ve = np.mean(np.sum((v[:, 1:] - v[:, :-1] - e) ** 2, axis=1) / (t_f - 1))
    l_e = np.mean(np.sum((e - target[:, t_f:]) ** 2, axis=1) / (t_f - 1))
    return float(l_v), float(l_ve), float(l_e)


def kinematic_loss(pred, target, spec: LossSpec) -> float:
    if spec.kind != "kinematic":
        raise ValueError("spec must be of kind 'kinematic'")
    loss, _ = kernels.kinloss(pred, target, spec.t_f, spec.weight, spec.velocity_supervision, False)
    return float(loss)


def loss_value(pred, target, spec: LossSpec) -> float:
    if spec.kind == "mse":
        return mse_loss(pred, target)
    return kinematic_loss(pred, target, spec)


def mse_node(g: Graph, pred: int, target: int) -> int:
    return g.mean(g.square(g.sub(pred, target)))


def kinematic_node_composed(g: Graph, pred: int, target: int, spec: LossSpec) -> int:
    """Kinematic loss assembled from primitive ops (reference route)."""
    t_f = spec.t_f
    v = g.slice(pred, 0, t_f)
    v_hat = g.slice(target, 0, t_f)
    # batch mean of the per-row average equals the mean over all entries
    value_term = g.mean(g.square(g.sub(v, v_hat)))
    nxt = g.slice(pred, 1, t_f)
    prev = g.slice(pred, 0, t_f - 1)
    vel = g.slice(pred, t_f, 2 * t_f - 1)
    gap = g.sub(nxt, g.add(prev, vel))
    cons = g.mean(g.square(gap))
    if spec.weight != 1.0:
        cons = g.scale(cons, spec.weight)
    total = g.add(value_term, cons)
    if spec.velocity_supervision:
        vel_hat = g.slice(target, t_f, 2 * t_f - 1)
        total = g.add(total, g.mean(g.square(g.sub(vel, vel_hat))))
    return total


def attach_loss(g: Graph, pred: int, spec: LossSpec, target_name: str = "y",
                fused: bool = True) -> int:
    """Add a target input and the loss node on top of ``pred``; returns the loss id."""
    target = g.input(target_name)
    if spec.kind == "mse":
        return mse_node(g, pred, target)
    if fused:
        return g.kinematic_penalty(pred, target, spec.t_f, spec.weight, spec.velocity_supervision)
    return kinematic_node_composed(g, pred, target, spec)
