from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from kinn.autodiff import ADAM_BETA1, ADAM_BETA2, ADAM_EPS, GraphError, adam_step, value_and_gradients
from kinn.kinloss import LossSpec
from kinn.models.base import ModelHandle


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainResult:
    losses: list[float] = field(default_factory=list)
    steps: int = 0


def train(model: ModelHandle, X, Y, spec: LossSpec, epochs: int = 1000, batch_size: int = 32,
          lr: float = 0.01, rng: np.random.Generator | None = None, fused: bool = True,
          beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2, eps: float = ADAM_EPS) -> TrainResult:
    """Mini-batch adam on ``model`` in place; records the mean loss per epoch.

    With fewer rows than ``batch_size`` every epoch is a single full-batch step.
    Rows are reshuffled each epoch only when there is more than one batch.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape[0] != Y.shape[0]:
        raise ValueError("X and Y row counts differ")
    if Y.shape[1] != model.config.output_dim:
        raise ValueError(f"target width {Y.shape[1]} != model output {model.config.output_dim}")
    if spec.kind == "kinematic" and Y.shape[1] != spec.width:
        raise ValueError(f"kinematic loss with T_f={spec.t_f} needs width {spec.width}")
    loss_id, target = model.loss_node(spec, fused)
    rng = np.random.default_rng(0) if rng is None else rng
    rows = X.shape[0]
    result = TrainResult()
    for epoch in range(epochs):
        order = rng.permutation(rows) if rows > batch_size else np.arange(rows)
        total = 0.0
        for start in range(0, rows, batch_size):
            idx = order[start : start + batch_size]
            try:
                loss, grads = value_and_gradients(model.graph, {"x": X[idx], target: Y[idx]},
                                                  model.params, loss_id)
            except GraphError as exc:
                raise TrainingDiverged(f"epoch {epoch}: {exc}") from exc
            if not np.isfinite(loss):
                raise TrainingDiverged(f"epoch {epoch}: loss is {loss}")
            adam_step(model.params, grads, lr, beta1, beta2, eps)
            total += loss * len(idx)
            result.steps += 1
        result.losses.append(total / rows)
    return result
