from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from kinn.autodiff import Graph, ParamStore, evaluate

ARCHITECTURES = (
    "linear_closed_form",
    "linear_sgd",
    "mlp_relu",
    "mlp_sigmoid",
    "mlp_tanh",
    "rbf",
    "kgate",
    "gmdh",
    "attention",
)

# Models that run on raw (non-normalized) inputs by default.
RAW_BY_DEFAULT = frozenset({"linear_closed_form", "linear_sgd", "mlp_relu", "kgate"})


@dataclass
class ModelConfig:
    arch: str
    input_dim: int
    output_dim: int
    kinematic: bool = False
    normalize: bool = False
    seed: int = 0
    arch_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.arch!r}; choose from {ARCHITECTURES}")
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be positive")

    @classmethod
    def for_window(cls, arch: str, t_p: int, t_f: int, kinematic: bool, **kw) -> "ModelConfig":
        m = 2 * t_p - 1 if kinematic else t_p
        n = 2 * t_f - 1 if kinematic else t_f
        return cls(arch, m, n, kinematic=kinematic, **kw)

    @property
    def h1(self) -> int:
        return self.input_dim

    @property
    def h2(self) -> int:
        return 2 * self.input_dim + 1


class ModelHandle:
    """A differentiable graph, its parameters and the config that built it."""

    def __init__(self, graph: Graph, params: ParamStore, config: ModelConfig):
        self.graph = graph
        self.params = params
        self.config = config
        self._loss_nodes: dict = {}

    @property
    def pred_node(self) -> int:
        return self.graph.output

    def loss_node(self, spec, fused: bool = True) -> tuple[int, str]:
        """Loss node id and its target input name, created on first use."""
        from kinn.kinloss import attach_loss

        key = (spec, fused)
        if key not in self._loss_nodes:
            out = self.graph.output
            name = f"y{len(self._loss_nodes)}"
            self._loss_nodes[key] = (attach_loss(self.graph, out, spec, name, fused), name)
            self.graph.set_output(out)
        return self._loss_nodes[key]

    def __repr__(self):
        return (f"ModelHandle({self.config.arch}, m={self.config.input_dim}, "
                f"n={self.config.output_dim}, params={self.params.count()})")


def predict(model: ModelHandle, x) -> np.ndarray:
    """Forward pass for one input vector (or a batch of row vectors)."""
    x = np.asarray(x, dtype=np.float64)
    m = model.config.input_dim
    if x.shape[-1] != m or x.ndim not in (1, 2):
        raise ValueError(f"expected input of length {m}, got shape {x.shape}")
    single = x.ndim == 1
    out = evaluate(model.graph, {"x": x[None, :] if single else x}, model.params)
    return out[0] if single else out


def linear_params(params: ParamStore, prefix: str, fan_in: int, fan_out: int,
                  rng: np.random.Generator) -> None:
    params.init_uniform(f"{prefix}.W", (fan_in, fan_out), fan_in, rng)
    params.init_uniform(f"{prefix}.b", (fan_out,), fan_in, rng)


def dense(g: Graph, x: int, prefix: str) -> int:
    return g.linear(x, g.param(f"{prefix}.W"), g.param(f"{prefix}.b"))


def save_model(model: ModelHandle, path) -> None:
    """JSON snapshot: config header plus every parameter as shape + flat values."""
    doc = {
        "format": "kinn-model/1",
        "config": asdict(model.config),
        "params": {name: {"shape": list(arr.shape), "values": arr.ravel().tolist()}
                   for name, arr in model.params.values.items()},
    }
    Path(path).write_text(json.dumps(doc))


def load_model(path) -> ModelHandle:
    from kinn.models import build_model

    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "kinn-model/1":
        raise ValueError(f"{path}: not a kinn model snapshot")
    config = ModelConfig(**doc["config"])
    model = build_model(config)
    for name, rec in doc["params"].items():
        model.params.set(name, np.array(rec["values"]).reshape(rec["shape"]))
    return model
