"""Architectures over the autodiff core, plus closed-form and GMDH fitting."""

from kinn.models.base import (
    ARCHITECTURES,
    RAW_BY_DEFAULT,
    ModelConfig,
    ModelHandle,
    load_model,
    predict,
    save_model,
)
from kinn.models.gmdh import build_gmdh, gmdh_param_count, grow_gmdh
from kinn.models.nets import (
    attention_param_count,
    build_attention,
    build_kgate,
    build_linear,
    build_mlp,
    build_rbf,
    fit_linear_closed_form,
    kgate_param_count,
    mlp_param_count,
    rbf_param_count,
    solve_least_squares,
)
from kinn.models.training import TrainingDiverged, TrainResult, train


def build_model(config: ModelConfig, train_inputs=None) -> ModelHandle:
    """Freshly initialized model for ``config.arch``.

    ``linear_closed_form`` and ``gmdh`` come back with zero weights; they are
    fitted with :func:`fit_linear_closed_form` / :func:`grow_gmdh` instead.
    """
    arch = config.arch
    if arch == "linear_closed_form":
        return build_linear(config)
    if arch in ("linear_sgd", "mlp_relu", "mlp_sigmoid", "mlp_tanh"):
        return build_mlp(config)
    if arch == "rbf":
        return build_rbf(config, train_inputs)
    if arch == "kgate":
        return build_kgate(config)
    if arch == "attention":
        return build_attention(config)
    if arch == "gmdh":
        return build_gmdh(config)
    raise ValueError(f"unknown architecture {arch!r}")


def expected_param_count(config: ModelConfig) -> int:
    m, n = config.input_dim, config.output_dim
    arch = config.arch
    if arch == "linear_closed_form":
        return m * n + n
    if arch in ("linear_sgd", "mlp_relu", "mlp_sigmoid", "mlp_tanh"):
        return mlp_param_count(m, n)
    if arch == "rbf":
        return rbf_param_count(m, n, int(config.arch_params.get("centers", config.h2)))
    if arch == "kgate":
        return kgate_param_count(m, n)
    if arch == "attention":
        return attention_param_count(m, n, int(config.arch_params.get("width", 8)))
    if arch == "gmdh":
        return gmdh_param_count(m, n, [len(p) for p in config.arch_params.get("layers", [])])
    raise ValueError(arch)


__all__ = [
    "ARCHITECTURES", "RAW_BY_DEFAULT", "ModelConfig", "ModelHandle", "TrainResult",
    "TrainingDiverged", "build_attention", "build_gmdh", "build_kgate", "build_linear",
    "build_mlp", "build_model", "build_rbf", "expected_param_count",
    "fit_linear_closed_form", "grow_gmdh", "load_model", "predict", "save_model",
    "solve_least_squares", "train",
]
