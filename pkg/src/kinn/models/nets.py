"""Graph builders for the fixed-topology architectures.

All trunks use two hidden layers of widths ``m`` and ``2m + 1`` where ``m``
is the model's actual input dimension, followed by a linear readout.
Weights are stored ``(fan_in, fan_out)`` and applied to row vectors.
"""

from __future__ import annotations

import numpy as np

from kinn.autodiff import Graph, ParamStore
from kinn.models.base import ModelConfig, ModelHandle, dense, linear_params

MLP_ACTIVATIONS = {
    "linear_sgd": None,
    "mlp_relu": "relu",
    "mlp_sigmoid": "sigmoid",
    "mlp_tanh": "tanh",
}


def _rng(config: ModelConfig) -> np.random.Generator:
    return np.random.default_rng(config.seed)


# -- linear regression, closed form ---------------------------------------

def build_linear(config: ModelConfig) -> ModelHandle:
    g = Graph()
    x = g.input("x")
    g.set_output(dense(g, x, "out"))
    params = ParamStore()
    linear_params(params, "out", config.input_dim, config.output_dim, _rng(config))
    return ModelHandle(g, params, config)


def solve_least_squares(X, Y) -> np.ndarray:
    """Weights (with bias as the last row) minimizing ||[X 1] W - Y||^2.

    Uses an SVD-based solve. When the design is rank deficient the
    ridge-regularized system with lambda = 1e-8 * trace(X^T X) / cols is
    solved instead, via an augmented least-squares problem.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("X must be a non-empty 2-D matrix")
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[0] != X.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
    Xb = np.hstack([X, np.ones((X.shape[0], 1))])
    W, _, rank, _ = np.linalg.lstsq(Xb, Y, rcond=None)
    if rank < Xb.shape[1]:
        cols = Xb.shape[1]
        lam = 1e-8 * float(np.sum(Xb * Xb)) / X.shape[1]
        if lam == 0.0:
            lam = 1e-8
        aug_X = np.vstack([Xb, np.sqrt(lam) * np.eye(cols)])
        aug_Y = np.vstack([Y, np.zeros((cols, Y.shape[1]))])
        W = np.linalg.lstsq(aug_X, aug_Y, rcond=None)[0]
    return W


def fit_linear_closed_form(X, Y, config: ModelConfig | None = None) -> ModelHandle:
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.size == 0:
        raise ValueError("empty training matrix")
    if Y.ndim == 1:
        Y = Y[:, None]
    W = solve_least_squares(X, Y)
    if config is None:
        config = ModelConfig("linear_closed_form", X.shape[1], Y.shape[1])
    model = build_linear(config)
    model.params.set("out.W", W[:-1])
    model.params.set("out.b", W[-1])
    return model


# -- two-hidden-layer perceptrons ------------------------------------------

def _activate(g: Graph, h: int, kind: str | None) -> int:
    if kind is None:
        return h
    return getattr(g, kind)(h)


def build_mlp(config: ModelConfig) -> ModelHandle:
    """y = W3 a(W2 a(W1 x + b1) + b2) + b3, widths m -> m -> 2m+1 -> n."""
    if config.arch not in MLP_ACTIVATIONS:
        raise ValueError(f"{config.arch!r} is not an MLP architecture")
    act = MLP_ACTIVATIONS[config.arch]
    m, n, h1, h2 = config.input_dim, config.output_dim, config.h1, config.h2
    rng = _rng(config)
    params = ParamStore()
    linear_params(params, "l1", m, h1, rng)
    linear_params(params, "l2", h1, h2, rng)
    linear_params(params, "out", h2, n, rng)

    g = Graph()
    x = g.input("x")
    h = _activate(g, dense(g, x, "l1"), act)
    h = _activate(g, dense(g, h, "l2"), act)
    g.set_output(dense(g, h, "out"))
    return ModelHandle(g, params, config)


def mlp_param_count(m: int, n: int) -> int:
    h1, h2 = m, 2 * m + 1
    return (m * h1 + h1) + (h1 * h2 + h2) + (h2 * n + n)


# -- radial basis functions ------------------------------------------------

def build_rbf(config: ModelConfig, train_inputs=None) -> ModelHandle:
    """Sum of K Gaussian bumps with trainable centers, widths and output weights.

    ``train_inputs`` seeds the centers; without it they are drawn uniformly
    from [0, 1]. Widths are stored as log(b) so b stays positive.
    """
    m, n = config.input_dim, config.output_dim
    k = int(config.arch_params.get("centers", config.h2))
    if k < 1:
        raise ValueError("RBF needs at least one center")
    rng = _rng(config)
    if train_inputs is not None:
        pool = np.asarray(train_inputs, dtype=np.float64).reshape(-1, m)
        idx = rng.choice(pool.shape[0], size=k, replace=k > pool.shape[0])
        centers = pool[idx]
    else:
        centers = rng.uniform(0.0, 1.0, size=(k, m))
    diffs = centers[:, None, :] - centers[None, :, :]
    sq = np.sum(diffs**2, axis=-1)[np.triu_indices(k, 1)]
    sq = sq[sq > 0]
    scale = float(np.median(sq)) if sq.size else 1.0

    params = ParamStore()
    params.add("rbf.c", centers)
    params.add("rbf.log_b", np.full(k, -np.log(scale)))
    params.init_uniform("rbf.a", (k, n), k, rng)

    g = Graph()
    x = g.input("x")
    xc = g.sub(g.expand(x, 1), g.param("rbf.c"))          # (B, K, m)
    dist = g.sum(g.square(xc), axis=-1)                    # (B, K)
    expo = g.mul(dist, g.exp(g.param("rbf.log_b")))
    phi = g.exp(g.neg(expo))
    g.set_output(g.matmul(phi, g.param("rbf.a")))
    return ModelHandle(g, params, config)


def rbf_param_count(m: int, n: int, k: int) -> int:
    return k * m + k + k * n


# -- KGate -----------------------------------------------------------------

def build_kgate(config: ModelConfig) -> ModelHandle:
    """Two gated layers, then a linear readout.

    Each layer computes ``(W x_i + tanh(W_t x0) * (W_a x0)) * sigmoid(W_s x0)``
    where ``x0`` is always the network input.
    """
    m, n = config.input_dim, config.output_dim
    rng = _rng(config)
    params = ParamStore()
    widths = [(m, config.h1), (config.h1, config.h2)]
    for i, (fan_in, width) in enumerate(widths, start=1):
        linear_params(params, f"k{i}.trunk", fan_in, width, rng)
        for gate in ("tanh", "shift", "sig"):
            linear_params(params, f"k{i}.{gate}", m, width, rng)
    linear_params(params, "out", config.h2, n, rng)

    g = Graph()
    x0 = g.input("x")
    h = x0
    for i in (1, 2):
        trunk = dense(g, h, f"k{i}.trunk")
        shift = g.mul(g.tanh(dense(g, x0, f"k{i}.tanh")), dense(g, x0, f"k{i}.shift"))
        h = g.mul(g.add(trunk, shift), g.sigmoid(dense(g, x0, f"k{i}.sig")))
    g.set_output(dense(g, h, "out"))
    return ModelHandle(g, params, config)


def kgate_param_count(m: int, n: int) -> int:
    h1, h2 = m, 2 * m + 1
    layer1 = (m * h1 + h1) + 3 * (m * h1 + h1)
    layer2 = (h1 * h2 + h2) + 3 * (m * h2 + h2)
    return layer1 + layer2 + (h2 * n + n)


# -- dot-product attention -------------------------------------------------

def attention_block(g: Graph, tokens: int, prefix: str, eps: float = 1e-12) -> int:
    """One attention layer over token rows ``(B, L, d)``; returns ``(B, L, d)``.

    Scores are scaled by the sum of the mean squared key and query norms and
    normalized over the query index (columns of Q^T K).
    """
    k = dense(g, tokens, f"{prefix}.k")
    q = dense(g, tokens, f"{prefix}.q")
    v = dense(g, tokens, f"{prefix}.v")
    d_k = g.mean(g.sum(g.square(k), axis=-1), axis=-1, keepdims=True)   # (B, 1)
    d_q = g.mean(g.sum(g.square(q), axis=-1), axis=-1, keepdims=True)
    denom = g.add(g.add(d_k, d_q), g.const(eps))
    scores = g.div(g.matmul(q, g.transpose(k)), g.expand(denom, -1))   # (B, L, L)
    attn = g.softmax(scores, axis=-2)
    return g.matmul(attn, v)


def build_attention(config: ModelConfig) -> ModelHandle:
    """Two attention layers on scalar tokens, sized m and 2m+1, then a readout.

    Layer i maps its input vector linearly to ``h_i`` values, lifts each value
    to a width-``d`` token (shared lift vector plus a per-position bias),
    applies :func:`attention_block` and pools every token back to a scalar.
    """
    m, n = config.input_dim, config.output_dim
    d = int(config.arch_params.get("width", 8))
    rng = _rng(config)
    params = ParamStore()
    g = Graph()
    x = g.input("x")
    h = x
    fan_in = m
    for i, width in enumerate((config.h1, config.h2), start=1):
        p = f"att{i}"
        linear_params(params, f"{p}.pre", fan_in, width, rng)
        params.init_uniform(f"{p}.lift", (1, d), 1, rng)
        params.init_uniform(f"{p}.pos", (width, d), 1, rng)
        for name in ("k", "q", "v"):
            linear_params(params, f"{p}.{name}", d, d, rng)
        linear_params(params, f"{p}.pool", d, 1, rng)

        u = g.expand(dense(g, h, f"{p}.pre"), -1)                    # (B, h, 1)
        tokens = g.add(g.matmul(u, g.param(f"{p}.lift")), g.param(f"{p}.pos"))
        z = attention_block(g, tokens, p)
        h = g.reshape(dense(g, z, f"{p}.pool"), (-1, width))
        fan_in = width
    linear_params(params, "out", config.h2, n, rng)
    g.set_output(dense(g, h, "out"))
    return ModelHandle(g, params, config)


def attention_param_count(m: int, n: int, d: int = 8) -> int:
    total = 0
    fan_in = m
    for width in (m, 2 * m + 1):
        total += fan_in * width + width        # pre
        total += d + width * d                 # lift, positional bias
        total += 3 * (d * d + d)               # k, q, v
        total += d + 1                         # pool
        fan_in = width
    return total + (2 * m + 1) * n + n
