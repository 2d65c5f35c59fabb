"""Self-organizing polynomial network grown layer by layer.

Every candidate neuron squares an affine function of two features,
``(w_i x_i + w_j x_j + w_0)^2``. Candidates are trained with adam against the
current residual through a throw-away per-candidate linear readout, ranked
on validation error, and the best ones become the next layer's features.
After each layer a least-squares readout maps the kept features (plus the
network input as a skip path) to all outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from kinn.autodiff import Graph, ParamStore, adam_step, value_and_gradients
from kinn.models.base import ModelConfig, ModelHandle
from kinn.models.nets import solve_least_squares

MAX_CANDIDATES = 2000


@dataclass
class GMDHLayer:
    pairs: np.ndarray          # (k, 2) feature indices into the previous layer
    weights: np.ndarray        # (k, 3): w_i, w_j, w_0


@dataclass
class GrowthLog:
    val_mse: list[float] = field(default_factory=list)
    train_mse: list[float] = field(default_factory=list)
    candidates: list[int] = field(default_factory=list)
    best_depth: int = 0


def _neurons(features, layer: GMDHLayer):
    xi = features[:, layer.pairs[:, 0]]
    xj = features[:, layer.pairs[:, 1]]
    w = layer.weights
    return (xi * w[:, 0] + xj * w[:, 1] + w[:, 2]) ** 2


def _design(features, x0):
    return x0 if features is None else np.hstack([features, x0])


def _readout_mse(W, features, x0, Y):
    D = _design(features, x0)
    pred = D @ W[:-1] + W[-1]
    return pred, float(np.mean((pred - Y) ** 2))


def candidate_pairs(n_features: int, cap: int, rng: np.random.Generator) -> np.ndarray:
    pairs = np.array(list(combinations(range(n_features), 2)), dtype=np.intp).reshape(-1, 2)
    if len(pairs) > cap:
        keep = np.sort(rng.choice(len(pairs), size=cap, replace=False))
        pairs = pairs[keep]
    return pairs


def fit_candidates(F, R, pairs, rng, epochs: int = 150, lr: float = 0.05):
    """Train every candidate neuron at once; returns (weights (C, 3), readout a, c).

    The per-candidate losses are independent, so the sum over candidates is
    minimized jointly by one adam run without the candidates interacting.
    """
    C = len(pairs)
    n = R.shape[1]
    params = ParamStore()
    params.add("wi", rng.uniform(-1, 1, C))
    params.add("wj", rng.uniform(-1, 1, C))
    params.add("w0", rng.uniform(-1, 1, C))
    params.add("a", rng.uniform(-0.1, 0.1, (C, n)))
    params.add("c", np.zeros((C, n)))

    g = Graph()
    xi, xj, r = g.input("xi"), g.input("xj"), g.input("r")
    u = g.add(g.add(g.mul(xi, g.param("wi")), g.mul(xj, g.param("wj"))), g.param("w0"))
    f = g.expand(g.square(u), -1)                                   # (N, C, 1)
    pred = g.add(g.mul(f, g.param("a")), g.param("c"))              # (N, C, n)
    loss = g.scale(g.mean(g.square(g.sub(pred, r))), C)
    g.set_output(loss)

    inputs = {"xi": F[:, pairs[:, 0]], "xj": F[:, pairs[:, 1]], "r": R[:, None, :]}
    for _ in range(epochs):
        _, grads = value_and_gradients(g, inputs, params)
        adam_step(params, grads, lr)
    w = np.stack([params["wi"], params["wj"], params["w0"]], axis=1)
    return w, params["a"], params["c"]


def grow_gmdh(X_train, Y_train, X_val, Y_val, config: ModelConfig):
    """Grow the network; returns ``(ModelHandle, GrowthLog)`` for the best depth."""
    X_train = np.asarray(X_train, dtype=np.float64)
    Y_train = np.asarray(Y_train, dtype=np.float64)
    X_val = np.asarray(X_val, dtype=np.float64)
    Y_val = np.asarray(Y_val, dtype=np.float64)
    if X_train.shape[1] < 2:
        raise ValueError("GMDH needs at least two input features")
    if len(X_val) == 0:
        raise ValueError("GMDH needs a non-empty validation split")
    ap = config.arch_params
    select_k = int(ap.get("select_k", config.h2))
    max_layers = int(ap.get("max_layers", 4))
    cap = int(ap.get("max_candidates", MAX_CANDIDATES))
    epochs = int(ap.get("candidate_epochs", 150))
    lr = float(ap.get("candidate_lr", 0.05))
    rng = np.random.default_rng(config.seed)

    log = GrowthLog()
    W = solve_least_squares(X_train, Y_train)
    pred_tr, mse_tr = _readout_mse(W, None, X_train, Y_train)
    _, mse_va = _readout_mse(W, None, X_val, Y_val)
    log.train_mse.append(mse_tr)
    log.val_mse.append(mse_va)
    log.candidates.append(0)
    snapshots = [([], W)]

    layers: list[GMDHLayer] = []
    F_tr, F_va = X_train, X_val
    for _ in range(max_layers):
        if F_tr.shape[1] < 2:
            break
        pairs = candidate_pairs(F_tr.shape[1], cap, rng)
        resid_tr = Y_train - pred_tr
        _, pred_va_prev = _readout_mse(W, None if not layers else F_va, X_val, Y_val)
        resid_va = Y_val - pred_va_prev
        w, a, c = fit_candidates(F_tr, resid_tr, pairs, rng, epochs, lr)

        trial = GMDHLayer(pairs, w)
        f_va = _neurons(F_va, trial)                                    # (Nv, C)
        cand_pred = f_va[:, :, None] * a[None] + c[None]
        scores = np.mean((cand_pred - resid_va[:, None, :]) ** 2, axis=(0, 2))
        order = np.argsort(scores, kind="stable")[: min(select_k, len(pairs))]
        layer = GMDHLayer(pairs[order], w[order])

        new_tr, new_va = _neurons(F_tr, layer), _neurons(F_va, layer)
        W_new = solve_least_squares(_design(new_tr, X_train), Y_train)
        pred_tr_new, mse_tr = _readout_mse(W_new, new_tr, X_train, Y_train)
        _, mse_va = _readout_mse(W_new, new_va, X_val, Y_val)
        log.candidates.append(len(pairs))
        log.train_mse.append(mse_tr)
        log.val_mse.append(mse_va)
        if not mse_va < min(log.val_mse[:-1]):
            break
        layers.append(layer)
        snapshots.append((list(layers), W_new))
        F_tr, F_va, W, pred_tr = new_tr, new_va, W_new, pred_tr_new

    best = int(np.argmin(log.val_mse[: len(snapshots)]))
    log.best_depth = best
    best_layers, best_W = snapshots[best]
    return build_gmdh(config, best_layers, best_W), log


def build_gmdh(config: ModelConfig, layers=None, readout=None) -> ModelHandle:
    """Graph for a grown network; structure comes from ``layers`` or the config."""
    if layers is None:
        layers = [GMDHLayer(np.asarray(p, dtype=np.intp).reshape(-1, 2),
                            np.zeros((len(p), 3)))
                  for p in config.arch_params.get("layers", [])]
    config.arch_params["layers"] = [lay.pairs.tolist() for lay in layers]
    m, n = config.input_dim, config.output_dim
    params = ParamStore()
    g = Graph()
    x = g.input("x")
    feats = x
    width = m
    for i, lay in enumerate(layers):
        params.add(f"g{i}.w", lay.weights)
        w = g.param(f"g{i}.w")
        wi, wj, w0 = (g.reshape(g.slice(w, k, k + 1), (-1,)) for k in range(3))
        left = g.take(feats, lay.pairs[:, 0])
        right = g.take(feats, lay.pairs[:, 1])
        u = g.add(g.add(g.mul(left, wi), g.mul(right, wj)), w0)
        feats = g.square(u)
        width = len(lay.pairs)
    design = x if not layers else g.concat([feats, x])
    fan_in = m + (width if layers else 0)
    if readout is None:
        readout = np.zeros((fan_in + 1, n))
    params.add("out.W", readout[:-1])
    params.add("out.b", readout[-1])
    g.set_output(g.linear(design, g.param("out.W"), g.param("out.b")))
    return ModelHandle(g, params, config)


def gmdh_param_count(m: int, n: int, layer_sizes) -> int:
    total = sum(3 * k for k in layer_sizes)
    last = layer_sizes[-1] if layer_sizes else 0
    return total + (m + last) * n + n
