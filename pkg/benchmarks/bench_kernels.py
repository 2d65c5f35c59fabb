"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat N]

Times the fused kinematic loss, the adam update, the signed-rank count and
one full training step of a KGate model on a 30-window session batch.
"""

import argparse
import timeit

import numpy as np

from kinn import kernels
from kinn.kinloss import LossSpec
from kinn.models import ModelConfig, build_model
from kinn.autodiff import adam_step, value_and_gradients


def cases():
    rng = np.random.default_rng(0)
    pred, target = rng.normal(size=(30, 59)), rng.normal(size=(30, 59))
    p, g = rng.normal(size=(119, 119)), rng.normal(size=(119, 119))
    m, v = np.zeros_like(p), np.zeros_like(p)
    ranks = np.arange(2, 70, 2, dtype=np.int64)          # n = 34 sessions
    model = build_model(ModelConfig.for_window("kgate", 30, 30, True))
    loss_id, target_name = model.loss_node(LossSpec("kinematic", 30))
    X, Y = rng.uniform(size=(30, 59)), rng.uniform(size=(30, 59))

    def step():
        _, grads = value_and_gradients(model.graph, {"x": X, target_name: Y}, model.params, loss_id)
        adam_step(model.params, grads)

    return {
        "kinloss (30x59, with grad)": lambda: kernels.kinloss(pred, target, 30, 1.0, False, True),
        "adam_update (119x119)": lambda: kernels.adam_update(p, g, m, v, 1e-9, 0.9, 0.999, 1e-8, 1),
        "signed_rank_counts (n=34)": lambda: kernels.signed_rank_counts(ranks),
        "kgate training step": step,
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = sorted(kernels.BACKENDS)
    results = {}
    for name in backends:
        kernels.use(name)
        for label, fn in cases().items():
            timer = timeit.Timer(fn)
            number, _ = timer.autorange()
            best = min(timer.repeat(args.repeat, number)) / number
            results[label, name] = best
    width = max(len(label) for label, _ in results)
    print(f"{'case':<{width}}  " + "  ".join(f"{b:>12}" for b in backends)
          + ("  speedup" if len(backends) > 1 else ""))
    for label in dict.fromkeys(label for label, _ in results):
        row = [results[label, b] for b in backends]
        line = f"{label:<{width}}  " + "  ".join(f"{t * 1e6:>10.1f}us" for t in row)
        if "cython" in backends and "python" in backends:
            line += f"  {results[label, 'python'] / results[label, 'cython']:>6.1f}x"
        print(line)


if __name__ == "__main__":
    main()
