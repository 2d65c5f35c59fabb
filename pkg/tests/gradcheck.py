"""Finite-difference gradient comparison shared by several test modules."""

import numpy as np

from kinn.autodiff import gradients, numeric_gradients


def relative_error(analytic, numeric, floor=1e-10):
    """Largest norm-wise relative error over parameter tensors."""
    worst = 0.0
    for name in analytic:
        a, b = analytic[name], numeric[name]
        scale = max(np.linalg.norm(a), np.linalg.norm(b))
        diff = np.linalg.norm(a - b)
        worst = max(worst, diff / scale if scale > floor else diff)
    return worst


def check(graph, inputs, params, output=None, eps=1e-6):
    analytic = gradients(graph, inputs, params, output)
    numeric = numeric_gradients(graph, inputs, params, output, eps)
    return relative_error(analytic, numeric)
