"""Parity between the compiled and numpy kernel backends."""

import numpy as np
import pytest

from kinn import _pykernels, kernels

needs_ext = pytest.mark.skipif("cython" not in kernels.BACKENDS,
                               reason="compiled extension not built")


def test_backend_selected():
    assert kernels.BACKEND in kernels.BACKENDS
    assert kernels.kinloss is kernels.BACKENDS[kernels.BACKEND].kinloss


def test_unknown_backend():
    with pytest.raises(ValueError, match="unavailable"):
        kernels.use("fortran")


@needs_ext
@pytest.mark.parametrize("t_f", [2, 5, 30])
@pytest.mark.parametrize("sup", [False, True])
@pytest.mark.parametrize("weight", [1.0, 0.25])
def test_kinloss_parity(rng, t_f, sup, weight):
    c = kernels.BACKENDS["cython"]
    pred = rng.normal(size=(7, 2 * t_f - 1))
    target = rng.normal(size=(7, 2 * t_f - 1))
    lp, gp = _pykernels.kinloss(pred, target, t_f, weight, sup, True)
    lc, gc = c.kinloss(pred, target, t_f, weight, sup, True)
    assert lc == pytest.approx(lp, rel=1e-13)
    np.testing.assert_allclose(gc, gp, rtol=1e-12, atol=1e-15)


@needs_ext
def test_kinloss_parity_single_row(rng):
    c = kernels.BACKENDS["cython"]
    pred, target = rng.normal(size=59), rng.normal(size=59)
    lp, gp = _pykernels.kinloss(pred, target, 30, 1.0, False, True)
    lc, gc = c.kinloss(pred, target, 30, 1.0, False, True)
    assert lc == pytest.approx(lp, rel=1e-13)
    assert np.shape(gc) == np.shape(gp)
    np.testing.assert_allclose(gc, gp, rtol=1e-12, atol=1e-15)


@needs_ext
def test_adam_parity(rng):
    c = kernels.BACKENDS["cython"]
    state = [rng.normal(size=(4, 5)) for _ in range(2)] + [np.zeros((4, 5)), np.zeros((4, 5))]
    py = [a.copy() for a in state]
    cy = [a.copy() for a in state]
    for t in range(1, 6):
        g = rng.normal(size=(4, 5))
        _pykernels.adam_update(py[0], g, py[2], py[3], 0.01, 0.9, 0.999, 1e-8, t)
        c.adam_update(cy[0], g, cy[2], cy[3], 0.01, 0.9, 0.999, 1e-8, t)
    for a, b in zip(py, cy):
        np.testing.assert_allclose(b, a, rtol=1e-14, atol=1e-16)


@needs_ext
@pytest.mark.parametrize("ranks", [[2, 4, 6, 8, 10], [3, 3, 6, 9, 9, 12, 14], list(range(2, 50, 2))])
def test_signed_rank_counts_parity(ranks):
    c = kernels.BACKENDS["cython"]
    d = np.array(ranks, dtype=np.int64)
    np.testing.assert_array_equal(c.signed_rank_counts(d), _pykernels.signed_rank_counts(d))


def test_signed_rank_counts_small(backend):
    # ranks 1,2,3 doubled; subset sums of {1,2,3}: 0,1,2,3,3,4,5,6
    counts = kernels.signed_rank_counts(np.array([2, 4, 6], dtype=np.int64))
    expected = np.zeros(13, dtype=np.int64)
    for s in (0, 1, 2, 3, 3, 4, 5, 6):
        expected[2 * s] += 1
    np.testing.assert_array_equal(np.asarray(counts)[:13], expected)
    assert np.asarray(counts).sum() == 8
