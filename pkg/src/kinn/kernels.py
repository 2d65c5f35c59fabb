"""Hot-kernel dispatch: compiled extension when available, numpy otherwise.

Set ``KINN_PURE_PYTHON=1`` before import to force the numpy fallback.
"""

import os

from kinn import _pykernels

BACKENDS = {"python": _pykernels}

try:
    from kinn import _ckernels
except ImportError:
    _ckernels = None
else:
    BACKENDS["cython"] = _ckernels

if _ckernels is not None and not os.environ.get("KINN_PURE_PYTHON"):
    BACKEND = "cython"
else:
    BACKEND = "python"

_impl = BACKENDS[BACKEND]
kinloss = _impl.kinloss
adam_update = _impl.adam_update
signed_rank_counts = _impl.signed_rank_counts


def use(name: str) -> None:
    """Switch backend at runtime (tests and benchmarks)."""
    global BACKEND, _impl, kinloss, adam_update, signed_rank_counts
    if name not in BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(BACKENDS)}")
    BACKEND = name
    _impl = BACKENDS[name]
    kinloss = _impl.kinloss
    adam_update = _impl.adam_update
    signed_rank_counts = _impl.signed_rank_counts
