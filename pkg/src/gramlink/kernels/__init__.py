"""Hot kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it imports; otherwise the numpy
implementation is selected. ``GRAMLINK_BACKEND=python`` forces the fallback.

Kernels
-------
masked_attention_forward(q, v, ra, rc, ma, mc, mode, scale)
    One relation-masked attention head. ``ma``/``mc`` are float 0/1 masks,
    ``mode`` is one of ``POST``, ``POST_RENORM``, ``PRE``. Returns
    ``(out, w, pa, pc)``.
masked_attention_backward(q, v, ra, rc, ma, mc, mode, scale, w, pa, pc, dout)
    Returns ``(dq, dv, dra, drc)``.
tail_scores_forward(q, e, fn)
    Scores of every query row against every entity row (``TRANSE`` or
    ``DISTMULT``). Sums run sequentially over features.
tail_scores_backward(q, e, out, dout, fn)
    Returns ``(dq, de)``.
"""

import os
from contextlib import contextmanager

from . import _pyimpl

POST, POST_RENORM, PRE = _pyimpl.POST, _pyimpl.POST_RENORM, _pyimpl.PRE
TRANSE, DISTMULT = _pyimpl.TRANSE, _pyimpl.DISTMULT

try:
    from . import _cext
except ImportError:  # extension not built
    _cext = None

_BACKENDS = {"python": _pyimpl}
if _cext is not None:
    _BACKENDS["cython"] = _cext


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def _default_backend() -> str:
    requested = os.environ.get("GRAMLINK_BACKEND", "auto").lower()
    if requested in _BACKENDS:
        return requested
    return "cython" if _cext is not None else "python"


_active_name = _default_backend()
impl = _BACKENDS[_active_name]


def backend_name() -> str:
    return _active_name


def set_backend(name: str) -> None:
    global impl, _active_name
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {available_backends()}")
    _active_name = name
    impl = _BACKENDS[name]


@contextmanager
def use_backend(name: str):
    previous = _active_name
    set_backend(name)
    try:
        yield impl
    finally:
        set_backend(previous)


def get() -> object:
    return impl
