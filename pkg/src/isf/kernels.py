"""Kernel dispatch: compiled extension when importable, numpy fallback otherwise.

Set ``ISF_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from isf import _pykernels

BACKEND = "python"
_impl = _pykernels

if not os.environ.get("ISF_PURE_PYTHON"):
    try:
        from isf import _ckernels

        _impl = _ckernels
        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        pass


def _common(*arrays):
    dt = np.result_type(*arrays)
    dt = np.complex128 if np.issubdtype(dt, np.complexfloating) else np.float64
    return [np.ascontiguousarray(a, dtype=dt) for a in arrays]


def monomials(X, parent, var):
    (X,) = _common(X)
    return _impl.monomials(X, parent, var)


def monomial_grad(Phi, down, exps):
    (Phi,) = _common(Phi)
    return _impl.monomial_grad(Phi, down, exps)


def truncated_product(a, b, ti, tj, tt):
    a, b = _common(a, b)
    return _impl.truncated_product(a, b, ti, tj, tt)
