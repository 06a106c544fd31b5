"""Pure numpy implementations of the polynomial hot loops.

These mirror :mod:`isf._ckernels` one-for-one and are used when the compiled
extension is unavailable or ``ISF_PURE_PYTHON=1`` is set.
"""
import numpy as np


def monomials(X, parent, var):
    """Evaluate every monomial of a full (constant-first) index set.

    ``X`` has shape (N, n); returns (N, K) where column 0 is the constant 1.
    """
    N = X.shape[0]
    K = parent.shape[0]
    out = np.empty((N, K), dtype=X.dtype)
    out[:, 0] = 1.0
    for k in range(1, K):
        out[:, k] = out[:, parent[k]] * X[:, var[k]]
    return out


def monomial_grad(Phi, down, exps):
    """Partial derivatives of every monomial, shape (N, K, n).

    ``down[k, i]`` is the index of ``m_k - e_i`` (or -1) and ``exps`` the
    exponent table, so ``d/dx_i x^m = m_i x^(m - e_i)``.
    """
    N, K = Phi.shape
    n = down.shape[1]
    out = np.zeros((N, K, n), dtype=Phi.dtype)
    for i in range(n):
        rows = np.nonzero(down[:, i] >= 0)[0]
        out[:, rows, i] = Phi[:, down[rows, i]] * exps[rows, i]
    return out


def truncated_product(a, b, ti, tj, tt):
    """Batched truncated product ``c[:, tt] += a[:, ti] * b[:, tj]``.

    ``a`` and ``b`` have shape (B, K); the triple table enumerates every pair
    of monomials whose product stays within the truncation degree.
    """
    B, K = a.shape
    terms = a[:, ti] * b[:, tj]
    c = np.zeros((B, K), dtype=np.result_type(a, b))
    for r in range(B):
        if np.iscomplexobj(terms):
            c[r] = np.bincount(tt, weights=terms[r].real, minlength=K) + 1j * np.bincount(
                tt, weights=terms[r].imag, minlength=K
            )
        else:
            c[r] = np.bincount(tt, weights=terms[r], minlength=K)
    return c
