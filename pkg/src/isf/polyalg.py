"""Dense multivariate polynomial maps over graded multi-index bases.

A :class:`PolyMap` stores one coefficient row per output and one column per
monomial ``x^m`` with ``1 <= |m| <= alpha``.  There is never a constant term:
the equilibrium is pinned at the origin.  Internally several routines work on
"full" coefficient arrays that prepend the constant monomial at column 0
(needed for derivatives and products); those helpers are private.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np

from isf import kernels


class DimensionError(ValueError):
    """Raised when the dimensions of polynomial operands do not match."""


@dataclass(frozen=True)
class MultiIndexSet:
    """Graded, lexicographically ordered exponent vectors with 1 <= |m| <= alpha."""

    n: int
    alpha: int
    indices: tuple

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    @property
    def exps(self):
        return _tables(self.n, self.alpha).exps[1:]

    @property
    def degrees(self):
        return _tables(self.n, self.alpha).degrees[1:]

    def position(self, m):
        """Column of multi-index ``m`` in a coefficient array."""
        return _tables(self.n, self.alpha).lookup[tuple(int(v) for v in m)] - 1


def _compositions(n, d):
    """Exponent vectors of total degree d in descending lexicographic order."""
    if n == 1:
        yield (d,)
        return
    for first in range(d, -1, -1):
        for rest in _compositions(n - 1, d - first):
            yield (first,) + rest


@lru_cache(maxsize=None)
def multiindex_set(n: int, alpha: int) -> MultiIndexSet:
    if n < 1 or alpha < 1:
        raise ValueError(f"multi-index set needs n >= 1 and alpha >= 1, got n={n}, alpha={alpha}")
    idx = tuple(m for d in range(1, alpha + 1) for m in _compositions(n, d))
    assert len(idx) == comb(n + alpha, n) - 1
    return MultiIndexSet(n, alpha, idx)


class _Tables:
    """Lookup tables for the full (constant-first) index set of (n, alpha)."""

    def __init__(self, n, alpha):
        full = [(0,) * n] + list(multiindex_set(n, alpha).indices) if alpha >= 1 else [(0,) * n]
        self.n = n
        self.alpha = alpha
        self.exps = np.array(full, dtype=np.int64).reshape(len(full), n)
        self.degrees = self.exps.sum(axis=1)
        self.lookup = {m: k for k, m in enumerate(full)}
        K = len(full)
        self.parent = np.zeros(K, dtype=np.int64)
        self.var = np.zeros(K, dtype=np.int64)
        self.down = -np.ones((K, n), dtype=np.int64)
        for k in range(1, K):
            m = full[k]
            i = next(j for j in range(n) if m[j] > 0)
            self.var[k] = i
            self.parent[k] = self.lookup[m[:i] + (m[i] - 1,) + m[i + 1:]]
            for j in range(n):
                if m[j] > 0:
                    self.down[k, j] = self.lookup[m[:j] + (m[j] - 1,) + m[j + 1:]]
        self._mult = None

    def degree_slice(self, d):
        """Columns of the full array holding degree-d monomials."""
        lo = comb(self.n + d - 1, self.n) if d > 0 else 0
        return slice(lo, comb(self.n + d, self.n))

    @property
    def mult(self):
        """(ti, tj, tt) with x^m_ti * x^m_tj = x^m_tt, all pairs within alpha."""
        if self._mult is None:
            base = self.alpha + 1
            weights = base ** np.arange(self.n, dtype=np.int64)
            codes = self.exps @ weights
            order = np.argsort(codes)
            sorted_codes = codes[order]
            deg = self.degrees
            ti_list, tj_list, tt_list = [], [], []
            for i in range(len(deg)):
                js = np.nonzero(deg <= self.alpha - deg[i])[0]
                prod = codes[i] + codes[js]
                tt = order[np.searchsorted(sorted_codes, prod)]
                ti_list.append(np.full(len(js), i, dtype=np.int64))
                tj_list.append(js)
                tt_list.append(tt)
            self._mult = tuple(np.ascontiguousarray(np.concatenate(t), dtype=np.int64)
                               for t in (ti_list, tj_list, tt_list))
        return self._mult


@lru_cache(maxsize=None)
def _tables(n, alpha):
    return _Tables(n, alpha)


def _is_complex(*arrays):
    return any(np.iscomplexobj(a) for a in arrays)


class PolyMap:
    """Polynomial map R^n -> R^out (or C^n -> C^out) without constant term.

    ``coeffs[i, k]`` multiplies the k-th monomial of ``multiindex_set(n, alpha)``
    in output i.  ``conj_pairs`` lists coordinate pairs (k, k+1) of a
    complexified map with ``x_{k+1} = conj(x_k)``.
    """

    __slots__ = ("n", "out", "alpha", "coeffs", "conj_pairs")

    def __init__(self, n, out, alpha, coeffs=None, conj_pairs=()):
        self.n = int(n)
        self.out = int(out)
        self.alpha = int(alpha)
        K = comb(self.n + self.alpha, self.n) - 1
        if coeffs is None:
            coeffs = np.zeros((self.out, K))
        coeffs = np.array(coeffs, dtype=np.complex128 if np.iscomplexobj(coeffs) else np.float64)
        if coeffs.shape != (self.out, K):
            raise DimensionError(f"coefficient array must have shape {(self.out, K)}, got {coeffs.shape}")
        coeffs.setflags(write=False)
        self.coeffs = coeffs
        self.conj_pairs = tuple(tuple(p) for p in conj_pairs)

    # construction -----------------------------------------------------------
    @classmethod
    def from_terms(cls, n, out, alpha, terms, conj_pairs=()):
        """Build from ``{m: coefficient vector}``."""
        iset = multiindex_set(n, alpha)
        cplx = any(np.iscomplexobj(np.asarray(c)) for c in terms.values())
        coeffs = np.zeros((out, len(iset)), dtype=np.complex128 if cplx else np.float64)
        for m, c in terms.items():
            m = tuple(int(v) for v in m)
            if len(m) != n or not 1 <= sum(m) <= alpha:
                raise ValueError(f"multi-index {m} not in M_{{{n},{alpha}}}")
            coeffs[:, iset.position(m)] = np.broadcast_to(c, (out,))
        return cls(n, out, alpha, coeffs, conj_pairs)

    @classmethod
    def linear(cls, A, alpha=1):
        A = np.atleast_2d(np.asarray(A))
        out, n = A.shape
        c = np.zeros((out, comb(n + alpha, n) - 1), dtype=np.result_type(A, float))
        c[:, :n] = A
        return cls(n, out, alpha, c)

    @classmethod
    def _from_full(cls, n, full, alpha, conj_pairs=()):
        return cls(n, full.shape[0], alpha, full[:, 1:], conj_pairs)

    # basic properties -------------------------------------------------------
    @property
    def index_set(self):
        return multiindex_set(self.n, self.alpha)

    @property
    def field(self):
        return "complex" if np.iscomplexobj(self.coeffs) else "real"

    @property
    def is_complex(self):
        return np.iscomplexobj(self.coeffs)

    def __repr__(self):
        return f"PolyMap(n={self.n}, out={self.out}, alpha={self.alpha}, field={self.field})"

    def terms(self, tol=0.0):
        """Nonzero terms as ``{m: coefficient vector}``."""
        res = {}
        for k, m in enumerate(self.index_set):
            c = self.coeffs[:, k]
            if np.max(np.abs(c)) > tol:
                res[m] = c
        return res

    def coefficient(self, m):
        return self.coeffs[:, self.index_set.position(m)]

    def full(self, alpha=None):
        """Coefficients padded with a zero constant column, optionally re-truncated."""
        alpha = self.alpha if alpha is None else alpha
        K = comb(self.n + alpha, self.n)
        out = np.zeros((self.out, K), dtype=self.coeffs.dtype)
        k = min(K - 1, self.coeffs.shape[1])
        out[:, 1:k + 1] = self.coeffs[:, :k]
        return out

    def degree_part(self, d):
        """Coefficients of the degree-d monomials (columns in index order)."""
        sl = _tables(self.n, self.alpha).degree_slice(d)
        return self.coeffs[:, sl.start - 1: sl.stop - 1]

    def truncate(self, alpha):
        return PolyMap._from_full(self.n, self.full(alpha), alpha, self.conj_pairs)

    def linear_part(self):
        return self.truncate(1).truncate(self.alpha)

    def nonlinear_part(self):
        c = np.array(self.coeffs)
        c[:, : self.n] = 0
        return PolyMap(self.n, self.out, self.alpha, c, self.conj_pairs)

    def with_coeffs(self, coeffs):
        return PolyMap(self.n, self.out, self.alpha, coeffs, self.conj_pairs)

    def real(self):
        return PolyMap(self.n, self.out, self.alpha, self.coeffs.real.copy())

    def imag(self):
        return PolyMap(self.n, self.out, self.alpha, self.coeffs.imag.copy())

    def rows(self, idx):
        return PolyMap(self.n, len(idx), self.alpha, self.coeffs[list(idx)])

    def __add__(self, other):
        _check_same(self, other)
        return self.with_coeffs(self.coeffs + other.coeffs)

    def __sub__(self, other):
        _check_same(self, other)
        return self.with_coeffs(self.coeffs - other.coeffs)

    def __mul__(self, s):
        return self.with_coeffs(self.coeffs * s)

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_coeffs(-self.coeffs)

    # evaluation -------------------------------------------------------------
    def monomials(self, x):
        """Monomial values (N, K) at points x of shape (N, n)."""
        t = _tables(self.n, self.alpha)
        return kernels.monomials(x, t.parent, t.var)[:, 1:]

    def __call__(self, x):
        return poly_eval(self, x)

    def jacobian(self, x):
        """Derivative DP(x); shape (out, n) for one point, (N, out, n) for many."""
        x = np.asarray(x)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        if X.shape[1] != self.n:
            raise DimensionError(f"expected points of dimension {self.n}, got {X.shape[1]}")
        t = _tables(self.n, self.alpha)
        Phi = kernels.monomials(X, t.parent, t.var)
        dPhi = kernels.monomial_grad(Phi, t.down, t.exps)
        J = np.einsum("ok,Nkn->Non", self.coeffs, dPhi[:, 1:, :])
        return J[0] if single else J

    def jacobian0(self):
        return poly_jacobian0(self)

    # serialization ----------------------------------------------------------
    def to_dict(self):
        terms = []
        for m, c in self.terms().items():
            if self.is_complex:
                cc = [[float(v.real), float(v.imag)] for v in c]
            else:
                cc = [float(v) for v in c]
            terms.append({"m": list(m), "c": cc})
        d = {"n": self.n, "out": self.out, "alpha": self.alpha, "field": self.field, "terms": terms}
        if self.conj_pairs:
            d["conj_pairs"] = [list(p) for p in self.conj_pairs]
        return d

    @classmethod
    def from_dict(cls, d):
        n, out, alpha = int(d["n"]), int(d["out"]), int(d["alpha"])
        cplx = d.get("field", "real") == "complex"
        iset = multiindex_set(n, alpha)
        coeffs = np.zeros((out, len(iset)), dtype=np.complex128 if cplx else np.float64)
        for t in d["terms"]:
            c = np.asarray(t["c"], dtype=float)
            if cplx:
                c = c[:, 0] + 1j * c[:, 1]
            coeffs[:, iset.position(t["m"])] = c
        return cls(n, out, alpha, coeffs, d.get("conj_pairs", ()))

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s):
        return cls.from_dict(json.loads(s))


def _check_same(a, b):
    if (a.n, a.out, a.alpha) != (b.n, b.out, b.alpha):
        raise DimensionError(f"incompatible polynomial maps {a!r} and {b!r}")


def poly_eval(P: PolyMap, x):
    """Evaluate P at a point (n,) or a batch of points (N, n)."""
    x = np.asarray(x)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != P.n:
        raise DimensionError(f"expected points of dimension {P.n}, got {X.shape[1]}")
    res = P.monomials(X) @ P.coeffs.T
    return res[0] if single else res


def poly_jacobian0(P: PolyMap):
    return np.array(P.coeffs[:, : P.n])


def vstack(polys):
    """Stack the outputs of maps sharing a domain into a single map."""
    n = polys[0].n
    if any(p.n != n for p in polys):
        raise DimensionError("stacked maps must share the domain dimension")
    alpha = max(p.alpha for p in polys)
    full = np.vstack([p.full(alpha) for p in polys])
    return PolyMap._from_full(n, full, alpha)


# full-array algebra ---------------------------------------------------------
def _mul_full(a, b, n, alpha):
    """Truncated product of batches of scalar polynomials, full arrays (B, K)."""
    ti, tj, tt = _tables(n, alpha).mult
    return kernels.truncated_product(a, b, ti, tj, tt)


def _derivative_full(full, n, alpha, i):
    """d/dx_i of full arrays (B, K) -> full arrays on the same (n, alpha) grid."""
    t = _tables(n, alpha)
    out = np.zeros_like(full)
    rows = np.nonzero(t.down[:, i] >= 0)[0]
    out[:, t.down[rows, i]] = full[:, rows] * t.exps[rows, i]
    return out


def _powers_full(inner_full, n, alpha, outer_n, outer_alpha):
    """Inner^m for every monomial m of the outer index set, truncated to alpha."""
    to = _tables(outer_n, outer_alpha)
    ti = _tables(n, alpha)
    Ko = len(to.degrees)
    dt = inner_full.dtype
    P = np.zeros((Ko, len(ti.degrees)), dtype=dt)
    P[0, 0] = 1.0
    top = min(outer_alpha, alpha)
    for d in range(1, top + 1):
        sl = to.degree_slice(d)
        ks = np.arange(sl.start, sl.stop)
        P[ks] = _mul_full(P[to.parent[ks]], inner_full[to.var[ks]], n, alpha)
    return P, comb(outer_n + top, outer_n)


def _compose_full(outer_full, outer_n, outer_alpha, inner_full, n, alpha):
    P, kmax = _powers_full(inner_full, n, alpha, outer_n, outer_alpha)
    dt = np.result_type(outer_full, P)
    return outer_full[:, :kmax].astype(dt) @ P[:kmax].astype(dt)


def poly_compose(outer: PolyMap, inner: PolyMap, alpha: int) -> PolyMap:
    """Outer o Inner truncated to total degree alpha."""
    if outer.n != inner.out:
        raise DimensionError(f"outer takes {outer.n} inputs but inner produces {inner.out}")
    res = _compose_full(outer.full(), outer.n, outer.alpha, inner.full(alpha), inner.n, alpha)
    return PolyMap._from_full(inner.n, res, alpha, inner.conj_pairs)


def poly_linear_change(P: PolyMap, T_in, T_out, alpha: int) -> PolyMap:
    """x -> T_out @ P(T_in @ x), truncated to degree alpha."""
    T_in = np.atleast_2d(np.asarray(T_in))
    T_out = np.atleast_2d(np.asarray(T_out))
    if T_in.shape != (P.n, P.n):
        raise DimensionError(f"T_in must be {P.n}x{P.n}")
    if T_out.shape[1] != P.out:
        raise DimensionError(f"T_out must have {P.out} columns")
    if np.linalg.cond(T_in) > 1.0 / np.finfo(float).eps:
        raise np.linalg.LinAlgError("T_in is singular")
    res = poly_substitute_linear(P, T_in, alpha)
    return res.with_coeffs(T_out @ res.coeffs)


def poly_substitute_linear(P: PolyMap, M, alpha: int) -> PolyMap:
    """x -> P(M @ x) for an arbitrary (P.n x k) matrix M."""
    M = np.atleast_2d(np.asarray(M))
    if M.shape[0] != P.n:
        raise DimensionError(f"substitution matrix must have {P.n} rows")
    return poly_compose(P, PolyMap.linear(M, alpha), alpha)


def poly_mul_scalar_fields(a: PolyMap, b: PolyMap, alpha: int) -> PolyMap:
    """Componentwise truncated product of two maps with equal shapes."""
    if (a.n, a.out) != (b.n, b.out):
        raise DimensionError("componentwise product needs equal shapes")
    c = _mul_full(a.full(alpha), b.full(alpha), a.n, alpha)
    return PolyMap._from_full(a.n, c, alpha)


def directional_derivative(U: PolyMap, G: PolyMap, alpha: int) -> PolyMap:
    """x -> DU(x) G(x), truncated to degree alpha (Lie derivative of U along G)."""
    if U.n != G.n or G.out != G.n:
        raise DimensionError("Lie derivative needs a vector field on the domain of U")
    n = U.n
    Uf = U.full(alpha)
    Gf = G.full(alpha)
    acc = np.zeros((U.out, Uf.shape[1]), dtype=np.result_type(Uf, Gf))
    for i in range(n):
        dU = _derivative_full(Uf, n, alpha, i)
        acc += _mul_full(dU, np.repeat(Gf[i:i + 1], U.out, axis=0), n, alpha)
    return PolyMap._from_full(n, acc, alpha)


def lstsq_fit(n, out, alpha, X, Y):
    """Least-squares coefficients of a PolyMap from samples Y ~ P(X)."""
    Phi = PolyMap(n, out, alpha).monomials(np.asarray(X))
    C, *_ = np.linalg.lstsq(Phi, np.asarray(Y), rcond=None)
    return PolyMap(n, out, alpha, C.T)
