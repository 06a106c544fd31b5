"""Reconstruction from several foliations, SSM immersions and explicit leaf charts."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from isf.foliation import Foliation
from isf.polyalg import DimensionError, PolyMap, poly_compose, poly_substitute_linear, vstack


class InversionError(ArithmeticError):
    """The linear part of a submersion or atlas is singular."""


def _as_submersion(f):
    return f.U if isinstance(f, Foliation) else f


# ---------------------------------------------------------------- atlas

@dataclass
class FoliationAtlas:
    """Foliations whose submersions jointly form a coordinate system.

    ``Uhat`` stacks the submersions, ``C`` is its linear part and ``blocks``
    gives the output rows belonging to each foliation.
    """

    foliations: list
    Uhat: PolyMap
    C: np.ndarray
    blocks: list
    alpha: int
    cond: float
    _h: dict = field(default_factory=dict, repr=False)

    @property
    def n(self):
        return self.Uhat.n

    @property
    def Cinv(self):
        return np.linalg.inv(self.C)

    def h(self, alpha=None) -> PolyMap:
        """Polynomial inverse of Uhat truncated to ``alpha`` (cached)."""
        alpha = self.alpha if alpha is None else alpha
        if alpha not in self._h:
            self._h[alpha] = _poly_inverse(self.Uhat, self.C, alpha)
        return self._h[alpha]

    def embedding(self, j):
        """Matrix inserting the coordinates of foliation j into the full z vector."""
        lo, hi = self.blocks[j]
        E = np.zeros((self.n, hi - lo))
        E[lo:hi] = np.eye(hi - lo)
        return E

    def reduced(self, x):
        """Per-foliation coordinates z_j = U^j(x)."""
        return [f.U(x) for f in self.foliations]


def composite_submersion(fols, cond_max=1e12) -> FoliationAtlas:
    """Stack submersions into Uhat: R^n -> R^n and check that it is invertible at 0."""
    if not fols:
        raise ValueError("need at least one foliation")
    Us = [_as_submersion(f) for f in fols]
    n = Us[0].n
    if any(U.n != n for U in Us):
        raise DimensionError("all submersions must act on the same state space")
    rows = sum(U.out for U in Us)
    if rows != n:
        raise DimensionError(f"submersions provide {rows} coordinates for a {n}-dimensional space")
    seen = set()
    for f in fols:
        sel = set(getattr(f, "selection", ()) or ())
        if sel & seen:
            raise ValueError(f"foliation selections overlap at {sorted(sel & seen)}")
        seen |= sel
    Uhat = vstack(Us)
    C = Uhat.jacobian0()
    cond = float(np.linalg.cond(C))
    if not np.isfinite(cond) or cond > cond_max:
        raise InversionError(f"linear part of the stacked submersion is singular (cond {cond:.3e})")
    blocks, lo = [], 0
    for U in Us:
        blocks.append((lo, lo + U.out))
        lo += U.out
    fol_list = [f if isinstance(f, Foliation) else Foliation(U=f, S=None) for f in fols]
    return FoliationAtlas(fol_list, Uhat, C, blocks, Uhat.alpha, cond)


def _poly_inverse(Uhat: PolyMap, C, alpha):
    """h with Uhat(h(z)) = z + O(|z|^(alpha+1)) via h <- C^-1 (z - Uhat_N(h))."""
    n = Uhat.n
    Ci = np.linalg.inv(C)
    UN = Uhat.nonlinear_part()
    base = PolyMap.linear(Ci, alpha)
    h = base
    # each sweep fixes one more degree, so alpha sweeps reach the fixed point
    for _ in range(max(alpha - 1, 0)):
        corr = poly_compose(UN, h, alpha)
        h = base - PolyMap(n, n, alpha, Ci @ corr.coeffs)
    return h


def invert_submersion(atlas: FoliationAtlas, z=None, mode="iterative", alpha=None,
                      tol=1e-12, max_iter=50):
    """Inverse of the stacked submersion.

    ``mode="iterative"`` returns the truncated polynomial inverse h (or its
    value at ``z``).  ``mode="newton"`` solves Uhat(x) = z pointwise starting
    from h(z); returns (x, converged) and leaves NaN where Newton fails.
    """
    h = atlas.h(alpha)
    if mode == "iterative":
        return h if z is None else h(np.asarray(z, dtype=float))
    if mode != "newton":
        raise ValueError(f"unknown inversion mode {mode!r}")
    if z is None:
        raise ValueError("newton inversion is pointwise and needs z")
    return newton_solve(atlas.Uhat, np.asarray(z, dtype=float), h(np.asarray(z, dtype=float)), tol, max_iter)


def newton_solve(P: PolyMap, z, x0, tol=1e-12, max_iter=50):
    """Solve P(x) = z for square P, batched; failures are NaN with flag False."""
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    Z = np.atleast_2d(z)
    X = np.atleast_2d(np.asarray(x0, dtype=float)).copy()
    ok = np.zeros(len(Z), dtype=bool)
    active = np.ones(len(Z), dtype=bool)
    floor = 8 * np.finfo(float).eps * np.maximum(1.0, np.abs(Z).max(axis=1))
    for _ in range(max_iter):
        if not active.any():
            break
        idx = np.nonzero(active)[0]
        R = P(X[idx]) - Z[idx]
        err = np.abs(R).max(axis=1)
        done = err <= np.maximum(tol, floor[idx])
        ok[idx[done]] = True
        active[idx[done]] = False
        idx, R = idx[~done], R[~done]
        if not len(idx):
            break
        J = P.jacobian(X[idx])
        try:
            dx = np.linalg.solve(J, R[..., None])[..., 0]
        except np.linalg.LinAlgError:
            dx = np.stack([np.linalg.lstsq(Jk, rk, rcond=None)[0] for Jk, rk in zip(J, R)])
        X[idx] -= dx
        bad = ~np.all(np.isfinite(X[idx]), axis=1) | (np.abs(X[idx]).max(axis=1) > 1e6)
        active[idx[bad]] = False
    X[~ok] = np.nan
    return (X[0], bool(ok[0])) if single else (X, ok)


def ssm_immersion(atlas: FoliationAtlas, j: int, alpha=None) -> PolyMap:
    """W^j(z_j) = h(0, ..., z_j, ..., 0), the invariant manifold of foliation j."""
    alpha = atlas.alpha if alpha is None else alpha
    return poly_substitute_linear(atlas.h(alpha), atlas.embedding(j), alpha)


def ssm_invariance_residual(W: PolyMap, fol: Foliation, model: PolyMap, z):
    """F(W(z)) - W(S(z)) for maps, DW(z) R(z) - G(W(z)) for vector fields."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if fol.kind == "map":
        return model(W(z)) - W(fol.S(z))
    return np.einsum("Non,Nn->No", W.jacobian(z), fol.S(z)) - model(W(z))


# ---------------------------------------------------------------- leaves

def leaf_frames(U, tol=1e-12):
    """(V_perp, V_par) with DU(0) V_perp = 0, DU(0) V_par = I and orthogonal spans."""
    U = _as_submersion(U)
    A = U.jacobian0().real
    nu, n = A.shape
    Y, s, Vt = np.linalg.svd(A)
    if s[-1] <= tol * max(1.0, s[0]):
        raise InversionError("DU(0) is rank deficient")
    V = Vt.T
    V_par = V[:, :nu] @ np.linalg.inv(Y @ np.diag(s))
    V_perp = V[:, nu:]
    return V_perp, V_par


def frame_residuals(U, V_perp, V_par):
    """Max-abs violations of the four frame conditions."""
    A = _as_submersion(U).jacobian0()
    nu = A.shape[0]
    return {
        "DU_Vperp": float(np.abs(A @ V_perp).max()) if V_perp.size else 0.0,
        "DU_Vpar": float(np.abs(A @ V_par - np.eye(nu)).max()),
        "Vperp_Vpar": float(np.abs(V_perp.T @ V_par).max()) if V_perp.size else 0.0,
        "Vperp_Vperp": float(np.abs(V_perp.T @ V_perp - np.eye(V_perp.shape[1])).max()) if V_perp.size else 0.0,
    }


@dataclass
class LeafChart:
    """Leaf L_z written as the graph W_z(y) = V_perp y + V_par g(z, y)."""

    U: PolyMap
    V_perp: np.ndarray
    V_par: np.ndarray
    method: str
    g: PolyMap | None = None
    iterations: int = 0

    @property
    def nu(self):
        return self.U.out

    def solve_g(self, z, y, tol=1e-12, max_iter=50):
        """g(z, y) for batches; returns (g, converged)."""
        Z = np.atleast_2d(np.asarray(z, dtype=float))
        Yv = np.atleast_2d(np.asarray(y, dtype=float))
        Z, Yv = np.broadcast_arrays(Z, Yv) if Z.shape == Yv.shape else _pair_batches(Z, Yv)
        if self.g is not None:
            return self.g(np.hstack([Z, Yv])), np.ones(len(Z), dtype=bool)
        UN = self.U.nonlinear_part()
        base = Yv @ self.V_perp.T
        G = Z.copy()
        ok = np.zeros(len(Z), dtype=bool)
        active = np.ones(len(Z), dtype=bool)
        floor = 8 * np.finfo(float).eps * np.maximum(1.0, np.abs(Z).max(axis=1))
        for _ in range(max_iter):
            idx = np.nonzero(active)[0]
            if not len(idx):
                break
            x = base[idx] + G[idx] @ self.V_par.T
            R = G[idx] + UN(x) - Z[idx]
            err = np.abs(R).max(axis=1)
            done = err <= np.maximum(tol, floor[idx])
            ok[idx[done]] = True
            active[idx[done]] = False
            idx, R, x = idx[~done], R[~done], x[~done]
            if not len(idx):
                break
            J = np.eye(self.nu)[None] + UN.jacobian(x) @ self.V_par
            G[idx] -= np.linalg.solve(J, R[..., None])[..., 0]
            bad = ~np.all(np.isfinite(G[idx]), axis=1) | (np.abs(G[idx]).max(axis=1) > 1e6)
            active[idx[bad]] = False
        G[~ok] = np.nan
        return G, ok


def _pair_batches(Z, Y):
    if len(Z) == 1:
        Z = np.repeat(Z, len(Y), axis=0)
    elif len(Y) == 1:
        Y = np.repeat(Y, len(Z), axis=0)
    if len(Z) != len(Y):
        raise ValueError("z and y batches must have equal length or length 1")
    return Z, Y


def leaf_chart(U, frames=None, method="poly_iteration", alpha=None) -> LeafChart:
    """Solve z = g + U_N(V_perp y + V_par g) for g.

    ``poly_iteration`` builds g as a polynomial in (z, y) by the contraction
    g <- z - U_N(V_perp y + V_par g) truncated to ``alpha``; each sweep fixes
    one more degree.  ``pointwise_newton`` defers to Newton's method per point.
    """
    U = _as_submersion(U)
    V_perp, V_par = leaf_frames(U) if frames is None else frames
    if method == "pointwise_newton":
        return LeafChart(U, V_perp, V_par, method)
    if method != "poly_iteration":
        raise ValueError(f"unknown leaf chart method {method!r}")
    alpha = U.alpha if alpha is None else alpha
    n, nu = U.n, U.out
    # variables (z_1..z_nu, y_1..y_{n-nu})
    Zsel = np.hstack([np.eye(nu), np.zeros((nu, n - nu))])
    Ymap = np.hstack([np.zeros((n, nu)), V_perp])
    zlin = PolyMap.linear(Zsel, alpha)
    UN = U.nonlinear_part()
    g = zlin
    it = 0
    for it in range(1, alpha + 1):
        inner = PolyMap.linear(Ymap, alpha) + PolyMap(n, n, alpha, V_par @ g.coeffs)
        g_new = zlin - poly_compose(UN, inner, alpha)
        change = float(np.abs(g_new.coeffs - g.coeffs).max())
        g = g_new
        if change == 0.0:
            break
    return LeafChart(U, V_perp, V_par, method, g, it)


def leaf_eval(chart: LeafChart, z, y):
    """Points W_z(y) of the leaf; NaN rows mark pointwise failures."""
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    single = z.ndim <= 1 and y.ndim <= 1
    Z = z.reshape(-1, chart.nu)
    Yv = y.reshape(-1, chart.V_perp.shape[1]) if chart.V_perp.shape[1] else np.zeros((len(Z), 0))
    G, _ = chart.solve_g(Z, Yv)
    Z, Yv = _pair_batches(Z, Yv)
    W = Yv @ chart.V_perp.T + G @ chart.V_par.T
    return W[0] if single else W


def leaf_eval_flags(chart: LeafChart, z, y):
    Z = np.atleast_2d(np.asarray(z, dtype=float))
    Yv = np.atleast_2d(np.asarray(y, dtype=float))
    G, ok = chart.solve_g(Z, Yv)
    Z, Yv = _pair_batches(Z, Yv)
    return Yv @ chart.V_perp.T + G @ chart.V_par.T, ok


def subspace_angle(A, B, tol=1e-12) -> float:
    """Largest principal angle (radians) between the column spans of A and B."""
    A = np.atleast_2d(np.asarray(A))
    B = np.atleast_2d(np.asarray(B))
    for M in (A, B):
        if np.linalg.matrix_rank(M, tol=tol * max(1.0, np.abs(M).max())) < M.shape[1]:
            raise ValueError("subspace angle needs full column rank bases")
    return float(np.max(scipy.linalg.subspace_angles(A, B)))


def real_span(spec, selection):
    """Real basis of the span of the selected (possibly complex) right eigenvectors."""
    V = spec.right[:, list(selection)]
    # a conjugate pair contributes Re v and Im v once each
    return scipy.linalg.orth(np.hstack([V.real, V.imag]))


# ---------------------------------------------------------------- export

def write_points_csv(path, params, states, ok=None, param_names=None):
    """Point cloud: parameter columns, x_1..x_n, converged flag."""
    params = np.atleast_2d(np.asarray(params, dtype=float))
    states = np.atleast_2d(np.asarray(states, dtype=float))
    ok = np.isfinite(states).all(axis=1) if ok is None else np.asarray(ok, dtype=bool)
    names = param_names or [f"p_{i + 1}" for i in range(params.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(names) + [f"x_{i + 1}" for i in range(states.shape[1])] + ["converged"])
        for p, x, k in zip(params, states, ok):
            w.writerow([format(v, ".17g") for v in p] + [format(v, ".17g") for v in x] + [int(k)])
