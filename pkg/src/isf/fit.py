"""Direct fitting of a two-dimensional invariant foliation to trajectory data.

The submersion U (n -> 2) and the radially symmetric conjugate map S are found
by minimising the weighted invariance loss plus a normalisation penalty with a
BFGS quasi-Newton method.  All gradients are analytic.
"""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.optimize
from scipy.optimize._linesearch import LineSearchWarning

from isf.data import MIN_SAMPLE_NORM, TrajectoryDataset
from isf.foliation import DISCRETE, Foliation, NormalFormParams
from isf.kernels import monomials
from isf.polyalg import PolyMap, _tables
from isf.spectral import MAP, SpectralData, eig_full

RESONANT_MESH = "resonant_mesh"
LINEAR_NORM = "linear_norm"


class OptimizationError(RuntimeError):
    """The optimiser met a non-finite objective or gradient."""


class RankError(ValueError):
    """Not enough independent samples for the linear regression."""


@dataclass
class FitConfig:
    alpha: int = 3
    sigma: float = 2.0
    beta: float | str = "auto"
    N_r: int = 10
    N_theta: int = 24
    r_max: float | None = None
    v_r: np.ndarray | None = None
    v_i: np.ndarray | None = None
    u_init: np.ndarray | None = None
    b_init: float = 1.0
    c_init: float = 0.0
    penalty: str = RESONANT_MESH
    max_iter: int = 20000
    gtol: float = 1e-8
    init_scale: float = 0.0
    seed: int = 0
    T: float = 1.0
    mode: int = 0
    radius_quantile: float = 0.5
    precondition: str = "gauss_newton"
    extra: dict = field(default_factory=dict)

    def validate(self):
        if self.sigma < 1:
            raise ValueError("sigma must be >= 1")
        if self.beta != "auto" and not float(self.beta) > 0:
            raise ValueError("beta must be positive or 'auto'")
        if self.N_r < 4 or self.N_theta < 4:
            raise ValueError("N_r and N_theta must be at least 4")
        if self.r_max is not None and not self.r_max > 0:
            raise ValueError("r_max must be positive")
        if self.alpha < 1:
            raise ValueError("alpha must be >= 1")
        if self.penalty not in (RESONANT_MESH, LINEAR_NORM):
            raise ValueError(f"unknown penalty {self.penalty!r}")

    def to_dict(self):
        d = asdict(self)
        for k in ("v_r", "v_i", "u_init"):
            if d[k] is not None:
                d[k] = np.asarray(d[k]).tolist()
        return d


# ---------------------------------------------------------------- parameters

def n_params(n, alpha):
    """Sizes (K, P): monomials of degree 1..alpha in n variables, radial terms."""
    return len(_tables(n, alpha).degrees) - 1, alpha // 2 + 1


def pack(C, b, c):
    return np.concatenate([np.asarray(C, dtype=float).ravel(), b, c])


def unpack(theta, n, alpha):
    K, P = n_params(n, alpha)
    C = theta[: 2 * K].reshape(2, K)
    return C, theta[2 * K: 2 * K + P], theta[2 * K + P: 2 * K + 2 * P]


def features(X, alpha):
    """Monomial matrix of degree 1..alpha (constant column dropped)."""
    t = _tables(X.shape[1], alpha)
    return monomials(X, t.parent, t.var)[:, 1:]


# ---------------------------------------------------------------- loss terms

def _normal_form_eval(u, b, c):
    """S(u), its Jacobian (N,2,2) and the parameter sensitivities."""
    u1, u2 = u[:, 0], u[:, 1]
    rho = u1**2 + u2**2
    P = len(b)
    powers = rho[:, None] ** np.arange(P)[None, :]
    fr = powers @ b
    fi = powers @ c
    dpow = np.zeros_like(powers)
    if P > 1:
        dpow[:, 1:] = powers[:, :-1] * np.arange(1, P)[None, :]
    dfr = dpow @ b
    dfi = dpow @ c
    S = np.column_stack([u1 * fr - u2 * fi, u1 * fi + u2 * fr])
    # d/du of (u1 fr - u2 fi, u1 fi + u2 fr) with d rho/du = 2u
    g1 = u1 * dfr - u2 * dfi
    g2 = u1 * dfi + u2 * dfr
    DS = np.empty((len(u), 2, 2))
    DS[:, 0, 0] = fr + 2 * u1 * g1
    DS[:, 0, 1] = -fi + 2 * u2 * g1
    DS[:, 1, 0] = fi + 2 * u1 * g2
    DS[:, 1, 1] = fr + 2 * u2 * g2
    return S, DS, powers


class InvarianceLoss:
    """Weighted invariance loss sum_k |x_k|^(-2 sigma) |U(y_k) - S(U(x_k))|^2.

    Monomial matrices of the data are cached, so each evaluation is a pair of
    matrix products.
    """

    def __init__(self, X, Y, alpha, sigma):
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        norms = np.linalg.norm(X, axis=1)
        if np.any(norms < MIN_SAMPLE_NORM):
            raise ValueError("samples at the equilibrium must be filtered before fitting")
        self.n = X.shape[1]
        self.alpha = alpha
        self.w = norms ** (-2.0 * sigma)
        self.PX = features(X, alpha)
        self.PY = features(Y, alpha)

    def __call__(self, theta):
        C, b, c = unpack(theta, self.n, self.alpha)
        u = self.PX @ C.T
        v = self.PY @ C.T
        S, DS, powers = _normal_form_eval(u, b, c)
        r = v - S
        wr = self.w[:, None] * r
        value = float(np.sum(wr * r))
        back = np.einsum("Nij,Ni->Nj", DS, wr)
        gC = 2.0 * (wr.T @ self.PY - back.T @ self.PX)
        e1 = wr[:, 0] * u[:, 0] + wr[:, 1] * u[:, 1]
        e2 = -wr[:, 0] * u[:, 1] + wr[:, 1] * u[:, 0]
        gb = -2.0 * powers.T @ e1
        gc = -2.0 * powers.T @ e2
        return value, pack(gC, gb, gc)

    def gauss_newton_diagonal(self, theta):
        """Diagonal of J^T W J for the residual r = U(y) - S(U(x))."""
        C, b, c = unpack(theta, self.n, self.alpha)
        u = self.PX @ C.T
        _, DS, powers = _normal_form_eval(u, b, c)
        w = self.w
        dC = np.empty_like(C)
        for o in range(2):
            # dr/dC[o, :] = e_o PY - DS[:, :, o] PX
            tot = np.zeros(C.shape[1])
            for i in range(2):
                col = (i == o) * self.PY - DS[:, i, o][:, None] * self.PX
                tot += w @ (col * col)
            dC[o] = tot
        sq = (u * u).sum(axis=1) * w
        db = (powers * powers).T @ sq
        return pack(dC, db, db.copy())

    def residuals(self, theta):
        C, b, c = unpack(theta, self.n, self.alpha)
        u = self.PX @ C.T
        S, _, _ = _normal_form_eval(u, b, c)
        return self.PY @ C.T - S


def invariance_loss(theta_U, theta_S, data, cfg: FitConfig):
    """Value and analytic gradient of the data term.

    ``theta_U`` is the (2, K) coefficient array of U over monomials of degree
    1..alpha; ``theta_S`` is the concatenation (b, c).  ``data`` is a
    TrajectoryDataset or an (X, Y) tuple.
    """
    X, Y = data.pairs() if isinstance(data, TrajectoryDataset) else data
    loss = InvarianceLoss(X, Y, cfg.alpha, cfg.sigma)
    P = cfg.alpha // 2 + 1
    theta_S = np.asarray(theta_S, dtype=float)
    value, grad = loss(pack(theta_U, theta_S[:P], theta_S[P:]))
    K = 2 * loss.PX.shape[1]
    return value, grad[:K].reshape(2, -1), grad[K:]


class MeshPenalty:
    """First Fourier coefficient constraint of U on a polar mesh in the slow plane.

    Nodes v_jk = v_r r_j cos(theta_k) - v_i r_j sin(theta_k), r_j = r_max j / N_r
    for j = 1..N_r and theta_k = 2 pi k / N_theta.
    """

    def __init__(self, v_r, v_i, r_max, N_r, N_theta, alpha):
        v_r = np.asarray(v_r, dtype=float)
        v_i = np.asarray(v_i, dtype=float)
        r = r_max * np.arange(1, N_r + 1) / N_r
        th = 2 * np.pi * np.arange(N_theta) / N_theta
        cos, sin = np.cos(th), np.sin(th)
        nodes = (r[:, None, None] * (cos[None, :, None] * v_r - sin[None, :, None] * v_i))
        Phi = features(nodes.reshape(-1, len(v_r)), alpha).reshape(N_r, N_theta, -1)
        Pc = np.einsum("k,jkm->jm", cos, Phi) / r[:, None]
        Ps = np.einsum("k,jkm->jm", sin, Phi) / r[:, None]
        self.Ma = np.stack([Pc, Ps], axis=1)
        self.Mb = np.stack([-Ps, Pc], axis=1)
        self.target = N_theta / 2.0
        self.nodes = nodes

    def __call__(self, C):
        a = np.einsum("joK,oK->j", self.Ma, C) - self.target
        b = np.einsum("joK,oK->j", self.Mb, C)
        value = float(a @ a + b @ b)
        grad = 2.0 * (np.einsum("j,joK->oK", a, self.Ma) + np.einsum("j,joK->oK", b, self.Mb))
        return value, grad


class LinearNormPenalty:
    """(|DU(0)|_F^2 - 1)^2 acting on the linear coefficients."""

    def __init__(self, n):
        self.n = n

    def __call__(self, C):
        L = C[:, : self.n]
        s = float(np.sum(L * L))
        grad = np.zeros_like(C)
        grad[:, : self.n] = 4.0 * (s - 1.0) * L
        return (s - 1.0) ** 2, grad


def normalization_penalty(theta_U, cfg: FitConfig, mode=RESONANT_MESH):
    """Value and gradient (same shape as ``theta_U``) of the normalisation penalty."""
    C = np.asarray(theta_U, dtype=float)
    n = len(cfg.v_r) if cfg.v_r is not None else None
    if mode == LINEAR_NORM:
        if n is None:
            n = _infer_n(C.shape[1], cfg.alpha)
        return LinearNormPenalty(n)(C)
    if cfg.v_r is None or cfg.v_i is None or cfg.r_max is None:
        raise ValueError("the mesh penalty needs v_r, v_i and r_max")
    return MeshPenalty(cfg.v_r, cfg.v_i, cfg.r_max, cfg.N_r, cfg.N_theta, cfg.alpha)(C)


def _infer_n(K, alpha):
    n = 1
    while len(_tables(n, alpha).degrees) - 1 < K:
        n += 1
    if len(_tables(n, alpha).degrees) - 1 != K:
        raise ValueError(f"{K} coefficients do not match any dimension at order {alpha}")
    return n


# ---------------------------------------------------------------- initial guess

def linear_regression(X, Y, radius=None):
    """Least-squares A with Y ~ X A^T using samples with |x| <= radius."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if radius is not None:
        keep = np.linalg.norm(X, axis=1) <= radius
        X, Y = X[keep], Y[keep]
    n = X.shape[1]
    if len(X) < n + 1 or np.linalg.matrix_rank(X) < n:
        raise RankError(f"linear regression needs at least {n + 1} independent samples, got {len(X)}")
    At, *_ = np.linalg.lstsq(X, Y, rcond=None)
    return At.T


def init_from_linear_fit(data, mode=0, cfg: FitConfig | None = None):
    """Linear model near the origin, its eigen-data and a seeded FitConfig.

    The regression uses pairs with |x_k| below the ``radius_quantile`` quantile
    of the sample radii (all pairs if that leaves too few).
    """
    cfg = FitConfig() if cfg is None else cfg
    X, Y = data.pairs() if isinstance(data, TrajectoryDataset) else data
    T = data.T if isinstance(data, TrajectoryDataset) else cfg.T
    norms = np.linalg.norm(X, axis=1)
    radius = np.quantile(norms, cfg.radius_quantile) if len(norms) else 0.0
    try:
        A = linear_regression(X, Y, radius)
    except RankError:
        A = linear_regression(X, Y)
    spec = eig_full(A, kind=MAP, T=T)
    sel = spec.pair_selection(mode)
    if len(sel) != 2:
        raise ValueError(f"mode {mode} is a real eigenvalue; fitting needs a complex pair")
    spec = spec.select(sel)
    k = sel[0]
    vstar = spec.left[k]
    v = spec.right[:, k]
    mu = spec.eigenvalues[k]
    seeded = FitConfig(**{**cfg.__dict__})
    seeded.T = T
    seeded.mode = mode
    seeded.v_r, seeded.v_i = v.real.copy(), v.imag.copy()
    seeded.u_init = np.vstack([vstar.real, vstar.imag])
    seeded.b_init, seeded.c_init = float(mu.real), float(mu.imag)
    if seeded.r_max is None:
        seeded.r_max = float(norms.max())
    seeded.extra = {**cfg.extra, "A_hat": A.tolist()}
    return spec, seeded


# ---------------------------------------------------------------- optimiser

@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    nit: int
    nfev: int
    status: str
    history: list


def minimize(fun, theta0, gtol=1e-8, max_iter=10000, ftol=0.0, stall=20, callback=None) -> OptimizeResult:
    """BFGS with a strong-Wolfe line search.

    ``fun`` returns (value, gradient).  Stops when |grad| <= gtol, after
    ``max_iter`` iterations, when ``stall`` consecutive iterations fail to
    lower the objective by more than a few ulps, or when no line search
    progress is possible.  Raises OptimizationError on non-finite values.
    """
    x = np.array(theta0, dtype=float)
    if not np.all(np.isfinite(x)):
        raise OptimizationError("initial parameters are not finite")
    cache = {}
    nfev = 0

    def evaluate(z):
        nonlocal nfev
        key = z.tobytes()
        if key not in cache:
            nfev += 1
            f, g = fun(z)
            g = np.asarray(g, dtype=float)
            if not np.isfinite(f) or not np.all(np.isfinite(g)):
                raise OptimizationError(f"non-finite objective after {nfev} evaluations")
            cache.clear()
            cache[key] = (float(f), g)
        return cache[key]

    f, g = evaluate(x)
    history = [f]
    H = np.eye(len(x))
    first = True
    status = "max_iter"
    nit = 0
    flat = 0
    while nit < max_iter:
        if np.linalg.norm(g) <= gtol:
            status = "converged"
            break
        p = -H @ g
        if g @ p >= 0:
            H = np.eye(len(x))
            p = -g
        if first:
            # unit-length first step, as the Hessian scale is unknown
            p = p / max(1.0, np.linalg.norm(p))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", LineSearchWarning)
            ls = scipy.optimize.line_search(
                lambda z: evaluate(z)[0], lambda z: evaluate(z)[1], x, p, gfk=g, old_fval=f,
                c1=1e-4, c2=0.9, maxiter=50,
            )
        step = ls[0]
        if step is None:
            step = _backtrack(evaluate, x, f, g, p)
            if step is None:
                if not first:
                    H = np.eye(len(x))
                    first = True
                    continue
                status = "line_search_failed"
                break
        x_new = x + step * p
        f_new, g_new = evaluate(x_new)
        s = x_new - x
        yv = g_new - g
        sy = s @ yv
        if first and sy > 0:
            H = np.eye(len(x)) * (sy / (yv @ yv))
        if sy > 1e-300:
            rho = 1.0 / sy
            Hy = H @ yv
            H = H - rho * (np.outer(s, Hy) + np.outer(Hy, s)) + (rho * rho * (yv @ Hy) + rho) * np.outer(s, s)
        first = False
        decrease = f - f_new
        x, f, g = x_new, f_new, g_new
        nit += 1
        history.append(f)
        if callback is not None:
            callback(x, f)
        if ftol > 0 and 0 <= decrease <= ftol * max(abs(f), 1e-300):
            status = "ftol"
            break
        flat = flat + 1 if decrease <= 4 * np.finfo(float).eps * abs(f) else 0
        if flat >= stall:
            status = "stalled"
            break
    return OptimizeResult(x, f, g, nit, nfev, status, history)


def _backtrack(evaluate, x, f, g, p, shrink=0.5, tries=60):
    t = 1.0
    slope = g @ p
    for _ in range(tries):
        ft, _ = evaluate(x + t * p)
        if ft <= f + 1e-4 * t * slope:
            return t
        t *= shrink
    return None


# ---------------------------------------------------------------- fitting

def _degree_scaling(n, alpha, r_scale):
    deg = _tables(n, alpha).degrees[1:]
    return r_scale ** (deg - 1.0)


def seed_theta(n, cfg: FitConfig, rng=None):
    K, P = n_params(n, cfg.alpha)
    C = np.zeros((2, K))
    C[:, :n] = cfg.u_init
    if cfg.init_scale > 0:
        rng = np.random.default_rng(cfg.seed) if rng is None else rng
        C[:, n:] = cfg.init_scale * rng.standard_normal((2, K - n))
    b = np.zeros(P)
    c = np.zeros(P)
    b[0], c[0] = cfg.b_init, cfg.c_init
    return pack(C, b, c)


def auto_beta(loss, penalty, theta_seed, n, alpha, ratio=0.1, probe=0.9):
    """beta with beta L_n = ratio L_i at the seed.

    The seed satisfies the mesh constraint exactly, so L_n is measured on a
    probe whose linear part is scaled by ``probe`` (a fixed normalisation
    defect) instead.
    """
    Li, _ = loss(theta_seed)
    C, _, _ = unpack(theta_seed, n, alpha)
    Cp = C.copy()
    Cp[:, :n] *= probe
    Ln, _ = penalty(Cp)
    if Ln <= 0 or Li <= 0:
        return 1.0
    return ratio * Li / Ln


@dataclass
class FitResult:
    foliation: Foliation
    theta: np.ndarray
    beta: float
    loss: float
    optimizer: OptimizeResult
    config: FitConfig


def fit_isf(data, cfg: FitConfig, spec: SpectralData | None = None, return_details=False):
    """Minimise L_i + beta L_n over the coefficients of U and the normal form S.

    ``cfg`` must be seeded (see ``init_from_linear_fit``).  Coefficients of U
    are internally rescaled by r_scale^(|m|-1), r_scale = max |x_k|, so the
    optimiser sees comparable magnitudes at all orders.
    """
    cfg.validate()
    if cfg.u_init is None:
        raise ValueError("FitConfig is not seeded; call init_from_linear_fit first")
    X, Y = data.pairs() if isinstance(data, TrajectoryDataset) else data
    n = X.shape[1]
    K, P = n_params(n, cfg.alpha)
    loss = InvarianceLoss(X, Y, cfg.alpha, cfg.sigma)
    if cfg.penalty == RESONANT_MESH:
        penalty = MeshPenalty(cfg.v_r, cfg.v_i, cfg.r_max, cfg.N_r, cfg.N_theta, cfg.alpha)
    else:
        penalty = LinearNormPenalty(n)
    theta0 = seed_theta(n, cfg)
    beta = auto_beta(loss, penalty, theta0, n, cfg.alpha) if cfg.beta == "auto" else float(cfg.beta)

    if cfg.precondition == "gauss_newton":
        d = loss.gauss_newton_diagonal(theta0)
        scale = 1.0 / np.sqrt(np.where(d > 0, d, np.max(d)))
    else:
        r_scale = float(np.max(np.linalg.norm(X, axis=1)))
        scale = np.concatenate([np.tile(_degree_scaling(n, cfg.alpha, r_scale), 2), np.ones(2 * P)])

    def objective(theta):
        Li, gi = loss(theta)
        C, _, _ = unpack(theta, n, cfg.alpha)
        Ln, gn = penalty(C)
        g = gi.copy()
        g[: 2 * K] += beta * gn.ravel()
        return Li + beta * Ln, g

    J0 = max(objective(theta0)[0], 1e-300)

    def scaled(phi):
        f, g = objective(phi * scale)
        return f / J0, g * scale / J0

    res = minimize(scaled, theta0 / scale, gtol=cfg.gtol, max_iter=cfg.max_iter)
    theta = res.x * scale
    res.x = theta
    C, b, c = unpack(theta, n, cfg.alpha)
    U = PolyMap._from_full(n, np.hstack([np.zeros((2, 1)), C]), cfg.alpha)
    nf = NormalFormParams(b, c, cfg.alpha, cfg.T, DISCRETE)
    Li, _ = loss(theta)
    Ln, _ = penalty(C)
    fol = Foliation(
        U=U, S=nf, kind="map", T=cfg.T, sigma=cfg.sigma, provenance="fitted",
        selection=tuple(spec.selection) if spec is not None else (),
        eigenvalues=None if spec is None else spec.eigenvalues.copy(),
        meta={"beta": beta, "L_i": Li, "L_n": Ln, "iterations": res.nit, "status": res.status,
              "config": cfg.to_dict()},
    )
    fol.meta["training_residual"] = residual_metric(fol, (X, Y))
    if return_details:
        return FitResult(fol, theta, beta, res.fun * J0, res, cfg)
    return fol


def residual_metric(fol: Foliation, data) -> float:
    """(1/N) sum_k |x_k|^-1 |U(y_k) - S(U(x_k))| over the data pairs."""
    X, Y = data.pairs() if isinstance(data, TrajectoryDataset) else data
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    r = fol.U(Y) - fol.S(fol.U(X))
    return float(np.mean(np.linalg.norm(r, axis=1) / np.linalg.norm(X, axis=1)))
