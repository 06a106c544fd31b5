"""Instantaneous frequency and damping, amplitude surrogates, backbone curves and
reconstruction errors."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from isf.foliation import CONTINUOUS, Foliation, NormalFormParams
from isf.geometry import FoliationAtlas, LeafChart, invert_submersion, leaf_eval_flags, ssm_immersion

ISF = "ISF"
SSM = "SSM"


def polar_dynamics(params: NormalFormParams, r):
    """(f_r(r^2), f_i(r^2)): the radial and angular parts of the conjugate map."""
    r = np.asarray(r, dtype=float)
    return params.radial(r * r)


def freq_damping(params: NormalFormParams, r, T=None):
    """Instantaneous angular frequency and damping ratio at radius r.

    Discrete time: omega = atan2(f_i, f_r) / T and
    zeta = -log sqrt(f_r^2 + f_i^2) / (T omega).  Continuous time (S is a
    vector field in polar form r' = r f_r, phi' = f_i): omega = f_i and
    zeta = -f_r / omega.  zeta is NaN where omega vanishes.
    """
    fr, fi = polar_dynamics(params, r)
    if params.time == CONTINUOUS:
        omega = np.asarray(fi, dtype=float)
        decay = -np.asarray(fr, dtype=float)
    else:
        T = params.T if T is None else T
        if T is None:
            raise ValueError("discrete-time frequencies need the sampling period T")
        omega = np.arctan2(fi, fr) / T
        decay = -np.log(np.hypot(fr, fi)) / T
    with np.errstate(divide="ignore", invalid="ignore"):
        zeta = np.where(omega != 0, decay / np.where(omega != 0, omega, 1.0), np.nan)
    if np.ndim(omega) == 0:
        return float(omega), float(zeta)
    return omega, zeta


def surrogate_amplitude(chart: LeafChart, r, N_theta=360):
    """max over the circle |z| = r of |W_z(0)|; NaN if every point fails."""
    th = 2 * np.pi * np.arange(N_theta) / N_theta
    Z = r * np.column_stack([np.cos(th), np.sin(th)])
    Y = np.zeros((N_theta, chart.V_perp.shape[1]))
    W, ok = leaf_eval_flags(chart, Z, Y)
    if not ok.any():
        return float("nan")
    return float(np.max(np.linalg.norm(W[ok], axis=1)))


def immersion_amplitude(W, r, N_theta=360):
    """max over the circle |z| = r of |W(z)| for a polynomial immersion."""
    th = 2 * np.pi * np.arange(N_theta) / N_theta
    Z = r * np.column_stack([np.cos(th), np.sin(th)])
    return float(np.max(np.linalg.norm(W(Z), axis=1)))


@dataclass
class BackboneCurve:
    kind: str
    r: np.ndarray
    omega: np.ndarray
    zeta: np.ndarray
    delta: np.ndarray
    valid: np.ndarray

    def __len__(self):
        return len(self.r)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["r", "omega", "zeta", "delta", "valid"])
            for row in zip(self.r, self.omega, self.zeta, self.delta, self.valid):
                w.writerow([format(v, ".17g") for v in row[:4]] + [int(row[4])])

    @classmethod
    def from_csv(cls, path, kind=ISF):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        col = lambda k: np.array([float(r[k]) for r in rows])  # noqa: E731
        return cls(kind, col("r"), col("omega"), col("zeta"), col("delta"),
                   np.array([bool(int(r["valid"])) for r in rows]))


def backbone_curves(fol: Foliation, geometry=None, r_grid=None, kind=ISF, j=0, N_theta=360,
                    r_max=None, T=None) -> BackboneCurve:
    """Backbone (omega vs delta) and damping (zeta vs delta) samples.

    ``geometry`` is a LeafChart for the ISF surrogate amplitude, a
    FoliationAtlas (``j`` selects the immersion) for the SSM amplitude, or
    None to report the leaf parameter radius itself as the amplitude.
    """
    if fol.normal_form is None:
        raise ValueError("backbone curves need conjugate dynamics in normal form")
    if r_grid is None:
        r_grid = np.linspace(0.0, 0.2 if r_max is None else r_max, 50)
    r = np.asarray(r_grid, dtype=float)
    if np.any(np.diff(r) <= 0):
        raise ValueError("r_grid must be strictly increasing")
    omega, zeta = freq_damping(fol.normal_form, r, T if T is not None else fol.T)
    omega, zeta = np.atleast_1d(omega), np.atleast_1d(zeta)
    if isinstance(geometry, FoliationAtlas):
        W = ssm_immersion(geometry, j)
        delta = np.array([immersion_amplitude(W, ri, N_theta) for ri in r])
        kind = SSM
    elif isinstance(geometry, LeafChart):
        delta = np.array([surrogate_amplitude(geometry, ri, N_theta) for ri in r])
    else:
        delta = r.copy()
    valid = np.isfinite(delta) & np.isfinite(omega)
    return BackboneCurve(kind, r, omega, zeta, delta, valid)


def reduced_trajectories(atlas: FoliationAtlas, x0, steps):
    """z_{j,k+1} = S^j(z_{j,k}) from z_{j,0} = U^j(x0), stacked to (steps+1, n)."""
    out = np.empty((steps + 1, atlas.n))
    for (lo, hi), f in zip(atlas.blocks, atlas.foliations):
        if f.kind != "map":
            raise ValueError("reconstruction iterates discrete-time conjugate maps")
        z = f.U(np.asarray(x0, dtype=float))
        out[0, lo:hi] = z
        for k in range(steps):
            z = f.S(z)
            out[k + 1, lo:hi] = z
    return out


def reconstruction_errors(atlas: FoliationAtlas, trajectory, inverse="iterative"):
    """Relative forward-prediction and reconstruction errors along a trajectory.

    err_fw_k = |x_k|^-1 |z_k - Uhat(x_k)| with z_k iterated by the conjugate
    maps; err_bw_k = |x_k|^-1 |x_k - h(z_k)| with h the polynomial inverse
    (``inverse="iterative"``) or a pointwise Newton solve (``"newton"``, NaN
    where it fails).
    """
    X = np.atleast_2d(np.asarray(trajectory, dtype=float))
    Z = reduced_trajectories(atlas, X[0], len(X) - 1)
    norms = np.linalg.norm(X, axis=1)
    err_fw = np.linalg.norm(Z - atlas.Uhat(X), axis=1) / norms
    if inverse == "newton":
        Xr, _ = invert_submersion(atlas, Z, mode="newton")
    else:
        Xr = invert_submersion(atlas, Z, mode="iterative")
    err_bw = np.linalg.norm(X - Xr, axis=1) / norms
    return err_fw, err_bw


def write_errors_csv(path, err_fw, err_bw):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "err_fw", "err_bw"])
        for k, (a, b) in enumerate(zip(err_fw, err_bw)):
            w.writerow([k, format(a, ".17g"), format(b, ".17g")])
