"""Synthetic trajectory data, integration, delay embedding and CSV persistence."""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from isf.polyalg import PolyMap

MIN_SAMPLE_NORM = 1e-10


@dataclass
class TrajectoryDataset:
    """State sequences sampled every ``T`` time units.

    Pairs (x_k, y_k = x_{k+1}) are formed within each trajectory; pairs whose
    ``x_k`` is (numerically) the equilibrium are dropped.
    """

    trajectories: list
    T: float = 1.0
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.trajectories = [np.atleast_2d(np.asarray(t, dtype=float)) for t in self.trajectories]
        dims = {t.shape[1] for t in self.trajectories if t.size}
        if len(dims) > 1:
            raise ValueError(f"trajectories have mixed state dimensions {sorted(dims)}")

    @property
    def n(self):
        for t in self.trajectories:
            if t.size:
                return t.shape[1]
        return 0

    @property
    def n_states(self):
        return sum(len(t) for t in self.trajectories)

    def pairs(self, min_norm=MIN_SAMPLE_NORM):
        """Arrays X, Y of shape (N, n) with Y[k] the successor of X[k]."""
        xs = [t[:-1] for t in self.trajectories if len(t) > 1]
        ys = [t[1:] for t in self.trajectories if len(t) > 1]
        if not xs:
            return np.zeros((0, self.n)), np.zeros((0, self.n))
        X = np.concatenate(xs)
        Y = np.concatenate(ys)
        keep = np.linalg.norm(X, axis=1) >= min_norm
        return X[keep], Y[keep]

    def __eq__(self, other):
        if not isinstance(other, TrajectoryDataset) or len(self.trajectories) != len(other.trajectories):
            return False
        return self.T == other.T and all(
            a.shape == b.shape and np.array_equal(a, b) for a, b in zip(self.trajectories, other.trajectories)
        )


def shaw_pierre_field(c=0.003, k0=1.0, kappa=0.5) -> PolyMap:
    """Two-mass oscillator with a cubic spring, state (x1, x2, v1, v2)."""
    if c < 0 or k0 <= 0:
        raise ValueError("need c >= 0 and k0 > 0")
    terms = {
        (0, 0, 1, 0): [1.0, 0.0, -2 * c, c],
        (0, 0, 0, 1): [0.0, 1.0, c, -2 * c],
        (1, 0, 0, 0): [0.0, 0.0, -2 * k0, k0],
        (0, 1, 0, 0): [0.0, 0.0, k0, -2 * k0],
        (3, 0, 0, 0): [0.0, 0.0, -kappa, 0.0],
    }
    return PolyMap.from_terms(4, 4, 3, terms)


def _rk4_step(G, X, h):
    k1 = G(X)
    k2 = G(X + 0.5 * h * k1)
    k3 = G(X + 0.5 * h * k2)
    k4 = G(X + h * k3)
    return X + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def flow(G, X, t, h_int):
    """Classical RK4 flow of the field G over time t for a batch of states."""
    X = np.atleast_2d(np.asarray(X, dtype=float)).copy()
    steps = int(round(t / h_int))
    if steps < 1 or abs(steps * h_int - t) > 1e-9 * max(1.0, abs(t)):
        raise ValueError(f"inner step {h_int} does not divide the sampling period {t}")
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(steps):
            X = _rk4_step(G, X, h_int)
    if not np.all(np.isfinite(X)):
        raise FloatingPointError("integration produced non-finite states")
    return X


def integrate_sample(G, x0, T, steps, h_int=None):
    """Trajectory (steps+1, n) sampled every T, integrated with RK4 at h_int.

    ``x0`` may also be a batch (B, n); then the result has shape (B, steps+1, n).
    """
    h_int = T / 64 if h_int is None else h_int
    x0 = np.asarray(x0, dtype=float)
    single = x0.ndim == 1
    X = np.atleast_2d(x0)
    out = np.empty((X.shape[0], steps + 1, X.shape[1]))
    out[:, 0] = X
    for k in range(steps):
        X = flow(G, X, T, h_int)
        out[:, k + 1] = X
    return out[0] if single else out


def initial_conditions(n, count, cube_width, seed, scaling="square"):
    """Uniform draws from a cube about the origin, rescaled toward the origin.

    ``scaling="square"`` maps x0 -> x0 |x0| (dense near 0, bounded radius);
    ``scaling="inverse"`` applies x0 -> x0 / |x0|^2; ``None`` keeps the cube.
    Every trajectory gets its own RNG stream spawned from ``seed``.
    """
    streams = np.random.SeedSequence(seed).spawn(count)
    X = np.array([np.random.default_rng(s).uniform(-cube_width / 2, cube_width / 2, n) for s in streams])
    r = np.linalg.norm(X, axis=1, keepdims=True)
    if scaling == "square":
        X = X * r
    elif scaling == "inverse":
        X = X / r**2
    elif scaling not in (None, "none"):
        raise ValueError(f"unknown scaling {scaling!r}")
    return X


def generate_dataset(G, count_traj=100, points=16, T=0.8, cube_width=0.4, seed=0,
                     scaling="square", h_int=None) -> TrajectoryDataset:
    X0 = initial_conditions(G.n, count_traj, cube_width, seed, scaling)
    traj = integrate_sample(G, X0, T, points - 1, h_int)
    prov = {"generator": "generate_dataset", "count_traj": count_traj, "points": points, "T": T,
            "cube_width": cube_width, "seed": seed, "scaling": scaling,
            "h_int": T / 64 if h_int is None else h_int}
    return TrajectoryDataset(list(traj), T, prov)


def delay_embed(signal, dim, lag=1, T=1.0) -> TrajectoryDataset:
    """Embed a scalar series: state_k = (s_k, s_{k+lag}, ..., s_{k+(dim-1)lag})."""
    s = np.asarray(signal, dtype=float).ravel()
    span = (dim - 1) * lag
    if dim < 1 or lag < 1 or len(s) < span + 2:
        raise ValueError(f"series of length {len(s)} too short for dim={dim}, lag={lag}")
    idx = np.arange(len(s) - span)[:, None] + lag * np.arange(dim)[None, :]
    return TrajectoryDataset([s[idx]], T, {"generator": "delay_embed", "dim": dim, "lag": lag})


def delay_embed_many(signals, dim, lag=1, T=1.0) -> TrajectoryDataset:
    parts = [delay_embed(s, dim, lag, T).trajectories[0] for s in signals]
    return TrajectoryDataset(parts, T, {"generator": "delay_embed", "dim": dim, "lag": lag,
                                        "signals": len(parts)})


class DatasetFormatError(ValueError):
    pass


def write_dataset(path, ds: TrajectoryDataset, n=None):
    n = ds.n if n is None else n
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["traj_id", "step"] + [f"x_{i + 1}" for i in range(n)])
        for tid, traj in enumerate(ds.trajectories):
            for k, x in enumerate(traj):
                w.writerow([tid, k] + [format(v, ".17g") for v in x])
    with open(_sidecar(path), "w") as fh:
        json.dump({"T": ds.T, "n": n, "provenance": ds.provenance}, fh, indent=1)


def _sidecar(path):
    return os.fspath(path) + ".json"


def read_dataset(path, T=None) -> TrajectoryDataset:
    meta = {}
    if os.path.exists(_sidecar(path)):
        with open(_sidecar(path)) as fh:
            meta = json.load(fh)
    T = meta.get("T", 1.0) if T is None else T
    rows = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError(f"{path}: line 1: missing header") from None
        if header[:2] != ["traj_id", "step"]:
            raise DatasetFormatError(f"{path}: line 1: header must start with traj_id, step")
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != width:
                raise DatasetFormatError(f"{path}: line {lineno}: expected {width} columns, found {len(row)}")
            try:
                tid, step = int(row[0]), int(row[1])
                x = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise DatasetFormatError(f"{path}: line {lineno}: {exc}") from None
            traj = rows.setdefault(tid, [])
            if step != len(traj):
                raise DatasetFormatError(f"{path}: line {lineno}: step {step} out of sequence")
            traj.append(x)
    trajs = [np.array(rows[k]) for k in sorted(rows)]
    return TrajectoryDataset(trajs, T, meta.get("provenance", {}))
