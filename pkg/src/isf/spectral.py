"""Eigen-analysis of the linearisation, spectral quotients and resonance checks."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

MAP = "map"
VECTOR_FIELD = "vector_field"


class SpectralError(ValueError):
    """Defective eigenbasis or a spectrum that is not contracting."""


@dataclass
class SpectralData:
    """Eigenvalues with biorthonormal right (columns) and left (rows) eigenvectors.

    ``selection`` holds 0-based indices of the eigenvalues spanning E and E*.
    """

    eigenvalues: np.ndarray
    right: np.ndarray
    left: np.ndarray
    selection: tuple = ()
    kind: str = MAP
    T: float | None = None
    pairs: tuple = field(default=())

    @classmethod
    def from_eigenvalues(cls, eigenvalues, selection=(), kind=MAP, T=None):
        """Diagonal spectral data, used when only the eigenvalues matter."""
        ev = np.asarray(eigenvalues, dtype=complex)
        n = len(ev)
        return cls(ev, np.eye(n, dtype=complex), np.eye(n, dtype=complex),
                   tuple(selection), kind, T, _find_pairs(ev))

    @property
    def n(self):
        return len(self.eigenvalues)

    def select(self, selection):
        return SpectralData(self.eigenvalues, self.right, self.left, tuple(selection),
                            self.kind, self.T, self.pairs)

    def pair_selection(self, mode):
        """Selection of the mode-th oscillatory pair (or real mode) counted slow first."""
        groups = self.mode_groups()
        if not 0 <= mode < len(groups):
            raise IndexError(f"mode {mode} out of range, spectrum has {len(groups)} modes")
        return groups[mode]

    def mode_groups(self):
        groups, k = [], 0
        paired = {p[0]: p for p in self.pairs}
        while k < self.n:
            if k in paired:
                groups.append(paired[k])
                k += 2
            else:
                groups.append((k,))
                k += 1
        return groups

    def rates(self):
        """log|mu| for maps, Re(lambda) for vector fields."""
        if self.kind == MAP:
            with np.errstate(divide="ignore"):
                return np.log(np.abs(self.eigenvalues))
        return self.eigenvalues.real

    def to_dict(self):
        return {
            "kind": self.kind,
            "T": self.T,
            "selection": list(self.selection),
            "eigenvalues": [[float(v.real), float(v.imag)] for v in self.eigenvalues],
        }


def _find_pairs(ev, tol=1e-10):
    pairs = []
    k = 0
    while k < len(ev) - 1:
        a, b = ev[k], ev[k + 1]
        if abs(a.imag) > tol * max(1.0, abs(a)) and abs(a - np.conj(b)) <= 1e-8 * max(1.0, abs(a)):
            pairs.append((k, k + 1))
            k += 2
        else:
            k += 1
    return tuple(pairs)


def eig_full(A, kind=MAP, T=None, cond_max=1e8):
    """Eigen-decomposition sorted slow first with conjugate pairs adjacent.

    Pairs are ordered positive imaginary part first and their eigenvectors are
    exact conjugates; left eigenvectors are the rows of the inverse right
    eigenvector matrix so that ``left @ right = I``.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("eig_full needs a square matrix")
    w, V = scipy.linalg.eig(A)
    n = len(w)
    key = np.abs(w) if kind == MAP else w.real
    scale = max(1.0, np.max(np.abs(w)))
    order = sorted(range(n), key=lambda i: (-np.round(key[i] / scale, 10), -w[i].imag))
    used = set()
    ev = []
    vecs = []
    for i in order:
        if i in used:
            continue
        used.add(i)
        lam = w[i]
        if abs(lam.imag) <= 1e-12 * scale:
            ev.append(complex(lam.real))
            v = V[:, i].real if np.max(np.abs(V[:, i].imag)) <= 1e-12 else V[:, i]
            vecs.append(np.asarray(v, dtype=complex))
            continue
        cands = [j for j in range(n) if j not in used]
        j = min(cands, key=lambda j: abs(w[j] - np.conj(lam)))
        used.add(j)
        if lam.imag < 0:
            lam = np.conj(lam)
            v = np.conj(V[:, i])
        else:
            v = V[:, i]
        ev.extend([lam, np.conj(lam)])
        vecs.extend([v, np.conj(v)])
    ev = np.array(ev, dtype=complex)
    R = np.column_stack(vecs)
    R = R / np.linalg.norm(R, axis=0)
    cond = np.linalg.cond(R)
    if not np.isfinite(cond) or cond > cond_max:
        raise SpectralError(
            f"eigenvector matrix condition number {cond:.3e} exceeds {cond_max:.1e}; "
            "the linearisation is (numerically) not semisimple"
        )
    L = np.linalg.inv(R)
    return SpectralData(ev, R, L, (), kind, T, _find_pairs(ev))


def spectral_quotient(spec: SpectralData) -> float:
    """ISF spectral quotient of the selected subspace (always >= 1)."""
    rates = spec.rates()
    if np.any(rates >= 0):
        raise SpectralError("spectral quotient needs a contracting spectrum")
    if not spec.selection:
        raise ValueError("spectral quotient needs a non-empty selection")
    sel = rates[list(spec.selection)]
    return float(np.min(sel) / np.max(rates))


def _exponents(n, lo, hi):
    for d in range(lo, hi + 1):
        for m in itertools.product(range(d + 1), repeat=n):
            if sum(m) == d:
                yield m


def _combination(spec, m, support):
    """prod mu_k^m_k (map) or sum m_k lambda_k (vector field) over ``support``."""
    ev = spec.eigenvalues[list(support)]
    m = np.asarray(m)
    if spec.kind == MAP:
        return complex(np.prod(ev ** m))
    return complex(np.sum(m * ev))


def check_external_nonresonance(spec: SpectralData, sigma: int, report_margin=1e-8):
    """Scan exponents with 2 <= |m| <= sigma-1 touching a non-selected mode.

    Returns a dict with ``violations`` (margin at most ``report_margin``) and the
    closest approach found.
    """
    if sigma < 2:
        raise ValueError("sigma must be at least 2")
    sel = list(spec.selection)
    outside = [k for k in range(spec.n) if k not in sel]
    violations = []
    closest = None
    for m in _exponents(spec.n, 2, sigma - 1):
        if not any(m[k] for k in outside):
            continue
        val = _combination(spec, m, range(spec.n))
        for j in sel:
            target = spec.eigenvalues[j]
            margin = abs(val - target) / abs(target)
            entry = {"j": j, "m": list(m), "margin": margin}
            if closest is None or margin < closest["margin"]:
                closest = entry
            if margin <= report_margin:
                violations.append(entry)
    return {"sigma": sigma, "selection": sel, "violations": violations, "closest": closest}


def internal_resonances(spec: SpectralData, sigma: int, tol: float = 0.1):
    """(j, m) with m over the selected coordinates and a relative margin <= tol."""
    sel = list(spec.selection)
    hits = []
    for m in _exponents(len(sel), 2, sigma - 1):
        val = _combination(spec, m, sel)
        for j in sel:
            target = spec.eigenvalues[j]
            if abs(val - target) <= tol * abs(target):
                hits.append((j, tuple(m)))
    return hits


def resonance_margin(spec: SpectralData, j: int, m, support=None) -> float:
    """Relative distance of an eigenvalue combination from the j-th eigenvalue."""
    support = range(spec.n) if support is None else support
    target = spec.eigenvalues[j]
    return abs(_combination(spec, m, support) - target) / abs(target)
