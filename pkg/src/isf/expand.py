"""Series expansion of invariant spectral foliations from a polynomial model.

Works for maps (``U o F = S o U``) and vector fields (``DU G = R o U``).  The
model is moved into its complex eigenbasis, the homological equations are
solved order by order, and the result is turned back into a real submersion
acting on the original coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from isf.foliation import CONTINUOUS, DISCRETE, Foliation, NormalFormParams
from isf.polyalg import (
    PolyMap,
    _compose_full,
    _derivative_full,
    _mul_full,
    _tables,
    poly_jacobian0,
    poly_linear_change,
    poly_substitute_linear,
)
from isf.spectral import MAP, VECTOR_FIELD, SpectralData, eig_full

EXACT_RESONANCE = 1e-12


class ResonanceError(ArithmeticError):
    """An external resonance makes the homological equation unsolvable."""

    def __init__(self, j, m, denom):
        self.j, self.m, self.denom = j, tuple(m), denom
        super().__init__(f"exact resonance for eigenvalue index {j} at exponent {tuple(m)} (divisor {abs(denom):.3e})")


class PairingError(ValueError):
    """Conjugate coordinates do not produce conjugate coefficients."""


@dataclass
class ExpandedFoliation:
    """Complex expansion in eigen-coordinates.

    ``U`` maps eigen-coordinates (n) to the selected coordinates (nu), ``S``
    acts on the selected coordinates.  ``resonance_choices`` records, per
    internal (j, m), whether the resonant form (S absorbs the term) or the
    graph form (U absorbs the term) was used.
    """

    U: PolyMap
    S: PolyMap
    mode: str
    alpha: int
    spec: SpectralData
    model: PolyMap
    sigma: int | None = None
    resonance_choices: list = field(default_factory=list)

    def to_dict(self):
        return {
            "U": self.U.to_dict(),
            "S": self.S.to_dict(),
            "mode": self.mode,
            "alpha": self.alpha,
            "sigma": self.sigma,
            "spectrum": self.spec.to_dict(),
            "resonance_choices": self.resonance_choices,
        }


def complexify_model(F: PolyMap, spec: SpectralData, alpha=None) -> PolyMap:
    """The model in eigen-coordinates x = V xi: xi -> V^-1 F(V xi)."""
    alpha = F.alpha if alpha is None else alpha
    Fc = poly_linear_change(F, spec.right, spec.left, alpha)
    coeffs = Fc.coeffs.astype(complex)
    # the linear block is diagonal by construction; drop the rounding noise
    coeffs[:, : Fc.n] = np.diag(spec.eigenvalues)
    return PolyMap(Fc.n, Fc.out, Fc.alpha, coeffs, spec.pairs)


def _solve(F, spec, alpha, tol, mode, policy):
    if not spec.selection:
        raise ValueError("expansion needs a selection of eigenvalues")
    n = F.n
    sel = list(spec.selection)
    nu = len(sel)
    mu = spec.eigenvalues
    Fc = complexify_model(F, spec, alpha)
    tn = _tables(n, alpha)
    ts = _tables(nu, alpha)
    Uf = np.zeros((nu, len(tn.degrees)), dtype=complex)
    Sf = np.zeros((nu, len(ts.degrees)), dtype=complex)
    for j, k in enumerate(sel):
        Uf[j, 1 + k] = 1.0
        Sf[j, 1 + j] = mu[k]
    choices = []
    outside = [k for k in range(n) if k not in sel]
    for d in range(2, alpha + 1):
        td = _tables(n, d)
        Ud = Uf[:, : len(td.degrees)]
        Sd = Sf[:, : len(_tables(nu, d).degrees)]
        Fd = Fc.full(d)
        if mode == MAP:
            lhs = _compose_full(Ud, n, d, Fd, n, d)
        else:
            lhs = np.zeros_like(Ud)
            for i in range(n):
                dU = _derivative_full(Ud, n, d, i)
                lhs += _mul_full(dU, np.repeat(Fd[i:i + 1], nu, axis=0), n, d)
        rhs = _compose_full(Sd, nu, d, Ud, n, d)
        sl = td.degree_slice(d)
        H = rhs[:, sl] - lhs[:, sl]
        for col, m in zip(range(sl.start, sl.stop), tn.exps[sl]):
            internal = not any(m[k] for k in outside)
            if mode == MAP:
                full_comb = np.prod(mu ** m)
            else:
                full_comb = np.sum(m * mu)
            for j, k in enumerate(sel):
                h = H[j, col - sl.start]
                denom = full_comb - mu[k]
                margin = abs(denom) / abs(mu[k])
                if not internal:
                    if abs(denom) < EXACT_RESONANCE:
                        raise ResonanceError(k, m, denom)
                    Uf[j, col] = h / denom
                    continue
                msel = tuple(int(m[q]) for q in sel)
                resonant = (
                    policy == "always"
                    or abs(denom) < EXACT_RESONANCE
                    or (policy == "near" and margin <= tol)
                )
                if resonant:
                    Sf[j, ts.lookup[msel]] = -h
                else:
                    Uf[j, col] = h / denom
                choices.append({"j": int(k), "m": [int(v) for v in msel],
                                "choice": "resonant" if resonant else "graph", "margin": float(margin)})
    U = PolyMap._from_full(n, Uf, alpha, spec.pairs)
    S = PolyMap._from_full(nu, Sf, alpha)
    return U, S, choices


def solve_isf_series_map(F: PolyMap, spec: SpectralData, alpha: int, tol: float = 0.1,
                         policy: str = "near", sigma=None) -> ExpandedFoliation:
    """Expand the ISF of the map F about the origin to order alpha.

    ``policy`` is "near" (resonant form when the relative divisor is <= tol),
    "never" (graph form unless exactly resonant) or "always".
    """
    U, S, ch = _solve(F, spec, alpha, tol, MAP, policy)
    return ExpandedFoliation(U, S, MAP, alpha, spec, F, sigma, ch)


def solve_isf_series_vf(G: PolyMap, spec: SpectralData, alpha: int, tol: float = 0.1,
                        policy: str = "near", sigma=None) -> ExpandedFoliation:
    """Expand the ISF of the vector field G about the origin to order alpha."""
    U, S, ch = _solve(G, spec, alpha, tol, VECTOR_FIELD, policy)
    return ExpandedFoliation(U, S, VECTOR_FIELD, alpha, spec, G, sigma, ch)


def expand(model: PolyMap, selection_mode: int, alpha: int, kind=VECTOR_FIELD, tol=0.1,
           policy="near", T=None) -> Foliation:
    """Convenience: eigen-analysis, expansion and realification in one go."""
    spec = eig_full(poly_jacobian0(model), kind=kind, T=T)
    spec = spec.select(spec.pair_selection(selection_mode))
    solver = solve_isf_series_map if kind == MAP else solve_isf_series_vf
    return realify_foliation(solver(model, spec, alpha, tol, policy))


def _real_frame(spec):
    """Complex selected coordinates as a linear function of real ones."""
    sel = list(spec.selection)
    pairs = {p[0]: p[1] for p in spec.pairs}
    second = {p[1] for p in spec.pairs}
    nu = len(sel)
    L = np.zeros((nu, nu), dtype=complex)
    layout = []
    j = 0
    while j < nu:
        k = sel[j]
        if k in pairs:
            if j + 1 >= nu or sel[j + 1] != pairs[k]:
                raise PairingError(f"selection {sel} splits the conjugate pair {k, pairs[k]}")
            L[j, j], L[j, j + 1] = 1.0, 1j
            L[j + 1, j], L[j + 1, j + 1] = 1.0, -1j
            layout.append(("pair", j))
            j += 2
        elif k in second:
            raise PairingError(f"selection {sel} splits a conjugate pair at index {k}")
        else:
            L[j, j] = 1.0
            layout.append(("real", j))
            j += 1
    return L, layout


def _realify_rows(P, layout, tol):
    rows = []
    scale = max(1.0, float(np.max(np.abs(P.coeffs))))
    for what, j in layout:
        c = P.coeffs[j]
        if what == "pair":
            if np.max(np.abs(P.coeffs[j + 1] - np.conj(c))) > tol * scale:
                raise PairingError(f"outputs {j} and {j + 1} are not complex conjugates")
            rows.extend([c.real, c.imag])
        else:
            if np.max(np.abs(c.imag)) > tol * scale:
                raise PairingError(f"output {j} of a real mode has imaginary coefficients")
            rows.append(c.real)
    return PolyMap(P.n, len(rows), P.alpha, np.array(rows))


def realify_foliation(ef: ExpandedFoliation, pairing_tol=1e-8) -> Foliation:
    """Real submersion on the original coordinates and the real conjugate map."""
    spec = ef.spec
    L, layout = _real_frame(spec)
    U_orig = poly_substitute_linear(ef.U, spec.left, ef.alpha)
    U = _realify_rows(U_orig, layout, pairing_tol)
    S_c = poly_substitute_linear(ef.S, L, ef.alpha)
    S = _realify_rows(S_c, layout, pairing_tol)
    kind = "map" if ef.mode == MAP else "vector_field"
    nf = None
    if len(layout) == 1 and layout[0][0] == "pair":
        nf = _normal_form_from(ef, spec.T)
    return Foliation(
        U=U, S=S, kind=kind, T=spec.T, sigma=ef.sigma, provenance="expanded",
        selection=tuple(spec.selection), eigenvalues=spec.eigenvalues.copy(), normal_form=nf,
        meta={"alpha": ef.alpha, "resonance_choices": ef.resonance_choices},
    )


def _normal_form_from(ef, T, tol=1e-10):
    """Radial normal form coefficients a_p of z^(p+1) conj(z)^p, if S has that shape."""
    S = ef.S
    terms = S.terms()
    a = []
    for p in range(ef.alpha // 2 + 1):
        m = (p + 1, p)
        a.append(complex(S.coefficient(m)[0]) if 2 * p + 1 <= ef.alpha else 0j)
    scale = max(1.0, float(np.max(np.abs(S.coeffs))))
    for m, c in terms.items():
        if m[0] - m[1] != 1 and abs(c[0]) > tol * scale:
            return None
    a = np.array(a)
    return NormalFormParams(a.real, a.imag, ef.alpha, T, DISCRETE if ef.mode == MAP else CONTINUOUS)
