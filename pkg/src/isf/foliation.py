"""Foliation containers shared by the expansion, fitting and analysis code."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from math import comb

import numpy as np

from isf.polyalg import PolyMap, multiindex_set

DISCRETE = "discrete"
CONTINUOUS = "continuous"


@dataclass
class NormalFormParams:
    """Radially symmetric conjugate dynamics of a codimension-two foliation.

    With rho = z1^2 + z2^2, f_r(rho) = sum b_p rho^p and f_i(rho) = sum c_p rho^p,
    the map (or vector field for ``time="continuous"``) reads
    S(z) = (z1 f_r - z2 f_i, z1 f_i + z2 f_r).
    """

    b: np.ndarray
    c: np.ndarray
    alpha: int
    T: float | None = None
    time: str = DISCRETE

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=float)
        self.c = np.asarray(self.c, dtype=float)
        if self.b.shape != self.c.shape:
            raise ValueError("b and c need the same length")

    @classmethod
    def linear(cls, mu, alpha, T=None, time=DISCRETE):
        P = alpha // 2 + 1
        b = np.zeros(P)
        c = np.zeros(P)
        b[0], c[0] = complex(mu).real, complex(mu).imag
        return cls(b, c, alpha, T, time)

    @property
    def theta(self):
        return np.concatenate([self.b, self.c])

    @property
    def mu(self):
        return complex(self.b[0], self.c[0])

    def radial(self, rho):
        """(f_r(rho), f_i(rho)) for an array of squared radii."""
        rho = np.asarray(rho, dtype=float)
        return np.polynomial.polynomial.polyval(rho, self.b), np.polynomial.polynomial.polyval(rho, self.c)

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        single = z.ndim == 1
        Z = np.atleast_2d(z)
        fr, fi = self.radial(Z[:, 0] ** 2 + Z[:, 1] ** 2)
        out = np.column_stack([Z[:, 0] * fr - Z[:, 1] * fi, Z[:, 0] * fi + Z[:, 1] * fr])
        return out[0] if single else out

    def to_polymap(self) -> PolyMap:
        """Render as a PolyMap in the binomial coefficient layout of the normal form."""
        iset = multiindex_set(2, self.alpha)
        coeffs = np.zeros((2, len(iset)))
        for k in range(len(self.b)):
            for p in range(k + 1):
                w = comb(k, p)
                m1 = (1 + 2 * p, 2 * (k - p))
                m2 = (2 * p, 1 + 2 * (k - p))
                if sum(m1) <= self.alpha:
                    coeffs[0, iset.position(m1)] += w * self.b[k]
                    coeffs[1, iset.position(m1)] += w * self.c[k]
                if sum(m2) <= self.alpha:
                    coeffs[0, iset.position(m2)] += -w * self.c[k]
                    coeffs[1, iset.position(m2)] += w * self.b[k]
        return PolyMap(2, 2, self.alpha, coeffs)

    def to_dict(self):
        return {"kind": "normal_form", "b": self.b.tolist(), "c": self.c.tolist(),
                "alpha": self.alpha, "T": self.T, "time": self.time}

    @classmethod
    def from_dict(cls, d):
        return cls(d["b"], d["c"], int(d["alpha"]), d.get("T"), d.get("time", DISCRETE))


@dataclass
class Foliation:
    """A real submersion U (n -> nu) with its conjugate dynamics S.

    ``S`` is either a PolyMap or NormalFormParams.  ``kind`` is "map" when S
    advances leaves by one sampling period and "vector_field" when S is the
    conjugate vector field R.
    """

    U: PolyMap
    S: object
    kind: str = "map"
    T: float | None = None
    sigma: float | None = None
    provenance: str = "expanded"
    selection: tuple = ()
    eigenvalues: np.ndarray | None = None
    normal_form: NormalFormParams | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.S, NormalFormParams) and self.normal_form is None:
            self.normal_form = self.S

    @property
    def n(self):
        return self.U.n

    @property
    def nu(self):
        return self.U.out

    @property
    def S_poly(self) -> PolyMap:
        return self.S.to_polymap() if isinstance(self.S, NormalFormParams) else self.S

    def conjugate(self, z):
        return self.S(z)

    def invariance_residual(self, model: PolyMap, x):
        """U(F(x)) - S(U(x)) for maps, DU(x) G(x) - R(U(x)) for vector fields."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.kind == "map":
            return self.U(model(x)) - self.S(self.U(x))
        J = self.U.jacobian(x)
        return np.einsum("Non,Nn->No", J, model(x)) - self.S(self.U(x))

    def to_dict(self):
        S = self.S.to_dict() if isinstance(self.S, NormalFormParams) else {"kind": "poly", **self.S.to_dict()}
        d = {
            "U": self.U.to_dict(),
            "S": S,
            "kind": self.kind,
            "T": self.T,
            "sigma": self.sigma,
            "provenance": self.provenance,
            "selection": list(self.selection),
            "meta": self.meta,
        }
        if self.eigenvalues is not None:
            d["eigenvalues"] = [[float(v.real), float(v.imag)] for v in self.eigenvalues]
        if self.normal_form is not None and not isinstance(self.S, NormalFormParams):
            d["normal_form"] = self.normal_form.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        Sd = d["S"]
        S = NormalFormParams.from_dict(Sd) if Sd["kind"] == "normal_form" else PolyMap.from_dict(Sd)
        ev = d.get("eigenvalues")
        nf = d.get("normal_form")
        return cls(
            U=PolyMap.from_dict(d["U"]),
            S=S,
            kind=d.get("kind", "map"),
            T=d.get("T"),
            sigma=d.get("sigma"),
            provenance=d.get("provenance", "expanded"),
            selection=tuple(d.get("selection", ())),
            eigenvalues=None if ev is None else np.array([complex(a, b) for a, b in ev]),
            normal_form=None if nf is None else NormalFormParams.from_dict(nf),
            meta=d.get("meta", {}),
        )


def save_foliations(path, foliations, extra=None):
    doc = {"foliations": [f.to_dict() for f in foliations]}
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_foliations(path):
    with open(path) as fh:
        doc = json.load(fh)
    return [Foliation.from_dict(d) for d in doc["foliations"]], doc
