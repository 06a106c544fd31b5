import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import LAMBDA_1, LAMBDA_3
from isf.spectral import (
    MAP,
    VECTOR_FIELD,
    SpectralData,
    SpectralError,
    check_external_nonresonance,
    eig_full,
    internal_resonances,
    spectral_quotient,
)


def test_diagonal_map():
    s = eig_full(np.diag([0.5, 0.25]))
    assert np.allclose(s.eigenvalues, [0.5, 0.25])
    assert np.allclose(np.abs(s.right), np.eye(2))


def test_shaw_pierre_eigenvalues(sp_field):
    s = eig_full(sp_field.jacobian0(), kind=VECTOR_FIELD)
    expected = [LAMBDA_1, LAMBDA_1.conjugate(), LAMBDA_3, LAMBDA_3.conjugate()]
    assert np.max(np.abs(s.eigenvalues - expected)) <= 1e-10
    assert s.pairs == ((0, 1), (2, 3))


def test_random_matrix_residuals(rng):
    A = rng.standard_normal((4, 4))
    s = eig_full(A)
    for k in range(4):
        v = s.right[:, k]
        w = s.left[k]
        assert np.linalg.norm(A @ v - s.eigenvalues[k] * v) <= 1e-10 * np.linalg.norm(A)
        assert np.linalg.norm(w @ A - s.eigenvalues[k] * w) <= 1e-10 * np.linalg.norm(A)
        assert abs(w @ v - 1) <= 1e-12
    assert np.all(np.diff(np.abs(s.eigenvalues)) <= 1e-12)


def test_conjugate_pairs_adjacent(rng):
    A = rng.standard_normal((6, 6))
    s = eig_full(A)
    for i, j in s.pairs:
        assert j == i + 1
        assert s.eigenvalues[i].imag > 0
        assert np.allclose(s.right[:, j], np.conj(s.right[:, i]))


def test_defective_matrix_rejected():
    with pytest.raises(SpectralError):
        eig_full(np.array([[0.5, 1.0], [0.0, 0.5]]))


def test_quotient_shaw_pierre(sp_field):
    s = eig_full(sp_field.jacobian0(), kind=VECTOR_FIELD)
    assert spectral_quotient(s.select((0, 1))) == pytest.approx(1.0, abs=1e-12)
    assert spectral_quotient(s.select((2, 3))) == pytest.approx(3.0, abs=1e-10)


def test_quotient_examples():
    s = SpectralData.from_eigenvalues([-1.0, -4.0], (0,), VECTOR_FIELD)
    assert spectral_quotient(s) == 1.0
    s = SpectralData.from_eigenvalues([-4.0, -1.0], (0,), VECTOR_FIELD)
    assert spectral_quotient(s) == 4.0


def test_quotient_needs_contraction():
    with pytest.raises(SpectralError):
        spectral_quotient(SpectralData.from_eigenvalues([1.2, 0.5], (0,), MAP))


@given(st.permutations([0.3, 0.2, 0.1]))
def test_quotient_invariant_under_relabeling(rest):
    s = SpectralData.from_eigenvalues([0.5] + list(rest), (0,), MAP)
    base = SpectralData.from_eigenvalues([0.5, 0.3, 0.2, 0.1], (0,), MAP)
    assert spectral_quotient(s) == spectral_quotient(base)


@settings(max_examples=30)
@given(st.lists(st.floats(0.05, 0.95), min_size=2, max_size=5))
def test_quotient_of_slowest_is_one(mods):
    ev = sorted(mods, reverse=True)
    s = SpectralData.from_eigenvalues(ev, (0,), MAP)
    assert spectral_quotient(s) == 1.0


def test_nonresonance_examples():
    rep = check_external_nonresonance(SpectralData.from_eigenvalues([0.9, 0.8], (0,)), 3)
    assert rep["violations"] == []
    rep = check_external_nonresonance(SpectralData.from_eigenvalues([0.25, 0.5], (0,)), 3)
    assert [(v["j"], tuple(v["m"])) for v in rep["violations"]] == [(0, (0, 2))]
    lam = [-1 + 1j, -1 - 1j, -2 + 2j, -2 - 2j]
    rep = check_external_nonresonance(SpectralData.from_eigenvalues(lam, (0, 1), VECTOR_FIELD), 3)
    hits = {(v["j"], tuple(v["m"])) for v in rep["violations"]}
    assert (0, (1, 1, 0, 0)) not in hits


@settings(max_examples=20)
@given(st.floats(0.2, 3.0))
def test_exact_violations_survive_powers(t):
    ev = np.array([0.25, 0.5])
    a = check_external_nonresonance(SpectralData.from_eigenvalues(ev, (0,)), 4)
    b = check_external_nonresonance(SpectralData.from_eigenvalues(ev ** t, (0,)), 4)
    key = lambda rep: sorted((v["j"], tuple(v["m"])) for v in rep["violations"])  # noqa: E731
    assert key(a) == key(b)


def test_internal_resonances_unit_circle():
    mu = np.exp(1j * 0.7)
    s = SpectralData.from_eigenvalues([mu, np.conj(mu)], (0, 1))
    hits = set(internal_resonances(s, 6, tol=1e-12))
    for p in (1, 2):
        assert (0, (p + 1, p)) in hits
        assert (1, (p, p + 1)) in hits


def test_internal_resonances_examples():
    s = SpectralData.from_eigenvalues([0.9, 0.8], (0, 1))
    assert internal_resonances(s, 4, tol=0.0) == []
    mu = 0.99 * np.exp(1j * np.pi / 5)
    s = SpectralData.from_eigenvalues([mu, np.conj(mu)], (0, 1))
    hits = internal_resonances(s, 4, tol=0.1)
    assert (0, (2, 1)) in hits and (1, (1, 2)) in hits
