import numpy as np
import pytest

from conftest import LAMBDA_1
from mpcheck import foliation_residual_slope
from isf.expand import (
    PairingError,
    ResonanceError,
    complexify_model,
    expand,
    realify_foliation,
    solve_isf_series_map,
    solve_isf_series_vf,
)
from isf.polyalg import PolyMap, poly_jacobian0, poly_substitute_linear
from isf.spectral import MAP, VECTOR_FIELD, eig_full


def nonlinear_max(P):
    return float(np.max(np.abs(P.coeffs[:, P.n:]))) if P.coeffs.shape[1] > P.n else 0.0


def test_complexify_diagonal_model():
    F = PolyMap.from_terms(2, 2, 2, {(1, 0): [0.5, 0.0], (0, 1): [0.0, 0.25], (0, 2): [1.0, 0.0]})
    s = eig_full(poly_jacobian0(F))
    Fc = complexify_model(F, s)
    assert np.allclose(Fc.coeffs, F.coeffs.astype(complex), atol=1e-15)


def test_complexify_rotation():
    rho, th = 0.9, 0.4
    A = rho * np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    s = eig_full(A)
    J = poly_jacobian0(complexify_model(PolyMap.linear(A, 3), s))
    assert np.allclose(J, np.diag([rho * np.exp(1j * th), rho * np.exp(-1j * th)]), atol=1e-14)


def test_complexify_shaw_pierre_diagonal(sp_field):
    s = eig_full(sp_field.jacobian0(), kind=VECTOR_FIELD)
    J = poly_jacobian0(complexify_model(sp_field, s))
    assert np.max(np.abs(J - np.diag(s.eigenvalues))) <= 1e-10


def test_uncoupled_map_gives_coordinate_submersion():
    F = PolyMap.linear(np.diag([np.exp(-2.0), np.exp(-3.0)]), 7)
    fol = expand(F, 0, 7, kind=MAP)
    assert nonlinear_max(fol.U) <= 1e-12
    assert np.allclose(fol.U.jacobian0(), [[1.0, 0.0]])


def test_uncoupled_field_gives_coordinate_submersion():
    G = PolyMap.linear(np.diag([-2.0, -3.0]), 7)
    fol = expand(G, 0, 7)
    assert nonlinear_max(fol.U) <= 1e-12
    assert np.allclose(fol.U.jacobian0(), [[1.0, 0.0]])


def test_hand_solved_map():
    # U(F) = S(U) with U = x + c y^2: 1 + c/16 = c/2, so c = 16/7
    F = PolyMap.from_terms(2, 2, 2, {(1, 0): [0.5, 0.0], (0, 1): [0.0, 0.25], (0, 2): [1.0, 0.0]})
    fol = expand(F, 0, 2, kind=MAP)
    assert fol.U.coefficient((0, 2))[0] == pytest.approx(16 / 7, rel=1e-13)
    assert abs(fol.U.coefficient((2, 0))[0]) <= 1e-14
    assert abs(fol.U.coefficient((1, 1))[0]) <= 1e-14
    assert np.allclose(fol.S.coeffs, [[0.5, 0.0]], atol=1e-15)


def test_linear_model_has_no_nonlinear_terms(rng):
    A = rng.standard_normal((4, 4))
    A = 0.5 * A / np.max(np.abs(np.linalg.eigvals(A)))
    fol = expand(PolyMap.linear(A, 5), 0, 5, kind=MAP)
    assert nonlinear_max(fol.U) <= 1e-12
    assert nonlinear_max(fol.S) <= 1e-12


def test_ratio_three_halves_stays_coordinate():
    # the slow rate is 2; the submersion x is only one of a family of C^1 solutions,
    # but no polynomial term can express the others
    G = PolyMap.linear(np.diag([-3.0, -2.0]), 5)
    s = eig_full(poly_jacobian0(G), kind=VECTOR_FIELD)
    k = int(np.argmin(np.abs(s.eigenvalues + 3.0)))
    fol = realify_foliation(solve_isf_series_vf(G, s.select((k,)), 5))
    assert nonlinear_max(fol.U) <= 1e-12
    assert np.allclose(np.abs(fol.U.jacobian0()), [[1.0, 0.0]])


def test_exact_external_resonance_raises():
    F = PolyMap.linear(np.diag([0.5, 0.25]), 3)
    s = eig_full(poly_jacobian0(F))
    k = int(np.argmin(np.abs(s.eigenvalues - 0.25)))
    with pytest.raises(ResonanceError) as err:
        solve_isf_series_map(F, s.select((k,)), 3)
    assert err.value.j == k
    assert sum(err.value.m) == 2


@pytest.mark.parametrize("alpha", [3, 5])
def test_shaw_pierre_residual_on_sphere(sp_field, alpha):
    fol = expand(sp_field, 0, alpha)
    rng = np.random.default_rng(0)
    X = rng.standard_normal((50, 4))
    X = 1e-2 * X / np.linalg.norm(X, axis=1, keepdims=True)
    assert np.max(np.linalg.norm(fol.invariance_residual(sp_field, X), axis=1)) <= 1e-7


@pytest.mark.parametrize("alpha", [3, 5])
def test_residual_order_in_eigen_coordinates(sp_field, alpha):
    s = eig_full(sp_field.jacobian0(), kind=VECTOR_FIELD)
    ef = solve_isf_series_vf(sp_field, s.select((0, 1)), alpha)
    Gc = complexify_model(sp_field, s, alpha)
    slope, _ = foliation_residual_slope(ef.U, ef.S, Gc, ef.mode, np.logspace(-4, -2, 5),
                                        np.random.default_rng(1), complex_=True)
    assert slope >= alpha + 0.9


def test_residual_order_in_state_coordinates(sp_field):
    # order 3 stays above the double-precision floor of the linear coefficients
    fol = expand(sp_field, 0, 3)
    slope, _ = foliation_residual_slope(fol.U, fol.S, sp_field, "vector_field",
                                        np.logspace(-4, -2, 5), np.random.default_rng(2))
    assert slope >= 3.9


def test_linear_normalisation_in_eigen_coordinates(sp_field):
    s = eig_full(sp_field.jacobian0(), kind=VECTOR_FIELD)
    ef = solve_isf_series_vf(sp_field, s.select((0, 1)), 3)
    assert np.array_equal(poly_jacobian0(ef.U), np.eye(4, dtype=complex)[:2])
    assert np.allclose(poly_jacobian0(ef.S), np.diag(s.eigenvalues[:2]), atol=0)


def test_resonant_policy_puts_resonant_terms_in_conjugate_map(sp_field):
    s = eig_full(sp_field.jacobian0(), kind=VECTOR_FIELD).select((0, 1))
    ef = solve_isf_series_vf(sp_field, s, 5, policy="near")
    resonant = [tuple(c["m"]) for c in ef.resonance_choices if c["choice"] == "resonant"]
    assert (2, 1) in resonant and (3, 2) in resonant
    for m in ef.S.terms(tol=1e-14):
        assert sum(m) == 1 or m[0] - m[1] == 1 or m[1] - m[0] == 1
    for c in ef.resonance_choices:
        if c["choice"] == "resonant":
            m = tuple(c["m"]) + (0, 0)
            assert abs(ef.U.coefficient(m)[s.selection.index(c["j"])]) == 0
    graph = solve_isf_series_vf(sp_field, s, 5, policy="never")
    assert nonlinear_max(graph.S) <= 1e-14


def test_realify_linear_rotation():
    a, b = 0.6, 0.3
    A = np.array([[a, -b], [b, a]])
    fol = expand(PolyMap.linear(A, 3), 0, 3, kind=MAP)
    assert np.allclose(fol.S.jacobian0(), A, atol=1e-14)


def test_realified_rows_are_left_eigenvector(sp_field):
    s = eig_full(sp_field.jacobian0(), kind=VECTOR_FIELD)
    fol = expand(sp_field, 0, 3)
    w = s.left[0]
    assert np.allclose(fol.U.jacobian0(), np.vstack([w.real, w.imag]), atol=1e-14)


def test_realified_values_are_real(sp_field, rng):
    s = eig_full(sp_field.jacobian0(), kind=VECTOR_FIELD).select((0, 1))
    ef = solve_isf_series_vf(sp_field, s, 5)
    Uc = poly_substitute_linear(ef.U, s.left, 5)
    X = rng.uniform(-0.1, 0.1, (100, 4))
    z = Uc(X)
    assert np.max(np.abs(z[:, 1] - np.conj(z[:, 0]))) <= 1e-12
    fol = realify_foliation(ef)
    assert fol.U.coeffs.dtype == float
    assert np.allclose(fol.U(X), np.column_stack([z[:, 0].real, z[:, 0].imag]), atol=1e-12)


def test_split_pair_is_rejected(sp_field):
    s = eig_full(sp_field.jacobian0(), kind=VECTOR_FIELD).select((0,))
    with pytest.raises(PairingError):
        realify_foliation(solve_isf_series_vf(sp_field, s, 3))


def test_shaw_pierre_normal_form_hardens(sp_field):
    fol = expand(sp_field, 0, 5)
    nf = fol.normal_form
    assert nf is not None
    assert nf.b[0] == pytest.approx(-0.0015, abs=1e-12)
    assert nf.c[0] == pytest.approx(LAMBDA_1.imag, abs=1e-12)
    assert nf.c[1] > 0


def test_serialisation_keeps_choices(sp_field):
    s = eig_full(sp_field.jacobian0(), kind=VECTOR_FIELD).select((0, 1))
    d = solve_isf_series_vf(sp_field, s, 3).to_dict()
    assert d["mode"] == VECTOR_FIELD
    assert {"j", "m", "choice", "margin"} <= set(d["resonance_choices"][0])
