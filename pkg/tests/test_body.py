import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import newton_euler_wrench, random_body
from vdc_impedance.body import (
    InconsistentParametersError,
    InertialParams,
    body_wrench,
    coriolis_matrix,
    dyn_terms,
    f_inv,
    f_map,
    gravity_wrench,
    inertia_from_vech,
    is_consistent,
    mass_matrix,
    regressor,
    vech,
)

seeds = st.integers(0, 2**32 - 1)
phi_vec = arrays(float, 10, elements=st.floats(-5, 5, allow_nan=False, allow_infinity=False))

SPHERE = InertialParams(1.0, np.zeros(3), 0.4 * np.eye(3))


# ------------------------------------------------------------------ pseudo-inertia map


def test_unit_sphere_pseudo_inertia():
    assert np.allclose(f_map(SPHERE), np.diag([0.2, 0.2, 0.2, 1.0]), atol=1e-15)


def test_zero_parameters_map_to_zero():
    assert np.array_equal(f_map(np.zeros(10)), np.zeros((4, 4)))


def test_inverse_of_identity():
    p = InertialParams.from_phi(f_inv(np.eye(4)))
    assert p.mass == 1.0
    assert np.array_equal(p.first_moment, np.zeros(3))
    assert np.allclose(p.inertia, 2 * np.eye(3), atol=0)


def test_inverse_of_sphere_pseudo_inertia():
    assert np.allclose(f_inv(np.diag([0.2, 0.2, 0.2, 1.0])), SPHERE.phi, atol=1e-15)


def test_block_structure():
    rng = np.random.default_rng(0)
    p = random_body(rng)[0]
    L = f_map(p)
    assert np.allclose(L[:3, :3], 0.5 * np.trace(p.inertia) * np.eye(3) - p.inertia)
    assert np.array_equal(L[:3, 3], p.first_moment)
    assert np.array_equal(L[3, :3], p.first_moment)
    assert L[3, 3] == p.mass
    assert np.array_equal(L, L.T)


@given(phi_vec)
def test_round_trip(phi):
    assert np.abs(f_inv(f_map(phi)) - phi).max() < 1e-12


@given(phi_vec, phi_vec, st.floats(-3, 3), st.floats(-3, 3))
def test_f_map_is_linear(p1, p2, a, b):
    assert np.allclose(f_map(a * p1 + b * p2), a * f_map(p1) + b * f_map(p2), atol=1e-12)


def test_f_inv_rejects_asymmetric_input():
    L = np.eye(4)
    L[0, 1] = 0.1
    with pytest.raises(ValueError):
        f_inv(L)


def test_vech_ordering_round_trip():
    I = np.array([[1.0, 4.0, 5.0], [4.0, 2.0, 6.0], [5.0, 6.0, 3.0]])
    assert np.array_equal(vech(I), [1, 2, 3, 4, 5, 6])
    assert np.array_equal(inertia_from_vech(vech(I)), I)
    assert np.array_equal(InertialParams.from_phi(np.arange(10.0)).phi, np.arange(10.0))


def test_from_com_parallel_axis():
    p = InertialParams.from_com(2.0, [0.5, 0.0, 0.0], np.diag([0.1, 0.2, 0.3]))
    assert np.allclose(p.first_moment, [1.0, 0.0, 0.0])
    assert np.allclose(p.inertia, np.diag([0.1, 0.2 + 0.5, 0.3 + 0.5]))


def test_asymmetric_inertia_rejected():
    with pytest.raises(ValueError):
        InertialParams(1.0, np.zeros(3), [[1, 0.1, 0], [0, 1, 0], [0, 0, 1]])


# ------------------------------------------------------------------ consistency


@given(seeds)
def test_consistency_matches_eigenvalues_and_dyn_terms(seed):
    rng = np.random.default_rng(seed)
    phi = rng.normal(size=10)
    phi[0] = abs(phi[0])
    positive = bool(np.linalg.eigvalsh(f_map(phi)).min() > 0)
    assert is_consistent(phi) == positive
    if positive:
        dyn_terms(phi, np.zeros(6), np.zeros(3))
    else:
        with pytest.raises(InconsistentParametersError):
            dyn_terms(phi, np.zeros(6), np.zeros(3))


def test_random_physical_bodies_are_consistent():
    rng = np.random.default_rng(1)
    for _ in range(50):
        assert random_body(rng)[0].is_consistent()


def test_negative_mass_rejected():
    phi = SPHERE.phi.copy()
    phi[0] = -1.0
    with pytest.raises(InconsistentParametersError):
        dyn_terms(phi, np.zeros(6), np.zeros(3))


# ------------------------------------------------------------------ equations of motion


def test_point_mass_at_rest_carries_only_gravity():
    p = InertialParams(2.0, np.zeros(3), np.zeros((3, 3)) + 1e-9 * np.eye(3))
    g = np.array([0.0, 0.0, -9.81])
    terms = dyn_terms(p, np.zeros(6), g)
    w = terms.wrench(np.zeros(6), np.zeros(6))
    assert np.allclose(w, [0, 0, 2 * 9.81, 0, 0, 0], atol=1e-12)


def test_coriolis_term_vanishes_at_rest():
    rng = np.random.default_rng(2)
    p = random_body(rng)[0]
    terms = dyn_terms(p, np.zeros(6), np.zeros(3))
    assert np.array_equal(terms.C @ np.zeros(6), np.zeros(6))
    assert np.array_equal(terms.C, np.zeros((6, 6)))


@given(seeds)
def test_dyn_terms_match_newton_euler(seed):
    rng = np.random.default_rng(seed)
    p, m, c, Ic = random_body(rng)
    V, Vdot, g = rng.normal(size=6), rng.normal(size=6), rng.normal(size=3) * 9.81
    terms = dyn_terms(p, V, g)
    assert np.abs(terms.wrench(Vdot, V) - newton_euler_wrench(m, c, Ic, V, Vdot, g)).max() < 1e-10


@given(seeds)
def test_mass_matrix_positive_and_coriolis_skew(seed):
    rng = np.random.default_rng(seed)
    p = random_body(rng)[0]
    M = mass_matrix(p.phi)
    C = coriolis_matrix(p.phi, rng.normal(size=6))
    assert np.array_equal(M, M.T)
    assert np.linalg.eigvalsh(M).min() > 0
    # body-frame M is constant, so dM/dt - 2C = -2C must be antisymmetric
    assert np.abs(C + C.T).max() < 1e-12


def test_regressor_at_rest_gives_gravity_wrench():
    rng = np.random.default_rng(3)
    g = rng.normal(size=3)
    Y = regressor(np.zeros(6), np.zeros(6), np.zeros(6), g)
    for _ in range(10):
        phi = rng.normal(size=10)
        assert np.allclose(Y @ phi, gravity_wrench(phi, g), atol=1e-12)


@given(seeds)
def test_regressor_identity_with_required_velocity(seed):
    rng = np.random.default_rng(seed)
    phi = rng.normal(size=10)
    dVr, Vr, V, g = rng.normal(size=6), rng.normal(size=6), rng.normal(size=6), rng.normal(size=3)
    Y = regressor(dVr, Vr, V, g)
    expected = mass_matrix(phi) @ dVr + coriolis_matrix(phi, V) @ Vr + gravity_wrench(phi, g)
    assert np.abs(Y @ phi - expected).max() < 1e-10
    assert np.abs(body_wrench(phi, dVr, Vr, V, g) - expected).max() < 1e-10


@given(seeds)
def test_regressor_linear_in_parameters(seed):
    rng = np.random.default_rng(seed)
    Y = regressor(rng.normal(size=6), rng.normal(size=6), rng.normal(size=6), rng.normal(size=3))
    p1, p2 = rng.normal(size=10), rng.normal(size=10)
    assert np.allclose(Y @ (p1 + p2), Y @ p1 + Y @ p2, atol=1e-12)


def test_regressor_broadcasts_over_batches():
    rng = np.random.default_rng(4)
    dV, Vr, V = rng.normal(size=(5, 6)), rng.normal(size=(5, 6)), rng.normal(size=(5, 6))
    g = rng.normal(size=(5, 3))
    Y = regressor(dV, Vr, V, g)
    for k in range(5):
        assert np.allclose(Y[k], regressor(dV[k], Vr[k], V[k], g[k]), atol=0)
