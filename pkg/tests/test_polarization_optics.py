import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import unitary_group

from fockforge.fock_core import FockError, from_labels, induced_unitary, inner, number_state, sector_unitary
from fockforge.polarization_optics import (
    ModeTransform,
    PlateAngles,
    WavePlateSetting,
    compose,
    equal_up_to_phase,
    jones_hwp,
    jones_qwp,
    phase_distance,
    solve_angles_for_target,
    su2_from_angles,
)

angles = st.floats(min_value=-20.0, max_value=20.0, allow_nan=False)
seeds = st.integers(min_value=0, max_value=2**31)


def random_transform(seed):
    return ModeTransform(unitary_group.rvs(2, random_state=seed))


def test_su2_matrix_form():
    phi, theta = 0.3, 1.1
    u = su2_from_angles(WavePlateSetting(phi, theta)).matrix
    c, s = math.cos(theta), math.sin(theta)
    expected = np.array([[c, np.exp(1j * phi) * s], [-np.exp(-1j * phi) * s, c]])
    np.testing.assert_allclose(u, expected, atol=1e-15)


def test_theta_zero_is_identity():
    for phi in (0.0, 1.0, 4.0):
        np.testing.assert_allclose(su2_from_angles(WavePlateSetting(phi, 0.0)).matrix, np.eye(2), atol=1e-15)


def test_gadget_makes_product_state():
    s2 = 1 / math.sqrt(2)
    phi2 = from_labels({(2, 0): s2, (0, 2): s2}, 2)
    out = induced_unitary(su2_from_angles(WavePlateSetting(math.pi / 2, math.pi / 4)), phi2)
    assert abs(inner(number_state(1, 1, 2), out)) == pytest.approx(1.0, abs=1e-10)


def test_setting_is_canonical():
    s = WavePlateSetting(-0.5, 4.0)
    assert 0 <= s.phi < 2 * math.pi and 0 <= s.theta < math.pi
    assert WavePlateSetting.from_json(s.to_json()) == s


def test_mode_transform_validation():
    with pytest.raises(FockError):
        ModeTransform(np.array([[1, 1], [0, 1]]))
    with pytest.raises(FockError):
        ModeTransform(np.eye(3))


@settings(max_examples=100, deadline=None)
@given(angles, angles)
def test_su2_is_unitary_with_real_diagonal(phi, theta):
    u = su2_from_angles(WavePlateSetting(phi, theta)).matrix
    np.testing.assert_allclose(u @ u.conj().T, np.eye(2), atol=1e-12)
    assert abs(abs(np.linalg.det(u)) - 1) < 1e-12
    assert abs(u[0, 0].imag) < 1e-15 and abs(u[1, 1].imag) < 1e-15
    assert u[0, 0].real == pytest.approx(math.cos(WavePlateSetting(phi, theta).theta), abs=1e-12)


def test_wave_plate_identities():
    assert equal_up_to_phase(jones_hwp(0.0), ModeTransform(np.diag([1, -1])))
    out = jones_hwp(math.pi / 8).matrix @ np.array([1, 0])
    assert abs(np.vdot(np.array([1, 1]) / math.sqrt(2), out)) == pytest.approx(1.0)
    for a in (0.0, 0.4, 2.1):
        assert equal_up_to_phase(jones_qwp(a) @ jones_qwp(a), jones_hwp(a))


def test_compose_order_and_inverse():
    u, v = random_transform(1), random_transform(2)
    np.testing.assert_allclose(compose(u, v).matrix, v.matrix @ u.matrix)
    np.testing.assert_allclose(compose(ModeTransform.identity(), u).matrix, u.matrix)
    np.testing.assert_allclose(compose(u, u.inverse()).matrix, np.eye(2), atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_compose_associative(seed):
    a, b, c = (random_transform(seed + i) for i in range(3))
    np.testing.assert_allclose(
        compose(compose(a, b), c).matrix, compose(a, compose(b, c)).matrix, atol=1e-12
    )


@settings(max_examples=20, deadline=None)
@given(seeds, st.integers(min_value=0, max_value=8))
def test_lift_of_any_transform_is_unitary(seed, total):
    lift = sector_unitary(random_transform(seed), total)
    np.testing.assert_allclose(lift @ lift.conj().T, np.eye(total + 1), atol=1e-10)


def test_phase_distance_ignores_global_phase():
    u = random_transform(5)
    assert phase_distance(u, ModeTransform(np.exp(1.3j) * u.matrix)) < 1e-14
    assert phase_distance(u, ModeTransform.identity()) > 1e-3


def test_solve_identity_and_gadget():
    ident = solve_angles_for_target(ModeTransform.identity())
    assert isinstance(ident, PlateAngles)
    assert phase_distance(ident.transform(), ModeTransform.identity()) < 1e-9
    target = su2_from_angles(WavePlateSetting(math.pi / 2, math.pi / 4))
    assert phase_distance(solve_angles_for_target(target).transform(), target) < 1e-9


def test_solve_hundred_random_targets():
    start = time.perf_counter()
    for seed in range(100):
        target = random_transform(1000 + seed)
        assert phase_distance(solve_angles_for_target(target).transform(), target) < 1e-9
    assert time.perf_counter() - start < 30


def test_jittered_angles_are_reproducible():
    plates = PlateAngles(0.1, 0.2, 0.3)
    a = plates.jittered(np.random.default_rng(4), 0.01)
    b = plates.jittered(np.random.default_rng(4), 0.01)
    assert a == b != plates
    assert plates.jittered(np.random.default_rng(4), 0.0) == plates
