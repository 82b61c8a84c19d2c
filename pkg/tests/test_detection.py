import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fockforge.detection import (
    IDEAL,
    ClickPattern,
    Curve,
    DetectionTree,
    DetectorModel,
    FitError,
    coincidence_probability,
    fanout_click_probs,
    fit_dip,
    fit_fringe,
    fit_lorentzian_peak,
    fringe_scan,
    hom_scan,
    hom_visibility,
    pattern_distribution,
    port_number_distribution,
    sample_counts,
    sample_poisson,
)
from fockforge.fock_core import DensityMatrix, from_labels, number_state, sector_unitary
from fockforge.polarization_optics import WavePlateSetting, su2_from_angles
from oracles import click_distribution

S2 = 1 / math.sqrt(2)
PHI2 = from_labels({(2, 0): S2, (0, 2): S2}, 4)
PHI4 = from_labels({(4, 0): math.sqrt(3 / 8), (2, 2): 0.5, (0, 4): math.sqrt(3 / 8)}, 4)


# -- detector model


def test_detector_model_validation_and_dark_rate():
    with pytest.raises(ValueError):
        DetectorModel(efficiency=1.2)
    m = DetectorModel.from_dark_rate(0.85, 100.0, 1e-9)
    assert m.dark_click_prob == pytest.approx(1e-7, rel=1e-6)
    assert m.click_prob(0) == pytest.approx(1e-7, rel=1e-6)
    assert IDEAL.click_prob(3) == 1.0


def test_tree_and_pattern_validation():
    with pytest.raises(ValueError):
        DetectionTree(0, 1)
    with pytest.raises(ValueError):
        ClickPattern(2, 1).check(DetectionTree(1, 3))
    with pytest.raises(ValueError):
        coincidence_probability(PHI2, WavePlateSetting(0, 0), DetectionTree(1, 1), target=ClickPattern(2, 0))


# -- port distributions


def test_port_distribution_examples():
    p = port_number_distribution(PHI2, WavePlateSetting(0, 0))
    assert p[2, 0] == pytest.approx(0.5) and p[0, 2] == pytest.approx(0.5)
    assert p[1, 1] == pytest.approx(0.0, abs=1e-15)
    p = port_number_distribution(PHI2, WavePlateSetting(math.pi / 2, math.pi / 4))
    assert p[1, 1] == pytest.approx(1.0, abs=1e-12)


def test_port_distribution_four_photons_brute_force():
    u = su2_from_angles(WavePlateSetting(0, math.pi / 4))
    p = port_number_distribution(PHI4, u)
    amps = sector_unitary(u, 4) @ PHI4.sector_amplitudes(4)
    np.testing.assert_allclose([p[k, 4 - k] for k in range(5)], np.abs(amps) ** 2, atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 2 * math.pi), st.floats(0, math.pi))
def test_port_distribution_sums_to_one(phi, theta):
    for state in (PHI2, PHI4, number_state(1, 3, 4)):
        assert port_number_distribution(state, WavePlateSetting(phi, theta)).sum() == pytest.approx(1.0, abs=1e-10)


def test_port_distribution_accepts_density_matrix():
    s = WavePlateSetting(0.3, 0.7)
    np.testing.assert_allclose(
        port_number_distribution(PHI4.to_density(), s), port_number_distribution(PHI4, s), atol=1e-14
    )


# -- fan-out


def test_fanout_examples():
    assert fanout_click_probs(2, 2)[2] == pytest.approx(0.5)
    assert fanout_click_probs(1, 2)[2] == 0.0
    assert fanout_click_probs(0, 3)[0] == 1.0
    with pytest.raises(ValueError):
        fanout_click_probs(1, 0)


@pytest.mark.parametrize("detectors", [1, 2, 3])
@pytest.mark.parametrize("n", range(7))
@pytest.mark.parametrize("model", [IDEAL, DetectorModel(0.85, 1e-3), DetectorModel(0.4, 0.05)])
def test_fanout_matches_bosonic_splitter_tree(n, detectors, model):
    expected = click_distribution(n, detectors, model.efficiency, model.dark_click_prob)
    np.testing.assert_allclose(fanout_click_probs(n, detectors, model), expected, atol=1e-10)


# -- coincidences


def test_coincidence_examples():
    tree = DetectionTree(1, 1)
    assert coincidence_probability(number_state(1, 1, 2), np.eye(2), tree) == pytest.approx(1.0)
    assert coincidence_probability(PHI2, WavePlateSetting(0, 0), tree) == pytest.approx(0.0, abs=1e-15)


def test_four_photon_fringe_has_fourth_harmonic():
    phis = np.linspace(0, 2 * math.pi, 64, endpoint=False)
    curve = fringe_scan(PHI4, phis, tree=DetectionTree(1, 3), target=ClickPattern(1, 3))
    np.testing.assert_allclose(curve, 0.1875 * (1 - np.cos(4 * phis)) * (2 / 9), atol=1e-12)
    spectrum = np.abs(np.fft.rfft(curve))
    assert spectrum[4] > 1e-3 and np.all(spectrum[[1, 2, 3, 5, 6]] < 1e-12)


def test_fringe_scan_is_2pi_periodic():
    phis = np.linspace(0, 2 * math.pi, 13)
    for state, pattern in ((PHI2, ClickPattern(1, 1)), (PHI4, ClickPattern(1, 3))):
        tree = DetectionTree(1, pattern.v_clicks)
        a = fringe_scan(state, phis, tree=tree, target=pattern)
        b = fringe_scan(state, phis + 2 * math.pi, tree=tree, target=pattern)
        np.testing.assert_allclose(a, b, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.floats(0, 2 * math.pi), st.floats(0, math.pi), st.integers(1, 3), st.integers(1, 3))
def test_patterns_sum_to_one_on_lossless_trees(phi, theta, h, v):
    p = pattern_distribution(PHI4, WavePlateSetting(phi, theta), DetectionTree(h, v))
    assert p.sum() == pytest.approx(1.0, abs=1e-10)


def test_net_excludes_dark_clicks():
    noisy = DetectorModel(0.85, 0.01)
    tree = DetectionTree(1, 1)
    raw = coincidence_probability(PHI2, WavePlateSetting(0, 0), tree, noisy)
    net = coincidence_probability(PHI2, WavePlateSetting(0, 0), tree, noisy, net=True)
    assert net == pytest.approx(0.0, abs=1e-15) and raw > 0


# -- sampling


def test_sample_counts_basics():
    assert sample_counts(0.0, 1e8, 1.0, seed=1) == 0
    a = sample_counts(np.full(5, 1e-6), 1e8, 1.0, seed=7)
    b = sample_counts(np.full(5, 1e-6), 1e8, 1.0, seed=7)
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        sample_counts(1.5, 1.0, 1.0, seed=0)


def test_sample_mean_within_three_sigma():
    mean = 2e-6 * 1e8 * 0.5
    draws = sample_counts(np.full(10_000, 2e-6), 1e8, 0.5, seed=3)
    assert abs(draws.mean() - mean) < 3 * math.sqrt(mean / draws.size)


def test_points_use_independent_streams():
    a = sample_poisson([10.0, 20.0, 30.0], 5)
    b = sample_poisson([10.0, 20.0, 99.0], 5)
    assert np.array_equal(a[:2], b[:2])


def test_curve_csv_round_trip():
    c = Curve.from_counts(np.array([0.0, 0.1, 1 / 3]), np.array([4, 0, 9]))
    back = Curve.from_csv(c.to_csv())
    assert np.array_equal(back.x, c.x) and np.array_equal(back.counts, c.counts)
    assert c.to_csv().splitlines()[0] == "x,counts,stderr"


# -- HOM


def test_hom_visibility_model():
    assert hom_visibility(1.0) == pytest.approx(1.0, abs=1e-14)
    assert hom_visibility(0.0) == pytest.approx(0.0, abs=1e-14)
    assert hom_visibility(0.97) == pytest.approx(0.97, abs=1e-12)


def test_hom_scan_limits():
    scan = hom_scan([0.0, 1e9], 1.0, 23.0, c_max=500.0)
    assert scan.expected[0] == pytest.approx(0.0, abs=1e-9)
    assert scan.expected[1] == pytest.approx(500.0)
    with pytest.raises(ValueError):
        hom_scan([0.0], 1.0, 0.0)


def test_hom_refit():
    delays = np.linspace(-60, 60, 41)
    scan = hom_scan(delays, 0.97, 23.0, c_max=1000.0, seed=11)
    fit = fit_dip(scan.curve.x, scan.curve.counts, scan.curve.stderr)
    assert fit.visibility == pytest.approx(0.97, abs=0.02)
    assert fit.width == pytest.approx(23.0, rel=0.1)


def test_dip_fit_needs_points():
    with pytest.raises(ValueError):
        fit_dip(np.arange(5), np.ones(5))


# -- fringe fits


def test_fit_fringe_exact_curves():
    phis = np.linspace(0, 2 * math.pi, 25, endpoint=False)
    fit = fit_fringe(phis, (1 + np.cos(2 * phis)) / 2)
    assert fit.visibility == pytest.approx(1.0, abs=1e-9)
    assert fit.frequency == pytest.approx(2.0, abs=1e-9)
    flat = fit_fringe(phis, np.full(phis.size, 3.0))
    assert flat.visibility == pytest.approx(0.0, abs=1e-12)


def test_fit_fringe_partial_visibility_and_json():
    phis = np.linspace(0, 2 * math.pi, 25, endpoint=False)
    counts = 100 * (1 + 0.6 * np.cos(4 * phis + 0.3))
    fit = fit_fringe(phis, counts)
    # (Cmax - Cmin) / Cmax with Cmax = 160, Cmin = 40
    assert fit.visibility == pytest.approx(0.75, abs=1e-9)
    assert fit.frequency == pytest.approx(4.0, abs=1e-9)
    assert {"visibility", "frequency"} <= set(json.loads(fit.to_json()))


def test_fit_fringe_rejects_short_curves():
    with pytest.raises(ValueError):
        fit_fringe(np.arange(4), np.ones(4))


def test_visibility_clamped_to_unit_interval():
    phis = np.linspace(0, 2 * math.pi, 25, endpoint=False)
    rng = np.random.default_rng(0)
    counts = rng.poisson(2 * (1 - np.cos(4 * phis)))
    v = fit_fringe(phis, counts).visibility
    assert 0.0 <= v <= 1.0


def test_peak_fit():
    x = np.linspace(-60, 60, 41)
    y = 10 + 1000 / (1 + (2 * (x - 1.0) / 23.0) ** 2)
    fit = fit_lorentzian_peak(x, y)
    assert fit.fwhm == pytest.approx(23.0, rel=1e-6)
    assert fit.center == pytest.approx(1.0, abs=1e-6)


def test_fit_error_carries_residual():
    err = FitError("nope", 1.5)
    assert err.residual == 1.5 and "1.5" in str(err)


def test_single_photon_fringe_period():
    single = from_labels({(1, 0): S2, (0, 1): S2}, 1)
    phis = np.linspace(0, 2 * math.pi, 32, endpoint=False)
    curve = fringe_scan(single, phis, tree=DetectionTree(1, 1), target=ClickPattern(1, 0))
    np.testing.assert_allclose(curve, (1 + np.cos(phis)) / 2, atol=1e-12)
    assert fit_fringe(phis, curve).frequency == pytest.approx(1.0, abs=1e-9)


def test_sector_density_input():
    rho = DensityMatrix.from_sector_vector(PHI2.sector_amplitudes(2))
    p = port_number_distribution(rho, WavePlateSetting(math.pi / 2, math.pi / 4))
    assert p[1, 1] == pytest.approx(1.0)
