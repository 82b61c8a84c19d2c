import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fockforge.fock_core import FockError, apply_raising, number_state, vacuum
from fockforge.sfwm_source import (
    LossBudget,
    PumpConfig,
    SqueezeParams,
    brightness_estimate,
    db_to_transmissivity,
    delay_overlap,
    loss_budget_total,
    pair_rate,
    pairs_per_pulse,
    post_select_2n,
    pulse_width_tbp,
    single_mode_squeezed_amplitudes,
    squeezed_two_mode_state,
)


def closed_form(n, cutoff):
    """(1/n!) (1/2 (a_H^2 + a_V^2))^n |00>, normalized."""
    state = vacuum(cutoff)
    for _ in range(n):
        h = apply_raising(apply_raising(state, "H"), "H")
        v = apply_raising(apply_raising(state, "V"), "V")
        state = (h + v).scaled(0.5)
    return state.scaled(1 / math.factorial(n)).normalize()


def test_squeeze_params():
    p = SqueezeParams(0.3)
    assert p.c == pytest.approx(math.cosh(0.3))
    assert 0 <= p.gamma < 1 and p.c >= 1
    with pytest.raises(ValueError):
        SqueezeParams(-0.1)
    assert SqueezeParams.from_pairs_per_pulse(0.002).mean_pairs == pytest.approx(0.002)


def test_zero_squeezing_is_vacuum():
    s = squeezed_two_mode_state(SqueezeParams(0.0), 4)
    np.testing.assert_allclose(s.amplitudes, vacuum(4).amplitudes)


def test_amplitude_ratio():
    p = SqueezeParams(0.2)
    s = squeezed_two_mode_state(p, 8)
    assert s.amplitude(2, 0) / s.amplitude(0, 0) == pytest.approx(p.gamma / math.sqrt(2), rel=1e-12)


def test_vacuum_amplitude_is_one_over_c():
    p = SqueezeParams(0.15)
    s = squeezed_two_mode_state(p, 10)
    assert s.amplitude(0, 0).real == pytest.approx(1 / p.c, rel=1e-9)


def test_truncation_warning_and_leak():
    with pytest.warns(RuntimeWarning):
        s = squeezed_two_mode_state(SqueezeParams(1.0), 4)
    assert s.truncated > 1e-6
    assert s.norm() == pytest.approx(1.0)


@pytest.mark.parametrize(
    "n, expected",
    [
        (1, {(2, 0): 1 / math.sqrt(2), (0, 2): 1 / math.sqrt(2)}),
        (2, {(4, 0): math.sqrt(3 / 8), (2, 2): 0.5, (0, 4): math.sqrt(3 / 8)}),
        (
            4,
            {
                (8, 0): math.sqrt(70) / 16,
                (6, 2): math.sqrt(10) / 8,
                (4, 4): 3 / 8,
                (2, 6): math.sqrt(10) / 8,
                (0, 8): math.sqrt(70) / 16,
            },
        ),
    ],
)
def test_post_selected_coefficients(n, expected):
    s = post_select_2n(SqueezeParams(0.1), n, cutoff=8)
    for (h, v), amp in expected.items():
        assert s.amplitude(h, v) == pytest.approx(amp, abs=1e-12)
    assert s.norm() == pytest.approx(1.0, abs=1e-12)


def test_post_select_errors():
    with pytest.raises(FockError):
        post_select_2n(SqueezeParams(0.1), 3, cutoff=4)
    with pytest.raises(FockError):
        post_select_2n(SqueezeParams(0.0), 1, cutoff=4)
    with pytest.raises(ValueError):
        post_select_2n(SqueezeParams(0.1), -1)


@settings(max_examples=25, deadline=None)
@given(st.floats(min_value=0.01, max_value=0.9), st.integers(min_value=0, max_value=4))
def test_post_select_matches_closed_form(r, n):
    got = post_select_2n(SqueezeParams(r), n, cutoff=8)
    np.testing.assert_allclose(got.amplitudes, closed_form(n, 8).amplitudes, atol=1e-12)
    amps = got.amplitudes
    assert np.all(np.abs(amps.imag) < 1e-15) and np.all(amps.real >= -1e-15)
    h, v = np.nonzero(np.abs(amps) > 0)
    assert np.all(h % 2 == 0) and np.all(v % 2 == 0)


@settings(max_examples=20, deadline=None)
@given(st.floats(min_value=0.0, max_value=0.3))
def test_state_factorizes_into_single_mode_squeezers(r):
    p = SqueezeParams(r)
    s = squeezed_two_mode_state(p, 8, warn=False)
    single = single_mode_squeezed_amplitudes(math.atanh(p.gamma), 8)
    product = np.outer(single, single)
    # the product is the untruncated state; renormalize both on the box
    np.testing.assert_allclose(s.amplitudes, product / np.linalg.norm(product), atol=1e-12)


def test_pair_rate_scaling():
    base = pair_rate(PumpConfig(80, 80))
    assert pair_rate(PumpConfig(160, 80)) == pytest.approx(2 * base)
    assert pair_rate(PumpConfig(160, 0), "single") == pytest.approx(4 * pair_rate(PumpConfig(80, 0), "single"))
    assert pair_rate(PumpConfig(0, 80)) == 0
    with pytest.raises(ValueError):
        pair_rate(PumpConfig(1, 1), "triple")


def test_pump_validation():
    with pytest.raises(ValueError):
        PumpConfig(-1, 1)
    with pytest.raises(ValueError):
        PumpConfig(1, 1, rep_rate=0)


def test_delay_overlap_examples():
    assert delay_overlap(0.0, 23.0) == 1.0
    assert delay_overlap(11.5, 23.0) == pytest.approx(0.5)
    assert delay_overlap(1e9, 23.0) < 1e-12
    with pytest.raises(ValueError):
        delay_overlap(0.0, 0.0)


@settings(max_examples=50)
@given(st.floats(min_value=0, max_value=1e4), st.floats(min_value=0, max_value=1e4), st.floats(min_value=0.1, max_value=100))
def test_delay_overlap_even_and_decreasing(a, b, fwhm):
    assert delay_overlap(a, fwhm) == delay_overlap(-a, fwhm)
    lo, hi = sorted((a, b))
    assert delay_overlap(hi, fwhm) <= delay_overlap(lo, fwhm)


def test_pulse_width():
    assert pulse_width_tbp(0.090, 80, 0.4) == pytest.approx(18.0, rel=1e-12)
    assert pulse_width_tbp(2.0, 5.0, 5.0) == 2.0
    assert pulse_width_tbp(2.0, 5.0, 2.5) == pytest.approx(2 * pulse_width_tbp(2.0, 5.0, 5.0))
    with pytest.raises(ValueError):
        pulse_width_tbp(1.0, 0.0, 1.0)


def test_loss_budget():
    assert loss_budget_total(LossBudget(0, 0, 0, 0, 0)).total_db == 0
    total = loss_budget_total(LossBudget())
    assert total.component_sum_db == pytest.approx(13.0)
    assert total.total_db == pytest.approx(13.0)
    stated = loss_budget_total(LossBudget(stated_total_db=12.0))
    assert stated.component_sum_db == pytest.approx(13.0)
    assert stated.transmissivity == pytest.approx(db_to_transmissivity(12.0))
    assert db_to_transmissivity(10.0) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        LossBudget(coupler=-1)


def test_brightness_chain():
    rep = brightness_estimate(PumpConfig(250, 250))
    assert pairs_per_pulse(PumpConfig(80, 80)) == pytest.approx(0.002)
    assert rep.pairs_per_pulse == pytest.approx(0.02, rel=0.03)
    assert rep.four_photon_per_pulse == pytest.approx(rep.pairs_per_pulse**2)
    assert rep.four_photon_generation_hz == pytest.approx(40e3, rel=0.05)
    assert rep.four_fold_loss_db == 48.0
    assert 0.03 <= rep.four_fold_detected_hz <= 0.12


def test_brightness_uses_given_losses():
    low = brightness_estimate(PumpConfig(250, 250), losses=LossBudget())
    high = brightness_estimate(PumpConfig(250, 250), losses=LossBudget(stated_total_db=12.0))
    assert low.four_fold_loss_db == pytest.approx(52.0)
    assert low.four_fold_detected_hz < high.four_fold_detected_hz


def test_number_state_helper_consistency():
    # |22> is the middle term of the four-photon state
    s = post_select_2n(SqueezeParams(0.1), 2, cutoff=4)
    assert abs(np.vdot(number_state(2, 2, 4).vector, s.vector)) ** 2 == pytest.approx(0.25)
