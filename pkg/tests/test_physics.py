"""Rate formulas, Poisson sampling, and APD response."""

import math

import numpy as np
import pytest

from pairsat import physics
from pairsat.physics import (
    ApdParams,
    CountSample,
    SourceParams,
    accidental_rate,
    avalanche_amplitude,
    breakdown_voltage,
    efficiency_factor,
    expected_coincidence_rate,
    idler_wavelength,
    overlap_factor,
    sample_counts,
    true_pair_rate,
)


def test_idler_wavelength_from_pump_and_signal():
    assert idler_wavelength(405.0, 760.0) == pytest.approx(867.04, abs=0.005)
    assert idler_wavelength(405.0, 810.0) == pytest.approx(810.0, abs=1e-9)
    # symmetry: swapping the roles of the two daughters inverts the relation
    assert idler_wavelength(405.0, 867.042) == pytest.approx(760.0, abs=0.01)


def test_idler_wavelength_domain_errors():
    with pytest.raises(ValueError):
        idler_wavelength(0.0, 760.0)
    with pytest.raises(ValueError):
        idler_wavelength(-405.0, 760.0)
    with pytest.raises(ValueError):
        idler_wavelength(760.0, 405.0)


def test_energy_conservation_of_defaults():
    src = SourceParams()
    lhs = 1.0 / src.pump_wavelength_nm
    rhs = 1.0 / src.signal_wavelength_nm + 1.0 / src.idler_wavelength_nm
    assert abs(lhs - rhs) * src.pump_wavelength_nm < 1e-3


def test_source_params_rejects_nonconserving_triple():
    with pytest.raises(ValueError):
        SourceParams(idler_wavelength_nm=900.0)
    with pytest.raises(ValueError):
        SourceParams(true_visibility=1.2)
    with pytest.raises(ValueError):
        SourceParams(singles_rate_signal_hz=-1.0)


def test_accidental_rate_values():
    assert accidental_rate(360000.0, 330000.0, 9e-9) == 1069.2
    assert accidental_rate(0.0, 330000.0, 9e-9) == 0.0
    assert accidental_rate(360000.0, 330000.0, 0.0) == 0.0
    with pytest.raises(ValueError):
        accidental_rate(-1.0, 330000.0, 9e-9)


def test_overlap_factor_values():
    assert overlap_factor(0.5, 0.8) == 0.390625
    assert overlap_factor(0.8, 0.8) == 1.0
    assert overlap_factor(1.6, 0.8) == 1.0
    with pytest.raises(ValueError):
        overlap_factor(0.0, 0.8)


def test_expected_coincidence_rate_example():
    src = SourceParams()
    rate = expected_coincidence_rate(src, 0.0, 9e-9)
    assert rate == pytest.approx(3431.0 * 0.975 + 1069.2, abs=1e-9)
    assert rate == pytest.approx(4414.425)


def test_expected_rate_limits():
    # perfect contrast at the null angle, no accidentals
    src = SourceParams(
        true_visibility=1.0,
        singles_rate_signal_hz=0.0,
        singles_rate_idler_hz=0.0,
    )
    assert expected_coincidence_rate(src, math.pi / 2.0, 9e-9) == pytest.approx(0.0, abs=1e-9)
    flat = SourceParams(true_visibility=0.0)
    peak = flat.peak_pair_rate_hz
    assert expected_coincidence_rate(flat, 1.234, 9e-9) == pytest.approx(peak / 2.0 + 1069.2)


def test_sinusoid_contrast_matches_true_visibility():
    src = SourceParams(singles_rate_signal_hz=0.0, singles_rate_idler_hz=0.0)
    thetas = np.linspace(0.0, 2.0 * math.pi, 721)
    rates = [expected_coincidence_rate(src, t, 9e-9) for t in thetas]
    vis = (max(rates) - min(rates)) / (max(rates) + min(rates))
    assert vis == pytest.approx(src.true_visibility, abs=1e-6)


def test_true_pair_rate_peak_location():
    src = SourceParams(phase_offset_rad=0.6)
    # maximum sits where 2*theta equals the phase offset
    top = src.peak_pair_rate_hz * (1.0 + src.true_visibility) / 2.0
    assert true_pair_rate(src, 0.3) == pytest.approx(top)
    thetas = np.linspace(0.0, 2.0 * math.pi, 1441)
    assert max(true_pair_rate(src, t) for t in thetas) <= top + 1e-9


def test_sample_counts_determinism_and_mean():
    rates = (360000.0, 330000.0, 4414.0)
    a = sample_counts(rates, 0.45, np.random.default_rng(42))
    b = sample_counts(rates, 0.45, np.random.default_rng(42))
    assert (a.singles_1, a.singles_2, a.coincidences_raw) == (
        b.singles_1, b.singles_2, b.coincidences_raw
    )

    n = 10000
    rng = np.random.default_rng(7)
    sums = np.zeros(3)
    for _ in range(n):
        s = sample_counts(rates, 0.45, rng)
        sums += (s.singles_1, s.singles_2, s.coincidences_raw)
    means = sums / n
    expect = np.array(rates) * 0.45
    for m, mu in zip(means, expect):
        assert abs(m - mu) < 3.0 * math.sqrt(mu / n)


def test_sample_counts_zero_rates_and_ceiling():
    rng = np.random.default_rng(1)
    z = sample_counts((0.0, 0.0, 0.0), 0.45, rng)
    assert (z.singles_1, z.singles_2, z.coincidences_raw) == (0, 0, 0)
    # coincidence rate far above singles still clamps to the smaller singles count
    for _ in range(200):
        s = sample_counts((50.0, 40.0, 5000.0), 0.1, rng)
        assert s.coincidences_raw <= min(s.singles_1, s.singles_2)


def test_count_sample_validation():
    with pytest.raises(ValueError):
        CountSample(singles_1=10, singles_2=10, coincidences_raw=11, dwell_s=0.45)
    with pytest.raises(ValueError):
        CountSample(singles_1=-1, singles_2=0, coincidences_raw=0, dwell_s=0.45)


def test_breakdown_voltage_tempco():
    p = ApdParams()
    assert breakdown_voltage(p, 25.0) == 112.0
    assert breakdown_voltage(p, 35.0) == pytest.approx(112.0 + 7.0)
    assert breakdown_voltage(p, 15.0) == pytest.approx(112.0 - 7.0)


def test_avalanche_amplitude_model():
    p = ApdParams()
    amp25 = avalanche_amplitude(p, 122.0, 25.0)
    amp35 = avalanche_amplitude(p, 122.0, 35.0)
    # +10 C moves breakdown up 7 V, so amplitude drops by gain * 7
    assert amp25 - amp35 == pytest.approx(p.amplitude_gain_per_overvolt * 7.0)
    assert avalanche_amplitude(p, breakdown_voltage(p, 25.0), 25.0) == 0.0
    assert avalanche_amplitude(p, 100.0, 25.0) == 0.0  # below breakdown clamps
    with pytest.raises(ValueError):
        avalanche_amplitude(p, 131.0, 25.0)


def test_efficiency_factor_saturates_and_normalizes():
    p = ApdParams()
    # at the reference overvoltage the factor is one by construction
    assert efficiency_factor(p, 122.0, 25.0) == pytest.approx(1.0)
    low = efficiency_factor(p, 115.0, 25.0)
    assert 0.0 < low < 1.0
    factors = [efficiency_factor(p, b, 25.0) for b in np.linspace(112.0, 130.0, 30)]
    assert all(b2 >= b1 for b1, b2 in zip(factors, factors[1:]))
