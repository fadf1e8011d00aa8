"""Photon-pair statistics and detector response models.

Closed-form expected rates for a collinear down-conversion source
(pump photon splitting into a signal/idler pair), Poisson sampling of
singles and coincidence counts, and the avalanche-photodiode amplitude
model used by the bias feedback loop.

All rates are in events per second, wavelengths in nanometres,
durations in seconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

COINCIDENCE_WINDOW_S = 9e-9

# Peak detected true-pair rate at the reference 9 mW pump drive. Chosen so
# the raw peak (true + accidental at 360k/330k singles) lands near 4500/s.
DEFAULT_PEAK_PAIR_RATE_HZ = 3431.0
DEFAULT_PUMP_POWER_MW = 9.0


def idler_wavelength(pump_nm: float, signal_nm: float) -> float:
    """Idler wavelength from energy conservation, 1/li = 1/lp - 1/ls.

    Parameters
    ----------
    pump_nm : float
        Pump wavelength, must be positive and below the signal wavelength.
    signal_nm : float
        Signal wavelength.

    Returns
    -------
    float
        Idler wavelength in nm.
    """
    if pump_nm <= 0 or signal_nm <= pump_nm:
        raise ValueError(
            f"need 0 < pump < signal, got pump={pump_nm}, signal={signal_nm}"
        )
    return 1.0 / (1.0 / pump_nm - 1.0 / signal_nm)


def accidental_rate(s1_hz: float, s2_hz: float, window_s: float) -> float:
    """Expected accidental coincidence rate s1*s2*window for uncorrelated singles."""
    if s1_hz < 0 or s2_hz < 0 or window_s < 0:
        raise ValueError("rates and window must be nonnegative")
    return s1_hz * s2_hz * window_s


def overlap_factor(detector_dia_mm: float, beam_dia_mm: float) -> float:
    """Geometric collection factor of a detector smaller than the beam.

    Area ratio of the two diameters, clamped to 1 when the detector is
    at least as large as the beam.
    """
    if detector_dia_mm <= 0 or beam_dia_mm <= 0:
        raise ValueError("diameters must be positive")
    return min(1.0, (detector_dia_mm / beam_dia_mm) ** 2)


@dataclass
class SourceParams:
    """Ground-truth description of the pair source, hidden from the analyzer.

    ``pair_rate_per_mw`` is the true generated-and-detected pair rate per mW
    of pump power at the scan peak; ``true_visibility`` and
    ``phase_offset_rad`` shape the coincidence sinusoid the analyzer is
    later asked to recover.
    """

    pump_wavelength_nm: float = 405.0
    signal_wavelength_nm: float = 760.0
    idler_wavelength_nm: float = 867.0
    pump_power_mw: float = DEFAULT_PUMP_POWER_MW
    pair_rate_per_mw: float = DEFAULT_PEAK_PAIR_RATE_HZ / DEFAULT_PUMP_POWER_MW
    true_visibility: float = 0.95
    phase_offset_rad: float = 0.0
    singles_rate_signal_hz: float = 360000.0
    singles_rate_idler_hz: float = 330000.0

    def __post_init__(self) -> None:
        resid = abs(
            1.0 / self.pump_wavelength_nm
            - 1.0 / self.signal_wavelength_nm
            - 1.0 / self.idler_wavelength_nm
        ) * self.pump_wavelength_nm
        if resid >= 1e-3:
            raise ValueError(
                f"wavelengths violate energy conservation (relative residual {resid:.2e})"
            )
        if not 0.0 <= self.true_visibility <= 1.0:
            raise ValueError(f"true_visibility {self.true_visibility} outside [0, 1]")
        for name in (
            "pump_power_mw",
            "pair_rate_per_mw",
            "singles_rate_signal_hz",
            "singles_rate_idler_hz",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    @property
    def peak_pair_rate_hz(self) -> float:
        return self.pair_rate_per_mw * self.pump_power_mw


def true_pair_rate(src: SourceParams, analyzer_angle_rad: float) -> float:
    """True coincidence rate at an analyzer angle, no accidentals.

    peak * (1 + V*cos(2*theta - phi)) / 2; the factor 2 in the angle is the
    usual polarization doubling.
    """
    peak = src.peak_pair_rate_hz
    return peak * (
        1.0
        + src.true_visibility
        * math.cos(2.0 * analyzer_angle_rad - src.phase_offset_rad)
    ) / 2.0


def expected_coincidence_rate(
    src: SourceParams, analyzer_angle_rad: float, window_s: float
) -> float:
    """Raw expected coincidence rate: sinusoidal true part plus accidentals."""
    return true_pair_rate(src, analyzer_angle_rad) + accidental_rate(
        src.singles_rate_signal_hz, src.singles_rate_idler_hz, window_s
    )


@dataclass
class CountSample:
    """Counts integrated over one dwell interval."""

    singles_1: int
    singles_2: int
    coincidences_raw: int
    dwell_s: float

    def __post_init__(self) -> None:
        if min(self.singles_1, self.singles_2, self.coincidences_raw) < 0:
            raise ValueError("counts must be nonnegative")
        if self.coincidences_raw > min(self.singles_1, self.singles_2):
            raise ValueError("coincidences cannot exceed either singles count")


def sample_counts(
    rates: tuple[float, float, float], dwell_s: float, rng: np.random.Generator
) -> CountSample:
    """Draw one Poisson count triple (singles_1, singles_2, coincidences).

    Coincidences are clamped to min(singles): a pair event needs a click on
    both detectors. Deterministic for a given generator state.
    """
    if dwell_s <= 0:
        raise ValueError("dwell must be positive")
    s1 = int(rng.poisson(rates[0] * dwell_s))
    s2 = int(rng.poisson(rates[1] * dwell_s))
    c = int(rng.poisson(rates[2] * dwell_s))
    return CountSample(s1, s2, min(c, s1, s2), dwell_s)


def _default_efficiency_curve(overvolts: float) -> float:
    # saturating turn-on; anything monotone with eff(0)=0 works here
    if overvolts <= 0:
        return 0.0
    return 1.0 - math.exp(-overvolts / 4.0)


@dataclass
class ApdParams:
    """Avalanche photodiode model parameters.

    Breakdown voltage drifts linearly with temperature; the avalanche pulse
    amplitude is proportional to the overvoltage above breakdown. Detection
    efficiency saturates with overvoltage, so holding the amplitude fixed
    holds the efficiency fixed.
    """

    breakdown_volts_at_25c: float = 112.0
    breakdown_tempco_v_per_c: float = 0.7
    amplitude_gain_per_overvolt: float = 0.1
    efficiency_sat_curve: Callable[[float], float] = field(
        default=_default_efficiency_curve
    )
    dark_rate_hz: float = 500.0
    bias_min_v: float = 100.0
    bias_max_v: float = 130.0

    def __post_init__(self) -> None:
        if self.bias_min_v >= self.bias_max_v:
            raise ValueError("bias_min_v must be below bias_max_v")
        if self.dark_rate_hz < 0:
            raise ValueError("dark_rate_hz must be nonnegative")


def breakdown_voltage(params: ApdParams, temp_c: float) -> float:
    return params.breakdown_volts_at_25c + params.breakdown_tempco_v_per_c * (
        temp_c - 25.0
    )


def avalanche_amplitude(params: ApdParams, bias_v: float, temp_c: float) -> float:
    """Avalanche pulse amplitude, gain * overvoltage, zero below breakdown."""
    if not 0.0 <= bias_v <= params.bias_max_v:
        raise ValueError(f"bias {bias_v} outside [0, {params.bias_max_v}]")
    over = bias_v - breakdown_voltage(params, temp_c)
    return params.amplitude_gain_per_overvolt * max(0.0, over)


def efficiency_factor(
    params: ApdParams, bias_v: float, temp_c: float, reference_overvolts: float = 10.0
) -> float:
    """Detection-efficiency scale relative to the nominal operating point.

    1.0 when the bias loop sits at its reference overvoltage; drops toward 0
    if the bias rails below breakdown plus reference.
    """
    over = max(0.0, bias_v - breakdown_voltage(params, temp_c))
    ref = params.efficiency_sat_curve(reference_overvolts)
    if ref <= 0:
        raise ValueError("efficiency curve must be positive at the reference point")
    return params.efficiency_sat_curve(over) / ref
