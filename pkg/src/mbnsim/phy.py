"""Physical-layer math: propagation, subchannel frequency mapping, noise, SINR.

All functions are pure and stateless. Gains are linear power ratios,
powers are watts, frequencies and bandwidths are Hz.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum


class Band(Enum):
    RF = "rf"
    THZ = "thz"


@dataclass(frozen=True)
class ChannelParams:
    """Per-band propagation parameters and physical constants.

    Defaults: 2.1 GHz RF carrier with path-loss exponent 2.5, 340 GHz THz
    center with a flat molecular absorption coefficient of 0.0033 1/m,
    20 MHz / 10 GHz total bandwidth split into 20 subchannels per band,
    thermal noise density -174 dBm/Hz.
    """

    speed_of_light: float = 299_792_458.0  # m/s
    rf_carrier_hz: float = 2.1e9
    thz_center_hz: float = 340e9
    rf_pathloss_exponent: float = 2.5
    absorption_coeff_per_m: float = 0.0033
    rf_total_bandwidth_hz: float = 20e6
    thz_total_bandwidth_hz: float = 10e9
    subchannels_per_band: int = 20
    noise_density_dbm_per_hz: float = -174.0

    def __post_init__(self):
        for name in ("speed_of_light", "rf_carrier_hz", "thz_center_hz",
                     "rf_total_bandwidth_hz", "thz_total_bandwidth_hz"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.rf_pathloss_exponent < 2:
            raise ValueError("rf_pathloss_exponent must be >= 2")
        if self.absorption_coeff_per_m < 0:
            raise ValueError("absorption_coeff_per_m must be >= 0")
        if self.subchannels_per_band < 1:
            raise ValueError("subchannels_per_band must be >= 1")

    @property
    def rf_subchannel_bandwidth_hz(self) -> float:
        return self.rf_total_bandwidth_hz / self.subchannels_per_band

    @property
    def thz_subchannel_bandwidth_hz(self) -> float:
        return self.thz_total_bandwidth_hz / self.subchannels_per_band


@dataclass(frozen=True)
class LinkGain:
    """Linear path gain of one user-BS link on one subchannel.

    THz links are deterministic and carry no fading draw.
    """

    value: float
    band: Band
    fading_draw: float | None = None

    def __post_init__(self):
        if self.value < 0:
            raise ValueError("gain must be >= 0")
        if self.fading_draw is not None and self.fading_draw < 0:
            raise ValueError("fading draw must be >= 0")
        if self.band is Band.THZ and self.fading_draw is not None:
            raise ValueError("THz links carry no fading draw")


def rf_path_gain(params: ChannelParams, distance_m: float,
                 fading_draw: float) -> LinkGain:
    """RF gain (c / 4 pi f_RF)^2 * x * d^-alpha with small-scale power x."""
    if distance_m <= 0:
        raise ValueError("distance must be strictly positive")
    if fading_draw < 0:
        raise ValueError("fading draw must be >= 0")
    amp = (params.speed_of_light / (4.0 * math.pi * params.rf_carrier_hz)) ** 2
    value = amp * fading_draw * distance_m ** (-params.rf_pathloss_exponent)
    return LinkGain(value, Band.RF, fading_draw)


def thz_path_gain(params: ChannelParams, distance_m: float,
                  subchannel_freq_hz: float) -> LinkGain:
    """THz gain (c / 4 pi f)^2 * d^-2 * exp(-a d) with molecular absorption."""
    if distance_m <= 0:
        raise ValueError("distance must be strictly positive")
    if subchannel_freq_hz <= 0:
        raise ValueError("frequency must be strictly positive")
    amp = (params.speed_of_light / (4.0 * math.pi * subchannel_freq_hz)) ** 2
    value = amp * distance_m ** -2 * math.exp(
        -params.absorption_coeff_per_m * distance_m)
    return LinkGain(value, Band.THZ)


def thz_subchannel_frequency(params: ChannelParams, k: int) -> float:
    """Center frequency of THz subchannel k (1-based), spaced W/C about f_c."""
    c = params.subchannels_per_band
    if not 1 <= k <= c:
        raise IndexError(f"subchannel index {k} outside 1..{c}")
    step = params.thz_total_bandwidth_hz / c
    return params.thz_center_hz + step * (k - 1 - (c - 1) / 2.0)


def noise_power_w(params: ChannelParams, bandwidth_hz: float) -> float:
    """Thermal noise power over a bandwidth from the dBm/Hz density."""
    if bandwidth_hz <= 0:
        raise ValueError("bandwidth must be strictly positive")
    dbm = params.noise_density_dbm_per_hz + 10.0 * math.log10(bandwidth_hz)
    return 10.0 ** (dbm / 10.0) * 1e-3


def sinr(signal_power_w: float, gain: LinkGain | float,
         interference_w: float, noise_w: float) -> float:
    """Received SINR: P * h / (I + N). Accepts a LinkGain or a bare gain."""
    g = gain.value if isinstance(gain, LinkGain) else float(gain)
    if signal_power_w < 0 or g < 0 or interference_w < 0:
        raise ValueError("powers and gain must be >= 0")
    if noise_w <= 0:
        raise ValueError("noise must be strictly positive")
    return signal_power_w * g / (interference_w + noise_w)
