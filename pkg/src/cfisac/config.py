"""System configuration for the cell-free ISAC tracking simulator."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

SPEED_OF_LIGHT = 3e8  # m/s


def default_ap_positions(num_aps: int) -> tuple[tuple[float, float], ...]:
    """APs spaced equidistantly on the road line: x = (500/L)*l, l = 1..L, y = 0."""
    step = 500.0 / num_aps
    return tuple((step * (l + 1), 0.0) for l in range(num_aps))


@dataclass(frozen=True)
class SystemConfig:
    """Physical, waveform and network parameters of the deployment.

    Defaults reproduce the reference evaluation scenario: four 4-antenna APs
    along a road at y = 0, a 30 GHz carrier, and a vehicle corridor 40 m away.
    `wavelength` and `antenna_spacing` derive from the carrier when left None.
    """

    num_aps: int = 4                      # L_T
    antennas_per_ap: int = 4              # N, ULA elements per AP
    carrier_frequency: float = 30e9       # Hz
    wavelength: float | None = None       # m, defaults to c / carrier_frequency
    antenna_spacing: float | None = None  # m, defaults to wavelength / 2
    subcarrier_spacing: float = 120e3     # Hz
    num_subcarriers: int = 256            # N_c
    num_symbols: int = 14                 # N_s per coherence block
    cp_length: int = 18                   # cyclic-prefix samples
    tx_power: float = 1.0                 # W, per-AP maximum
    noise_power: float = 10 ** (-7.5) / 1e3  # W (-75 dBm)
    ap_positions: tuple[tuple[float, float], ...] | None = None
    corridor_offset: float = 40.0         # m, fixed y-distance target <-> AP line
    mean_rcs: float = 5.0                 # m^2, Swerling-I mean cross section
    epoch_duration: float = 0.01          # s between filter epochs
    process_noise_std: float = 0.1        # m/s^2, acceleration uncertainty
    variance_threshold: float = math.radians(3.0) ** 2  # rad^2, sensing trigger
    outage_probability: float = 0.05      # epsilon for beamwidth-derived threshold
    tx_ap: int = 0                        # index of the sensing transmitter AP

    def __post_init__(self) -> None:
        if self.wavelength is None:
            object.__setattr__(self, "wavelength",
                               SPEED_OF_LIGHT / self.carrier_frequency)
        if self.antenna_spacing is None:
            object.__setattr__(self, "antenna_spacing", self.wavelength / 2.0)
        if self.ap_positions is None:
            object.__setattr__(self, "ap_positions",
                               default_ap_positions(self.num_aps))
        else:
            object.__setattr__(self, "ap_positions",
                               tuple((float(x), float(y))
                                     for x, y in self.ap_positions))
        self._validate()

    def _validate(self) -> None:
        if self.num_aps < 2:
            raise ValueError("num_aps: need at least 2 APs")
        if self.antennas_per_ap < 1:
            raise ValueError("antennas_per_ap: must be >= 1")
        if self.num_subcarriers < 2:
            raise ValueError("num_subcarriers: must be >= 2")
        if self.num_symbols < 1:
            raise ValueError("num_symbols: must be >= 1")
        if self.cp_length < 0:
            raise ValueError("cp_length: must be >= 0")
        for name in ("carrier_frequency", "subcarrier_spacing", "tx_power",
                     "noise_power", "antenna_spacing", "corridor_offset",
                     "mean_rcs", "epoch_duration", "variance_threshold"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name}: must be strictly positive")
        if self.process_noise_std < 0:
            raise ValueError("process_noise_std: must be >= 0")
        expected = SPEED_OF_LIGHT / self.carrier_frequency
        if abs(self.wavelength - expected) > 1e-12 * expected:
            raise ValueError(
                "wavelength: must equal speed of light / carrier_frequency "
                f"(expected {expected!r}, got {self.wavelength!r})")
        if not 0.0 < self.outage_probability < 1.0:
            raise ValueError("outage_probability: must lie in (0, 1)")
        if len(self.ap_positions) != self.num_aps:
            raise ValueError("ap_positions: length must equal num_aps")
        if not 0 <= self.tx_ap < self.num_aps:
            raise ValueError("tx_ap: index out of range")

    @property
    def symbol_duration(self) -> float:
        """OFDM symbol duration including the cyclic prefix, seconds."""
        return (1.0 + self.cp_length / self.num_subcarriers) / self.subcarrier_spacing

    @property
    def cp_delay_window(self) -> float:
        """Largest propagation delay the cyclic prefix absorbs, seconds."""
        return self.cp_length / (self.num_subcarriers * self.subcarrier_spacing)

    def ap_x(self, ap_index: int) -> float:
        return self.ap_positions[ap_index][0]

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}
