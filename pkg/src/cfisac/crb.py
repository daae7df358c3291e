"""Estimation bounds for the OFDM sensing link.

Builds the delayed and Doppler-shifted sounding waveform, computes the
Fisher-information bounds on (delay, Doppler) and angle for a single
bistatic Tx-target-Rx hop, transforms them to (range, radial velocity),
and assembles per-AP measurement covariance blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import SPEED_OF_LIGHT, SystemConfig
from .geometry import ApGeometry, array_response, array_response_derivative
from .selection import ApSelection


class RankDeficientError(ValueError):
    """The Fisher information is singular; some parameter is unidentifiable."""


@dataclass(frozen=True)
class WaveformSpec:
    """Frequency-domain symbol grid, shape (num_subcarriers, num_symbols).

    Average symbol power must be one so that waveform energy equals the
    number of time samples.
    """

    symbols: np.ndarray

    def __post_init__(self) -> None:
        sym = np.array(self.symbols, dtype=complex)
        sym.setflags(write=False)
        object.__setattr__(self, "symbols", sym)

    @property
    def shape(self) -> tuple[int, int]:
        return self.symbols.shape


def qpsk_waveform(cfg: SystemConfig, rng: np.random.Generator) -> WaveformSpec:
    """Unit-modulus QPSK grid drawn from the given generator."""
    quadrants = rng.integers(0, 4, size=(cfg.num_subcarriers, cfg.num_symbols))
    return WaveformSpec(np.exp(1j * (math.pi / 2) * quadrants))


def all_ones_waveform(cfg: SystemConfig) -> WaveformSpec:
    return WaveformSpec(np.ones((cfg.num_subcarriers, cfg.num_symbols)))


@dataclass(frozen=True)
class SensingLinkGain:
    """Complex amplitude of one sensing hop and its squared magnitude."""

    alpha_bar: complex
    magnitude_sq: float

    def __post_init__(self) -> None:
        expected = abs(self.alpha_bar) ** 2
        if abs(self.magnitude_sq - expected) > 1e-12 * max(expected, 1e-300):
            raise ValueError(
                f"magnitude_sq {self.magnitude_sq!r} does not match "
                f"|alpha_bar|^2 = {expected!r}")

    @classmethod
    def from_amplitude(cls, alpha_bar: complex) -> "SensingLinkGain":
        return cls(complex(alpha_bar), abs(alpha_bar) ** 2)


@dataclass(frozen=True)
class CrbBlock:
    """Per-AP lower bound over (range, radial velocity, angle) estimates."""

    range_velocity: np.ndarray  # 2x2, m^2 / m^2/s^2 on the diagonal
    angle_var: float            # rad^2
    full: np.ndarray            # 3x3 block-diagonal over (range, velocity, angle)
    ap_index: int = 0


def _check_waveform(spec: WaveformSpec, cfg: SystemConfig) -> None:
    n_c, n_s = cfg.num_subcarriers, cfg.num_symbols
    if spec.shape != (n_c, n_s):
        raise ValueError(
            f"waveform shape {spec.shape} does not match the configured "
            f"grid ({n_c}, {n_s})")
    mean_power = np.sum(np.abs(spec.symbols) ** 2) / (n_c * n_s)
    if abs(mean_power - 1.0) > 1e-9:
        raise ValueError(f"waveform average power {mean_power!r} is not 1")


def _samples_from_grid(coeff: np.ndarray, cfg: SystemConfig,
                       doppler_factors: np.ndarray) -> np.ndarray:
    # Per symbol b: (1/sqrt(Nc)) sum_a coeff[a,b] e^{j 2 pi a m / Nc}, then the
    # per-symbol Doppler phase; flattened index is b*Nc + m.
    samples = math.sqrt(cfg.num_subcarriers) * np.fft.ifft(coeff, axis=0)
    samples = samples * doppler_factors[None, :]
    return samples.T.reshape(-1)


def _waveform_terms(spec: WaveformSpec, cfg: SystemConfig, delay: float,
                    doppler: float, with_derivatives: bool):
    """Sample-domain waveform and, optionally, its analytic derivatives.

    Derivatives are applied as per-subcarrier (-j 2 pi a df) and per-symbol
    (j 2 pi b T_sym) factors in the index domain, never numerically.
    """
    _check_waveform(spec, cfg)
    if not (0.0 <= delay < cfg.cp_delay_window):
        raise ValueError(
            f"delay {delay!r} outside the cyclic-prefix window "
            f"[0, {cfg.cp_delay_window!r})")
    if not math.isfinite(doppler):
        raise ValueError("doppler must be finite")
    a = np.arange(cfg.num_subcarriers)
    b = np.arange(cfg.num_symbols)
    delay_ramp = np.exp(-2j * math.pi * a * cfg.subcarrier_spacing * delay)
    doppler_ramp = np.exp(2j * math.pi * b * cfg.symbol_duration * doppler)
    coeff = spec.symbols * delay_ramp[:, None]
    s = _samples_from_grid(coeff, cfg, doppler_ramp)
    if not with_derivatives:
        return s, None, None
    tau_factor = -2j * math.pi * a * cfg.subcarrier_spacing
    d_tau = _samples_from_grid(coeff * tau_factor[:, None], cfg, doppler_ramp)
    nu_factor = 2j * math.pi * b * cfg.symbol_duration
    d_nu = (s.reshape(cfg.num_symbols, cfg.num_subcarriers)
            * nu_factor[:, None]).reshape(-1)
    return s, d_tau, d_nu


def build_waveform_vector(spec: WaveformSpec, cfg: SystemConfig,
                          delay: float, doppler: float) -> np.ndarray:
    """Delayed, Doppler-shifted time-domain waveform of length N_c * N_s.

    Entry b*N_c + m is
    e^{j 2 pi b T_sym doppler} (1/sqrt(N_c)) sum_a gamma_{a,b}
    e^{j 2 pi a m / N_c} e^{-j 2 pi a df delay}.
    The delay must stay inside the cyclic-prefix window.
    """
    s, _, _ = _waveform_terms(spec, cfg, delay, doppler, with_derivatives=False)
    return s


def crb_delay_doppler(spec: WaveformSpec, cfg: SystemConfig,
                      gain: SensingLinkGain, azimuth: float,
                      delay: float, doppler: float) -> np.ndarray:
    """2x2 estimation bound on (delay s, Doppler Hz) for one receiving AP.

    Inverse of the Fisher information with the complex hop gain treated as
    an unknown nuisance amplitude:

        (2 |alpha|^2 ||a(az)||^2 / sigma_n^2)
            * Re{ D^H (I - s s^H / ||s||^2) D },

    where s is the sampled waveform and D stacks its delay and Doppler
    derivatives.
    """
    if not gain.magnitude_sq > 0:
        raise ValueError("sensing gain must have positive power")
    s, d_tau, d_nu = _waveform_terms(spec, cfg, delay, doppler,
                                     with_derivatives=True)
    steering = array_response(cfg, azimuth)
    array_norm_sq = float(np.vdot(steering, steering).real)
    d = np.stack([d_tau, d_nu], axis=1)
    gram = d.conj().T @ d
    cross = d.conj().T @ s
    energy = float(np.vdot(s, s).real)
    core = (gram - np.outer(cross, cross.conj()) / energy).real
    fim = (2.0 * gain.magnitude_sq * array_norm_sq / cfg.noise_power) * core

    # Delay and Doppler live on very different scales; judge each diagonal
    # against its own unprojected information, not against the other's.
    weak = [name for i, name in enumerate(("delay", "doppler"))
            if core[i, i] <= 1e-12 * gram[i, i].real]
    if weak:
        raise RankDeficientError(
            f"Fisher information is singular: {' and '.join(weak)} "
            "unidentifiable for this waveform grid")
    det = fim[0, 0] * fim[1, 1] - fim[0, 1] * fim[1, 0]
    if det <= 1e-24 * fim[0, 0] * fim[1, 1]:
        raise RankDeficientError(
            "Fisher information for (delay, doppler) is not positive definite")
    crb = np.linalg.inv(fim)
    return (crb + crb.T) / 2.0


def crb_angle(spec: WaveformSpec, cfg: SystemConfig, gain: SensingLinkGain,
              azimuth: float, delay: float, doppler: float) -> float:
    """Angle estimation bound (rad^2) for one receiving AP.

    Scalar inverse of
    (2 |alpha|^2 ||s||^2 / sigma_n^2) Re{ da^H (I - a a^H / ||a||^2) da }.
    Requires at least two antennas and |azimuth| < pi/2.
    """
    if not gain.magnitude_sq > 0:
        raise ValueError("sensing gain must have positive power")
    if cfg.antennas_per_ap < 2:
        raise RankDeficientError(
            "angle unidentifiable with a single antenna per AP")
    if abs(azimuth) >= math.pi / 2:
        raise ValueError("angle bound is singular at azimuth = +/- pi/2")
    s = build_waveform_vector(spec, cfg, delay, doppler)
    energy = float(np.vdot(s, s).real)
    a = array_response(cfg, azimuth)
    da = array_response_derivative(cfg, azimuth)
    projected = (np.vdot(da, da).real
                 - abs(np.vdot(a, da)) ** 2 / np.vdot(a, a).real)
    info = (2.0 * gain.magnitude_sq * energy / cfg.noise_power) * projected
    if info <= 0:
        raise RankDeficientError("angle Fisher information is not positive")
    return 1.0 / info


def transform_to_range_velocity(crb_dd: np.ndarray, crb_angle_var: float,
                                cfg: SystemConfig, ap_index: int = 0) -> CrbBlock:
    """Map the (delay, Doppler) bound to (range, radial velocity) units.

    Applies the diagonal scaling (c, c / (2 f_c), 1) on both sides and
    stacks the untouched angle variance as the third coordinate.
    """
    crb_dd = np.asarray(crb_dd, dtype=float)
    if crb_dd.shape != (2, 2):
        raise ValueError("delay-Doppler bound must be 2x2")
    if not np.allclose(crb_dd, crb_dd.T, rtol=0, atol=1e-9 * abs(crb_dd).max()):
        raise ValueError("delay-Doppler bound must be symmetric")
    scale = np.array([SPEED_OF_LIGHT, SPEED_OF_LIGHT / (2.0 * cfg.carrier_frequency)])
    range_velocity = crb_dd * np.outer(scale, scale)
    full = np.zeros((3, 3))
    full[:2, :2] = range_velocity
    full[2, 2] = crb_angle_var
    return CrbBlock(range_velocity, float(crb_angle_var), full, ap_index)


def sensing_gain(cfg: SystemConfig, tx_geometry: ApGeometry,
                 rx_geometry: ApGeometry, rcs: float,
                 tx_precoder: np.ndarray) -> SensingLinkGain:
    """Complex gain of the Tx -> target -> Rx hop.

    alpha = sqrt(beta_rx * beta_tx * 2 pi / lambda^2) * rcs * a^H(az_tx) w.
    The precoder carries the transmit power (||w||^2 <= tx_power); the
    cross section enters as an amplitude.
    """
    if rcs < 0:
        raise ValueError("rcs must be nonnegative")
    w = np.asarray(tx_precoder, dtype=complex)
    power = float(np.vdot(w, w).real)
    if power > cfg.tx_power + 1e-12:
        raise ValueError(
            f"tx precoder power {power!r} exceeds the AP limit {cfg.tx_power!r}")
    steering = array_response(cfg, tx_geometry.azimuth)
    inner = complex(np.vdot(steering, w))
    amplitude = math.sqrt(
        rx_geometry.path_gain * tx_geometry.path_gain
        * 2.0 * math.pi / cfg.wavelength ** 2) * rcs
    return SensingLinkGain.from_amplitude(amplitude * inner)


def assemble_measurement_covariance(blocks: list[CrbBlock],
                                    selection: ApSelection,
                                    include_angle: bool = False) -> np.ndarray:
    """Block-diagonal covariance over the selected APs, ascending AP index.

    Each AP contributes its 2x2 (range, radial velocity) block; with
    include_angle the full 3x3 block is used instead.
    """
    if selection.cardinality == 0:
        raise ValueError("no sensing receivers selected")
    by_index = {b.ap_index: b for b in blocks}
    missing = [i for i in selection.indices if i not in by_index]
    if missing:
        raise ValueError(f"missing covariance block for AP(s) {missing}")
    size = 3 if include_angle else 2
    total = size * selection.cardinality
    out = np.zeros((total, total))
    for pos, ap in enumerate(selection.indices):
        block = by_index[ap]
        part = block.full if include_angle else block.range_velocity
        out[pos * size:(pos + 1) * size, pos * size:(pos + 1) * size] = part
    return out
