"""Downlink evaluation: predictive precoding, SNR and instantaneous rate."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import SystemConfig
from .geometry import TargetTruth, angle_from_position, array_response, geometry_for_ap
from .tracking import StateEstimate

PHASE_MODES = ("compensated", "geometric")
ANGLE_MODES = ("per_ap", "global")


@dataclass(frozen=True)
class Precoder:
    """Per-AP transmit vectors; each must respect the AP power limit."""

    per_ap: tuple[np.ndarray, ...]

    @property
    def stacked(self) -> np.ndarray:
        return np.concatenate(self.per_ap)


@dataclass(frozen=True)
class LinkResult:
    snr: float
    rate: float  # bits per symbol use, log2(1 + snr)
    method_tag: str


def _check_phase_mode(phase_mode: str) -> None:
    if phase_mode not in PHASE_MODES:
        raise ValueError(f"phase_mode must be one of {PHASE_MODES}")


def build_channel(cfg: SystemConfig, truth: TargetTruth,
                  phase_mode: str = "compensated") -> np.ndarray:
    """Stacked LOS channel e^{j phi_l} sqrt(beta_l) a(theta_l) over all APs.

    Compensated mode zeroes the per-AP phase (phase-synchronized APs with
    known offsets); geometric mode keeps the -2 pi R_l / lambda term.
    """
    _check_phase_mode(phase_mode)
    blocks = []
    for ap in range(cfg.num_aps):
        geo = geometry_for_ap(cfg, truth, ap)
        block = math.sqrt(geo.path_gain) * array_response(cfg, geo.azimuth)
        if phase_mode == "geometric":
            block = block * np.exp(1j * geo.phase)
        blocks.append(block)
    return np.concatenate(blocks)


def _precoder_for_position(cfg: SystemConfig, position_x: float,
                           power_fraction: float, angle_mode: str) -> Precoder:
    if not 0.0 < power_fraction <= 1.0:
        raise ValueError("power_fraction must lie in (0, 1]")
    if angle_mode not in ANGLE_MODES:
        raise ValueError(f"angle_mode must be one of {ANGLE_MODES}")
    amplitude = math.sqrt(power_fraction * cfg.tx_power / cfg.antennas_per_ap)
    global_angle = angle_from_position(cfg, position_x)
    vectors = []
    for ap in range(cfg.num_aps):
        if angle_mode == "per_ap":
            angle = math.atan2(position_x - cfg.ap_x(ap), cfg.corridor_offset)
        else:
            angle = global_angle
        vectors.append(amplitude * array_response(cfg, angle))
    return Precoder(tuple(vectors))


def predictive_precoder(cfg: SystemConfig, est: StateEstimate,
                        power_fraction: float = 1.0,
                        angle_mode: str = "per_ap") -> Precoder:
    """Maximum-ratio precoder steered at the tracked position.

    Each AP transmits sqrt(power_fraction * tx_power / N) a(angle), with the
    angle taken per AP toward the estimated position (default) or as the
    single origin-referenced angle (angle_mode="global").
    """
    return _precoder_for_position(cfg, float(est.mean[0]), power_fraction,
                                  angle_mode)


def evaluate_link(cfg: SystemConfig, channel: np.ndarray, precoder: Precoder,
                  method_tag: str = "proposed") -> LinkResult:
    """Coherent downlink SNR |h^H w|^2 / sigma_n^2 and its rate."""
    stacked = precoder.stacked
    if channel.shape != stacked.shape:
        raise ValueError(
            f"channel length {channel.shape} does not match precoder "
            f"length {stacked.shape}")
    snr = abs(np.vdot(channel, stacked)) ** 2 / cfg.noise_power
    return LinkResult(float(snr), math.log2(1.0 + snr), method_tag)


def conventional_baseline(cfg: SystemConfig, est: StateEstimate,
                          truth: TargetTruth, phase_mode: str = "compensated",
                          angle_mode: str = "per_ap") -> LinkResult:
    """Power-split baseline: half the AP power is reserved for sensing."""
    channel = build_channel(cfg, truth, phase_mode)
    precoder = predictive_precoder(cfg, est, power_fraction=0.5,
                                   angle_mode=angle_mode)
    result = evaluate_link(cfg, channel, precoder, method_tag="conventional")
    return result


def perfect_angle_bound(cfg: SystemConfig, truth: TargetTruth,
                        phase_mode: str = "compensated") -> LinkResult:
    """Full-power precoding from the true per-AP angles."""
    channel = build_channel(cfg, truth, phase_mode)
    precoder = _precoder_for_position(cfg, truth.position_x, 1.0, "per_ap")
    return evaluate_link(cfg, channel, precoder, method_tag="perfect")
