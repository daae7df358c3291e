"""Sensing management: when to sense and which APs should listen."""

from __future__ import annotations

import enum
from itertools import chain, combinations
from statistics import NormalDist
from dataclasses import dataclass

from .config import SystemConfig
from .crb import CrbBlock, assemble_measurement_covariance
from .geometry import angle_slope_from_position
from .selection import ApSelection
from .tracking import (MotionModel, StateEstimate, measurement_jacobian,
                       posterior_covariance, predict)

__all__ = [
    "Action", "ApSelection", "SensingPolicy", "hpbw",
    "variance_threshold_from_hpbw", "decide_action",
    "predict_variance_for_selection", "select_rx_aps",
]

_MAX_EXHAUSTIVE_APS = 20


class Action(enum.Enum):
    SENSING = "Sensing"
    NO_SENSING = "NoSensing"


@dataclass(frozen=True)
class SensingPolicy:
    """Trigger threshold and receive-subset constraints."""

    variance_threshold: float       # rad^2
    outage_probability: float = 0.05
    subset_cardinality: int = 2     # 0 means unconstrained
    exclude_tx_ap: bool = False

    def __post_init__(self) -> None:
        if not self.variance_threshold > 0:
            raise ValueError("variance_threshold: must be strictly positive")
        if not 0.0 < self.outage_probability < 1.0:
            raise ValueError("outage_probability: must lie in (0, 1)")
        if self.subset_cardinality < 0:
            raise ValueError("subset_cardinality: must be >= 0")

    @classmethod
    def from_config(cls, cfg: SystemConfig, subset_cardinality: int = 2,
                    exclude_tx_ap: bool = False) -> "SensingPolicy":
        return cls(cfg.variance_threshold, cfg.outage_probability,
                   subset_cardinality, exclude_tx_ap)


def hpbw(cfg: SystemConfig) -> float:
    """Broadside half-power beamwidth of the AP array: 0.886 lambda / (N d)."""
    if cfg.antennas_per_ap < 2:
        raise ValueError("beamwidth undefined for a single-antenna array")
    return 0.886 * cfg.wavelength / (cfg.antennas_per_ap * cfg.antenna_spacing)


def variance_threshold_from_hpbw(beamwidth: float, epsilon: float) -> float:
    """Angle variance keeping the estimate inside the beamwidth w.p. 1-epsilon.

    Returns (beamwidth / q)^2 with q the standard normal quantile at
    1 - epsilon/2.
    """
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    quantile = NormalDist().inv_cdf(1.0 - epsilon / 2.0)
    return (beamwidth / quantile) ** 2


def decide_action(predicted_variance: float, policy: SensingPolicy) -> Action:
    """Sense only when the predicted angle variance exceeds the threshold."""
    if predicted_variance < 0:
        raise ValueError("predicted variance must be nonnegative")
    if predicted_variance > policy.variance_threshold:
        return Action.SENSING
    return Action.NO_SENSING


def predict_variance_for_selection(cfg: SystemConfig, est: StateEstimate,
                                   model: MotionModel, selection: ApSelection,
                                   crbs: list[CrbBlock]) -> float:
    """Predicted angle error variance after a hypothetical sensing epoch.

    Propagates the estimate one epoch, applies the covariance part of a
    measurement update with the selected APs (no measurement value is
    needed), and maps the position variance through the angle slope. The
    empty selection gives the no-sensing hypothesis.
    """
    predicted = predict(est, model)
    cov = predicted.covariance
    if selection.cardinality > 0:
        jac = measurement_jacobian(cfg, predicted.mean, selection)
        meas_cov = assemble_measurement_covariance(crbs, selection)
        cov = posterior_covariance(cov, jac, meas_cov)
    slope = angle_slope_from_position(cfg, float(predicted.mean[0]))
    return float(cov[0, 0]) * slope ** 2


def select_rx_aps(cfg: SystemConfig, est: StateEstimate, model: MotionModel,
                  policy: SensingPolicy, crbs: list[CrbBlock]) -> ApSelection:
    """Exhaustive receive-AP subset minimizing the predicted angle variance.

    Candidates are all subsets of the configured cardinality (all nonempty
    subsets when unconstrained). Ties break toward fewer APs, then the
    lowest bitmask.
    """
    if cfg.num_aps > _MAX_EXHAUSTIVE_APS:
        raise ValueError(
            f"exhaustive subset search capped at {_MAX_EXHAUSTIVE_APS} APs")
    available = [l for l in range(cfg.num_aps)
                 if not (policy.exclude_tx_ap and l == cfg.tx_ap)]
    k = policy.subset_cardinality
    if k > 0:
        if k > len(available):
            raise ValueError(
                f"no feasible subset: cardinality {k} exceeds the "
                f"{len(available)} available APs")
        candidates = combinations(available, k)
    else:
        candidates = chain.from_iterable(
            combinations(available, r) for r in range(1, len(available) + 1))

    best: tuple[float, int, int] | None = None
    best_subset: tuple[int, ...] | None = None
    for subset in candidates:
        sel = ApSelection.from_indices(cfg.num_aps, subset)
        variance = predict_variance_for_selection(cfg, est, model, sel, crbs)
        key = (variance, sel.cardinality, sel.bitmask)
        if best is None or key < best:
            best, best_subset = key, subset
    if best_subset is None:
        raise ValueError("no feasible subset to select from")
    return ApSelection.from_indices(cfg.num_aps, best_subset)
