"""Epoch loop: truth propagation, traffic, sensing, tracking and rates.

Each epoch advances the filter, decides whether to sense, selects the
receive APs, synthesizes estimator outputs as Gaussian draws with the
estimation-bound covariance, and evaluates the downlink for the tracked,
power-split and perfect-knowledge methods. Comparison arms (conventional:
sensing every epoch at half power with all APs; random: random receive
subsets) run on the same per-epoch random streams so arms stay comparable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .comms import (LinkResult, build_channel, conventional_baseline,
                    evaluate_link, perfect_angle_bound, predictive_precoder)
from .config import SystemConfig
from .crb import (CrbBlock, WaveformSpec, all_ones_waveform, crb_angle,
                  crb_delay_doppler, qpsk_waveform, sensing_gain,
                  transform_to_range_velocity)
from .geometry import TargetTruth, array_response, geometry_for_ap
from .selection import ApSelection
from .sensing import (Action, SensingPolicy, decide_action, select_rx_aps)
from .tracking import (MeasurementSet, MotionModel, StateEstimate,
                       angle_estimate_and_variance, measurement_model, predict,
                       update)

COMPARISON_ARMS = ("conventional", "random", "perfect")

_STREAM_CODES = {"rcs": 1, "measurement": 2, "symbols": 3, "traffic": 4,
                 "selection": 5}


@dataclass(frozen=True)
class RngStream:
    """Counter-style stream: (seed, stream, epoch) pins the draws exactly."""

    seed: int
    stream_id: str

    def generator(self, epoch: int = 0) -> np.random.Generator:
        code = _STREAM_CODES[self.stream_id]
        key = np.array([self.seed & 0xFFFFFFFFFFFFFFFF,
                        (code << 32) + epoch], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class TrafficModel:
    """Bernoulli per-epoch ON draws, or explicit [start, end) ON intervals."""

    mode: str = "bernoulli"
    on_probability: float = 0.3
    intervals: tuple[tuple[int, int], ...] = ()

    def __post_init__(self) -> None:
        if self.mode not in ("bernoulli", "intervals"):
            raise ValueError("traffic mode must be 'bernoulli' or 'intervals'")
        if self.mode == "bernoulli" and not 0.0 <= self.on_probability <= 1.0:
            raise ValueError("on_probability must lie in [0, 1]")
        object.__setattr__(self, "intervals",
                           tuple((int(s), int(e)) for s, e in self.intervals))

    def is_on(self, epoch: int, rng: np.random.Generator) -> bool:
        if self.mode == "bernoulli":
            return bool(rng.random() < self.on_probability)
        return any(start <= epoch < end for start, end in self.intervals)


@dataclass(frozen=True)
class Scenario:
    system: SystemConfig
    policy: SensingPolicy
    initial_truth: TargetTruth
    initial_estimate: StateEstimate
    num_epochs: int = 200
    traffic: TrafficModel = TrafficModel()
    seed: int = 7
    comparison_arms: tuple[str, ...] = COMPARISON_ARMS
    phase_mode: str = "compensated"
    angle_mode: str = "per_ap"
    symbol_alphabet: str = "qpsk"   # or "ones"

    def __post_init__(self) -> None:
        if self.num_epochs < 1:
            raise ValueError("num_epochs: must be >= 1")
        unknown = set(self.comparison_arms) - set(COMPARISON_ARMS)
        if unknown:
            raise ValueError(f"unknown comparison arms {sorted(unknown)}")
        object.__setattr__(self, "comparison_arms",
                           tuple(a for a in COMPARISON_ARMS
                                 if a in self.comparison_arms))
        if self.symbol_alphabet not in ("qpsk", "ones"):
            raise ValueError("symbol_alphabet must be 'qpsk' or 'ones'")
        for start, end in self.traffic.intervals:
            if not 0 <= start < end <= self.num_epochs:
                raise ValueError(
                    f"traffic interval [{start}, {end}) outside "
                    f"[0, {self.num_epochs})")


@dataclass(frozen=True)
class ArmEpoch:
    """Per-epoch snapshot of a comparison arm's tracker."""

    action: Action
    selection: ApSelection
    predicted_angle_variance: float
    estimate: StateEstimate


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    truth: TargetTruth
    action: Action
    traffic_state: str               # "ON" or "OFF"
    selection: ApSelection
    predicted_angle_variance: float
    estimate: StateEstimate
    rates: dict[str, LinkResult]
    rcs_draws: tuple[float, ...]
    arms: dict[str, ArmEpoch] = field(default_factory=dict)


@dataclass
class SimState:
    """Mutable loop state threaded through run_epoch."""

    epoch: int
    truth: TargetTruth
    estimates: dict[str, StateEstimate]
    waveform: WaveformSpec
    model: MotionModel


def propagate_truth(truth: TargetTruth, cfg: SystemConfig) -> TargetTruth:
    """Noiseless constant-velocity step over one epoch."""
    return TargetTruth(truth.position_x + truth.velocity_x * cfg.epoch_duration,
                       truth.velocity_x)


def draw_rcs(rng: np.random.Generator, cfg: SystemConfig,
             num_aps: int) -> np.ndarray:
    """Per-AP fluctuating cross sections: exponential with the configured mean."""
    if not cfg.mean_rcs > 0:
        raise ValueError("mean_rcs: must be strictly positive")
    return rng.exponential(cfg.mean_rcs, size=num_aps)


def _sensing_tx_precoder(cfg: SystemConfig, tx_azimuth: float,
                         power_fraction: float) -> np.ndarray:
    amp = math.sqrt(power_fraction * cfg.tx_power / cfg.antennas_per_ap)
    return amp * array_response(cfg, tx_azimuth)


def crb_blocks_for_state(cfg: SystemConfig, waveform: WaveformSpec,
                         position_x: float, velocity_x: float,
                         rcs: np.ndarray, power_fraction: float = 1.0,
                         aps: tuple[int, ...] | None = None) -> list[CrbBlock]:
    """Per-AP (range, velocity, angle) bound blocks at a reference state.

    The sensing transmitter steers at its own azimuth of the reference
    position. Bounds are evaluated at zero delay/Doppler: the underlying
    Fisher information depends on the waveform grid only through the symbol
    magnitudes, so the evaluation point does not change the result.
    """
    state = TargetTruth(position_x, velocity_x)
    tx_geom = geometry_for_ap(cfg, state, cfg.tx_ap)
    precoder = _sensing_tx_precoder(cfg, tx_geom.azimuth, power_fraction)
    blocks = []
    for ap in (range(cfg.num_aps) if aps is None else aps):
        rx_geom = geometry_for_ap(cfg, state, ap)
        gain = sensing_gain(cfg, tx_geom, rx_geom, float(rcs[ap]), precoder)
        dd = crb_delay_doppler(waveform, cfg, gain, rx_geom.azimuth, 0.0, 0.0)
        ang = crb_angle(waveform, cfg, gain, rx_geom.azimuth, 0.0, 0.0)
        blocks.append(transform_to_range_velocity(dd, ang, cfg, ap_index=ap))
    return blocks


def synthesize_measurement(cfg: SystemConfig, truth: TargetTruth,
                           selection: ApSelection, rcs: np.ndarray,
                           rng: np.random.Generator, *,
                           waveform: WaveformSpec,
                           power_fraction: float = 1.0,
                           noise_scale: float = 1.0,
                           filter_mean: np.ndarray | None = None,
                           truth_blocks: list[CrbBlock] | None = None
                           ) -> MeasurementSet:
    """Estimator outputs as Gaussian draws around the true geometry.

    Noise covariance per AP is the (range, velocity) bound at the TRUE
    state with the epoch's cross-section draws. The attached covariance is
    evaluated at filter_mean when given (the tracker linearization point),
    otherwise at the truth. Standard normals are drawn for every AP so the
    subset choice never shifts the stream.
    """
    if selection.cardinality == 0:
        raise ValueError("no sensing receivers selected")
    if truth_blocks is None:
        truth_blocks = crb_blocks_for_state(
            cfg, waveform, truth.position_x, truth.velocity_x, rcs,
            power_fraction, aps=selection.indices)
    by_index = {b.ap_index: b for b in truth_blocks}
    normals = rng.standard_normal(2 * cfg.num_aps)

    values = measurement_model(cfg, (truth.position_x, truth.velocity_x),
                               selection)
    for pos, ap in enumerate(selection.indices):
        chol = np.linalg.cholesky(by_index[ap].range_velocity)
        values[2 * pos:2 * pos + 2] += noise_scale * (
            chol @ normals[2 * ap:2 * ap + 2])

    if filter_mean is None:
        filter_blocks = [by_index[ap] for ap in selection.indices]
    else:
        filter_blocks = crb_blocks_for_state(
            cfg, waveform, float(filter_mean[0]), float(filter_mean[1]), rcs,
            power_fraction, aps=selection.indices)
    cov = np.zeros((2 * selection.cardinality, 2 * selection.cardinality))
    for pos, block in enumerate(filter_blocks):
        cov[2 * pos:2 * pos + 2, 2 * pos:2 * pos + 2] = block.range_velocity
    return MeasurementSet(values, cov, selection)


def _random_selection(cfg: SystemConfig, policy: SensingPolicy,
                      rng: np.random.Generator) -> ApSelection:
    available = [l for l in range(cfg.num_aps)
                 if not (policy.exclude_tx_ap and l == cfg.tx_ap)]
    k = policy.subset_cardinality
    if k > 0:
        if k > len(available):
            raise ValueError("no feasible subset for the random arm")
        picked = rng.choice(len(available), size=k, replace=False)
        return ApSelection.from_indices(cfg.num_aps,
                                        [available[i] for i in picked])
    mask = int(rng.integers(1, 2 ** len(available)))
    return ApSelection.from_indices(
        cfg.num_aps, [available[i] for i in range(len(available))
                      if mask >> i & 1])


def _advance_tracked_arm(scenario: Scenario, state: SimState, arm: str,
                         truth_now: TargetTruth, rcs: np.ndarray,
                         traffic_on: bool, measurement_rng_factory,
                         selection_rng) -> ArmEpoch:
    """One epoch of the threshold-gated tracker (proposed or random arm)."""
    cfg, policy = scenario.system, scenario.policy
    prior = state.estimates[arm]
    predicted = predict(prior, state.model)
    _, variance = angle_estimate_and_variance(cfg, predicted)
    action = decide_action(variance, policy)
    if traffic_on:
        action = Action.NO_SENSING  # data frames carry no sensing signal
    selection = ApSelection.empty(cfg.num_aps)
    estimate = predicted
    if action is Action.SENSING:
        if arm == "random":
            selection = _random_selection(cfg, policy, selection_rng)
        else:
            mean_rcs = np.full(cfg.num_aps, cfg.mean_rcs)
            planning = crb_blocks_for_state(cfg, state.waveform,
                                            float(predicted.mean[0]),
                                            float(predicted.mean[1]),
                                            mean_rcs)
            selection = select_rx_aps(cfg, prior, state.model, policy, planning)
        meas = synthesize_measurement(
            cfg, truth_now, selection, rcs, measurement_rng_factory(),
            waveform=state.waveform, filter_mean=predicted.mean)
        estimate = update(predicted, meas, cfg)
    state.estimates[arm] = estimate
    return ArmEpoch(action, selection, variance, estimate)


def _advance_conventional_arm(scenario: Scenario, state: SimState,
                              truth_now: TargetTruth, rcs: np.ndarray,
                              measurement_rng_factory) -> ArmEpoch:
    """Conventional frame: sensing every epoch at half power with all APs."""
    cfg = scenario.system
    predicted = predict(state.estimates["conventional"], state.model)
    _, variance = angle_estimate_and_variance(cfg, predicted)
    selection = ApSelection.full(cfg.num_aps)
    meas = synthesize_measurement(
        cfg, truth_now, selection, rcs, measurement_rng_factory(),
        waveform=state.waveform, power_fraction=0.5,
        filter_mean=predicted.mean)
    estimate = update(predicted, meas, cfg)
    state.estimates["conventional"] = estimate
    return ArmEpoch(Action.SENSING, selection, variance, estimate)


def run_epoch(state: SimState, scenario: Scenario) -> EpochRecord:
    """Advance one epoch and record every arm's outcome."""
    cfg = scenario.system
    k = state.epoch
    streams = {name: RngStream(scenario.seed, name)
               for name in _STREAM_CODES}
    truth_now = propagate_truth(state.truth, cfg)
    rcs = draw_rcs(streams["rcs"].generator(k), cfg, cfg.num_aps)
    traffic_on = scenario.traffic.is_on(k, streams["traffic"].generator(k))
    meas_rng = streams["measurement"].generator  # fresh, identical per arm

    proposed = _advance_tracked_arm(
        scenario, state, "proposed", truth_now, rcs, traffic_on,
        lambda: meas_rng(k), None)
    arms: dict[str, ArmEpoch] = {}
    if "random" in scenario.comparison_arms:
        arms["random"] = _advance_tracked_arm(
            scenario, state, "random", truth_now, rcs, traffic_on,
            lambda: meas_rng(k), streams["selection"].generator(k))
    if "conventional" in scenario.comparison_arms:
        arms["conventional"] = _advance_conventional_arm(
            scenario, state, truth_now, rcs, lambda: meas_rng(k))

    rates: dict[str, LinkResult] = {}
    if traffic_on:
        channel = build_channel(cfg, truth_now, scenario.phase_mode)
        precoder = predictive_precoder(cfg, proposed.estimate,
                                       angle_mode=scenario.angle_mode)
        rates["proposed"] = evaluate_link(cfg, channel, precoder, "proposed")
        if "conventional" in scenario.comparison_arms:
            rates["conventional"] = conventional_baseline(
                cfg, state.estimates["conventional"], truth_now,
                scenario.phase_mode, scenario.angle_mode)
        if "perfect" in scenario.comparison_arms:
            rates["perfect"] = perfect_angle_bound(cfg, truth_now,
                                                   scenario.phase_mode)

    state.truth = truth_now
    state.epoch = k + 1
    return EpochRecord(
        epoch=k, truth=truth_now, action=proposed.action,
        traffic_state="ON" if traffic_on else "OFF",
        selection=proposed.selection,
        predicted_angle_variance=proposed.predicted_angle_variance,
        estimate=proposed.estimate, rates=rates,
        rcs_draws=tuple(float(x) for x in rcs), arms=arms)


def initial_sim_state(scenario: Scenario) -> SimState:
    waveform = (all_ones_waveform(scenario.system)
                if scenario.symbol_alphabet == "ones"
                else qpsk_waveform(scenario.system,
                                   RngStream(scenario.seed,
                                             "symbols").generator()))
    estimates = {"proposed": scenario.initial_estimate}
    for arm in scenario.comparison_arms:
        if arm != "perfect":
            estimates[arm] = scenario.initial_estimate
    return SimState(epoch=0, truth=scenario.initial_truth,
                    estimates=estimates, waveform=waveform,
                    model=MotionModel.from_config(scenario.system))


def run_scenario(scenario: Scenario) -> list[EpochRecord]:
    """Run the full epoch loop; deterministic given the scenario seed."""
    state = initial_sim_state(scenario)
    return [run_epoch(state, scenario) for _ in range(scenario.num_epochs)]
