"""Command-line front end: scenario loading, batch runs, CSV/JSON/SVG output."""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .config import SystemConfig
from .geometry import TargetTruth
from .sensing import Action, SensingPolicy
from .simulate import (COMPARISON_ARMS, EpochRecord, Scenario, TrafficModel,
                       run_scenario)
from .tracking import StateEstimate

CSV_COLUMNS = (
    "epoch", "p_x_true", "v_x_true", "p_x_est", "v_x_est", "P00", "P11",
    "pred_angle_var_rad2", "action", "traffic", "selection_bitmask",
    "rate_proposed", "rate_conventional", "rate_perfect", "snr_proposed",
)


class ConfigError(ValueError):
    """Scenario file is missing, malformed, or violates an invariant."""


@dataclass(frozen=True)
class RunManifest:
    config_digest: str
    seed: int
    tool_version: str
    started_at: str
    finished_at: str
    outputs: tuple[str, ...]


# ---------------------------------------------------------------------------
# scenario loading

_TOP_KEYS = {"seed", "num_epochs", "phase_mode", "angle_mode",
             "symbol_alphabet", "arms", "system", "policy", "target",
             "initial_estimate", "traffic"}
_TARGET_KEYS = {"position_x", "velocity_x"}
_ESTIMATE_KEYS = {"mean", "covariance", "offset", "covariance_diag"}
_TRAFFIC_KEYS = {"mode", "on_probability", "intervals"}
_POLICY_KEYS = {"variance_threshold", "outage_probability",
                "subset_cardinality", "exclude_tx_ap"}
_SYSTEM_KEYS = {f.name for f in dataclasses.fields(SystemConfig)}
_SYSTEM_INTS = {"num_aps", "antennas_per_ap", "num_subcarriers",
                "num_symbols", "cp_length", "tx_ap"}


def _coerce_system_values(section: dict) -> dict:
    """Normalize YAML's loose scalar typing (e.g. '60.0e9' parses as str)."""
    out = {}
    for key, value in section.items():
        if value is None or key == "ap_positions":
            out[key] = value
        elif key in _SYSTEM_INTS:
            out[key] = int(value)
        else:
            try:
                out[key] = float(value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"system.{key}: not a number: {value!r}") from exc
    return out


def _require_mapping(value, name: str) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"{name}: expected a mapping, got {type(value).__name__}")
    return value


def _reject_unknown(section: dict, allowed: set[str], name: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"{name}: unknown key(s) {sorted(unknown)}")


def scenario_from_dict(raw: dict) -> Scenario:
    """Build a Scenario from a plain nested dict; unset fields take defaults."""
    raw = _require_mapping(raw, "config")
    _reject_unknown(raw, _TOP_KEYS, "config")

    system_raw = _require_mapping(raw.get("system"), "system")
    _reject_unknown(system_raw, _SYSTEM_KEYS, "system")
    system_raw = _coerce_system_values(system_raw)
    if system_raw.get("ap_positions") is not None:
        system_raw["ap_positions"] = tuple(
            tuple(float(x) for x in p) for p in system_raw["ap_positions"])
    try:
        system = SystemConfig(**system_raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"system: {exc}") from exc

    target_raw = _require_mapping(raw.get("target"), "target")
    _reject_unknown(target_raw, _TARGET_KEYS, "target")
    truth = TargetTruth(float(target_raw.get("position_x", 0.0)),
                        float(target_raw.get("velocity_x", 25.0)))

    est_raw = _require_mapping(raw.get("initial_estimate"), "initial_estimate")
    _reject_unknown(est_raw, _ESTIMATE_KEYS, "initial_estimate")
    if "mean" in est_raw:
        mean = np.asarray(est_raw["mean"], dtype=float)
    else:
        offset = np.asarray(est_raw.get("offset", (0.0, 0.0)), dtype=float)
        mean = np.array([truth.position_x, truth.velocity_x]) + offset
    if "covariance" in est_raw:
        cov = np.asarray(est_raw["covariance"], dtype=float)
    else:
        cov = np.diag(np.asarray(est_raw.get("covariance_diag", (100.0, 1.0)),
                                 dtype=float))
    try:
        estimate = StateEstimate(mean, cov)
    except ValueError as exc:
        raise ConfigError(f"initial_estimate: {exc}") from exc

    policy_raw = _require_mapping(raw.get("policy"), "policy")
    _reject_unknown(policy_raw, _POLICY_KEYS, "policy")
    try:
        policy = SensingPolicy(
            variance_threshold=float(policy_raw.get("variance_threshold",
                                                    system.variance_threshold)),
            outage_probability=float(policy_raw.get("outage_probability",
                                                    system.outage_probability)),
            subset_cardinality=int(policy_raw.get("subset_cardinality", 2)),
            exclude_tx_ap=bool(policy_raw.get("exclude_tx_ap", False)))
    except ValueError as exc:
        raise ConfigError(f"policy: {exc}") from exc

    traffic_raw = _require_mapping(raw.get("traffic"), "traffic")
    _reject_unknown(traffic_raw, _TRAFFIC_KEYS, "traffic")
    try:
        traffic = TrafficModel(
            mode=traffic_raw.get("mode", "bernoulli"),
            on_probability=float(traffic_raw.get("on_probability", 0.3)),
            intervals=tuple(tuple(iv) for iv
                            in traffic_raw.get("intervals", ())))
    except ValueError as exc:
        raise ConfigError(f"traffic: {exc}") from exc

    arms = raw.get("arms", list(COMPARISON_ARMS))
    if isinstance(arms, str):
        arms = [a for a in arms.split(",") if a]
    try:
        return Scenario(
            system=system, policy=policy, initial_truth=truth,
            initial_estimate=estimate,
            num_epochs=int(raw.get("num_epochs", 200)),
            traffic=traffic, seed=int(raw.get("seed", 7)),
            comparison_arms=tuple(a for a in arms if a != "proposed"),
            phase_mode=raw.get("phase_mode", "compensated"),
            angle_mode=raw.get("angle_mode", "per_ap"),
            symbol_alphabet=raw.get("symbol_alphabet", "qpsk"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_scenario(path: str | Path | None) -> Scenario:
    """Load a YAML scenario file; None or an empty file yields the defaults."""
    if path is None:
        return scenario_from_dict({})
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return scenario_from_dict(raw or {})


def default_scenario() -> Scenario:
    return scenario_from_dict({})


def scenario_to_dict(scenario: Scenario) -> dict:
    """Canonical plain-type representation (digests, round trips)."""
    cfg = scenario.system
    system = cfg.to_dict()
    system["ap_positions"] = [list(p) for p in cfg.ap_positions]
    return {
        "seed": scenario.seed,
        "num_epochs": scenario.num_epochs,
        "phase_mode": scenario.phase_mode,
        "angle_mode": scenario.angle_mode,
        "symbol_alphabet": scenario.symbol_alphabet,
        "arms": list(scenario.comparison_arms),
        "system": system,
        "policy": {
            "variance_threshold": scenario.policy.variance_threshold,
            "outage_probability": scenario.policy.outage_probability,
            "subset_cardinality": scenario.policy.subset_cardinality,
            "exclude_tx_ap": scenario.policy.exclude_tx_ap,
        },
        "target": {
            "position_x": scenario.initial_truth.position_x,
            "velocity_x": scenario.initial_truth.velocity_x,
        },
        "initial_estimate": {
            "mean": [float(x) for x in scenario.initial_estimate.mean],
            "covariance": [[float(x) for x in row]
                           for row in scenario.initial_estimate.covariance],
        },
        "traffic": {
            "mode": scenario.traffic.mode,
            "on_probability": scenario.traffic.on_probability,
            "intervals": [list(iv) for iv in scenario.traffic.intervals],
        },
    }


def config_digest(scenario: Scenario) -> str:
    canonical = json.dumps(scenario_to_dict(scenario), sort_keys=True,
                           separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


# ---------------------------------------------------------------------------
# record output

def _fmt(x: float) -> str:
    return f"{x:.17e}"


def _csv_row(rec: EpochRecord) -> str:
    rates = rec.rates
    on = rec.traffic_state == "ON"

    def rate_of(tag: str) -> str:
        return _fmt(rates[tag].rate) if on and tag in rates else ""

    snr = _fmt(rates["proposed"].snr) if on and "proposed" in rates else ""
    cells = [
        str(rec.epoch),
        _fmt(rec.truth.position_x), _fmt(rec.truth.velocity_x),
        _fmt(rec.estimate.mean[0]), _fmt(rec.estimate.mean[1]),
        _fmt(rec.estimate.covariance[0, 0]), _fmt(rec.estimate.covariance[1, 1]),
        _fmt(rec.predicted_angle_variance),
        rec.action.value, rec.traffic_state, str(rec.selection.bitmask),
        rate_of("proposed"), rate_of("conventional"), rate_of("perfect"), snr,
    ]
    return ",".join(cells)


def _threshold_crossing(variances: list[float], threshold: float) -> int | None:
    for k, v in enumerate(variances):
        if v < threshold:
            return k
    return None


def summarize_records(records: list[EpochRecord],
                      scenario: Scenario) -> dict:
    on_records = [r for r in records if r.traffic_state == "ON"]
    mean_rates = {}
    rate_tags = [t for t in ("proposed", "conventional", "perfect")
                 if t == "proposed" or t in scenario.comparison_arms]
    for tag in rate_tags:
        values = [r.rates[tag].rate for r in on_records if tag in r.rates]
        mean_rates[tag] = float(np.mean(values)) if values else None
    crossings = {"proposed": _threshold_crossing(
        [r.predicted_angle_variance for r in records],
        scenario.policy.variance_threshold)}
    if records and "random" in records[0].arms:
        crossings["random"] = _threshold_crossing(
            [r.arms["random"].predicted_angle_variance for r in records],
            scenario.policy.variance_threshold)
    return {
        "num_epochs": len(records),
        "on_epochs": len(on_records),
        "sensing_epochs": sum(r.action is Action.SENSING for r in records),
        "sensing_epoch_indices": [r.epoch for r in records
                                  if r.action is Action.SENSING],
        "mean_rates": mean_rates,
        "threshold_crossing_epoch": crossings,
    }


def write_records(records: list[EpochRecord], out_dir: str | Path,
                  scenario: Scenario,
                  formats: frozenset[str] = frozenset({"csv", "json"})
                  ) -> RunManifest:
    """Write epochs.csv and summary.json, then the run manifest (last)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc).isoformat()
    outputs: list[str] = []

    if "csv" in formats:
        lines = [",".join(CSV_COLUMNS)]
        lines.extend(_csv_row(rec) for rec in records)
        path = out_dir / "epochs.csv"
        path.write_text("\n".join(lines) + "\n", newline="")
        outputs.append(path.name)
    if "json" in formats:
        path = out_dir / "summary.json"
        path.write_text(json.dumps(summarize_records(records, scenario),
                                   indent=2, sort_keys=True) + "\n")
        outputs.append(path.name)

    manifest = RunManifest(
        config_digest=config_digest(scenario), seed=scenario.seed,
        tool_version=__version__, started_at=started,
        finished_at=datetime.now(timezone.utc).isoformat(),
        outputs=tuple(outputs))
    manifest_path = out_dir / "manifest.json"
    payload = dataclasses.asdict(manifest)
    payload["outputs"] = list(manifest.outputs)
    payload["canonical_config"] = scenario_to_dict(scenario)
    manifest_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return manifest


# ---------------------------------------------------------------------------
# SVG plots (plain text, no renderer needed)

_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 70, 20, 20, 45
_WIDTH, _HEIGHT = 900, 420


def _axes(x_label: str, y_label: str) -> list[str]:
    x0, y0 = _MARGIN_L, _HEIGHT - _MARGIN_B
    x1, y1 = _WIDTH - _MARGIN_R, _MARGIN_T
    return [
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
        f'<text x="{(x0 + x1) / 2:.0f}" y="{_HEIGHT - 8}" text-anchor="middle" '
        f'font-size="13">{x_label}</text>',
        f'<text x="16" y="{(y0 + y1) / 2:.0f}" text-anchor="middle" '
        f'font-size="13" transform="rotate(-90 16 {(y0 + y1) / 2:.0f})">'
        f'{y_label}</text>',
    ]


def _scaler(lo: float, hi: float, pix_lo: float, pix_hi: float):
    span = hi - lo if hi > lo else 1.0

    def to_pix(v: float) -> float:
        return pix_lo + (v - lo) / span * (pix_hi - pix_lo)

    return to_pix


def _polyline(points: list[tuple[float, float]], color: str,
              dash: str | None = None) -> str:
    coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
    dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
    return (f'<polyline fill="none" stroke="{color}" stroke-width="1.5"'
            f'{dash_attr} points="{coords}"/>')


def _svg(elements: list[str]) -> str:
    body = "\n".join(elements)
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" '
            f'height="{_HEIGHT}" viewBox="0 0 {_WIDTH} {_HEIGHT}">\n'
            f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>\n'
            f"{body}\n</svg>\n")


def _variance_svg(records: list[EpochRecord], threshold: float) -> str:
    n = len(records)
    series = {"proposed": [r.predicted_angle_variance for r in records]}
    if "random" in records[0].arms:
        series["random"] = [r.arms["random"].predicted_angle_variance
                            for r in records]
    floor = 1e-12
    logs = [math.log10(max(v, floor)) for vs in series.values() for v in vs]
    logs.append(math.log10(threshold))
    lo, hi = min(logs) - 0.2, max(logs) + 0.2
    to_x = _scaler(0, max(n - 1, 1), _MARGIN_L, _WIDTH - _MARGIN_R)
    to_y = _scaler(lo, hi, _HEIGHT - _MARGIN_B, _MARGIN_T)

    elems = _axes("epoch", "predicted angle variance [rad&#178;]")
    for power in range(math.ceil(lo), math.floor(hi) + 1):
        y = to_y(power)
        elems.append(f'<line x1="{_MARGIN_L - 4}" y1="{y:.2f}" '
                     f'x2="{_MARGIN_L}" y2="{y:.2f}" stroke="black"/>')
        elems.append(f'<text x="{_MARGIN_L - 8}" y="{y + 4:.2f}" '
                     f'text-anchor="end" font-size="11">1e{power}</text>')
    for k in range(0, n, max(1, n // 8)):
        x = to_x(k)
        elems.append(f'<line x1="{x:.2f}" y1="{_HEIGHT - _MARGIN_B}" '
                     f'x2="{x:.2f}" y2="{_HEIGHT - _MARGIN_B + 4}" stroke="black"/>')
        elems.append(f'<text x="{x:.2f}" y="{_HEIGHT - _MARGIN_B + 16}" '
                     f'text-anchor="middle" font-size="11">{k}</text>')

    y_thr = to_y(math.log10(threshold))
    elems.append(_polyline([(to_x(0), y_thr), (to_x(n - 1), y_thr)],
                           "#777777", dash="6,4"))
    deg = math.degrees(math.sqrt(threshold))
    elems.append(f'<text x="{_WIDTH - _MARGIN_R - 4}" y="{y_thr - 6:.2f}" '
                 f'text-anchor="end" font-size="11" fill="#777777">'
                 f'threshold ({deg:.1f}&#176; std)</text>')

    colors = {"proposed": "#1f77b4", "random": "#ff7f0e"}
    for idx, (tag, values) in enumerate(series.items()):
        pts = [(to_x(k), to_y(math.log10(max(v, floor))))
               for k, v in enumerate(values)]
        elems.append(_polyline(pts, colors[tag]))
        elems.append(f'<text x="{_MARGIN_L + 8}" y="{_MARGIN_T + 14 + 14 * idx}" '
                     f'font-size="12" fill="{colors[tag]}">{tag} selection</text>')
    for rec in records:
        if rec.action is Action.SENSING:
            x = to_x(rec.epoch)
            y = to_y(math.log10(max(rec.predicted_angle_variance, floor)))
            elems.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3.5" '
                         f'fill="none" stroke="#d62728" stroke-width="1.5"/>')
    elems.append(f'<text x="{_MARGIN_L + 8}" y="{_MARGIN_T + 14 + 14 * len(series)}" '
                 f'font-size="12" fill="#d62728">o sensing epoch</text>')
    return _svg(elems)


def _rate_svg(records: list[EpochRecord]) -> str:
    n = len(records)
    tags = ("proposed", "conventional", "perfect")
    colors = {"proposed": "#1f77b4", "conventional": "#ff7f0e",
              "perfect": "#2ca02c"}
    all_rates = [r.rates[t].rate for r in records for t in tags if t in r.rates]
    hi = max(all_rates) * 1.1 if all_rates else 1.0
    to_x = _scaler(0, max(n - 1, 1), _MARGIN_L, _WIDTH - _MARGIN_R)
    to_y = _scaler(0.0, hi, _HEIGHT - _MARGIN_B, _MARGIN_T)

    elems = _axes("epoch", "instantaneous rate [bit/symbol]")
    for k in range(0, n, max(1, n // 8)):
        x = to_x(k)
        elems.append(f'<text x="{x:.2f}" y="{_HEIGHT - _MARGIN_B + 16}" '
                     f'text-anchor="middle" font-size="11">{k}</text>')
    ticks = 5
    for i in range(ticks + 1):
        v = hi * i / ticks
        y = to_y(v)
        elems.append(f'<text x="{_MARGIN_L - 8}" y="{y + 4:.2f}" '
                     f'text-anchor="end" font-size="11">{v:.1f}</text>')

    for idx, tag in enumerate(tags):
        segment: list[tuple[float, float]] = []
        drew = False
        for rec in records:
            if tag in rec.rates:
                segment.append((to_x(rec.epoch), to_y(rec.rates[tag].rate)))
            else:
                if len(segment) > 1:
                    elems.append(_polyline(segment, colors[tag]))
                elif len(segment) == 1:
                    x, y = segment[0]
                    elems.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="2" '
                                 f'fill="{colors[tag]}"/>')
                drew = drew or bool(segment)
                segment = []
        if len(segment) > 1:
            elems.append(_polyline(segment, colors[tag]))
        elif len(segment) == 1:
            x, y = segment[0]
            elems.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="2" '
                         f'fill="{colors[tag]}"/>')
        elems.append(f'<text x="{_MARGIN_L + 8}" y="{_MARGIN_T + 14 + 14 * idx}" '
                     f'font-size="12" fill="{colors[tag]}">{tag}</text>')
    return _svg(elems)


def emit_plots(records: list[EpochRecord], out_dir: str | Path,
               variance_threshold: float) -> list[Path]:
    """Write variance.svg and rate.svg; returns the created paths."""
    if not records:
        raise ValueError("no records to plot")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    variance_path = out_dir / "variance.svg"
    variance_path.write_text(_variance_svg(records, variance_threshold))
    rate_path = out_dir / "rate.svg"
    rate_path.write_text(_rate_svg(records))
    return [variance_path, rate_path]


# ---------------------------------------------------------------------------
# entry point

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfisac",
        description="Cell-free ISAC tracking and predictive beamforming simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a scenario and write outputs")
    run_p.add_argument("--config", help="YAML scenario file (defaults if omitted)")
    run_p.add_argument("--seed", type=int, help="override the scenario seed")
    run_p.add_argument("--out", required=True, help="output directory")
    run_p.add_argument("--emit-plots", action="store_true",
                       help="also write variance.svg and rate.svg")
    run_p.add_argument("--arms",
                       help="comma list among proposed,conventional,random,perfect")

    val_p = sub.add_parser("validate", help="check a scenario file")
    val_p.add_argument("--config", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        scenario = load_scenario(args.config)
        if args.command == "run":
            if args.seed is not None:
                scenario = dataclasses.replace(scenario, seed=args.seed)
            if args.arms:
                arms = tuple(a.strip() for a in args.arms.split(",")
                             if a.strip() and a.strip() != "proposed")
                scenario = dataclasses.replace(scenario, comparison_arms=arms)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    if args.command == "validate":
        print(f"ok: {args.config} (digest {config_digest(scenario)[:12]})")
        return 0

    try:
        records = run_scenario(scenario)
        write_records(records, args.out, scenario)
        if args.emit_plots:
            emit_plots(records, args.out, scenario.policy.variance_threshold)
    except Exception as exc:  # noqa: BLE001 - report and signal runtime failure
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {scenario.num_epochs} epochs to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
