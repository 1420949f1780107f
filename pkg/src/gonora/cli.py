"""Experiment front-end: config ingestion, sweeps, CSV emission, reports.

Modes: simulate (Monte Carlo replications), analyze (chain + reception
abstraction fixed point), compare (both; analytic rows carry a "#chain"
scenario_id suffix so the fixed CSV schema is preserved).

Exit codes: 0 success, 2 usage/config error, 3 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import dataclass, replace
from itertools import product
from pathlib import Path
from typing import Optional, Sequence

from .chain import (
    NumericalError,
    arrival_probability,
    attempt_probability,
    drop_probability,
    expected_attempts,
    fixed_point_solve,
)
from .config import ConfigError, ScenarioConfig, load_config, validate
from .engine import (
    CSV_COLUMNS,
    aggregate_csv_row,
    overload_factor,
    run_replications,
)
from .reception import fixed_point_coupling

SWEEP_AXES = ("overload_factor", "rrh_count", "p", "w0", "v_max")
_OUTPUT_ENV = "GONORA_OUTPUT_DIR"


class CliError(Exception):
    """Usage or input error; maps to exit code 2."""


@dataclass(frozen=True)
class SweepSpec:
    """One sweep axis: ordered values applied to a base scenario."""

    axis: str
    values: tuple[float, ...]

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise CliError(f"--sweep: unknown axis '{self.axis}' (choose from {', '.join(SWEEP_AXES)})")
        if not self.values:
            raise CliError(f"--sweep: axis '{self.axis}' needs at least one value")


@dataclass(frozen=True)
class RunPlan:
    """Everything one invocation will do."""

    scenario: ScenarioConfig
    sweeps: tuple[SweepSpec, ...]
    mode: str
    replications: int
    master_seed: int
    output: Path
    workers: int


def _parse_sweep(text: str) -> SweepSpec:
    if "=" not in text:
        raise CliError("--sweep: expected axis=v1,v2,... got " + repr(text))
    axis, _, vals = text.partition("=")
    try:
        values = tuple(float(v) for v in vals.split(",") if v != "")
    except ValueError as exc:
        raise CliError(f"--sweep: bad value in '{vals}': {exc}") from None
    return SweepSpec(axis=axis.strip(), values=values)


def parse_cli(argv: Sequence[str]) -> RunPlan:
    """Parse flags into a RunPlan; argparse rejects unknown flags (exit 2)."""
    parser = argparse.ArgumentParser(
        prog="gonora",
        description="Grant-free random access simulator and chain analysis.",
    )
    parser.add_argument("--config", required=True, help="TOML scenario file")
    parser.add_argument(
        "--sweep",
        action="append",
        default=[],
        metavar="AXIS=V1,V2,...",
        help=f"sweep axis ({'|'.join(SWEEP_AXES)}); repeatable, axes combine cartesian",
    )
    parser.add_argument("--mode", choices=("simulate", "analyze", "compare"), default="simulate")
    parser.add_argument("--replications", type=int, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--output", default="gonora_results.csv")
    parser.add_argument("--workers", type=int, default=1, help="parallel replication workers")
    args = parser.parse_args(list(argv))

    try:
        scenario = load_config(args.config)
    except ConfigError as exc:
        raise CliError(f"--config: {exc}") from None

    sweeps = tuple(_parse_sweep(s) for s in args.sweep)
    output = Path(args.output)
    out_dir = os.environ.get(_OUTPUT_ENV)
    if out_dir:
        output = Path(out_dir) / output.name
    return RunPlan(
        scenario=scenario,
        sweeps=sweeps,
        mode=args.mode,
        replications=args.replications if args.replications is not None else scenario.replications,
        master_seed=args.seed if args.seed is not None else scenario.master_seed,
        output=output,
        workers=max(args.workers, 1),
    )


def apply_axis(scenario: ScenarioConfig, axis: str, value: float) -> ScenarioConfig:
    """One sweep assignment on a copy of the scenario."""
    if axis == "overload_factor":
        m = int(round(value * scenario.prp.omega))
        if m < 1:
            raise ConfigError(["overload_factor: resulting device count must be ≥ 1"])
        if not scenario.traffic.is_homogeneous():
            raise ConfigError(["overload_factor sweep needs a homogeneous traffic profile"])
        traffic = replace(
            scenario.traffic,
            alpha=(scenario.traffic.alpha[0],) * m,
            lam=(scenario.traffic.lam[0],) * m,
        )
        return replace(scenario, traffic=traffic)
    if axis == "rrh_count":
        return replace(scenario, deployment=replace(scenario.deployment, rrh_count=int(value)))
    if axis == "p":
        return replace(scenario, gonora=replace(scenario.gonora, p=float(value), p_auto=False))
    if axis == "w0":
        return replace(scenario, gonora=replace(scenario.gonora, w0=int(value)))
    if axis == "v_max":
        return replace(scenario, gonora=replace(scenario.gonora, v_max=int(value)))
    raise CliError(f"unknown sweep axis '{axis}'")


def _axis_label(axis: str, value: float) -> str:
    if axis in ("rrh_count", "w0", "v_max"):
        return f"{axis}={int(value)}"
    return f"{axis}={value:g}"


def expand_points(plan: RunPlan) -> list[tuple[str, ScenarioConfig]]:
    """Cartesian expansion of the sweep axes, in declaration order."""
    if not plan.sweeps:
        return [("base", plan.scenario)]
    points = []
    axes = [s.axis for s in plan.sweeps]
    for combo in product(*(s.values for s in plan.sweeps)):
        scenario = plan.scenario
        for axis, value in zip(axes, combo):
            scenario = apply_axis(scenario, axis, value)
        pid = ";".join(_axis_label(a, v) for a, v in zip(axes, combo))
        points.append((pid, scenario))
    return points


def _chain_q(scenario: ScenarioConfig) -> float:
    if scenario.traffic.saturated:
        return 1.0
    return arrival_probability(scenario.traffic.lam[0], scenario.prp.tau)


def analyze_point(scenario: ScenarioConfig, master_seed: int) -> str:
    """Fixed-point solve; returns the metric fields as a CSV row fragment.

    The chain models one device against the population attempt rate; a
    heterogeneous profile is summarized by its first device's rate.
    """
    pi, outcomes = fixed_point_solve(
        scenario.gonora,
        _chain_q(scenario),
        fixed_point_coupling(scenario),
        damping=scenario.analysis.damping,
        tolerance=scenario.analysis.tolerance,
        max_iterations=scenario.analysis.max_iterations,
    )
    att = attempt_probability(pi)
    p_s = outcomes.p_s[0]
    m = scenario.traffic.m_count
    fields = [
        repr(overload_factor(scenario)),
        str(scenario.deployment.rrh_count),
        repr(scenario.gonora.p),
        repr(expected_attempts(outcomes)),
        repr(1.0 - p_s),
        repr(0.0),
        repr(m * att * p_s / scenario.prp.omega),
        repr(0.0),
        repr(drop_probability(outcomes)),
        repr(float("nan")),
        str(master_seed),
    ]
    return ",".join(fields)


def _error_row(pid: str, message: str) -> str:
    safe = message.replace(",", ";").replace("\n", " ")
    nan = repr(float("nan"))
    return ",".join(
        [f"{pid}#error:{safe}"] + [nan] * (len(CSV_COLUMNS.split(",")) - 2) + ["0"]
    )


def run_sweep(plan: RunPlan) -> str:
    """Execute the plan and return the CSV text (also written to plan.output).

    Per-point config failures become error rows and the sweep continues;
    numerical non-convergence aborts (exit code 3 at the CLI boundary).
    """
    lines = [CSV_COLUMNS]
    for pid, scenario in expand_points(plan):
        try:
            validate(scenario)
            if plan.mode in ("simulate", "compare"):
                agg = run_replications(
                    scenario, plan.replications, plan.master_seed, workers=plan.workers
                )
                lines.append(aggregate_csv_row(pid, scenario, agg, plan.master_seed))
            if plan.mode in ("analyze", "compare"):
                suffix = "#chain" if plan.mode == "compare" else ""
                lines.append(f"{pid}{suffix}," + analyze_point(scenario, plan.master_seed))
        except ConfigError as exc:
            lines.append(_error_row(pid, str(exc)))
    text = "\n".join(lines) + "\n"
    plan.output.parent.mkdir(parents=True, exist_ok=True)
    plan.output.write_text(text)
    return text


def parse_results(csv_text: str) -> list[dict]:
    """Parse an emitted CSV back into row dicts (floats where numeric)."""
    lines = [ln for ln in csv_text.strip().split("\n") if ln]
    if not lines or lines[0] != CSV_COLUMNS:
        raise CliError("malformed CSV: missing or wrong header")
    cols = CSV_COLUMNS.split(",")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != len(cols):
            raise CliError(f"malformed CSV row: {ln!r}")
        row: dict = {"scenario_id": parts[0]}
        for name, raw in zip(cols[1:], parts[1:]):
            try:
                row[name] = float(raw)
            except ValueError:
                raise CliError(f"malformed CSV field {name}={raw!r}") from None
        rows.append(row)
    return rows


def _ci_separated(a: dict, b: dict, field: str, ci_field: str) -> bool:
    """True when the two intervals do not overlap."""
    lo_a, hi_a = a[field] - a[ci_field], a[field] + a[ci_field]
    lo_b, hi_b = b[field] - b[ci_field], b[field] + b[ci_field]
    return hi_a < lo_b or hi_b < lo_a


def _trend_lines(rows: list[dict]) -> list[str]:
    """Check the expected directions: BLER up with overload, down with RRHs
    and (at low overload) with p; throughput up with RRHs."""
    out = []

    def groups(key_fields, sort_field):
        seen = {}
        for r in rows:
            if math.isnan(r["bler"]):
                continue
            key = tuple(r[k] for k in key_fields)
            seen.setdefault(key, []).append(r)
        return {k: sorted(v, key=lambda r: r[sort_field]) for k, v in seen.items() if len(v) > 1}

    for key, seq in groups(("rrh_count", "p"), "overload_factor").items():
        bad = [
            (a, b)
            for a, b in zip(seq, seq[1:])
            if b["bler"] < a["bler"] and _ci_separated(a, b, "bler", "bler_ci95")
        ]
        tag = f"rrh_count={key[0]:g}, p={key[1]:g}"
        if bad:
            out.append(f"trend violation: bler not nondecreasing in overload_factor at {tag}")
        else:
            out.append(f"trend ok: bler nondecreasing in overload_factor at {tag}")

    for key, seq in groups(("overload_factor", "p"), "rrh_count").items():
        bad_b = [
            (a, b)
            for a, b in zip(seq, seq[1:])
            if b["bler"] > a["bler"] and _ci_separated(a, b, "bler", "bler_ci95")
        ]
        bad_t = [
            (a, b)
            for a, b in zip(seq, seq[1:])
            if b["norm_throughput"] < a["norm_throughput"]
            and _ci_separated(a, b, "norm_throughput", "thr_ci95")
        ]
        tag = f"overload_factor={key[0]:g}"
        out.append(
            f"trend {'violation' if bad_b else 'ok'}: bler nonincreasing in rrh_count at {tag}"
        )
        out.append(
            f"trend {'violation' if bad_t else 'ok'}: throughput nondecreasing in rrh_count at {tag}"
        )

    for key, seq in groups(("overload_factor", "rrh_count"), "p").items():
        if key[0] > 1.0:
            continue
        bad = [
            (a, b)
            for a, b in zip(seq, seq[1:])
            if b["bler"] > a["bler"] and _ci_separated(a, b, "bler", "bler_ci95")
        ]
        tag = f"overload_factor={key[0]:g}, rrh_count={key[1]:g}"
        out.append(
            f"trend {'violation' if bad else 'ok'}: bler nonincreasing in p at {tag}"
        )
    return out


def emit_report(csv_text: str) -> str:
    """Human-readable summary of an emitted CSV: tables, trends, deltas."""
    rows = parse_results(csv_text)
    if not rows:
        return "no sweep rows\n"
    sim_rows = [r for r in rows if "#" not in r["scenario_id"] and "/rep" not in r["scenario_id"]]
    chain_rows = {r["scenario_id"][: -len("#chain")]: r for r in rows if r["scenario_id"].endswith("#chain")}
    error_rows = [r for r in rows if "#error" in r["scenario_id"]]

    lines = ["scenario_id  overload  rrh  p  bler±ci  thr±ci"]
    for r in sim_rows:
        lines.append(
            f"{r['scenario_id']}  {r['overload_factor']:g}  {r['rrh_count']:g}  "
            f"{r['p']:g}  {r['bler']:.4f}±{r['bler_ci95']:.4f}  "
            f"{r['norm_throughput']:.5f}±{r['thr_ci95']:.5f}"
        )
    if not sim_rows:
        lines = ["no sweep rows (empty table)"]

    trend = _trend_lines(sim_rows)
    if trend:
        lines.append("")
        lines.extend(trend)

    if chain_rows and sim_rows:
        lines.append("")
        lines.append("analytic vs simulated (bler delta = chain - sim):")
        for r in sim_rows:
            c = chain_rows.get(r["scenario_id"])
            if c is not None:
                lines.append(f"{r['scenario_id']}  delta={c['bler'] - r['bler']:+.4f}")

    if error_rows:
        lines.append("")
        for r in error_rows:
            lines.append(f"failed point: {r['scenario_id']}")
    return "\n".join(lines) + "\n"


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        plan = parse_cli(argv)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        csv_text = run_sweep(plan)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    sys.stdout.write(emit_report(csv_text))
    print(f"wrote {plan.output}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
