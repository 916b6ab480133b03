"""Command line harness: simulate, estimate, compare and mission."""
from __future__ import annotations

import argparse
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
import logging
import math
import sys
from typing import Any, Sequence

import numpy as np
import voluptuous as vol
import yaml

from . import VERSION, setup_debug_logging
from .agv_sim import (
    TraversalObservation,
    build_sim_config,
    generate_reference_series,
    read_series_csv,
    reference_truth,
    write_series_csv,
)
from .config import config_digest, flatten_settings, load_settings, method_config_from_settings
from .const import (
    BATTERY_AGE_DRAINED,
    BATTERY_AGE_NEW,
    COMPARE_HEADER,
    DOMAIN,
    ESTIMATE_HEADER,
    EXIT_BAD_INPUT,
    EXIT_INTERNAL,
    EXIT_MISSION_ABORTED,
    EXIT_OK,
    LOG_LEVELS,
    METHOD_LSMW,
    METHOD_ORDER,
    METHOD_TEMPLATES,
    MISSION_HEADER,
    WINNER_TIE_TOLERANCE,
)
from .coordinator import MissionCoordinator, MissionLog
from .estimators import (
    ErrorStats,
    MethodConfig,
    error_stats,
    make_forecaster,
    min_series_length,
    run_estimator,
)
from .exceptions import (
    AgvCostError,
    ConfigError,
    GraphError,
    NumericBreakdownError,
    PlanningFailedError,
    RobotHaltedError,
    SeriesFormatError,
    SeriesTooShortError,
    SingularWindowError,
    UnreachableError,
    UsageError,
)
from .traffic_graph import TrafficGraph, load_graph_file
from .utils import digest_lines, format_number, write_csv_frame

_LOGGER = logging.getLogger(__name__)

# Most specific first
EXIT_CODES: tuple[tuple[type[BaseException], int], ...] = (
    (ConfigError, EXIT_BAD_INPUT),
    (GraphError, EXIT_BAD_INPUT),
    (UnreachableError, EXIT_BAD_INPUT),
    (SeriesFormatError, EXIT_BAD_INPUT),
    (SeriesTooShortError, EXIT_BAD_INPUT),
    (PlanningFailedError, EXIT_MISSION_ABORTED),
    (RobotHaltedError, EXIT_MISSION_ABORTED),
    (UsageError, EXIT_INTERNAL),
    (SingularWindowError, EXIT_INTERNAL),
    (NumericBreakdownError, EXIT_INTERNAL),
    (OSError, EXIT_BAD_INPUT),
)

# Parameter schema for the estimate command
ESTIMATE_PARAMS_SCHEMA = vol.Schema(
    {
        vol.Required("method"): vol.In(METHOD_ORDER),
        vol.Optional("window"): vol.Any(None, vol.All(vol.Coerce(int), vol.Range(min=1))),
        vol.Optional("lam"): vol.Any(
            None, vol.All(vol.Coerce(float), vol.Range(min=0, max=1, min_included=False))
        ),
        vol.Optional("alpha1"): vol.Any(
            None,
            vol.All(
                vol.Coerce(float),
                vol.Range(min=0, max=1, min_included=False, max_included=False),
            ),
        ),
        vol.Optional("alpha2"): vol.Any(
            None, vol.All(vol.Coerce(float), vol.Range(min=0, min_included=False))
        ),
        vol.Optional("alpha3"): vol.Any(None, vol.All(vol.Coerce(float), vol.Range(min=0))),
        vol.Optional("q"): vol.Any(None, vol.All(vol.Coerce(float), vol.Range(min=0))),
        vol.Optional("r"): vol.Any(
            None, vol.All(vol.Coerce(float), vol.Range(min=0, min_included=False))
        ),
    }
)


@dataclass(frozen=True)
class RunManifest:
    """What produced a set of outputs."""

    command: str
    version: str
    seed: int
    digest: str
    config: list[str]
    outputs: list[str]
    config_path: str | None = None
    graph_path: str | None = None
    graph_digest: str | None = None
    series_path: str | None = None
    timestamp: str = field(
        default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds")
    )


@dataclass(frozen=True)
class CompareReport:
    """Per-method statistics on one reference series."""

    arc: str
    series_length: int
    plateau: float
    digest: str
    stats: dict[str, ErrorStats]
    tracking_rmse: dict[str, float]
    winner: str

    def normalised_rmse(self, method: str) -> float:
        """Residual rmse of ``method`` relative to the plateau time."""
        return self.stats[method].rmse / self.plateau


def _open_output(path: str):
    return open(path, "w", encoding="utf-8", newline="\n")


def write_manifest(path: str, manifest: RunManifest) -> None:
    with _open_output(path) as file:
        yaml.safe_dump(asdict(manifest), file, sort_keys=True, default_flow_style=False)


def select_winner(stats: dict[str, ErrorStats]) -> str:
    """Lowest residual rmse; near ties resolved by the method order."""
    best = min(item.rmse for item in stats.values())
    for method in METHOD_ORDER:
        if method in stats and stats[method].rmse - best <= WINNER_TIE_TOLERANCE:
            return method
    raise UsageError("no statistics to rank")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def simulate(
    settings: dict[str, Any],
    graph: TrafficGraph,
    out: str,
    arc: str | None = None,
    all_arcs: bool = False,
) -> list[TraversalObservation]:
    """Generate the reference series (or one per arc) and write it as CSV."""
    config = build_sim_config(settings, graph)
    if all_arcs:
        series = [
            obs for ident in sorted(graph.arcs)
            for obs in generate_reference_series(config, ident)
        ]
        series.sort(key=lambda obs: (obs.start_time, obs.arc))
    else:
        series = generate_reference_series(config, arc)
    with _open_output(out) as file:
        write_series_csv(file, series)
    return series


def estimate(
    series: Sequence[TraversalObservation], method: MethodConfig, out: str
) -> ErrorStats:
    """One-step-ahead forecasts for a series, one forecaster per arc."""
    forecasters = {}
    rows = []
    residuals = []
    for obs in series:
        forecaster = forecasters.get(obs.arc)
        if forecaster is None:
            forecaster = forecasters[obs.arc] = make_forecaster(method)
        predicted = forecaster.forecast()
        forecaster.observe(obs.duration)
        if predicted is None:
            rows.append((format_number(obs.start_time), format_number(obs.duration), "", ""))
            continue
        residual = obs.duration - predicted
        residuals.append(residual)
        rows.append(
            (
                format_number(obs.start_time),
                format_number(obs.duration),
                format_number(predicted),
                format_number(residual),
            )
        )
    if not residuals:
        raise SeriesTooShortError(len(series), min_series_length(method), method.kind)
    stats = error_stats(residuals)
    with _open_output(out) as file:
        write_csv_frame(
            file,
            ESTIMATE_HEADER,
            rows,
            [
                f"rmse={format_number(stats.rmse)} std={format_number(stats.std)} "
                f"mean={format_number(stats.mean)} count={stats.count}"
            ],
        )
    return stats


def compare(settings: dict[str, Any], graph: TrafficGraph, out: str | None = None) -> CompareReport:
    """Run every estimator on the reference series and rank them."""
    config = build_sim_config(settings, graph)
    series = generate_reference_series(config)
    truth = reference_truth(config)
    plateau = float(np.median(truth))

    stats: dict[str, ErrorStats] = {}
    tracking: dict[str, float] = {}
    for method in METHOD_ORDER:
        forecasts, stats[method] = run_estimator(
            method_config_from_settings(settings, method), series
        )
        errors = [
            forecast - true_value
            for forecast, true_value in zip(forecasts, truth)
            if forecast is not None
        ]
        tracking[method] = math.sqrt(math.fsum(e * e for e in errors) / len(errors)) / plateau

    report = CompareReport(
        arc=config.reference_arc,
        series_length=len(series),
        plateau=plateau,
        digest=config_digest(settings),
        stats=stats,
        tracking_rmse=tracking,
        winner=select_winner(stats),
    )
    _LOGGER.info("Winner on %s: %s", report.arc, report.winner)
    if out is not None:
        write_compare_csv(out, report)
    return report


def write_compare_csv(path: str, report: CompareReport) -> None:
    rows = []
    for method in METHOD_ORDER:
        item = report.stats[method]
        rows.append(
            [
                method,
                str(item.count),
                format_number(item.mean),
                format_number(item.std),
                format_number(item.rmse),
                format_number(item.max_abs),
                format_number(item.mean_abs),
                format_number(report.tracking_rmse[method]),
            ]
        )
    trailer = [
        f"winner={report.winner}",
        f"series_length={report.series_length}",
        f"digest={report.digest}",
        f"plateau={format_number(report.plateau)}",
        f"arc={report.arc}",
        f"lsmw_rmse_norm={format_number(report.normalised_rmse(METHOD_LSMW))}",
    ]
    with _open_output(path) as file:
        write_csv_frame(file, COMPARE_HEADER, rows, trailer)


def format_compare_report(report: CompareReport) -> str:
    lines = [
        f"arc {report.arc}: {report.series_length} samples, "
        f"plateau {report.plateau:.4f} s, digest {report.digest}",
        f"{'method':<14}{'rmse':>12}{'std':>12}{'mean':>12}{'max_abs':>12}{'tracking':>12}",
    ]
    for method in METHOD_ORDER:
        item = report.stats[method]
        lines.append(
            f"{method:<14}{item.rmse:>12.6f}{item.std:>12.6f}{item.mean:>12.6f}"
            f"{item.max_abs:>12.6f}{report.tracking_rmse[method]:>12.6f}"
        )
    lines.append(f"winner: {report.winner}")
    return "\n".join(lines)


def mission(
    settings: dict[str, Any],
    graph: TrafficGraph,
    src: str,
    dst: str,
    out: str,
    battery_age: str | None = None,
) -> MissionLog:
    """Closed-loop mission of the configured AGV, logged as CSV."""
    for node in (src, dst):
        if node not in graph.nodes:
            raise ConfigError(f"unknown node {node}")
    coordinator = MissionCoordinator(
        graph, build_sim_config(settings, graph), battery_age=battery_age
    )
    coordinator.warm_up()
    log = coordinator.run(src, dst)
    rows = [
        [
            str(row.step),
            format_number(row.t),
            row.agv,
            row.arc,
            format_number(row.planned),
            format_number(row.actual),
            "1" if row.route_change else "0",
            row.route,
        ]
        for row in log.rows
    ]
    trailer = [f"halted t={format_number(log.halt_time)}"] if log.halted else []
    with _open_output(out) as file:
        write_csv_frame(file, MISSION_HEADER, rows, trailer)
    return log


# ---------------------------------------------------------------------------
# Command line
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=DOMAIN,
        description="Online arc cost estimation for battery-driven AGVs",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {VERSION}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="configuration file (key value lines or YAML)")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", required=True, help="output CSV path")
    common.add_argument("--manifest", help="write a YAML run manifest to this path")
    common.add_argument("--debug", action="store_true", help="debug logging for the package")
    common.add_argument(
        "--log-level", choices=sorted(LOG_LEVELS), default="warning", help="root log level"
    )

    commands = parser.add_subparsers(dest="command", required=True)

    simulate_parser = commands.add_parser("simulate", parents=[common], help="generate a series")
    simulate_parser.add_argument("--graph", required=True)
    simulate_parser.add_argument("--arc", help="arc to sample (default: reference arc)")
    simulate_parser.add_argument("--all-arcs", action="store_true", help="sample every arc")

    estimate_parser = commands.add_parser(
        "estimate", parents=[common], help="forecast a series with one method"
    )
    estimate_parser.add_argument("--series", required=True, help="series CSV")
    estimate_parser.add_argument("--method", required=True, choices=METHOD_ORDER)
    estimate_parser.add_argument("--window", type=int)
    estimate_parser.add_argument("--lambda", dest="lam", type=float)
    estimate_parser.add_argument("--alpha1", type=float)
    estimate_parser.add_argument("--alpha2", type=float)
    estimate_parser.add_argument("--alpha3", type=float)
    estimate_parser.add_argument("--q", type=float)
    estimate_parser.add_argument("--r", type=float)

    compare_parser = commands.add_parser(
        "compare", parents=[common], help="rank all methods on the reference series"
    )
    compare_parser.add_argument("--graph", required=True)

    mission_parser = commands.add_parser(
        "mission", parents=[common], help="closed-loop mission with replanning"
    )
    mission_parser.add_argument("--graph", required=True)
    mission_parser.add_argument("--src", required=True)
    mission_parser.add_argument("--dst", required=True)
    mission_parser.add_argument(
        "--battery-age", choices=(BATTERY_AGE_NEW, BATTERY_AGE_DRAINED)
    )
    return parser


def _run(args: argparse.Namespace) -> int:
    settings = load_settings(args.config, {"seed": args.seed, "debug": args.debug or None})
    setup_debug_logging(settings)
    outputs = [args.out]
    code = EXIT_OK

    if args.command == "simulate":
        graph = load_graph_file(args.graph)
        series = simulate(settings, graph, args.out, args.arc, args.all_arcs)
        print(f"wrote {len(series)} samples to {args.out}")

    elif args.command == "estimate":
        params = ESTIMATE_PARAMS_SCHEMA(
            {name: getattr(args, name) for name in
             ("method", "window", "lam", "alpha1", "alpha2", "alpha3", "q", "r")}
        )
        method = method_config_from_settings(
            settings, params.pop("method"), overrides=params
        )
        with open(args.series, "r", encoding="utf-8") as file:
            series = read_series_csv(file)
        stats = estimate(series, method, args.out)
        name = METHOD_TEMPLATES[method.kind]["name"]
        print(f"{name}: rmse={stats.rmse:.6f} std={stats.std:.6f} mean={stats.mean:.6f}")

    elif args.command == "compare":
        graph = load_graph_file(args.graph)
        report = compare(settings, graph, args.out)
        print(format_compare_report(report))

    elif args.command == "mission":
        graph = load_graph_file(args.graph)
        log = mission(settings, graph, args.src, args.dst, args.out, args.battery_age)
        for row in log.rows:
            print(f"{row.step:>4} t={row.t:10.3f} {row.arc:<10} planned={row.planned:8.3f} "
                  f"actual={row.actual:8.3f} route={row.route}")
        if log.halted:
            _LOGGER.error("Mission aborted: robot halted at t=%.3f s", log.halt_time)
            code = EXIT_MISSION_ABORTED

    if args.manifest:
        graph_path = getattr(args, "graph", None)
        graph_digest = None
        if graph_path is not None:
            with open(graph_path, "r", encoding="utf-8") as file:
                graph_digest = digest_lines(file.read().splitlines())
        write_manifest(
            args.manifest,
            RunManifest(
                command=args.command,
                version=VERSION,
                seed=settings["seed"],
                digest=config_digest(settings),
                config=flatten_settings(settings),
                outputs=outputs,
                config_path=args.config,
                graph_path=graph_path,
                graph_digest=graph_digest,
                series_path=getattr(args, "series", None),
            ),
        )
    return code


def exit_code_for(err: BaseException) -> int:
    for kind, code in EXIT_CODES:
        if isinstance(err, kind):
            return code
    return EXIT_INTERNAL


def main(argv: Sequence[str] | None = None) -> int:
    """Entry point; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=LOG_LEVELS[args.log_level],
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return _run(args)
    except vol.Invalid as err:
        print(f"error: invalid parameter: {err}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except (AgvCostError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return exit_code_for(err)
    except Exception as err:  # pylint: disable=broad-except
        _LOGGER.exception("Unexpected failure")
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INTERNAL
