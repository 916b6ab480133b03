"""Battery-driven ground truth for AGV traversal times.

A battery profile maps mission time to state of charge (SoC), a speed
response maps SoC to a speed fraction, and the cost model turns both into
noisy traversal times. Missions walk a path arc by arc on a shared clock.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
import logging
import math
import re
from typing import Any, Iterable, Sequence, TextIO

import numpy as np
import pandas as pd

from .const import (
    DEFAULT_BATTERY_KNOTS,
    DEFAULT_COLLAPSE_SOC,
    DEFAULT_HALT_SOC,
    DEFAULT_RUN_IN_DROP,
    DEFAULT_RUN_IN_SOC,
    DEFAULT_SAG_DEPTH,
    DEFAULT_SAG_HIGH,
    DEFAULT_SAG_LOW,
    DEFAULT_SPEED_FLOOR,
    DEFAULT_SPEED_PEAK,
    SERIES_HEADER,
)
from .exceptions import ConfigError, RobotHaltedError, SeriesFormatError, UsageError
from .traffic_graph import TrafficGraph
from .utils import derive_rng, format_number, write_csv_frame

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class BatteryProfile:
    """Piecewise-linear SoC over the fraction of battery life.

    ``knots`` are (fraction of t_empty, SoC) pairs, starting at (0, 1) and
    ending at (1, 0), fractions strictly increasing and SoC non-increasing.
    """

    t_empty: float
    knots: tuple[tuple[float, float], ...] = DEFAULT_BATTERY_KNOTS

    def __post_init__(self) -> None:
        if not (math.isfinite(self.t_empty) and self.t_empty > 0):
            raise ConfigError(f"t_empty must be > 0, got {self.t_empty}")
        knots = tuple((float(f), float(s)) for f, s in self.knots)
        if len(knots) < 2:
            raise ConfigError("battery profile needs at least two knots")
        if knots[0] != (0.0, 1.0) or knots[-1] != (1.0, 0.0):
            raise ConfigError(
                f"battery knots must start at (0, 1) and end at (1, 0), got {knots}"
            )
        for (f0, s0), (f1, s1) in zip(knots, knots[1:]):
            if not f1 > f0:
                raise ConfigError(f"knot fractions must increase: {f0} -> {f1}")
            if s1 > s0:
                raise ConfigError(f"knot SoC must not increase: {s0} -> {s1}")
            if not 0.0 <= s1 <= 1.0:
                raise ConfigError(f"knot SoC {s1} outside [0, 1]")
        object.__setattr__(self, "knots", knots)


def soc_at(profile: BatteryProfile, t: float) -> float:
    """State of charge at mission time ``t`` (seconds)."""
    if not t >= 0.0:
        raise UsageError(f"time must be >= 0, got {t}")
    if t >= profile.t_empty:
        return 0.0
    fractions = [f for f, _ in profile.knots]
    levels = [s for _, s in profile.knots]
    return float(np.interp(t / profile.t_empty, fractions, levels))


def halt_time(profile: BatteryProfile, soc_level: float) -> float:
    """Earliest time at which the SoC has fallen to ``soc_level``."""
    if soc_level >= 1.0:
        return 0.0
    for (f0, s0), (f1, s1) in zip(profile.knots, profile.knots[1:]):
        if s0 > soc_level >= s1:
            fraction = f0 + (s0 - soc_level) / (s0 - s1) * (f1 - f0)
            return fraction * profile.t_empty
    return profile.t_empty


@dataclass(frozen=True)
class SpeedResponse:
    """Speed fraction as a function of SoC.

    Piecewise and continuous: a slight run-in penalty above ``run_in_soc``,
    a plateau down to ``sag_high``, a linear sag of ``sag_depth`` reached at
    ``sag_low`` and held down to ``collapse_soc``, then a quadratic collapse
    towards ``floor`` at the halt SoC.
    """

    peak: float = DEFAULT_SPEED_PEAK
    run_in_soc: float = DEFAULT_RUN_IN_SOC
    run_in_drop: float = DEFAULT_RUN_IN_DROP
    sag_high: float = DEFAULT_SAG_HIGH
    sag_low: float = DEFAULT_SAG_LOW
    sag_depth: float = DEFAULT_SAG_DEPTH
    collapse_soc: float = DEFAULT_COLLAPSE_SOC
    floor: float = DEFAULT_SPEED_FLOOR

    def __post_init__(self) -> None:
        if not self.peak > 0:
            raise ConfigError(f"peak speed must be > 0, got {self.peak}")
        if not 0.0 < self.collapse_soc <= self.sag_low <= self.sag_high <= self.run_in_soc < 1.0:
            raise ConfigError(
                "speed response needs 0 < collapse_soc <= sag_low <= sag_high "
                "<= run_in_soc < 1"
            )
        if not 0.0 <= self.run_in_drop < 1.0 or not 0.0 <= self.sag_depth < 1.0:
            raise ConfigError("run_in_drop and sag_depth must lie in [0, 1)")
        if not 0.0 < self.floor < 1.0 - self.sag_depth:
            raise ConfigError(
                f"floor must lie in (0, {1.0 - self.sag_depth}), got {self.floor}"
            )

    def __call__(self, soc: float, halt_soc: float = DEFAULT_HALT_SOC) -> float:
        if soc > self.run_in_soc:
            ratio = 1.0 - self.run_in_drop * (soc - self.run_in_soc) / (1.0 - self.run_in_soc)
        elif soc >= self.sag_high:
            ratio = 1.0
        elif soc >= self.sag_low:
            span = self.sag_high - self.sag_low
            ratio = 1.0 - self.sag_depth * (self.sag_high - soc) / span if span else 1.0
        elif soc >= self.collapse_soc:
            ratio = 1.0 - self.sag_depth
        else:
            x = max((soc - halt_soc) / (self.collapse_soc - halt_soc), 0.0)
            ratio = self.floor + (1.0 - self.sag_depth - self.floor) * x * x
        return self.peak * ratio


@dataclass(frozen=True)
class CostModel:
    """Ground-truth traversal time model of one arc."""

    base_time: float
    friction: float = 1.0
    speed_response: SpeedResponse = field(default_factory=SpeedResponse)
    noise_std: float = 0.0
    halt_soc: float = DEFAULT_HALT_SOC

    def __post_init__(self) -> None:
        if not self.base_time > 0 or not self.friction > 0:
            raise ConfigError("base_time and friction must be > 0")
        if not self.noise_std >= 0:
            raise ConfigError(f"noise_std must be >= 0, got {self.noise_std}")
        if not 0.0 < self.halt_soc < self.speed_response.collapse_soc:
            raise ConfigError(
                f"halt_soc must lie in (0, collapse_soc), got {self.halt_soc}"
            )

    def mean_time(self, soc: float) -> float:
        return self.base_time * self.friction / self.speed_response(soc, self.halt_soc)


def true_traversal_time(
    model: CostModel,
    profile: BatteryProfile,
    t: float,
    rng: np.random.Generator | None = None,
) -> float:
    """Traversal time of an arc entered at time ``t``.

    Raises RobotHaltedError once the SoC has fallen to the halt level.
    Normal noise draws that would give a non-positive time are redrawn.
    """
    soc = soc_at(profile, t)
    if soc <= model.halt_soc:
        raise RobotHaltedError(t, soc)
    mean = model.mean_time(soc)
    if model.noise_std <= 0:
        return mean
    if rng is None:
        raise UsageError("a random generator is required for a noisy cost model")
    while True:
        duration = mean + rng.normal(0.0, model.noise_std)
        if duration > 0:
            return float(duration)


@dataclass(frozen=True)
class TraversalObservation:
    """One completed traversal."""

    arc: str
    agv: str
    start_time: float
    duration: float


@dataclass
class MissionClock:
    """Simulated mission time in seconds."""

    now: float = 0.0


@dataclass(frozen=True)
class MissionResult:
    """Traversals of a mission; ``halted`` when the battery stopped it."""

    observations: tuple[TraversalObservation, ...]
    halted: bool = False
    halt_time: float | None = None


@dataclass(frozen=True)
class SimConfig:
    """Everything a simulation run needs, derived from the settings."""

    seed: int
    battery: BatteryProfile
    cost_models: dict[str, CostModel]
    sampling_interval: float
    agv: str
    reference_arc: str
    v_max: float
    settings: dict[str, Any] = field(default_factory=dict, compare=False, repr=False)


def build_sim_config(settings: dict[str, Any], graph: TrafficGraph) -> SimConfig:
    """Build a SimConfig from validated settings and the graph."""
    cost = settings["cost"]
    v_max = settings["vehicle"]["v_max"]
    speed = SpeedResponse(**cost["speed"])
    battery = BatteryProfile(
        t_empty=settings["battery"]["t_empty"],
        knots=tuple(tuple(knot) for knot in settings["battery"]["knots"]),
    )
    overrides = settings.get("arcs", {})
    for ident in sorted(set(overrides) - set(graph.arcs)):
        _LOGGER.warning("Configuration overrides unknown arc %s", ident)

    models: dict[str, CostModel] = {}
    for ident in sorted(graph.arcs):
        arc = graph.arcs[ident]
        override = overrides.get(ident, {})
        base_time = arc.length / v_max
        noise_fraction = override.get("noise_fraction", cost["noise_fraction"])
        models[ident] = CostModel(
            base_time=base_time,
            friction=override.get("friction", cost["friction"][arc.kind]),
            speed_response=speed,
            noise_std=noise_fraction * base_time,
            halt_soc=cost["halt_soc"],
        )

    reference_arc = settings.get("reference_arc") or min(graph.arcs, default=None)
    if reference_arc is None or reference_arc not in graph.arcs:
        raise ConfigError(f"reference arc {reference_arc} is not an arc of the graph")
    return SimConfig(
        seed=settings["seed"],
        battery=battery,
        cost_models=models,
        sampling_interval=settings["sampling_interval"],
        agv=settings["agv"],
        reference_arc=reference_arc,
        v_max=v_max,
        settings=settings,
    )


def _sample_times(config: SimConfig) -> Iterable[float]:
    k = 0
    while True:
        yield k * config.sampling_interval
        k += 1


def generate_reference_series(
    config: SimConfig, arc: str | None = None
) -> list[TraversalObservation]:
    """Sample one arc every ``sampling_interval`` until the robot halts."""
    arc = arc or config.reference_arc
    if arc not in config.cost_models:
        raise UsageError(f"unknown arc {arc}")
    model = config.cost_models[arc]
    rng = derive_rng(config.seed, "reference", arc)
    series: list[TraversalObservation] = []
    for t in _sample_times(config):
        try:
            duration = true_traversal_time(model, config.battery, t, rng)
        except RobotHaltedError as err:
            _LOGGER.debug("Reference series on %s ends: %s", arc, err)
            break
        series.append(TraversalObservation(arc, config.agv, t, duration))
    _LOGGER.info("Generated %d samples on arc %s", len(series), arc)
    return series


def reference_truth(config: SimConfig, arc: str | None = None) -> list[float]:
    """Noise-free traversal times on the reference grid."""
    arc = arc or config.reference_arc
    model = replace(config.cost_models[arc], noise_std=0.0)
    truth: list[float] = []
    for t in _sample_times(config):
        try:
            truth.append(true_traversal_time(model, config.battery, t))
        except RobotHaltedError:
            break
    return truth


def run_mission(
    graph: TrafficGraph,
    config: SimConfig,
    agv: str,
    path: Sequence[str],
    clock: MissionClock,
    rng: np.random.Generator | None = None,
) -> MissionResult:
    """Drive ``path`` (arc ids, or a Path) from the clock's current time.

    The clock is advanced by each traversal. The mission ends early when the
    battery halts the robot.
    """
    arcs = tuple(getattr(path, "arcs", path))
    for ident in arcs:
        if ident not in graph.arcs:
            raise UsageError(f"unknown arc {ident}")
    for first, second in zip(arcs, arcs[1:]):
        if graph.arcs[first].target != graph.arcs[second].source:
            raise UsageError(f"arcs {first} and {second} are not contiguous")
    if rng is None:
        rng = derive_rng(config.seed, "mission", agv)

    observations: list[TraversalObservation] = []
    for ident in arcs:
        entry = clock.now
        try:
            duration = true_traversal_time(
                config.cost_models[ident], config.battery, entry, rng
            )
        except RobotHaltedError as err:
            _LOGGER.warning("%s halted on %s: %s", agv, ident, err)
            return MissionResult(tuple(observations), halted=True, halt_time=entry)
        observations.append(TraversalObservation(ident, agv, entry, duration))
        clock.now = entry + duration
    return MissionResult(tuple(observations))


def write_series_csv(stream: TextIO, observations: Iterable[TraversalObservation]) -> None:
    """Write ``t,arc,agv,duration`` rows with exact float text."""
    write_csv_frame(
        stream,
        SERIES_HEADER,
        (
            (format_number(obs.start_time), obs.arc, obs.agv, format_number(obs.duration))
            for obs in observations
        ),
    )


def _parser_error_row(err: Exception) -> int:
    match = re.search(r"line (\d+)", str(err))
    return int(match.group(1)) if match else 0


def read_series_csv(stream: TextIO) -> list[TraversalObservation]:
    """Parse a series CSV; malformed rows raise SeriesFormatError.

    Row numbers count the header as row 1. Blank rows and rows whose first
    field starts with ``#`` are skipped.
    """
    try:
        frame = pd.read_csv(
            stream, dtype=str, keep_default_na=False, skip_blank_lines=False
        )
    except pd.errors.EmptyDataError as err:
        raise SeriesFormatError(1, f"expected header {','.join(SERIES_HEADER)}") from err
    except pd.errors.ParserError as err:
        raise SeriesFormatError(_parser_error_row(err), str(err).strip()) from err
    if tuple(str(name).strip() for name in frame.columns) != SERIES_HEADER:
        raise SeriesFormatError(1, f"expected header {','.join(SERIES_HEADER)}")

    observations: list[TraversalObservation] = []
    for index, fields in enumerate(frame.itertuples(index=False, name=None)):
        row = index + 2
        cells = [value.strip() if isinstance(value, str) else None for value in fields]
        if all(not value for value in cells) or (cells[0] or "").startswith("#"):
            continue
        if any(value is None for value in cells):
            raise SeriesFormatError(row, f"expected {len(SERIES_HEADER)} fields")
        t_text, arc, agv, duration_text = cells
        try:
            start_time = float(t_text)
            duration = float(duration_text)
        except ValueError as err:
            raise SeriesFormatError(row, f"not a number: {err}") from err
        if not (math.isfinite(start_time) and start_time >= 0):
            raise SeriesFormatError(row, f"time must be >= 0, got {t_text}")
        if not (math.isfinite(duration) and duration > 0):
            raise SeriesFormatError(row, f"duration must be > 0, got {duration_text}")
        if not arc or not agv:
            raise SeriesFormatError(row, "arc and agv must not be empty")
        observations.append(TraversalObservation(arc, agv, start_time, duration))
    return observations
