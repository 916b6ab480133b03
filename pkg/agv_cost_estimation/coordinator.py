"""Mission coordinator: the closed loop of planning, driving and estimating."""
from __future__ import annotations

from dataclasses import dataclass, field
import logging
from typing import Any

from .agv_sim import (
    MissionClock,
    SimConfig,
    TraversalObservation,
    run_mission,
    true_traversal_time,
)
from .config import method_config_from_settings, validate_settings
from .exceptions import ConfigError, RobotHaltedError
from .planner import Path, Plan, ReservationTable, plan_with_reservations, replan_on_update
from .traffic_graph import ArcCostBank, TrafficGraph, build_banks, cost_snapshot, record_traversal
from .utils import derive_rng

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class MissionLogRow:
    """One traversal of a mission."""

    step: int
    t: float
    agv: str
    arc: str
    planned: float
    actual: float
    route_change: bool
    route: str


@dataclass
class MissionLog:
    """Rows of a mission plus how it ended."""

    depart: float
    rows: list[MissionLogRow] = field(default_factory=list)
    halted: bool = False
    halt_time: float | None = None


class MissionCoordinator:
    """Class to manage the estimate, plan and drive cycle of one AGV.

    Costs come from the arc banks, plans are admitted against the shared
    reservation table, and every completed traversal updates its bank before
    the rest of the route is planned again.
    """

    def __init__(
        self,
        graph: TrafficGraph,
        config: SimConfig,
        agv: str | None = None,
        battery_age: str | None = None,
        depart: float | None = None,
    ) -> None:
        """Initialize."""
        self.graph = graph
        self.config = config
        self.settings: dict[str, Any] = config.settings or validate_settings({})
        mission = self.settings["mission"]
        self.agv = agv or config.agv

        if depart is None:
            depart = 0.0
            if battery_age is not None:
                ages = mission["battery_age"]
                if battery_age not in ages:
                    raise ConfigError(f"unknown battery age {battery_age!r}")
                depart = ages[battery_age] * config.battery.t_empty
        self.depart = depart
        _LOGGER.debug("%s departs at t=%.3f s (battery age %s)", self.agv, depart, battery_age)

        self.method = method_config_from_settings(self.settings, mission["method"])
        self.per_agv = mission["per_agv_banks"]
        self.banks = build_banks(
            graph, self.method, config.v_max, [self.agv] if self.per_agv else None
        )
        self.k = mission["k_candidates"]
        self.legs = mission["legs"]
        self.reservations = ReservationTable()
        self.clock = MissionClock(depart)
        self._rng = derive_rng(config.seed, "mission", self.agv)
        self._seed_reservations(mission["reservations"])

    def _seed_reservations(self, entries: list) -> None:
        for other, arc, entry, exit_ in entries:
            if arc not in self.graph.arcs:
                raise ConfigError(f"reservation names unknown arc {arc}")
            self.reservations.reserve(other, arc, self.depart + entry, self.depart + exit_)
            _LOGGER.debug(
                "Reserved %s for %s during [%.3f, %.3f]",
                arc, other, self.depart + entry, self.depart + exit_
            )

    def bank_for(self, arc: str) -> ArcCostBank:
        """Bank that learns from this AGV's traversals of ``arc``."""
        if self.per_agv:
            return self.banks[(arc, self.agv)]
        return self.banks[arc]

    def costs(self) -> dict[str, float]:
        return cost_snapshot(self.graph, self.banks, self.config.v_max, self.agv)

    def warm_up(self, count: int | None = None, interval: float | None = None) -> int:
        """Pre-feed every bank with traversals sampled before departure.

        Returns the number of observations recorded.
        """
        mission = self.settings["mission"]
        count = mission["warmup"] if count is None else count
        interval = mission["warmup_interval"] if interval is None else interval
        recorded = 0
        for ident in sorted(self.graph.arcs):
            rng = derive_rng(self.config.seed, "warmup", self.agv, ident)
            model = self.config.cost_models[ident]
            for back in range(count, 0, -1):
                t = self.depart - back * interval
                if t < 0:
                    continue
                try:
                    duration = true_traversal_time(model, self.config.battery, t, rng)
                except RobotHaltedError:
                    continue
                record_traversal(
                    self.bank_for(ident), TraversalObservation(ident, self.agv, t, duration)
                )
                recorded += 1
        if recorded:
            _LOGGER.info("Warm-up recorded %d traversals", recorded)
        return recorded

    def _legs(self, src: str, dst: str) -> list[tuple[str, str]]:
        return [(src, dst) if index % 2 == 0 else (dst, src) for index in range(self.legs)]

    def run(self, src: str, dst: str) -> MissionLog:
        """Drive all legs between ``src`` and ``dst``."""
        log = MissionLog(depart=self.depart)
        for leg_src, leg_dst in self._legs(src, dst):
            if leg_src == leg_dst:
                continue
            plan = plan_with_reservations(
                self.graph, self.costs(), self.reservations,
                leg_src, leg_dst, self.clock.now, self.agv, self.k
            )
            _LOGGER.info(
                "%s leg %s -> %s: %s", self.agv, leg_src, leg_dst, ">".join(plan.path.arcs)
            )
            if not self._drive(plan, log):
                return log
        return log

    def _drive(self, plan: Plan, log: MissionLog) -> bool:
        route_change = False
        while plan.path.arcs:
            arc = plan.path.arcs[0]
            entry, exit_ = plan.intervals[0]
            result = run_mission(
                self.graph, self.config, self.agv, Path((arc,)), self.clock, self._rng
            )
            if result.halted:
                log.halted = True
                log.halt_time = result.halt_time
                return False

            observation = result.observations[0]
            record_traversal(self.bank_for(arc), observation)
            log.rows.append(
                MissionLogRow(
                    step=len(log.rows),
                    t=observation.start_time,
                    agv=self.agv,
                    arc=arc,
                    planned=exit_ - entry,
                    actual=observation.duration,
                    route_change=route_change,
                    route=">".join(plan.path.arcs),
                )
            )

            if len(plan.path.arcs) == 1:
                break
            remaining = plan.path.arcs[1:]
            plan = replan_on_update(
                self.graph, plan, 1, self.costs(), self.reservations, self.clock.now, self.k
            )
            route_change = plan.path.arcs != remaining
            if route_change:
                _LOGGER.info(
                    "%s rerouted at t=%.3f: %s -> %s",
                    self.agv, self.clock.now, ">".join(remaining), ">".join(plan.path.arcs)
                )
        return True
