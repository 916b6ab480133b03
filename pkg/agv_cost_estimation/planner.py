"""Reservation-aware path planning over estimated arc costs."""
from __future__ import annotations

from dataclasses import dataclass
import logging
import math
from typing import Iterable, Iterator

import networkx as nx

from .const import COST_TIE_REL_TOL, DEFAULT_AGV, DEFAULT_K_CANDIDATES
from .exceptions import PlanningFailedError, UnreachableError, UsageError
from .traffic_graph import TrafficGraph

_LOGGER = logging.getLogger(__name__)

_NODE = "node"
_ARC = "arc"


@dataclass(frozen=True)
class Path:
    """Ordered arc ids of a simple path."""

    arcs: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.arcs)

    def nodes(self, graph: TrafficGraph) -> tuple[str, ...]:
        if not self.arcs:
            return ()
        return (graph.arcs[self.arcs[0]].source,) + tuple(
            graph.arcs[ident].target for ident in self.arcs
        )


@dataclass(frozen=True)
class Plan:
    """A path with its per-arc occupancy intervals for one AGV."""

    path: Path
    intervals: tuple[tuple[float, float], ...]
    agv: str
    source: str
    target: str

    @property
    def cost(self) -> float:
        if not self.intervals:
            return 0.0
        return self.intervals[-1][1] - self.intervals[0][0]

    def occupancy(self) -> Iterator[tuple[str, float, float]]:
        for ident, (entry, exit_) in zip(self.path.arcs, self.intervals):
            yield ident, entry, exit_


@dataclass(frozen=True)
class Reservation:
    agv: str
    arc: str
    entry: float
    exit: float


def _check_costs(graph: TrafficGraph, costs: dict[str, float]) -> None:
    for ident in graph.arcs:
        value = costs.get(ident)
        if value is None:
            raise UsageError(f"no cost for arc {ident}")
        if not (math.isfinite(value) and value > 0):
            raise UsageError(f"cost of arc {ident} must be > 0, got {value}")


def _check_nodes(graph: TrafficGraph, *nodes: str) -> None:
    for node in nodes:
        if node not in graph.nodes:
            raise UsageError(f"unknown node {node}")


def path_cost(costs: dict[str, float], path: Path | tuple[str, ...]) -> float:
    """Total cost of a path under ``costs``."""
    arcs = path.arcs if isinstance(path, Path) else path
    return math.fsum(costs[ident] for ident in arcs)


def _expanded_digraph(graph: TrafficGraph, costs: dict[str, float]) -> nx.DiGraph:
    # every arc becomes a vertex between its endpoints so parallel arcs stay distinct
    expanded = nx.DiGraph()
    for node in graph.nodes:
        expanded.add_node((_NODE, node))
    for ident, arc in graph.arcs.items():
        expanded.add_edge((_NODE, arc.source), (_ARC, ident), weight=costs[ident])
        expanded.add_edge((_ARC, ident), (_NODE, arc.target), weight=0.0)
    return expanded


def iter_candidate_paths(
    graph: TrafficGraph,
    costs: dict[str, float],
    src: str,
    dst: str,
    k: int | None = DEFAULT_K_CANDIDATES,
) -> Iterator[tuple[float, Path]]:
    """Yield up to ``k`` loopless paths by non-decreasing cost.

    Paths whose costs are equal within a relative 1e-9 are ties and come out
    in lexicographic order of their arc id sequences.
    """
    _check_nodes(graph, src, dst)
    _check_costs(graph, costs)
    if k is not None and k < 1:
        raise UsageError(f"k must be >= 1, got {k}")
    if src == dst:
        yield 0.0, Path()
        return

    generator = nx.shortest_simple_paths(
        _expanded_digraph(graph, costs), (_NODE, src), (_NODE, dst), weight="weight"
    )
    emitted = 0
    group: list[tuple[str, ...]] = []
    group_cost = 0.0

    def flush() -> Iterator[tuple[float, Path]]:
        for arcs in sorted(group):
            yield path_cost(costs, arcs), Path(arcs)

    try:
        for vertices in generator:
            arcs = tuple(ident for kind, ident in vertices if kind == _ARC)
            cost = path_cost(costs, arcs)
            if group and not math.isclose(cost, group_cost, rel_tol=COST_TIE_REL_TOL):
                for item in flush():
                    yield item
                    emitted += 1
                    if k is not None and emitted >= k:
                        return
                group = []
            if not group:
                group_cost = cost
            group.append(arcs)
    except nx.NetworkXNoPath as err:
        raise UnreachableError(f"no path from {src} to {dst}") from err

    for item in flush():
        yield item
        emitted += 1
        if k is not None and emitted >= k:
            return


def shortest_path(
    graph: TrafficGraph, costs: dict[str, float], src: str, dst: str
) -> Path:
    """Minimum-cost simple path, lexicographically smallest among ties."""
    for _, path in iter_candidate_paths(graph, costs, src, dst, k=1):
        return path
    raise UnreachableError(f"no path from {src} to {dst}")


def build_plan(
    graph: TrafficGraph,
    path: Path,
    costs: dict[str, float],
    depart: float,
    agv: str,
    src: str,
    dst: str,
) -> Plan:
    """Lay out contiguous occupancy intervals from ``depart``."""
    intervals: list[tuple[float, float]] = []
    entry = depart
    for ident in path.arcs:
        if ident not in graph.arcs:
            raise UsageError(f"unknown arc {ident}")
        exit_ = entry + costs[ident]
        intervals.append((entry, exit_))
        entry = exit_
    return Plan(path, tuple(intervals), agv, src, dst)


def _overlap(a: tuple[float, float], b: tuple[float, float]) -> tuple[float, float] | None:
    low = max(a[0], b[0])
    high = min(a[1], b[1])
    if high > low:
        return low, high
    return None


def detect_conflict(plan_a: Plan, plan_b: Plan) -> list[tuple[str, tuple[float, float]]]:
    """Arcs both plans occupy at overlapping times (positive measure only)."""
    other: dict[str, list[tuple[float, float]]] = {}
    for ident, entry, exit_ in plan_b.occupancy():
        other.setdefault(ident, []).append((entry, exit_))
    conflicts = []
    for ident, entry, exit_ in plan_a.occupancy():
        for interval in other.get(ident, ()):
            window = _overlap((entry, exit_), interval)
            if window is not None:
                conflicts.append((ident, window))
    return conflicts


class ReservationTable:
    """Per-arc occupancy intervals of all admitted plans.

    Single writer: admissions and releases must be serialized by the owner.
    """

    def __init__(self) -> None:
        self._by_arc: dict[str, list[Reservation]] = {}

    def __len__(self) -> int:
        return sum(len(items) for items in self._by_arc.values())

    def reservations(self, arc: str | None = None) -> list[Reservation]:
        if arc is not None:
            return list(self._by_arc.get(arc, ()))
        return [item for ident in sorted(self._by_arc) for item in self._by_arc[ident]]

    def conflicts(self, plan: Plan) -> list[tuple[Reservation, tuple[float, float]]]:
        """Reservations of other AGVs that overlap the plan."""
        found = []
        for ident, entry, exit_ in plan.occupancy():
            for item in self._by_arc.get(ident, ()):
                if item.agv == plan.agv:
                    continue
                window = _overlap((entry, exit_), (item.entry, item.exit))
                if window is not None:
                    found.append((item, window))
        return found

    def reserve(self, agv: str, arc: str, entry: float, exit_: float) -> Reservation:
        """Add one interval; overlapping another AGV's interval is refused."""
        if not exit_ > entry:
            raise UsageError(f"reservation on {arc} must have exit > entry")
        for item in self._by_arc.get(arc, ()):
            if item.agv != agv and _overlap((entry, exit_), (item.entry, item.exit)):
                raise PlanningFailedError(
                    f"{agv} on {arc} [{entry}, {exit_}] overlaps {item.agv} "
                    f"[{item.entry}, {item.exit}]"
                )
        reservation = Reservation(agv, arc, entry, exit_)
        self._by_arc.setdefault(arc, []).append(reservation)
        return reservation

    def admit(self, plan: Plan) -> None:
        clashes = self.conflicts(plan)
        if clashes:
            item, window = clashes[0]
            raise PlanningFailedError(
                f"plan of {plan.agv} overlaps {item.agv} on {item.arc} during {window}"
            )
        for ident, entry, exit_ in plan.occupancy():
            self._by_arc.setdefault(ident, []).append(
                Reservation(plan.agv, ident, entry, exit_)
            )

    def release(self, plan: Plan, start: int = 0) -> list[Reservation]:
        """Drop the plan's reservations from arc index ``start`` on.

        Returns the reservations that were actually held and removed.
        """
        released = []
        for ident, (entry, exit_) in list(zip(plan.path.arcs, plan.intervals))[start:]:
            items = self._by_arc.get(ident, [])
            target = Reservation(plan.agv, ident, entry, exit_)
            if target in items:
                items.remove(target)
                released.append(target)
        return released

    def restore(self, items: Iterable[Reservation]) -> None:
        """Put back reservations taken out by ``release``."""
        for item in items:
            self._by_arc.setdefault(item.arc, []).append(item)

    def is_consistent(self) -> bool:
        """True when no two AGVs hold overlapping intervals on an arc."""
        for items in self._by_arc.values():
            for index, first in enumerate(items):
                for second in items[index + 1:]:
                    if first.agv != second.agv and _overlap(
                        (first.entry, first.exit), (second.entry, second.exit)
                    ):
                        return False
        return True


def plan_with_reservations(
    graph: TrafficGraph,
    costs: dict[str, float],
    reservations: ReservationTable,
    src: str,
    dst: str,
    depart: float,
    agv: str = DEFAULT_AGV,
    k: int = DEFAULT_K_CANDIDATES,
) -> Plan:
    """Admit the cheapest candidate that clears all reservations."""
    for index, (cost, path) in enumerate(iter_candidate_paths(graph, costs, src, dst, k)):
        plan = build_plan(graph, path, costs, depart, agv, src, dst)
        clashes = reservations.conflicts(plan)
        if not clashes:
            reservations.admit(plan)
            _LOGGER.debug(
                "%s admitted candidate %d (%s, cost %.3f s) departing %.3f",
                agv, index, ">".join(path.arcs) or "-", cost, depart
            )
            return plan
        _LOGGER.debug(
            "%s candidate %d (%s, cost %.3f s) conflicts on %s",
            agv, index, ">".join(path.arcs), cost,
            ", ".join(item.arc for item, _ in clashes)
        )
    raise PlanningFailedError(
        f"no conflict-free path from {src} to {dst} within {k} candidates"
    )


def replan_on_update(
    graph: TrafficGraph,
    plan: Plan,
    completed: int,
    new_costs: dict[str, float],
    reservations: ReservationTable,
    now: float,
    k: int = DEFAULT_K_CANDIDATES,
) -> Plan:
    """Plan the rest of the journey after ``completed`` arcs.

    The old plan's reservations for the remaining arcs are released and a new
    plan from the current node to the old destination is admitted. When no
    candidate clears the table the released reservations are put back.
    """
    if not 0 <= completed <= len(plan.path):
        raise UsageError(f"completed={completed} outside plan of {len(plan.path)} arcs")
    if completed == 0:
        node = plan.source
    else:
        node = graph.arcs[plan.path.arcs[completed - 1]].target
    released = reservations.release(plan, completed)
    try:
        return plan_with_reservations(
            graph, new_costs, reservations, node, plan.target, now, plan.agv, k
        )
    except PlanningFailedError:
        reservations.restore(released)
        raise
