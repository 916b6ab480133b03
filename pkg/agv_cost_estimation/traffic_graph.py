"""Directed traffic graph with per-arc cost estimator banks."""
from __future__ import annotations

from dataclasses import dataclass, field
import logging
import math
from typing import Iterable

from .const import ARC_KIND_CORRIDOR, ARC_KINDS
from .estimators import Forecaster, MethodConfig, make_forecaster
from .exceptions import (
    DanglingEndpointError,
    DuplicateIdError,
    GraphError,
    GraphParseError,
    UsageError,
)
from .utils import clamp_cost, format_number

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class Arc:
    """Directed arc; ``length`` in metres."""

    id: str
    source: str
    target: str
    length: float
    kind: str = ARC_KIND_CORRIDOR


@dataclass(frozen=True)
class TrafficGraph:
    """Immutable node set plus arcs keyed by id."""

    nodes: frozenset[str]
    arcs: dict[str, Arc]
    adjacency: dict[str, tuple[str, ...]] = field(compare=False, repr=False)

    @classmethod
    def from_arcs(cls, nodes: Iterable[str], arcs: Iterable[Arc]) -> TrafficGraph:
        """Build a validated graph from already parsed parts."""
        node_set: set[str] = set()
        for node in nodes:
            if node in node_set:
                raise DuplicateIdError(node)
            node_set.add(node)
        if not node_set:
            raise GraphError("no nodes")
        arc_map: dict[str, Arc] = {}
        adjacency: dict[str, list[str]] = {node: [] for node in node_set}
        for arc in arcs:
            if arc.id in arc_map:
                raise DuplicateIdError(arc.id)
            for endpoint in (arc.source, arc.target):
                if endpoint not in node_set:
                    raise DanglingEndpointError(endpoint)
            if not (math.isfinite(arc.length) and arc.length > 0):
                raise GraphError(f"arc {arc.id}: length must be > 0, got {arc.length}")
            if arc.kind not in ARC_KINDS:
                raise GraphError(f"arc {arc.id}: unknown kind {arc.kind}")
            arc_map[arc.id] = arc
            adjacency[arc.source].append(arc.id)
        return cls(
            nodes=frozenset(node_set),
            arcs=arc_map,
            adjacency={node: tuple(sorted(ids)) for node, ids in adjacency.items()},
        )

    def outgoing(self, node: str) -> tuple[str, ...]:
        """Ids of the arcs leaving ``node``, sorted."""
        return self.adjacency.get(node, ())


def load_graph(text: str) -> TrafficGraph:
    """Parse the line-oriented graph grammar.

    ``node <id>`` lines come first, then ``arc <id> <from> <to> <length>
    [kind]`` lines. ``#`` starts a comment, blank lines are ignored.
    """
    nodes: list[str] = []
    node_set: set[str] = set()
    arcs: list[Arc] = []
    arc_ids: set[str] = set()
    seen_arc = False

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        keyword = tokens[0]

        if keyword == "node":
            if len(tokens) != 2:
                raise GraphParseError(lineno, "expected 'node <id>'")
            if seen_arc:
                raise GraphParseError(lineno, "node declared after the first arc")
            ident = tokens[1]
            if ident in node_set:
                raise DuplicateIdError(ident, lineno)
            nodes.append(ident)
            node_set.add(ident)

        elif keyword == "arc":
            if len(tokens) not in (5, 6):
                raise GraphParseError(
                    lineno, "expected 'arc <id> <from> <to> <length> [kind]'"
                )
            seen_arc = True
            ident, source, target, length_text = tokens[1:5]
            kind = tokens[5] if len(tokens) == 6 else ARC_KIND_CORRIDOR
            try:
                length = float(length_text)
            except ValueError as err:
                raise GraphParseError(lineno, f"length {length_text!r} is not a number") from err
            if not (math.isfinite(length) and length > 0):
                raise GraphParseError(lineno, f"length must be > 0, got {length_text}")
            if kind not in ARC_KINDS:
                raise GraphParseError(lineno, f"unknown arc kind {kind!r}")
            if source == target:
                raise GraphParseError(lineno, f"arc {ident} is a self-loop")
            for endpoint in (source, target):
                if endpoint not in node_set:
                    raise DanglingEndpointError(endpoint, lineno)
            if ident in arc_ids:
                raise DuplicateIdError(ident, lineno)
            arc_ids.add(ident)
            arcs.append(Arc(ident, source, target, length, kind))

        else:
            raise GraphParseError(lineno, f"unknown keyword {keyword!r}")

    graph = TrafficGraph.from_arcs(nodes, arcs)
    _LOGGER.debug("Loaded graph with %d nodes and %d arcs", len(graph.nodes), len(graph.arcs))
    return graph


def load_graph_file(path: str) -> TrafficGraph:
    """Read and parse a graph document."""
    with open(path, "r", encoding="utf-8") as file:
        return load_graph(file.read())


def serialize_graph(graph: TrafficGraph) -> str:
    """Emit the graph grammar; sorted, so equal graphs give equal text."""
    lines = [f"node {node}" for node in sorted(graph.nodes)]
    for ident in sorted(graph.arcs):
        arc = graph.arcs[ident]
        line = f"arc {arc.id} {arc.source} {arc.target} {format_number(arc.length)}"
        if arc.kind != ARC_KIND_CORRIDOR:
            line += f" {arc.kind}"
        lines.append(line)
    return "\n".join(lines) + "\n"


@dataclass
class ArcCostBank:
    """Online estimate of one arc's traversal time.

    Until the estimator produces its first forecast the estimate is the
    nominal time ``length / v_max``.
    """

    arc: str
    nominal: float
    estimator: Forecaster
    agv: str | None = None
    last_estimate: float = field(init=False)
    observation_count: int = 0

    def __post_init__(self) -> None:
        self.last_estimate = self.nominal

    @property
    def is_warm(self) -> bool:
        return self.estimator.forecast() is not None


def nominal_time(arc: Arc, v_max: float) -> float:
    return arc.length / v_max


def build_banks(
    graph: TrafficGraph,
    method: MethodConfig,
    v_max: float,
    agvs: Iterable[str] | None = None,
) -> dict:
    """One bank per arc, or one per (arc, agv) when ``agvs`` is given."""
    if not v_max > 0:
        raise UsageError(f"v_max must be > 0, got {v_max}")
    if agvs is not None:
        agvs = sorted(set(agvs))
    banks: dict = {}
    for ident in sorted(graph.arcs):
        nominal = nominal_time(graph.arcs[ident], v_max)
        if agvs is None:
            banks[ident] = ArcCostBank(ident, nominal, make_forecaster(method))
        else:
            for agv in agvs:
                banks[(ident, agv)] = ArcCostBank(
                    ident, nominal, make_forecaster(method), agv=agv
                )
    return banks


def record_traversal(bank: ArcCostBank, observation) -> float:
    """Feed one TraversalObservation into its arc's bank.

    Returns the estimate used for planning from now on.
    """
    if observation.arc != bank.arc:
        raise UsageError(
            f"observation of arc {observation.arc} recorded in the bank of {bank.arc}"
        )
    if bank.agv is not None and observation.agv != bank.agv:
        raise UsageError(
            f"observation of {observation.agv} recorded in the bank of {bank.agv}"
        )
    duration = float(observation.duration)
    if not (math.isfinite(duration) and duration > 0.0):
        raise UsageError(
            f"traversal time on {bank.arc} must be finite and > 0, got {duration}"
        )
    bank.estimator.observe(observation.duration)
    bank.observation_count += 1
    forecast = bank.estimator.forecast()
    if forecast is not None:
        bank.last_estimate = forecast
    _LOGGER.debug(
        "Recorded %.4f s on %s (agv %s), estimate %.4f s",
        observation.duration, bank.arc, observation.agv, bank.last_estimate
    )
    return bank.last_estimate


def cost_snapshot(
    graph: TrafficGraph, banks: dict, v_max: float, agv: str | None = None
) -> dict[str, float]:
    """Planning cost of every arc.

    Banks keyed per (arc, agv) are read for ``agv``; arcs without a bank fall
    back to their nominal time. Estimates below the cost floor are clamped.
    """
    costs: dict[str, float] = {}
    for ident in sorted(graph.arcs):
        bank = banks.get(ident)
        if bank is None and agv is not None:
            bank = banks.get((ident, agv))
        if bank is None:
            value = nominal_time(graph.arcs[ident], v_max)
        else:
            value = bank.last_estimate
        costs[ident] = clamp_cost(value, ident)
    return costs
