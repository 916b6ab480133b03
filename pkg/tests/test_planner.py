"""Test the planner module."""
from dataclasses import replace

import numpy as np
import pytest

from agv_cost_estimation.agv_sim import build_sim_config, true_traversal_time
from agv_cost_estimation.exceptions import PlanningFailedError, UnreachableError, UsageError
from agv_cost_estimation.planner import (
    Path,
    Plan,
    ReservationTable,
    build_plan,
    detect_conflict,
    iter_candidate_paths,
    path_cost,
    plan_with_reservations,
    replan_on_update,
    shortest_path,
)
from agv_cost_estimation.traffic_graph import Arc, TrafficGraph, load_graph


def _nominal(graph, v_max=0.2):
    return {ident: arc.length / v_max for ident, arc in graph.arcs.items()}


def _all_simple_paths(graph, src, dst):
    """Every simple path by depth-first enumeration."""
    found = []

    def walk(node, visited, arcs):
        if node == dst:
            found.append(tuple(arcs))
            return
        for ident in graph.outgoing(node):
            target = graph.arcs[ident].target
            if target not in visited:
                walk(target, visited | {target}, arcs + [ident])

    walk(src, {src}, [])
    return found


def _random_graph(rng):
    size = int(rng.integers(2, 9))
    nodes = [f"v{i}" for i in range(size)]
    arcs = []
    for u in nodes:
        for v in nodes:
            if u == v or rng.random() > 0.35:
                continue
            arcs.append((u, v))
            if rng.random() < 0.1:
                arcs.append((u, v))
    order = rng.permutation(len(arcs))
    graph = TrafficGraph.from_arcs(
        nodes,
        [Arc(f"e{index:02d}", u, v, 1.0) for index, (u, v) in zip(order, arcs)],
    )
    costs = {ident: float(rng.integers(1, 10)) for ident in sorted(graph.arcs)}
    src, dst = rng.choice(nodes, size=2, replace=False)
    return graph, costs, str(src), str(dst)


def _plan(arcs, intervals, agv="agv1"):
    return Plan(Path(tuple(arcs)), tuple(intervals), agv, "s", "t")


def test_shortest_path_same_node(floor_graph):
    """Test src == dst gives the empty path."""
    path = shortest_path(floor_graph, _nominal(floor_graph), "n2", "n2")
    assert path == Path()
    assert path_cost(_nominal(floor_graph), path) == 0.0


def test_shortest_path_parallel_arcs():
    """Test the cheaper of two parallel arcs is chosen."""
    graph = load_graph("node n1\nnode n2\narc fast n1 n2 1\narc slow n1 n2 1\n")
    assert shortest_path(graph, {"fast": 5.0, "slow": 3.0}, "n1", "n2") == Path(("slow",))


def test_shortest_path_tie_break_lexicographic():
    """Test equal-cost paths resolve to the smallest arc id sequence."""
    graph = load_graph(
        "node s\nnode a\nnode b\nnode t\n"
        "arc z1 s a 1\narc z2 a t 1\narc b1 s b 1\narc b2 b t 1\n"
    )
    costs = {"z1": 1.0, "z2": 2.0, "b1": 2.0, "b2": 1.0}
    assert shortest_path(graph, costs, "s", "t") == Path(("b1", "b2"))


def test_shortest_path_unreachable(floor_graph):
    """Test no path raises UnreachableError."""
    graph = load_graph("node a\nnode b\narc x b a 1\n")
    with pytest.raises(UnreachableError):
        shortest_path(graph, {"x": 1.0}, "a", "b")


def test_shortest_path_rejects_bad_costs(floor_graph):
    """Test missing or non-positive costs and unknown nodes."""
    costs = _nominal(floor_graph)
    with pytest.raises(UsageError):
        shortest_path(floor_graph, dict(costs, a12=0.0), "n1", "n2")
    with pytest.raises(UsageError):
        shortest_path(floor_graph, {"a12": 1.0}, "n1", "n2")
    with pytest.raises(UsageError):
        shortest_path(floor_graph, costs, "n1", "zz")


@pytest.mark.timeout(60)
def test_shortest_path_matches_brute_force():
    """Test optimality and tie-break on random small graphs."""
    rng = np.random.default_rng(2024)
    for _ in range(500):
        graph, costs, src, dst = _random_graph(rng)
        paths = _all_simple_paths(graph, src, dst)
        if not paths:
            with pytest.raises(UnreachableError):
                shortest_path(graph, costs, src, dst)
            continue
        best = min(path_cost(costs, arcs) for arcs in paths)
        expected = min(arcs for arcs in paths if path_cost(costs, arcs) == best)
        path = shortest_path(graph, costs, src, dst)
        assert path_cost(costs, path) == best
        assert path.arcs == expected


def test_shortest_path_scale_invariant():
    """Test scaling every cost keeps the arc sequence."""
    rng = np.random.default_rng(99)
    checked = 0
    while checked < 100:
        graph, costs, src, dst = _random_graph(rng)
        if not _all_simple_paths(graph, src, dst):
            continue
        scaled = {ident: value * 3.7 for ident, value in costs.items()}
        assert shortest_path(graph, costs, src, dst) == shortest_path(graph, scaled, src, dst)
        checked += 1


def test_candidates_non_decreasing(floor_graph):
    """Test candidate enumeration order and bound."""
    costs = _nominal(floor_graph)
    candidates = list(iter_candidate_paths(floor_graph, costs, "n1", "n3", k=32))
    totals = [cost for cost, _ in candidates]
    assert totals == sorted(totals)
    assert len({path.arcs for _, path in candidates}) == len(candidates)
    assert len(list(iter_candidate_paths(floor_graph, costs, "n1", "n3", k=2))) == 2


def test_detect_conflict_identical_plans():
    """Test identical plans conflict on every arc."""
    plan = _plan(["a", "b"], [(0.0, 5.0), (5.0, 9.0)])
    assert detect_conflict(plan, plan) == [("a", (0.0, 5.0)), ("b", (5.0, 9.0))]


def test_detect_conflict_disjoint_windows():
    """Test same arcs at different times do not conflict."""
    first = _plan(["a"], [(0.0, 5.0)])
    second = _plan(["a"], [(6.0, 9.0)], agv="agv2")
    assert detect_conflict(first, second) == []


def test_detect_conflict_overlap_interval():
    """Test the overlap window is the interval intersection."""
    first = _plan(["x"], [(0.0, 5.0)])
    second = _plan(["x"], [(4.0, 9.0)], agv="agv2")
    assert detect_conflict(first, second) == [("x", (4.0, 5.0))]


def test_detect_conflict_touching_is_free():
    """Test a handover at one instant is not a conflict."""
    first = _plan(["x"], [(0.0, 5.0)])
    second = _plan(["x"], [(5.0, 9.0)], agv="agv2")
    assert detect_conflict(first, second) == []


def test_plan_with_empty_table_matches_shortest_path(floor_graph):
    """Test an empty table gives the shortest path timing."""
    costs = _nominal(floor_graph)
    table = ReservationTable()
    plan = plan_with_reservations(floor_graph, costs, table, "n1", "p1", 100.0, "agv1")
    assert plan.path == shortest_path(floor_graph, costs, "n1", "p1")
    assert [list(interval) for interval in plan.intervals] == [
        pytest.approx([100.0, 110.0]),
        pytest.approx([110.0, 117.5]),
    ]
    assert plan.cost == pytest.approx(17.5)
    assert len(table) == 2


def test_plan_with_reservations_detours(floor_graph):
    """Test a reserved arc pushes the plan to the next candidate."""
    costs = _nominal(floor_graph)
    table = ReservationTable()
    table.reserve("agv2", "a13", 0.0, 30.0)
    plan = plan_with_reservations(floor_graph, costs, table, "n1", "n3", 0.0, "agv1")
    assert plan.path.arcs == ("a12", "a23")
    assert table.is_consistent()


def test_plan_with_reservations_fails_without_alternative(line_graph):
    """Test PlanningFailedError when every candidate conflicts."""
    costs = _nominal(line_graph)
    table = ReservationTable()
    table.reserve("agv2", "a12", 0.0, 100.0)
    with pytest.raises(PlanningFailedError):
        plan_with_reservations(line_graph, costs, table, "n1", "n3", 0.0, "agv1")


def test_own_reservations_do_not_block(line_graph):
    """Test an AGV never conflicts with itself."""
    costs = _nominal(line_graph)
    table = ReservationTable()
    table.reserve("agv1", "a12", 0.0, 100.0)
    plan = plan_with_reservations(line_graph, costs, table, "n1", "n3", 0.0, "agv1")
    assert plan.path.arcs == ("a12", "a23")


def test_reservation_table_stays_admissible(floor_graph):
    """Test random admissions never leave overlapping intervals."""
    rng = np.random.default_rng(17)
    costs = _nominal(floor_graph)
    nodes = sorted(floor_graph.nodes)
    table = ReservationTable()
    admitted = 0
    for step in range(200):
        src, dst = rng.choice(nodes, size=2, replace=False)
        try:
            plan_with_reservations(
                floor_graph, costs, table, str(src), str(dst),
                float(rng.uniform(0, 300)), f"agv{step % 5}",
            )
            admitted += 1
        except PlanningFailedError:
            pass
        assert table.is_consistent()
    assert admitted > 0


def test_adding_reservation_never_cheapens_plan(floor_graph):
    """Test monotone admission."""
    rng = np.random.default_rng(5)
    costs = _nominal(floor_graph)
    arcs = sorted(floor_graph.arcs)
    for _ in range(50):
        base = plan_with_reservations(
            floor_graph, costs, ReservationTable(), "n1", "n3", 0.0, "agv1"
        )
        table = ReservationTable()
        start = float(rng.uniform(0, 40))
        table.reserve("agv2", str(rng.choice(arcs)), start, start + float(rng.uniform(1, 20)))
        try:
            plan = plan_with_reservations(floor_graph, costs, table, "n1", "n3", 0.0, "agv1")
        except PlanningFailedError:
            continue
        assert plan.cost >= base.cost


def test_repeated_queries_identical(floor_graph):
    """Test tie-break determinism of whole plans."""
    costs = _nominal(floor_graph)
    plans = [
        plan_with_reservations(floor_graph, costs, ReservationTable(), "p1", "p2", 3.0)
        for _ in range(5)
    ]
    assert all(plan == plans[0] for plan in plans)


def test_reserve_refuses_overlap():
    """Test direct reservations are checked too."""
    table = ReservationTable()
    table.reserve("agv1", "x", 0.0, 5.0)
    table.reserve("agv2", "x", 5.0, 8.0)
    with pytest.raises(PlanningFailedError):
        table.reserve("agv3", "x", 4.0, 6.0)
    with pytest.raises(UsageError):
        table.reserve("agv3", "y", 4.0, 4.0)


def test_crossing_reversal_with_simulated_costs(crossing_graph, crossing_settings):
    """Test fast costs take the detour and slow costs the short route."""
    config = build_sim_config(crossing_settings, crossing_graph)
    t_empty = config.battery.t_empty
    routes = {}
    for age, fraction in (("new", 0.25), ("drained", 0.96)):
        depart = fraction * t_empty
        costs = {
            ident: true_traversal_time(replace(model, noise_std=0.0), config.battery, depart)
            for ident, model in config.cost_models.items()
        }
        table = ReservationTable()
        blocker = table.reserve("agv1", "a_mg", depart + 4.0, depart + 10.5)
        plan = plan_with_reservations(
            crossing_graph, costs, table, "s", "g", depart, "agv2"
        )
        short = build_plan(
            crossing_graph, Path(("a_sm", "a_mg")), costs, depart, "agv2", "s", "g"
        )
        blocker_plan = Plan(
            Path(("a_mg",)), ((blocker.entry, blocker.exit),), "agv1", "m", "g"
        )
        routes[age] = (plan.path.arcs, bool(detect_conflict(short, blocker_plan)))

    assert routes["new"] == (("a_sb", "a_bg"), True)
    assert routes["drained"] == (("a_sm", "a_mg"), False)


def test_replan_unchanged_costs_keeps_suffix(floor_graph):
    """Test replanning with the same costs reproduces the remaining plan."""
    costs = _nominal(floor_graph)
    table = ReservationTable()
    plan = plan_with_reservations(floor_graph, costs, table, "n1", "p1", 0.0, "agv1")
    again = replan_on_update(floor_graph, plan, 1, costs, table, plan.intervals[1][0])
    assert again.path.arcs == plan.path.arcs[1:]
    assert again.intervals == plan.intervals[1:]
    assert again.source == "n2"
    assert again.target == "p1"


def test_replan_switches_when_arc_slows(floor_graph):
    """Test a doubled estimate moves the plan to the cheaper alternative."""
    costs = _nominal(floor_graph)
    table = ReservationTable()
    plan = plan_with_reservations(floor_graph, costs, table, "n1", "n3", 0.0, "agv1")
    assert plan.path.arcs == ("a13",)

    slowed = dict(costs, a13=costs["a13"] * 2)
    again = replan_on_update(floor_graph, plan, 0, slowed, table, 0.0)
    best = min(path_cost(slowed, arcs) for arcs in _all_simple_paths(floor_graph, "n1", "n3"))
    assert again.path.arcs == ("a12", "a23")
    assert path_cost(slowed, again.path) == best
    assert table.reservations("a13") == []


def test_replan_warm_costs_not_worse(floor_graph):
    """Test the warm plan is optimal under warm costs."""
    rng = np.random.default_rng(4)
    cold = _nominal(floor_graph)
    warm = {ident: value * float(rng.uniform(0.8, 1.6)) for ident, value in cold.items()}
    table = ReservationTable()
    cold_plan = plan_with_reservations(floor_graph, cold, table, "n1", "p2", 0.0, "agv1")
    warm_plan = replan_on_update(floor_graph, cold_plan, 0, warm, table, 0.0)
    assert path_cost(warm, warm_plan.path) <= path_cost(warm, cold_plan.path)


def test_replan_failure_keeps_old_reservations(line_graph):
    """Test a failed replan leaves the AGV's remaining holds in the table."""
    costs = {ident: 10.0 for ident in line_graph.arcs}
    table = ReservationTable()
    plan = plan_with_reservations(line_graph, costs, table, "n1", "n3", 0.0, "agv2")
    assert [tuple(item) for item in plan.intervals] == [(0.0, 10.0), (10.0, 20.0)]
    table.reserve("agv1", "a23", 25.0, 40.0)

    slowed = dict(costs, a23=20.0)
    with pytest.raises(PlanningFailedError):
        replan_on_update(line_graph, plan, 1, slowed, table, 10.0)

    held = [(item.agv, item.entry, item.exit) for item in table.reservations("a23")]
    assert ("agv2", 10.0, 20.0) in held
    assert len(table) == 3
    assert table.is_consistent()

    # agv1 cannot take a23 over the still-held interval
    with pytest.raises(PlanningFailedError):
        table.reserve("agv1", "a23", 12.0, 18.0)


def test_release_returns_removed_reservations(line_graph):
    """Test release reports what it removed and restore puts it back."""
    costs = _nominal(line_graph)
    table = ReservationTable()
    plan = plan_with_reservations(line_graph, costs, table, "n1", "n3", 0.0, "agv1")
    released = table.release(plan, 1)
    assert [item.arc for item in released] == ["a23"]
    assert table.release(plan, 1) == []
    table.restore(released)
    assert len(table) == 2


def test_replan_rejects_bad_index(floor_graph):
    """Test completed must lie within the plan."""
    costs = _nominal(floor_graph)
    table = ReservationTable()
    plan = plan_with_reservations(floor_graph, costs, table, "n1", "p1", 0.0, "agv1")
    with pytest.raises(UsageError):
        replan_on_update(floor_graph, plan, 3, costs, table, 0.0)
