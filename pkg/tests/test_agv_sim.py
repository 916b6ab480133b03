"""Test the agv_sim module."""
import io
from dataclasses import replace

import numpy as np
import pytest

from agv_cost_estimation.agv_sim import (
    BatteryProfile,
    CostModel,
    MissionClock,
    SpeedResponse,
    TraversalObservation,
    build_sim_config,
    generate_reference_series,
    halt_time,
    read_series_csv,
    reference_truth,
    run_mission,
    soc_at,
    true_traversal_time,
    write_series_csv,
)
from agv_cost_estimation.config import load_settings
from agv_cost_estimation.exceptions import (
    ConfigError,
    RobotHaltedError,
    SeriesFormatError,
    UsageError,
)
from agv_cost_estimation.utils import derive_rng

DEFAULT_PROFILE = BatteryProfile(t_empty=7500.0)


def test_soc_at_endpoints_and_knots():
    """Test the SoC curve at its knots."""
    profile = BatteryProfile(t_empty=3600.0)
    assert soc_at(profile, 0.0) == 1.0
    assert soc_at(profile, 0.05 * 3600.0) == pytest.approx(0.93)
    assert soc_at(profile, 0.80 * 3600.0) == pytest.approx(0.88)
    assert soc_at(profile, 0.95 * 3600.0) == pytest.approx(0.30)
    assert soc_at(profile, 3600.0) == 0.0
    assert soc_at(profile, 5000.0) == 0.0


def test_soc_at_non_increasing():
    """Test SoC never rises with time."""
    times = np.linspace(0.0, 8000.0, 5001)
    levels = [soc_at(DEFAULT_PROFILE, t) for t in times]
    assert all(b <= a for a, b in zip(levels, levels[1:]))


def test_soc_at_negative_time():
    """Test negative times are refused."""
    with pytest.raises(UsageError):
        soc_at(DEFAULT_PROFILE, -1.0)


@pytest.mark.parametrize(
    "knots",
    [
        ((0.0, 1.0),),
        ((0.0, 0.9), (1.0, 0.0)),
        ((0.0, 1.0), (0.5, 0.5), (0.4, 0.3), (1.0, 0.0)),
        ((0.0, 1.0), (0.5, 0.5), (0.6, 0.7), (1.0, 0.0)),
    ],
)
def test_battery_profile_rejects_bad_knots(knots):
    """Test knot validation."""
    with pytest.raises(ConfigError):
        BatteryProfile(t_empty=100.0, knots=knots)


def test_halt_time_inverts_soc():
    """Test halt_time lands on the requested SoC."""
    assert halt_time(DEFAULT_PROFILE, 0.05) == pytest.approx(7437.5)
    assert soc_at(DEFAULT_PROFILE, halt_time(DEFAULT_PROFILE, 0.05)) == pytest.approx(0.05)
    assert halt_time(DEFAULT_PROFILE, 0.5) == pytest.approx(
        (0.80 + (0.88 - 0.5) / (0.88 - 0.30) * 0.15) * 7500.0
    )


def test_speed_response_is_continuous():
    """Test no jumps between the pieces of the speed law."""
    speed = SpeedResponse()
    for boundary in (0.93, 0.70, 0.35, 0.06):
        assert speed(boundary + 1e-9) == pytest.approx(speed(boundary - 1e-9), abs=1e-6)
    assert speed(1.0) == pytest.approx(0.98)
    assert speed(0.8) == 1.0
    assert speed(0.2) == pytest.approx(0.95)
    assert speed(0.05) == pytest.approx(0.05)


def test_speed_response_rejects_bad_order():
    """Test the SoC breakpoints must be ordered."""
    with pytest.raises(ConfigError):
        SpeedResponse(sag_high=0.3, sag_low=0.5)
    with pytest.raises(ConfigError):
        SpeedResponse(floor=0.99)


def test_true_traversal_time_noise_free():
    """Test the mean traversal time with constant speed."""
    model = CostModel(base_time=10.0, friction=1.0, noise_std=0.0)
    assert true_traversal_time(model, DEFAULT_PROFILE, 3000.0) == pytest.approx(10.0)
    model = replace(model, friction=1.15)
    assert true_traversal_time(model, DEFAULT_PROFILE, 3000.0) == pytest.approx(11.5)


def test_true_traversal_time_halts():
    """Test RobotHaltedError once SoC reaches the halt level."""
    model = CostModel(base_time=10.0)
    with pytest.raises(RobotHaltedError) as err:
        true_traversal_time(model, DEFAULT_PROFILE, 7437.5 + 1e-6)
    assert err.value.time == pytest.approx(7437.5, abs=1e-3)
    with pytest.raises(RobotHaltedError):
        true_traversal_time(model, DEFAULT_PROFILE, 9000.0)


def test_true_traversal_time_always_positive():
    """Test heavy noise never yields a non-positive time."""
    model = CostModel(base_time=1.0, noise_std=2.0)
    rng = np.random.default_rng(0)
    samples = [true_traversal_time(model, DEFAULT_PROFILE, 100.0, rng) for _ in range(2000)]
    assert min(samples) > 0


def test_cost_shape_over_life():
    """Test the falling, stable and rising phases over battery life."""
    model = CostModel(base_time=10.0)
    life = halt_time(DEFAULT_PROFILE, model.halt_soc)
    grid = np.linspace(0.0, life, 1000, endpoint=False)
    costs = np.array([true_traversal_time(model, DEFAULT_PROFILE, t) for t in grid])
    plateau = float(np.median(costs))

    early = costs[grid < 0.05 * life]
    assert np.all(np.diff(early) < 0)

    middle = costs[(grid >= 0.10 * life) & (grid <= 0.80 * life)]
    assert np.all(np.abs(middle - plateau) <= 0.02 * plateau)

    late = costs[grid >= 0.95 * life]
    assert late.max() >= 2.0 * plateau


def test_reference_series_length(sim_config):
    """Test the series stops at the last sample before the halt."""
    series = generate_reference_series(sim_config)
    expected = 0
    while soc_at(sim_config.battery, expected * sim_config.sampling_interval) > 0.05:
        expected += 1
    assert len(series) == expected == 372
    assert series[0].start_time == 0.0
    assert series[-1].start_time == pytest.approx(7420.0)
    assert all(obs.arc == "a12" and obs.duration > 0 for obs in series)


def test_reference_series_length_short_battery(reference_settings, floor_graph):
    """Test the series length follows the knots for another battery."""
    settings = dict(reference_settings)
    settings["battery"] = dict(settings["battery"], t_empty=3600.0)
    settings["sampling_interval"] = 10.0
    config = build_sim_config(settings, floor_graph)
    expected = sum(
        1 for k in range(400) if soc_at(config.battery, k * 10.0) > 0.05
    )
    assert len(generate_reference_series(config)) == expected


def test_reference_series_reproducible(sim_config):
    """Test equal seeds give identical series, other seeds do not."""
    first = generate_reference_series(sim_config)
    second = generate_reference_series(sim_config)
    assert first == second
    other = generate_reference_series(replace(sim_config, seed=43))
    assert [o.duration for o in other] != [o.duration for o in first]


def test_reference_truth_matches_series_grid(sim_config):
    """Test the noise-free series covers the same times."""
    truth = reference_truth(sim_config)
    series = generate_reference_series(sim_config)
    assert len(truth) == len(series)
    assert np.median(truth) == pytest.approx(10.0)


def test_build_sim_config(sim_config):
    """Test cost models per arc from the settings."""
    assert sim_config.reference_arc == "a12"
    assert sim_config.cost_models["a12"].base_time == pytest.approx(10.0)
    assert sim_config.cost_models["a12"].noise_std == pytest.approx(0.2)
    assert sim_config.cost_models["a2p1"].friction == pytest.approx(1.15)
    assert sim_config.cost_models["a12"].friction == 1.0


def test_build_sim_config_arc_override(floor_graph, tmp_path):
    """Test per-arc friction overrides."""
    path = tmp_path / "override.conf"
    path.write_text("arcs.a23.friction 1.4\narcs.a23.noise_fraction 0.0\n")
    config = build_sim_config(load_settings(str(path)), floor_graph)
    assert config.cost_models["a23"].friction == 1.4
    assert config.cost_models["a23"].noise_std == 0.0


def test_build_sim_config_unknown_reference_arc(reference_settings, floor_graph):
    """Test an unknown reference arc is a configuration error."""
    settings = dict(reference_settings, reference_arc="zz")
    with pytest.raises(ConfigError):
        build_sim_config(settings, floor_graph)


def test_run_mission_advances_clock(sim_config, floor_graph):
    """Test the clock moves by each traversal."""
    clock = MissionClock(100.0)
    result = run_mission(floor_graph, sim_config, "agv1", ["a12", "a23"], clock)
    assert not result.halted
    assert [obs.arc for obs in result.observations] == ["a12", "a23"]
    first, second = result.observations
    assert first.start_time == 100.0
    assert second.start_time == pytest.approx(100.0 + first.duration)
    assert clock.now == pytest.approx(second.start_time + second.duration)


def test_run_mission_rejects_gaps(sim_config, floor_graph):
    """Test non-contiguous paths are refused."""
    with pytest.raises(UsageError):
        run_mission(floor_graph, sim_config, "agv1", ["a12", "a34"], MissionClock())


def test_run_mission_halts(sim_config, floor_graph):
    """Test a mission started at the halt stops without traversals."""
    clock = MissionClock(7440.0)
    result = run_mission(floor_graph, sim_config, "agv1", ["a12"], clock)
    assert result.halted
    assert result.observations == ()
    assert result.halt_time == 7440.0


def test_derive_rng_streams_independent():
    """Test labels select independent, reproducible streams."""
    a = derive_rng(42, "reference", "a12").normal(size=3)
    b = derive_rng(42, "reference", "a12").normal(size=3)
    c = derive_rng(42, "reference", "a21").normal(size=3)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_series_csv_round_trip():
    """Test write then read keeps exact values."""
    series = [
        TraversalObservation("a12", "agv1", 0.0, 10.123456789012345),
        TraversalObservation("a12", "agv1", 20.0, 9.8),
    ]
    buffer = io.StringIO()
    write_series_csv(buffer, series)
    text = buffer.getvalue()
    assert text.startswith("t,arc,agv,duration\n")
    assert "\r" not in text
    assert read_series_csv(io.StringIO(text)) == series


@pytest.mark.parametrize(
    "text,row",
    [
        ("t,arc,agv,duration\n0.0,a12,agv1,abc\n", 2),
        ("t,arc,agv,duration\n0.0,a12,agv1,10.0\n20.0,a12,agv1,-1\n", 3),
        ("t,arc,agv,duration\n0.0,a12,10.0\n", 2),
        ("t,arc,agv,duration\n0.0,a12,agv1,10.0\n20.0,a12,agv1,10.0,7\n", 3),
        ("", 1),
        ("time,arc\n", 1),
    ],
)
def test_read_series_csv_errors(text, row):
    """Test malformed rows report their row number."""
    with pytest.raises(SeriesFormatError) as err:
        read_series_csv(io.StringIO(text))
    assert err.value.row == row


def test_read_series_csv_skips_comments_and_blank_rows():
    """Test trailer comments and blank rows carry no observation."""
    text = (
        "t,arc,agv,duration\n0.0,a12,agv1,10.0\n\n"
        "20.0,a13,agv2,12.5\n# rmse=0.1 count=1\n"
    )
    series = read_series_csv(io.StringIO(text))
    assert series == [
        TraversalObservation("a12", "agv1", 0.0, 10.0),
        TraversalObservation("a13", "agv2", 20.0, 12.5),
    ]
