"""Pytest configuration file."""
import os

import pytest

from agv_cost_estimation.agv_sim import build_sim_config
from agv_cost_estimation.config import load_settings
from agv_cost_estimation.traffic_graph import load_graph, load_graph_file

DATA_DIR = os.path.join(
    os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
    "agv_cost_estimation",
    "data",
)

LINE_GRAPH = """
node n1
node n2
node n3
arc a12 n1 n2 2.0
arc a21 n2 n1 2.0
arc a23 n2 n3 2.0
arc a32 n3 n2 2.0
"""


def data_path(name: str) -> str:
    """Path of a file shipped in the package data directory."""
    return os.path.join(DATA_DIR, name)


@pytest.fixture
def floor_graph():
    """The six-node reference floor."""
    return load_graph_file(data_path("floor.graph"))


@pytest.fixture
def reference_settings():
    """Validated settings of the reference run."""
    return load_settings(data_path("reference.conf"))


@pytest.fixture
def sim_config(reference_settings, floor_graph):
    """SimConfig of the reference run."""
    return build_sim_config(reference_settings, floor_graph)


@pytest.fixture
def line_graph():
    """Three nodes in a line, arcs both ways."""
    return load_graph(LINE_GRAPH)


@pytest.fixture
def crossing_graph():
    """Two routes from s to g sharing nothing but the endpoints."""
    return load_graph_file(data_path("crossing.graph"))


@pytest.fixture
def crossing_settings():
    """Settings of the contested-crossing scenario."""
    return load_settings(data_path("crossing.conf"))
