"""Exceptions for the AGV cost estimation package."""
from __future__ import annotations


class AgvCostError(Exception):
    """Base error of the package."""


class ConfigError(AgvCostError):
    """Error to indicate a configuration value is out of range."""


class UsageError(AgvCostError):
    """Error to indicate an operation was called with invalid arguments."""


class SingularWindowError(AgvCostError):
    """Error to indicate a moving window holds degenerate regressors."""


class NumericBreakdownError(AgvCostError):
    """Error to indicate a filter produced a non-finite or invalid quantity."""


class GraphError(AgvCostError):
    """Error to indicate a structurally invalid graph document."""


class GraphParseError(GraphError):
    """Error to indicate a syntax error in a graph document."""

    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


class DanglingEndpointError(GraphError):
    """Error to indicate an arc references an undeclared node."""

    def __init__(self, node: str, line: int | None = None) -> None:
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}arc endpoint {node} is not a declared node")
        self.node = node
        self.line = line


class DuplicateIdError(GraphError):
    """Error to indicate a node or arc id is declared twice."""

    def __init__(self, ident: str, line: int | None = None) -> None:
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}duplicate id {ident}")
        self.ident = ident
        self.line = line


class RobotHaltedError(AgvCostError):
    """Error to indicate the battery can no longer drive the robot."""

    def __init__(self, time: float, soc: float) -> None:
        super().__init__(f"robot halted at t={time:.3f} s (SoC {soc:.4f})")
        self.time = time
        self.soc = soc


class UnreachableError(AgvCostError):
    """Error to indicate there is no path between two nodes."""


class PlanningFailedError(AgvCostError):
    """Error to indicate no conflict-free plan exists among the candidates."""


class SeriesFormatError(AgvCostError):
    """Error to indicate a malformed row in a series CSV."""

    def __init__(self, row: int, message: str) -> None:
        super().__init__(f"row {row}: {message}")
        self.row = row


class SeriesTooShortError(UsageError):
    """Error to indicate a series yields no one-step-ahead forecast."""

    def __init__(self, length: int, required: int, method: str) -> None:
        super().__init__(
            f"{method} needs at least {required} observations to forecast one, "
            f"got {length}"
        )
        self.length = length
        self.required = required
