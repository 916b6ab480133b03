"""Utility functions for the AGV cost estimation package."""
from __future__ import annotations

import hashlib
import logging
import math
from typing import Iterable, Sequence, TextIO
import zlib

import numpy as np
import pandas as pd

from .const import COST_FLOOR

_LOGGER = logging.getLogger(__name__)


def format_number(value: float) -> str:
    """Format a float so that it parses back to the identical value."""
    return repr(float(value))


def clamp_cost(value: float, context: str = "arc") -> float:
    """Clamp an estimated traversal time to the planning floor.

    Args:
        value: The estimated traversal time in seconds
        context: Context string for logging (e.g. the arc id)

    Returns:
        float: The value, or COST_FLOOR when the estimate is below it
    """
    if not math.isfinite(value):
        _LOGGER.warning(
            "%s estimate %s is not finite, clamping to %s s",
            context, value, COST_FLOOR
        )
        return COST_FLOOR
    if value < COST_FLOOR:
        _LOGGER.warning(
            "%s estimate %.6f s is below the cost floor, clamping to %s s",
            context, value, COST_FLOOR
        )
        return COST_FLOOR
    return float(value)


def derive_rng(seed: int, *labels: str) -> np.random.Generator:
    """Return a generator derived from the run seed and stream labels.

    Each label is hashed with CRC-32 so that independent streams (the
    reference series, warm-up traversals, a mission) do not depend on the
    order in which other streams consume their draws.
    """
    entropy = [int(seed)] + [zlib.crc32(label.encode("utf-8")) for label in labels]
    return np.random.default_rng(entropy)


def digest_lines(lines: list[str]) -> str:
    """Return the hex BLAKE2b digest (8 bytes) of the joined lines."""
    payload = "\n".join(lines).encode("utf-8")
    return hashlib.blake2b(payload, digest_size=8).hexdigest()


def write_csv_frame(
    stream: TextIO,
    header: Sequence[str],
    rows: Iterable[Sequence[str]],
    trailer: Iterable[str] = (),
) -> None:
    """Write pre-formatted rows as CSV, then ``# key=value`` trailer lines.

    Cells are written as given, so numbers keep their ``format_number`` text.
    """
    frame = pd.DataFrame(list(rows), columns=list(header), dtype=object)
    frame.to_csv(stream, index=False, lineterminator="\n")
    for line in trailer:
        stream.write(f"# {line}\n")
