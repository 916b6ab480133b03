"""Online arc cost estimation for battery-driven AGVs."""
from __future__ import annotations

import logging
from typing import Any, Mapping

from .const import DEBUG_PREFIX

_LOGGER = logging.getLogger(__name__)
VERSION = "1.0.0"


def setup_debug_logging(config: Mapping[str, Any]) -> None:
    """Set up debug logging for the package."""
    if config.get("debug", False):
        logging.getLogger(DEBUG_PREFIX).setLevel(logging.DEBUG)
        _LOGGER.info("Debug logging enabled for %s", DEBUG_PREFIX)
