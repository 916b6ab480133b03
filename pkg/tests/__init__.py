"""Test package for the AGV cost estimation package."""
