"""Paths of the robot description and calibration artifact shipped with the package."""

from __future__ import annotations

from importlib import resources
from pathlib import Path


def data_path(name: str) -> Path:
    return Path(str(resources.files("vhmpc") / "data" / name))


def robot_path() -> Path:
    return data_path("robot.json")


def calibration_path() -> Path:
    return data_path("calibration.json")
