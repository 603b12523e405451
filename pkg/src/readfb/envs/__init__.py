"""Benchmark task families as finite Markov games."""

from __future__ import annotations

from ..game import GameSpec
from .kitchen import KitchenConfig, build_kitchen
from .sandwich import SandwichConfig, build_sandwich
from .sort import SortConfig, build_sort
from .sweep import SweepConfig, build_sweep

TASKS = ("sweep", "sandwich", "sort", "kitchen")


def build(task: str, level, **overrides) -> GameSpec:
    """Build a game by task family name and level (``"Y1_G1"``, ``3``, ``"cramped_room"``...)."""
    if task == "sweep":
        return build_sweep(SweepConfig(str(level), **overrides))
    if task == "sandwich":
        return build_sandwich(SandwichConfig(int(level), **overrides))
    if task == "sort":
        return build_sort(SortConfig(int(level), **overrides))
    if task == "kitchen":
        return build_kitchen(KitchenConfig(str(level), **overrides))
    raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")


__all__ = [
    "TASKS",
    "build",
    "build_kitchen",
    "build_sandwich",
    "build_sort",
    "build_sweep",
    "KitchenConfig",
    "SandwichConfig",
    "SortConfig",
    "SweepConfig",
]
