"""Bathing task phases shared by planner, controller, and simulator."""

from __future__ import annotations

import enum


class TaskKind(enum.Enum):
    WASH = "wash"
    RINSE = "rinse"
    DRY = "dry"
    FREE_MOTION = "free"

    @staticmethod
    def parse(name: str) -> "TaskKind":
        try:
            return TaskKind(name.strip().lower())
        except ValueError:
            raise ValueError(f"unknown task {name!r}; expected one of "
                             f"{[t.value for t in TaskKind]}") from None
