"""Closed-loop simulator and control library for robot-assisted bed bathing."""

__version__ = "0.1.0"

from .geometry import Pose6, PoseError, Wrench, compose, pose_error
from .tasks import TaskKind

__all__ = ["Pose6", "PoseError", "Wrench", "compose", "pose_error",
           "TaskKind", "__version__"]
