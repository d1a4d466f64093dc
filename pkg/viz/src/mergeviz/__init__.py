"""Offline plotting for merge benchmark CSV logs."""

from .figures import (
    PlotSpec,
    PlotSpecError,
    build_belief_figure,
    build_snapshot_figure,
    plot_belief,
    plot_snapshots,
)
from .logs import (
    BeliefLog,
    LogFormatError,
    TrajectoryLog,
    belief_header,
    read_belief,
    read_trajectory,
    trajectory_header,
)

__all__ = [
    "BeliefLog",
    "LogFormatError",
    "PlotSpec",
    "PlotSpecError",
    "TrajectoryLog",
    "belief_header",
    "build_belief_figure",
    "build_snapshot_figure",
    "plot_belief",
    "plot_snapshots",
    "read_belief",
    "read_trajectory",
    "trajectory_header",
]
