"""Figure builders for merge logs.

Two products: a snapshot grid (one column per run, one row per requested
time, top-down road view with vehicle footprints, plus a shared ego
velocity panel) and a belief-evolution figure (posterior-mean yield
factor per vehicle plus filter entropy against time).

Builders return live matplotlib figures so callers and tests can inspect
axes structure; ``plot_snapshots`` / ``plot_belief`` wrap them with log
parsing, validation, and a deterministic save.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import matplotlib
import matplotlib.pyplot as plt
from matplotlib.gridspec import GridSpec
from matplotlib.patches import Rectangle

from .logs import (
    BeliefLog,
    LogFormatError,
    TrajectoryLog,
    read_belief,
    read_trajectory,
)

# Footprint and lane geometry mirror the simulator's constants.
VEHICLE_LENGTH = 4.5
VEHICLE_WIDTH = 1.8
LANE_HALF_WIDTH = 1.75
RAMP_EDGE = -5.25
DEFAULT_RAMP_END = 300.0

ROAD_COLOR = "0.88"
TRAFFIC_COLOR = "tab:blue"
EGO_COLOR = "tab:orange"
RUN_COLORS = ("tab:green", "tab:purple", "tab:red", "tab:brown", "tab:cyan")


class PlotSpecError(ValueError):
    """A plot request is internally inconsistent or outside the logged data."""


@dataclass(frozen=True)
class PlotSpec:
    """What to plot: which logs, at which times, to which file.

    ``times`` are only meaningful for snapshot grids and every entry must
    fall inside every log's time range; ``labels`` defaults to the log
    file stems.
    """

    logs: tuple[Path, ...]
    out: Path
    times: tuple[float, ...] = ()
    labels: tuple[str, ...] = ()
    ramp_end: float = DEFAULT_RAMP_END

    def __post_init__(self):
        object.__setattr__(self, "logs", tuple(Path(p) for p in self.logs))
        object.__setattr__(self, "out", Path(self.out))
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        if not self.logs:
            raise PlotSpecError("no log files given")
        if self.labels and len(self.labels) != len(self.logs):
            raise PlotSpecError(
                f"{len(self.labels)} labels for {len(self.logs)} logs"
            )
        if self.ramp_end <= 0:
            raise PlotSpecError(f"ramp_end must be positive, got {self.ramp_end}")

    def resolved_labels(self) -> tuple[str, ...]:
        if self.labels:
            return self.labels
        return tuple(p.stem for p in self.logs)


def _draw_road(ax, s_lo: float, s_hi: float, ramp_end: float) -> None:
    ax.add_patch(
        Rectangle((s_lo, -LANE_HALF_WIDTH), s_hi - s_lo, 2 * LANE_HALF_WIDTH,
                  facecolor=ROAD_COLOR, edgecolor="none", zorder=0)
    )
    if s_lo < ramp_end:
        ax.add_patch(
            Rectangle((s_lo, RAMP_EDGE), min(s_hi, ramp_end) - s_lo,
                      -LANE_HALF_WIDTH - RAMP_EDGE,
                      facecolor=ROAD_COLOR, edgecolor="none", zorder=0)
        )
        ax.plot([s_lo, min(s_hi, ramp_end)], [-LANE_HALF_WIDTH] * 2,
                color="w", ls=(0, (6, 6)), lw=1.2, zorder=1)
    ax.plot([s_lo, s_hi], [LANE_HALF_WIDTH] * 2, color="0.3", lw=1.2, zorder=1)
    if ramp_end < s_hi:
        ax.plot([max(s_lo, ramp_end), s_hi], [-LANE_HALF_WIDTH] * 2,
                color="0.3", lw=1.2, zorder=1)
    if s_lo < ramp_end:
        ax.plot([s_lo, min(s_hi, ramp_end)], [RAMP_EDGE] * 2,
                color="0.3", lw=1.2, zorder=1)
    if s_lo < ramp_end < s_hi:
        ax.plot([ramp_end] * 2, [RAMP_EDGE, -LANE_HALF_WIDTH],
                color="0.3", lw=1.2, zorder=1)


def _draw_frame(ax, log: TrajectoryLog, row: int, window: tuple[float, float],
                ramp_end: float) -> None:
    _draw_road(ax, window[0], window[1], ramp_end)
    collided = log.flags[row, 0] > 0.5
    for k in range(log.n_vehicles + 1):
        s, d = log.vehicle(k)[row, 2:]
        face = EGO_COLOR if k == 0 else TRAFFIC_COLOR
        edge = "red" if (k == 0 and collided) else "0.15"
        ax.add_patch(
            Rectangle((s - VEHICLE_LENGTH / 2, d - VEHICLE_WIDTH / 2),
                      VEHICLE_LENGTH, VEHICLE_WIDTH, facecolor=face,
                      edgecolor=edge, lw=1.6 if k == 0 else 0.8, zorder=2)
        )
    ax.set_xlim(window)
    ax.set_ylim(RAMP_EDGE - 1.0, LANE_HALF_WIDTH + 1.2)
    ax.set_aspect("auto")
    ax.set_yticks([])


def build_snapshot_figure(
    logs: list[TrajectoryLog],
    times: tuple[float, ...],
    labels: tuple[str, ...],
    ramp_end: float = DEFAULT_RAMP_END,
):
    """Snapshot grid: len(times) frame rows x len(logs) columns, plus a
    full-width ego velocity panel underneath.  Frames in one row share the
    x-window so runs line up."""
    n_rows, n_cols = len(times), len(logs)
    fig = plt.figure(figsize=(4.4 * n_cols, 1.55 * n_rows + 2.6))
    gs = GridSpec(n_rows + 1, n_cols, figure=fig,
                  height_ratios=[1.0] * n_rows + [1.9], hspace=0.32, wspace=0.1)

    rows = [[log.row_at(t) for log in logs] for t in times]
    for i, t in enumerate(times):
        spread = []
        for j, log in enumerate(logs):
            spread += [log.vehicle(k)[rows[i][j], 2]
                       for k in range(log.n_vehicles + 1)]
        window = (min(spread) - 8.0, max(spread) + 8.0)
        for j, log in enumerate(logs):
            ax = fig.add_subplot(gs[i, j])
            _draw_frame(ax, log, rows[i][j], window, ramp_end)
            if i == 0:
                ax.set_title(labels[j], fontsize=11)
            if j == 0:
                ax.set_ylabel(f"t = {t:.1f} s", fontsize=9)
            if i < n_rows - 1:
                ax.set_xticklabels([])

    ax_v = fig.add_subplot(gs[n_rows, :])
    for j, log in enumerate(logs):
        ax_v.plot(log.t, log.vehicle(0)[:, 0],
                  color=RUN_COLORS[j % len(RUN_COLORS)], lw=1.6, label=labels[j])
    ax_v.vlines(list(times), 0, 1, transform=ax_v.get_xaxis_transform(),
                color="0.6", ls=":", lw=0.9, zorder=0)
    ax_v.set_xlabel("t [s]")
    ax_v.set_ylabel("ego forward speed [m/s]")
    ax_v.legend(loc="best", fontsize=9)
    ax_v.grid(alpha=0.3)
    return fig


def build_belief_figure(log: BeliefLog, label: str = ""):
    """Two stacked panels: posterior-mean yield factor per vehicle, then
    filter entropy, both against time."""
    fig, (ax_y, ax_h) = plt.subplots(
        2, 1, sharex=True, figsize=(7.2, 5.4),
        gridspec_kw={"height_ratios": [1.6, 1.0], "hspace": 0.12},
    )
    for k in range(1, log.n_vehicles + 1):
        ax_y.plot(log.t, log.param(k, "yield_factor"), lw=1.5, label=f"veh{k}")
    ax_y.set_ylabel("mean yield factor")
    ax_y.set_ylim(-0.05, 1.05)
    ax_y.legend(loc="best", fontsize=8, ncols=2)
    ax_y.grid(alpha=0.3)
    if label:
        ax_y.set_title(label, fontsize=11)
    ax_h.plot(log.t, log.entropy, color="0.2", lw=1.5)
    ax_h.set_ylabel("weight entropy [nats]")
    ax_h.set_xlabel("t [s]")
    ax_h.grid(alpha=0.3)
    return fig


def _save(fig, out: Path) -> Path:
    """Write the figure with run-independent bytes (no timestamps)."""
    out.parent.mkdir(parents=True, exist_ok=True)
    kind = out.suffix.lower().lstrip(".") or "png"
    if kind not in ("png", "svg", "pdf"):
        raise PlotSpecError(f"unsupported output format '.{kind}' for {out}")
    meta = {"Date": None} if kind in ("svg", "pdf") else None
    with matplotlib.rc_context({"svg.hashsalt": "mergeviz"}):
        fig.savefig(out, dpi=150, metadata=meta, bbox_inches="tight")
    plt.close(fig)
    return out


def plot_snapshots(spec: PlotSpec) -> Path:
    """Parse the trajectory logs in ``spec``, render the snapshot grid, and
    write it to ``spec.out``."""
    if not spec.times:
        raise PlotSpecError("snapshot grid needs at least one --times entry")
    logs = [read_trajectory(p) for p in spec.logs]
    for log in logs:
        for t in spec.times:
            log.row_at(t)  # raises if t is outside this log
    fig = build_snapshot_figure(logs, spec.times, spec.resolved_labels(),
                                spec.ramp_end)
    return _save(fig, spec.out)


def plot_belief(spec: PlotSpec) -> Path:
    """Parse the first log in ``spec`` as a belief log and write the
    evolution figure to ``spec.out``."""
    if len(spec.logs) != 1:
        raise PlotSpecError(
            f"belief figure takes exactly one log, got {len(spec.logs)}"
        )
    log = read_belief(spec.logs[0])
    fig = build_belief_figure(log, spec.resolved_labels()[0])
    return _save(fig, spec.out)
