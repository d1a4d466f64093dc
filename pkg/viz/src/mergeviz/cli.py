"""Console entry points: plot-snapshots and plot-belief.

Both read CSV logs produced by the merge benchmark, write one image, and
print its path.  Contract violations in the input (bad header, malformed
row, snapshot time outside the log) exit with status 2 and a message on
stderr naming the offence.
"""

from __future__ import annotations

import argparse
import sys

import matplotlib

matplotlib.use("Agg")

from .figures import PlotSpec, PlotSpecError, plot_belief, plot_snapshots
from .logs import LogFormatError


def _run(build_spec, render, argv) -> int:
    try:
        out = render(build_spec(argv))
    except (LogFormatError, PlotSpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(out)
    return 0


def _snapshot_spec(argv) -> PlotSpec:
    p = argparse.ArgumentParser(
        prog="plot-snapshots",
        description="Render a top-down snapshot grid from trajectory logs, "
        "one column per log, plus an ego velocity panel.",
    )
    p.add_argument("logs", nargs="+", help="trajectory CSV log(s), one column each")
    p.add_argument("--times", nargs="+", type=float, required=True,
                   metavar="T", help="snapshot times in seconds, one frame row each")
    p.add_argument("--out", required=True, help="output image (.png or .svg)")
    p.add_argument("--labels", nargs="+", default=None,
                   help="column titles, one per log (default: file stems)")
    p.add_argument("--ramp-end", type=float, default=None,
                   help="station where the ramp lane closes (default 300)")
    a = p.parse_args(argv)
    kw = {}
    if a.labels is not None:
        kw["labels"] = tuple(a.labels)
    if a.ramp_end is not None:
        kw["ramp_end"] = a.ramp_end
    return PlotSpec(logs=tuple(a.logs), out=a.out, times=tuple(a.times), **kw)


def _belief_spec(argv) -> PlotSpec:
    p = argparse.ArgumentParser(
        prog="plot-belief",
        description="Render posterior-mean yield factors and filter entropy "
        "over time from one belief log.",
    )
    p.add_argument("log", help="belief CSV log")
    p.add_argument("--out", required=True, help="output image (.png or .svg)")
    p.add_argument("--label", default=None, help="figure title")
    a = p.parse_args(argv)
    kw = {"labels": (a.label,)} if a.label is not None else {}
    return PlotSpec(logs=(a.log,), out=a.out, **kw)


def main_snapshots(argv=None) -> int:
    return _run(_snapshot_spec, plot_snapshots, argv)


def main_belief(argv=None) -> int:
    return _run(_belief_spec, plot_belief, argv)


if __name__ == "__main__":
    sys.exit(main_snapshots())
