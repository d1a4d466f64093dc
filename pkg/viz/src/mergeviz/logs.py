"""Readers for the merge benchmark's CSV log contract.

Two log kinds are understood, both headered CSV with one row per control
step:

* trajectory logs: ``t``, then ``{tag}_v_s, {tag}_v_d, {tag}_s, {tag}_d``
  for ``tag`` in ``ego, veh1, ..., vehN``, then the applied control
  ``u_s, u_d``, then the indicator flags ``collision, off_road,
  invalid_merge``.
* belief logs: ``t``, then six posterior-mean driver parameters per
  traffic vehicle (``veh{k}_desired_speed`` ... ``veh{k}_yield_factor``),
  then the filter ``entropy``.

Readers validate the header against the contract and every data row for
arity and numeric content, and report the first offence by file and
one-based line number.  Nothing here imports the simulator; the column
layout above is the whole coupling.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

PARAM_FIELDS = (
    "desired_speed",
    "time_headway",
    "max_accel",
    "comfort_decel",
    "min_gap",
    "yield_factor",
)
STATE_FIELDS = ("v_s", "v_d", "s", "d")
FLAG_FIELDS = ("collision", "off_road", "invalid_merge")
CONTROL_FIELDS = ("u_s", "u_d")


class LogFormatError(ValueError):
    """A log file does not match the CSV contract."""


def trajectory_header(n_vehicles: int) -> list[str]:
    cols = ["t"]
    for v in range(n_vehicles + 1):
        tag = "ego" if v == 0 else f"veh{v}"
        cols += [f"{tag}_{f}" for f in STATE_FIELDS]
    return cols + list(CONTROL_FIELDS) + list(FLAG_FIELDS)


def belief_header(n_vehicles: int) -> list[str]:
    cols = ["t"]
    for v in range(1, n_vehicles + 1):
        cols += [f"veh{v}_{f}" for f in PARAM_FIELDS]
    cols.append("entropy")
    return cols


def _read_csv(path: Path) -> tuple[list[str], list[tuple[int, list[str]]]]:
    """Header plus (line_number, fields) rows; line numbers are one-based."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            rows = [(ln, row) for ln, row in enumerate(reader, start=1) if row]
    except OSError as exc:
        raise LogFormatError(f"{path}: cannot read log: {exc}") from exc
    if not rows:
        raise LogFormatError(f"{path}: empty file, expected a header row")
    (_, header), data = rows[0], rows[1:]
    if not data:
        raise LogFormatError(f"{path}: header only, expected at least one data row")
    return [c.strip() for c in header], data


def _infer_count(header: list[str], kind: str) -> int:
    """Traffic-vehicle count implied by the veh<k>_ columns present."""
    ks = set()
    for col in header:
        if col.startswith("veh"):
            head = col.split("_", 1)[0]
            if head[3:].isdigit():
                ks.add(int(head[3:]))
    if not ks:
        raise LogFormatError(
            f"no veh<k>_ columns found; not a {kind} log (header: {header[:6]}...)"
        )
    return max(ks)


def _check_header(path: Path, header: list[str], expected: list[str], kind: str) -> None:
    got, want = set(header), set(expected)
    missing = [c for c in expected if c not in got]
    if missing:
        raise LogFormatError(
            f"{path}: missing column(s) {missing} required by the {kind} log contract"
        )
    extra = [c for c in header if c not in want]
    if extra:
        raise LogFormatError(f"{path}: unexpected column(s) {extra} for a {kind} log")
    if header != expected:
        i = next(i for i, (a, b) in enumerate(zip(header, expected)) if a != b)
        raise LogFormatError(
            f"{path}: column {i} is '{header[i]}', contract puts '{expected[i]}' there"
        )


def _parse_rows(
    path: Path, header: list[str], data: list[tuple[int, list[str]]]
) -> NDArray[np.float64]:
    width = len(header)
    out = np.empty((len(data), width))
    for r, (ln, row) in enumerate(data):
        if len(row) != width:
            raise LogFormatError(
                f"{path}:{ln}: expected {width} fields, got {len(row)}"
            )
        for c, cell in enumerate(row):
            try:
                out[r, c] = float(cell)
            except ValueError:
                raise LogFormatError(
                    f"{path}:{ln}: field '{header[c]}' is not numeric: {cell!r}"
                ) from None
    t = out[:, 0]
    if np.any(np.diff(t) <= 0):
        ln = data[int(np.argmax(np.diff(t) <= 0)) + 1][0]
        raise LogFormatError(f"{path}:{ln}: time column is not strictly increasing")
    return out


@dataclass(frozen=True)
class TrajectoryLog:
    """Parsed trajectory log: (steps, 4*(n+1)+6) float matrix plus accessors."""

    path: Path
    n_vehicles: int
    data: NDArray[np.float64]

    @property
    def t(self) -> NDArray[np.float64]:
        return self.data[:, 0]

    def vehicle(self, k: int) -> NDArray[np.float64]:
        """State block (steps, 4) for vehicle k; k=0 is the ego."""
        if not 0 <= k <= self.n_vehicles:
            raise IndexError(f"vehicle {k} out of range 0..{self.n_vehicles}")
        lo = 1 + 4 * k
        return self.data[:, lo : lo + 4]

    @property
    def ego(self) -> NDArray[np.float64]:
        return self.vehicle(0)

    @property
    def controls(self) -> NDArray[np.float64]:
        lo = 1 + 4 * (self.n_vehicles + 1)
        return self.data[:, lo : lo + 2]

    @property
    def flags(self) -> NDArray[np.float64]:
        return self.data[:, -3:]

    @property
    def time_range(self) -> tuple[float, float]:
        return float(self.t[0]), float(self.t[-1])

    def row_at(self, time: float) -> int:
        """Index of the step nearest to ``time``; ``time`` must lie in range."""
        t0, t1 = self.time_range
        if not t0 - 1e-9 <= time <= t1 + 1e-9:
            raise LogFormatError(
                f"{self.path}: snapshot time {time} outside log range [{t0}, {t1}]"
            )
        return int(np.argmin(np.abs(self.t - time)))


@dataclass(frozen=True)
class BeliefLog:
    """Parsed belief log: per-vehicle posterior parameter means plus entropy."""

    path: Path
    n_vehicles: int
    data: NDArray[np.float64]

    @property
    def t(self) -> NDArray[np.float64]:
        return self.data[:, 0]

    def param(self, k: int, field: str) -> NDArray[np.float64]:
        """Posterior-mean trace for vehicle k (1-based) and a named parameter."""
        if not 1 <= k <= self.n_vehicles:
            raise IndexError(f"vehicle {k} out of range 1..{self.n_vehicles}")
        col = 1 + 6 * (k - 1) + PARAM_FIELDS.index(field)
        return self.data[:, col]

    @property
    def entropy(self) -> NDArray[np.float64]:
        return self.data[:, -1]


def read_trajectory(path: str | Path) -> TrajectoryLog:
    path = Path(path)
    header, rows = _read_csv(path)
    n = _infer_count(header, "trajectory")
    _check_header(path, header, trajectory_header(n), "trajectory")
    return TrajectoryLog(path=path, n_vehicles=n, data=_parse_rows(path, header, rows))


def read_belief(path: str | Path) -> BeliefLog:
    path = Path(path)
    header, rows = _read_csv(path)
    if "entropy" not in header:
        raise LogFormatError(
            f"{path}: missing column 'entropy' required by the belief log contract"
        )
    n = _infer_count(header, "belief")
    _check_header(path, header, belief_header(n), "belief")
    return BeliefLog(path=path, n_vehicles=n, data=_parse_rows(path, header, rows))
