"""Shared factories that write small contract-conforming CSV logs.

Tests corrupt them through the ``mutate`` hook to probe the error paths,
so the factories hand back header and string rows before writing.
"""

from __future__ import annotations

import csv

import numpy as np
import pytest

from mergeviz.logs import belief_header, trajectory_header

DT = 0.1


def _write(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


@pytest.fixture
def make_trajectory(tmp_path):
    """Factory for a plausible merge trajectory log.

    Ego starts on the ramp (d = -3.5), drifts to the lane center between
    t = 2 s and t = 4 s; traffic holds the lane at constant speed.
    """

    def _make(name="traj.csv", n_vehicles=2, steps=61, mutate=None):
        header = trajectory_header(n_vehicles)
        rows = []
        for k in range(steps):
            t = k * DT
            lat_rate = 1.75 if 2.0 <= t < 4.0 else 0.0
            d_ego = min(0.0, -3.5 + 1.75 * max(0.0, t - 2.0))
            row = [t, 10.0 + 0.5 * t, lat_rate, 14.0 + 10.0 * t + 0.25 * t * t, d_ego]
            for v in range(1, n_vehicles + 1):
                row += [10.2, 0.0, 8.0 * v + 10.2 * t, 0.0]
            row += [0.5, lat_rate, 0.0, 0.0, 0.0]
            rows.append([repr(float(x)) for x in row])
        if mutate is not None:
            header, rows = mutate(list(header), rows)
        return _write(tmp_path / name, header, rows)

    return _make


@pytest.fixture
def make_belief(tmp_path):
    """Factory for a belief log: vehicle 1 trends friendly, the rest do not."""

    def _make(name="belief.csv", n_vehicles=3, steps=41, constant=False, mutate=None):
        header = belief_header(n_vehicles)
        finals = [0.9] + [0.15] * (n_vehicles - 1)
        rows = []
        for k in range(steps):
            t = k * DT
            frac = 0.0 if constant else k / (steps - 1)
            row = [t]
            for v in range(n_vehicles):
                y = 0.5 + (finals[v] - 0.5) * frac
                row += [10.3, 1.2, 1.4, 2.0, 2.1, y]
            row.append(float(np.log(20.0)) - (0.0 if constant else 1.0 * frac))
            rows.append([repr(float(x)) for x in row])
        if mutate is not None:
            header, rows = mutate(list(header), rows)
        return _write(tmp_path / name, header, rows)

    return _make
