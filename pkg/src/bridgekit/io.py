"""Stable CSV and JSON emission.

Floats are written with 17 significant digits so that values round-trip
bit-exactly; files always use LF line endings and a fixed column order.
"""

from __future__ import annotations

import csv
import json
import os

import numpy as np


def format_float(x) -> str:
    return format(float(x), ".17g")


def write_csv(path, header, rows):
    """Write ``rows`` (an iterable of sequences or a 2-d array) under ``header``."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, (int, np.integer, str)) else format_float(v) for v in row])


def read_csv(path):
    """Return ``(header, float array)``; an empty body gives shape ``(0, len(header))``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if not body:
        return header, np.zeros((0, len(header)))
    return header, np.array(body, dtype=np.float64)


def write_samples(path, samples):
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if samples.size == 0:
        samples = samples.reshape(0, samples.shape[-1] if samples.ndim == 2 else 0)
    write_csv(path, [f"comp{j}" for j in range(samples.shape[1])], samples)


def write_trajectory(path, traj, chain=0):
    """One chain of a :class:`~bridgekit.sampler.Trajectory` as ``step,t,comp0,...``."""
    rows = []
    for step, (t, state) in enumerate(zip(traj.times, traj.states)):
        state = np.asarray(state)
        vec = state[chain] if state.ndim == 2 else state
        rows.append([step, t, *vec])
    width = len(rows[0]) - 2 if rows else 0
    write_csv(path, ["step", "t"] + [f"comp{j}" for j in range(width)], rows)


def write_json(path, obj):
    with open(path, "w", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
