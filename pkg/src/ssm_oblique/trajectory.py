"""Sampled-trajectory data model, CSV persistence, snapshot matrices, delay embedding.

A :class:`Trajectory` is the currency of the whole toolkit: a uniformly
sampled time series of an observable vector, stored column-wise (one column
per sample). All downstream algorithms (peak finding, DMD, regression)
assume a fixed sample step, so non-uniform input is rejected outright
instead of being resampled.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

# Relative tolerance on the sample step; anything worse is rejected.
UNIFORM_RTOL = 1e-9

# Lossless float64 round trip through text.
_FLOAT_FMT = "%.17g"


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled time series: ``states[:, k]`` is the observable at ``times[k]``.

    Immutable after construction (arrays are marked read-only), so instances
    are safe to share across threads.
    """

    times: np.ndarray  # (n_samples,)
    states: np.ndarray  # (n_observables, n_samples)
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        times = _readonly(np.atleast_1d(self.times))
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 1:
            states = states[np.newaxis, :]
        states = _readonly(states)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)

        if times.ndim != 1:
            raise ValueError("times must be one-dimensional")
        n = times.size
        if n < 2:
            raise ValueError(f"a trajectory needs at least 2 samples, got {n}")
        if states.ndim != 2 or states.shape[1] != n:
            raise ValueError(
                f"states must be (p, {n}), got {states.shape}"
            )
        steps = np.diff(times)
        if np.any(steps <= 0):
            k = int(np.nonzero(steps <= 0)[0][0]) + 1
            raise ValueError(f"times must be strictly increasing (violated at index {k})")
        bad = _nonuniform_index(times)
        if bad is not None:
            raise ValueError(f"non-uniform sampling at index {bad}")
        if self.labels is not None:
            labels = tuple(str(s) for s in self.labels)
            if len(labels) != states.shape[0]:
                raise ValueError("one label per observable row is required")
            object.__setattr__(self, "labels", labels)

    @property
    def n_samples(self) -> int:
        return self.times.size

    @property
    def n_observables(self) -> int:
        return self.states.shape[0]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def row(self, index: int) -> "Trajectory":
        """Single-observable view (used as a scalar readout for peak finding)."""
        label = None if self.labels is None else (self.labels[index],)
        return Trajectory(self.times, self.states[index : index + 1], label)


def _nonuniform_index(times: np.ndarray) -> int | None:
    """Index of the first sample breaking step uniformity, or None."""
    steps = np.diff(times)
    ref = steps[0]
    bad = np.nonzero(np.abs(steps - ref) > UNIFORM_RTOL * abs(ref))[0]
    return int(bad[0]) + 1 if bad.size else None


@dataclass(frozen=True)
class SnapshotPair:
    """One-step-shifted snapshot matrices built from a trajectory.

    Columns 2..N of ``V1`` coincide with columns 1..N-1 of ``V2`` when both
    come from a single trajectory.
    """

    V1: np.ndarray
    V2: np.ndarray

    def __post_init__(self):
        v1 = _readonly(self.V1)
        v2 = _readonly(self.V2)
        object.__setattr__(self, "V1", v1)
        object.__setattr__(self, "V2", v2)
        if v1.shape != v2.shape:
            raise ValueError(f"snapshot matrices must share a shape, got {v1.shape} vs {v2.shape}")
        if v1.ndim != 2 or v1.shape[1] < 2:
            raise ValueError("snapshot matrices need at least 2 columns")


def load_csv(path) -> Trajectory:
    """Read a trajectory from CSV: time in the first column, observables after.

    A single non-numeric first row is treated as a header and its entries
    (beyond the time column) become row labels. Ragged rows and non-uniform
    sampling are rejected.
    """
    rows: list[list[float]] = []
    labels: tuple[str, ...] | None = None
    with open(path, newline="") as fh:
        for lineno, raw in enumerate(csv.reader(fh), start=1):
            if not raw or all(not tok.strip() for tok in raw):
                continue
            try:
                rows.append([float(tok) for tok in raw])
            except ValueError:
                if not rows and labels is None:
                    labels = tuple(tok.strip() for tok in raw[1:])
                    continue
                raise ValueError(f"{path}: line {lineno}: non-numeric value in data row")
            if len(rows) > 1 and len(rows[-1]) != len(rows[0]):
                raise ValueError(
                    f"{path}: line {lineno}: ragged row "
                    f"({len(rows[-1])} fields, expected {len(rows[0])})"
                )
    if len(rows) < 2:
        raise ValueError(f"{path}: need at least 2 data rows")
    if len(rows[0]) < 2:
        raise ValueError(f"{path}: need a time column plus at least one observable")
    data = np.asarray(rows, dtype=float)
    if labels is not None and len(labels) != data.shape[1] - 1:
        raise ValueError(f"{path}: header has {len(labels)} observable names for {data.shape[1] - 1} columns")
    return Trajectory(data[:, 0], data[:, 1:].T, labels)


def save_csv(traj: Trajectory, path) -> None:
    """Write a trajectory as CSV with 17 significant digits (lossless round trip)."""
    labels = traj.labels or tuple(f"y{i + 1}" for i in range(traj.n_observables))
    with open(path, "w", newline="\n") as fh:
        fh.write("t," + ",".join(labels) + "\n")
        for k in range(traj.n_samples):
            vals = [_FLOAT_FMT % traj.times[k]]
            vals += [_FLOAT_FMT % v for v in traj.states[:, k]]
            fh.write(",".join(vals) + "\n")


def delay_embed(signal: Trajectory, embed_dim: int, lag: int) -> Trajectory:
    """Stack lagged copies of a scalar signal into an ``embed_dim``-row trajectory.

    Row k of the output at column j equals the input at sample ``j + k*lag``;
    the output keeps the first ``N - (embed_dim-1)*lag`` time stamps. The lag
    is an integer number of samples, never seconds, so no interpolation is
    involved.
    """
    if signal.n_observables != 1:
        raise ValueError("delay embedding expects a scalar signal (p = 1)")
    if embed_dim < 1 or lag < 1:
        raise ValueError("embed_dim and lag must be positive integers")
    n_out = signal.n_samples - (embed_dim - 1) * lag
    if n_out < 2:
        raise ValueError(
            f"signal too short: {signal.n_samples} samples cannot support "
            f"embed_dim={embed_dim}, lag={lag}"
        )
    x = signal.states[0]
    rows = np.stack([x[k * lag : k * lag + n_out] for k in range(embed_dim)])
    labels = tuple(f"v_lag{k * lag}" for k in range(embed_dim))
    return Trajectory(signal.times[:n_out], rows, labels)


def snapshot_pair(traj: Trajectory) -> SnapshotPair:
    """Split a trajectory into the one-step-shifted matrices used by DMD."""
    if traj.n_samples < 3:
        raise ValueError("need at least 3 samples to form a snapshot pair")
    return SnapshotPair(traj.states[:, :-1], traj.states[:, 1:])


def restrict(traj: Trajectory, start: int, stop: int) -> Trajectory:
    """Slice the sample range ``[start, stop]`` (inclusive, 0-based)."""
    n = traj.n_samples
    if not (0 <= start <= stop < n):
        raise ValueError(f"empty or out-of-bounds range [{start}, {stop}] for {n} samples")
    if stop - start + 1 < 2:
        raise ValueError("restricted trajectory needs at least 2 samples")
    return Trajectory(traj.times[start : stop + 1], traj.states[:, start : stop + 1], traj.labels)
