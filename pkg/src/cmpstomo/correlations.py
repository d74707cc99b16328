"""Correlation tensors on the ordered simplex, shot ensembles, and error metrics.

File formats (plain CSV with a single ``#`` header line):

* correlation tensor::

      # order=4 grid_start=0 grid_step=1 grid_count=30 shots=150
      x1,x2,x3,x4,value[,stderr]

  positions in micrometres, ascending within a row, rows in lexicographic
  simplex order;
* shot ensemble::

      # grid_start=0 grid_step=1 grid_count=30
      theta_1,...,theta_count          (one row per shot, radians)
"""

from __future__ import annotations

import io
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import (
    DimensionMismatch,
    FormatError,
    OddOrderUnavailable,
    SimplexViolation,
    ValidationError,
)
from .simplex import gap_classes, simplex_indices, simplex_rank, simplex_size

log = logging.getLogger(__name__)

DEFAULT_MAX_ORDER = 6
# upper bound on (simplex entries x shots) processed per estimator chunk
_CHUNK_ELEMENTS = 4_000_000


@dataclass(frozen=True)
class Grid1D:
    start: float
    step: float
    count: int

    def __post_init__(self) -> None:
        if not (np.isfinite(self.start) and np.isfinite(self.step)):
            raise ValidationError("grid start and step must be finite")
        if self.step <= 0:
            raise ValidationError("grid step must be positive")
        if int(self.count) != self.count or self.count < 1:
            raise ValidationError("grid count must be a positive integer")
        object.__setattr__(self, "start", float(self.start))
        object.__setattr__(self, "step", float(self.step))
        object.__setattr__(self, "count", int(self.count))

    @property
    def positions(self) -> np.ndarray:
        return self.start + self.step * np.arange(self.count)

    @classmethod
    def parse(cls, spec: str) -> Grid1D:
        """Parse ``"start:step:count"``."""
        try:
            start, step, count = spec.split(":")
            return cls(float(start), float(step), int(count))
        except ValueError as exc:
            raise ValidationError(f"grid must look like 'start:step:count', got {spec!r}") from exc

    def __str__(self) -> str:
        return f"{self.start!r}:{self.step!r}:{self.count}"

    def index_of(self, x: np.ndarray) -> np.ndarray:
        """Grid indices of positions, rejecting off-grid values."""
        fidx = (np.asarray(x, dtype=float) - self.start) / self.step
        idx = np.rint(fidx).astype(np.int64)
        if np.any(np.abs(fidx - idx) > 1e-6) or np.any(idx < 0) or np.any(idx >= self.count):
            raise FormatError("position off the declared grid")
        return idx


def _check_even(order: int) -> None:
    if order < 1:
        raise ValidationError(f"order must be positive, got {order}")
    if order % 2:
        raise OddOrderUnavailable(order)


@dataclass(frozen=True, eq=False)
class CorrTensor:
    """An order-``n`` correlator stored on the ordered simplex of ``grid``.

    ``values[k]`` belongs to the ``k``-th non-decreasing index tuple in
    lexicographic order (see :func:`cmpstomo.simplex.simplex_indices`).
    """

    order: int
    grid: Grid1D
    values: np.ndarray
    shot_count: int | None = None
    std_err: np.ndarray | None = None

    def __post_init__(self) -> None:
        _check_even(self.order)
        values = np.array(self.values, dtype=float).ravel()
        expected = simplex_size(self.grid.count, self.order)
        if values.size != expected:
            raise DimensionMismatch(f"expected {expected} simplex values, got {values.size}")
        if not np.all(np.isfinite(values)):
            raise FormatError("correlator values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.std_err is not None:
            err = np.array(self.std_err, dtype=float).ravel()
            if err.shape != values.shape:
                raise DimensionMismatch("std_err must match values")
            if not np.all(np.isfinite(err)) or np.any(err < 0):
                raise FormatError("std_err must be finite and non-negative")
            err.setflags(write=False)
            object.__setattr__(self, "std_err", err)

    def __len__(self) -> int:
        return self.values.size

    def indices(self) -> np.ndarray:
        return simplex_indices(self.grid.count, self.order)

    def positions(self) -> np.ndarray:
        return self.grid.start + self.grid.step * self.indices()

    def gap_averaged(self) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
        """Average entries sharing the same gap tuple (translation classes).

        Returns:
            ``(gaps_in_steps, mean_values, std_err_of_mean or None)``.
        """
        gc = gap_classes(self.grid.count, self.order)
        sums = np.bincount(gc.class_of, weights=self.values, minlength=gc.num_classes)
        mean = sums / gc.multiplicity
        err = None
        if self.std_err is not None:
            var = np.bincount(gc.class_of, weights=self.std_err**2, minlength=gc.num_classes)
            err = np.sqrt(var) / gc.multiplicity
        return gc.gaps, mean, err

    def bound_violations(self) -> int:
        """Entries exceeding ``1 + 5 stdErr`` (impossible for an average of cosines)."""
        err = self.std_err if self.std_err is not None else 0.0
        return int(np.count_nonzero(np.abs(self.values) > 1 + 5 * err))


@dataclass(frozen=True, eq=False)
class ShotEnsemble:
    """Single-realisation phase profiles ``theta(x)``, one row per shot."""

    grid: Grid1D
    shots: np.ndarray

    def __post_init__(self) -> None:
        shots = np.array(self.shots, dtype=float)
        if shots.ndim != 2 or shots.shape[1] != self.grid.count or shots.shape[0] < 1:
            raise DimensionMismatch(f"shots must have shape (num_shots, {self.grid.count})")
        if not np.all(np.isfinite(shots)):
            raise FormatError("shot phases must be finite")
        shots.setflags(write=False)
        object.__setattr__(self, "shots", shots)

    @property
    def num_shots(self) -> int:
        return self.shots.shape[0]


def _alternating_sum(theta: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """``theta[i1] - theta[i2] + theta[i3] - ...`` accumulated left to right.

    Working on phases (not on unit phasors) keeps the cancellation of a
    per-shot offset algebraic: whenever the additions are exact, the result is
    bit-identical with and without the offset.
    """
    acc = theta[:, idx[:, 0]].copy()
    for j in range(1, idx.shape[1]):
        if j % 2:
            acc -= theta[:, idx[:, j]]
        else:
            acc += theta[:, idx[:, j]]
    return acc


def estimate_correlator(shots: ShotEnsemble, order: int, *, max_order: int = DEFAULT_MAX_ORDER) -> CorrTensor:
    """Sample mean of ``cos(theta1 - theta2 + ... - theta_n)`` on the simplex."""
    _check_even(order)
    if order > max_order:
        raise ValidationError(f"order {order} exceeds the configured maximum {max_order}")
    idx = simplex_indices(shots.grid.count, order)
    n = shots.num_shots
    mean = np.empty(len(idx))
    err = np.empty(len(idx)) if n > 1 else None
    chunk = max(1, _CHUNK_ELEMENTS // n)
    for lo in range(0, len(idx), chunk):
        c = np.cos(_alternating_sum(shots.shots, idx[lo : lo + chunk]))
        mean[lo : lo + chunk] = c.mean(axis=0)
        if err is not None:
            err[lo : lo + chunk] = c.std(axis=0, ddof=1) / np.sqrt(n)
    # a single shot has no sample variance, so std_err stays undefined
    return CorrTensor(order, shots.grid, mean, shot_count=n, std_err=err)


def raw_phase_average(shots: ShotEnsemble, positions_idx) -> complex:
    """``<exp(i(theta1 - theta2 + theta3 - ...))>`` for one index tuple, any parity.

    Exposed for demonstrating that odd orders retain the random global phase.
    """
    idx = np.asarray(positions_idx, dtype=np.int64)[None, :]
    return complex(np.mean(np.exp(1j * _alternating_sum(shots.shots, idx)[:, 0])))


class Deviation(NamedTuple):
    mean: float
    max: float
    excluded: int


def epsilon_metric(measured: CorrTensor, reconstructed: CorrTensor, *, floor: float = 1e-8) -> Deviation:
    """Mean and maximum of ``|C - C_rec| / |C_rec|`` over the simplex.

    Entries with ``|C_rec| < floor`` are left out of both statistics and
    counted in ``excluded``; the mean divides by the number of included entries.
    """
    if measured.order != reconstructed.order:
        raise DimensionMismatch("tensors have different orders")
    if measured.grid != reconstructed.grid:
        raise DimensionMismatch("tensors live on different grids")
    denom = np.abs(reconstructed.values)
    keep = denom >= floor
    if not np.any(keep):
        raise ValidationError("every entry fell below the relative-deviation floor")
    rel = np.abs(measured.values[keep] - reconstructed.values[keep]) / denom[keep]
    return Deviation(float(rel.mean()), float(rel.max()), int(np.count_nonzero(~keep)))


_HEADER_RE = re.compile(r"^#\s*(.*)$")


def _parse_header(line: str, required: tuple[str, ...]) -> dict[str, str]:
    m = _HEADER_RE.match(line.strip())
    if not m:
        raise FormatError("missing '#' header line")
    fields: dict[str, str] = {}
    for token in m.group(1).split():
        if "=" not in token:
            raise FormatError(f"malformed header token {token!r}")
        key, value = token.split("=", 1)
        fields[key] = value
    missing = [k for k in required if k not in fields]
    if missing:
        raise FormatError(f"header lacks {', '.join(missing)}")
    return fields


def _grid_from_header(fields: dict[str, str]) -> Grid1D:
    try:
        return Grid1D(float(fields["grid_start"]), float(fields["grid_step"]), int(fields["grid_count"]))
    except ValueError as exc:
        raise FormatError(f"invalid grid in header: {exc}") from exc


def _read_table(path: Path) -> tuple[str, np.ndarray]:
    with open(path) as fh:
        header = fh.readline()
        body = fh.read()
    if not body.strip():
        return header, np.empty((0, 0))
    try:
        data = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if np.isnan(data).any():
        raise FormatError(f"{path}: NaN entries")
    return header, data


def write_corr(tensor: CorrTensor, path: str | Path) -> None:
    shots = "none" if tensor.shot_count is None else str(tensor.shot_count)
    g = tensor.grid
    header = f"order={tensor.order} grid_start={g.start!r} grid_step={g.step!r} grid_count={g.count} shots={shots}"
    cols = [tensor.positions(), tensor.values[:, None]]
    if tensor.std_err is not None:
        cols.append(tensor.std_err[:, None])
    np.savetxt(path, np.hstack(cols), delimiter=",", fmt="%.17g", header=header, comments="# ")


def read_corr(path: str | Path) -> CorrTensor:
    path = Path(path)
    header, data = _read_table(path)
    fields = _parse_header(header, ("order", "grid_start", "grid_step", "grid_count"))
    try:
        order = int(fields["order"])
    except ValueError as exc:
        raise FormatError("order must be an integer") from exc
    grid = _grid_from_header(fields)
    shots = fields.get("shots", "none")
    shot_count = None if shots in ("none", "") else int(shots)
    if data.shape[1] not in (order + 1, order + 2):
        raise FormatError(f"rows must have {order + 1} or {order + 2} columns")
    idx = grid.index_of(data[:, :order])
    if np.any(np.diff(idx, axis=1) < 0):
        bad = int(np.argmax(np.any(np.diff(idx, axis=1) < 0, axis=1)))
        raise SimplexViolation(f"row {bad + 1}: positions not ascending")
    rank = simplex_rank(idx, grid.count)
    expected = simplex_size(grid.count, order)
    if len(rank) != expected or not np.array_equal(rank, np.arange(expected)):
        raise SimplexViolation("rows must cover the ordered simplex exactly once, in lexicographic order")
    err = data[:, order + 1] if data.shape[1] == order + 2 else None
    return CorrTensor(order, grid, data[:, order], shot_count=shot_count, std_err=err)


def write_shots(ensemble: ShotEnsemble, path: str | Path) -> None:
    g = ensemble.grid
    header = f"grid_start={g.start!r} grid_step={g.step!r} grid_count={g.count}"
    np.savetxt(path, ensemble.shots, delimiter=",", fmt="%.17g", header=header, comments="# ")


def read_shots(path: str | Path) -> ShotEnsemble:
    path = Path(path)
    header, data = _read_table(path)
    grid = _grid_from_header(_parse_header(header, ("grid_start", "grid_step", "grid_count")))
    if data.size == 0:
        raise FormatError(f"{path}: no shots")
    return ShotEnsemble(grid, data)
