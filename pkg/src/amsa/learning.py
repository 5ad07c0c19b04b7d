"""Experiential learning: stack daily strategy returns against daily market
conditions and look for the cells where market making paid off."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import BadAxis, InvalidParams, MissingMetricDay, TooShort
from .marketdata import METRIC_NAMES, MarketDay, ms_to_day
from .strategy import HODL, StrategyRunResult, StrategySpec

PARAM_AXES = ("spread", "threshold", "refresh")
METRIC_AXIS = "metric"


@dataclass(frozen=True)
class DailyRoiRecord:
    day: object  # datetime.date
    spec_id: str
    spread_pct: float
    cancel_threshold_pct: float
    refresh_secs: float
    roi: float

    def param(self, axis: str) -> float:
        if axis == "spread":
            return self.spread_pct
        if axis == "threshold":
            return self.cancel_threshold_pct
        if axis == "refresh":
            return self.refresh_secs
        raise BadAxis(axis)


def daily_roi_records(results: Iterable[StrategyRunResult],
                      specs: Sequence[StrategySpec]) -> list[DailyRoiRecord]:
    """Per-day returns from each run's boundary values.  Hodl runs carry no
    quoting parameters and are skipped."""
    by_id = {s.id: s for s in specs}
    records = []
    for res in results:
        spec = by_id.get(res.spec_id) or StrategySpec.from_id(res.spec_id)
        if spec.kind == HODL:
            continue
        if len(res.daily_values) < 2:
            raise TooShort(f"{res.spec_id}: need at least 2 daily values")
        for (t0, v0), (_, v1) in zip(res.daily_values, res.daily_values[1:]):
            records.append(DailyRoiRecord(ms_to_day(t0), spec.id, spec.spread_pct,
                                          spec.cancel_threshold_pct, spec.refresh_secs, v1 / v0 - 1))
    records.sort(key=lambda r: (r.day, r.spec_id))
    return records


@dataclass
class RoiCube:
    """Accumulated ``{sum_roi, count}`` over two strategy-parameter axes and a
    binned market metric."""

    axes: tuple[str, str]
    values: tuple[tuple[float, ...], tuple[float, ...]]
    metric: str
    edges: np.ndarray  # len bins + 1
    cells: dict  # (i, j, k) -> [sum_roi, count]

    @property
    def bins(self) -> int:
        return len(self.edges) - 1

    @property
    def shape(self) -> tuple[int, int, int]:
        return len(self.values[0]), len(self.values[1]), self.bins

    def add(self, i: int, j: int, k: int, roi: float) -> None:
        cell = self.cells.setdefault((i, j, k), [0.0, 0])
        cell[0] += roi
        cell[1] += 1

    def merge(self, other: RoiCube) -> RoiCube:
        if (other.axes, other.values, other.metric) != (self.axes, self.values, self.metric) \
                or not np.array_equal(other.edges, self.edges):
            raise InvalidParams("cubes have different axes")
        cells = {k: list(v) for k, v in self.cells.items()}
        for key, (s, c) in other.cells.items():
            cell = cells.setdefault(key, [0.0, 0])
            cell[0] += s
            cell[1] += c
        return RoiCube(self.axes, self.values, self.metric, self.edges, cells)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        sums = np.zeros(self.shape)
        counts = np.zeros(self.shape, dtype=np.int64)
        for (i, j, k), (s, c) in self.cells.items():
            sums[i, j, k] = s
            counts[i, j, k] = c
        return sums, counts

    def axis_labels(self, axis: str) -> list:
        if axis == self.axes[0]:
            return list(self.values[0])
        if axis == self.axes[1]:
            return list(self.values[1])
        if axis == METRIC_AXIS:
            return [(float(self.edges[k]), float(self.edges[k + 1])) for k in range(self.bins)]
        raise BadAxis(f"unknown axis {axis!r}; cube axes are {self.axes + (METRIC_AXIS,)}")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([*self.axes, "metric_bin_lo", "metric_bin_hi", "sum_roi", "count", "mean_roi"])
        for (i, j, k) in sorted(self.cells):
            s, c = self.cells[(i, j, k)]
            w.writerow([repr(self.values[0][i]), repr(self.values[1][j]),
                        repr(float(self.edges[k])), repr(float(self.edges[k + 1])), repr(s), c, repr(s / c)])
        return buf.getvalue()


def metric_bin(x: float, lo: float, hi: float, bins: int) -> int:
    if hi <= lo:
        return 0
    return min(int((x - lo) / (hi - lo) * bins), bins - 1)


def build_cube(records: Sequence[DailyRoiRecord], days: Sequence[MarketDay], metric: str,
               bins: int = 10, axes: tuple[str, str] = ("spread", "threshold")) -> RoiCube:
    if metric not in METRIC_NAMES:
        raise InvalidParams(f"unknown metric {metric!r}; choose from {METRIC_NAMES}")
    if not isinstance(bins, int) or bins < 1:
        raise InvalidParams("bins must be an integer >= 1")
    if len(axes) != 2 or axes[0] == axes[1] or any(a not in PARAM_AXES for a in axes):
        raise BadAxis(f"axes must be two distinct names from {PARAM_AXES}")
    by_day = {d.date: d.metrics.get(metric) for d in days}
    if not by_day:
        raise MissingMetricDay("no market days given")
    lo, hi = min(by_day.values()), max(by_day.values())
    edges = np.linspace(lo, hi, bins + 1) if hi > lo else np.full(bins + 1, lo, dtype=float)

    values = tuple(tuple(sorted({r.param(a) for r in records})) for a in axes)
    index = [{v: n for n, v in enumerate(vals)} for vals in values]
    cube = RoiCube(tuple(axes), values, metric, edges, {})
    for r in records:
        if r.day not in by_day:
            raise MissingMetricDay(f"no metrics for {r.day}")
        cube.add(index[0][r.param(axes[0])], index[1][r.param(axes[1])],
                 metric_bin(by_day[r.day], lo, hi, bins), r.roi)
    return cube


@dataclass
class SliceTable:
    """Two-axis view of a cube; ``mean`` is NaN where a cell is empty."""

    row_axis: str
    col_axis: str
    row_labels: list
    col_labels: list
    sums: np.ndarray
    counts: np.ndarray
    fixed: tuple[str, int | None]

    @property
    def mean(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.counts > 0, self.sums / np.maximum(self.counts, 1), np.nan)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"{self.row_axis}\\{self.col_axis}", *(_label(c) for c in self.col_labels)])
        mean = self.mean
        for r, label in enumerate(self.row_labels):
            w.writerow([_label(label), *("" if math.isnan(v) else repr(float(v)) for v in mean[r])])
        return buf.getvalue()


def _label(x) -> str:
    if isinstance(x, tuple):
        return f"{x[0]:.6g}..{x[1]:.6g}"
    return f"{x:g}"


def slice_cube(cube: RoiCube, axis: str, index: int | None = None) -> SliceTable:
    """Fix ``axis`` at ``index``, or pool over it when ``index`` is None."""
    names = [*cube.axes, METRIC_AXIS]
    if axis not in names:
        raise BadAxis(f"unknown axis {axis!r}; cube axes are {names}")
    pos = names.index(axis)
    sums, counts = cube.arrays()
    if index is None:
        s, c = sums.sum(axis=pos), counts.sum(axis=pos)
    else:
        if not 0 <= index < cube.shape[pos]:
            raise BadAxis(f"index {index} out of range for axis {axis!r}")
        s, c = np.take(sums, index, axis=pos), np.take(counts, index, axis=pos)
    rest = [n for n in names if n != axis]
    return SliceTable(rest[0], rest[1], cube.axis_labels(rest[0]), cube.axis_labels(rest[1]),
                      s, c, (axis, index))


@dataclass(frozen=True)
class ProfitSpot:
    cell: tuple[int, int, int]
    params: tuple[float, float]
    metric_range: tuple[float, float]
    mean_roi: float
    count: int


def top_spots(cube: RoiCube, k: int = 5, min_count: int = 3) -> list[ProfitSpot]:
    """Best cells by mean ROI; ties go to the lower spread, threshold, bin."""
    if k < 1:
        raise InvalidParams("k must be >= 1")
    ranked = sorted(
        ((s / c, key, c) for key, (s, c) in cube.cells.items() if c >= min_count and c > 0),
        key=lambda t: (-t[0], t[1]),
    )
    return [
        ProfitSpot(key, (cube.values[0][key[0]], cube.values[1][key[1]]),
                   (float(cube.edges[key[2]]), float(cube.edges[key[2] + 1])), mean, c)
        for mean, key, c in ranked[:k]
    ]


def spots_csv(cube: RoiCube, spots: Sequence[ProfitSpot]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rank", *cube.axes, "metric", "metric_bin_lo", "metric_bin_hi", "mean_roi", "count"])
    for n, sp in enumerate(spots, start=1):
        w.writerow([n, repr(sp.params[0]), repr(sp.params[1]), cube.metric,
                    repr(sp.metric_range[0]), repr(sp.metric_range[1]), repr(sp.mean_roi), sp.count])
    return buf.getvalue()
