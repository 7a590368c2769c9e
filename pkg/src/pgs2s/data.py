"""Series generation, CSV ingestion, min-max scaling and windowing."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (DegenerateChannelError, DivergenceError, GapError, ParseError,
                     SchemaError, TaskSizeError, ContractError)


@dataclass
class TimeSeries:
    """A target series ``values`` plus optional exogenous channels.

    Channel 0 of :meth:`matrix` is always the target.
    """
    name: str
    values: np.ndarray
    frequency: str = ""
    exogenous: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.exogenous = {k: np.asarray(v, dtype=np.float64) for k, v in self.exogenous.items()}
        for k, v in self.exogenous.items():
            if v.shape != self.values.shape:
                raise SchemaError(f"exogenous channel {k!r} has length {len(v)}, "
                                  f"target has {len(self.values)}")
        if not np.all(np.isfinite(self.values)):
            raise ParseError(f"series {self.name!r} contains non-finite values")

    def __len__(self):
        return len(self.values)

    @property
    def channels(self) -> list[str]:
        return ["y", *self.exogenous]

    @property
    def n_channels(self) -> int:
        return 1 + len(self.exogenous)

    def matrix(self) -> np.ndarray:
        """(T, m) array, target first."""
        cols = [self.values, *self.exogenous.values()]
        return np.stack(cols, axis=1)


# ---------------------------------------------------------------- generation

def mackey_glass(n: int, delay: float = 17.0, seed_history: float = 1.2, dt: float = 0.1,
                 sample_every: float = 1.0, decay_sign: int = -1, a: float = 0.2,
                 b: float = 0.1, power: int = 10) -> TimeSeries:
    """Integrate the Mackey-Glass delay equation with classical RK4.

    dx/dt = a x(t-delay) / (1 + x(t-delay)^power) + decay_sign * b * x(t),
    with constant history ``seed_history`` for t <= 0. ``decay_sign=-1`` is
    the usual chaotic benchmark; ``+1`` grows without bound and raises
    :class:`DivergenceError` once the state overflows.

    Delayed values at RK4 half steps come from cubic Hermite interpolation
    on the stored trajectory and derivatives, which keeps the scheme fourth
    order (linear interpolation would drop it to second order).
    """
    if n < 0:
        raise ContractError("n must be non-negative")
    per = sample_every / dt
    per_i = int(round(per))
    if per_i < 1 or abs(per - per_i) > 1e-9:
        raise ContractError("dt must divide sample_every")
    lag_f = delay / dt
    lag = int(round(lag_f))
    if lag < 1 or abs(lag_f - lag) > 1e-9:
        raise ContractError("dt must divide the delay")
    if decay_sign not in (-1, 1):
        raise ContractError("decay_sign must be -1 or +1")
    if n == 0:
        return TimeSeries("mackey_glass", np.empty(0))

    steps = (n - 1) * per_i
    x = [0.0] * (steps + 1)
    dx = [0.0] * (steps + 1)
    x[0] = float(seed_history)
    x0 = float(seed_history)
    decay = decay_sign * b
    half = 0.5 * dt

    def rhs(xt, xd):
        return a * xd / (1.0 + xd ** power) + decay * xt

    try:
        for i in range(steps):
            j = i - lag
            if j < 0:
                xd0 = xd1 = xdh = x0
                if j + 1 == 0:
                    xd1 = x[0]
            else:
                xd0, xd1 = x[j], x[j + 1]
                xdh = 0.5 * (xd0 + xd1) + dt * 0.125 * (dx[j] - dx[j + 1])
            xi = x[i]
            k1 = rhs(xi, xd0)
            dx[i] = k1
            k2 = rhs(xi + half * k1, xdh)
            k3 = rhs(xi + half * k2, xdh)
            k4 = rhs(xi + dt * k3, xd1)
            xn = xi + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not math.isfinite(xn):
                raise DivergenceError(f"Mackey-Glass state non-finite at t={(i + 1) * dt:.3f}")
            x[i + 1] = xn
    except OverflowError as exc:
        raise DivergenceError(f"Mackey-Glass state overflowed at t={i * dt:.3f}") from exc
    values = np.asarray(x[::per_i], dtype=np.float64)
    return TimeSeries("mackey_glass", values)


# ---------------------------------------------------------------- CSV

def load_csv(path, target_column: str, exogenous_columns=(), name: str | None = None,
             frequency: str = "") -> TimeSeries:
    """Read a header-first CSV; rows are taken in file order.

    Blank cells raise :class:`GapError` (no imputation), non-numeric cells
    raise :class:`ParseError`; both name the 1-based data row.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row missing") from None
        wanted = [target_column, *exogenous_columns]
        missing = [c for c in wanted if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {missing}; header is {header}")
        idx = [header.index(c) for c in wanted]
        cols: list[list[float]] = [[] for _ in wanted]
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            for k, ci in enumerate(idx):
                cell = row[ci].strip() if ci < len(row) else ""
                if cell == "":
                    raise GapError(f"{path}: row {row_no}: blank value in column {wanted[k]!r}")
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(f"{path}: row {row_no}: non-numeric value {cell!r} "
                                     f"in column {wanted[k]!r}") from None
                if not math.isfinite(v):
                    raise ParseError(f"{path}: row {row_no}: non-finite value in {wanted[k]!r}")
                cols[k].append(v)
    exo = {c: np.asarray(v) for c, v in zip(exogenous_columns, cols[1:])}
    return TimeSeries(name or path.stem, np.asarray(cols[0]), frequency, exo)


def write_csv(path, series: TimeSeries, time_index=None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    t = np.arange(len(series)) if time_index is None else time_index
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "y", *series.exogenous])
        exo = list(series.exogenous.values())
        for i in range(len(series)):
            w.writerow([t[i], repr(float(series.values[i])), *(repr(float(e[i])) for e in exo)])


# ---------------------------------------------------------------- scaling

@dataclass(frozen=True)
class ScalerParams:
    min: np.ndarray
    max: np.ndarray

    @property
    def span(self) -> np.ndarray:
        return self.max - self.min

    @property
    def target_span(self) -> float:
        return float(self.max[0] - self.min[0])

    def apply(self, values):
        """Scale a (..., m) channel array."""
        v = np.asarray(values, dtype=np.float64)
        if v.ndim == 1 and len(self.min) == 1:
            return (v - self.min[0]) / self.span[0]
        return (v - self.min) / self.span

    def invert(self, values):
        v = np.asarray(values, dtype=np.float64)
        if v.ndim == 1 and len(self.min) == 1:
            return v * self.span[0] + self.min[0]
        return v * self.span + self.min

    def apply_target(self, values):
        """Scale target-channel values of any shape."""
        return (np.asarray(values, dtype=np.float64) - self.min[0]) / self.span[0]

    def invert_target(self, values):
        return np.asarray(values, dtype=np.float64) * self.span[0] + self.min[0]

    def to_dict(self):
        return {"min": self.min.tolist(), "max": self.max.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["min"], dtype=np.float64), np.asarray(d["max"], dtype=np.float64))


def fit_scaler(train_slice) -> ScalerParams:
    """Per-channel min/max of the training rows only."""
    arr = np.asarray(train_slice, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    lo = arr.min(axis=0)
    hi = arr.max(axis=0)
    flat = np.flatnonzero(~(hi > lo))
    if flat.size:
        raise DegenerateChannelError(f"constant channel(s) {flat.tolist()} in training slice")
    return ScalerParams(lo, hi)


def apply(s: ScalerParams, series):
    return s.apply(series)


def invert(s: ScalerParams, values):
    return s.invert(values)


# ---------------------------------------------------------------- windowing

@dataclass
class SplitSpec:
    train_frac: float = 0.64
    val_frac: float = 0.16
    test_frac: float = 0.20
    chronological: bool = True

    def __post_init__(self):
        if abs(self.train_frac + self.val_frac + self.test_frac - 1.0) > 1e-9:
            raise ContractError("split fractions must sum to 1")
        if not self.chronological:
            raise ContractError("only chronological splits are supported")

    def boundaries(self, n: int) -> tuple[int, int]:
        n_train = int(round(self.train_frac * n))
        n_val = int(round(self.val_frac * n))
        return n_train, n_train + n_val


@dataclass
class WindowedDataset:
    """Supervised samples: inputs (n, L, m), targets (n, H) and anchors.

    ``anchor[i]`` is the series index t of the last input observation, so
    the targets are y[t+1 .. t+H]. Channel 0 of the inputs is the target.
    """
    inputs: np.ndarray
    targets: np.ndarray
    anchor: np.ndarray
    L: int
    H: int

    @property
    def m(self) -> int:
        return self.inputs.shape[2]

    def __len__(self):
        return len(self.targets)

    @property
    def last_observed(self) -> np.ndarray:
        """y_t for every sample, the first decoder input."""
        return self.inputs[:, -1, 0]

    def subset(self, idx) -> "WindowedDataset":
        return WindowedDataset(self.inputs[idx], self.targets[idx], self.anchor[idx], self.L, self.H)


def make_windows(values, L: int, H: int, offset: int = 0) -> WindowedDataset:
    """Exhaustive stride-1 windows over a (T, m) or (T,) array."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    T = len(arr)
    n = T - L - H + 1
    if L < 1 or H < 1:
        raise ContractError("L and H must be positive")
    if n < 1:
        raise TaskSizeError(f"segment of length {T} too short for L={L}, H={H}")
    idx = np.arange(n)[:, None]
    inputs = arr[idx + np.arange(L)[None, :]]
    targets = arr[idx + L + np.arange(H)[None, :], 0]
    anchor = offset + np.arange(n) + L - 1
    return WindowedDataset(np.ascontiguousarray(inputs), np.ascontiguousarray(targets),
                           anchor, L, H)


def window_and_split(series, L: int, H: int, spec: SplitSpec | None = None):
    """Split chronologically, then window inside each segment.

    ``series`` is a (T, m)/(T,) array or a :class:`TimeSeries`; no window
    crosses a segment boundary.
    """
    spec = spec or SplitSpec()
    arr = series.matrix() if isinstance(series, TimeSeries) else np.asarray(series, dtype=np.float64)
    a, b = spec.boundaries(len(arr))
    parts = []
    for lo, hi, label in ((0, a, "train"), (a, b, "val"), (b, len(arr), "test")):
        try:
            parts.append(make_windows(arr[lo:hi], L, H, offset=lo))
        except TaskSizeError as exc:
            raise TaskSizeError(f"{label} split: {exc}") from None
    return tuple(parts)


@dataclass
class PreparedData:
    series: TimeSeries
    scaler: ScalerParams
    train: WindowedDataset
    val: WindowedDataset
    test: WindowedDataset

    def split(self, name: str) -> WindowedDataset:
        return {"train": self.train, "val": self.val, "test": self.test}[name]


def prepare(series: TimeSeries, L: int, H: int, spec: SplitSpec | None = None) -> PreparedData:
    """Fit the scaler on the training segment, scale, window and split."""
    spec = spec or SplitSpec()
    raw = series.matrix()
    a, _ = spec.boundaries(len(raw))
    if a < 1:
        raise TaskSizeError("training segment is empty")
    scaler = fit_scaler(raw[:a])
    train, val, test = window_and_split(scaler.apply(raw), L, H, spec)
    return PreparedData(series, scaler, train, val, test)
