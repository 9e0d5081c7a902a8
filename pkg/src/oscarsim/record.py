"""Time-series carrier shared by the Schrodinger and master-equation drivers."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["TrajectoryRecord", "RecordBuilder", "CSV_COLUMNS", "save_snapshots", "load_snapshots"]

CSV_COLUMNS = ("t", "x_mean", "p_mean", "Sx", "Sy", "Sz", "norm")
_ATTR = {"t": "times", "x_mean": "x_mean", "p_mean": "p_mean", "Sx": "sx", "Sy": "sy",
         "Sz": "sz", "norm": "norm"}
# per-sample attributes that may follow the standard columns
_EXTRA_ATTR = ("eps", "delta", "leakage")


@dataclass
class TrajectoryRecord:
    """Observables sampled along one evolution.

    ``norm`` holds the state norm (Schrodinger) or trace (master equation).
    ``eps`` and ``delta`` are the rf coupling and noise value in force at
    each sample. Driver-specific series (purity, off-diagonal mass, ...)
    live in ``series``; per-sample position densities in ``densities`` on
    the grid ``grid``. ``events`` lists noise flips, gate edges and monitor
    messages as dicts with at least ``t`` and ``kind``.
    """

    times: np.ndarray
    x_mean: np.ndarray
    p_mean: np.ndarray
    sx: np.ndarray
    sy: np.ndarray
    sz: np.ndarray
    norm: np.ndarray
    leakage: np.ndarray
    eps: np.ndarray
    delta: np.ndarray
    events: list = field(default_factory=list)
    series: dict = field(default_factory=dict)
    densities: np.ndarray | None = None
    grid: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.times)
        for name in ("x_mean", "p_mean", "sx", "sy", "sz", "norm", "leakage", "eps", "delta"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has length {len(getattr(self, name))}, expected {n}")
        if n > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def spin(self) -> np.ndarray:
        return np.column_stack([self.sx, self.sy, self.sz])

    def window(self, t_stop: float) -> "TrajectoryRecord":
        """Samples with ``t <= t_stop``."""
        keep = self.times <= t_stop
        kw = {name: getattr(self, name)[keep] for name in
              ("times", "x_mean", "p_mean", "sx", "sy", "sz", "norm", "leakage", "eps", "delta")}
        return TrajectoryRecord(
            **kw,
            events=[e for e in self.events if e["t"] <= t_stop],
            series={k: np.asarray(v)[keep] for k, v in self.series.items()},
            densities=None if self.densities is None else self.densities[keep],
            grid=self.grid,
            extras=dict(self.extras),
        )

    def columns(self, extra: tuple[str, ...] = ()) -> dict[str, np.ndarray]:
        """Standard columns followed by the named ``series``."""
        out = {c: getattr(self, _ATTR[c]) for c in CSV_COLUMNS}
        for k in extra:
            out[k] = getattr(self, k) if k in _EXTRA_ATTR else np.asarray(self.series[k], float)
        return out

    def to_csv(self, path, extra: tuple[str, ...] = ()) -> None:
        """Write a header row and one row per sample at 17 significant digits."""
        cols = self.columns(extra)
        data = np.column_stack(list(cols.values()))
        with open(path, "w", newline="") as fh:
            fh.write(",".join(cols) + "\n")
            for row in data:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")

    def to_json(self, path, extra: tuple[str, ...] = ()) -> None:
        """Column-oriented JSON; floats round-trip exactly."""
        cols = {k: v.tolist() for k, v in self.columns(extra).items()}
        with open(path, "w", newline="") as fh:
            json.dump({"columns": list(cols), "data": cols}, fh)
            fh.write("\n")

    @classmethod
    def from_csv(cls, path) -> "TrajectoryRecord":
        with open(Path(path), newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = np.array([[float(v) for v in row] for row in reader if row])
        if rows.size == 0:
            rows = np.zeros((0, len(header)))
        return cls._from_columns({name: rows[:, i] for i, name in enumerate(header)})

    @classmethod
    def from_json(cls, path) -> "TrajectoryRecord":
        data = json.loads(Path(path).read_text())["data"]
        return cls._from_columns({k: np.asarray(v, dtype=float) for k, v in data.items()})

    @classmethod
    def read(cls, path) -> "TrajectoryRecord":
        """Load a trajectory written by :meth:`to_csv` or :meth:`to_json`."""
        return cls.from_json(path) if str(path).endswith(".json") else cls.from_csv(path)

    @classmethod
    def _from_columns(cls, col: dict) -> "TrajectoryRecord":
        missing = [c for c in ("t", "x_mean") if c not in col]
        if missing:
            raise ValueError(f"trajectory lacks columns {missing}")
        n = len(col["t"])
        zeros = np.zeros(n)
        return cls(
            times=col["t"], x_mean=col["x_mean"], p_mean=col.get("p_mean", zeros),
            sx=col.get("Sx", zeros), sy=col.get("Sy", zeros), sz=col.get("Sz", zeros),
            norm=col.get("norm", np.ones(n)), leakage=col.get("leakage", zeros),
            eps=col.get("eps", np.full(n, np.nan)), delta=col.get("delta", zeros),
            series={k: v for k, v in col.items() if k not in CSV_COLUMNS and k not in _EXTRA_ATTR},
        )


def save_snapshots(stem, values: np.ndarray, times, grid, **meta) -> tuple[Path, Path]:
    """Write ``<stem>.bin`` (little-endian float64, C order) and a ``<stem>.json`` header."""
    stem = Path(stem)
    values = np.ascontiguousarray(values, dtype="<f8")
    bin_path, json_path = stem.with_suffix(".bin"), stem.with_suffix(".json")
    bin_path.write_bytes(values.tobytes())
    header = {"shape": list(values.shape), "dtype": "<f8", "order": "C",
              "times": [float(t) for t in times], "grid": [float(x) for x in grid], **meta}
    json_path.write_text(json.dumps(header, indent=1) + "\n")
    return bin_path, json_path


def load_snapshots(stem) -> tuple[np.ndarray, np.ndarray, np.ndarray, dict]:
    """Inverse of :func:`save_snapshots`: ``(values, times, grid, header)``."""
    stem = Path(stem)
    header = json.loads(stem.with_suffix(".json").read_text())
    values = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype=header["dtype"])
    values = values.reshape(header["shape"]).astype(float)
    return values, np.asarray(header["times"]), np.asarray(header["grid"]), header


class RecordBuilder:
    """Accumulates samples, then freezes them into a :class:`TrajectoryRecord`."""

    def __init__(self, grid: np.ndarray | None = None):
        self._cols = {k: [] for k in ("times", "x_mean", "p_mean", "sx", "sy", "sz",
                                      "norm", "leakage", "eps", "delta")}
        self._series: dict[str, list] = {}
        self._dens: list = []
        self.grid = grid
        self.events: list = []

    def add(self, t, obs, leakage, eps, delta, density=None, **series):
        c = self._cols
        c["times"].append(t)
        c["x_mean"].append(obs.x)
        c["p_mean"].append(obs.p)
        c["sx"].append(obs.sx)
        c["sy"].append(obs.sy)
        c["sz"].append(obs.sz)
        c["norm"].append(obs.norm)
        c["leakage"].append(leakage)
        c["eps"].append(eps)
        c["delta"].append(delta)
        for k, v in series.items():
            self._series.setdefault(k, []).append(v)
        if density is not None:
            self._dens.append(density)

    def event(self, t, kind, **info):
        self.events.append({"t": float(t), "kind": kind, **info})

    def last(self, name):
        return self._cols[name][-1] if self._cols[name] else None

    def build(self, **extras) -> TrajectoryRecord:
        arrays = {k: np.asarray(v, dtype=float) for k, v in self._cols.items()}
        series = {}
        for k, v in self._series.items():
            try:
                series[k] = np.asarray(v, dtype=float)
            except (TypeError, ValueError):
                series[k] = list(v)
        dens = np.asarray(self._dens) if self._dens else None
        return TrajectoryRecord(**arrays, events=self.events, series=series,
                                densities=dens, grid=self.grid, extras=extras)
