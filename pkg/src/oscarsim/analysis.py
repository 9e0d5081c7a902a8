"""Signal extraction from simulated trajectories.

Equilibrium-crossing timing of <x>, peak detection on P(x), the spin
projection on the effective field, and the telegraph-noise shift
experiment built on top of them.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import find_peaks

from .hilbert import PositionGrid
from .params import SimParams
from .record import TrajectoryRecord

__all__ = [
    "TrajectoryRecord",
    "CrossingReport",
    "Peak",
    "PeakReport",
    "ProjectionReport",
    "Fig6Curve",
    "Fig6Result",
    "crossing_intervals",
    "peak_areas",
    "spin_field_projection",
    "split_time",
    "fig6_experiment",
    "FWHM_PER_SIGMA",
    "PEAK_FLOOR",
]

#: Local maxima below this fraction of the global maximum are ignored.
PEAK_FLOOR = 0.05
#: Full width at half maximum of a Gaussian in units of its standard deviation.
FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))
#: Two peaks are resolvable when separated by more than this many widths.
RESOLVE_FACTOR = 2.0
#: |projection| below this marks a breach of adiabatic following.
PROJECTION_BREACH = 0.9


# -- equilibrium crossings ---------------------------------------------------

@dataclass(frozen=True)
class CrossingReport:
    """Zero crossings of <x> and the half-period shifts between them.

    ``shifts = intervals - pi``. ``implied_domega`` is the frequency offset
    ``pi/(pi + mean_shift) - 1`` that a uniform oscillation with these
    intervals would have (negative when the oscillator runs slow).
    """

    crossing_times: np.ndarray
    intervals: np.ndarray
    shifts: np.ndarray
    mean_shift: float
    implied_domega: float

    def truncated(self, t_stop: float) -> "CrossingReport":
        """Keep only intervals that end at or before ``t_stop``."""
        keep = self.crossing_times <= t_stop
        return _crossing_report(self.crossing_times[keep])


def _crossing_report(times: np.ndarray) -> CrossingReport:
    intervals = np.diff(times)
    shifts = intervals - math.pi
    mean_shift = float(np.mean(shifts)) if len(shifts) else math.nan
    return CrossingReport(times, intervals, shifts, mean_shift,
                          math.pi / (math.pi + mean_shift) - 1.0)


def _cubic_root(t: np.ndarray, y: np.ndarray, lo: float, hi: float) -> float:
    """Root in [lo, hi] of the cubic through four (t, y) samples."""
    t0 = 0.5 * (lo + hi)
    scale = hi - lo
    coef = np.polyfit((t - t0) / scale, y, len(t) - 1)
    roots = np.roots(coef)
    real = roots[np.abs(roots.imag) < 1e-9].real * scale + t0
    inside = real[(real >= lo - 1e-12 * scale) & (real <= hi + 1e-12 * scale)]
    if len(inside):
        return float(inside[np.argmin(np.abs(inside - t0))])
    # fall back to linear interpolation when the cubic misbehaves
    i = np.searchsorted(t, lo)
    y0, y1 = y[i], y[i + 1]
    return float(lo + (hi - lo) * y0 / (y0 - y1))


def crossing_intervals(record: TrajectoryRecord | tuple, *, min_crossings: int = 3) -> CrossingReport:
    """Time the zero crossings of <x> with a local cubic through 4 samples.

    ``record`` may also be a ``(times, values)`` pair. Fewer than
    ``min_crossings`` crossings raise ``ValueError``.
    """
    if isinstance(record, TrajectoryRecord):
        t, x = record.times, record.x_mean
    else:
        t, x = (np.asarray(a, dtype=float) for a in record)
    if len(t) < 4:
        raise ValueError("need at least 4 samples to time crossings")
    crossings = []
    sign = np.sign(x)
    for i in range(len(t) - 1):
        if sign[i] == 0:
            if i > 0 and sign[i - 1] != 0 and sign[i + 1] != 0 and sign[i - 1] != sign[i + 1]:
                crossings.append(float(t[i]))
            continue
        if sign[i + 1] == 0 or sign[i] == sign[i + 1]:
            continue
        j0 = min(max(i - 1, 0), len(t) - 4)
        idx = slice(j0, j0 + 4)
        crossings.append(_cubic_root(t[idx], x[idx], float(t[i]), float(t[i + 1])))
    if len(crossings) < min_crossings:
        raise ValueError(f"found {len(crossings)} crossings of <x>; need at least {min_crossings}")
    return _crossing_report(np.asarray(crossings))


# -- peaks in P(x) -----------------------------------------------------------

@dataclass(frozen=True)
class Peak:
    position: float
    height: float
    width: float   # FWHM-equivalent, 2.355 x basin standard deviation
    area: float
    label: str | None = None


@dataclass(frozen=True)
class PeakReport:
    peaks: tuple = ()
    resolvable: bool = False

    @property
    def areas(self) -> list[float]:
        return [p.area for p in self.peaks]

    @property
    def positions(self) -> list[float]:
        return [p.position for p in self.peaks]

    def by_label(self, label: str) -> Peak | None:
        for p in self.peaks:
            if p.label == label:
                return p
        return None


def peak_areas(density: PositionGrid, *, floor: float = PEAK_FLOOR,
               prominence: float = PEAK_FLOOR) -> PeakReport:
    """Split a 1-D density into basins around its peaks and integrate each.

    Peaks are local maxima above ``floor`` times the global maximum whose
    prominence also exceeds ``prominence`` times that maximum. Neighbouring
    basins meet at the lowest sample between their peaks. Two peaks are
    resolvable when the largest two are further apart than twice the wider
    of their widths.
    """
    P = np.asarray(density.values, dtype=float)
    x = np.asarray(density.points, dtype=float)
    top = float(P.max()) if P.size else 0.0
    if top <= 0:
        return PeakReport()
    dx = density.spacing
    padded = np.concatenate(([-np.inf], P, [-np.inf]))
    idx, _ = find_peaks(padded, height=floor * top, prominence=prominence * top)
    idx = idx - 1
    if len(idx) == 0:
        return PeakReport()
    cuts = [idx[j] + int(np.argmin(P[idx[j]:idx[j + 1] + 1])) for j in range(len(idx) - 1)]
    edges = [0] + cuts + [len(P)]
    peaks = []
    for j, i in enumerate(idx):
        seg = slice(edges[j], edges[j + 1])
        w = P[seg]
        area = float(np.sum(w) * dx)
        if area > 0:
            mean = float(np.sum(w * x[seg]) * dx / area)
            var = float(np.sum(w * (x[seg] - mean) ** 2) * dx / area)
        else:
            var = 0.0
        peaks.append(Peak(_vertex(x, P, i), float(P[i]), FWHM_PER_SIGMA * math.sqrt(max(var, 0.0)), area))
    return PeakReport(tuple(peaks), _resolvable(peaks))


def _vertex(x: np.ndarray, P: np.ndarray, i: int) -> float:
    """Sub-grid peak position from the parabola through three samples."""
    if 0 < i < len(P) - 1:
        curv = P[i - 1] - 2 * P[i] + P[i + 1]
        if curv < 0:
            return float(x[i] + 0.5 * (x[1] - x[0]) * (P[i - 1] - P[i + 1]) / curv)
    return float(x[i])


def _resolvable(peaks) -> bool:
    if len(peaks) < 2:
        return False
    a, b = sorted(peaks, key=lambda p: p.area, reverse=True)[:2]
    return abs(a.position - b.position) > RESOLVE_FACTOR * max(a.width, b.width)


def split_time(record: TrajectoryRecord, after: float = -math.inf) -> float:
    """First sampled time ``>= after`` at which P(x) shows two resolvable peaks.

    Returns ``inf`` when that never happens. Uses ``record.series['peaks']`` when present, otherwise analyses
    ``record.densities`` on ``record.grid``.
    """
    reports = record.series.get("peaks")
    times = record.extras.get("density_times", record.times)
    if reports is None:
        if record.densities is None:
            raise ValueError("record carries neither peak reports nor densities")
        reports = [peak_areas(PositionGrid(record.grid, d)) for d in record.densities]
    for t, rep in zip(times, reports):
        if t >= after and rep.resolvable:
            return float(t)
    return math.inf


# -- spin projection on the effective field ----------------------------------

@dataclass(frozen=True)
class ProjectionReport:
    times: np.ndarray
    projection: np.ndarray      # NaN where the field or spin vanishes
    breaches: np.ndarray        # sample times with |projection| < 0.9

    @property
    def gaps(self) -> np.ndarray:
        return self.times[np.isnan(self.projection)]


def spin_field_projection(record: TrajectoryRecord, sim: SimParams | None = None) -> ProjectionReport:
    """cos of the angle between <S> and B_ef = {eps(t), 0, 2 eta <x>(t)}.

    ``eps(t)`` is taken from the record (so gating is honoured); ``sim``
    supplies eta and replaces missing eps samples.
    """
    eta = sim.eta if sim is not None else record.extras.get("eta")
    if eta is None:
        raise ValueError("eta unknown: pass sim")
    eps = np.asarray(record.eps, dtype=float)
    if sim is not None:
        eps = np.where(np.isnan(eps), sim.eps, eps)
    b = np.column_stack([eps, np.zeros_like(eps), 2 * eta * record.x_mean])
    s = record.spin
    nb = np.linalg.norm(b, axis=1)
    ns = np.linalg.norm(s, axis=1)
    ok = (nb > 1e-12) & (ns > 1e-12)
    proj = np.full(len(record), np.nan)
    proj[ok] = np.einsum("ij,ij->i", b[ok], s[ok]) / (nb[ok] * ns[ok])
    breach = ok & (np.abs(np.where(ok, proj, 1.0)) < PROJECTION_BREACH)
    return ProjectionReport(record.times, proj, record.times[breach])


# -- noise-induced crossing shifts -------------------------------------------

@dataclass
class Fig6Curve:
    """Shift sequences for one noise amplitude."""

    Delta0: float
    per_seed: dict = field(default_factory=dict)        # seed -> CrossingReport (pre-split)
    mean_shift: dict = field(default_factory=dict)      # seed -> time-averaged shift
    split_times: dict = field(default_factory=dict)     # seed -> own split time

    def ensemble(self) -> tuple[np.ndarray, np.ndarray]:
        """Seed-averaged shift per crossing index (truncated to the shortest run)."""
        seqs = [r.shifts for r in self.per_seed.values() if len(r.shifts)]
        if not seqs:
            return np.empty(0), np.empty(0)
        n = min(len(s) for s in seqs)
        stack = np.vstack([s[:n] for s in seqs])
        return np.arange(n), stack.mean(axis=0)

    def ensemble_mean(self) -> float:
        return float(np.mean(list(self.mean_shift.values())))


@dataclass
class Fig6Result:
    curves: dict                 # Delta0 -> Fig6Curve
    windows: dict                # seed -> common pre-split window end
    ordering: dict               # seed -> bool (shift strictly decreasing in Delta0)

    @property
    def ordering_fraction(self) -> float:
        if not self.ordering:
            return math.nan
        return sum(self.ordering.values()) / len(self.ordering)

    def to_dict(self) -> dict:
        out = {"windows": {str(k): v for k, v in self.windows.items()},
               "ordering": {str(k): v for k, v in self.ordering.items()},
               "ordering_fraction": self.ordering_fraction, "curves": {}}
        for d0, c in self.curves.items():
            idx, ens = c.ensemble()
            out["curves"][repr(d0)] = {
                "mean_shift": {str(k): v for k, v in c.mean_shift.items()},
                "ensemble_mean": c.ensemble_mean(),
                "split_times": {str(k): v for k, v in c.split_times.items()},
                "ensemble_shifts": ens.tolist(),
                "per_seed": {str(k): {"crossing_times": r.crossing_times.tolist(),
                                      "shifts": r.shifts.tolist()}
                             for k, r in c.per_seed.items()},
            }
        return out


def fig6_experiment(Delta0_list, seeds, spec, *, threads: int = 1,
                    split_floor: float | None = None) -> Fig6Result:
    """Crossing shifts of the anti-parallel benchmark under telegraph noise.

    For every seed and amplitude in ``Delta0_list``, ``spec`` is run with
    ``sim.Delta0`` replaced and the seed set. Each seed's pre-split window
    ends at the earliest split among its runs (or ``t_end``), and only
    crossings inside it are averaged. ``ordering[seed]`` is true when the
    window-averaged shift strictly decreases with increasing amplitude.
    ``split_floor`` ignores splits before that time (useful when the
    initial state is itself broad).
    """
    from .schrodinger import evolve, initial_benchmark_state

    Delta0_list = [float(d) for d in Delta0_list]
    seeds = [int(s) for s in seeds]
    jobs = [(d0, s) for s in seeds for d0 in Delta0_list]

    def run(job):
        d0, seed = job
        sim = replace(spec.sim, Delta0=d0)
        sub = replace(spec, sim=sim, seed=seed, track_peaks=True)
        psi = initial_benchmark_state(sim)
        rec, _ = evolve(psi, sub)
        return job, rec

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = dict(pool.map(run, jobs))
    else:
        results = dict(map(run, jobs))

    curves = {d0: Fig6Curve(d0) for d0 in Delta0_list}
    windows, ordering = {}, {}
    for seed in seeds:
        floor = -math.inf if split_floor is None else split_floor
        own = {d0: split_time(results[(d0, seed)], after=floor) for d0 in Delta0_list}
        window = min(min(own.values()), spec.t_end)
        windows[seed] = window
        means = []
        for d0 in Delta0_list:
            rep = crossing_intervals(results[(d0, seed)], min_crossings=2).truncated(window)
            c = curves[d0]
            c.per_seed[seed] = rep
            c.mean_shift[seed] = rep.mean_shift
            c.split_times[seed] = own[d0]
            means.append(rep.mean_shift)
        order = np.argsort(Delta0_list)
        m = np.asarray(means)[order]
        ordering[seed] = bool(np.all(np.diff(m) < 0))
    return Fig6Result(curves, windows, ordering)
