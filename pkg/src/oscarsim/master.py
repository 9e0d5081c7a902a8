"""Caldeira-Leggett evolution of the spin-oscillator density matrix.

In operator form, with ``gamma = 1/(2Q)`` and the spin-oscillator
Hamiltonian ``H = (p**2+x**2)/2 + eps S_x + 2 eta x S_z``,

``d rho/dt = -i[H, rho] - i gamma [x, {p, rho}] - (T/Q) [x, [x, rho]]``.

The position-space kernel of the damping term is
``-gamma (x - x')(d/dx - d/dx')``, the form that damps <x> as
``exp(-t/2Q)``. The generator is applied as ``Z + Z^dagger`` with
``Z = K rho + x rho B^dagger``, ``K = -iH - i gamma x p - (T/Q) x**2`` and
``B = (T/Q) x + i gamma p``, which keeps every intermediate Hermitian.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import map_coordinates, maximum_filter
from scipy.sparse.linalg import expm_multiply

from .analysis import FWHM_PER_SIGMA, PeakReport, peak_areas
from .hilbert import (
    DensityState,
    PositionGrid,
    TruncationError,
    hermite_functions,
    initial_spinor,
    observables,
    position_grid,
    spin_angles,
)
from .params import SimParams
from .record import RecordBuilder, TrajectoryRecord
from .schrodinger import INTEGRATORS, NumericalError, required_n_max

__all__ = [
    "MasterSpec",
    "DecoherenceFit",
    "DiffusionRate",
    "BranchSpin",
    "MASTER_IF_DT_BOUND",
    "initial_density",
    "benchmark_density",
    "cat_density",
    "generator",
    "evolve_master",
    "decoherence_time_fit",
    "diffusion_rate",
    "branch_spin_alignment",
    "four_peak_times",
    "variance_history",
    "count_peaks_2d",
]

#: Upper bound on ``dt * scale`` for the integrating-factor stepper.
MASTER_IF_DT_BOUND = 0.1
TRACE_LIMIT = 1e-3
POSITIVITY_TOL = 1e-6
OFF_DIAGONAL_BAND = 3.0


@dataclass(frozen=True)
class MasterSpec:
    """Run definition for :func:`evolve_master`.

    ``dissipation=False`` drops the damping and diffusion terms (the
    ``Q -> inf`` limit). ``matrix_every`` stores |rho(x, x')| every that
    many samples (0 disables). Off-diagonal mass is integrated over
    ``|x - x'| > band``.
    """

    sim: SimParams
    t_end: float
    sample_every: float = 0.5
    integrator: str = "ifrk4"
    dt: float | None = None
    dissipation: bool = True
    grid: np.ndarray | None = field(default=None, repr=False)
    matrix_every: int = 0
    band: float = OFF_DIAGONAL_BAND
    leakage_limit: float = 1e-4
    trace_limit: float = TRACE_LIMIT

    def __post_init__(self):
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {INTEGRATORS}, got {self.integrator!r}")
        if self.dissipation and math.isfinite(self.sim.Q) and not self.sim.T > 0:
            raise ValueError("T must be > 0 when dissipation is on")
        if not self.sample_every > 0:
            raise ValueError("sample_every must be positive")
        if self.sim.Delta0 != 0:
            raise ValueError("the master equation runs without telegraph noise (Delta0 = 0)")
        if self.matrix_every < 0:
            raise ValueError("matrix_every must be >= 0")

    @property
    def gamma(self) -> float:
        return 1 / (2 * self.sim.Q) if self.dissipation else 0.0

    @property
    def diffusion(self) -> float:
        return self.sim.T / self.sim.Q if self.dissipation else 0.0

    def step(self) -> float:
        if self.dt is not None:
            return self.dt
        if self.integrator == "ifrk4":
            xn = math.sqrt(2 * self.sim.n_max)
            scale = (2 * (self.sim.eps / 2 + self.sim.eta * xn) + 4 * self.diffusion * xn * xn
                     + self.gamma * xn * xn + 1e-12)
            return MASTER_IF_DT_BOUND / scale
        return self.sim.dt

    def resolve_grid(self) -> np.ndarray:
        return position_grid(self.sim.A) if self.grid is None else np.asarray(self.grid, float)


def initial_density(x0: float, p0: float, theta: float, phi: float, n_max: int) -> DensityState:
    """Pure product of a coherent CT state and a spin along (theta, phi)."""
    return initial_spinor(x0, p0, theta, phi, n_max).to_density()


def benchmark_density(sim: SimParams, theta: float = 0.0) -> DensityState:
    """Coherent state at ``A`` with the spin at ``pi - theta`` to the effective field."""
    polar, azimuth = spin_angles(sim.eps, sim.eta, sim.A, theta)
    return initial_density(sim.A, 0.0, polar, azimuth, sim.n_max)


def cat_density(x0: float, n_max: int, spin: int = 0) -> DensityState:
    """Pure even superposition of coherent states at +x0 and -x0, spin fixed."""
    from .hilbert import coherent_state

    c = coherent_state(x0, 0.0, n_max) + coherent_state(-x0, 0.0, n_max)
    c /= np.linalg.norm(c)
    v = np.zeros((2, n_max), dtype=complex)
    v[spin] = c
    v = v.reshape(-1)
    return DensityState(np.outer(v, v.conj()))


def _oscillator_ops(n_max: int):
    a = sp.diags(np.sqrt(np.arange(1, n_max, dtype=float)), 1, format="csr")
    x = (a + a.T) / math.sqrt(2)
    p = 1j * (a.T - a) / math.sqrt(2)
    return x, p


@dataclass
class _Generator:
    """Sparse pieces of the Liouvillian on the (2N, 2N) spin-major matrix."""

    K: sp.csr_matrix
    X: sp.csr_matrix
    B_dag: sp.csr_matrix
    energies: np.ndarray          # oscillator energies on the 2N index
    with_oscillator: bool

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        Z = self.K @ rho + (self.X @ rho) @ self.B_dag
        return Z + Z.conj().T


def generator(sim: SimParams, *, gamma: float, diffusion: float,
              with_oscillator: bool = True) -> _Generator:
    """Liouvillian ``L(rho) = Z + Z^dagger``; ``with_oscillator=False`` omits -i[H0, rho]."""
    N = sim.n_max
    x, p = _oscillator_ops(N)
    eye2 = sp.identity(2, format="csr")
    sx = sp.csr_matrix([[0.0, 0.5], [0.5, 0.0]])
    sz = sp.csr_matrix([[0.5, 0.0], [0.0, -0.5]])
    X = sp.kron(eye2, x, format="csr")
    P = sp.kron(eye2, p, format="csr")
    H = sim.eps * sp.kron(sx, sp.identity(N)) + 2 * sim.eta * sp.kron(sz, x)
    energies = np.tile(np.arange(N) + 0.5, 2)
    if with_oscillator:
        H = H + sp.diags(energies)
    K = -1j * H - 1j * gamma * (X @ P) - diffusion * (X @ X)
    B = diffusion * X + 1j * gamma * P
    return _Generator(sp.csr_matrix(K, dtype=complex), sp.csr_matrix(X, dtype=complex),
                      sp.csr_matrix(B.conj().T, dtype=complex), energies, with_oscillator)


def _superoperator(gen: _Generator) -> sp.csr_matrix:
    """Matrix of L acting on the row-major flattening of rho."""
    n = gen.K.shape[0]
    eye = sp.identity(n, format="csr")
    K, X, Bd = gen.K, gen.X, gen.B_dag
    # vec(A rho C) = kron(A, C.T) vec(rho) for row-major vec
    L = (sp.kron(K, eye) + sp.kron(eye, K.conj()) + sp.kron(X, Bd.T) + sp.kron(Bd.conj().T, X.T))
    return sp.csr_matrix(L)


class _MasterStepper:
    def __init__(self, spec: MasterSpec):
        self.spec = spec
        self.dt = spec.step()
        self.steps = 0
        integ = spec.integrator
        self.gen = generator(spec.sim, gamma=spec.gamma, diffusion=spec.diffusion,
                             with_oscillator=integ != "ifrk4")
        if integ == "ifrk4":
            e = self.gen.energies
            self.gaps = np.subtract.outer(e, e)
        elif integ == "expm":
            self.superop = _superoperator(self.gen)

    def propagate(self, rho: np.ndarray, tau: float) -> np.ndarray:
        integ = self.spec.integrator
        if integ == "expm":
            self.steps += 1
            shape = rho.shape
            return expm_multiply(self.superop * tau, rho.reshape(-1)).reshape(shape)
        n = max(1, math.ceil(tau / self.dt - 1e-9))
        h = tau / n
        self.steps += n
        L = self.gen
        if integ == "rk4":
            for _ in range(n):
                k1 = L(rho)
                k2 = L(rho + 0.5 * h * k1)
                k3 = L(rho + 0.5 * h * k2)
                k4 = L(rho + h * k3)
                rho = rho + h / 6 * (k1 + 2 * (k2 + k3) + k4)
            return rho
        e1 = np.exp(-1j * self.gaps * h)
        e2 = np.exp(-0.5j * self.gaps * h)
        for _ in range(n):
            a = L(rho)
            b = L(e2 * (rho + 0.5 * h * a))
            c = L(e2 * rho + 0.5 * h * b)
            d = L(e1 * rho + h * (e2 * c))
            rho = e1 * rho + h / 6 * (e1 * a + 2 * e2 * (b + c) + d)
        return rho


def count_peaks_2d(values: np.ndarray, floor: float = 0.05) -> int:
    """Local maxima (3x3 neighbourhood) above ``floor`` times the global maximum."""
    top = float(values.max())
    if top <= 0:
        return 0
    local = values == maximum_filter(values, size=3, mode="constant", cval=-np.inf)
    return int(np.count_nonzero(local & (values > floor * top)))


def _spin_diagonals(rho: DensityState, U: np.ndarray) -> np.ndarray:
    """rho_{ss'}(x, x) on the grid for all four spin pairs, shape (2, 2, G)."""
    N = rho.n_max
    m = rho.matrix
    out = np.empty((2, 2, U.shape[1]), dtype=complex)
    for a in range(2):
        for b in range(2):
            blk = m[a * N:(a + 1) * N, b * N:(b + 1) * N]
            out[a, b] = np.sum(U * (blk @ U), axis=0)
    return out


def _basin_edges(values: np.ndarray, points: np.ndarray, report: PeakReport) -> list[int]:
    pos = [p.position for p in report.peaks]
    cuts = []
    for left, right in zip(pos[:-1], pos[1:]):
        i0, i1 = np.searchsorted(points, [left, right])
        cuts.append(i0 + int(np.argmin(values[i0:i1 + 1])))
    return [0] + cuts + [len(points)]


def _basin_spins(diag_ss: np.ndarray, points: np.ndarray, report: PeakReport,
                 eps: float, eta: float) -> list[tuple[float, np.ndarray, float]]:
    """(weight, Bloch vector, cos angle to B_ef) for every diagonal basin."""
    dx = points[1] - points[0]
    total = np.real(diag_ss[0, 0] + diag_ss[1, 1])
    edges = _basin_edges(total, points, report)
    out = []
    for j, peak in enumerate(report.peaks):
        s = diag_ss[:, :, edges[j]:edges[j + 1]].sum(axis=2) * dx
        tr = float(np.real(s[0, 0] + s[1, 1]))
        bloch = np.array([2 * s[1, 0].real, 2 * s[1, 0].imag, np.real(s[0, 0] - s[1, 1])]) / tr
        fld = np.array([eps, 0.0, 2 * eta * peak.position])
        nb, nf = np.linalg.norm(bloch), np.linalg.norm(fld)
        cosang = float(bloch @ fld / (nb * nf)) if nb > 0 and nf > 0 else math.nan
        out.append((tr, bloch, cosang))
    return out


def _label(report: PeakReport, spins) -> PeakReport:
    peaks = []
    for p, (_, _, c) in zip(report.peaks, spins):
        label = None if math.isnan(c) else ("anti" if c < 0 else "parallel")
        peaks.append(type(p)(p.position, p.height, p.width, p.area, label))
    return PeakReport(tuple(peaks), report.resolvable)


def _cross_peak(mod: np.ndarray, points: np.ndarray, report: PeakReport,
                radius: float = 0.75) -> tuple[float, bool, float]:
    """|rho(x1, x2)| at the two largest diagonal peaks, whether a local maximum of
    |rho| lies within ``radius`` of (x1, x2), and that maximum's height."""
    if len(report.peaks) < 2:
        return math.nan, False, math.nan
    a, b = sorted(report.peaks, key=lambda p: p.area, reverse=True)[:2]
    dx = points[1] - points[0]
    fi, fj = (a.position - points[0]) / dx, (b.position - points[0]) / dx
    value = 0.5 * float(map_coordinates(mod, [[fi, fj], [fj, fi]], order=3).sum())
    i, j = int(round(fi)), int(round(fj))
    r = max(1, int(round(radius / dx)))
    win = mod[max(i - r, 0):i + r + 1, max(j - r, 0):j + r + 1]
    local = win == maximum_filter(win, size=3, mode="nearest")
    # a maximum on the window border may just be a slope into a larger peak
    inner = np.zeros_like(local)
    inner[1:-1, 1:-1] = True
    hits = local & inner
    if not hits.any():
        return float(value), False, math.nan
    return float(value), True, float(win[hits].max())


def evolve_master(rho: DensityState, spec: MasterSpec) -> tuple[TrajectoryRecord, DensityState]:
    """Integrate ``rho`` to ``spec.t_end`` with sampled diagnostics.

    Series recorded beside the standard observables:

    * ``purity``, ``hermiticity``, ``min_diag`` (smallest diagonal entry);
    * ``off_diag_mass``: integral of |rho(x, x')| over ``|x - x'| > band``;
    * ``peaks_2d``: local maxima of |rho(x, x')| above 5% of its maximum;
    * ``diag_peaks``: :class:`PeakReport` of rho(x, x), each peak labelled
      'anti' or 'parallel' from the spin of its basin;
    * ``cross_peak``: |rho(x1, x2)| at the two largest diagonal peaks (NaN
      with fewer than two), ``cross_is_peak`` whether a local maximum sits
      there and ``cross_height`` its height relative to max |rho|.

    Trace drift beyond ``spec.trace_limit`` or a tail population above the
    trace raises :class:`NumericalError`;
    leakage raises :class:`TruncationError`. Negative diagonal entries
    below -1e-6 are logged as ``positivity`` events.
    """
    sim = spec.sim
    N = sim.n_max
    if rho.n_max != N:
        raise ValueError(f"density has n_max={rho.n_max}, spec expects {N}")
    stepper = _MasterStepper(spec)
    grid = spec.resolve_grid()
    U = hermite_functions(N, grid)
    dx = grid[1] - grid[0]
    off_mask = np.abs(np.subtract.outer(grid, grid)) > spec.band
    builder = RecordBuilder(grid)
    matrices, matrix_times = [], []
    trace0 = rho.trace()

    m = rho.matrix.copy()
    n_samples = math.ceil(spec.t_end / spec.sample_every - 1e-9)
    for k in range(n_samples + 1):
        t = min(k * spec.sample_every, spec.t_end)
        if k:
            m = stepper.propagate(m, t - builder.last("times"))
        if not np.all(np.isfinite(m)):
            raise NumericalError(f"density became non-finite at t={t:.4g}; reduce dt")
        state = DensityState(m)
        obs = observables(state)
        leak = state.leakage()
        pos = U.T @ state.reduced_oscillator() @ U
        mod = np.abs(pos)
        diag_ss = _spin_diagonals(state, U)
        diag = np.clip(np.real(diag_ss[0, 0] + diag_ss[1, 1]), 0, None)
        report = peak_areas(PositionGrid(grid, diag))
        report = _label(report, _basin_spins(diag_ss, grid, report, sim.eps, sim.eta))
        cross, is_peak, height = _cross_peak(mod, grid, report)
        min_diag = state.min_diagonal()
        builder.add(
            t, obs, leak, sim.eps, 0.0,
            purity=state.purity(), hermiticity=state.hermiticity_error(), min_diag=min_diag,
            off_diag_mass=float(np.sum(mod[off_mask]) * dx * dx),
            peaks_2d=count_peaks_2d(mod), diag_peaks=report,
            cross_peak=cross, cross_is_peak=is_peak, cross_height=height / float(mod.max()),
        )
        if spec.matrix_every and k % spec.matrix_every == 0:
            matrices.append(mod)
            matrix_times.append(t)
        if min_diag < -POSITIVITY_TOL:
            builder.event(t, "positivity", min_diag=min_diag)
        if abs(obs.norm - trace0) > spec.trace_limit:
            raise NumericalError(
                f"trace drifted by {obs.norm - trace0:.2e} at t={t:.4g}; reduce dt or raise n_max")
        if leak > abs(trace0):
            raise NumericalError(f"tail population exceeds the trace at t={t:.4g}; "
                                 "the step is unstable, reduce dt")
        if leak > spec.leakage_limit:
            need = required_n_max(obs.x, obs.p, N)
            raise TruncationError(
                f"basis leakage {leak:.2e} exceeds {spec.leakage_limit:.0e} at t={t:.4g}; "
                f"rerun with n_max >= {need}", need)
    trace = np.asarray(builder._cols["norm"])
    herm = np.asarray(builder._series["hermiticity"])
    record = builder.build(
        integrator=spec.integrator, dt=stepper.dt, steps=stepper.steps, eta=sim.eta,
        trace_drift=float(np.max(np.abs(trace - trace0))),
        max_hermiticity_error=float(herm.max()),
        positivity_breaches=sum(e["kind"] == "positivity" for e in builder.events),
        matrices=matrices, matrix_times=matrix_times,
    )
    return record, DensityState(m)


def four_peak_times(record: TrajectoryRecord, floor: float = 0.01) -> np.ndarray:
    """Sample times showing two diagonal peaks plus a cross peak at (x1, x2).

    ``floor`` is the minimum cross-peak height relative to max |rho|.
    """
    ok = np.asarray(record.series["cross_is_peak"], dtype=bool)
    h = np.nan_to_num(np.asarray(record.series["cross_height"], dtype=float), nan=0.0)
    return record.times[ok & (h >= floor)]


# -- post-processing ----------------------------------------------------------

@dataclass(frozen=True)
class DecoherenceFit:
    t_d: float
    rate: float
    residual: float      # rms of the log-linear fit
    t_start: float
    t_stop: float
    monotone: bool


def decoherence_time_fit(record: TrajectoryRecord, series: str = "cross_peak",
                         decades: float = 1.0) -> DecoherenceFit:
    """Exponential fit to the decay of an off-diagonal peak series.

    The window runs from the series maximum to the first sample at least
    ``decades`` orders of magnitude lower; NaN samples are skipped. A
    non-monotone window only triggers a warning.
    """
    y_all = np.asarray(record.series[series], dtype=float)
    ok = np.isfinite(y_all) & (y_all > 0)
    t, y = record.times[ok], y_all[ok]
    if len(y) == 0:
        raise ValueError(f"{series} has no positive samples")
    i0 = int(np.argmax(y))
    below = np.nonzero(y[i0:] <= y[i0] * 10.0 ** (-decades))[0]
    if len(below) == 0:
        raise ValueError(f"{series} does not decay by {decades} decade(s) after its maximum")
    i1 = i0 + int(below[0])
    if i1 - i0 < 2:
        raise ValueError("too few samples inside the decay window; sample more finely")
    tw, yw = t[i0:i1 + 1], np.log(y[i0:i1 + 1])
    slope, icpt = np.polyfit(tw, yw, 1)
    resid = float(np.sqrt(np.mean((yw - (slope * tw + icpt)) ** 2)))
    monotone = bool(np.all(np.diff(y[i0:i1 + 1]) < 0))
    if not monotone:
        warnings.warn(f"{series} is not monotone over the fit window; fit quality is doubtful",
                      stacklevel=2)
    return DecoherenceFit(-1.0 / slope, -slope, resid, float(tw[0]), float(tw[-1]), monotone)


@dataclass(frozen=True)
class DiffusionRate:
    keys: tuple           # branch labels, or peak indices counted from the left
    rates: tuple          # d(variance)/dt per diagonal peak
    intercepts: tuple
    samples: int


def variance_history(record: TrajectoryRecord, n_peaks: int, *, by_label: bool = True):
    """Times and per-peak variances at samples with exactly ``n_peaks`` diagonal peaks.

    Peaks are keyed by branch label when every peak carries a distinct one,
    otherwise by position order.
    """
    t_out, v_out, keys = [], [], None
    for t, rep in zip(record.times, record.series["diag_peaks"]):
        if len(rep.peaks) != n_peaks:
            continue
        labels = [p.label for p in rep.peaks]
        if by_label and None not in labels and len(set(labels)) == n_peaks:
            order = sorted(rep.peaks, key=lambda p: p.label)
            k = tuple(sorted(labels))
        else:
            order = sorted(rep.peaks, key=lambda p: p.position)
            k = tuple(range(n_peaks))
        if keys is None:
            keys = k
        elif keys != k:
            continue
        t_out.append(t)
        v_out.append([(p.width / FWHM_PER_SIGMA) ** 2 for p in order])
    return np.asarray(t_out), np.asarray(v_out).reshape(len(t_out), n_peaks), keys or ()


def diffusion_rate(record: TrajectoryRecord, *, n_peaks: int | None = None,
                   t_min: float = 0.0, min_samples: int = 3) -> DiffusionRate:
    """Linear fit of each diagonal peak's variance against time.

    Only samples after ``t_min`` showing exactly ``n_peaks`` diagonal peaks
    are used (default: the most common count).
    """
    reports = record.series.get("diag_peaks")
    if reports is None:
        raise ValueError("record has no diagonal peak history")
    if n_peaks is None:
        counts = [len(r.peaks) for r, t in zip(reports, record.times) if t >= t_min and r.peaks]
        if not counts:
            raise ValueError("no diagonal peaks found")
        n_peaks = max(set(counts), key=counts.count)
    t, v, keys = variance_history(record, n_peaks)
    keep = t >= t_min
    t, v = t[keep], v[keep]
    if len(t) < min_samples:
        raise ValueError(f"only {len(t)} samples with {n_peaks} peak(s); need {min_samples}")
    rates, icpts = [], []
    for j in range(n_peaks):
        s_, c = np.polyfit(t, v[:, j], 1)
        rates.append(float(s_))
        icpts.append(float(c))
    return DiffusionRate(keys, tuple(rates), tuple(icpts), len(t))


@dataclass(frozen=True)
class BranchSpin:
    position: float
    weight: float
    bloch: np.ndarray
    angle_deg: float      # angle between the Bloch vector and B_ef(position)

    @property
    def misalignment_deg(self) -> float:
        """Deviation from exact (anti-)alignment."""
        return min(self.angle_deg, 180.0 - self.angle_deg)


def branch_spin_alignment(rho: DensityState, sim: SimParams, points=None,
                          report: PeakReport | None = None) -> list[BranchSpin]:
    """Spin state of each diagonal basin compared with the local effective field."""
    points = position_grid(sim.A) if points is None else np.asarray(points, float)
    diag_ss = _spin_diagonals(rho, hermite_functions(rho.n_max, points))
    if report is None:
        total = np.clip(np.real(diag_ss[0, 0] + diag_ss[1, 1]), 0, None)
        report = peak_areas(PositionGrid(points, total))
    out = []
    for peak, (w, bloch, c) in zip(report.peaks, _basin_spins(diag_ss, points, report,
                                                              sim.eps, sim.eta)):
        out.append(BranchSpin(peak.position, w, bloch,
                              math.degrees(math.acos(max(-1.0, min(1.0, c))))))
    return out
