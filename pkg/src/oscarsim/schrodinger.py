"""Spinor evolution under the rotating-frame OSCAR Hamiltonian.

``H = (p**2 + x**2)/2 + eps(t) S_x + 2 eta x S_z + Delta(t) S_z``

``eps(t)`` drops to zero inside rf gate windows and ``Delta(t)`` is a
telegraph process. Both are piecewise constant, so the driver cuts the
time axis at every flip, gate edge and sample time and integrates each
constant-Hamiltonian segment separately.

Integrators
-----------
``rk4``    classical Runge-Kutta on the full coefficient vector (default);
           step bounded by ``dt * E_max <= 0.05``.
``ifrk4``  Runge-Kutta in the interaction picture of the bare oscillator
           (integrating factor), which removes the stiff ``n + 1/2`` phases
           and allows steps of order ``0.05 / ||V||``.
``expm``   exact propagation of each segment through a cached dense
           eigendecomposition of the truncated Hamiltonian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .analysis import PeakReport, peak_areas
from .hilbert import (
    LEAKAGE_TAIL,
    PositionGrid,
    SpinorState,
    TruncationError,
    hermite_functions,
    initial_spinor,
    observables,
    position_grid,
    spin_angles,
)
from .noise import RfGateSchedule, TelegraphProcess, sample_telegraph
from .params import DT_BOUND, SimParams
from .record import RecordBuilder, TrajectoryRecord

__all__ = [
    "EvolutionSpec",
    "CatSplitResult",
    "NumericalError",
    "INTEGRATORS",
    "IF_DT_BOUND",
    "hamiltonian",
    "rk4_propagate",
    "evolve",
    "initial_benchmark_state",
    "run_cat_split",
    "required_n_max",
]

INTEGRATORS = ("rk4", "ifrk4", "expm")
#: Upper bound on ``dt * ||V||`` for the integrating-factor stepper.
IF_DT_BOUND = 0.05
LEAKAGE_LIMIT = 1e-4
_TIME_TOL = 1e-12


class NumericalError(RuntimeError):
    """Integration lost an invariant (norm, trace) beyond repair."""


@dataclass(frozen=True)
class EvolutionSpec:
    """Everything that defines one spinor run apart from the initial state.

    ``noise`` may be given explicitly; otherwise a telegraph realisation is
    drawn from ``seed`` whenever ``sim.Delta0 > 0``. ``dt`` overrides the
    step of the chosen integrator. ``track_peaks`` runs peak analysis of
    P(x) every ``density_every`` samples (labelling branches by their local
    spin when ``label_branches``); ``record_density`` also stores P(x).
    """

    sim: SimParams
    t_end: float
    sample_every: float = 0.05
    noise: TelegraphProcess | None = None
    gates: RfGateSchedule | None = None
    integrator: str = "rk4"
    seed: int = 0
    dt: float | None = None
    track_peaks: bool = False
    record_density: bool = False
    density_every: int = 1
    label_branches: bool = False
    grid: np.ndarray | None = field(default=None, repr=False)
    leakage_limit: float = LEAKAGE_LIMIT

    def __post_init__(self):
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {INTEGRATORS}, got {self.integrator!r}")
        if not self.sample_every > 0:
            raise ValueError("sample_every must be positive")
        if self.integrator != "expm" and self.sample_every < self.step() * (1 - 1e-12):
            raise ValueError("sample_every must be >= dt")
        if self.dt is not None and self.integrator == "rk4":
            if self.dt * self.sim.e_max > DT_BOUND * (1 + 1e-12):
                raise ValueError(
                    f"dt={self.dt:.3e} violates dt*E_max <= {DT_BOUND} (E_max={self.sim.e_max:.4g})")
        if self.density_every < 1:
            raise ValueError("density_every must be >= 1")

    def step(self) -> float:
        if self.dt is not None:
            return self.dt
        if self.integrator == "ifrk4":
            return IF_DT_BOUND / interaction_scale(self.sim)
        return self.sim.dt

    def resolve_noise(self) -> TelegraphProcess | None:
        if self.noise is not None:
            return self.noise
        if self.sim.Delta0 > 0:
            return sample_telegraph(self.sim.Delta0, self.sim.T_R, self.seed, self.t_end)
        return None

    def resolve_grid(self) -> np.ndarray:
        return position_grid(self.sim.A) if self.grid is None else np.asarray(self.grid, float)


def interaction_scale(sim: SimParams) -> float:
    """Bound on the norm of the non-oscillator part of H."""
    return sim.eps / 2 + sim.eta * math.sqrt(2 * sim.n_max) + sim.Delta0 / 2 + 1e-12


def required_n_max(x: float, p: float, n_max: int) -> int:
    """Basis size suggested after leakage at mean phase-space point (x, p)."""
    r2 = (x * x + p * p) / 2
    return max(math.ceil(r2 + 6 * math.sqrt(r2) + 20 + LEAKAGE_TAIL), n_max + 32)


def _ladder(n_max: int):
    a = sp.diags(np.sqrt(np.arange(1, n_max, dtype=float)), 1, format="csr")
    return a


def hamiltonian(n_max: int, eps: float, eta: float, delta: float = 0.0, *,
                oscillator: bool = True) -> sp.csr_matrix:
    """Sparse H on the spin-major (2 n_max) vector; ``oscillator=False`` drops (p^2+x^2)/2."""
    a = _ladder(n_max)
    x = (a + a.T) / math.sqrt(2)
    eye = sp.identity(n_max, format="csr")
    sx = sp.csr_matrix([[0.0, 0.5], [0.5, 0.0]])
    sz = sp.csr_matrix([[0.5, 0.0], [0.0, -0.5]])
    H = eps * sp.kron(sx, eye) + 2 * eta * sp.kron(sz, x) + delta * sp.kron(sz, eye)
    if oscillator:
        H = H + sp.diags(np.tile(np.arange(n_max) + 0.5, 2))
    return sp.csr_matrix(H, dtype=complex)


def rk4_propagate(y: np.ndarray, gen: sp.csr_matrix, h: float, steps: int) -> np.ndarray:
    """``steps`` classical RK4 steps of ``dy/dt = gen @ y``."""
    h2, h6 = h / 2, h / 6
    for _ in range(steps):
        k1 = gen @ y
        k2 = gen @ (y + h2 * k1)
        k3 = gen @ (y + h2 * k2)
        k4 = gen @ (y + h * k3)
        y = y + h6 * (k1 + 2 * (k2 + k3) + k4)
    return y


def ifrk4_propagate(y: np.ndarray, gen: sp.csr_matrix, energies: np.ndarray,
                    h: float, steps: int) -> np.ndarray:
    """Integrating-factor RK4 with the diagonal part ``energies`` treated exactly.

    ``gen`` is ``-i V`` for the off-diagonal remainder.
    """
    e1 = np.exp(-1j * energies * h)
    e2 = np.exp(-0.5j * energies * h)
    h2, h6 = h / 2, h / 6
    for _ in range(steps):
        a = gen @ y
        b = gen @ (e2 * (y + h2 * a))
        c = gen @ (e2 * y + h2 * b)
        d = gen @ (e1 * y + h * (e2 * c))
        y = e1 * y + h6 * (e1 * a + 2 * e2 * (b + c) + d)
    return y


class _Stepper:
    """Caches per-(eps, delta) operators for one run."""

    def __init__(self, sim: SimParams, integrator: str, dt: float):
        self.sim = sim
        self.integrator = integrator
        self.dt = dt
        self.energies = np.tile(np.arange(sim.n_max) + 0.5, 2)
        self._cache: dict = {}
        self.steps = 0

    def _ops(self, eps: float, delta: float):
        key = (eps, delta)
        if key not in self._cache:
            n, eta = self.sim.n_max, self.sim.eta
            if self.integrator == "rk4":
                op = (-1j * hamiltonian(n, eps, eta, delta)).tocsr()
            elif self.integrator == "ifrk4":
                op = (-1j * hamiltonian(n, eps, eta, delta, oscillator=False)).tocsr()
            else:
                w, v = np.linalg.eigh(hamiltonian(n, eps, eta, delta).toarray())
                op = (w, v)
            self._cache[key] = op
        return self._cache[key]

    def propagate(self, y: np.ndarray, tau: float, eps: float, delta: float) -> np.ndarray:
        op = self._ops(eps, delta)
        if self.integrator == "expm":
            w, v = op
            self.steps += 1
            return v @ (np.exp(-1j * w * tau) * (v.conj().T @ y))
        n = max(1, math.ceil(tau / self.dt - 1e-9))
        self.steps += n
        if self.integrator == "rk4":
            return rk4_propagate(y, op, tau / n, n)
        return ifrk4_propagate(y, op, self.energies, tau / n, n)

    def energy(self, y: np.ndarray, eps: float, delta: float) -> float:
        key = ("H", eps, delta)
        if key not in self._cache:
            self._cache[key] = hamiltonian(self.sim.n_max, eps, self.sim.eta, delta)
        return float(np.vdot(y, self._cache[key] @ y).real)


def _label_peaks(report: PeakReport, psi_x: np.ndarray, points: np.ndarray,
                 eps: float, eta: float) -> PeakReport:
    """Tag each basin 'anti' or 'parallel' by its local spin relative to B_ef."""
    if not report.peaks:
        return report
    cuts = []
    pos = [p.position for p in report.peaks]
    for left, right in zip(pos[:-1], pos[1:]):
        i0, i1 = np.searchsorted(points, [left, right])
        P = np.sum(np.abs(psi_x[:, i0:i1 + 1]) ** 2, axis=0)
        cuts.append(i0 + int(np.argmin(P)))
    edges = [0] + cuts + [len(points)]
    labelled = []
    for j, peak in enumerate(report.peaks):
        u = psi_x[:, edges[j]:edges[j + 1]]
        cross = np.vdot(u[0], u[1])
        s = np.array([cross.real, cross.imag,
                      0.5 * (np.sum(np.abs(u[0]) ** 2) - np.sum(np.abs(u[1]) ** 2))])
        b = np.array([eps, 0.0, 2 * eta * peak.position])
        label = "anti" if float(s @ b) < 0 else "parallel"
        labelled.append(type(peak)(peak.position, peak.height, peak.width, peak.area, label))
    return PeakReport(tuple(labelled), report.resolvable)


def evolve(state: SpinorState, spec: EvolutionSpec) -> tuple[TrajectoryRecord, SpinorState]:
    """Integrate ``state`` to ``spec.t_end`` and sample observables.

    Raises :class:`TruncationError` when the top ``LEAKAGE_TAIL`` basis
    states hold more than ``spec.leakage_limit`` of the probability.
    """
    sim = spec.sim
    N = sim.n_max
    if state.n_max != N:
        raise ValueError(f"state has n_max={state.n_max}, spec expects {N}")
    noise = spec.resolve_noise()
    gates = spec.gates
    extremum = gates is not None and gates.anchor == "extremum"
    stepper = _Stepper(sim, spec.integrator, spec.step())

    want_density = spec.track_peaks or spec.record_density
    grid = spec.resolve_grid() if want_density else None
    U = hermite_functions(N, grid) if want_density else None
    builder = RecordBuilder(grid if spec.record_density else None)

    flips = noise.flip_times if noise is not None else np.empty(0)
    nominal = list(gates.windows) if gates is not None else []
    windows = [] if extremum else list(nominal)
    pending = list(nominal) if extremum else []

    def eps_at(t):
        for start, dur in windows:
            if start - _TIME_TOL <= t < start + dur - _TIME_TOL:
                return 0.0
        return sim.eps

    def delta_at(t):
        return noise.value(t) if noise is not None else 0.0

    def next_break(t):
        cands = [math.inf]
        i = np.searchsorted(flips, t + _TIME_TOL, side="right")
        if i < len(flips):
            cands.append(float(flips[i]))
        for start, dur in windows:
            for edge in (start, start + dur):
                if edge > t + _TIME_TOL:
                    cands.append(edge)
        return min(cands)

    y = state.vector().copy()
    peaks, density_times = [], []
    n_samples = math.ceil(spec.t_end / spec.sample_every - 1e-9)
    norm0 = None
    prev_p = None

    def sample(k, t, eps_now, delta_now):
        nonlocal norm0
        st = SpinorState(y.reshape(2, N))
        obs = observables(st)
        leak = st.leakage()
        if norm0 is None:
            norm0 = obs.norm
        dens = None
        if want_density and k % spec.density_every == 0:
            psi_x = st.coeffs @ U
            P = np.sum(np.abs(psi_x) ** 2, axis=0)
            if spec.track_peaks:
                rep = peak_areas(PositionGrid(grid, P))
                if spec.label_branches:
                    rep = _label_peaks(rep, psi_x, grid, eps_now, sim.eta)
                peaks.append(rep)
                density_times.append(t)
            if spec.record_density:
                dens = P
        builder.add(t, obs, leak, eps_now, delta_now, density=dens,
                    energy=stepper.energy(y, eps_now, delta_now))
        if leak > spec.leakage_limit:
            need = required_n_max(obs.x, obs.p, N)
            raise TruncationError(
                f"basis leakage {leak:.2e} exceeds {spec.leakage_limit:.0e} at t={t:.4g}; "
                f"rerun with n_max >= {need}", need)
        return obs

    t = 0.0
    eps_now, delta_now = eps_at(0.0), delta_at(0.0)
    obs = sample(0, t, eps_now, delta_now)
    prev_p = obs.p
    for k in range(1, n_samples + 1):
        t_target = min(k * spec.sample_every, spec.t_end)
        while t < t_target - _TIME_TOL:
            t_next = min(t_target, next_break(t))
            y = stepper.propagate(y, t_next - t, eps_now, delta_now)
            t = t_next
            new_eps, new_delta = eps_at(t), delta_at(t)
            if new_delta != delta_now:
                builder.event(t, "flip", value=new_delta)
            if new_eps != eps_now:
                builder.event(t, "gate_open" if new_eps == 0 else "gate_close")
            eps_now, delta_now = new_eps, new_delta
        t = t_target
        obs = sample(k, t, eps_now, delta_now)
        if extremum and pending and t >= pending[0][0] - _TIME_TOL:
            busy = any(s <= t < s + d for s, d in windows)
            if not busy and (obs.p == 0 or (prev_p is not None and np.sign(obs.p) != np.sign(prev_p))):
                _, dur = pending.pop(0)
                windows.append((t, dur))
                builder.event(t, "gate_open", anchor="extremum")
                eps_now = 0.0
        prev_p = obs.p

    if not np.all(np.isfinite(y)):
        raise NumericalError("state became non-finite; reduce dt")
    record = builder.build(
        integrator=spec.integrator, dt=stepper.dt, steps=stepper.steps,
        eta=sim.eta, norm_drift=float(np.max(np.abs(np.asarray(builder._cols["norm"]) - norm0))),
        gate_windows=[list(w) for w in windows],
        flip_times=flips.tolist(), density_times=np.asarray(density_times),
    )
    if spec.track_peaks:
        record.series["peaks"] = peaks
    return record, SpinorState(y.reshape(2, N))


def initial_benchmark_state(sim: SimParams, theta: float = 0.0, x0: float | None = None) -> SpinorState:
    """Coherent state at ``x0`` (default ``sim.A``) with the spin at ``pi - theta`` to B_ef."""
    x0 = sim.A if x0 is None else x0
    polar, azimuth = spin_angles(sim.eps, sim.eta, x0, theta)
    return initial_spinor(x0, 0.0, polar, azimuth, sim.n_max)


@dataclass
class CatSplitResult:
    record: TrajectoryRecord
    state: SpinorState
    theta: float
    split_time: float                     # inf when no split was seen
    peak_history: list                    # (t, PeakReport) per analysed sample
    best: PeakReport | None               # cleanest resolvable report
    areas: dict                           # label -> area from ``best``

    @property
    def split(self) -> bool:
        return math.isfinite(self.split_time)


def run_cat_split(theta: float, spec: EvolutionSpec) -> CatSplitResult:
    """Evolve a spin at ``pi - theta`` to B_ef and follow the splitting of P(x).

    ``areas`` come from the resolvable sample where the two largest peaks
    are furthest apart relative to their widths, keyed by branch label
    ('anti' follows the field anti-parallel and runs slower).
    """
    if not 0 <= theta <= math.pi:
        raise ValueError("theta must lie in [0, pi]")
    run_spec = replace(spec, track_peaks=True, label_branches=True)
    psi0 = initial_benchmark_state(spec.sim, theta)
    record, final = evolve(psi0, run_spec)
    times = record.extras["density_times"]
    history = list(zip(times.tolist(), record.series["peaks"]))
    split_t, best, best_q = math.inf, None, -math.inf
    for t, rep in history:
        if not rep.resolvable:
            continue
        split_t = min(split_t, t)
        a, b = sorted(rep.peaks, key=lambda p: p.area, reverse=True)[:2]
        q = abs(a.position - b.position) / max(a.width, b.width, 1e-12)
        if q > best_q:
            best, best_q = rep, q
    areas = {}
    if best is not None:
        for p in best.peaks:
            areas[p.label] = areas.get(p.label, 0.0) + p.area
    return CatSplitResult(record, final, theta, split_t, history, best, areas)
