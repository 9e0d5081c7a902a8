"""Truncated harmonic oscillator (x) spin-1/2 state space.

States are stored in the oscillator eigenbasis, spin-major: index 0 of the
spin axis is ``s = +1/2`` and index 1 is ``s = -1/2`` (S_z representation,
hbar = 1). Position-space quantities are derived views on a uniform grid in
units of X_q, with ``x = (a + a^dagger)/sqrt(2)`` and
``p = i (a^dagger - a)/sqrt(2)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.special import gammaln

__all__ = [
    "SX", "SY", "SZ", "SPIN_Z",
    "TruncationError",
    "SpinorState",
    "DensityState",
    "PositionGrid",
    "Observables",
    "lowering",
    "position_op",
    "momentum_op",
    "coherent_state",
    "effective_field",
    "spin_angles",
    "spin_state",
    "initial_spinor",
    "observables",
    "hermite_functions",
    "position_grid",
    "position_density",
    "position_wavefunctions",
    "reduced_position_matrix",
    "bloch_vector",
    "save_state",
    "load_state",
]

SX = 0.5 * np.array([[0, 1], [1, 0]], dtype=complex)
SY = 0.5 * np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = 0.5 * np.array([[1, 0], [0, -1]], dtype=complex)
SPIN_Z = np.array([0.5, -0.5])

#: Number of top basis states whose population counts as leakage.
LEAKAGE_TAIL = 10


class TruncationError(RuntimeError):
    """The oscillator basis is too small for the requested state or run."""

    def __init__(self, message: str, required_n_max: int | None = None):
        super().__init__(message)
        self.required_n_max = required_n_max


def lowering(n_max: int) -> np.ndarray:
    """Dense annihilation operator on ``n_max`` number states."""
    return np.diag(np.sqrt(np.arange(1, n_max, dtype=float)), 1)


def position_op(n_max: int) -> np.ndarray:
    a = lowering(n_max)
    return (a + a.T) / math.sqrt(2)


def momentum_op(n_max: int) -> np.ndarray:
    a = lowering(n_max)
    return 1j * (a.T - a) / math.sqrt(2)


def coherent_state(x0: float, p0: float, n_max: int, *, tol: float = 1e-6) -> np.ndarray:
    """Number-basis amplitudes of the coherent state with <x> = x0, <p> = p0.

    ``A_n = alpha**n / sqrt(n!) * exp(-|alpha|**2/2)``,
    ``alpha = (x0 + i p0)/sqrt(2)``. The amplitudes are evaluated in log space
    and are *not* renormalised after truncation; a basis that loses more
    than ``tol`` of the probability raises :class:`TruncationError`.
    """
    alpha = (x0 + 1j * p0) / math.sqrt(2)
    n = np.arange(n_max)
    r2 = abs(alpha) ** 2
    if r2 == 0:
        amp = np.zeros(n_max, dtype=complex)
        amp[0] = 1.0
        return amp
    log_mod = n * math.log(abs(alpha)) - 0.5 * gammaln(n + 1) - r2 / 2
    amp = np.exp(log_mod) * np.exp(1j * n * np.angle(alpha))
    lost = 1.0 - float(np.sum(np.abs(amp) ** 2))
    if lost > tol:
        need = math.ceil(r2 + 6 * math.sqrt(r2) + 20)
        raise TruncationError(
            f"n_max={n_max} keeps only {1 - lost:.3g} of a coherent state with "
            f"|alpha|^2={r2:.4g}; use n_max >= {need}", need)
    return amp


def effective_field(eps: float, eta: float, x) -> np.ndarray:
    """Rotating-frame effective field {eps, 0, 2*eta*x} (last axis = components)."""
    x = np.asarray(x, dtype=float)
    return np.stack(np.broadcast_arrays(np.full_like(x, eps), np.zeros_like(x), 2 * eta * x), axis=-1)


def spin_angles(eps: float, eta: float, x0: float, theta: float = 0.0) -> tuple[float, float]:
    """Polar/azimuthal angles of a spin making angle ``pi - theta`` with B_ef(x0).

    ``theta = 0`` is anti-parallel to the effective field and ``theta = pi``
    parallel; intermediate angles rotate within the x-z plane.
    """
    b = effective_field(eps, eta, x0)
    norm = np.linalg.norm(b)
    if norm == 0:
        raise ValueError("effective field vanishes; spin direction undefined")
    b = b / norm
    perp = np.array([b[2], 0.0, -b[0]])
    v = -math.cos(theta) * b + math.sin(theta) * perp
    polar = math.acos(max(-1.0, min(1.0, v[2])))
    azimuth = math.atan2(v[1], v[0])
    return polar, azimuth


def spin_state(theta: float, phi: float) -> np.ndarray:
    """Spinor (cos(theta/2), e^{i phi} sin(theta/2)); theta = 0 is +z."""
    return np.array([math.cos(theta / 2), np.exp(1j * phi) * math.sin(theta / 2)])


@dataclass
class SpinorState:
    """Two-component wave function, ``coeffs[s, n]``."""

    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.ndim != 2 or self.coeffs.shape[0] != 2:
            raise ValueError(f"coeffs must have shape (2, n_max), got {self.coeffs.shape}")

    @property
    def n_max(self) -> int:
        return self.coeffs.shape[1]

    def norm(self) -> float:
        return float(np.sum(np.abs(self.coeffs) ** 2))

    def leakage(self, tail: int = LEAKAGE_TAIL) -> float:
        return float(np.sum(np.abs(self.coeffs[:, -tail:]) ** 2))

    def vector(self) -> np.ndarray:
        return self.coeffs.reshape(-1)

    def to_density(self) -> "DensityState":
        v = self.vector()
        return DensityState(np.outer(v, v.conj()))


@dataclass
class DensityState:
    """Density matrix over spin (x) oscillator, spin-major ``(2N, 2N)`` layout.

    ``blocks[s, s', n, n']`` gives the 2x2 spin-block view.
    """

    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=complex)
        m = self.matrix
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] % 2:
            raise ValueError(f"matrix must be square with even size, got {m.shape}")

    @property
    def n_max(self) -> int:
        return self.matrix.shape[0] // 2

    @property
    def blocks(self) -> np.ndarray:
        N = self.n_max
        return self.matrix.reshape(2, N, 2, N).transpose(0, 2, 1, 3)

    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def purity(self) -> float:
        m = self.matrix
        return float(np.vdot(m, m).real)  # tr(rho^2) for Hermitian rho

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.matrix - self.matrix.conj().T)))

    def min_diagonal(self) -> float:
        return float(np.min(np.diagonal(self.matrix).real))

    def leakage(self, tail: int = LEAKAGE_TAIL) -> float:
        d = np.diagonal(self.matrix).real.reshape(2, -1)
        return float(np.sum(d[:, -tail:]))

    def spin_block(self, s: int, sp: int) -> np.ndarray:
        N = self.n_max
        return self.matrix[s * N:(s + 1) * N, sp * N:(sp + 1) * N]

    def reduced_oscillator(self) -> np.ndarray:
        """Spin-traced oscillator density matrix."""
        return self.spin_block(0, 0) + self.spin_block(1, 1)


def initial_spinor(x0: float, p0: float, theta: float, phi: float, n_max: int) -> SpinorState:
    """Product of a coherent CT state and a spin pointing along (theta, phi)."""
    osc = coherent_state(x0, p0, n_max)
    osc = osc / np.linalg.norm(osc)
    return SpinorState(np.outer(spin_state(theta, phi), osc))


class Observables(NamedTuple):
    x: float
    p: float
    sx: float
    sy: float
    sz: float
    norm: float


def observables(state: SpinorState | DensityState) -> Observables:
    """Expectation values <x>, <p>, <S>, and the norm (or trace).

    The values are the raw quadratic forms ``<psi|O|psi>`` (``tr(rho O)``),
    not divided by the norm.
    """
    if isinstance(state, SpinorState):
        c = state.coeffs
        N = state.n_max
        sq = np.sqrt(np.arange(1, N))
        lower = np.sum(np.conj(c[:, :-1]) * sq * c[:, 1:])  # <a>
        x = math.sqrt(2) * lower.real
        p = math.sqrt(2) * lower.imag
        cross = np.vdot(c[0], c[1])  # sum conj(c+) c-
        sx = cross.real
        sy = cross.imag
        pops = np.sum(np.abs(c) ** 2, axis=1)
        sz = 0.5 * (pops[0] - pops[1])
        return Observables(x, p, sx, sy, float(sz), float(pops.sum()))
    if isinstance(state, DensityState):
        N = state.n_max
        r = state.reduced_oscillator()
        sq = np.sqrt(np.arange(1, N))
        a_exp = np.sum(sq * np.diagonal(r, -1))  # tr(rho a) = sum_n sqrt(n) rho[n, n-1]
        x = math.sqrt(2) * a_exp.real
        p = math.sqrt(2) * a_exp.imag
        off = np.trace(state.spin_block(1, 0))
        sx = off.real
        sy = off.imag
        sz = 0.5 * (np.trace(state.spin_block(0, 0)).real - np.trace(state.spin_block(1, 1)).real)
        return Observables(float(x), float(p), float(sx), float(sy), float(sz), state.trace())
    raise TypeError(f"unsupported state type {type(state).__name__}")


def hermite_functions(n_max: int, x) -> np.ndarray:
    """Oscillator eigenfunctions u_n(x), shape ``(n_max, len(x))``.

    Uses the upward recurrence of the normalised functions,
    ``u_n = sqrt(2/n) x u_{n-1} - sqrt((n-1)/n) u_{n-2}``, which avoids
    factorial overflow at large n.
    """
    x = np.asarray(x, dtype=float)
    u = np.zeros((n_max,) + x.shape)
    u[0] = np.pi ** -0.25 * np.exp(-x * x / 2)
    if n_max > 1:
        u[1] = math.sqrt(2) * x * u[0]
    for n in range(2, n_max):
        u[n] = math.sqrt(2 / n) * x * u[n - 1] - math.sqrt((n - 1) / n) * u[n - 2]
    return u


@dataclass
class PositionGrid:
    """Uniform grid in X_q units with sampled values (1-D or 2-D)."""

    points: np.ndarray
    values: np.ndarray = field(default=None)

    @property
    def spacing(self) -> float:
        return float(self.points[1] - self.points[0])

    def integral(self) -> float:
        return float(np.sum(self.values) * self.spacing ** self.values.ndim)


def position_grid(A: float, spacing: float = 0.25, margin: float = 6.0) -> np.ndarray:
    """Uniform grid covering ``[-2A - margin, 2A + margin]``."""
    if spacing > 0.25:
        raise ValueError("grid spacing must be <= 0.25")
    half = 2 * abs(A) + margin
    n = math.ceil(half / spacing)
    return np.arange(-n, n + 1) * spacing


def position_wavefunctions(state: SpinorState, points) -> np.ndarray:
    """u_s(x) on ``points``, shape ``(2, len(points))``."""
    u = hermite_functions(state.n_max, points)
    return state.coeffs @ u


def position_density(state: SpinorState | DensityState, points=None, *, A: float | None = None) -> PositionGrid:
    """P(x) = sum_s |u_s(x)|^2 (or rho(x, x) for a density matrix)."""
    if points is None:
        if A is None:
            A = math.sqrt(max(2 * observables(state).x ** 2, 1.0))
        points = position_grid(A)
    points = np.asarray(points, dtype=float)
    if isinstance(state, SpinorState):
        psi = position_wavefunctions(state, points)
        values = np.sum(np.abs(psi) ** 2, axis=0)
    else:
        u = hermite_functions(state.n_max, points)
        r = state.reduced_oscillator()
        values = np.einsum("ng,nm,mg->g", u, r, u).real
    return PositionGrid(points, values)


def reduced_position_matrix(rho: DensityState, points, *, modulus: bool = True) -> PositionGrid:
    """Spin-traced rho(x, x') on ``points`` x ``points`` (modulus by default)."""
    points = np.asarray(points, dtype=float)
    u = hermite_functions(rho.n_max, points)
    m = u.T @ rho.reduced_oscillator() @ u
    return PositionGrid(points, np.abs(m) if modulus else m)


def bloch_vector(spin_rho: np.ndarray) -> np.ndarray:
    """Normalised-trace Bloch vector (2<S_x>, 2<S_y>, 2<S_z>) of a 2x2 spin matrix."""
    tr = np.trace(spin_rho).real
    if tr <= 0:
        return np.full(3, np.nan)
    return np.array([
        2 * spin_rho[1, 0].real,
        2 * spin_rho[1, 0].imag,
        (spin_rho[0, 0] - spin_rho[1, 1]).real,
    ]) / tr


# -- snapshots ---------------------------------------------------------------

def save_state(path, state: SpinorState | DensityState, metadata: dict | None = None) -> tuple[Path, Path]:
    """Write ``<path>.bin`` and a ``<path>.json`` sidecar.

    Binary layout: little-endian int64 ``n_max`` followed by the spin-major
    complex array as interleaved little-endian float64 (re, im).
    """
    path = Path(path)
    if isinstance(state, SpinorState):
        kind, data = "spinor", state.coeffs
    elif isinstance(state, DensityState):
        kind, data = "density", state.matrix
    else:
        raise TypeError(f"unsupported state type {type(state).__name__}")
    bin_path = path.with_suffix(".bin")
    json_path = path.with_suffix(".json")
    with open(bin_path, "wb") as fh:
        fh.write(np.array([state.n_max], dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(data, dtype="<c16").tobytes())
    meta = {"kind": kind, "n_max": state.n_max, "shape": list(data.shape),
            "dtype": "<c16", "layout": "spin-major", "header_bytes": 8}
    meta.update(metadata or {})
    json_path.write_text(json.dumps(meta, indent=2) + "\n")
    return bin_path, json_path


def load_state(path) -> SpinorState | DensityState:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    raw = path.with_suffix(".bin").read_bytes()
    n_max = int(np.frombuffer(raw[:8], dtype="<i8")[0])
    if n_max != meta["n_max"]:
        raise ValueError("binary header disagrees with sidecar n_max")
    data = np.frombuffer(raw[8:], dtype="<c16").reshape(meta["shape"]).astype(complex)
    if meta["kind"] == "spinor":
        return SpinorState(data)
    return DensityState(data)
