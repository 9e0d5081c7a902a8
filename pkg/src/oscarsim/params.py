"""Instrument parameters, the oscillator unit system and conversions.

Laboratory quantities live in :class:`ExperimentalParams` (SI units).
Simulations run in the natural units of the cantilever tip (CT):

* length   X_q = (hbar*omega_c/k_c)**0.5
* time     1/omega_c
* momentum hbar/X_q
* temperature hbar*omega_c/k_B

in which the rotating-frame Hamiltonian reads
``(p**2 + x**2)/2 + eps*S_x + 2*eta*x*S_z + Delta(t)*S_z``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

from .constants import GAMMA_E, HBAR, K_B

__all__ = [
    "ExperimentalParams",
    "UnitSystem",
    "SimParams",
    "to_dimensionless",
    "to_lab",
    "default_n_max",
    "min_n_max",
    "DT_BOUND",
]

#: Upper bound on ``dt * SimParams.e_max`` for lab-frame RK4.
DT_BOUND = 0.05


def _check_fields(cls, data: dict) -> None:
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {', '.join(unknown)}")


@dataclass(frozen=True)
class ExperimentalParams:
    """Laboratory parameters of an OSCAR MRFM setup (SI units).

    ``f_R`` is derived from ``gamma * B1 / (2 pi)`` when omitted; an explicit
    value must agree with it to 1e-9 relative. ``tau_m`` is carried for
    reference only.
    """

    k_c: float
    f_c: float
    Q: float
    A_lab: float
    B1: float
    G: float
    T_lab: float
    gamma: float = GAMMA_E
    f_R: float | None = None
    tau_m: float = 3.0

    def __post_init__(self):
        for name in ("k_c", "f_c", "A_lab", "B1", "G", "T_lab", "gamma", "tau_m"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be a positive finite number, got {value!r}")
        if not self.Q >= 1:
            raise ValueError(f"Q must be >= 1, got {self.Q!r}")
        f_R = self.gamma * self.B1 / (2 * math.pi)
        if self.f_R is None:
            object.__setattr__(self, "f_R", f_R)
        elif abs(self.f_R - f_R) > 1e-9 * f_R:
            raise ValueError(f"f_R={self.f_R!r} inconsistent with gamma*B1/2pi={f_R!r}")

    @classmethod
    def reference(cls) -> "ExperimentalParams":
        """Single-spin OSCAR reference setup.

        k_c = 600 uN/m, f_c = 6.6 kHz, Q = 5e4, A = 10 nm, B1 = 300 uT,
        G = 430 kT/m, T = 200 mK, free-electron gamma.
        """
        return cls(k_c=600e-6, f_c=6.6e3, Q=5e4, A_lab=10e-9, B1=300e-6,
                   G=430e3, T_lab=0.2, tau_m=3.0)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentalParams":
        _check_fields(cls, data)
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def omega_c(self) -> float:
        return 2 * math.pi * self.f_c

    @property
    def T_c(self) -> float:
        """CT period 1/f_c (s)."""
        return 1.0 / self.f_c

    @property
    def T_R(self) -> float:
        """Rabi period 1/f_R (s)."""
        return 1.0 / self.f_R


@dataclass(frozen=True)
class UnitSystem:
    """Scale factors mapping dimensionless quantities to SI.

    A physical unit system comes from :meth:`from_params`; :meth:`identity`
    (all scales 1) is useful for plain numeric passthrough.
    """

    length: float
    time: float
    momentum: float
    temperature: float
    frequency: float

    @classmethod
    def from_params(cls, p: ExperimentalParams) -> "UnitSystem":
        omega_c = p.omega_c
        X_q = math.sqrt(HBAR * omega_c / p.k_c)
        return cls(length=X_q, time=1.0 / omega_c, momentum=HBAR / X_q,
                   temperature=HBAR * omega_c / K_B, frequency=p.f_c)

    @classmethod
    def identity(cls) -> "UnitSystem":
        return cls(1.0, 1.0, 1.0, 1.0, 1.0)


def min_n_max(A: float) -> int:
    """Smallest basis admitted for a coherent state of amplitude ``A``."""
    return math.ceil(A * A / 2 + 6 * A / math.sqrt(2))


def default_n_max(A: float) -> int:
    # Poisson mean + six standard deviations + coupling headroom
    return math.ceil(A * A / 2 + 6 * A / math.sqrt(2) + 20)


@dataclass(frozen=True)
class SimParams:
    """Dimensionless simulation parameters.

    Parameters
    ----------
    eps : rf coupling f_R/f_c.
    eta : spin-CT coupling gamma*G*X_q/(2 omega_c).
    A : CT amplitude in X_q.
    T : temperature in hbar*omega_c/k_B (master equation only).
    Q : quality factor (``inf`` disables dissipation).
    Delta0 : telegraph noise amplitude.
    n_max : oscillator basis size; defaults to :func:`default_n_max`.
    dt : lab-frame RK4 step; defaults to ``DT_BOUND / e_max``.

    ``eps = 0`` is admitted so the bare (decoupled) oscillator can be run.
    """

    eps: float
    eta: float
    A: float
    T: float = 0.0
    Q: float = math.inf
    Delta0: float = 0.0
    n_max: int | None = None
    dt: float | None = field(default=None)

    def __post_init__(self):
        if not (self.eps >= 0 and math.isfinite(self.eps)):
            raise ValueError(f"eps must be >= 0, got {self.eps!r}")
        if not self.eta >= 0:
            raise ValueError(f"eta must be >= 0, got {self.eta!r}")
        if not self.A > 0:
            raise ValueError(f"A must be > 0, got {self.A!r}")
        if not self.T >= 0:
            raise ValueError(f"T must be >= 0, got {self.T!r}")
        if not self.Q >= 1:
            raise ValueError(f"Q must be >= 1, got {self.Q!r}")
        if not self.Delta0 >= 0:
            raise ValueError(f"Delta0 must be >= 0, got {self.Delta0!r}")
        if self.n_max is None:
            object.__setattr__(self, "n_max", default_n_max(self.A))
        if int(self.n_max) != self.n_max or self.n_max < min_n_max(self.A):
            raise ValueError(
                f"n_max={self.n_max} too small for A={self.A}; need >= {min_n_max(self.A)}")
        object.__setattr__(self, "n_max", int(self.n_max))
        if self.dt is None:
            object.__setattr__(self, "dt", DT_BOUND / self.e_max)
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt!r}")
        if self.dt * self.e_max > DT_BOUND * (1 + 1e-12):
            raise ValueError(
                f"dt={self.dt:.3e} violates dt*E_max <= {DT_BOUND} "
                f"(E_max={self.e_max:.4g}, max dt={DT_BOUND / self.e_max:.3e})")

    @property
    def e_max(self) -> float:
        """Largest Hamiltonian eigen-scale of the truncated problem."""
        return self.n_max + self.eps / 2 + 2 * self.eta * self.A * math.sqrt(self.n_max)

    @property
    def T_R(self) -> float:
        """Rabi period 2*pi/eps in units of 1/omega_c."""
        return 2 * math.pi / self.eps

    @classmethod
    def from_dict(cls, data: dict) -> "SimParams":
        _check_fields(cls, data)
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


def to_dimensionless(p: ExperimentalParams, *, noise_from_thermal: bool = False,
                     n_max: int | None = None, dt: float | None = None) -> SimParams:
    """Convert laboratory parameters into :class:`SimParams`.

    With ``noise_from_thermal`` the telegraph amplitude is set to the
    thermal Rabi-mode field ``gamma*G*A_R^T`` in units of omega_c;
    otherwise it is 0.
    """
    u = UnitSystem.from_params(p)
    omega_c = p.omega_c
    delta0 = 0.0
    if noise_from_thermal:
        A_RT = (p.f_c / p.f_R) * math.sqrt(2 * K_B * p.T_lab / p.k_c)
        delta0 = p.gamma * p.G * A_RT / omega_c
    return SimParams(
        eps=p.f_R / p.f_c,
        eta=p.gamma * p.G * u.length / (2 * omega_c),
        A=p.A_lab / u.length,
        T=p.T_lab / u.temperature,
        Q=p.Q,
        Delta0=delta0,
        n_max=n_max,
        dt=dt,
    )


def to_lab(s: SimParams, u: UnitSystem, gamma: float = GAMMA_E) -> ExperimentalParams:
    """Map dimensionless parameters back to laboratory units.

    Every field is expressed through the scales of ``u`` and ``gamma`` only,
    so the inverse of :func:`to_dimensionless` is exact for a unit system
    built from the same instrument.
    """
    omega_c = 1.0 / u.time
    f_R = s.eps * u.frequency
    return ExperimentalParams(
        k_c=u.momentum / (u.length * u.time),
        f_c=u.frequency,
        Q=s.Q,
        A_lab=s.A * u.length,
        B1=2 * math.pi * f_R / gamma,
        G=2 * s.eta * omega_c / (gamma * u.length),
        T_lab=s.T * u.temperature,
        gamma=gamma,
    )
