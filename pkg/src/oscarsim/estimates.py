"""Closed-form OSCAR estimates.

Mean-field frequency shift, the adiabaticity window, thermal frequency
noise, and the chain decoherence -> angular diffusion -> quantum-jump time.
Every function is a pure evaluation of closed-form expressions; sweeps may
call them freely in parallel.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

from .constants import HBAR, K_B
from .params import ExperimentalParams, SimParams

__all__ = [
    "SATURATED",
    "FrequencyShift",
    "AdiabaticityReport",
    "ThermalNoise",
    "Decoherence",
    "JumpChain",
    "CrossingShift",
    "EstimateReport",
    "frequency_shift",
    "dimensionless_frequency_shift",
    "adiabaticity_window",
    "thermal_noise",
    "collapse_decoherence",
    "jump_chain",
    "crossing_shift_estimate",
    "mean_field_spin",
    "estimate_report",
]

#: Returned in place of times that overflow (e.g. t_jump at T -> 0).
SATURATED = math.inf

#: Factor standing in for "much less than" in the adiabaticity flags.
MARGIN = 3.0

SPIN = 0.5


@dataclass(frozen=True)
class FrequencyShift:
    dkc: float              # spring-constant shift, N/m
    dkc_simplified: float   # GA >> B1 limit, N/m
    dfc_rel: float
    dfc_abs: float          # Hz, signed


@dataclass(frozen=True)
class AdiabaticityReport:
    full_reversal: bool
    adiabatic: bool
    lower_ratio: float   # GA/B1  or  2*eta*A/eps
    upper_ratio: float   # f_R/f_c or eps


@dataclass(frozen=True)
class ThermalNoise:
    x_rms: float
    F_rms: float
    dfcT_rel: float


@dataclass(frozen=True)
class Decoherence:
    X_q: float
    t_d: float


@dataclass(frozen=True)
class JumpChain:
    A_RT: float
    dtheta0: float
    dt1: float
    D: float
    dtheta1_sq: float
    dtheta_col_sq: float
    P_jump: float
    t_jump: float

    @property
    def saturated(self) -> bool:
        return self.t_jump == SATURATED


@dataclass(frozen=True)
class CrossingShift:
    dt_c: float
    dt_j: float
    rel_change: float


def frequency_shift(p: ExperimentalParams) -> FrequencyShift:
    """Mean-field CT frequency shift for a spin anti-parallel to B_ef.

    ``dkc = -gamma*hbar*G**2 / (2*(G**2*A**2 + B1**2))**0.5`` and
    ``df/f = dkc/(2 k_c)``. The ``GA >> B1`` limit
    ``-sqrt(2)*G*mu/A`` uses the spin moment ``mu = gamma*hbar/2`` so that
    the two forms coincide as ``GA/B1 -> inf``.
    """
    G, A, B1 = p.G, p.A_lab, p.B1
    dkc = -p.gamma * HBAR * G**2 / math.sqrt(2 * (G**2 * A**2 + B1**2))
    mu = p.gamma * HBAR / 2
    dkc_simple = -math.sqrt(2) * G * mu / A
    dfc_rel = dkc / (2 * p.k_c)
    return FrequencyShift(dkc, dkc_simple, dfc_rel, dfc_rel * p.f_c)


def dimensionless_frequency_shift(eps: float, eta: float, A: float) -> float:
    """|delta omega_c| / omega_c = eta**2 / (2 eta**2 A**2 + eps**2)**0.5."""
    if eta == 0:
        return 0.0
    return eta**2 / math.sqrt(2 * eta**2 * A**2 + eps**2)


def adiabaticity_window(p: ExperimentalParams | SimParams) -> AdiabaticityReport:
    """Check ``1 << GA/B1 << f_R/f_c`` (or ``eps << 2 eta A << eps**2``).

    "<<" means a factor of at least 3; the raw ratios are returned so callers
    can apply their own margin. A field swing below ``1/3`` of B1 is not
    treated as a reversal at all, so neither flag is set for it.
    """
    if isinstance(p, SimParams):
        lower = 2 * p.eta * p.A / p.eps if p.eps > 0 else math.inf
        upper = p.eps
    else:
        lower = p.G * p.A_lab / p.B1
        upper = p.f_R / p.f_c
    full = lower >= MARGIN
    adiabatic = lower >= 1 / MARGIN and upper >= MARGIN * lower
    return AdiabaticityReport(full, adiabatic, lower, upper)


def thermal_noise(p: ExperimentalParams) -> ThermalNoise:
    x_rms = math.sqrt(K_B * p.T_lab / p.k_c)
    F_rms = 2 * p.k_c * x_rms / p.Q
    return ThermalNoise(x_rms, F_rms, x_rms / (p.A_lab * p.Q))


def collapse_decoherence(p: ExperimentalParams, delta_x: float | None = None) -> Decoherence:
    """Quantum length X_q and the decoherence time for a separation ``delta_x``.

    ``delta_x`` defaults to X_q.
    """
    X_q = math.sqrt(HBAR * p.omega_c / p.k_c)
    if delta_x is None:
        delta_x = X_q
    if not delta_x > 0:
        raise ValueError("delta_x must be positive")
    t_d = p.omega_c * HBAR**2 * p.Q / (p.k_c * K_B * p.T_lab * delta_x**2)
    return Decoherence(X_q, t_d)


def _safe_div(a: float, b: float) -> float:
    if b == 0:
        return SATURATED
    try:
        r = a / b
    except OverflowError:
        return SATURATED
    return SATURATED if math.isinf(r) else r


def jump_chain(p: ExperimentalParams, t_col: float | None = None) -> JumpChain:
    """Thermal Rabi-mode noise -> angular diffusion -> quantum-jump time.

    Parameters
    ----------
    p : laboratory parameters.
    t_col : interval between two collapses (s); defaults to the CT period.

    Notes
    -----
    ``t_jump = t_col / P_jump`` is algebraically independent of ``t_col``;
    it reduces to ``A / (1.7 gamma G A_RT**2)``. When ``P_jump`` underflows
    the time is reported as :data:`SATURATED`.
    """
    if t_col is None:
        t_col = p.T_c
    if not t_col > 0:
        raise ValueError("t_col must be positive")
    A_RT = (p.f_c / p.f_R) * math.sqrt(2 * K_B * p.T_lab / p.k_c)
    T_R = p.T_R
    dtheta0 = p.gamma * T_R * p.G * A_RT
    dt1 = 3.4 * p.f_R / (p.gamma * p.G * p.A_lab * p.f_c)
    D = dtheta0**2 / T_R
    dtheta1_sq = D * dt1
    dtheta_col_sq = dtheta1_sq * t_col / (p.T_c / 2)
    P_jump = dtheta_col_sq / 4
    return JumpChain(A_RT, dtheta0, dt1, D, dtheta1_sq, dtheta_col_sq, P_jump,
                     _safe_div(t_col, P_jump))


def crossing_shift_estimate(p: ExperimentalParams, P1: float = 1.0, P2: float = 0.0,
                            t_col: float | None = None) -> CrossingShift:
    """Shift of the interval between consecutive equilibrium crossings.

    ``dt_c = pi*|d omega_c|/omega_c**2`` is the single-trajectory shift and
    ``dt_j = dt_c*(P1 - P2)`` the two-trajectory one. ``rel_change`` is the
    estimated ``|dt_j - dt_c|/dt_c = <dtheta_col**2>/2`` at ``t_col``.
    """
    for name, v in (("P1", P1), ("P2", P2)):
        if not 0 <= v <= 1:
            raise ValueError(f"{name} must lie in [0, 1], got {v!r}")
    if abs(P1 + P2 - 1) > 1e-9:
        raise ValueError(f"P1 + P2 must equal 1, got {P1 + P2!r}")
    domega = 2 * math.pi * abs(frequency_shift(p).dfc_abs)
    dt_c = math.pi * domega / p.omega_c**2
    chain = jump_chain(p, t_col)
    return CrossingShift(dt_c, dt_c * (P1 - P2), chain.dtheta_col_sq / 2)


def mean_field_spin(p: ExperimentalParams, x: float) -> tuple[float, float]:
    """Anti-parallel mean-field spin and the net force at displacement ``x``.

    Returns ``(<S_z>/S, F_x)`` with ``F_x = -k_c x - gamma hbar G <S_z>``.
    """
    sz_over_s = -p.G * x / math.sqrt(p.B1**2 + (p.G * x) ** 2)
    F_x = -p.k_c * x - p.gamma * HBAR * p.G * SPIN * sz_over_s
    return sz_over_s, F_x


@dataclass(frozen=True)
class EstimateReport:
    dfc_rel: float
    dfc_abs: float
    dkc: float
    dkc_simplified: float
    GA_over_B1: float
    fR_over_fc: float
    full_reversal: bool
    adiabatic: bool
    x_rms: float
    F_rms: float
    dfcT_rel: float
    X_q: float
    t_d: float
    A_RT: float
    dtheta0: float
    dt1: float
    D: float
    dtheta_col_sq: float
    P_jump: float
    t_jump: float
    dt_c: float
    dt_j: float
    dt_j_rel_change: float

    def to_dict(self) -> dict:
        return asdict(self)

    def format_table(self) -> str:
        units = {
            "dfc_abs": "Hz", "dkc": "N/m", "dkc_simplified": "N/m", "x_rms": "m",
            "F_rms": "N", "X_q": "m", "t_d": "s", "A_RT": "m", "dtheta0": "rad",
            "dt1": "s", "D": "rad^2/s", "dtheta_col_sq": "rad^2", "t_jump": "s",
            "dt_c": "s", "dt_j": "s",
        }
        rows = []
        width = max(len(k) for k in self.to_dict())
        for key, value in self.to_dict().items():
            text = str(value) if isinstance(value, bool) else f"{value:.6g}"
            rows.append(f"{key:<{width}}  {text:>14}  {units.get(key, '')}".rstrip())
        return "\n".join(rows)


def estimate_report(p: ExperimentalParams, *, t_col: float | None = None,
                    delta_x: float | None = None, P1: float = 1.0,
                    P2: float = 0.0) -> EstimateReport:
    """Evaluate every estimate for one parameter set."""
    fs = frequency_shift(p)
    win = adiabaticity_window(p)
    if not (win.full_reversal and win.adiabatic):
        warnings.warn("parameters outside the full adiabatic reversal window", stacklevel=2)
    th = thermal_noise(p)
    dec = collapse_decoherence(p, delta_x)
    chain = jump_chain(p, t_col)
    cs = crossing_shift_estimate(p, P1, P2, t_col)
    return EstimateReport(
        dfc_rel=fs.dfc_rel, dfc_abs=fs.dfc_abs, dkc=fs.dkc, dkc_simplified=fs.dkc_simplified,
        GA_over_B1=win.lower_ratio, fR_over_fc=win.upper_ratio,
        full_reversal=win.full_reversal, adiabatic=win.adiabatic,
        x_rms=th.x_rms, F_rms=th.F_rms, dfcT_rel=th.dfcT_rel,
        X_q=dec.X_q, t_d=dec.t_d,
        A_RT=chain.A_RT, dtheta0=chain.dtheta0, dt1=chain.dt1, D=chain.D,
        dtheta_col_sq=chain.dtheta_col_sq, P_jump=chain.P_jump, t_jump=chain.t_jump,
        dt_c=cs.dt_c, dt_j=cs.dt_j, dt_j_rel_change=cs.rel_change,
    )
