"""Symbolic complex-operation counts, iteration upper bounds, and the CRD metric.

Only complex multiplications and divisions are counted. The rKA rows charge
Ms multiplications per inner iteration plus the schedule setup (2*Ms per
active user for the power schedule's norm precompute, a flat Ms for the
uniform and active-antennas schedules); their division cells are zero. The
iteration upper bounds are the T values at which the rKA combining cost
equals the RZF cost with divisions included, so average iteration counts
below the bound translate into a positive computational relaxation degree.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigurationError
from .kaczmarz import RkaStats, ScheduleMode


class Scheme(str, Enum):
    ZF = "zf"
    RZF = "rzf"
    RKA_POWER = "rka_power"
    RKA_UNIFORM = "rka_uniform"
    RKA_ACTIVE_ANTENNAS = "rka_active_antennas"


RKA_SCHEMES = (Scheme.RKA_POWER, Scheme.RKA_UNIFORM, Scheme.RKA_ACTIVE_ANTENNAS)

CSV_HEADER = ("scheme", "S", "Ms", "Kbar", "T", "tau_ul",
              "combining_mults", "combining_divs", "reception_mults", "total")


@dataclass(frozen=True)
class ComplexityReport:
    scheme: Scheme
    S: int
    Ms: int
    Kbar: float
    T: float | None
    tau_ul: float
    combining_mults: float
    combining_divs: float
    reception_mults: float

    @property
    def combining_total(self) -> float:
        return self.combining_mults + self.combining_divs

    @property
    def total(self) -> float:
        return self.combining_mults + self.combining_divs + self.reception_mults

    def csv_row(self) -> tuple:
        return (self.scheme.value, self.S, self.Ms, self.Kbar,
                "" if self.T is None else self.T, self.tau_ul,
                self.combining_mults, self.combining_divs,
                self.reception_mults, self.total)


def table1_counts(scheme: Scheme, S: int, Ms: int, Kbar: float,
                  T: float | None = None, tau_ul: float = 0.0) -> ComplexityReport:
    """Per-coherence-block operation counts for one combining scheme.

    Kbar may be fractional (trial averages). T is required for the rKA
    schemes and is the total iteration count executed per subarray.
    """
    scheme = Scheme(scheme)
    if S <= 0 or Ms <= 0 or Kbar <= 0:
        raise ConfigurationError("S, Ms and Kbar must be positive")
    if tau_ul < 0:
        raise ConfigurationError("tau_ul must be nonnegative")
    divs = 0.0
    if scheme == Scheme.ZF:
        mults = S * (1.5 * Kbar * Kbar * Ms + 0.5 * Kbar * Ms + (Kbar ** 3 - Kbar) / 3.0)
        divs = float(S * Kbar)
    elif scheme == Scheme.RZF:
        mults = S * (1.5 * Kbar * Kbar * Ms + 1.5 * Kbar * Ms + (Kbar ** 3 - Kbar) / 3.0)
        divs = float(S * Kbar)
    else:
        if T is None:
            raise ConfigurationError(f"iteration count T required for scheme {scheme.value}")
        if T <= 0:
            raise ConfigurationError("T must be positive")
        if scheme == Scheme.RKA_POWER:
            mults = S * (Ms * T + 2.0 * Ms * Kbar)
        else:
            mults = S * (Ms * T + Ms)
    reception = tau_ul * S * Ms * Kbar
    return ComplexityReport(scheme=scheme, S=S, Ms=Ms, Kbar=float(Kbar),
                            T=None if scheme in (Scheme.ZF, Scheme.RZF) else float(T),
                            tau_ul=float(tau_ul), combining_mults=float(mults),
                            combining_divs=divs, reception_mults=float(reception))


def iteration_upper_bound(mode: ScheduleMode | Scheme, Ms: float, Kbar: float) -> float:
    """Largest useful iteration count: above it, rKA costs more than RZF.

    Derived by equating the rKA combining multiplications with the RZF
    combining cost including its divisions.
    """
    if Ms <= 0 or Kbar <= 0:
        raise ConfigurationError("Ms and Kbar must be positive")
    mode = _as_schedule_mode(mode)
    base = Kbar ** 3 / (3.0 * Ms) + 2.0 * Kbar / (3.0 * Ms) + 1.5 * Kbar * Kbar
    if mode == ScheduleMode.POWER:
        return base - 0.5 * Kbar
    return base + 1.5 * Kbar - 1.0


def _as_schedule_mode(mode) -> ScheduleMode:
    if isinstance(mode, Scheme):
        return {Scheme.RKA_POWER: ScheduleMode.POWER,
                Scheme.RKA_UNIFORM: ScheduleMode.UNIFORM,
                Scheme.RKA_ACTIVE_ANTENNAS: ScheduleMode.ACTIVE_ANTENNAS}[mode]
    return ScheduleMode(mode)


def scheme_for_schedule(mode: ScheduleMode) -> Scheme:
    return {ScheduleMode.POWER: Scheme.RKA_POWER,
            ScheduleMode.UNIFORM: Scheme.RKA_UNIFORM,
            ScheduleMode.ACTIVE_ANTENNAS: Scheme.RKA_ACTIVE_ANTENNAS}[ScheduleMode(mode)]


def crd(T_bar: float, T_up: float) -> float:
    """Computational relaxation degree: (T_up - T_bar)/T_up, floored at 0."""
    if T_up <= 0:
        raise ConfigurationError("T_up must be positive")
    if T_bar >= T_up:
        return 0.0
    return (T_up - T_bar) / T_up


def measured_op_counter(run: RkaStats | list | tuple) -> int:
    """Total combining multiplications recorded by instrumented rKA runs.

    Accepts one per-subarray RkaStats or an iterable covering several
    subarrays. Equals Ms*T + setup per subarray exactly, T the total number
    of inner iterations executed there.
    """
    stats = [run] if isinstance(run, RkaStats) else list(run)
    if not stats or any(s.iterations == 0 for s in stats):
        raise ConfigurationError("instrumentation enabled but no iterations recorded")
    return int(sum(s.combining_mults for s in stats))


def predicted_rka_mults(mode: ScheduleMode, Ms: int, iterations_total: int,
                        n_active: int) -> int:
    """Symbolic model matching the instrumented counter, for one subarray."""
    setup = 2 * Ms * n_active if _as_schedule_mode(mode) == ScheduleMode.POWER else Ms
    return Ms * iterations_total + setup
