"""Averaged constitutive model of the three-terminal switching cell.

A cell lumps the controlled switch, the diode (or second switch) and the
inductor of a PWM converter behind three terminals: active (a), passive (p)
and common (c).  Within one switching period of length T_s the inductor sees
a constant voltage vL1 while the switch conducts (duty d) and vL2 while the
diode conducts (duty d_p), so the current is piecewise linear:

    iL1 = iL0 + (vL1 / L) d T_s
    iL2 = iL1 + (vL2 / L) d_p T_s

with period averages

    iS_avg = d iL0 + (vL1 / 2L) d^2 T_s
    iD_avg = d_p iL0 + (vL1 / L) d_p d T_s + (vL2 / 2L) d_p^2 T_s
    vL_avg = d vL1 + d_p vL2

In continuous conduction d_p = 1 - d.  A diode cell enters discontinuous
conduction when d + d2 < 1, where d2 = -(vL1 / vL2) d is the duty at which
a zero-starting current returns to zero; the current then rests at zero for
the remainder of the period.  Flyback cells carry a transformer: the
magnetizing inductance takes the place of L, the secondary current is the
magnetizing current reflected by 1/n, and the drive voltages become
vL1 = v_a - v_p and vL2 = -(v_c - v_p) / n.
"""

import math
from dataclasses import dataclass
from enum import Enum

from .errors import AvgcellError

DUTY_TOL = 1e-12


class Mode(Enum):
    CCM = "CCM"
    DCM = "DCM"


class Rectifier(Enum):
    SYNCHRONOUS = "synchronous"
    DIODE = "diode"


class DegenerateDuty(AvgcellError):
    """Both conduction intervals vanish; end current is undefined."""


@dataclass(frozen=True)
class CellParams:
    """Cell constants: inductance (magnetizing inductance for flyback),
    turns ratio and rectifier type."""

    L: float
    n: float = 1.0
    rectifier: Rectifier = Rectifier.SYNCHRONOUS
    flyback: bool = False

    def __post_init__(self):
        if self.L <= 0:
            raise ValueError("inductance must be positive")
        if self.n <= 0:
            raise ValueError("turns ratio must be positive")
        if not self.flyback and self.n != 1.0:
            raise ValueError("basic cells have unit turns ratio")


@dataclass(frozen=True)
class PortVoltages:
    v_a: float
    v_p: float
    v_c: float


@dataclass
class CellState:
    """Per-period cell solution: boundary currents, conduction mode and
    the averaged device currents."""

    iL0: float
    iL1: float
    iL2: float
    mode: Mode
    d_p: float
    vL1: float
    vL2: float
    iS_avg: float
    iD_avg: float
    vL_avg: float


def current_tol(reference=0.0):
    """Absolute tolerance used to treat an inductor current as zero."""
    return 1e-12 * max(1.0, abs(reference))


def drive_terms(params):
    """Coefficient maps of vL1 and vL2 over the terminal voltages.

    Returned as two dicts keyed by 'a'/'p'/'c'; missing keys mean zero.
    These same coefficients appear in the cell's MNA constraint rows.
    """
    if params.flyback:
        return {"a": 1.0, "p": -1.0}, {"p": 1.0 / params.n, "c": -1.0 / params.n}
    return {"a": 1.0, "c": -1.0}, {"p": 1.0, "c": -1.0}


def current_paths(params):
    """Terminal pairs the averaged currents circulate through, as
    (from, to) for iS_avg and iD_avg."""
    if params.flyback:
        return ("a", "p"), ("p", "c")
    return ("a", "c"), ("p", "c")


def drive_voltages(ports, params):
    """Inductor voltage during the switch interval and the diode interval."""
    values = {"a": ports.v_a, "p": ports.v_p, "c": ports.v_c}
    a_map, b_map = drive_terms(params)
    vL1 = sum(coeff * values[t] for t, coeff in a_map.items())
    vL2 = sum(coeff * values[t] for t, coeff in b_map.items())
    return vL1, vL2


def compute_d2(vL1, vL2, d):
    """Diode-conduction duty that returns a zero-starting current to zero.

    Returns +inf when vL2 >= 0: the current never decays, so continuous
    conduction is forced.
    """
    if vL2 >= 0.0:
        return math.inf
    return -(vL1 / vL2) * d


def resolve_mode(d, d2, rectifier):
    """Classify the period and return (mode, d_p).

    Synchronous rectification always stays continuous with d_p = 1 - d.
    A diode cell is continuous when d + d2 >= 1 (boundary counts as CCM),
    discontinuous otherwise with d_p = d2.
    """
    if rectifier is Rectifier.SYNCHRONOUS or d + d2 >= 1.0:
        return Mode.CCM, 1.0 - d
    # Negative d2 means the current never rises; the diode idles.
    return Mode.DCM, max(d2, 0.0)


def avg_switch_current(iL0, vL1, d, params, T_s):
    """Period-average switch current (primary-side average for flyback)."""
    return d * iL0 + (vL1 / (2.0 * params.L)) * d * d * T_s


def avg_diode_current(iL0, vL1, vL2, d, d_p, params, T_s):
    """Period-average diode current; reflected by 1/n for flyback cells."""
    raw = (
        d_p * iL0
        + (vL1 / params.L) * d_p * d * T_s
        + (vL2 / (2.0 * params.L)) * d_p * d_p * T_s
    )
    return raw / params.n


def advance_inductor(iL0, vL1, vL2, d, d_p, params, T_s):
    """Boundary currents (iL1, iL2) from the solved drive voltages.

    An end current within :func:`current_tol` of zero is snapped to exactly
    zero, which pins the discontinuous-conduction rest level.
    """
    iL1 = iL0 + (vL1 / params.L) * d * T_s
    iL2 = iL1 + (vL2 / params.L) * d_p * T_s
    if abs(iL2) < current_tol(iL1):
        iL2 = 0.0
    return iL1, iL2


def end_current_from_averages(iS_avg, iD_avg, iL0, d, d_p):
    """Recover the end-of-period current from the averaged device currents.

    For flyback cells pass the secondary average multiplied back by n.
    General case:  iL2 = 2 iD_avg / d_p - 2 iS_avg / d + iL0.
    When one interval is absent the corresponding term drops and the other
    average alone determines the end current.
    """
    if d < DUTY_TOL and d_p < DUTY_TOL:
        raise DegenerateDuty("both conduction intervals vanish")
    if d_p < DUTY_TOL:
        # No diode interval: the period ends where the switch interval ends.
        return 2.0 * iS_avg / d - iL0
    if d < DUTY_TOL:
        return 2.0 * iD_avg / d_p - iL0
    return 2.0 * iD_avg / d_p - 2.0 * iS_avg / d + iL0


def avg_inductor_voltage(vL1, vL2, d, d_p):
    """Period-average inductor voltage d vL1 + d_p vL2."""
    return d * vL1 + d_p * vL2


def avg_inductor_current(state, d):
    """Period-average inductor current of a solved cell state."""
    return (
        d * (state.iL0 + state.iL1) / 2.0
        + state.d_p * (state.iL1 + state.iL2) / 2.0
    )
