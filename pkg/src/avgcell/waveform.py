"""Instantaneous waveform reconstruction from averaged period records.

Inductor currents are piecewise linear inside each period: the breakpoints
(0, iL0), (d T_s, iL1), (T_s, iL2) in continuous conduction gain an extra
zero at (d + d_p) T_s in discontinuous conduction, after which the current
rests at zero.

For a capacitor sitting directly across a basic cell's common and passive
terminals (the buck-type output stage) the voltage ripple follows from
integrating the inductor current ripple.  With tau = t / T_s and the
symmetric ripple amplitude di_L the in-period deviation is

    (di_L / (f_s C)) (tau^2 / d - tau)                 0 <= tau <= d
    (di_L / (f_s C)) (tau - d)(1 - tau) / (1 - d)      d <= tau <= 1

about the period-start voltage

    v_C(0) = v_avg + (2 d - 1) di_L / (6 f_s C)

The per-period start voltages are anchored at the period boundaries and
linearly interpolated, so the reconstruction is continuous everywhere and
its period mean reproduces the averaged value exactly in steady state.
Periods in discontinuous conduction, and capacitors in any other topology,
fall back to the interpolated averaged trace without ripple.
"""

import math
from bisect import bisect_right
from dataclasses import dataclass

from .cells import Mode
from .errors import AvgcellError


class UnknownLabel(AvgcellError):
    pass


class NotApplicable(AvgcellError):
    """Ripple amplitudes are defined for continuous-conduction periods only."""


class TopologyNotSupported(AvgcellError):
    """No ripple model exists for this capacitor placement."""


class EmptyWindow(AvgcellError):
    pass


@dataclass(frozen=True)
class Segment:
    """Polynomial piece c0 + c1 s + c2 s^2 over local time s = t - t0."""

    t0: float
    t1: float
    c0: float
    c1: float = 0.0
    c2: float = 0.0

    def value_at(self, t):
        s = t - self.t0
        return self.c0 + self.c1 * s + self.c2 * s * s


@dataclass
class Waveform:
    """Contiguous piecewise-polynomial time series."""

    name: str
    unit: str
    segments: list

    @property
    def span(self):
        return self.segments[0].t0, self.segments[-1].t1

    def value(self, t):
        starts = self.__dict__.get("_starts")
        if starts is None or len(starts) != len(self.segments):
            starts = [s.t0 for s in self.segments]
            self.__dict__["_starts"] = starts
        i = bisect_right(starts, t) - 1
        i = min(max(i, 0), len(self.segments) - 1)
        return self.segments[i].value_at(t)

    def breakpoints(self):
        return [s.t0 for s in self.segments] + [self.segments[-1].t1]


@dataclass(frozen=True)
class RippleModel:
    """Half-amplitudes of the in-period inductor current ripple."""

    dIL1: float
    dIL2: float
    dIL: float


@dataclass(frozen=True)
class SignalStats:
    mean: float
    min: float
    max: float
    rms: float


def inductor_waveform(result, cell_label):
    """Piecewise-linear inductor current of one cell over the whole run."""
    _find_cell(result.circuit, cell_label)
    d = result.config.d
    T_s = result.config.T_s
    segments = []
    for record in result.records:
        state = record.cells[cell_label]
        t0 = record.t_start
        t_mid = t0 + d * T_s
        t_end = t0 + T_s
        if state.mode is Mode.CCM:
            points = [(t0, state.iL0), (t_mid, state.iL1), (t_end, state.iL2)]
        else:
            t_zero = t0 + (d + state.d_p) * T_s
            points = [
                (t0, state.iL0),
                (t_mid, state.iL1),
                (t_zero, 0.0),
                (t_end, 0.0),
            ]
        for (ta, ya), (tb, yb) in zip(points, points[1:]):
            if tb > ta:
                segments.append(Segment(ta, tb, ya, (yb - ya) / (tb - ta)))
    return Waveform(f"iL({cell_label})", "A", segments)


def ripple_amplitude(record, cell_label):
    """Ripple half-amplitudes of one continuous-conduction period."""
    try:
        state = record.cells[cell_label]
    except KeyError:
        raise UnknownLabel(f"no cell {cell_label!r} in record") from None
    if state.mode is not Mode.CCM:
        raise NotApplicable(
            "ripple amplitudes are defined for continuous conduction only"
        )
    return _ripple(state)


def _ripple(state):
    dIL1 = (state.iL1 - state.iL0) / 2.0
    dIL2 = (state.iL1 - state.iL2) / 2.0
    return RippleModel(dIL1, dIL2, (dIL1 + dIL2) / 2.0)


def capacitor_waveform(result, cap_label):
    """Capacitor voltage with ripple superimposed on the averaged trace.

    Requires the buck-type output placement: the capacitor directly across
    a basic cell's common and passive terminals, so the capacitor current
    ripple equals the inductor current ripple.  Other placements raise
    :class:`TopologyNotSupported`; use :func:`capacitor_average_waveform`
    for the ripple-free reconstruction.
    """
    cap = _find_capacitor(result.circuit, cap_label)
    cell = _output_cell_for(result.circuit, cap)
    if cell is None:
        raise TopologyNotSupported(
            f"capacitor {cap_label!r} is not across a basic cell's "
            "common and passive terminals"
        )
    return _build_capacitor_waveform(result, cap, cell)


def capacitor_average_waveform(result, cap_label):
    """Capacitor voltage as the interpolated averaged trace, no ripple."""
    cap = _find_capacitor(result.circuit, cap_label)
    return _build_capacitor_waveform(result, cap, None)


def _build_capacitor_waveform(result, cap, cell):
    d = result.config.d
    f_s = result.config.f_s
    T_s = result.config.T_s
    C = cap.value
    records = result.records

    anchors = []
    ripples = []
    for record in records:
        v_avg = record.capacitors[cap.label].v
        state = record.cells[cell.label] if cell is not None else None
        if state is not None and state.mode is Mode.CCM:
            dIL = _ripple(state).dIL
            anchors.append(v_avg + (2.0 * d - 1.0) * dIL / (6.0 * f_s * C))
            ripples.append(dIL)
        else:
            anchors.append(v_avg)
            ripples.append(None)
    anchors.append(anchors[-1])

    segments = []
    for n, record in enumerate(records):
        t0 = record.t_start
        a0, a1 = anchors[n], anchors[n + 1]
        slope = (a1 - a0) / T_s
        dIL = ripples[n]
        if dIL is None:
            segments.append(Segment(t0, t0 + T_s, a0, slope))
            continue
        k = dIL / (f_s * C)
        t_mid = t0 + d * T_s
        segments.append(
            Segment(t0, t_mid, a0, slope - k / T_s, k / (d * T_s * T_s))
        )
        if T_s - d * T_s > 0.0:
            segments.append(
                Segment(
                    t_mid,
                    t0 + T_s,
                    a0 + slope * d * T_s,
                    slope + k / T_s,
                    -k / (T_s * T_s * (1.0 - d)),
                )
            )
    name = _capacitor_signal_name(cap)
    return Waveform(name, "V", segments)


def stats(waveform, t_from, t_to):
    """Exact mean, min, max and RMS of a waveform over a window.

    Means come from polynomial integration per segment; extremes from the
    segment endpoints and interior critical points of the quadratics.
    """
    lo, hi = waveform.span
    if not (t_from < t_to) or t_to <= lo or t_from >= hi:
        raise EmptyWindow(f"window [{t_from}, {t_to}] outside waveform span")
    t_from = max(t_from, lo)
    t_to = min(t_to, hi)

    total = 0.0
    total_sq = 0.0
    v_min = math.inf
    v_max = -math.inf
    for seg in waveform.segments:
        a = max(seg.t0, t_from) - seg.t0
        b = min(seg.t1, t_to) - seg.t0
        if b <= a:
            continue
        c0, c1, c2 = seg.c0, seg.c1, seg.c2
        total += _poly_integral((c0, c1, c2), a, b)
        total_sq += _poly_integral(
            (c0 * c0, 2 * c0 * c1, c1 * c1 + 2 * c0 * c2, 2 * c1 * c2, c2 * c2),
            a,
            b,
        )
        candidates = [a, b]
        if c2 != 0.0:
            s_star = -c1 / (2.0 * c2)
            if a < s_star < b:
                candidates.append(s_star)
        for s in candidates:
            v = c0 + c1 * s + c2 * s * s
            v_min = min(v_min, v)
            v_max = max(v_max, v)

    width = t_to - t_from
    mean = total / width
    return SignalStats(mean, v_min, v_max, math.sqrt(max(total_sq / width, 0.0)))


def _poly_integral(coeffs, a, b):
    acc = 0.0
    pa, pb = a, b
    for k, c in enumerate(coeffs):
        acc += c * (pb - pa) / (k + 1)
        pa *= a
        pb *= b
    return acc


def _find_cell(circuit, label):
    for e in circuit.cells():
        if e.label == label:
            return e
    raise UnknownLabel(f"no cell {label!r} in circuit")


def _find_capacitor(circuit, label):
    for e in circuit.capacitors():
        if e.label == label:
            return e
    raise UnknownLabel(f"no capacitor {label!r} in circuit")


def _output_cell_for(circuit, cap):
    """Basic cell whose common and passive terminals the capacitor spans."""
    cap_nodes = set(cap.nodes)
    for e in circuit.cells():
        if e.is_flyback:
            continue
        if cap_nodes == {e.nodes[1], e.nodes[2]}:
            return e
    return None


def _capacitor_signal_name(cap):
    n1, n2 = cap.nodes
    if n2 == 0:
        return f"v({n1})"
    if n1 == 0:
        return f"v({n2})"
    return f"v({n1},{n2})"
