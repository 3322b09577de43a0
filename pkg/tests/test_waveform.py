"""Waveform reconstruction and statistics tests.

Closed-form expectations: the steady-state buck carries a 3.75 to 6.25 A
inductor triangle and a capacitor ripple of +-15.625 mV about the period
start voltage (extremes of the ripple quadratics at tau = d/2 and
tau = (1+d)/2).
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avgcell import SimConfig, parse_netlist, run
from avgcell.engine import CapacitorRecord, PeriodRecord, SimulationResult
from avgcell.cells import CellState, Mode
from avgcell.waveform import (
    EmptyWindow,
    NotApplicable,
    Segment,
    TopologyNotSupported,
    UnknownLabel,
    Waveform,
    capacitor_average_waveform,
    capacitor_waveform,
    inductor_waveform,
    ripple_amplitude,
    stats,
)

from conftest import BUCK, std_config


def single_period_result(circuit_text, cell_state, v_avg=5.0):
    """One-period simulation result with a hand-built cell state."""
    circuit = parse_netlist(circuit_text)
    config = std_config(1e-5)
    label = circuit.cells()[0].label
    record = PeriodRecord(
        index=0,
        t_start=0.0,
        node_voltages={1: 10.0, 2: v_avg},
        vdc_currents={},
        cells={label: cell_state},
        capacitors={"C1": CapacitorRecord(v_avg, 0.0)},
    )
    return SimulationResult(circuit, config, record, [record])


STEADY_STATE = CellState(
    iL0=3.75, iL1=6.25, iL2=3.75, mode=Mode.CCM, d_p=0.5,
    vL1=5.0, vL2=-5.0, iS_avg=2.5, iD_avg=2.5, vL_avg=0.0,
)


class TestInductorWaveform:
    def test_steady_state_triangle(self, buck_steady_run):
        wave = inductor_waveform(buck_steady_run, "SCN1")
        t0 = buck_steady_run.records[-1].t_start
        assert wave.value(t0) == pytest.approx(3.75, rel=1e-9)
        assert wave.value(t0 + 0.5e-5) == pytest.approx(6.25, rel=1e-9)
        assert wave.value(t0 + 1e-5) == pytest.approx(3.75, rel=1e-9)

    def test_dcm_period_has_zero_tail(self, dcm_run):
        record = dcm_run.records[-1]
        state = record.cells["SCD1"]
        assert state.mode is Mode.DCM
        wave = inductor_waveform(dcm_run, "SCD1")
        t0 = record.t_start
        ts = dcm_run.config.T_s
        t_zero = t0 + (0.5 + state.d_p) * ts
        assert wave.value(t0) == 0.0
        assert wave.value(t0 + 0.5 * ts) == pytest.approx(state.iL1, rel=1e-9)
        assert wave.value(t_zero) == pytest.approx(0.0, abs=1e-12)
        assert wave.value((t_zero + t0 + ts) / 2.0) == 0.0

    def test_zero_drive_period_is_constant(self):
        state = CellState(2.0, 2.0, 2.0, Mode.CCM, 0.5, 0.0, 0.0, 1.0, 1.0, 0.0)
        result = single_period_result(BUCK, state)
        wave = inductor_waveform(result, "SCN1")
        for t in (0.0, 3e-6, 7e-6, 1e-5):
            assert wave.value(t) == 2.0

    def test_unknown_label(self, buck_steady_run):
        with pytest.raises(UnknownLabel):
            inductor_waveform(buck_steady_run, "nope")

    def test_mean_consistency_is_exact(self, buck_diode_run):
        """Period mean of the reconstruction equals the trapezoid average of
        its breakpoints, conduction tail included."""
        wave = inductor_waveform(buck_diode_run, "SCD1")
        ts = buck_diode_run.config.T_s
        d = buck_diode_run.config.d
        for record in buck_diode_run.records[::37]:
            state = record.cells["SCD1"]
            expected = (
                d * (state.iL0 + state.iL1) / 2.0
                + state.d_p * (state.iL1 + state.iL2) / 2.0
            )
            got = stats(wave, record.t_start, record.t_start + ts).mean
            assert got == pytest.approx(expected, rel=1e-9, abs=1e-12)

    def test_continuity_at_every_joint(self, buck_diode_run):
        wave = inductor_waveform(buck_diode_run, "SCD1")
        _assert_continuous(wave)


class TestRippleAmplitude:
    def test_steady_state(self):
        result = single_period_result(BUCK, STEADY_STATE)
        model = ripple_amplitude(result.records[0], "SCN1")
        assert (model.dIL1, model.dIL2, model.dIL) == (1.25, 1.25, 1.25)

    def test_flat_current(self):
        state = CellState(2.0, 2.0, 2.0, Mode.CCM, 0.5, 0.0, 0.0, 1.0, 1.0, 0.0)
        result = single_period_result(BUCK, state)
        model = ripple_amplitude(result.records[0], "SCN1")
        assert (model.dIL1, model.dIL2, model.dIL) == (0.0, 0.0, 0.0)

    def test_transient_asymmetric_ripple(self):
        state = CellState(0.0, 2.5, 2.0, Mode.CCM, 0.5, 5.0, -1.0, 0.6, 1.1, 0.0)
        result = single_period_result(BUCK, state)
        model = ripple_amplitude(result.records[0], "SCN1")
        assert model.dIL1 == pytest.approx(1.25)
        assert model.dIL2 == pytest.approx(0.25)
        assert model.dIL == pytest.approx(0.75)

    def test_dcm_not_applicable(self, dcm_run):
        with pytest.raises(NotApplicable):
            ripple_amplitude(dcm_run.records[-1], "SCD1")


class TestCapacitorWaveform:
    def test_period_start_mid_and_end_equal_anchor(self):
        result = single_period_result(BUCK, STEADY_STATE)
        wave = capacitor_waveform(result, "C1")
        # d = 0.5 makes v_C(0) = v_avg exactly.
        assert wave.value(0.0) == pytest.approx(5.0, rel=1e-12)
        assert wave.value(0.5e-5) == pytest.approx(5.0, rel=1e-12)
        assert wave.value(1e-5) == pytest.approx(5.0, rel=1e-12)

    def test_ripple_extremes(self):
        result = single_period_result(BUCK, STEADY_STATE)
        wave = capacitor_waveform(result, "C1")
        # Extremes at tau = d/2 and (1+d)/2: -+ dIL d / (4 f_s C).
        assert wave.value(0.25e-5) == pytest.approx(5.0 - 0.015625, rel=1e-9)
        assert wave.value(0.75e-5) == pytest.approx(5.0 + 0.015625, rel=1e-9)
        s = stats(wave, 0.0, 1e-5)
        assert s.min == pytest.approx(5.0 - 0.015625, rel=1e-9)
        assert s.max == pytest.approx(5.0 + 0.015625, rel=1e-9)

    def test_extremes_match_dense_sampling(self):
        """Independent check of the analytic extremes by brute-force
        evaluation of the ripple expression."""
        result = single_period_result(BUCK, STEADY_STATE)
        wave = capacitor_waveform(result, "C1")
        ts = np.linspace(0.0, 1e-5, 20001)
        values = np.array([wave.value(t) for t in ts])
        s = stats(wave, 0.0, 1e-5)
        assert s.min == pytest.approx(values.min(), abs=1e-12)
        assert s.max == pytest.approx(values.max(), abs=1e-12)

    def test_period_mean_reproduces_average_exactly_at_steady_state(self):
        """The ripple integral cancels the period-start offset, so the
        reconstructed mean equals the averaged voltage analytically."""
        for d in (0.3, 0.5, 0.7):
            state = CellState(
                iL0=3.0, iL1=5.0, iL2=3.0, mode=Mode.CCM, d_p=1 - d,
                vL1=4.0, vL2=-4.0, iS_avg=2.0, iD_avg=2.0, vL_avg=0.0,
            )
            circuit = parse_netlist(BUCK)
            config = SimConfig(d, 100e3, 1e-5)
            label = "SCN1"
            record = PeriodRecord(0, 0.0, {1: 10.0, 2: 5.0}, {},
                                  {label: state},
                                  {"C1": CapacitorRecord(5.0, 0.0)})
            result = SimulationResult(circuit, config, record, [record])
            wave = capacitor_waveform(result, "C1")
            mean = stats(wave, 0.0, 1e-5).mean
            assert mean == pytest.approx(5.0, rel=1e-12)

    def test_period_mean_matches_average_at_convergence(self, buck_long_run):
        wave = capacitor_waveform(buck_long_run, "C1")
        ts = buck_long_run.config.T_s
        for record in buck_long_run.records[-50:]:
            mean = stats(wave, record.t_start, record.t_start + ts).mean
            assert mean == pytest.approx(record.capacitors["C1"].v, rel=1e-3)

    def test_period_mean_identity_through_transient(self, buck_run):
        """The baseline interpolation makes each period mean exactly the
        averaged value plus half the per-period anchor change, so the mean
        converges to the averaged trace as the run settles."""
        wave = capacitor_waveform(buck_run, "C1")
        config = buck_run.config
        ts = config.T_s
        k = (2.0 * config.d - 1.0) / (6.0 * config.f_s * 1e-4)
        records = buck_run.records
        for current, following in list(zip(records[:-1], records[1:]))[::41]:
            v_cur = current.capacitors["C1"].v
            v_nxt = following.capacitors["C1"].v
            off_cur = k * ripple_amplitude(current, "SCN1").dIL
            off_nxt = k * ripple_amplitude(following, "SCN1").dIL
            expected = v_cur + (v_nxt - v_cur + off_nxt - off_cur) / 2.0
            mean = stats(wave, current.t_start, current.t_start + ts).mean
            assert mean == pytest.approx(expected, rel=1e-9, abs=1e-12)

    def test_continuity_across_mode_changes(self, buck_diode_run):
        _assert_continuous(capacitor_waveform(buck_diode_run, "C1"))

    def test_dcm_periods_fall_back_to_interpolated_average(self, dcm_run):
        wave = capacitor_waveform(dcm_run, "C1")
        record = dcm_run.records[-2]
        ts = dcm_run.config.T_s
        expected = (record.capacitors["C1"].v
                    + dcm_run.records[-1].capacitors["C1"].v) / 2.0
        assert wave.value(record.t_start + ts / 2.0) == pytest.approx(
            expected, rel=1e-9
        )

    def test_flyback_topology_not_supported(self, flyback_run):
        with pytest.raises(TopologyNotSupported):
            capacitor_waveform(flyback_run, "C1")
        wave = capacitor_average_waveform(flyback_run, "C1")
        assert wave.value(flyback_run.records[-1].t_start) == pytest.approx(
            20.0, rel=0.02
        )

    def test_capacitor_off_the_output_not_supported(self):
        text = BUCK + "C 2 1 2 1e-6 0\n"
        result = run(parse_netlist(text), std_config(1e-4))
        with pytest.raises(TopologyNotSupported):
            capacitor_waveform(result, "C2")

    def test_unknown_label(self, buck_run):
        with pytest.raises(UnknownLabel):
            capacitor_waveform(buck_run, "C9")


class TestStats:
    def test_constant_segment(self):
        wave = Waveform("x", "V", [Segment(0.0, 1.0, 5.0)])
        s = stats(wave, 0.0, 1.0)
        assert (s.mean, s.min, s.max, s.rms) == (5.0, 5.0, 5.0, 5.0)

    def test_symmetric_triangle_closed_form(self, buck_steady_run):
        record = buck_steady_run.records[-1]
        wave = inductor_waveform(buck_steady_run, "SCN1")
        s = stats(wave, record.t_start, record.t_start + 1e-5)
        assert s.mean == pytest.approx(5.0, rel=1e-9)
        assert s.min == pytest.approx(3.75, rel=1e-9)
        assert s.max == pytest.approx(6.25, rel=1e-9)
        assert s.rms == pytest.approx(math.sqrt(25.0 + 1.25**2 / 3.0), rel=1e-9)

    def test_steady_state_output_window(self, buck_run):
        wave = capacitor_waveform(buck_run, "C1")
        s = stats(wave, 4.5e-3, 5e-3)
        assert s.mean == pytest.approx(5.0, rel=1e-3)

    def test_window_outside_span(self):
        wave = Waveform("x", "V", [Segment(0.0, 1.0, 5.0)])
        with pytest.raises(EmptyWindow):
            stats(wave, 2.0, 3.0)
        with pytest.raises(EmptyWindow):
            stats(wave, 0.5, 0.5)


def _assert_continuous(wave, rtol=1e-9):
    for left, right in zip(wave.segments, wave.segments[1:]):
        a = left.value_at(left.t1)
        b = right.value_at(right.t0)
        assert abs(a - b) <= rtol * max(1.0, abs(a), abs(b))


_seg_values = st.lists(
    st.tuples(
        st.floats(-10, 10, allow_nan=False),
        st.floats(-10, 10, allow_nan=False),
        st.floats(-10, 10, allow_nan=False),
    ),
    min_size=1,
    max_size=6,
)


@settings(max_examples=200, deadline=None)
@given(_seg_values)
def test_stats_invariants_on_random_waveforms(coeff_list):
    segments = []
    t = 0.0
    for c0, c1, c2 in coeff_list:
        segments.append(Segment(t, t + 0.5, c0, c1, c2))
        t += 0.5
    wave = Waveform("x", "?", segments)
    s = stats(wave, 0.0, t)
    assert s.min <= s.mean + 1e-12
    assert s.mean <= s.max + 1e-12
    assert s.rms + 1e-12 >= abs(s.mean)
