"""Period-stepping simulation loop for the averaged converter model.

One step covers exactly one switching period.  Before each period the
conduction mode of every diode cell is predicted from the previous period's
port voltages and the carried-over inductor current; the linear system is
then assembled and solved, boundary currents are recovered from the solved
drive voltages, and the capacitor companion sources advance to the next
period.  The LU factorization is reused for as long as every cell keeps the
same (mode, d_p); in continuous conduction with fixed duty that is the whole
run.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import cells as _cells
from .errors import AvgcellError
from .mna import (
    CellPrediction,
    SingularSystem,
    assemble_system,
    build_layout,
    check_residual,
    lu_factor,
    lu_solve,
)
from .netlist import IDC, VDC, cell_params, validate


class InvalidConfig(AvgcellError):
    pass


class InvalidCircuit(AvgcellError):
    def __init__(self, message, diagnostics=()):
        self.diagnostics = list(diagnostics)
        super().__init__(message)


@dataclass(frozen=True)
class SimConfig:
    """Run parameters: duty ratio, switching frequency, transient length.

    ``dcm_refine`` adds one re-solve per period with d2 recomputed from the
    just-solved voltages, tightening the discontinuous-conduction boundary
    beyond the default one-period prediction lag.
    """

    d: float
    f_s: float
    t_end: float
    dcm_refine: bool = False

    def __post_init__(self):
        if not 0.0 < self.d <= 1.0:
            raise InvalidConfig(f"duty ratio {self.d} outside (0, 1]")
        if self.f_s <= 0.0:
            raise InvalidConfig(f"switching frequency {self.f_s} must be positive")
        if not math.isfinite(self.t_end) or self.t_end < 0.0:
            raise InvalidConfig(f"transient duration {self.t_end} must be non-negative")

    @property
    def T_s(self):
        return 1.0 / self.f_s

    @property
    def n_periods(self):
        return int(round(self.t_end * self.f_s))


@dataclass
class CapacitorRecord:
    """Averaged capacitor voltage of the period and the companion source
    carried into the next period."""

    v: float
    i0_next: float


@dataclass
class PeriodRecord:
    """Full averaged solution of one switching period."""

    index: int
    t_start: float
    node_voltages: dict
    vdc_currents: dict
    cells: dict
    capacitors: dict


@dataclass
class SimulationResult:
    circuit: object
    config: SimConfig
    bootstrap: PeriodRecord
    records: list

    def times(self):
        return [r.t_start for r in self.records]

    def node_voltage(self, node):
        return [r.node_voltages[node] for r in self.records]

    def cell_states(self, label):
        return [r.cells[label] for r in self.records]

    def capacitor_voltage(self, label):
        return [r.capacitors[label].v for r in self.records]


def run(circuit, config):
    """Simulate ``config.n_periods`` switching periods of the circuit."""
    n_periods = config.n_periods
    if n_periods < 1:
        raise InvalidConfig("run covers no complete switching period")
    stepper = _Stepper(circuit, config)
    records = []
    previous = stepper.bootstrap
    for n in range(n_periods):
        previous = stepper.step(n, previous)
        records.append(previous)
    return SimulationResult(circuit, config, stepper.bootstrap, records)


def step(circuit, config, previous_record):
    """Advance one switching period from an existing record.

    ``run`` uses the same machinery with factorization reuse; this entry
    point rebuilds the system and is meant for inspection and testing.
    """
    stepper = _Stepper(circuit, config)
    return stepper.step(previous_record.index + 1, previous_record)


def predict_mode(cell, previous_record, d):
    """Predict (mode, d_p) for the period following ``previous_record``."""
    params = cell_params(cell)
    iL0 = previous_record.cells[cell.label].iL2
    return _predict(params, _ports(cell, previous_record.node_voltages), iL0, d)


def _predict(params, ports, iL0, d):
    if params.rectifier is _cells.Rectifier.SYNCHRONOUS:
        return _cells.Mode.CCM, 1.0 - d
    # A positive starting current keeps the continuous-conduction geometry
    # regardless of d2: the current must reach zero before the cell can rest.
    if iL0 > _cells.current_tol(iL0):
        return _cells.Mode.CCM, 1.0 - d
    vL1, vL2 = _cells.drive_voltages(ports, params)
    d2 = _cells.compute_d2(vL1, vL2, d)
    return _cells.resolve_mode(d, d2, params.rectifier)


def _ports(cell, node_voltages):
    v = [node_voltages.get(n, 0.0) for n in cell.nodes]
    return _cells.PortVoltages(v[0], v[1], v[2])


class _Stepper:
    def __init__(self, circuit, config):
        diagnostics = validate(circuit)
        if diagnostics:
            raise InvalidCircuit(
                "; ".join(str(d) for d in diagnostics), diagnostics
            )
        if not circuit.cells():
            raise InvalidCircuit("no switching cell in circuit")
        self.circuit = circuit
        self.config = config
        self.cells = [(e, cell_params(e)) for e in circuit.cells()]
        self.caps = [
            (e, 2.0 * e.value / config.T_s) for e in circuit.capacitors()
        ]
        self._cache_key = None
        self._system = None
        self._factors = None
        self._a_norm = None
        self._prepare_z_template()
        self.bootstrap = self._bootstrap()

    def _prepare_z_template(self):
        layout = build_layout(self.circuit).layout
        z = np.zeros(layout.order)
        for e in self.circuit.elements:
            if e.kind == VDC:
                z[layout.vdc_row[e.label]] += e.value
            elif e.kind == IDC:
                r1, r2 = layout.row_of(e.nodes[0]), layout.row_of(e.nodes[1])
                if r1 is not None:
                    z[r1] -= e.value
                if r2 is not None:
                    z[r2] += e.value
        self._z_static = z
        self._cap_rows = [
            (e.label, layout.row_of(e.nodes[0]), layout.row_of(e.nodes[1]))
            for e, _ in self.caps
        ]
        self._cell_rows = [
            (e.label, *layout.cell_rows[e.label], e.turns) for e, _ in self.cells
        ]

    def _assemble(self, predictions, cap_sources):
        key = tuple(
            (predictions[e.label].mode, predictions[e.label].d_p)
            for e, _ in self.cells
        )
        if key != self._cache_key:
            self._system = assemble_system(
                self.circuit, self.config.d, self.config.T_s, predictions, cap_sources
            )
            self._factors = lu_factor(self._system.A)
            self._a_norm = float(np.abs(self._system.A).sum(axis=1).max())
            self._cache_key = key
        return self._system

    def _build_z(self, system, predictions, cap_sources):
        d = self.config.d
        z = self._z_static.copy()
        for label, r1, r2 in self._cap_rows:
            i0 = cap_sources[label]
            if r1 is not None:
                z[r1] += i0
            if r2 is not None:
                z[r2] -= i0
        for label, rs, rd, turns in self._cell_rows:
            pred = predictions[label]
            z[rs] += d * pred.iL0
            z[rd] += pred.d_p * pred.iL0 / turns
        return z

    def _bootstrap(self):
        """Preliminary continuous-conduction solve that provides the port
        voltages the first real period's mode prediction needs."""
        d = self.config.d
        predictions = {
            e.label: CellPrediction(_cells.Mode.CCM, 1.0 - d, e.initial)
            for e, _ in self.cells
        }
        # Zero capacitor current assumed at t = 0.
        cap_sources = {e.label: g * e.initial for e, g in self.caps}
        system = self._assemble(predictions, cap_sources)
        z = self._build_z(system, predictions, cap_sources)
        x = lu_solve(self._factors, z)
        check_residual(system.A, x, z, self._a_norm)

        layout = system.layout
        node_voltages = {n: float(x[layout.node_row[n]]) for n in layout.node_ids}
        vdc_currents = {
            label: float(x[row]) for label, row in layout.vdc_row.items()
        }
        cell_states = {}
        for e, params in self.cells:
            rs, rd = layout.cell_rows[e.label]
            vL1, vL2 = _cells.drive_voltages(_ports(e, node_voltages), params)
            cell_states[e.label] = _cells.CellState(
                iL0=e.initial,
                iL1=e.initial,
                iL2=e.initial,
                mode=_cells.Mode.CCM,
                d_p=1.0 - d,
                vL1=vL1,
                vL2=vL2,
                iS_avg=float(x[rs]),
                iD_avg=float(x[rd]),
                vL_avg=_cells.avg_inductor_voltage(vL1, vL2, d, 1.0 - d),
            )
        capacitors = {}
        for e, g in self.caps:
            r1, r2 = layout.row_of(e.nodes[0]), layout.row_of(e.nodes[1])
            v = (x[r1] if r1 is not None else 0.0) - (
                x[r2] if r2 is not None else 0.0
            )
            # Carry the t = 0 companion source unchanged into period 0.
            capacitors[e.label] = CapacitorRecord(float(v), cap_sources[e.label])
        return PeriodRecord(-1, 0.0, node_voltages, vdc_currents, cell_states, capacitors)

    def step(self, index, previous):
        config = self.config
        predictions = {}
        for e, params in self.cells:
            iL0 = previous.cells[e.label].iL2
            mode, d_p = _predict(
                params, _ports(e, previous.node_voltages), iL0, config.d
            )
            if mode is _cells.Mode.DCM:
                iL0 = 0.0
            predictions[e.label] = CellPrediction(mode, d_p, iL0)
        cap_sources = {
            e.label: previous.capacitors[e.label].i0_next for e, _ in self.caps
        }

        record = self._solve_period(index, predictions, cap_sources)

        if config.dcm_refine and any(
            s.mode is _cells.Mode.DCM for s in record.cells.values()
        ):
            refined = {}
            changed = False
            for e, params in self.cells:
                pred = predictions[e.label]
                mode, d_p = _predict(
                    params, _ports(e, record.node_voltages), pred.iL0, config.d
                )
                if (mode, d_p) != (pred.mode, pred.d_p):
                    changed = True
                refined[e.label] = CellPrediction(mode, d_p, pred.iL0)
            if changed:
                record = self._solve_period(index, refined, cap_sources)
        return record

    def _solve_period(self, index, predictions, cap_sources):
        config = self.config
        try:
            system = self._assemble(predictions, cap_sources)
            z = self._build_z(system, predictions, cap_sources)
            x = lu_solve(self._factors, z)
            check_residual(system.A, x, z, self._a_norm)
        except SingularSystem as exc:
            raise SingularSystem(str(exc), period=index) from exc

        layout = system.layout
        node_voltages = {n: float(x[layout.node_row[n]]) for n in layout.node_ids}
        vdc_currents = {
            label: float(x[row]) for label, row in layout.vdc_row.items()
        }

        cell_states = {}
        for e, params in self.cells:
            pred = predictions[e.label]
            rs, rd = layout.cell_rows[e.label]
            vL1, vL2 = _cells.drive_voltages(_ports(e, node_voltages), params)
            iL1, iL2 = _cells.advance_inductor(
                pred.iL0, vL1, vL2, config.d, pred.d_p, params, config.T_s
            )
            if pred.mode is _cells.Mode.DCM:
                # The rest interval pins the end current at zero exactly.
                iL2 = 0.0
            elif params.rectifier is _cells.Rectifier.DIODE and iL2 < 0.0:
                # The diode blocks once the current reaches zero.
                iL2 = 0.0
            cell_states[e.label] = _cells.CellState(
                iL0=pred.iL0,
                iL1=iL1,
                iL2=iL2,
                mode=pred.mode,
                d_p=pred.d_p,
                vL1=vL1,
                vL2=vL2,
                iS_avg=float(x[rs]),
                iD_avg=float(x[rd]),
                vL_avg=_cells.avg_inductor_voltage(vL1, vL2, config.d, pred.d_p),
            )

        capacitors = {}
        for e, g in self.caps:
            r1, r2 = layout.row_of(e.nodes[0]), layout.row_of(e.nodes[1])
            v = (x[r1] if r1 is not None else 0.0) - (
                x[r2] if r2 is not None else 0.0
            )
            v = float(v)
            capacitors[e.label] = CapacitorRecord(
                v, 2.0 * g * v - cap_sources[e.label]
            )

        return PeriodRecord(
            index,
            index * config.T_s,
            node_voltages,
            vdc_currents,
            cell_states,
            capacitors,
        )
