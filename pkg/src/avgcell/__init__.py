"""Averaged-model simulation of switching DC-DC converters.

The averaged circuit is solved once per switching period through a
switching-cell abstraction covering continuous and discontinuous
conduction; instantaneous waveforms are reconstructed afterwards with the
linear-ripple and quasi-steady-state approximations.  A switched-circuit
reference simulator is included for verification.
"""

from .cells import (
    CellParams,
    CellState,
    Mode,
    PortVoltages,
    Rectifier,
)
from .engine import (
    InvalidCircuit,
    InvalidConfig,
    PeriodRecord,
    SimConfig,
    SimulationResult,
    predict_mode,
    run,
    step,
)
from .errors import AvgcellError
from .mna import SingularSystem
from .netlist import (
    CircuitDescription,
    Element,
    NetlistError,
    parse_netlist,
    serialize_netlist,
    validate,
)
from .oracle import OracleConfig, SampledWaveform, period_average, simulate_switched
from .waveform import (
    SignalStats,
    Waveform,
    capacitor_average_waveform,
    capacitor_waveform,
    inductor_waveform,
    ripple_amplitude,
    stats,
)

__version__ = "0.1.0"

__all__ = [
    "AvgcellError",
    "CellParams",
    "CellState",
    "CircuitDescription",
    "Element",
    "InvalidCircuit",
    "InvalidConfig",
    "Mode",
    "NetlistError",
    "OracleConfig",
    "PeriodRecord",
    "PortVoltages",
    "Rectifier",
    "SampledWaveform",
    "SignalStats",
    "SimConfig",
    "SimulationResult",
    "SingularSystem",
    "Waveform",
    "capacitor_average_waveform",
    "capacitor_waveform",
    "inductor_waveform",
    "parse_netlist",
    "period_average",
    "predict_mode",
    "ripple_amplitude",
    "run",
    "serialize_netlist",
    "simulate_switched",
    "stats",
    "step",
    "validate",
    "__version__",
]
