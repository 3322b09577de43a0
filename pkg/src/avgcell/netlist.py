"""Netlist parsing and structural validation for switching-converter circuits.

Grammar (one element per line, whitespace separated, ``#`` starts a comment
line, blank lines are ignored):

    VDC <idx> <n+> <n-> <volts>
    IDC <idx> <n+> <n-> <amps>
    R   <idx> <n1> <n2> <ohms>
    C   <idx> <n1> <n2> <farads> <v0>
    SCN|SCD <idx> <nA> <nP> <nC> <L_henries> <iL0>
    FBN|FBD <idx> <nA> <nP> <nC> <Lm_henries> <n_ratio> <iL0>

Cell terminals: ``nA`` is the active (switch) terminal, ``nP`` the passive
(diode) terminal and ``nC`` the common (inductor) terminal.  SCN/FBN are
synchronously rectified cells, SCD/FBD carry a diode and may enter
discontinuous conduction.  IDC extracts its current from ``n+`` and returns
it at ``n-``.

A kind keyword fused with a trailing alphanumeric tag is accepted:
``SCN1 1 1 0 2 10e-6 0`` parses identically to ``SCN 1 1 0 2 10e-6 0``.
The element name is the keyword plus the tag when present, otherwise the
keyword plus the index token.

Optional directive lines of the form

    .param D=0.5 fs=100e3 tend=5e-3

provide default duty ratio, switching frequency and transient duration;
command line flags override them.  Node ids are arbitrary non-negative
integers and node 0 is ground.
"""

from dataclasses import dataclass, field

from .cells import CellParams, Rectifier
from .errors import AvgcellError

VDC = "VDC"
IDC = "IDC"
RES = "R"
CAP = "C"
SCN = "SCN"
SCD = "SCD"
FBN = "FBN"
FBD = "FBD"

CELL_KINDS = (SCN, SCD, FBN, FBD)
FLYBACK_KINDS = (FBN, FBD)

# Longest keywords first so "SCN1" is not read as "S" + garbage.
_KEYWORDS = (VDC, IDC, SCN, SCD, FBN, FBD, CAP, RES)

# tokens per line: keyword, idx, nodes..., params...
_ARITY = {VDC: 5, IDC: 5, RES: 5, CAP: 6, SCN: 7, SCD: 7, FBN: 8, FBD: 8}
_NODE_COUNT = {VDC: 2, IDC: 2, RES: 2, CAP: 2, SCN: 3, SCD: 3, FBN: 3, FBD: 3}

_PARAM_KEYS = ("D", "fs", "tend")


class NetlistError(AvgcellError):
    """Parse or validation failure, located by netlist line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnknownElementKind(NetlistError):
    pass


class ArityError(NetlistError):
    pass


class NumericError(NetlistError):
    pass


class DuplicateLabel(NetlistError):
    pass


class MissingGround(NetlistError):
    pass


class DisconnectedGraph(NetlistError):
    def __init__(self, nodes, line=None):
        self.nodes = frozenset(nodes)
        super().__init__(
            f"nodes not connected to ground: {sorted(self.nodes)}", line
        )


@dataclass(frozen=True)
class Element:
    """One netlist element.

    ``value`` is the main parameter (volts, amps, ohms, farads or henries),
    ``turns`` the flyback turns ratio (1 for every other kind) and
    ``initial`` the initial inductor current (cells) or capacitor voltage.
    """

    kind: str
    label: str
    nodes: tuple
    value: float
    turns: float = 1.0
    initial: float = 0.0

    @property
    def is_cell(self):
        return self.kind in CELL_KINDS

    @property
    def is_flyback(self):
        return self.kind in FLYBACK_KINDS


@dataclass
class CircuitDescription:
    """Validated element list plus the node set it spans."""

    elements: list
    node_ids: set
    params: dict = field(default_factory=dict)

    ground = 0

    def cells(self):
        return [e for e in self.elements if e.is_cell]

    def capacitors(self):
        return [e for e in self.elements if e.kind == CAP]

    def resistors(self):
        return [e for e in self.elements if e.kind == RES]

    def vdcs(self):
        return [e for e in self.elements if e.kind == VDC]

    def idcs(self):
        return [e for e in self.elements if e.kind == IDC]

    def element(self, label):
        for e in self.elements:
            if e.label == label:
                return e
        raise KeyError(label)


@dataclass(frozen=True)
class Diagnostic:
    """One validation finding; an empty diagnostic list means valid."""

    code: str
    message: str

    def __str__(self):
        return self.message


def cell_params(element):
    """Map a cell element onto its constitutive parameters."""
    if not element.is_cell:
        raise ValueError(f"{element.label} is not a switching cell")
    rectifier = (
        Rectifier.SYNCHRONOUS if element.kind in (SCN, FBN) else Rectifier.DIODE
    )
    return CellParams(
        L=element.value,
        n=element.turns,
        rectifier=rectifier,
        flyback=element.is_flyback,
    )


def _match_keyword(token):
    for kw in _KEYWORDS:
        if token.startswith(kw):
            tag = token[len(kw):]
            if tag == "" or tag.isalnum():
                return kw, tag
    return None, None


def _parse_float(token, line, what):
    try:
        value = float(token)
    except ValueError:
        raise NumericError(f"unparsable {what} {token!r}", line) from None
    if value != value or value in (float("inf"), float("-inf")):
        raise NumericError(f"non-finite {what} {token!r}", line)
    return value


def _parse_node(token, line):
    try:
        node = int(token)
    except ValueError:
        raise NumericError(f"unparsable node id {token!r}", line) from None
    if node < 0:
        raise NumericError(f"negative node id {token!r}", line)
    return node


def _parse_param_directive(line_text, line, params):
    parts = line_text.split()
    if parts[0] != ".param":
        raise UnknownElementKind(f"unknown directive {parts[0]!r}", line)
    for item in parts[1:]:
        key, sep, value = item.partition("=")
        if not sep:
            raise NumericError(f"malformed parameter {item!r}", line)
        if key not in _PARAM_KEYS:
            raise NumericError(
                f"unknown parameter {key!r} (expected one of {_PARAM_KEYS})", line
            )
        params[key] = _parse_float(value, line, f"parameter {key}")


def parse_netlist(text):
    """Parse netlist text into a :class:`CircuitDescription`.

    Elements are kept in file order.  Raises a located :class:`NetlistError`
    subclass on the first structural problem; softer issues (parameter
    positivity, degenerate source placement) are reported by :func:`validate`.
    """
    elements = []
    labels = set()
    params = {}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("."):
            _parse_param_directive(line, lineno, params)
            continue

        tokens = line.split()
        kind, tag = _match_keyword(tokens[0])
        if kind is None:
            raise UnknownElementKind(f"unknown element kind {tokens[0]!r}", lineno)
        if len(tokens) != _ARITY[kind]:
            raise ArityError(
                f"{kind} takes {_ARITY[kind]} tokens, got {len(tokens)}", lineno
            )

        idx = tokens[1]
        label = kind + (tag if tag else idx)
        if label in labels:
            raise DuplicateLabel(f"duplicate element label {label!r}", lineno)
        labels.add(label)

        n_nodes = _NODE_COUNT[kind]
        nodes = tuple(_parse_node(t, lineno) for t in tokens[2 : 2 + n_nodes])
        rest = tokens[2 + n_nodes :]

        value = _parse_float(rest[0], lineno, "value")
        turns = 1.0
        initial = 0.0
        if kind == CAP:
            initial = _parse_float(rest[1], lineno, "initial voltage")
        elif kind in (SCN, SCD):
            initial = _parse_float(rest[1], lineno, "initial current")
        elif kind in (FBN, FBD):
            turns = _parse_float(rest[1], lineno, "turns ratio")
            initial = _parse_float(rest[2], lineno, "initial current")

        elements.append(Element(kind, label, nodes, value, turns, initial))

    node_ids = set()
    for e in elements:
        node_ids.update(e.nodes)

    if not elements or 0 not in node_ids:
        raise MissingGround("no element references ground node 0")

    unreached = _unreached_from_ground(elements, node_ids)
    if unreached:
        raise DisconnectedGraph(unreached)

    return CircuitDescription(elements, node_ids, params)


def _unreached_from_ground(elements, node_ids, skip_kinds=()):
    adjacency = {n: set() for n in node_ids}
    for e in elements:
        if e.kind in skip_kinds:
            continue
        for a in e.nodes:
            for b in e.nodes:
                if a != b:
                    adjacency[a].add(b)
    seen = {0}
    stack = [0]
    while stack:
        for other in adjacency.get(stack.pop(), ()):
            if other not in seen:
                seen.add(other)
                stack.append(other)
    return node_ids - seen


def validate(circuit):
    """Check solvability conditions; returns a list of diagnostics.

    Covers ground presence, graph connectivity, parameter positivity,
    voltage-source-only loops and current-source-only cutsets (sufficient
    conditions for the averaged MNA system to be well posed).
    """
    diags = []

    if 0 not in circuit.node_ids:
        diags.append(Diagnostic("missing-ground", "no element references ground node 0"))
        return diags

    unreached = _unreached_from_ground(circuit.elements, circuit.node_ids)
    if unreached:
        diags.append(
            Diagnostic(
                "disconnected-graph",
                f"nodes not connected to ground: {sorted(unreached)}",
            )
        )

    for e in circuit.elements:
        if e.kind == RES and e.value <= 0:
            diags.append(
                Diagnostic("non-positive-resistance", f"{e.label}: non-positive resistance")
            )
        elif e.kind == CAP and e.value <= 0:
            diags.append(
                Diagnostic("non-positive-capacitance", f"{e.label}: non-positive capacitance")
            )
        elif e.is_cell:
            if e.value <= 0:
                diags.append(
                    Diagnostic("non-positive-inductance", f"{e.label}: non-positive inductance")
                )
            if e.turns <= 0:
                diags.append(
                    Diagnostic("non-positive-turns", f"{e.label}: non-positive turns ratio")
                )

    # A cycle in the VDC-only subgraph pins some voltage twice.
    parent = {}

    def find(x):
        while parent.setdefault(x, x) != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for e in circuit.vdcs():
        ra, rb = find(e.nodes[0]), find(e.nodes[1])
        if ra == rb:
            diags.append(
                Diagnostic("voltage-source-loop", f"voltage source loop through {e.label}")
            )
        else:
            parent[ra] = rb

    # A node reachable only through current sources has no voltage anchor.
    floating = _unreached_from_ground(circuit.elements, circuit.node_ids, skip_kinds=(IDC,))
    floating -= unreached
    if floating:
        diags.append(
            Diagnostic(
                "current-source-cutset",
                f"nodes anchored only by current sources: {sorted(floating)}",
            )
        )

    return diags


def serialize_netlist(circuit):
    """Render a circuit back to canonical netlist text.

    Re-parsing the output reproduces an identical :class:`CircuitDescription`.
    """
    lines = []
    if circuit.params:
        pairs = " ".join(f"{k}={circuit.params[k]!r}" for k in sorted(circuit.params))
        lines.append(f".param {pairs}")
    for e in circuit.elements:
        tag = e.label[len(e.kind):]
        fields = [e.kind, tag] + [str(n) for n in e.nodes] + [repr(e.value)]
        if e.kind == CAP or e.kind in (SCN, SCD):
            fields.append(repr(e.initial))
        elif e.kind in FLYBACK_KINDS:
            fields.append(repr(e.turns))
            fields.append(repr(e.initial))
        lines.append(" ".join(fields))
    return "\n".join(lines) + "\n"
