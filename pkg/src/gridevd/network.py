"""Network data model, MATPOWER-format case ingestion and disturbance injection.

All quantities held by a :class:`Network` are per-unit on the case's MVA
base; the MW/MVAr figures of the case file are converted exactly once, in
:func:`parse_case`, and converted back in :func:`serialize_case`.
"""

from __future__ import annotations

import enum
import json
import math
import re
from collections import deque
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping

from gridevd.errors import ParseError, SaturationError, ValidationError

#: Generator voltage band used when the case file does not carry one.
DEFAULT_GEN_VMIN = 0.9
DEFAULT_GEN_VMAX = 1.1


class BusKind(enum.Enum):
    PQ = 1
    PV = 2
    SLACK = 3


@dataclass(frozen=True)
class Bus:
    id: int
    kind: BusKind
    p_load: float = 0.0  # pu
    q_load: float = 0.0  # pu
    v_mag: float = 1.0
    v_ang: float = 0.0  # rad
    shunt_b: float = 0.0  # pu susceptance at 1 pu voltage
    shunt_g: float = 0.0  # pu conductance at 1 pu voltage


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charging: float = 0.0
    tap_ratio: float = 1.0
    shift: float = 0.0  # rad


@dataclass(frozen=True)
class Generator:
    bus: int
    v_setpoint: float
    v_min: float = DEFAULT_GEN_VMIN
    v_max: float = DEFAULT_GEN_VMAX
    p_gen: float = 0.0  # pu


@dataclass(frozen=True)
class Network:
    """A validated single-island network.

    Construct through :func:`parse_case` or call :meth:`validate` after
    building one by hand; the dataclass itself does not re-check on every
    ``replace``.
    """

    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    base_mva: float = 100.0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "generators", tuple(self.generators))

    # -- lookups -------------------------------------------------------
    @property
    def bus_ids(self) -> list[int]:
        return [b.id for b in self.buses]

    def bus_index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    def bus(self, bus_id: int) -> Bus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise KeyError(bus_id)

    def generator(self, bus_id: int) -> Generator:
        for g in self.generators:
            if g.bus == bus_id:
                return g
        raise KeyError(bus_id)

    @property
    def slack_bus(self) -> int:
        return next(b.id for b in self.buses if b.kind is BusKind.SLACK)

    @property
    def loaded_buses(self) -> list[int]:
        """Buses that carry any demand, generator buses included."""
        return [b.id for b in self.buses if b.p_load != 0.0 or b.q_load != 0.0]

    def total_load_mw(self) -> float:
        return sum(b.p_load for b in self.buses) * self.base_mva

    def total_load_mvar(self) -> float:
        return sum(b.q_load for b in self.buses) * self.base_mva

    # -- validation ----------------------------------------------------
    def validate(self) -> "Network":
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate bus ids")
        if any(i <= 0 for i in ids):
            raise ValidationError("bus ids must be positive integers")
        slacks = [b.id for b in self.buses if b.kind is BusKind.SLACK]
        if len(slacks) != 1:
            raise ValidationError(f"expected exactly one slack bus, found {len(slacks)}")
        known = set(ids)
        for br in self.branches:
            if br.from_bus not in known or br.to_bus not in known:
                raise ValidationError(f"branch {br.from_bus}-{br.to_bus} references an unknown bus")
            if br.from_bus == br.to_bus:
                raise ValidationError(f"branch {br.from_bus}-{br.to_bus} is a self-loop")
            if br.x == 0.0:
                raise ValidationError(f"branch {br.from_bus}-{br.to_bus} has zero reactance")
        kinds = {b.id: b.kind for b in self.buses}
        seen: dict[int, int] = {}
        for g in self.generators:
            if g.bus not in kinds:
                raise ValidationError(f"generator at unknown bus {g.bus}")
            if kinds[g.bus] is BusKind.PQ:
                raise ValidationError(f"generator at bus {g.bus}, which is a PQ bus")
            seen[g.bus] = seen.get(g.bus, 0) + 1
            if not g.v_min < g.v_setpoint <= g.v_max:
                raise ValidationError(
                    f"generator {g.bus}: set-point {g.v_setpoint} outside ({g.v_min}, {g.v_max}]"
                )
        for b in self.buses:
            if b.kind is not BusKind.PQ:
                if seen.get(b.id, 0) != 1:
                    raise ValidationError(
                        f"bus {b.id} must have exactly one generator, found {seen.get(b.id, 0)}"
                    )
                if b.v_mag <= 0:
                    raise ValidationError(f"bus {b.id}: voltage set-point must be positive")
        _check_connected(ids, self.branches)
        return self


def _check_connected(ids: list[int], branches: Iterable[Branch]) -> None:
    adj: dict[int, list[int]] = {i: [] for i in ids}
    for br in branches:
        adj[br.from_bus].append(br.to_bus)
        adj[br.to_bus].append(br.from_bus)
    start = ids[0]
    seen = {start}
    queue = deque([start])
    while queue:
        for nb in adj[queue.popleft()]:
            if nb not in seen:
                seen.add(nb)
                queue.append(nb)
    if len(seen) != len(ids):
        missing = sorted(set(ids) - seen)
        raise ValidationError(f"network is not connected; unreachable buses {missing}")


# ---------------------------------------------------------------------------
# case-file parsing
# ---------------------------------------------------------------------------

_SCALAR_RE = re.compile(r"^\s*mpc\.(\w+)\s*=\s*([^\[\{;]+?)\s*;")
_MATRIX_OPEN_RE = re.compile(r"^\s*mpc\.(\w+)\s*=\s*\[(.*)$")
_CELL_OPEN_RE = re.compile(r"^\s*mpc\.(\w+)\s*=\s*\{")

_MIN_COLS = {"bus": 13, "gen": 10, "branch": 11, "gen_vlim": 3}


def _strip_comment(line: str) -> str:
    # MATLAB strings in case files never contain '%', so a plain split is safe.
    return line.split("%", 1)[0]


def _read_sections(text: str) -> tuple[dict[str, str], dict[str, list[tuple[int, list[float]]]]]:
    scalars: dict[str, str] = {}
    matrices: dict[str, list[tuple[int, list[float]]]] = {}
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        raw = _strip_comment(lines[i])
        i += 1
        if _CELL_OPEN_RE.match(raw):
            while "}" not in raw and i < len(lines):
                raw = _strip_comment(lines[i])
                i += 1
            continue
        m = _MATRIX_OPEN_RE.match(raw)
        if m:
            name, rest = m.group(1), m.group(2)
            start_line = i
            rows: list[tuple[int, list[float]]] = []
            chunk, lineno = rest, start_line
            closed = False
            while True:
                body = chunk
                if "]" in body:
                    body = body.split("]", 1)[0]
                    closed = True
                for piece in body.split(";"):
                    tokens = piece.replace(",", " ").split()
                    if not tokens:
                        continue
                    try:
                        rows.append((lineno, [float(t) for t in tokens]))
                    except ValueError:
                        raise ParseError(f"non-numeric entry in mpc.{name}: {piece.strip()!r}", lineno)
                if closed:
                    break
                if i >= len(lines):
                    raise ParseError(f"unterminated matrix mpc.{name}", start_line)
                chunk = _strip_comment(lines[i])
                i += 1
                lineno = i
            matrices[name] = rows
            continue
        m = _SCALAR_RE.match(raw)
        if m:
            scalars[m.group(1)] = m.group(2).strip()
    return scalars, matrices


def _rows(matrices, name: str) -> list[tuple[int, list[float]]]:
    if name not in matrices:
        raise ParseError(f"missing section mpc.{name}")
    rows = matrices[name]
    width = _MIN_COLS[name]
    for lineno, row in rows:
        if len(row) < width:
            raise ParseError(f"mpc.{name} row has {len(row)} columns, expected at least {width}", lineno)
    return rows


def _as_int(value: float, what: str, lineno: int) -> int:
    if value != int(value):
        raise ParseError(f"{what} must be an integer, got {value}", lineno)
    return int(value)


def parse_case(text: str, name: str = "") -> Network:
    """Parse MATPOWER-format case text into a validated :class:`Network`.

    Out-of-service generators and branches are dropped. Generator voltage
    limits come from the optional ``mpc.gen_vlim`` section
    (``bus vmin vmax`` rows) and otherwise default to 0.9-1.1 pu.
    """
    scalars, matrices = _read_sections(text)
    if "baseMVA" not in scalars:
        raise ParseError("missing mpc.baseMVA")
    try:
        base = float(scalars["baseMVA"])
    except ValueError:
        raise ParseError(f"bad mpc.baseMVA value {scalars['baseMVA']!r}")
    if base <= 0:
        raise ParseError("mpc.baseMVA must be positive")

    buses = []
    for lineno, row in _rows(matrices, "bus"):
        code = _as_int(row[1], "bus type", lineno)
        try:
            kind = BusKind(code)
        except ValueError:
            raise ParseError(f"unsupported bus type {code}", lineno)
        buses.append(
            Bus(
                id=_as_int(row[0], "bus id", lineno),
                kind=kind,
                p_load=row[2] / base,
                q_load=row[3] / base,
                shunt_g=row[4] / base,
                shunt_b=row[5] / base,
                v_mag=row[7],
                v_ang=math.radians(row[8]),
            )
        )

    limits = {}
    if "gen_vlim" in matrices:
        for lineno, row in _rows(matrices, "gen_vlim"):
            limits[_as_int(row[0], "generator bus", lineno)] = (row[1], row[2])

    gens = []
    for lineno, row in _rows(matrices, "gen"):
        if row[7] <= 0:
            continue
        gbus = _as_int(row[0], "generator bus", lineno)
        vmin, vmax = limits.get(gbus, (DEFAULT_GEN_VMIN, DEFAULT_GEN_VMAX))
        gens.append(Generator(bus=gbus, v_setpoint=row[5], v_min=vmin, v_max=vmax, p_gen=row[1] / base))

    branches = []
    for lineno, row in _rows(matrices, "branch"):
        if row[10] <= 0:
            continue
        if row[2] == 0.0 and row[3] == 0.0:
            raise ParseError("branch with zero impedance", lineno)
        branches.append(
            Branch(
                from_bus=_as_int(row[0], "from bus", lineno),
                to_bus=_as_int(row[1], "to bus", lineno),
                r=row[2],
                x=row[3],
                b_charging=row[4],
                tap_ratio=row[8] if row[8] != 0.0 else 1.0,
                shift=math.radians(row[9]),
            )
        )
    return Network(tuple(buses), tuple(branches), tuple(gens), base, name).validate()


def _invert(value: float, forward, inverse) -> float:
    """Return ``y`` near ``forward(value)`` with ``inverse(y) == value`` when one exists."""
    y = forward(value)
    if inverse(y) == value:
        return y
    lo = hi = y
    for _ in range(8):
        lo, hi = math.nextafter(lo, -math.inf), math.nextafter(hi, math.inf)
        if inverse(lo) == value:
            return lo
        if inverse(hi) == value:
            return hi
    return y


def _to_file_units(value: float, base: float) -> float:
    return _invert(value, lambda v: v * base, lambda y: y / base)


def _to_degrees(value: float) -> float:
    return _invert(value, math.degrees, math.radians)


def _num(v: float) -> str:
    return repr(float(v))


def serialize_case(net: Network) -> str:
    """Render ``net`` as MATPOWER case text that :func:`parse_case` reads back identically."""
    base = net.base_mva
    gens = {g.bus: g for g in net.generators}
    out = [
        f"function mpc = {net.name or 'case'}",
        "mpc.version = '2';",
        f"mpc.baseMVA = {_num(base)};",
        "%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin",
        "mpc.bus = [",
    ]
    for b in net.buses:
        va = _to_degrees(b.v_ang)
        cols = [
            b.id, b.kind.value,
            _to_file_units(b.p_load, base), _to_file_units(b.q_load, base),
            _to_file_units(b.shunt_g, base), _to_file_units(b.shunt_b, base),
            1, b.v_mag, va, 0, 1, DEFAULT_GEN_VMAX, DEFAULT_GEN_VMIN,
        ]
        out.append("\t" + "\t".join(str(c) if isinstance(c, int) else _num(c) for c in cols) + ";")
    out += ["];", "%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin", "mpc.gen = ["]
    for g in net.generators:
        cols = [g.bus, _to_file_units(g.p_gen, base), 0.0, 9999.0, -9999.0, g.v_setpoint, base, 1, 9999.0, 0.0]
        out.append("\t" + "\t".join(str(c) if isinstance(c, int) else _num(c) for c in cols) + ";")
    out += ["];"]
    if any((g.v_min, g.v_max) != (DEFAULT_GEN_VMIN, DEFAULT_GEN_VMAX) for g in gens.values()):
        out += ["%\tbus\tvmin\tvmax", "mpc.gen_vlim = ["]
        out += [f"\t{g.bus}\t{_num(g.v_min)}\t{_num(g.v_max)};" for g in net.generators]
        out += ["];"]
    out += ["%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus", "mpc.branch = ["]
    for br in net.branches:
        ang = _to_degrees(br.shift)
        cols = [br.from_bus, br.to_bus, br.r, br.x, br.b_charging, 0.0, 0.0, 0.0, br.tap_ratio, ang, 1]
        out.append("\t" + "\t".join(str(c) if isinstance(c, int) else _num(c) for c in cols) + ";")
    out += ["];", ""]
    return "\n".join(out)


def load_case(path: str | Path) -> Network:
    path = Path(path)
    return parse_case(path.read_text(), name=path.stem)


# ---------------------------------------------------------------------------
# disturbances and set-point updates
# ---------------------------------------------------------------------------

def add_reactive_load(net: Network, bus: int, q: float) -> Network:
    """Return a copy of ``net`` with ``q`` MVAr of extra reactive demand at ``bus``.

    Negative ``q`` models a capacitive injection. Only PQ buses accept
    disturbances.
    """
    idx = net.bus_index()
    if bus not in idx:
        raise ValidationError(f"unknown bus {bus}")
    target = net.buses[idx[bus]]
    if target.kind is not BusKind.PQ:
        raise ValidationError(f"bus {bus} is a generator bus; disturbances must target load buses")
    if q == 0:
        return net
    buses = list(net.buses)
    buses[idx[bus]] = replace(target, q_load=target.q_load + q / net.base_mva)
    return replace(net, buses=tuple(buses))


def apply_disturbances(net: Network, disturbances: Iterable[tuple[int, float]]) -> Network:
    for bus, q in disturbances:
        net = add_reactive_load(net, bus, q)
    return net


def apply_generator_deltas(net: Network, deltas: Mapping[int, float], tol: float = 1e-12) -> Network:
    """Shift generator voltage set-points by ``deltas`` (bus id -> pu).

    A result within ``tol`` of a band edge is snapped onto it; anything
    further out raises :class:`SaturationError`.
    """
    gens = {g.bus: i for i, g in enumerate(net.generators)}
    for bus in deltas:
        if bus not in gens:
            raise ValidationError(f"bus {bus} has no generator")
    if not deltas:
        return net
    updated = list(net.generators)
    for bus, delta in deltas.items():
        g = updated[gens[bus]]
        v = g.v_setpoint + delta
        if v > g.v_max + tol or v < g.v_min - tol:
            raise SaturationError(
                f"generator {bus}: set-point {v:.6f} outside [{g.v_min}, {g.v_max}]; normalize first"
            )
        updated[gens[bus]] = replace(g, v_setpoint=min(max(v, g.v_min), g.v_max))
    return replace(net, generators=tuple(updated))


_DISTURB_RE = re.compile(r"^\s*(\d+)\s*:\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*$")


def parse_disturbances(text: str) -> list[tuple[int, float]]:
    """Parse ``bus:q_mvar[,bus:q_mvar...]``."""
    out = []
    for item in text.split(","):
        if not item.strip():
            continue
        m = _DISTURB_RE.match(item)
        if not m:
            raise ParseError(f"bad disturbance {item.strip()!r}; expected bus:q_mvar")
        out.append((int(m.group(1)), float(m.group(2))))
    return out


def load_disturbance_file(path: str | Path) -> list[tuple[int, float]]:
    """Read a JSON list of ``{"bus": int, "q_mvar": float}`` records."""
    try:
        records = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", exc.lineno)
    if not isinstance(records, list):
        raise ParseError("disturbance file must hold a JSON list")
    out = []
    for rec in records:
        try:
            out.append((int(rec["bus"]), float(rec["q_mvar"])))
        except (KeyError, TypeError, ValueError):
            raise ParseError(f"bad disturbance record {rec!r}")
    return out


def dump_disturbances(disturbances: Iterable[tuple[int, float]]) -> str:
    return json.dumps([{"bus": b, "q_mvar": q} for b, q in disturbances])
