"""Network case model: buses, branches, generators, loads, shunts.

Everything downstream of the parsers works in per-unit on the system MVA
base with angles in radians. Bus ids are the external (file) numbers and may
be arbitrary positive integers; ``NetworkCase.bus_index`` maps them to the
contiguous internal ordering used by the solver.
"""

from __future__ import annotations

import enum
import json
import math
import re
import warnings
from dataclasses import dataclass, replace

from .errors import CaseValidationError, IslandingError, ParseError

NATIVE_FORMAT = "pffa-case"
NATIVE_VERSION = 1


class BusKind(enum.Enum):
    SLACK = "slack"
    PV = "pv"
    PQ = "pq"


@dataclass(frozen=True)
class Bus:
    """A network node.

    ``v_set``/``angle_set`` pin the slack voltage phasor. ``vm``/``va`` carry
    a voltage from the case file when one is present (magnitude p.u., angle
    radians); they seed warm starts and are otherwise ignored.
    """

    id: int
    kind: BusKind
    v_set: float = 1.0
    angle_set: float = 0.0
    vm: float | None = None
    va: float | None = None


@dataclass(frozen=True)
class Branch:
    """Series branch (line or transformer) between two buses.

    ``r``/``x`` are the series impedance, ``b_charge`` the total line-charging
    susceptance (split half per end). ``tap`` is the off-nominal turns ratio
    on the from side (1.0 for lines), ``shift`` the phase shift in radians.
    """

    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charge: float = 0.0
    tap: float = 1.0
    shift: float = 0.0
    in_service: bool = True

    def series_admittance(self) -> complex:
        z = complex(self.r, self.x)
        if z == 0:
            raise CaseValidationError(
                f"branch {self.from_bus}-{self.to_bus} has zero series impedance"
            )
        return 1.0 / z

    @property
    def is_transformer(self) -> bool:
        return self.tap != 1.0 or self.shift != 0.0


@dataclass(frozen=True)
class Generator:
    """Voltage-controlling machine at a PV bus.

    ``p_set`` is the scheduled active injection, ``q_min``/``q_max`` the
    reactive capability range, ``v_set`` the controlled voltage magnitude.
    ``q_init`` seeds the reactive state on warm starts when available.
    """

    bus: int
    p_set: float
    q_min: float = -math.inf
    q_max: float = math.inf
    v_set: float = 1.0
    q_init: float | None = None


@dataclass(frozen=True)
class Load:
    """Constant-power demand drawn from a bus."""

    bus: int
    p: float
    q: float


@dataclass(frozen=True)
class FixedShunt:
    """Constant-admittance shunt to ground (g + jb, per unit)."""

    bus: int
    g: float
    b: float


@dataclass(frozen=True)
class NetworkCase:
    name: str = "case"
    base_mva: float = 100.0
    buses: tuple[Bus, ...] = ()
    branches: tuple[Branch, ...] = ()
    generators: tuple[Generator, ...] = ()
    loads: tuple[Load, ...] = ()
    shunts: tuple[FixedShunt, ...] = ()

    @property
    def bus_index(self) -> dict[int, int]:
        return {bus.id: i for i, bus in enumerate(self.buses)}

    def bus(self, bus_id: int) -> Bus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise CaseValidationError(f"unresolvable bus reference {bus_id}")

    @property
    def slack(self) -> Bus:
        for b in self.buses:
            if b.kind is BusKind.SLACK:
                return b
        raise CaseValidationError("missing slack bus")


# ---------------------------------------------------------------------------
# validation


def validate(case: NetworkCase) -> NetworkCase:
    """Check structural sanity; returns the case unchanged on success."""
    if case.base_mva <= 0:
        raise CaseValidationError(f"base MVA must be positive, got {case.base_mva}")
    if not case.buses:
        raise CaseValidationError("case has no buses")

    ids = [b.id for b in case.buses]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise CaseValidationError(f"duplicate bus ids: {dupes}")
    known = set(ids)

    slacks = [b.id for b in case.buses if b.kind is BusKind.SLACK]
    if not slacks:
        raise CaseValidationError("missing slack bus (exactly one required)")
    if len(slacks) > 1:
        raise CaseValidationError(f"multiple slack buses: {slacks}")

    for br in case.branches:
        for end in (br.from_bus, br.to_bus):
            if end not in known:
                raise CaseValidationError(
                    f"unresolvable bus reference {end} on branch "
                    f"{br.from_bus}-{br.to_bus}"
                )
        if br.from_bus == br.to_bus:
            raise CaseValidationError(f"self-loop branch at bus {br.from_bus}")
        if br.tap <= 0:
            raise CaseValidationError(
                f"branch {br.from_bus}-{br.to_bus} has non-positive tap {br.tap}"
            )
        br.series_admittance()  # raises on zero impedance

    for kind, elems in (("generator", case.generators), ("load", case.loads),
                        ("shunt", case.shunts)):
        for el in elems:
            if el.bus not in known:
                raise CaseValidationError(
                    f"unresolvable bus reference {el.bus} on {kind}"
                )

    gen_buses = {g.bus for g in case.generators}
    by_kind = {b.id: b.kind for b in case.buses}
    for g in case.generators:
        if g.q_min > g.q_max:
            raise CaseValidationError(
                f"generator at bus {g.bus} has q_min {g.q_min} > q_max {g.q_max}"
            )
        if by_kind[g.bus] is BusKind.PQ:
            raise CaseValidationError(
                f"generator attached to PQ bus {g.bus}; fold it into the load "
                "or mark the bus PV"
            )
    seen_vset: dict[int, float] = {}
    for g in case.generators:
        if g.bus in seen_vset and seen_vset[g.bus] != g.v_set:
            raise CaseValidationError(
                f"conflicting voltage setpoints at bus {g.bus}: "
                f"{seen_vset[g.bus]} vs {g.v_set}"
            )
        seen_vset[g.bus] = g.v_set
    for b in case.buses:
        if b.kind is BusKind.PV and b.id not in gen_buses:
            raise CaseValidationError(f"PV bus {b.id} has no in-service generator")

    islands = connected_components(case)
    if len(islands) > 1:
        raise IslandingError(
            f"network splits into {len(islands)} islands: "
            + "; ".join(str(sorted(i)) for i in islands),
            islands=islands,
        )
    return case


def connected_components(case: NetworkCase) -> list[set[int]]:
    """Connected components of the in-service branch graph (bus id sets)."""
    adj: dict[int, list[int]] = {b.id: [] for b in case.buses}
    for br in case.branches:
        if br.in_service:
            adj[br.from_bus].append(br.to_bus)
            adj[br.to_bus].append(br.from_bus)
    seen: set[int] = set()
    comps: list[set[int]] = []
    for start in adj:
        if start in seen:
            continue
        comp = {start}
        stack = [start]
        while stack:
            for nxt in adj[stack.pop()]:
                if nxt not in comp:
                    comp.add(nxt)
                    stack.append(nxt)
        seen |= comp
        comps.append(comp)
    return comps


# ---------------------------------------------------------------------------
# transforms


def apply_loading_factor(case: NetworkCase, factor: float) -> NetworkCase:
    """Scale every load's P and Q by ``factor`` (generation is untouched;
    the slack absorbs the imbalance)."""
    if factor < 0:
        raise CaseValidationError(f"loading factor must be >= 0, got {factor}")
    loads = tuple(replace(ld, p=ld.p * factor, q=ld.q * factor)
                  for ld in case.loads)
    return replace(case, loads=loads)


def remove_branch(case: NetworkCase, from_bus: int, to_bus: int,
                  ordinal: int = 0) -> NetworkCase:
    """Take one branch out of service (``ordinal`` picks among parallels).

    Raises IslandingError when the outage disconnects the network, so
    contingency screening can tell structural failures from infeasibility.
    """
    matches = [i for i, br in enumerate(case.branches)
               if br.in_service
               and {br.from_bus, br.to_bus} == {from_bus, to_bus}]
    if not matches:
        raise CaseValidationError(
            f"no in-service branch between buses {from_bus} and {to_bus}"
        )
    if ordinal >= len(matches):
        raise CaseValidationError(
            f"branch {from_bus}-{to_bus} ordinal {ordinal} out of range "
            f"({len(matches)} parallel in service)"
        )
    idx = matches[ordinal]
    branches = tuple(replace(br, in_service=False) if i == idx else br
                     for i, br in enumerate(case.branches))
    out = replace(case, branches=branches)
    islands = connected_components(out)
    if len(islands) > 1:
        raise IslandingError(
            f"removing branch {from_bus}-{to_bus} islands the network into "
            f"{len(islands)} parts",
            islands=islands,
        )
    return out


# ---------------------------------------------------------------------------
# MATPOWER parser

_MAT_SCALAR = re.compile(r"mpc\.(\w+)\s*=\s*([^\[;]+);")
_MAT_MATRIX = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\];", re.DOTALL)
_MAT_STRING = re.compile(r"mpc\.(\w+)\s*=\s*'([^']*)'\s*;")

_KNOWN_SECTIONS = {"version", "baseMVA", "bus", "gen", "branch"}


def _strip_comments(text: str) -> str:
    return "\n".join(line.split("%", 1)[0] for line in text.splitlines())


def _parse_matrix(body: str, section: str) -> list[list[float]]:
    rows = []
    for chunk in body.replace("\n", ";").split(";"):
        toks = chunk.split()
        if not toks:
            continue
        try:
            rows.append([float(t) for t in toks])
        except ValueError as exc:
            raise ParseError(f"bad numeric token in mpc.{section}: {exc}") from None
    return rows


def parse_matpower(text: str, name: str = "case") -> NetworkCase:
    """Parse a MATPOWER .m case into a NetworkCase (per unit, radians).

    Supports the version-2 bus/gen/branch tables. Cost and extension tables
    are ignored with a warning. Generators with status <= 0 are dropped; a
    declared PV bus left with no generator is demoted to PQ.
    """
    clean = _strip_comments(text)

    strings = {m.group(1): m.group(2) for m in _MAT_STRING.finditer(clean)}
    matrices = {m.group(1): _parse_matrix(m.group(2), m.group(1))
                for m in _MAT_MATRIX.finditer(clean)}
    scalars = {}
    for m in _MAT_SCALAR.finditer(clean):
        if m.group(1) in strings or m.group(1) in matrices:
            continue
        try:
            scalars[m.group(1)] = float(m.group(2).strip())
        except ValueError:
            continue

    if strings.get("version", "2") != "2":
        warnings.warn(f"MATPOWER case version {strings.get('version')!r}; "
                      "parsing as version 2")
    for section in matrices:
        if section not in _KNOWN_SECTIONS:
            warnings.warn(f"ignoring unsupported section mpc.{section}")

    if "baseMVA" not in scalars:
        raise ParseError("missing required section mpc.baseMVA")
    for required in ("bus", "gen", "branch"):
        if required not in matrices:
            raise ParseError(f"missing required section mpc.{required}")

    base = scalars["baseMVA"]
    if base <= 0:
        raise ParseError(f"baseMVA must be positive, got {base}")

    kind_codes = {1: BusKind.PQ, 2: BusKind.PV, 3: BusKind.SLACK}
    buses: list[Bus] = []
    loads: list[Load] = []
    shunts: list[FixedShunt] = []
    for row in matrices["bus"]:
        if len(row) < 13:
            raise ParseError(f"bus row has {len(row)} columns, expected >= 13")
        bus_id = int(row[0])
        code = int(row[1])
        if code == 4:
            continue  # isolated bus, MATPOWER convention
        if code not in kind_codes:
            raise ParseError(f"bus {bus_id} has unknown type code {code}")
        buses.append(Bus(
            id=bus_id,
            kind=kind_codes[code],
            vm=row[7],
            va=math.radians(row[8]),
        ))
        pd, qd = row[2] / base, row[3] / base
        if pd != 0.0 or qd != 0.0:
            loads.append(Load(bus=bus_id, p=pd, q=qd))
        gs, bs = row[4] / base, row[5] / base
        if gs != 0.0 or bs != 0.0:
            shunts.append(FixedShunt(bus=bus_id, g=gs, b=bs))

    kind_of = {b.id: b.kind for b in buses}

    # aggregate in-service generators per bus
    agg: dict[int, dict] = {}
    for row in matrices["gen"]:
        if len(row) < 8:
            raise ParseError(f"gen row has {len(row)} columns, expected >= 8")
        bus_id = int(row[0])
        if row[7] <= 0:
            continue
        if bus_id not in kind_of:
            raise ParseError(f"unresolvable bus reference {bus_id} in mpc.gen")
        ent = agg.setdefault(bus_id, {
            "p": 0.0, "qmin": 0.0, "qmax": 0.0, "qg": 0.0, "v_set": None,
        })
        if ent["v_set"] is not None and ent["v_set"] != row[5]:
            raise CaseValidationError(
                f"conflicting voltage setpoints at bus {bus_id}: "
                f"{ent['v_set']} vs {row[5]}"
            )
        ent["v_set"] = row[5]
        ent["p"] += row[1] / base
        ent["qg"] += row[2] / base
        # MATPOWER uses +-9900-ish sentinels for unbounded Q capability
        ent["qmax"] += math.inf if row[3] >= 9900 else row[3] / base
        ent["qmin"] += -math.inf if row[4] <= -9900 else row[4] / base

    generators: list[Generator] = []
    slack_vset: dict[int, float] = {}
    for bus_id, ent in agg.items():
        if kind_of[bus_id] is BusKind.SLACK:
            slack_vset[bus_id] = ent["v_set"]
            continue
        if kind_of[bus_id] is BusKind.PQ:
            # fixed-output machine on a load bus: net it off as negative load
            warnings.warn(f"generator at PQ bus {bus_id} folded into the load")
            loads.append(Load(bus=bus_id, p=-ent["p"], q=-ent["qg"]))
            continue
        generators.append(Generator(
            bus=bus_id, p_set=ent["p"], q_min=ent["qmin"], q_max=ent["qmax"],
            v_set=ent["v_set"], q_init=ent["qg"],
        ))

    gen_buses = {g.bus for g in generators}
    fixed: list[Bus] = []
    for b in buses:
        if b.kind is BusKind.SLACK:
            fixed.append(replace(
                b,
                v_set=slack_vset.get(b.id, b.vm if b.vm else 1.0),
                angle_set=b.va or 0.0,
            ))
        elif b.kind is BusKind.PV and b.id not in gen_buses:
            warnings.warn(f"PV bus {b.id} has no in-service generator; "
                          "treating as PQ")
            fixed.append(replace(b, kind=BusKind.PQ))
        else:
            fixed.append(b)

    branches: list[Branch] = []
    for row in matrices["branch"]:
        if len(row) < 11:
            raise ParseError(f"branch row has {len(row)} columns, expected >= 11")
        tap = row[8] if row[8] != 0.0 else 1.0  # 0 means nominal ratio
        branches.append(Branch(
            from_bus=int(row[0]), to_bus=int(row[1]),
            r=row[2], x=row[3], b_charge=row[4],
            tap=tap, shift=math.radians(row[9]),
            in_service=row[10] > 0,
        ))

    case = NetworkCase(
        name=name, base_mva=base, buses=tuple(fixed), branches=tuple(branches),
        generators=tuple(generators), loads=tuple(loads), shunts=tuple(shunts),
    )
    return validate(case)


# ---------------------------------------------------------------------------
# native JSON format


def emit_native_json(case: NetworkCase) -> str:
    """Serialize to the versioned native JSON interchange format."""
    doc = {
        "format": NATIVE_FORMAT,
        "version": NATIVE_VERSION,
        "name": case.name,
        "base_mva": case.base_mva,
        "buses": [
            {"id": b.id, "kind": b.kind.value, "v_set": b.v_set,
             "angle_set": b.angle_set, "vm": b.vm, "va": b.va}
            for b in case.buses
        ],
        "branches": [
            {"from": br.from_bus, "to": br.to_bus, "r": br.r, "x": br.x,
             "b_charge": br.b_charge, "tap": br.tap, "shift": br.shift,
             "in_service": br.in_service}
            for br in case.branches
        ],
        "generators": [
            {"bus": g.bus, "p_set": g.p_set,
             "q_min": None if math.isinf(g.q_min) else g.q_min,
             "q_max": None if math.isinf(g.q_max) else g.q_max,
             "v_set": g.v_set, "q_init": g.q_init}
            for g in case.generators
        ],
        "loads": [{"bus": ld.bus, "p": ld.p, "q": ld.q} for ld in case.loads],
        "shunts": [{"bus": sh.bus, "g": sh.g, "b": sh.b} for sh in case.shunts],
    }
    return json.dumps(doc, indent=2)


def parse_native_json(text: str, name: str | None = None) -> NetworkCase:
    """Parse the native JSON interchange format back into a NetworkCase."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from None
    if doc.get("format") != NATIVE_FORMAT:
        raise ParseError(f"not a {NATIVE_FORMAT} document")
    if doc.get("version") != NATIVE_VERSION:
        raise ParseError(f"unsupported case format version {doc.get('version')}")
    try:
        case = NetworkCase(
            name=name or doc.get("name", "case"),
            base_mva=doc["base_mva"],
            buses=tuple(Bus(
                id=b["id"], kind=BusKind(b["kind"]),
                v_set=b.get("v_set", 1.0), angle_set=b.get("angle_set", 0.0),
                vm=b.get("vm"), va=b.get("va"),
            ) for b in doc["buses"]),
            branches=tuple(Branch(
                from_bus=br["from"], to_bus=br["to"], r=br["r"], x=br["x"],
                b_charge=br.get("b_charge", 0.0), tap=br.get("tap", 1.0),
                shift=br.get("shift", 0.0),
                in_service=br.get("in_service", True),
            ) for br in doc["branches"]),
            generators=tuple(Generator(
                bus=g["bus"], p_set=g["p_set"],
                q_min=-math.inf if g.get("q_min") is None else g["q_min"],
                q_max=math.inf if g.get("q_max") is None else g["q_max"],
                v_set=g.get("v_set", 1.0), q_init=g.get("q_init"),
            ) for g in doc["generators"]),
            loads=tuple(Load(bus=ld["bus"], p=ld["p"], q=ld["q"])
                        for ld in doc["loads"]),
            shunts=tuple(FixedShunt(bus=sh["bus"], g=sh["g"], b=sh["b"])
                         for sh in doc["shunts"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed case document: {exc!r}") from None
    return validate(case)


def load_case(path: str) -> NetworkCase:
    """Load a case from a .m (MATPOWER) or .json (native) file."""
    with open(path) as fh:
        text = fh.read()
    stem = re.sub(r"\.[^.]+$", "", path.rsplit("/", 1)[-1])
    if path.endswith(".json") or text.lstrip().startswith("{"):
        return parse_native_json(text, name=stem)
    return parse_matpower(text, name=stem)
