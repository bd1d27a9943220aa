"""
Topology documents: line-oriented `[section]` blocks of `key = value` pairs.

    [signal]        bandwidth, rolloff, sample interval, block size, carrier
    [lptv]          mains frequency and harmonic order (optional)
    [termination]   source and load impedances
    [element]       one per network element, source side first

Units are part of the key names. `#` starts a comment.
"""
import logging
import math
import re
from dataclasses import dataclass, field, fields
from typing import NamedTuple, Optional, Tuple

from src.models.kernels import FILTER_KINDS
from src.models.lptv import TvImpedance
from src.models.twoport import ImpedanceSpec
from src.utils.validation import ValidationError

logger = logging.getLogger(__name__)

MAX_DOCUMENT_BYTES = 1 << 20

ELEMENT_KINDS = ("cable", "shunt", "series", "bridged_tap", "tv_shunt", "tv_series")
Z_KINDS = ("resistor", "capacitor", "inductor", "open", "short", "series_rlc", "parallel_rc")
TV_MODEL_KINDS = ("two_state", "cosine", "piecewise")

_Z_KEYS = ("z_kind", "r_ohm", "c_f", "l_h")
_TV_KEYS = ("model", "r1_ohm", "r2_ohm", "duty", "r_dc_ohm", "r_ac_ohm", "phase_rad",
            "f0_hz", "states_ohm")
KIND_KEYS = {
    "cable": ("cable", "length_ft"),
    "shunt": _Z_KEYS,
    "series": _Z_KEYS,
    "bridged_tap": ("cable", "length_ft") + _Z_KEYS,
    "tv_shunt": _TV_KEYS,
    "tv_series": _TV_KEYS,
}

SECTION_KEYS = {
    "signal": ("bandwidth_hz", "rolloff", "ts_s", "block_p", "carrier_hz", "filter",
               "energy_threshold"),
    "lptv": ("f0_hz", "harmonic_order"),
    "termination": ("source_kind", "source_r_ohm", "source_c_f", "source_l_h",
                    "load_kind", "load_r_ohm", "load_c_f", "load_l_h"),
    "element": ("kind", "cable", "length_ft") + _Z_KEYS + _TV_KEYS,
}

TEXT_KEYS = {"kind", "cable", "z_kind", "model", "filter", "source_kind", "load_kind"}
INT_KEYS = {"block_p", "harmonic_order"}
LIST_KEYS = {"states_ohm"}

_LABEL = re.compile(r"[A-Za-z0-9_.\-]{1,64}")
_INTEGER = re.compile(r"[+-]?[0-9]{1,18}")


class TopologyError(ValidationError):
    """Parse or resolution error at a position of the document."""

    def __init__(self, message, line, column, expected=()):
        self.line = line
        self.column = column
        self.expected = tuple(expected)
        hint = f" (expected {', '.join(self.expected)})" if self.expected else ""
        super().__init__(f"line {line}, column {column}: {message}{hint}")


@dataclass(frozen=True)
class ElementRecord:
    kind: str
    cable: Optional[str] = None
    length_ft: Optional[float] = None
    z_kind: Optional[str] = None
    r_ohm: Optional[float] = None
    c_f: Optional[float] = None
    l_h: Optional[float] = None
    model: Optional[str] = None
    r1_ohm: Optional[float] = None
    r2_ohm: Optional[float] = None
    duty: Optional[float] = None
    r_dc_ohm: Optional[float] = None
    r_ac_ohm: Optional[float] = None
    phase_rad: Optional[float] = None
    f0_hz: Optional[float] = None
    states_ohm: Tuple[float, ...] = ()
    line: int = field(default=0, compare=False)

    @property
    def time_varying(self):
        return self.kind in ("tv_shunt", "tv_series")

    @property
    def placement(self):
        return "shunt" if self.kind in ("shunt", "bridged_tap", "tv_shunt") else "series"

    def impedance(self):
        """ImpedanceSpec of a shunt/series load or of a bridged-tap termination."""
        return ImpedanceSpec(
            self.z_kind or "open",
            r_ohm=self.r_ohm or 0.0,
            c_f=self.c_f or 0.0,
            l_h=self.l_h or 0.0,
        )

    def tv_impedance(self, f0):
        """TvImpedance of a tv_shunt/tv_series element."""
        f0 = self.f0_hz if self.f0_hz is not None else f0
        if self.model == "two_state":
            return TvImpedance.two_state(
                self.placement, f0, self.r1_ohm, self.r2_ohm,
                0.5 if self.duty is None else self.duty,
            )
        if self.model == "cosine":
            return TvImpedance.cosine(
                self.placement, f0, self.r_dc_ohm, self.r_ac_ohm, self.phase_rad or 0.0
            )
        states = tuple(ImpedanceSpec.resistor(r) for r in self.states_ohm)
        return TvImpedance("piecewise", self.placement, f0, states)


@dataclass(frozen=True)
class TerminationRecord:
    source_kind: str = "resistor"
    source_r_ohm: Optional[float] = None
    source_c_f: Optional[float] = None
    source_l_h: Optional[float] = None
    load_kind: str = "resistor"
    load_r_ohm: Optional[float] = None
    load_c_f: Optional[float] = None
    load_l_h: Optional[float] = None

    def spec(self, side):
        """
        ImpedanceSpec of one end.

        Args:
            side: "source" or "load"

        Returns:
            ImpedanceSpec with unset values read as zero
        """
        return ImpedanceSpec(
            getattr(self, f"{side}_kind"),
            r_ohm=getattr(self, f"{side}_r_ohm") or 0.0,
            c_f=getattr(self, f"{side}_c_f") or 0.0,
            l_h=getattr(self, f"{side}_l_h") or 0.0,
        )


@dataclass(frozen=True)
class SignalRecord:
    bandwidth_hz: float
    rolloff: float = 0.5
    ts_s: Optional[float] = None
    block_p: Optional[int] = None
    carrier_hz: float = 0.0
    filter: str = "raised_cosine"
    energy_threshold: float = 0.9999

    @property
    def sample_interval(self):
        """Ts from the document, or the Nyquist interval of the bandwidth."""
        return self.ts_s if self.ts_s is not None else 0.5 / self.bandwidth_hz


@dataclass(frozen=True)
class LptvRecord:
    f0_hz: float
    harmonic_order: Optional[int] = None


@dataclass(frozen=True)
class TopologyDoc:
    elements: Tuple[ElementRecord, ...]
    termination: TerminationRecord
    signal: SignalRecord
    lptv: Optional[LptvRecord] = None

    @property
    def time_varying(self):
        return any(e.time_varying for e in self.elements)

    @property
    def cable_labels(self):
        """Sorted labels of the cables the elements reference."""
        return sorted({e.cable for e in self.elements if e.cable is not None})


class _Entry(NamedTuple):
    value: str
    line: int
    column: int


class _Section(NamedTuple):
    name: str
    line: int
    column: int
    entries: dict


def _decode(document):
    if isinstance(document, (bytes, bytearray)):
        if len(document) > MAX_DOCUMENT_BYTES:
            raise TopologyError("document exceeds 1 MB", 1, 1)
        try:
            return bytes(document).decode("utf-8")
        except UnicodeDecodeError as e:
            before = bytes(document[: e.start])
            line = before.count(b"\n") + 1
            column = e.start - (before.rfind(b"\n") + 1) + 1
            raise TopologyError("invalid UTF-8", line, column) from None
    if not isinstance(document, str):
        raise TopologyError("document must be text", 1, 1)
    if len(document) > MAX_DOCUMENT_BYTES:
        raise TopologyError("document exceeds 1 MB", 1, 1)
    return document


def _sections(text):
    sections = []
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        stripped = line.strip()
        if not stripped:
            continue
        column = len(line) - len(line.lstrip()) + 1
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise TopologyError("unterminated section header", lineno, column, ["]"])
            name = stripped[1:-1].strip()
            if name not in SECTION_KEYS:
                raise TopologyError(f"unknown section '{name[:32]}'", lineno, column,
                                    [f"[{s}]" for s in SECTION_KEYS])
            current = _Section(name, lineno, column, {})
            sections.append(current)
            continue
        if "=" not in stripped:
            raise TopologyError("expected a key = value pair", lineno, column, ["="])
        if current is None:
            raise TopologyError("key outside a section", lineno, column, ["[section]"])
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in SECTION_KEYS[current.name]:
            raise TopologyError(f"unknown key '{key[:32]}' in [{current.name}]", lineno, column,
                                SECTION_KEYS[current.name])
        if key in current.entries:
            raise TopologyError(f"duplicate key '{key}'", lineno, column)
        value_column = len(line) - len(value.lstrip()) + 1
        value = value.strip()
        if not value:
            raise TopologyError(f"empty value for '{key}'", lineno, value_column, ["value"])
        current.entries[key] = _Entry(value, lineno, value_column)
    return sections


def _number(entry, key):
    try:
        value = float(entry.value)
    except ValueError:
        value = math.nan
    if not math.isfinite(value):
        raise TopologyError(f"'{key}' is not a finite number", entry.line, entry.column,
                            ["finite number"])
    return value


def _convert(entry, key):
    if key in TEXT_KEYS:
        if not _LABEL.fullmatch(entry.value):
            raise TopologyError(f"'{key}' is not a valid name", entry.line, entry.column,
                                ["name"])
        return entry.value
    if key in INT_KEYS:
        if not _INTEGER.fullmatch(entry.value):
            raise TopologyError(f"'{key}' is not an integer", entry.line, entry.column,
                                ["integer"])
        return int(entry.value)
    if key in LIST_KEYS:
        parts = entry.value.split(",")
        if len(parts) > 4096:
            raise TopologyError(f"'{key}' lists too many values", entry.line, entry.column)
        return tuple(_number(_Entry(p.strip(), entry.line, entry.column), key) for p in parts)
    return _number(entry, key)


def _values(section):
    return {key: _convert(entry, key) for key, entry in section.entries.items()}


def _fail(section, key, message, expected=()):
    entry = section.entries.get(key)
    if entry is None:
        raise TopologyError(message, section.line, section.column, expected)
    raise TopologyError(message, entry.line, entry.column, expected)


def _require(section, values, key):
    if key not in values:
        _fail(section, key, f"[{section.name}] needs '{key}'", [key])
    return values[key]


def _check(section, key, ok, message):
    if not ok:
        _fail(section, key, message)


def _choice(section, values, key, allowed):
    if key in values and values[key] not in allowed:
        _fail(section, key, f"unknown {key} '{values[key]}'", allowed)


def _signal(section):
    values = _values(section)
    bandwidth = _require(section, values, "bandwidth_hz")
    _check(section, "bandwidth_hz", bandwidth > 0, "bandwidth_hz must be positive")
    _choice(section, values, "filter", FILTER_KINDS)
    record = SignalRecord(**values)
    _check(section, "rolloff", 0 <= record.rolloff <= 1, "rolloff must lie in [0, 1]")
    _check(section, "ts_s", record.ts_s is None or record.ts_s > 0, "ts_s must be positive")
    _check(section, "block_p", record.block_p is None or record.block_p >= 2,
           "block_p must be at least 2")
    _check(section, "carrier_hz", record.carrier_hz >= 0, "carrier_hz must not be negative")
    _check(section, "energy_threshold", 0 < record.energy_threshold <= 1,
           "energy_threshold must lie in (0, 1]")
    if record.filter != "none":
        _check(section, "ts_s", record.bandwidth_hz <= 0.5 / record.sample_interval * (1 + 1e-12),
               "bandwidth_hz exceeds the Nyquist frequency of ts_s")
    return record


def _lptv(section):
    values = _values(section)
    f0 = _require(section, values, "f0_hz")
    _check(section, "f0_hz", f0 > 0, "f0_hz must be positive")
    order = values.get("harmonic_order")
    _check(section, "harmonic_order", order is None or order >= 0,
           "harmonic_order must not be negative")
    return LptvRecord(**values)


def _termination(section):
    values = _values(section)
    for side in ("source", "load"):
        _choice(section, values, f"{side}_kind", Z_KINDS)
    record = TerminationRecord(**values)
    if record.source_kind in ("open",):
        _fail(section, "source_kind", "the source cannot be open")
    for side in ("source", "load"):
        if getattr(record, f"{side}_kind") == "resistor":
            r = _require(section, values, f"{side}_r_ohm")
            if side == "source":
                _check(section, "source_r_ohm", r >= 0, "source_r_ohm must not be negative")
            else:
                _check(section, "load_r_ohm", r > 0, "load_r_ohm must be positive")
        try:
            record.spec(side)
        except ValidationError as e:
            _fail(section, f"{side}_kind", str(e))
    return record


def _element(section, f0, cables):
    values = _values(section)
    kind = _require(section, values, "kind")
    _choice(section, values, "kind", ELEMENT_KINDS)
    for key in values:
        if key != "kind" and key not in KIND_KEYS[kind]:
            _fail(section, key, f"'{key}' does not apply to a {kind} element", KIND_KEYS[kind])
    record = ElementRecord(line=section.line, **values)

    if kind in ("cable", "bridged_tap"):
        label = _require(section, values, "cable")
        if cables is not None and label not in cables:
            _fail(section, "cable", f"unknown cable '{label}'", sorted(cables))
        length = _require(section, values, "length_ft")
        _check(section, "length_ft", length > 0, "length_ft must be positive")

    if kind in ("shunt", "series", "bridged_tap"):
        if kind != "bridged_tap":
            _require(section, values, "z_kind")
        _choice(section, values, "z_kind", Z_KINDS)
        if record.z_kind == "resistor":
            r = _require(section, values, "r_ohm")
            _check(section, "r_ohm", r > 0 or kind == "series", "r_ohm must be positive")
        if kind == "shunt" and record.z_kind == "short":
            _fail(section, "z_kind", "a shunt short would short the line")
        if kind == "series" and record.z_kind == "open":
            _fail(section, "z_kind", "a series open would cut the line")
        try:
            record.impedance()
        except ValidationError as e:
            _fail(section, "z_kind", str(e))

    if record.time_varying:
        model = _require(section, values, "model")
        _choice(section, values, "model", TV_MODEL_KINDS)
        needed = {
            "two_state": ("r1_ohm", "r2_ohm"),
            "cosine": ("r_dc_ohm", "r_ac_ohm"),
            "piecewise": ("states_ohm",),
        }[model]
        for key in needed:
            _require(section, values, key)
        if record.f0_hz is None and f0 is None:
            _fail(section, "f0_hz", "time-varying element needs f0_hz or an [lptv] section",
                  ["f0_hz"])
        for key in ("r1_ohm", "r2_ohm"):
            _check(section, key, values.get(key, 1.0) > 0, f"{key} must be positive")
        _check(section, "states_ohm", all(r > 0 for r in record.states_ohm),
               "states_ohm must be positive")
        _check(section, "f0_hz", values.get("f0_hz", 1.0) > 0, "f0_hz must be positive")
        try:
            record.tv_impedance(f0)
        except ValidationError as e:
            _fail(section, "model", str(e))
    return record


def _single(sections, name):
    found = [s for s in sections if s.name == name]
    if len(found) > 1:
        second = found[1]
        raise TopologyError(f"duplicate [{name}] section", second.line, second.column)
    return found[0] if found else None


def parse(document, cables=None):
    """
    Parse a topology document.

    Args:
        document: Text (or UTF-8 bytes)
        cables: Optional cable library; labels are resolved against it when given

    Returns:
        TopologyDoc

    Raises:
        TopologyError: With the line and column of the offending text
    """
    text = _decode(document)
    sections = _sections(text)
    end_line = text.count("\n") + 1

    signal = _single(sections, "signal")
    if signal is None:
        raise TopologyError("missing [signal] section", end_line, 1, ["[signal]"])
    termination = _single(sections, "termination")
    if termination is None:
        raise TopologyError("missing [termination] section", end_line, 1, ["[termination]"])
    lptv_section = _single(sections, "lptv")
    elements = [s for s in sections if s.name == "element"]
    if not elements:
        raise TopologyError("no [element] sections", end_line, 1, ["[element]"])

    lptv = _lptv(lptv_section) if lptv_section is not None else None
    f0 = lptv.f0_hz if lptv is not None else None
    doc = TopologyDoc(
        elements=tuple(_element(s, f0, cables) for s in elements),
        termination=_termination(termination),
        signal=_signal(signal),
        lptv=lptv,
    )
    logger.debug(f"Parsed topology with {len(doc.elements)} elements")
    return doc


def _format(value):
    if isinstance(value, str):
        return value
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, int) and not isinstance(value, bool):
        return str(value)
    return repr(float(value))


def _lines(record, skip=("line",)):
    out = []
    for f in fields(record):
        if f.name in skip:
            continue
        value = getattr(record, f.name)
        if value is None or value == ():
            continue
        out.append(f"{f.name} = {_format(value)}")
    return out


def serialize(doc):
    """Canonical text of a TopologyDoc; parse(serialize(doc)) == doc."""
    blocks = [["[signal]"] + _lines(doc.signal)]
    if doc.lptv is not None:
        blocks.append(["[lptv]"] + _lines(doc.lptv))
    blocks.append(["[termination]"] + _lines(doc.termination))
    for element in doc.elements:
        blocks.append(["[element]"] + _lines(element))
    return "\n\n".join("\n".join(block) for block in blocks) + "\n"


def load_topology(path, cables=None):
    """Read and parse a topology file."""
    try:
        with open(path, "rb") as handle:
            data = handle.read(MAX_DOCUMENT_BYTES + 1)
    except OSError as e:
        raise ValidationError(f"Cannot read topology {path}: {e}") from e
    return parse(data, cables)
