"""Parsing and normalization of spontaneous adverse-event reports.

Two input shapes are supported: the quarterly ASCII extract layout
(one $-delimited table per entity, joined on the report identifier) and a
single-file canonical TSV that the rest of the pipeline consumes. Both parse
into the same Report records. Drug names are normalized; reaction terms are
carried verbatim.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import IO, Iterable, Iterator, Sequence, Union

from .errors import ParseError

_WS_RUN = re.compile(r"\s+")
_TRAILING_JUNK = re.compile(r"[^a-z0-9_]+$")

# Minimal percent-escape for reserved characters inside TSV fields. Normal
# data contains none of these, so encoded files equal the naive encoding.
_ESCAPE_MAP = {"%": "%25", ";": "%3B", "\t": "%09", "\n": "%0A", "\r": "%0D"}
_UNESCAPE_MAP = {v: k for k, v in _ESCAPE_MAP.items()}
_ESCAPE_RE = re.compile(r"[%;\t\n\r]")
_UNESCAPE_RE = re.compile(r"%(?:25|3B|09|0A|0D)")


def escape_field(value: str) -> str:
    return _ESCAPE_RE.sub(lambda m: _ESCAPE_MAP[m.group(0)], value)


def unescape_field(value: str) -> str:
    return _UNESCAPE_RE.sub(lambda m: _UNESCAPE_MAP[m.group(0)], value)


def normalize_drugname(raw: str) -> str:
    """Normalize a verbatim drug name to a stable token.

    Lowercase, collapse every whitespace run to a single underscore, then
    strip trailing characters until the last character is in [a-z0-9_] (or
    the string is empty). Internal punctuation is preserved. Idempotent; the
    result is non-empty whenever the input contains an ASCII alphanumeric.
    """
    lowered = _WS_RUN.sub("_", raw.lower())
    return _TRAILING_JUNK.sub("", lowered)


class Role(str, Enum):
    """Reported involvement of a drug in an event."""

    PS = "PS"  # primary suspect
    SS = "SS"  # secondary suspect
    C = "C"    # concomitant
    I = "I"    # interacting

    @classmethod
    def parse(cls, code: str) -> "Role | None":
        """Return the role for a code, or None when the code is unknown."""
        try:
            return cls(code.strip().upper())
        except ValueError:
            return None


class RoleFilter(str, Enum):
    """Which drug mentions a downstream consumer keeps."""

    FULL = "FULL"          # every mention, any role
    PS = "PS"              # primary suspects only
    SUSPECT = "SUSPECT"    # primary and secondary suspects

    def admits(self, role: Role) -> bool:
        if self is RoleFilter.FULL:
            return True
        if self is RoleFilter.PS:
            return role is Role.PS
        return role in (Role.PS, Role.SS)


_DATE_CANONICAL = re.compile(r"^(\d{4})(?:Q([1-4]))?$")
_DATE_NUMERIC = re.compile(r"^(\d{4})(\d{2})?(\d{2})?$")


@dataclass(frozen=True)
class EventDate:
    """Event date at year or quarter precision."""

    year: int
    quarter: int | None = None

    def __post_init__(self) -> None:
        if not (1900 <= self.year <= 2100):
            raise ValueError(f"implausible year {self.year}")
        if self.quarter is not None and self.quarter not in (1, 2, 3, 4):
            raise ValueError(f"quarter out of range: {self.quarter}")

    @classmethod
    def parse(cls, text: str) -> "EventDate | None":
        """Parse YYYY, YYYYQn, YYYYMM or YYYYMMDD; None for empty/garbage."""
        text = text.strip()
        if not text:
            return None
        m = _DATE_CANONICAL.match(text)
        if m:
            q = int(m.group(2)) if m.group(2) else None
            return cls(int(m.group(1)), q)
        m = _DATE_NUMERIC.match(text)
        if m:
            year = int(m.group(1))
            month = int(m.group(2)) if m.group(2) else None
            if month is not None and not (1 <= month <= 12):
                return None
            quarter = (month - 1) // 3 + 1 if month else None
            try:
                return cls(year, quarter)
            except ValueError:
                return None
        return None

    def canonical(self) -> str:
        return f"{self.year}Q{self.quarter}" if self.quarter else f"{self.year}"

    def start_key(self) -> tuple[int, int]:
        return (self.year, self.quarter or 1)

    def end_key(self) -> tuple[int, int]:
        return (self.year, self.quarter or 4)


@dataclass(frozen=True)
class DrugMention:
    """One drug named on a report.

    normalized_name is non-empty whenever raw_name contains an alphanumeric;
    mentions whose normalized name comes out empty are dropped at parse time.
    """

    raw_name: str
    normalized_name: str
    role: Role

    @classmethod
    def build(cls, raw_name: str, role: Role) -> "DrugMention | None":
        name = normalize_drugname(raw_name)
        if not name:
            return None
        return cls(raw_name=raw_name, normalized_name=name, role=role)


@dataclass
class Report:
    """One spontaneous report: deduplicated drugs and verbatim reaction terms."""

    report_id: str
    event_date: EventDate | None
    drugs: list[DrugMention] = field(default_factory=list)
    adverse_events: list[str] = field(default_factory=list)


@dataclass
class ParseCounters:
    """Per-parse tallies of dropped or repaired input."""

    reports: int = 0
    malformed_lines: int = 0
    empty_drug_names: int = 0
    unknown_roles: int = 0
    duplicate_mentions: int = 0
    duplicate_events: int = 0

    def as_dict(self) -> dict[str, int]:
        return dict(vars(self))


def _dedupe_report(
    report_id: str,
    date: EventDate | None,
    mentions: Iterable[DrugMention],
    events: Iterable[str],
    counters: ParseCounters,
) -> Report:
    seen_drugs: set[tuple[str, Role]] = set()
    drugs: list[DrugMention] = []
    for m in mentions:
        key = (m.normalized_name, m.role)
        if key in seen_drugs:
            counters.duplicate_mentions += 1
            continue
        seen_drugs.add(key)
        drugs.append(m)
    seen_events: set[str] = set()
    ades: list[str] = []
    for pt in events:
        if pt in seen_events:
            counters.duplicate_events += 1
            continue
        seen_events.add(pt)
        ades.append(pt)
    counters.reports += 1
    return Report(report_id=report_id, event_date=date, drugs=drugs, adverse_events=ades)


# ---------------------------------------------------------------------------
# Canonical TSV
#
# One report per line:
#   report_id <TAB> date <TAB> role:drugname;role:drugname <TAB> pt;pt
# Date is YYYYQn or YYYY, may be empty. Fields use the percent-escape above.
# ---------------------------------------------------------------------------


def parse_canonical(
    source: Union[str, Path, IO[str]],
    counters: ParseCounters | None = None,
    strict: bool = False,
) -> Iterator[Report]:
    """Yield Reports from a canonical TSV stream or path."""
    counters = counters if counters is not None else ParseCounters()
    own = isinstance(source, (str, Path))
    stream: IO[str] = open(source, "r", encoding="utf-8") if own else source
    try:
        for lineno, line in enumerate(stream, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                if strict:
                    raise ParseError(f"line {lineno}: expected 4 fields, got {len(parts)}")
                counters.malformed_lines += 1
                continue
            rid = unescape_field(parts[0])
            date = EventDate.parse(parts[1])
            mentions: list[DrugMention] = []
            if parts[2]:
                for chunk in parts[2].split(";"):
                    role_code, sep, name = chunk.partition(":")
                    if not sep:
                        counters.malformed_lines += 1
                        continue
                    role = Role.parse(role_code)
                    if role is None:
                        counters.unknown_roles += 1
                        role = Role.C
                    mention = DrugMention.build(unescape_field(name), role)
                    if mention is None:
                        counters.empty_drug_names += 1
                        continue
                    mentions.append(mention)
            events = [unescape_field(p) for p in parts[3].split(";") if p] if parts[3] else []
            yield _dedupe_report(rid, date, mentions, events, counters)
    finally:
        if own:
            stream.close()


def write_canonical(reports: Iterable[Report], sink: Union[str, Path, IO[str]]) -> int:
    """Serialize reports to canonical TSV. Returns the number of lines written."""
    own = isinstance(sink, (str, Path))
    stream: IO[str] = open(sink, "w", encoding="utf-8", newline="\n") if own else sink
    n = 0
    try:
        for report in reports:
            date = report.event_date.canonical() if report.event_date else ""
            drugs = ";".join(
                f"{m.role.value}:{escape_field(m.normalized_name)}" for m in report.drugs
            )
            events = ";".join(escape_field(pt) for pt in report.adverse_events)
            stream.write(f"{escape_field(report.report_id)}\t{date}\t{drugs}\t{events}\n")
            n += 1
    finally:
        if own:
            stream.close()
    return n


# ---------------------------------------------------------------------------
# Quarterly ASCII extracts
#
# Each table is $-delimited with a header row. Column positions vary by era,
# so a colmap file names them:  key = COLUMN_NAME  lines, '#' comments.
# Required keys: drug_id, drug_name, drug_role, reac_id, reac_pt,
# demo_id, demo_date.
# ---------------------------------------------------------------------------

_COLMAP_KEYS = ("drug_id", "drug_name", "drug_role", "reac_id", "reac_pt", "demo_id", "demo_date")


def load_colmap(source: Union[str, Path, IO[str]]) -> dict[str, str]:
    """Read a colmap file into {key: column_name}."""
    own = isinstance(source, (str, Path))
    stream: IO[str] = open(source, "r", encoding="utf-8") if own else source
    mapping: dict[str, str] = {}
    try:
        for lineno, line in enumerate(stream, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ParseError(f"colmap line {lineno}: expected key=value")
            mapping[key.strip()] = value.strip()
    finally:
        if own:
            stream.close()
    missing = [k for k in _COLMAP_KEYS if k not in mapping]
    if missing:
        raise ParseError(f"colmap missing keys: {', '.join(missing)}")
    return mapping


def _ascii_rows(
    source: Union[str, Path, IO[str]],
    wanted: Sequence[str],
    counters: ParseCounters,
    strict: bool,
    label: str,
) -> Iterator[list[str]]:
    """Yield the wanted columns from a $-delimited table, header-driven."""
    own = isinstance(source, (str, Path))
    stream: IO[str] = open(source, "r", encoding="utf-8", errors="replace") if own else source
    try:
        header_line = stream.readline()
        if not header_line:
            return
        header = [h.strip() for h in header_line.rstrip("\n").split("$")]
        try:
            idx = [header.index(col) for col in wanted]
        except ValueError as exc:
            raise ParseError(f"{label}: header missing column ({exc})") from exc
        width = len(header)
        for lineno, line in enumerate(stream, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("$")
            if len(parts) != width:
                if strict:
                    raise ParseError(
                        f"{label} line {lineno}: expected {width} columns, got {len(parts)}"
                    )
                counters.malformed_lines += 1
                continue
            yield [parts[i] for i in idx]
    finally:
        if own:
            stream.close()


def parse_ascii_tables(
    drug_source: Union[str, Path, IO[str]],
    reac_source: Union[str, Path, IO[str]],
    demo_source: Union[str, Path, IO[str]] | None,
    colmap: dict[str, str],
    counters: ParseCounters | None = None,
    strict: bool = False,
) -> Iterator[Report]:
    """Join drug, reaction and (optional) demo tables into Reports.

    Reports come out ordered by first appearance: drug file first, then ids
    seen only in the reaction or demo files. Tables are held in memory for
    the join; the quarterly extracts are modest in size.
    """
    counters = counters if counters is not None else ParseCounters()

    order: list[str] = []
    seen_ids: set[str] = set()
    drug_rows: dict[str, list[DrugMention]] = {}
    reac_rows: dict[str, list[str]] = {}
    dates: dict[str, EventDate | None] = {}

    def note(rid: str) -> None:
        if rid not in seen_ids:
            seen_ids.add(rid)
            order.append(rid)

    for rid, name, role_code in _ascii_rows(
        drug_source, (colmap["drug_id"], colmap["drug_name"], colmap["drug_role"]), counters, strict, "drug table"
    ):
        rid = rid.strip()
        if not rid:
            counters.malformed_lines += 1
            continue
        note(rid)
        role = Role.parse(role_code)
        if role is None:
            counters.unknown_roles += 1
            role = Role.C
        mention = DrugMention.build(name, role)
        if mention is None:
            counters.empty_drug_names += 1
            drug_rows.setdefault(rid, [])
            continue
        drug_rows.setdefault(rid, []).append(mention)

    for rid, pt in _ascii_rows(
        reac_source, (colmap["reac_id"], colmap["reac_pt"]), counters, strict, "reaction table"
    ):
        rid = rid.strip()
        if not rid:
            counters.malformed_lines += 1
            continue
        note(rid)
        pt = pt.strip()
        if pt:
            reac_rows.setdefault(rid, []).append(pt)

    if demo_source is not None:
        for rid, raw_date in _ascii_rows(
            demo_source, (colmap["demo_id"], colmap["demo_date"]), counters, strict, "demo table"
        ):
            rid = rid.strip()
            if not rid:
                counters.malformed_lines += 1
                continue
            note(rid)
            if rid not in dates:
                dates[rid] = EventDate.parse(raw_date)
            elif dates[rid] is None:
                dates[rid] = EventDate.parse(raw_date)

    for rid in order:
        yield _dedupe_report(
            rid,
            dates.get(rid),
            drug_rows.get(rid, ()),
            reac_rows.get(rid, ()),
            counters,
        )


# ---------------------------------------------------------------------------
# Filtering
# ---------------------------------------------------------------------------


@dataclass
class FilterCounters:
    kept: int = 0
    dropped_no_drugs: int = 0
    dropped_no_events: int = 0
    dropped_by_date: int = 0

    def as_dict(self) -> dict[str, int]:
        return dict(vars(self))


def _coerce_cutoff(cutoff: Union[EventDate, str, int, None]) -> EventDate | None:
    if cutoff is None or isinstance(cutoff, EventDate):
        return cutoff
    if isinstance(cutoff, int):
        return EventDate(cutoff)
    parsed = EventDate.parse(str(cutoff))
    if parsed is None:
        raise ValueError(f"unparseable cutoff: {cutoff!r}")
    return parsed


def filter_reports(
    reports: Iterable[Report],
    role_filter: RoleFilter = RoleFilter.FULL,
    cutoff: Union[EventDate, str, int, None] = None,
    counters: FilterCounters | None = None,
) -> Iterator[Report]:
    """Apply the role filter and date cutoff, dropping degenerate reports.

    A report survives when, after the role filter, it still has at least one
    drug and one reaction term, and its date does not fall after the cutoff.
    Reports without a date are kept: absence of a date is not evidence the
    report is out of window.
    """
    counters = counters if counters is not None else FilterCounters()
    cutoff_date = _coerce_cutoff(cutoff)
    cutoff_key = cutoff_date.end_key() if cutoff_date else None
    for report in reports:
        if cutoff_key is not None and report.event_date is not None:
            if report.event_date.start_key() > cutoff_key:
                counters.dropped_by_date += 1
                continue
        drugs = [m for m in report.drugs if role_filter.admits(m.role)]
        if not drugs:
            counters.dropped_no_drugs += 1
            continue
        if not report.adverse_events:
            counters.dropped_no_events += 1
            continue
        counters.kept += 1
        yield Report(
            report_id=report.report_id,
            event_date=report.event_date,
            drugs=drugs,
            adverse_events=list(report.adverse_events),
        )
