"""Vocabularies, report-level co-occurrence events, and global 2x2 counts.

Frequencies here are report-level: a term counts once per report no matter
how often the report mentions it. Events are the per-report cross product of
distinct drugs and distinct reaction terms; the same pair never fires twice
for one report.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator, Union

import numpy as np

from .errors import ConfigurationError, UnknownTermError
from .ingest import Report, escape_field, unescape_field


@dataclass
class Vocabulary:
    """Terms with dense contiguous ids and report-level frequencies."""

    terms: list[str]
    frequency: list[int]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if len(self.terms) != len(self.frequency):
            raise ValueError("terms and frequency length mismatch")
        self.index = {t: i for i, t in enumerate(self.terms)}
        if len(self.index) != len(self.terms):
            raise ValueError("duplicate terms in vocabulary")

    def __len__(self) -> int:
        return len(self.terms)

    def __contains__(self, term: str) -> bool:
        return term in self.index

    def id_of(self, term: str) -> int:
        try:
            return self.index[term]
        except KeyError:
            raise UnknownTermError(term) from None

    def get(self, term: str) -> int | None:
        return self.index.get(term)

    def save(self, sink: Union[str, Path, IO[str]]) -> None:
        """Write term<TAB>id<TAB>frequency lines in id order."""
        own = isinstance(sink, (str, Path))
        stream: IO[str] = open(sink, "w", encoding="utf-8", newline="\n") if own else sink
        try:
            for i, term in enumerate(self.terms):
                stream.write(f"{escape_field(term)}\t{i}\t{self.frequency[i]}\n")
        finally:
            if own:
                stream.close()

    @classmethod
    def load(cls, source: Union[str, Path, IO[str]]) -> "Vocabulary":
        own = isinstance(source, (str, Path))
        stream: IO[str] = open(source, "r", encoding="utf-8") if own else source
        terms: list[str] = []
        freqs: list[int] = []
        try:
            for lineno, line in enumerate(stream, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise ValueError(f"vocab line {lineno}: expected 3 fields")
                term, id_text, freq_text = parts
                if int(id_text) != len(terms):
                    raise ValueError(f"vocab line {lineno}: ids must be dense and in order")
                terms.append(unescape_field(term))
                freqs.append(int(freq_text))
        finally:
            if own:
                stream.close()
        return cls(terms=terms, frequency=freqs)


def build_vocabularies(
    reports: Iterable[Report],
    min_count: int = 1,
) -> tuple[Vocabulary, Vocabulary]:
    """Count terms once per report and keep those seen in >= min_count reports.

    Returns (drug_vocab, ade_vocab). Ids are assigned in descending frequency
    order, ties broken by term, so ids are corpus-order independent.
    """
    if min_count < 1:
        raise ConfigurationError(f"min_count must be >= 1, got {min_count}")
    drug_counts: Counter[str] = Counter()
    ade_counts: Counter[str] = Counter()
    for report in reports:
        drug_counts.update({m.normalized_name for m in report.drugs})
        ade_counts.update(set(report.adverse_events))

    def finalize(counts: Counter[str]) -> Vocabulary:
        kept = [(t, c) for t, c in counts.items() if c >= min_count]
        kept.sort(key=lambda tc: (-tc[1], tc[0]))
        return Vocabulary(terms=[t for t, _ in kept], frequency=[c for _, c in kept])

    return finalize(drug_counts), finalize(ade_counts)


@dataclass(frozen=True)
class CooccurrenceEvent:
    """One (reaction term, drug) co-occurrence inside one report."""

    report_id: str
    ade_id: int
    drug_id: int


def emit_events(
    reports: Iterable[Report],
    drug_vocab: Vocabulary,
    ade_vocab: Vocabulary,
) -> Iterator[CooccurrenceEvent]:
    """Yield the distinct (ade, drug) pairs of each report, in report order.

    Terms missing from a vocabulary (pruned by min_count) are skipped. Within
    a report, events iterate reaction-major in first-mention order.
    """
    for report in reports:
        drug_ids: list[int] = []
        seen_d: set[int] = set()
        for m in report.drugs:
            di = drug_vocab.get(m.normalized_name)
            if di is not None and di not in seen_d:
                seen_d.add(di)
                drug_ids.append(di)
        if not drug_ids:
            continue
        seen_a: set[int] = set()
        for pt in report.adverse_events:
            ai = ade_vocab.get(pt)
            if ai is None or ai in seen_a:
                continue
            seen_a.add(ai)
            for di in drug_ids:
                yield CooccurrenceEvent(report_id=report.report_id, ade_id=ai, drug_id=di)


@dataclass
class GlobalCounts:
    """Report-level marginals and pair counts for 2x2 tables.

    total_reports counts every report that reached the accumulator, including
    reports contributing no in-vocabulary pair.
    """

    n_drugs: int
    n_ades: int
    total_reports: int = 0
    drug_reports: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    ade_reports: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    pair_reports: dict[tuple[int, int], int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.drug_reports.size == 0:
            self.drug_reports = np.zeros(self.n_drugs, dtype=np.int64)
        if self.ade_reports.size == 0:
            self.ade_reports = np.zeros(self.n_ades, dtype=np.int64)

    def pair(self, drug_id: int, ade_id: int) -> int:
        return self.pair_reports.get((drug_id, ade_id), 0)

    def merge(self, other: "GlobalCounts") -> "GlobalCounts":
        """Add another shard counted over a disjoint set of reports."""
        if (self.n_drugs, self.n_ades) != (other.n_drugs, other.n_ades):
            raise ValueError("cannot merge counts over different vocabularies")
        merged = GlobalCounts(self.n_drugs, self.n_ades)
        merged.total_reports = self.total_reports + other.total_reports
        merged.drug_reports = self.drug_reports + other.drug_reports
        merged.ade_reports = self.ade_reports + other.ade_reports
        merged.pair_reports = dict(self.pair_reports)
        for key, value in other.pair_reports.items():
            merged.pair_reports[key] = merged.pair_reports.get(key, 0) + value
        return merged

    def save(self, sink: Union[str, Path, IO[str]]) -> None:
        own = isinstance(sink, (str, Path))
        stream: IO[str] = open(sink, "w", encoding="utf-8", newline="\n") if own else sink
        try:
            stream.write(f"shape\t{self.n_drugs}\t{self.n_ades}\n")
            stream.write(f"total\t{self.total_reports}\n")
            for i in range(self.n_drugs):
                if self.drug_reports[i]:
                    stream.write(f"drug\t{i}\t{int(self.drug_reports[i])}\n")
            for j in range(self.n_ades):
                if self.ade_reports[j]:
                    stream.write(f"ade\t{j}\t{int(self.ade_reports[j])}\n")
            for (di, ai) in sorted(self.pair_reports):
                stream.write(f"pair\t{di}\t{ai}\t{self.pair_reports[(di, ai)]}\n")
        finally:
            if own:
                stream.close()

    @classmethod
    def load(cls, source: Union[str, Path, IO[str]]) -> "GlobalCounts":
        own = isinstance(source, (str, Path))
        stream: IO[str] = open(source, "r", encoding="utf-8") if own else source
        counts: GlobalCounts | None = None
        total = 0
        try:
            for lineno, line in enumerate(stream, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                kind = parts[0]
                if kind == "shape":
                    counts = cls(n_drugs=int(parts[1]), n_ades=int(parts[2]))
                elif counts is None:
                    raise ValueError(f"counts line {lineno}: shape line must come first")
                elif kind == "total":
                    total = int(parts[1])
                elif kind == "drug":
                    counts.drug_reports[int(parts[1])] = int(parts[2])
                elif kind == "ade":
                    counts.ade_reports[int(parts[1])] = int(parts[2])
                elif kind == "pair":
                    counts.pair_reports[(int(parts[1]), int(parts[2]))] = int(parts[3])
                else:
                    raise ValueError(f"counts line {lineno}: unknown record {kind!r}")
        finally:
            if own:
                stream.close()
        if counts is None:
            raise ValueError("empty counts file")
        counts.total_reports = total
        return counts


def accumulate_counts(
    reports: Iterable[Report],
    drug_vocab: Vocabulary,
    ade_vocab: Vocabulary,
) -> GlobalCounts:
    """Count, once per report, drug occurrences, term occurrences, and pairs."""
    counts = GlobalCounts(n_drugs=len(drug_vocab), n_ades=len(ade_vocab))
    for report in reports:
        counts.total_reports += 1
        drug_ids = {di for m in report.drugs if (di := drug_vocab.get(m.normalized_name)) is not None}
        ade_ids = {ai for pt in report.adverse_events if (ai := ade_vocab.get(pt)) is not None}
        for di in drug_ids:
            counts.drug_reports[di] += 1
        for ai in ade_ids:
            counts.ade_reports[ai] += 1
        for di in drug_ids:
            for ai in ade_ids:
                key = (di, ai)
                counts.pair_reports[key] = counts.pair_reports.get(key, 0) + 1
    return counts


def events_as_arrays(
    events: Iterable[CooccurrenceEvent],
) -> tuple[np.ndarray, np.ndarray]:
    """Materialize an event stream into parallel (ade_id, drug_id) arrays."""
    ades: list[int] = []
    drugs: list[int] = []
    for ev in events:
        ades.append(ev.ade_id)
        drugs.append(ev.drug_id)
    return (np.asarray(ades, dtype=np.int64), np.asarray(drugs, dtype=np.int64))
