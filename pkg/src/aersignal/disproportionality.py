"""Classical 2x2 disproportionality baselines.

For a drug/reaction pair the contingency table over reports is

    a: reports with the drug and the reaction
    b: reports with the drug, without the reaction
    c: reports without the drug, with the reaction
    d: reports with neither

PRR = (a / (a + b)) / (c / (c + d)); ROR = (a * d) / (b * c). A ratio whose
denominator chain hits zero has no value; that outcome is a first-class
result carrying the empty cell, never an exception.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Union

from .vocab import GlobalCounts, Vocabulary

METRICS = ("prr", "ror")


@dataclass(frozen=True)
class ContingencyCounts:
    a: int
    b: int
    c: int
    d: int

    def __post_init__(self) -> None:
        for name in "abcd":
            if getattr(self, name) < 0:
                raise ValueError(f"negative cell {name}")

    @property
    def total(self) -> int:
        return self.a + self.b + self.c + self.d


@dataclass(frozen=True)
class MetricResult:
    """A metric value, or the reason there is none."""

    value: float | None
    undefined_reason: str | None = None

    @property
    def defined(self) -> bool:
        return self.value is not None

    def render(self) -> str:
        return repr(self.value) if self.defined else "UNDEF"


def contingency(
    counts: GlobalCounts,
    drug_vocab: Vocabulary,
    ade_vocab: Vocabulary,
    drug: str,
    ade: str,
) -> ContingencyCounts:
    """Build the 2x2 table for a (drug, reaction) pair from global counts.

    Unknown terms raise UnknownTermError (via the vocabularies).
    """
    di = drug_vocab.id_of(drug)
    ai = ade_vocab.id_of(ade)
    a = counts.pair(di, ai)
    drug_total = int(counts.drug_reports[di])
    ade_total = int(counts.ade_reports[ai])
    b = drug_total - a
    c = ade_total - a
    d = counts.total_reports - drug_total - c
    return ContingencyCounts(a=a, b=b, c=c, d=d)


def prr(table: ContingencyCounts) -> MetricResult:
    """Proportional reporting ratio."""
    if table.a + table.b == 0:
        return MetricResult(None, "a+b=0")
    if table.c == 0:
        return MetricResult(None, "c=0")
    numerator = table.a / (table.a + table.b)
    denominator = table.c / (table.c + table.d)
    return MetricResult(numerator / denominator)


def ror(table: ContingencyCounts) -> MetricResult:
    """Reporting odds ratio."""
    if table.b == 0:
        return MetricResult(None, "b=0")
    if table.c == 0:
        return MetricResult(None, "c=0")
    if table.d == 0:
        return MetricResult(None, "d=0")
    return MetricResult((table.a * table.d) / (table.b * table.c))


def compute_metric(
    metric: str,
    counts: GlobalCounts,
    drug_vocab: Vocabulary,
    ade_vocab: Vocabulary,
    drug: str,
    ade: str,
) -> MetricResult:
    table = contingency(counts, drug_vocab, ade_vocab, drug, ade)
    if metric == "prr":
        return prr(table)
    if metric == "ror":
        return ror(table)
    raise ValueError(f"unknown metric {metric!r}")


def write_scores(
    rows: Iterable[tuple[str, str, str, MetricResult]],
    sink: Union[str, Path, IO[str]],
) -> int:
    """Emit drug<TAB>ade<TAB>metric<TAB>value lines; UNDEF for missing values."""
    own = isinstance(sink, (str, Path))
    stream: IO[str] = open(sink, "w", encoding="utf-8", newline="\n") if own else sink
    n = 0
    try:
        for drug, ade, metric, result in rows:
            stream.write(f"{drug}\t{ade}\t{metric}\t{result.render()}\n")
            n += 1
    finally:
        if own:
            stream.close()
    return n
