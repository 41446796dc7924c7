"""Drug synonym/relation graph built from RRF concept tables.

Two pipe-delimited tables drive the graph: a concept-names table (one row
per atom: concept id, language, atom id, string, suppression flag) and a
relations table (concept id pairs with a relation code). Atoms of the same
concept become a synonym clique; a kept relation connects every surface of
one concept to every surface of the other. Surfaces are normalized with the
same rule the report parser applies to drug names, so graph terms and
corpus tokens live in one namespace.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence, Union

from .errors import ParseError
from .ingest import normalize_drugname

# Column positions in the concept-names table (pipe-delimited).
CONSO_RXCUI = 0
CONSO_LAT = 1
CONSO_RXAUI = 7
CONSO_STR = 14
CONSO_SUPPRESS = 16
CONSO_MIN_FIELDS = 17

# Column positions in the relations table.
REL_RXCUI1 = 0
REL_REL = 3
REL_RXCUI2 = 4
REL_MIN_FIELDS = 5

KEPT_RELATIONS = frozenset({"RN", "RO", "SY"})


@dataclass(frozen=True)
class ConceptAtom:
    """One surface string attached to a concept."""

    rxcui: str
    rxaui: str
    surface: str  # normalized


@dataclass
class LexiconCounters:
    atoms_kept: int = 0
    rejected_rows: int = 0
    suppressed: int = 0
    non_english: int = 0
    empty_surfaces: int = 0
    relations_kept: int = 0
    relations_filtered: int = 0
    self_relations: int = 0

    def as_dict(self) -> dict[str, int]:
        return dict(vars(self))


def parse_concepts(
    source: Union[str, Path, IO[str]],
    counters: LexiconCounters | None = None,
    strict: bool = False,
) -> list[ConceptAtom]:
    """Read the concept-names table, keeping unsuppressed English atoms."""
    counters = counters if counters is not None else LexiconCounters()
    own = isinstance(source, (str, Path))
    stream: IO[str] = open(source, "r", encoding="utf-8", errors="replace") if own else source
    atoms: list[ConceptAtom] = []
    try:
        for lineno, line in enumerate(stream, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("|")
            if len(parts) < CONSO_MIN_FIELDS:
                if strict:
                    raise ParseError(f"concept row {lineno}: {len(parts)} fields, need {CONSO_MIN_FIELDS}")
                counters.rejected_rows += 1
                continue
            if parts[CONSO_LAT] and parts[CONSO_LAT] != "ENG":
                counters.non_english += 1
                continue
            if parts[CONSO_SUPPRESS] in ("Y", "O", "E"):
                counters.suppressed += 1
                continue
            surface = normalize_drugname(parts[CONSO_STR])
            if not surface:
                counters.empty_surfaces += 1
                continue
            atoms.append(
                ConceptAtom(rxcui=parts[CONSO_RXCUI], rxaui=parts[CONSO_RXAUI], surface=surface)
            )
            counters.atoms_kept += 1
    finally:
        if own:
            stream.close()
    return atoms


def parse_relations(
    source: Union[str, Path, IO[str]],
    counters: LexiconCounters | None = None,
    strict: bool = False,
) -> list[tuple[str, str]]:
    """Read the relations table, keeping RN/RO/SY pairs between distinct concepts."""
    counters = counters if counters is not None else LexiconCounters()
    own = isinstance(source, (str, Path))
    stream: IO[str] = open(source, "r", encoding="utf-8", errors="replace") if own else source
    edges: list[tuple[str, str]] = []
    try:
        for lineno, line in enumerate(stream, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("|")
            if len(parts) < REL_MIN_FIELDS:
                if strict:
                    raise ParseError(f"relation row {lineno}: {len(parts)} fields, need {REL_MIN_FIELDS}")
                counters.rejected_rows += 1
                continue
            cui1, rel, cui2 = parts[REL_RXCUI1], parts[REL_REL], parts[REL_RXCUI2]
            if not cui1 or not cui2:
                counters.rejected_rows += 1
                continue
            if rel not in KEPT_RELATIONS:
                counters.relations_filtered += 1
                continue
            if cui1 == cui2:
                counters.self_relations += 1
                continue
            edges.append((cui1, cui2))
            counters.relations_kept += 1
    finally:
        if own:
            stream.close()
    return edges


@dataclass
class LexiconGraph:
    """Undirected term adjacency, stored as a directed mapping.

    Graphs produced by build_graph are symmetric and irreflexive (see
    validate). Graphs loaded from a file keep the file's adjacency verbatim:
    a term listed only on the right-hand side of other terms' lines has no
    entry of its own and is treated as a fixed anchor downstream.
    """

    adjacency: dict[str, list[str]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.adjacency)

    def __contains__(self, term: str) -> bool:
        return term in self.adjacency

    def neighbors(self, term: str) -> list[str]:
        return self.adjacency.get(term, [])

    def terms(self) -> list[str]:
        return sorted(self.adjacency)

    def n_edges(self) -> int:
        """Unordered edge count (directed pairs deduplicated)."""
        seen: set[tuple[str, str]] = set()
        for term, nbs in self.adjacency.items():
            for nb in nbs:
                seen.add((term, nb) if term <= nb else (nb, term))
        return len(seen)

    def validate(self) -> None:
        """Assert symmetry and irreflexivity; raises ValueError otherwise."""
        for term, nbs in self.adjacency.items():
            if len(set(nbs)) != len(nbs):
                raise ValueError(f"duplicate neighbors on {term!r}")
            for nb in nbs:
                if nb == term:
                    raise ValueError(f"self-loop on {term!r}")
                if term not in self.adjacency.get(nb, ()):
                    raise ValueError(f"asymmetric edge {term!r} -> {nb!r}")

    def save(self, sink: Union[str, Path, IO[str]]) -> None:
        """One line per term: the term, then its neighbors, space-separated.

        Terms are whitespace-free by construction (normalized), so the
        format is unambiguous. Lines and neighbor lists are sorted.
        """
        own = isinstance(sink, (str, Path))
        stream: IO[str] = open(sink, "w", encoding="utf-8", newline="\n") if own else sink
        try:
            for term in sorted(self.adjacency):
                nbs = " ".join(sorted(self.adjacency[term]))
                stream.write(f"{term} {nbs}\n" if nbs else f"{term}\n")
        finally:
            if own:
                stream.close()

    @classmethod
    def load(cls, source: Union[str, Path, IO[str]]) -> "LexiconGraph":
        own = isinstance(source, (str, Path))
        stream: IO[str] = open(source, "r", encoding="utf-8") if own else source
        adjacency: dict[str, list[str]] = {}
        try:
            for line in stream:
                tokens = line.split()
                if not tokens:
                    continue
                term, nbs = tokens[0], tokens[1:]
                if term in adjacency:
                    merged = adjacency[term] + [n for n in nbs if n not in adjacency[term]]
                    adjacency[term] = merged
                else:
                    adjacency[term] = list(dict.fromkeys(nbs))
        finally:
            if own:
                stream.close()
        return cls(adjacency=adjacency)


def build_graph(atoms: Iterable[ConceptAtom], edges: Iterable[tuple[str, str]]) -> LexiconGraph:
    """Connect same-concept surfaces pairwise, then related concepts' surfaces.

    The result is symmetric with no self-loops and no duplicate neighbors,
    independent of input row order (neighbor lists come out sorted).
    """
    surfaces: dict[str, set[str]] = {}
    for atom in atoms:
        surfaces.setdefault(atom.rxcui, set()).add(atom.surface)

    adjacency: dict[str, set[str]] = {}

    def connect(a: str, b: str) -> None:
        if a == b:
            return
        adjacency.setdefault(a, set()).add(b)
        adjacency.setdefault(b, set()).add(a)

    for cui_surfaces in surfaces.values():
        ordered = sorted(cui_surfaces)
        for i, a in enumerate(ordered):
            for b in ordered[i + 1:]:
                connect(a, b)

    for cui1, cui2 in edges:
        for a in surfaces.get(cui1, ()):
            for b in surfaces.get(cui2, ()):
                connect(a, b)

    return LexiconGraph(adjacency={t: sorted(nbs) for t, nbs in sorted(adjacency.items())})


def parse_rrf(
    conso_source: Union[str, Path, IO[str]],
    rel_source: Union[str, Path, IO[str]],
    counters: LexiconCounters | None = None,
    strict: bool = False,
) -> tuple[list[ConceptAtom], list[tuple[str, str]]]:
    """Read both pipe-delimited tables in one call."""
    counters = counters if counters is not None else LexiconCounters()
    atoms = parse_concepts(conso_source, counters, strict)
    edges = parse_relations(rel_source, counters, strict)
    return atoms, edges


def build_from_rrf(
    conso_source: Union[str, Path, IO[str]],
    rel_source: Union[str, Path, IO[str]],
    counters: LexiconCounters | None = None,
    strict: bool = False,
) -> LexiconGraph:
    atoms, edges = parse_rrf(conso_source, rel_source, counters, strict)
    return build_graph(atoms, edges)


@dataclass(frozen=True)
class LexiconCoverage:
    n_vocab_terms: int
    n_covered: int

    @property
    def fraction(self) -> float:
        return self.n_covered / self.n_vocab_terms if self.n_vocab_terms else 0.0


def coverage_report(
    graph: LexiconGraph, vocab_terms: Union[Sequence[str], Mapping[str, int]]
) -> LexiconCoverage:
    """How many vocabulary terms would actually move: keys of the graph whose
    neighbor list intersects the vocabulary."""
    terms = list(getattr(vocab_terms, "terms", vocab_terms))
    term_set = set(terms)
    covered = 0
    for term in terms:
        nbs = graph.adjacency.get(term)
        if nbs and any(nb in term_set for nb in nbs):
            covered += 1
    return LexiconCoverage(n_vocab_terms=len(terms), n_covered=covered)
