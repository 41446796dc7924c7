"""Synthetic spontaneous-report corpora with planted signals.

Reports draw drugs and reaction terms uniformly, with lengths
1 + geometric tails capped at a maximum. A planted class couples a set of
drugs to one reaction term: when a regular class member lands in a report,
the class reaction is added with just enough extra probability that

    P(reaction in report | member in report) = lift * P(reaction in report)

exactly. Held-out members invert the coupling: they appear in the corpus
only under a variant surface, and their reports never contain the class
reaction, so only the synonym graph can tie them back to the signal.

All randomness flows through one seeded generator in a fixed draw order
(length pools, id pools, synonym pools, then per-report plant draws, then
reference negatives, then confound edges), so corpora are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Sequence, Union

import numpy as np

from .errors import ConfigurationError
from .evaluate import NEGATIVE, POSITIVE, ReferencePair
from .ingest import DrugMention, EventDate, Report, Role
from .lexicon import LexiconGraph


@dataclass(frozen=True)
class PlantedClass:
    """Drugs sharing one elevated reaction."""

    members: tuple[str, ...]
    heldout: tuple[str, ...]
    ade: str
    lift: float

    def __post_init__(self) -> None:
        if self.lift < 1.0:
            raise ConfigurationError(f"lift must be >= 1, got {self.lift}")
        if not set(self.heldout) <= set(self.members):
            raise ConfigurationError("heldout drugs must be class members")
        if len(set(self.members)) != len(self.members):
            raise ConfigurationError("duplicate class members")


@dataclass(frozen=True)
class SynthSpec:
    n_reports: int
    n_drugs: int
    n_ades: int
    classes: tuple[PlantedClass, ...]
    synonym_rate: float
    seed: int
    n_synonyms: int = 2
    confound_neighbors: int = 2
    max_per_report: int = 10
    geometric_p: float = 0.5

    def validate(self) -> None:
        if self.n_reports < 1 or self.n_drugs < 1 or self.n_ades < 1:
            raise ConfigurationError("corpus dimensions must be positive")
        if not (0.0 <= self.synonym_rate <= 1.0):
            raise ConfigurationError("synonym_rate must be in [0, 1]")
        if self.n_synonyms < 1:
            raise ConfigurationError("n_synonyms must be >= 1")
        if self.confound_neighbors < 0:
            raise ConfigurationError("confound_neighbors must be >= 0")
        if self.max_per_report < 1:
            raise ConfigurationError("max_per_report must be >= 1")
        if not (0.0 < self.geometric_p < 1.0):
            raise ConfigurationError("geometric_p must be in (0, 1)")
        names = set(drug_names(self.n_drugs))
        ades = set(ade_names(self.n_ades))
        for cls in self.classes:
            unknown = set(cls.members) - names
            if unknown:
                raise ConfigurationError(f"class members not in corpus: {sorted(unknown)}")
            if cls.ade not in ades:
                raise ConfigurationError(f"class reaction not in corpus: {cls.ade}")

    @classmethod
    def planted(
        cls,
        n_reports: int,
        n_drugs: int,
        n_ades: int,
        n_classes: int,
        class_size: int,
        lift: float,
        synonym_rate: float,
        seed: int,
        heldout_per_class: int = 1,
        **kwargs,
    ) -> "SynthSpec":
        """Standard scenario: the first n_classes * class_size drugs form
        classes, each coupled to its own reaction, with the last
        heldout_per_class members of each class held out."""
        if n_classes * class_size > n_drugs:
            raise ConfigurationError("classes need more drugs than the corpus has")
        if n_classes > n_ades:
            raise ConfigurationError("classes need more reactions than the corpus has")
        if heldout_per_class >= class_size:
            raise ConfigurationError("a class needs at least one regular member")
        names = drug_names(n_drugs)
        ades = ade_names(n_ades)
        classes = []
        for k in range(n_classes):
            members = tuple(names[k * class_size: (k + 1) * class_size])
            classes.append(
                PlantedClass(
                    members=members,
                    heldout=members[class_size - heldout_per_class:],
                    ade=ades[k],
                    lift=lift,
                )
            )
        return cls(
            n_reports=n_reports, n_drugs=n_drugs, n_ades=n_ades,
            classes=tuple(classes), synonym_rate=synonym_rate, seed=seed, **kwargs,
        )


def drug_names(n_drugs: int) -> list[str]:
    width = max(4, len(str(max(n_drugs - 1, 0))))
    return [f"drug{i:0{width}d}" for i in range(n_drugs)]


def ade_names(n_ades: int) -> list[str]:
    width = max(3, len(str(max(n_ades - 1, 0))))
    return [f"Event {j:0{width}d}" for j in range(n_ades)]


def variant_surface(canonical: str, k: int) -> str:
    return f"{canonical}_v{k}"


def length_distribution(p: float, cap: int) -> np.ndarray:
    """P(length = m) for m = 1..cap under a geometric capped at cap."""
    pmf = np.array([(1.0 - p) ** (m - 1) * p for m in range(1, cap)] or [], dtype=np.float64)
    tail = (1.0 - p) ** (cap - 1)
    return np.concatenate([pmf, [tail]])


def baseline_rate(n_ades: int, p: float, cap: int) -> float:
    """Exact P(a specific reaction appears in a report) under the baseline."""
    pmf = length_distribution(p, cap)
    miss = (1.0 - 1.0 / n_ades) ** np.arange(1, cap + 1)
    return float(np.sum(pmf * (1.0 - miss)))


def plant_probability(lift: float, p0: float) -> float:
    """Extra inclusion probability that delivers the lift exactly.

    p0 + (1 - p0) * p_add = lift * p0 requires p_add = (lift-1) p0 / (1-p0),
    which is a probability iff lift * p0 <= 1.
    """
    if lift * p0 > 1.0 + 1e-12:
        raise ConfigurationError(
            f"lift {lift} is infeasible: lift * baseline rate = {lift * p0:.4f} > 1"
        )
    if p0 >= 1.0:
        return 0.0
    return (lift - 1.0) * p0 / (1.0 - p0)


@dataclass
class SynthResult:
    spec: SynthSpec
    reports: list[Report]
    lexicon: LexiconGraph
    reference: list[ReferencePair]
    diagnostics: dict = field(default_factory=dict)


def generate(spec: SynthSpec) -> SynthResult:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    names = drug_names(spec.n_drugs)
    ades = ade_names(spec.n_ades)
    cap = spec.max_per_report
    p0 = baseline_rate(spec.n_ades, spec.geometric_p, cap)

    class_info = []
    for cls in spec.classes:
        regular = sorted(set(cls.members) - set(cls.heldout))
        class_info.append(
            {
                "regular_ids": frozenset(names.index(m) for m in regular),
                "heldout_ids": frozenset(names.index(m) for m in cls.heldout),
                "ade_id": ades.index(cls.ade),
                "p_add": plant_probability(cls.lift, p0),
            }
        )

    n = spec.n_reports
    nd = np.minimum(rng.geometric(spec.geometric_p, size=n), cap)
    na = np.minimum(rng.geometric(spec.geometric_p, size=n), cap)
    drug_pool = rng.integers(0, spec.n_drugs, size=int(nd.sum()))
    ade_pool = rng.integers(0, spec.n_ades, size=int(na.sum()))
    syn_u = rng.random(size=int(nd.sum()))
    syn_pick = rng.integers(1, spec.n_synonyms + 1, size=int(nd.sum()))

    reports: list[Report] = []
    planted_adds = 0
    suppressions = 0
    d_off = 0
    a_off = 0
    for r in range(n):
        d_ids = drug_pool[d_off: d_off + int(nd[r])]
        a_ids = ade_pool[a_off: a_off + int(na[r])]
        slot = d_off
        d_off += int(nd[r])
        a_off += int(na[r])

        drug_set = []
        seen_d = set()
        for di in d_ids:
            di = int(di)
            if di not in seen_d:
                seen_d.add(di)
                drug_set.append(di)
        ade_set = []
        seen_a = set()
        for ai in a_ids:
            ai = int(ai)
            if ai not in seen_a:
                seen_a.add(ai)
                ade_set.append(ai)

        for info in class_info:
            if seen_d & info["regular_ids"] and info["ade_id"] not in seen_a:
                if rng.random() < info["p_add"]:
                    seen_a.add(info["ade_id"])
                    ade_set.append(info["ade_id"])
                    planted_adds += 1
        for info in class_info:
            if seen_d & info["heldout_ids"] and info["ade_id"] in seen_a:
                seen_a.discard(info["ade_id"])
                ade_set.remove(info["ade_id"])
                suppressions += 1

        mentions = []
        for j, di in enumerate(drug_set):
            canonical = names[di]
            is_heldout = any(di in info["heldout_ids"] for info in class_info)
            u = syn_u[slot + j] if slot + j < syn_u.size else 1.0
            if is_heldout:
                surface = variant_surface(canonical, 1)
            elif u < spec.synonym_rate:
                surface = variant_surface(canonical, int(syn_pick[slot + j]))
            else:
                surface = canonical
            mentions.append(DrugMention(raw_name=surface, normalized_name=surface, role=Role.PS))

        reports.append(
            Report(
                report_id=f"r{r:07d}",
                event_date=EventDate(2010 + (r % 10), 1 + (r % 4)),
                drugs=mentions,
                adverse_events=[ades[ai] for ai in ade_set],
            )
        )

    reference = _build_reference(spec, names, rng)
    lexicon = _build_lexicon(spec, names, rng)

    return SynthResult(
        spec=spec,
        reports=reports,
        lexicon=lexicon,
        reference=reference,
        diagnostics={
            "baseline_rate": p0,
            "planted_additions": planted_adds,
            "heldout_suppressions": suppressions,
        },
    )


def _build_reference(spec: SynthSpec, names: list[str], rng: np.random.Generator) -> list[ReferencePair]:
    """Positives are class members (held-out ones under their variant
    surface); negatives pair the same reactions with background drugs."""
    member_ids = set()
    for cls in spec.classes:
        member_ids |= {names.index(m) for m in cls.members}
    background = [i for i in range(spec.n_drugs) if i not in member_ids]
    pairs: list[ReferencePair] = []
    for cls in spec.classes:
        for m in cls.members:
            surface = variant_surface(m, 1) if m in cls.heldout else m
            pairs.append(
                ReferencePair(
                    drug=surface, outcome=cls.ade, label=POSITIVE,
                    outcome_group=cls.ade, candidate_pts=(cls.ade,),
                )
            )
        if len(background) < len(cls.members):
            raise ConfigurationError("not enough background drugs for matched negatives")
        chosen = rng.choice(len(background), size=len(cls.members), replace=False)
        for idx in sorted(int(i) for i in chosen):
            pairs.append(
                ReferencePair(
                    drug=names[background[idx]], outcome=cls.ade, label=NEGATIVE,
                    outcome_group=cls.ade, candidate_pts=(cls.ade,),
                )
            )
    return pairs


def _build_lexicon(spec: SynthSpec, names: list[str], rng: np.random.Generator) -> LexiconGraph:
    """Per-drug synonym cliques, per-class cliques over every member surface,
    plus confound edges from each class member to random background drugs."""
    adjacency: dict[str, set[str]] = {}

    def connect(a: str, b: str) -> None:
        if a != b:
            adjacency.setdefault(a, set()).add(b)
            adjacency.setdefault(b, set()).add(a)

    for name in names:
        surfaces = [name] + [variant_surface(name, k) for k in range(1, spec.n_synonyms + 1)]
        for i, a in enumerate(surfaces):
            for b in surfaces[i + 1:]:
                connect(a, b)

    member_ids = set()
    for cls in spec.classes:
        member_ids |= {names.index(m) for m in cls.members}
    background = [i for i in range(spec.n_drugs) if i not in member_ids]

    for cls in spec.classes:
        surfaces = []
        for m in cls.members:
            surfaces.append(m)
            surfaces.extend(variant_surface(m, k) for k in range(1, spec.n_synonyms + 1))
        for i, a in enumerate(surfaces):
            for b in surfaces[i + 1:]:
                connect(a, b)

    if spec.confound_neighbors > 0 and background:
        for cls in spec.classes:
            for m in cls.members:
                picks = rng.choice(len(background), size=min(spec.confound_neighbors, len(background)), replace=False)
                for idx in sorted(int(i) for i in picks):
                    connect(m, names[background[idx]])

    return LexiconGraph(adjacency={t: sorted(nbs) for t, nbs in sorted(adjacency.items())})


def write_reference(pairs: Sequence[ReferencePair], sink: Union[str, Path, IO[str]]) -> None:
    """drug<TAB>outcome<TAB>label<TAB>group lines, with a provenance comment."""
    own = isinstance(sink, (str, Path))
    stream: IO[str] = open(sink, "w", encoding="utf-8", newline="\n") if own else sink
    try:
        stream.write("# synthetic reference pairs; not clinical data\n")
        for p in pairs:
            stream.write(f"{p.drug}\t{p.outcome}\t{p.label}\t{p.outcome_group}\n")
    finally:
        if own:
            stream.close()
