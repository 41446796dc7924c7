"""Evaluation against labeled reference sets.

A reference set lists (drug, outcome) pairs labeled positive or negative and
grouped by outcome. Outcomes map to one or more reaction PT strings (an
optional mapping file; by default the outcome string is the PT). Each method
scores the pairs it can, and ranking quality is summarized as the
Mann-Whitney AUC with midrank tie handling, aggregated over training seeds.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import IO, Callable, Iterable, Mapping, Sequence, Union

import numpy as np

from .disproportionality import compute_metric
from .embedding import EmbeddingSpace, score_pair
from .errors import UndefinedMetricError, UnknownTermError
from .ingest import normalize_drugname
from .vocab import GlobalCounts, Vocabulary

Label = str
POSITIVE: Label = "positive"
NEGATIVE: Label = "negative"


class OovPolicy(str, Enum):
    """What to do with pairs no candidate score is defined for."""

    EXCLUDE = "exclude"  # drop the pair from the ranking
    WORST = "worst"      # assign the minimum observed defined score


class Aggregate(str, Enum):
    """How to combine scores across a pair's candidate PTs."""

    MAX = "max"
    MEAN = "mean"


@dataclass(frozen=True)
class ReferencePair:
    drug: str
    outcome: str
    label: Label
    outcome_group: str
    candidate_pts: tuple[str, ...]

    @property
    def is_positive(self) -> bool:
        return self.label == POSITIVE


def load_mapping(source: Union[str, Path, IO[str]]) -> dict[str, list[str]]:
    """Read outcome<TAB>pt lines; repeated outcomes accumulate candidates."""
    own = isinstance(source, (str, Path))
    stream: IO[str] = open(source, "r", encoding="utf-8") if own else source
    mapping: dict[str, list[str]] = {}
    try:
        for lineno, line in enumerate(stream, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"mapping line {lineno}: expected outcome<TAB>pt")
            outcome, pt = parts
            mapping.setdefault(outcome, [])
            if pt not in mapping[outcome]:
                mapping[outcome].append(pt)
    finally:
        if own:
            stream.close()
    return mapping


def load_reference(
    source: Union[str, Path, IO[str]],
    mapping: Union[str, Path, IO[str], Mapping[str, Sequence[str]], None] = None,
) -> list[ReferencePair]:
    """Read drug<TAB>outcome<TAB>label<TAB>group lines ('#' comments allowed).

    Drug names are normalized. Labels other than positive/negative and
    duplicate (drug, outcome) pairs are fatal. An outcome missing from the
    mapping (or a missing mapping) maps to itself.
    """
    if mapping is not None and not isinstance(mapping, Mapping):
        mapping = load_mapping(mapping)
    own = isinstance(source, (str, Path))
    stream: IO[str] = open(source, "r", encoding="utf-8") if own else source
    pairs: list[ReferencePair] = []
    seen: set[tuple[str, str]] = set()
    try:
        for lineno, line in enumerate(stream, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ValueError(f"reference line {lineno}: expected 4 fields, got {len(parts)}")
            drug_raw, outcome, label, group = parts
            if label not in (POSITIVE, NEGATIVE):
                raise ValueError(f"reference line {lineno}: bad label {label!r}")
            drug = normalize_drugname(drug_raw)
            if not drug:
                raise ValueError(f"reference line {lineno}: empty drug name")
            key = (drug, outcome)
            if key in seen:
                raise ValueError(f"reference line {lineno}: duplicate pair {key}")
            seen.add(key)
            candidates = tuple(mapping.get(outcome, (outcome,))) if mapping else (outcome,)
            if not candidates:
                candidates = (outcome,)
            pairs.append(
                ReferencePair(
                    drug=drug, outcome=outcome, label=label,
                    outcome_group=group, candidate_pts=candidates,
                )
            )
    finally:
        if own:
            stream.close()
    return pairs


# ---------------------------------------------------------------------------
# Scorers
# ---------------------------------------------------------------------------

ScoreFn = Callable[[str, str], "float | None"]


class EmbeddingScorer:
    """Scores a pair as sigma(ade . drug); None when either term is OOV."""

    name = "aer2vec"

    def __init__(self, space: EmbeddingSpace):
        self.space = space

    def __call__(self, drug: str, pt: str) -> float | None:
        try:
            return score_pair(self.space, pt, drug)
        except UnknownTermError:
            return None


class MetricScorer:
    """Scores a pair with a 2x2 baseline; None when OOV or undefined."""

    def __init__(self, metric: str, counts: GlobalCounts, drug_vocab: Vocabulary, ade_vocab: Vocabulary):
        self.name = metric
        self.counts = counts
        self.drug_vocab = drug_vocab
        self.ade_vocab = ade_vocab

    def __call__(self, drug: str, pt: str) -> float | None:
        try:
            result = compute_metric(self.name, self.counts, self.drug_vocab, self.ade_vocab, drug, pt)
        except UnknownTermError:
            return None
        return result.value


@dataclass
class ScoredPair:
    pair: ReferencePair
    score: float | None
    imputed: bool = False


def score_reference(
    pairs: Sequence[ReferencePair],
    scorer: ScoreFn,
    policy: OovPolicy = OovPolicy.EXCLUDE,
    aggregate: Aggregate = Aggregate.MAX,
) -> list[ScoredPair]:
    """Score every pair, aggregating over its candidate PTs.

    A pair's score is the max (or mean) over candidates with a defined
    score; with no defined candidate the pair is missing. Under the WORST
    policy, missing pairs then receive the minimum observed defined score
    (they stay missing when nothing at all scored).
    """
    scored: list[ScoredPair] = []
    for pair in pairs:
        values = [v for pt in pair.candidate_pts if (v := scorer(pair.drug, pt)) is not None]
        if not values:
            scored.append(ScoredPair(pair, None))
        elif aggregate is Aggregate.MAX:
            scored.append(ScoredPair(pair, max(values)))
        else:
            scored.append(ScoredPair(pair, sum(values) / len(values)))
    if policy is OovPolicy.WORST:
        defined = [s.score for s in scored if s.score is not None]
        if defined:
            floor = min(defined)
            scored = [
                ScoredPair(s.pair, floor, imputed=True) if s.score is None else s
                for s in scored
            ]
    return scored


# ---------------------------------------------------------------------------
# AUC
# ---------------------------------------------------------------------------


def auc_from_scores(positive: Sequence[float], negative: Sequence[float]) -> float:
    """Mann-Whitney AUC via midranks.

    Equals the probability a random positive outranks a random negative,
    ties counting half. Raises UndefinedMetricError when either side is
    empty.
    """
    pos = np.asarray(positive, dtype=np.float64)
    neg = np.asarray(negative, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise UndefinedMetricError(
            f"AUC needs both classes, got {pos.size} positive / {neg.size} negative"
        )
    scores = np.concatenate([pos, neg])
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(scores.size, dtype=np.float64)
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i: j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum = float(ranks[: pos.size].sum())
    return (rank_sum - pos.size * (pos.size + 1) / 2.0) / (pos.size * neg.size)


@dataclass
class EvalResult:
    """One seed's ranking quality on one reference set."""

    auc: float
    n_positive: int
    n_negative: int
    n_scored: int
    n_missing: int
    per_outcome: dict[str, float]


def evaluate_scored(scored: Sequence[ScoredPair]) -> EvalResult:
    """AUC over the defined scores, plus a per-outcome-group breakdown.

    ``n_missing`` counts pairs the scorer could not produce a value for,
    whether they were then dropped or imputed; ``n_scored`` counts the
    rest, so the two always partition the reference set. Groups where
    either class is entirely missing are left out of the breakdown rather
    than given a fake value.
    """
    pos = [s.score for s in scored if s.pair.is_positive and s.score is not None]
    neg = [s.score for s in scored if not s.pair.is_positive and s.score is not None]
    n_missing = sum(1 for s in scored if s.score is None or s.imputed)
    overall = auc_from_scores(pos, neg)
    per_outcome: dict[str, float] = {}
    groups = sorted({s.pair.outcome_group for s in scored})
    for group in groups:
        gpos = [s.score for s in scored if s.pair.outcome_group == group and s.pair.is_positive and s.score is not None]
        gneg = [s.score for s in scored if s.pair.outcome_group == group and not s.pair.is_positive and s.score is not None]
        if gpos and gneg:
            per_outcome[group] = auc_from_scores(gpos, gneg)
    return EvalResult(
        auc=overall,
        n_positive=len(pos),
        n_negative=len(neg),
        n_scored=len(scored) - n_missing,
        n_missing=n_missing,
        per_outcome=per_outcome,
    )


@dataclass
class EvalSummary:
    """Cross-seed aggregation of EvalResults."""

    auc_mean: float
    auc_std: float
    n_seeds: int
    n_scored: int
    n_missing: int
    per_outcome: dict[str, float]

    @classmethod
    def from_results(cls, results: Sequence[EvalResult]) -> "EvalSummary":
        if not results:
            raise ValueError("no results to summarize")
        aucs = [r.auc for r in results]
        mean = float(np.mean(aucs))
        std = float(np.std(aucs, ddof=1)) if len(aucs) > 1 else 0.0
        groups = sorted({g for r in results for g in r.per_outcome})
        per_outcome = {}
        for g in groups:
            vals = [r.per_outcome[g] for r in results if g in r.per_outcome]
            per_outcome[g] = float(np.mean(vals))
        return cls(
            auc_mean=mean,
            auc_std=std,
            n_seeds=len(results),
            n_scored=results[0].n_scored,
            n_missing=results[0].n_missing,
            per_outcome=per_outcome,
        )


# ---------------------------------------------------------------------------
# Sweeps and the results table
# ---------------------------------------------------------------------------


@dataclass
class SweepRow:
    trainset: str
    refset: str
    method: str
    variant: str  # plain | rescaled | "-" for baselines
    beta: float | None
    summary: EvalSummary

    def key(self) -> tuple:
        beta_text = format(self.beta, "g") if self.beta is not None else "-"
        return (self.trainset, self.refset, self.method, self.variant, beta_text)

    def render(self) -> str:
        beta_text = format(self.beta, "g") if self.beta is not None else "-"
        s = self.summary
        return "\t".join(
            (
                self.trainset, self.refset, self.method, self.variant, beta_text,
                repr(s.auc_mean), repr(s.auc_std), str(s.n_seeds), str(s.n_missing),
            )
        )


RESULTS_HEADER = "trainset\trefset\tmethod\tvariant\tbeta\tauc_mean\tauc_std\tn_seeds\tn_missing"


def write_results(rows: Iterable[SweepRow], sink: Union[str, Path, IO[str]]) -> None:
    """Deterministic results TSV: header plus rows sorted by their full key."""
    own = isinstance(sink, (str, Path))
    stream: IO[str] = open(sink, "w", encoding="utf-8", newline="\n") if own else sink
    try:
        stream.write(RESULTS_HEADER + "\n")
        for row in sorted(rows, key=lambda r: r.key()):
            stream.write(row.render() + "\n")
    finally:
        if own:
            stream.close()


def beta_grid(start: float = 0.0, stop: float = 1.0, step: float = 0.1) -> list[float]:
    """Inclusive grid with clean one-decimal representations by default."""
    if step <= 0:
        raise ValueError("step must be positive")
    n = int(round((stop - start) / step))
    grid = [round(start + i * step, 10) for i in range(n + 1)]
    return [g for g in grid if start - 1e-12 <= g <= stop + 1e-12]


def evaluate_editions(
    editions: Sequence[EmbeddingSpace],
    pairs: Sequence[ReferencePair],
    policy: OovPolicy = OovPolicy.EXCLUDE,
    aggregate: Aggregate = Aggregate.MAX,
    drug_tables=None,
) -> EvalSummary:
    """Score one reference set with each edition (optionally with its drug
    table swapped out) and aggregate."""
    results = []
    for idx, space in enumerate(editions):
        use = space
        if drug_tables is not None:
            use = EmbeddingSpace(
                dim=space.dim,
                ade_vectors=space.ade_vectors,
                drug_vectors=drug_tables[idx],
                seed=space.seed,
            )
        scored = score_reference(pairs, EmbeddingScorer(use), policy, aggregate)
        results.append(evaluate_scored(scored))
    return EvalSummary.from_results(results)


def sweep_rows(
    trainset: str,
    editions: Sequence[EmbeddingSpace],
    graph,
    betas: Sequence[float],
    variants: Sequence[str],
    refsets: Mapping[str, Sequence[ReferencePair]],
    iterations: int = 10,
    normalize_first: bool = True,
    weighting: str = "inverse_degree",
    policy: OovPolicy = OovPolicy.EXCLUDE,
    aggregate: Aggregate = Aggregate.MAX,
) -> list[SweepRow]:
    """Retrofit each edition's drug table at every beta and evaluate.

    One solve serves both variants: the plain output is the converged
    iterate, and the rescaled output restores each row to its pre-retrofit
    norm. beta = 0 with normalize_first off reproduces the unretrofitted
    scores exactly.
    """
    from .retrofit import RetrofitConfig, rescale, retrofit

    for v in variants:
        if v not in ("plain", "rescaled"):
            raise ValueError(f"unknown variant {v!r}")
    rows: list[SweepRow] = []
    per_refset_variant_beta: dict[tuple[str, str, float], list[EvalResult]] = {}
    for space in editions:
        raw_table = space.drug_vectors
        for beta in betas:
            config = RetrofitConfig.from_beta(
                beta, iterations=iterations, normalize_first=normalize_first,
                weighting=weighting,
            )
            result = retrofit(raw_table, graph, config)
            tables = {}
            if "plain" in variants:
                tables["plain"] = result.drug_vectors
            if "rescaled" in variants:
                tables["rescaled"], _ = rescale(raw_table, result.pre_rescale)
            for variant, table in tables.items():
                swapped = EmbeddingSpace(
                    dim=space.dim, ade_vectors=space.ade_vectors,
                    drug_vectors=table, seed=space.seed,
                )
                for refset_name, pairs in refsets.items():
                    scored = score_reference(pairs, EmbeddingScorer(swapped), policy, aggregate)
                    per_refset_variant_beta.setdefault((refset_name, variant, beta), []).append(
                        evaluate_scored(scored)
                    )
    for (refset_name, variant, beta), results in per_refset_variant_beta.items():
        rows.append(
            SweepRow(
                trainset=trainset, refset=refset_name, method="aer2vec",
                variant=variant, beta=beta, summary=EvalSummary.from_results(results),
            )
        )
    return rows


def baseline_rows(
    trainset: str,
    refsets: Mapping[str, Sequence[ReferencePair]],
    counts: GlobalCounts,
    drug_vocab: Vocabulary,
    ade_vocab: Vocabulary,
    policy: OovPolicy = OovPolicy.EXCLUDE,
    aggregate: Aggregate = Aggregate.MAX,
) -> list[SweepRow]:
    rows: list[SweepRow] = []
    for refset_name, pairs in refsets.items():
        for metric in ("prr", "ror"):
            scorer = MetricScorer(metric, counts, drug_vocab, ade_vocab)
            scored = score_reference(pairs, scorer, policy, aggregate)
            summary = EvalSummary.from_results([evaluate_scored(scored)])
            rows.append(
                SweepRow(
                    trainset=trainset, refset=refset_name, method=metric,
                    variant="-", beta=None, summary=summary,
                )
            )
    return rows
