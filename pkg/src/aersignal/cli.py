"""Command-line interface.

Every stage is runnable standalone on serialized intermediates, and `run`
executes a whole manifest. Exit codes: 0 success, 1 runtime failure,
2 usage error, 3 configuration/manifest validation failure, 4 input parse
failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .disproportionality import MetricResult, compute_metric, write_scores
from .embedding import (
    EmbeddingSpace,
    TrainConfig,
    init_space,
    load_vectors,
    save_vectors,
    score_pair,
    train,
)
from .errors import ConfigurationError, ParseError, UnknownTermError
from .evaluate import (
    Aggregate,
    OovPolicy,
    baseline_rows,
    evaluate_scored,
    load_reference,
    score_reference,
    sweep_rows,
    write_results,
)
from .ingest import (
    FilterCounters,
    ParseCounters,
    RoleFilter,
    filter_reports,
    load_colmap,
    parse_ascii_tables,
    parse_canonical,
    write_canonical,
)
from .lexicon import LexiconCounters, LexiconGraph, build_from_rrf, coverage_report
from .pipeline import Manifest, _parse_float_list, _parse_int_list, run as run_pipeline
from .retrofit import RetrofitConfig, retrofit
from .synth import SynthSpec, generate, write_reference
from .vocab import GlobalCounts, Vocabulary, accumulate_counts, build_vocabularies, emit_events


def _cmd_ingest(args: argparse.Namespace) -> int:
    counters = ParseCounters()
    if args.format == "canonical":
        if not args.input:
            raise ConfigurationError("--input is required for --format canonical")
        reports = parse_canonical(args.input, counters, strict=args.strict)
    else:
        if not (args.drug_file and args.reac_file and args.colmap):
            raise ConfigurationError(
                "--drug-file, --reac-file and --colmap are required for --format faers"
            )
        colmap = load_colmap(args.colmap)
        reports = parse_ascii_tables(
            args.drug_file, args.reac_file, args.demo_file, colmap, counters, strict=args.strict
        )
    filter_counters = FilterCounters()
    kept = filter_reports(reports, RoleFilter(args.role), args.cutoff, filter_counters)
    n = write_canonical(kept, args.out)
    print(f"wrote {n} reports to {args.out}")
    for key, value in {**counters.as_dict(), **filter_counters.as_dict()}.items():
        print(f"  {key}={value}")
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    reports = list(parse_canonical(args.reports))
    drug_vocab, ade_vocab = build_vocabularies(reports, args.min_count)
    if not len(drug_vocab) or not len(ade_vocab):
        raise ConfigurationError("empty vocabulary after min_count filtering")
    events = list(emit_events(reports, drug_vocab, ade_vocab))
    config = TrainConfig(
        dim=args.dim, epochs=args.epochs, negative_samples=args.negative,
        initial_learning_rate=args.learning_rate, subsample_threshold=args.subsample,
        seed=args.seed, threads=args.threads,
    )
    space = init_space(drug_vocab, ade_vocab, config)
    losses: list[float] = []
    train(events, space, config, drug_vocab, ade_vocab, loss_sink=losses)
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    ade_path = Path(f"{prefix}_ade.vec")
    drug_path = Path(f"{prefix}_drug.vec")
    save_vectors(space.ade_vectors, ade_path)
    save_vectors(space.drug_vectors, drug_path)
    print(f"trained {len(events)} events for {config.epochs} epochs (seed {config.seed})")
    print(f"  loss first={losses[0]:.4f} last={losses[-1]:.4f}")
    print(f"  wrote {ade_path} and {drug_path}")
    return 0


def _cmd_lexicon(args: argparse.Namespace) -> int:
    counters = LexiconCounters()
    graph = build_from_rrf(args.conso, args.rel, counters, strict=args.strict)
    graph.save(args.out)
    print(f"wrote {len(graph)} terms / {graph.n_edges()} edges to {args.out}")
    for key, value in counters.as_dict().items():
        print(f"  {key}={value}")
    if args.coverage_vocab:
        vocab = Vocabulary.load(args.coverage_vocab)
        cov = coverage_report(graph, vocab.terms)
        print(f"  coverage={cov.n_covered}/{cov.n_vocab_terms} ({cov.fraction:.3f})")
    return 0


def _cmd_retrofit(args: argparse.Namespace) -> int:
    table = load_vectors(args.vectors)
    graph = LexiconGraph.load(args.lexicon)
    config = RetrofitConfig.from_beta(
        args.beta, iterations=args.iterations,
        normalize_first=not args.no_normalize_first,
        rescale_after=args.rescale, weighting=args.weighting,
    )
    result = retrofit(table, graph, config)
    save_vectors(result.drug_vectors, args.out)
    print(
        f"retrofit beta={args.beta} updated={len(result.updated_terms)} "
        f"unchanged={len(result.unchanged_terms)} skipped_graph_terms={result.skipped_graph_terms} "
        f"iterations={result.iterations_run} max_change={result.final_max_change:.2e}"
    )
    if args.rescale:
        print(f"  degenerate_rows={result.degenerate_rows}")
    print(f"  wrote {args.out}")
    return 0


def _load_counts_context(args: argparse.Namespace) -> tuple[GlobalCounts, Vocabulary, Vocabulary]:
    if args.counts and args.drug_vocab and args.ade_vocab:
        return (
            GlobalCounts.load(args.counts),
            Vocabulary.load(args.drug_vocab),
            Vocabulary.load(args.ade_vocab),
        )
    if args.reports:
        reports = list(parse_canonical(args.reports))
        drug_vocab, ade_vocab = build_vocabularies(reports, args.min_count)
        counts = accumulate_counts(reports, drug_vocab, ade_vocab)
        return counts, drug_vocab, ade_vocab
    raise ConfigurationError("need --counts/--drug-vocab/--ade-vocab or --reports")


def _cmd_score(args: argparse.Namespace) -> int:
    pairs = load_reference(args.reference, args.mapping)
    rows: list[tuple[str, str, str, MetricResult]] = []
    if args.method == "aer2vec":
        if not (args.ade_vectors and args.drug_vectors):
            raise ConfigurationError("--ade-vectors and --drug-vectors are required for aer2vec")
        ade_table = load_vectors(args.ade_vectors)
        drug_table = load_vectors(args.drug_vectors)
        space = EmbeddingSpace(
            dim=ade_table.dim, ade_vectors=ade_table, drug_vectors=drug_table, seed=0
        )
        for pair in pairs:
            for pt in pair.candidate_pts:
                try:
                    value = MetricResult(score_pair(space, pt, pair.drug))
                except UnknownTermError:
                    value = MetricResult(None, "oov")
                rows.append((pair.drug, pt, args.method, value))
    else:
        counts, drug_vocab, ade_vocab = _load_counts_context(args)
        for pair in pairs:
            for pt in pair.candidate_pts:
                try:
                    value = compute_metric(args.method, counts, drug_vocab, ade_vocab, pair.drug, pt)
                except UnknownTermError:
                    value = MetricResult(None, "oov")
                rows.append((pair.drug, pt, args.method, value))
    n = write_scores(rows, args.out)
    print(f"wrote {n} score rows to {args.out}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    pairs = load_reference(args.reference, args.mapping)
    table: dict[tuple[str, str], float] = {}
    with open(args.scores, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ParseError(f"scores line {lineno}: expected 4 fields")
            drug, pt, _metric, value = parts
            if value != "UNDEF":
                table[(drug, pt)] = float(value)

    def scorer(drug: str, pt: str) -> float | None:
        return table.get((drug, pt))

    scored = score_reference(pairs, scorer, OovPolicy(args.policy), Aggregate(args.aggregate))
    result = evaluate_scored(scored)
    print(f"auc={result.auc:.6f} positives={result.n_positive} negatives={result.n_negative} missing={result.n_missing}")
    for group in sorted(result.per_outcome):
        print(f"  outcome[{group}] auc={result.per_outcome[group]:.6f}")
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    refsets = {}
    mappings = dict(kv.split("=", 1) for kv in (args.mapping or []))
    for kv in args.reference:
        name, _, path = kv.partition("=")
        if not path:
            raise ConfigurationError(f"--reference needs name=path, got {kv!r}")
        refsets[name] = load_reference(path, mappings.get(name))
    graph = LexiconGraph.load(args.lexicon)
    seeds = _parse_int_list(args.seeds)
    spaces = []
    for seed in seeds:
        ade_table = load_vectors(args.ade_pattern.format(seed=seed))
        drug_table = load_vectors(args.drug_pattern.format(seed=seed))
        spaces.append(EmbeddingSpace(dim=ade_table.dim, ade_vectors=ade_table, drug_vectors=drug_table, seed=seed))
    rows = sweep_rows(
        trainset=args.trainset, editions=spaces, graph=graph,
        betas=_parse_float_list(args.betas), variants=args.variants.split(","),
        refsets=refsets, iterations=args.iterations,
        normalize_first=not args.no_normalize_first, weighting=args.weighting,
        policy=OovPolicy(args.policy), aggregate=Aggregate(args.aggregate),
    )
    if args.counts and args.drug_vocab and args.ade_vocab:
        counts = GlobalCounts.load(args.counts)
        drug_vocab = Vocabulary.load(args.drug_vocab)
        ade_vocab = Vocabulary.load(args.ade_vocab)
        rows.extend(
            baseline_rows(
                trainset=args.trainset, refsets=refsets, counts=counts,
                drug_vocab=drug_vocab, ade_vocab=ade_vocab,
                policy=OovPolicy(args.policy), aggregate=Aggregate(args.aggregate),
            )
        )
    write_results(rows, args.out)
    print(f"wrote {len(rows)} result rows to {args.out}")
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    spec = SynthSpec.planted(
        n_reports=args.reports, n_drugs=args.drugs, n_ades=args.ades,
        n_classes=args.classes, class_size=args.class_size, lift=args.lift,
        synonym_rate=args.synonym_rate, seed=args.seed,
        heldout_per_class=args.heldout, n_synonyms=args.n_synonyms,
        confound_neighbors=args.confounds,
    )
    result = generate(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_canonical(result.reports, out / "reports.tsv")
    result.lexicon.save(out / "lexicon.txt")
    write_reference(result.reference, out / "reference.tsv")
    print(f"wrote {len(result.reports)} reports, {len(result.lexicon)} lexicon terms, "
          f"{len(result.reference)} reference pairs to {out}")
    for key, value in result.diagnostics.items():
        print(f"  {key}={value}")
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    manifest = Manifest.from_file(args.manifest)
    if args.no_cache:
        manifest.cache = False
    if args.strict:
        manifest.strict = True
    if args.threads is not None:
        manifest.threads = args.threads
    echo = None if args.quiet else print
    results = run_pipeline(manifest, echo)
    print(f"results: {results}")
    return 0


def _add_common(p: argparse.ArgumentParser, threads_default: int | None = 1) -> None:
    """Flags every subcommand accepts; commands ignore the ones they don't use."""
    p.add_argument("--seed", type=int, default=0, help="base random seed")
    p.add_argument("--strict", action="store_true",
                   help="escalate recoverable input problems to hard errors")
    p.add_argument("--threads", type=int, default=threads_default, help="worker threads")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aersignal",
        description="Signal detection for spontaneous adverse-event reports",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse and filter reports into canonical TSV")
    _add_common(p)
    p.add_argument("--format", choices=("canonical", "faers"), default="canonical")
    p.add_argument("--input", help="canonical TSV input")
    p.add_argument("--drug-file")
    p.add_argument("--reac-file")
    p.add_argument("--demo-file")
    p.add_argument("--colmap")
    p.add_argument("--role", choices=[r.value for r in RoleFilter], default="FULL")
    p.add_argument("--cutoff", help="latest kept date, YYYY or YYYYQn")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("train", help="train one embedding edition")
    _add_common(p)
    p.add_argument("--reports", required=True)
    p.add_argument("--dim", type=int, default=100)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--negative", type=int, default=5)
    p.add_argument("--learning-rate", type=float, default=0.025)
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--subsample", type=float, default=None)
    p.add_argument("--out-prefix", required=True, help="writes <prefix>_ade.vec and <prefix>_drug.vec")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("lexicon", help="build the synonym graph from RRF tables")
    _add_common(p)
    p.add_argument("--conso", required=True)
    p.add_argument("--rel", required=True)
    p.add_argument("--coverage-vocab", help="vocab TSV to report coverage against")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_lexicon)

    p = sub.add_parser("retrofit", help="retrofit a vector file to a lexicon graph")
    _add_common(p)
    p.add_argument("--vectors", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--iterations", type=int, default=10)
    p.add_argument("--no-normalize-first", action="store_true")
    p.add_argument("--rescale", action="store_true")
    p.add_argument("--weighting", choices=("inverse_degree", "uniform"), default="inverse_degree")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_retrofit)

    p = sub.add_parser("score", help="score reference pairs with one method")
    _add_common(p)
    p.add_argument("--method", choices=("aer2vec", "prr", "ror"), required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--mapping")
    p.add_argument("--ade-vectors")
    p.add_argument("--drug-vectors")
    p.add_argument("--counts")
    p.add_argument("--drug-vocab")
    p.add_argument("--ade-vocab")
    p.add_argument("--reports", help="canonical TSV to count on the fly")
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("eval", help="rank scored pairs against a reference set")
    _add_common(p)
    p.add_argument("--scores", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--mapping")
    p.add_argument("--policy", choices=[pcy.value for pcy in OovPolicy], default="exclude")
    p.add_argument("--aggregate", choices=[a.value for a in Aggregate], default="max")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", help="retrofit editions over a beta grid and evaluate")
    _add_common(p)
    p.add_argument("--trainset", default="full")
    p.add_argument("--ade-pattern", required=True, help="path pattern with {seed}")
    p.add_argument("--drug-pattern", required=True, help="path pattern with {seed}")
    p.add_argument("--seeds", default="0:10")
    p.add_argument("--lexicon", required=True)
    p.add_argument("--betas", default="0:1:0.1")
    p.add_argument("--variants", default="plain,rescaled")
    p.add_argument("--iterations", type=int, default=10)
    p.add_argument("--no-normalize-first", action="store_true")
    p.add_argument("--weighting", choices=("inverse_degree", "uniform"), default="inverse_degree")
    p.add_argument("--reference", action="append", required=True, help="name=path, repeatable")
    p.add_argument("--mapping", action="append", help="name=path, repeatable")
    p.add_argument("--counts", help="counts file for prr/ror baselines")
    p.add_argument("--drug-vocab")
    p.add_argument("--ade-vocab")
    p.add_argument("--policy", choices=[pcy.value for pcy in OovPolicy], default="exclude")
    p.add_argument("--aggregate", choices=[a.value for a in Aggregate], default="max")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("synth", help="generate a planted-signal corpus")
    _add_common(p)
    p.add_argument("--reports", type=int, required=True)
    p.add_argument("--drugs", type=int, required=True)
    p.add_argument("--ades", type=int, required=True)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--class-size", type=int, required=True)
    p.add_argument("--lift", type=float, required=True)
    p.add_argument("--synonym-rate", type=float, default=0.3)
    p.add_argument("--heldout", type=int, default=1)
    p.add_argument("--n-synonyms", type=int, default=2)
    p.add_argument("--confounds", type=int, default=2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("run", help="execute a full pipeline manifest")
    _add_common(p, threads_default=None)
    p.add_argument("--manifest", required=True)
    p.add_argument("--no-cache", action="store_true")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_cmd_run)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 3
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return 4
    except Exception as exc:  # pragma: no cover - safety net
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
