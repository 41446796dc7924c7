"""Manifest-driven end-to-end runs with stage-granular caching.

A manifest is an INI file (sections in brackets, key = value). Relative
paths resolve against the manifest's directory. Stages write their outputs
under the configured output directory and stamp a content hash (input file
digests plus the stage's config slice plus the package version); a stage is
skipped when its stamp matches and its outputs still exist.

Stage layout under the output directory:

    ingest/<trainset>/reports.tsv
    vocab/<trainset>/{drugs.tsv, ades.tsv, counts.tsv}
    train/<trainset>/{ade_s<seed>.vec, drug_s<seed>.vec}
    lexicon/lexicon.txt
    results.tsv, curves/, logs/pipeline.log, .stamps/
"""

from __future__ import annotations

import configparser
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from . import __version__
from .errors import ConfigurationError
from .embedding import EmbeddingSpace, TrainConfig, init_space, load_vectors, save_vectors, train
from .evaluate import (
    Aggregate,
    OovPolicy,
    ReferencePair,
    SweepRow,
    baseline_rows,
    beta_grid,
    load_reference,
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
from .lexicon import LexiconGraph, LexiconCounters, build_from_rrf, coverage_report
from .vocab import GlobalCounts, Vocabulary, accumulate_counts, build_vocabularies, emit_events, events_as_arrays


def _parse_int_list(text: str) -> list[int]:
    """Accept '0:10' (half-open range) or a comma list."""
    text = text.strip()
    if ":" in text:
        lo, hi = text.split(":")
        return list(range(int(lo), int(hi)))
    return [int(tok) for tok in text.split(",") if tok.strip() != ""]


def _parse_float_list(text: str) -> list[float]:
    """Accept 'start:stop:step' (inclusive grid) or a comma list."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigurationError(f"float range needs start:stop:step, got {text!r}")
        return beta_grid(float(parts[0]), float(parts[1]), float(parts[2]))
    return [float(tok) for tok in text.split(",") if tok.strip() != ""]


def _parse_str_list(text: str) -> list[str]:
    return [tok.strip() for tok in text.split(",") if tok.strip()]


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"not a boolean: {text!r}")


@dataclass
class Manifest:
    """Validated pipeline configuration."""

    # inputs
    reports: Path | None = None
    faers_drug: Path | None = None
    faers_reac: Path | None = None
    faers_demo: Path | None = None
    colmap: Path | None = None
    lexicon: Path | None = None
    rrf_conso: Path | None = None
    rrf_rel: Path | None = None
    references: dict[str, Path] = field(default_factory=dict)
    mappings: dict[str, Path] = field(default_factory=dict)
    # filter
    roles: list[RoleFilter] = field(default_factory=lambda: [RoleFilter.FULL])
    cutoff: str | None = None
    # train
    dim: int = 100
    epochs: int = 10
    negative: int = 5
    learning_rate: float = 0.025
    min_count: int = 1
    seeds: list[int] = field(default_factory=lambda: list(range(10)))
    threads: int = 1
    subsample: float | None = None
    # retrofit
    betas: list[float] = field(default_factory=beta_grid)
    variants: list[str] = field(default_factory=lambda: ["plain", "rescaled"])
    iterations: int = 10
    normalize_first: bool = True
    weighting: str = "inverse_degree"
    # eval
    policy: OovPolicy = OovPolicy.EXCLUDE
    aggregate: Aggregate = Aggregate.MAX
    baselines: list[str] = field(default_factory=lambda: ["prr", "ror"])
    # output
    out_dir: Path = Path("out")
    cache: bool = True
    strict: bool = False

    def validate(self) -> None:
        has_canonical = self.reports is not None
        has_faers = self.faers_drug is not None and self.faers_reac is not None and self.colmap is not None
        if not has_canonical and not has_faers:
            raise ConfigurationError(
                "inputs need either reports= or faers_drug=/faers_reac=/colmap="
            )
        if has_canonical and has_faers:
            raise ConfigurationError("give reports= or the faers_* trio, not both")
        has_lexicon = self.lexicon is not None
        has_rrf = self.rrf_conso is not None and self.rrf_rel is not None
        if not has_lexicon and not has_rrf:
            raise ConfigurationError("inputs need either lexicon= or rrf_conso=/rrf_rel=")
        if has_lexicon and has_rrf:
            raise ConfigurationError("give lexicon= or the rrf_* pair, not both")
        if not self.references:
            raise ConfigurationError("at least one reference.<name> is required")
        for name in self.mappings:
            if name not in self.references:
                raise ConfigurationError(f"mapping.{name} has no matching reference.{name}")
        if not self.roles:
            raise ConfigurationError("at least one role filter is required")
        if not self.seeds:
            raise ConfigurationError("at least one seed is required")
        if not self.betas:
            raise ConfigurationError("at least one beta is required")
        for b in self.betas:
            if not (0.0 <= b <= 1.0):
                raise ConfigurationError(f"beta outside [0, 1]: {b}")
        for v in self.variants:
            if v not in ("plain", "rescaled"):
                raise ConfigurationError(f"unknown variant {v!r}")
        for m in self.baselines:
            if m not in ("prr", "ror"):
                raise ConfigurationError(f"unknown baseline {m!r}")
        for path in self._input_paths():
            if not path.exists():
                raise ConfigurationError(f"input does not exist: {path}")

    def _input_paths(self) -> list[Path]:
        paths = [
            p
            for p in (
                self.reports, self.faers_drug, self.faers_reac, self.faers_demo,
                self.colmap, self.lexicon, self.rrf_conso, self.rrf_rel,
            )
            if p is not None
        ]
        paths.extend(self.references.values())
        paths.extend(self.mappings.values())
        return paths

    @classmethod
    def from_file(cls, path: str | Path) -> "Manifest":
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"manifest not found: {path}")
        parser = configparser.RawConfigParser()
        try:
            with open(path, "r", encoding="utf-8") as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigurationError(f"manifest parse error: {exc}") from exc
        base = path.parent
        m = cls()

        def resolve(text: str) -> Path:
            p = Path(text.strip())
            return p if p.is_absolute() else (base / p)

        known_sections = {"inputs", "filter", "train", "retrofit", "eval", "output"}
        unknown = set(parser.sections()) - known_sections
        if unknown:
            raise ConfigurationError(f"unknown manifest sections: {sorted(unknown)}")

        if parser.has_section("inputs"):
            for key, value in parser.items("inputs"):
                if key == "reports":
                    m.reports = resolve(value)
                elif key == "faers_drug":
                    m.faers_drug = resolve(value)
                elif key == "faers_reac":
                    m.faers_reac = resolve(value)
                elif key == "faers_demo":
                    m.faers_demo = resolve(value)
                elif key == "colmap":
                    m.colmap = resolve(value)
                elif key == "lexicon":
                    m.lexicon = resolve(value)
                elif key == "rrf_conso":
                    m.rrf_conso = resolve(value)
                elif key == "rrf_rel":
                    m.rrf_rel = resolve(value)
                elif key.startswith("reference."):
                    m.references[key.split(".", 1)[1]] = resolve(value)
                elif key.startswith("mapping."):
                    m.mappings[key.split(".", 1)[1]] = resolve(value)
                else:
                    raise ConfigurationError(f"unknown inputs key: {key}")
        if parser.has_section("filter"):
            for key, value in parser.items("filter"):
                if key == "roles":
                    try:
                        m.roles = [RoleFilter(v.upper()) for v in _parse_str_list(value)]
                    except ValueError as exc:
                        raise ConfigurationError(f"bad role filter: {value}") from exc
                elif key == "cutoff":
                    m.cutoff = value.strip() or None
                else:
                    raise ConfigurationError(f"unknown filter key: {key}")
        if parser.has_section("train"):
            for key, value in parser.items("train"):
                if key == "dim":
                    m.dim = int(value)
                elif key == "epochs":
                    m.epochs = int(value)
                elif key == "negative":
                    m.negative = int(value)
                elif key == "learning_rate":
                    m.learning_rate = float(value)
                elif key == "min_count":
                    m.min_count = int(value)
                elif key == "seeds":
                    m.seeds = _parse_int_list(value)
                elif key == "threads":
                    m.threads = int(value)
                elif key == "subsample":
                    m.subsample = float(value) if value.strip() else None
                else:
                    raise ConfigurationError(f"unknown train key: {key}")
        if parser.has_section("retrofit"):
            for key, value in parser.items("retrofit"):
                if key == "betas":
                    m.betas = _parse_float_list(value)
                elif key == "variants":
                    m.variants = _parse_str_list(value)
                elif key == "iterations":
                    m.iterations = int(value)
                elif key == "normalize_first":
                    m.normalize_first = _parse_bool(value)
                elif key == "weighting":
                    m.weighting = value.strip()
                else:
                    raise ConfigurationError(f"unknown retrofit key: {key}")
        if parser.has_section("eval"):
            for key, value in parser.items("eval"):
                if key == "policy":
                    try:
                        m.policy = OovPolicy(value.strip().lower())
                    except ValueError as exc:
                        raise ConfigurationError(f"bad policy: {value}") from exc
                elif key == "aggregate":
                    try:
                        m.aggregate = Aggregate(value.strip().lower())
                    except ValueError as exc:
                        raise ConfigurationError(f"bad aggregate: {value}") from exc
                elif key == "baselines":
                    m.baselines = _parse_str_list(value)
                else:
                    raise ConfigurationError(f"unknown eval key: {key}")
        if parser.has_section("output"):
            for key, value in parser.items("output"):
                if key == "dir":
                    m.out_dir = resolve(value)
                elif key == "cache":
                    m.cache = _parse_bool(value)
                elif key == "strict":
                    m.strict = _parse_bool(value)
                else:
                    raise ConfigurationError(f"unknown output key: {key}")
        m.validate()
        return m


def file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class _Stamps:
    """Content-addressed stage stamps under <out>/.stamps."""

    def __init__(self, root: Path, enabled: bool):
        self.dir = root / ".stamps"
        self.enabled = enabled
        self.dir.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def stage_key(inputs: Sequence[Path], config: dict) -> str:
        h = hashlib.sha256()
        for p in inputs:
            h.update(file_digest(Path(p)).encode())
        h.update(json.dumps(config, sort_keys=True, default=str).encode())
        h.update(__version__.encode())
        return h.hexdigest()

    def fresh(self, stage: str, key: str, outputs: Sequence[Path]) -> bool:
        if not self.enabled:
            return False
        stamp = self.dir / f"{stage}.json"
        if not stamp.exists():
            return False
        try:
            data = json.loads(stamp.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError):
            return False
        if data.get("key") != key:
            return False
        return all(Path(p).exists() for p in data.get("outputs", [])) and all(
            p.exists() for p in outputs
        )

    def write(self, stage: str, key: str, outputs: Sequence[Path]) -> None:
        stamp = self.dir / f"{stage}.json"
        stamp.write_text(
            json.dumps({"key": key, "outputs": [str(p) for p in outputs]}, indent=0),
            encoding="utf-8",
        )


class PipelineRun:
    """Executes a manifest. Use run(manifest) unless you need stage access."""

    def __init__(self, manifest: Manifest, echo: Callable[[str], None] | None = None):
        self.m = manifest
        self.out = manifest.out_dir
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "logs").mkdir(exist_ok=True)
        self._log_path = self.out / "logs" / "pipeline.log"
        self._log_file = open(self._log_path, "a", encoding="utf-8")
        self._echo = echo
        self.stamps = _Stamps(self.out, manifest.cache)

    def close(self) -> None:
        self._log_file.close()

    def log(self, stage: str, **fields) -> None:
        text = f"stage={stage} " + " ".join(f"{k}={v}" for k, v in fields.items())
        self._log_file.write(text + "\n")
        self._log_file.flush()
        if self._echo is not None:
            self._echo(text)

    # -- stages ------------------------------------------------------------

    def _report_inputs(self) -> list[Path]:
        m = self.m
        if m.reports is not None:
            return [m.reports]
        paths = [m.faers_drug, m.faers_reac, m.colmap]
        if m.faers_demo is not None:
            paths.insert(2, m.faers_demo)
        return [p for p in paths if p is not None]

    def _parse_source_reports(self):
        m = self.m
        if m.reports is not None:
            counters = ParseCounters()
            return parse_canonical(m.reports, counters, strict=m.strict), counters
        counters = ParseCounters()
        colmap = load_colmap(m.colmap)
        reports = parse_ascii_tables(
            m.faers_drug, m.faers_reac, m.faers_demo, colmap, counters, strict=m.strict
        )
        return reports, counters

    def ingest(self, role: RoleFilter) -> Path:
        name = role.value.lower()
        out_path = self.out / "ingest" / name / "reports.tsv"
        stage = f"ingest_{name}"
        key = self.stamps.stage_key(
            self._report_inputs(), {"role": role.value, "cutoff": self.m.cutoff, "strict": self.m.strict}
        )
        if self.stamps.fresh(stage, key, [out_path]):
            self.log(stage, cache="hit", out=out_path)
            return out_path
        started = time.monotonic()
        out_path.parent.mkdir(parents=True, exist_ok=True)
        reports, parse_counters = self._parse_source_reports()
        filter_counters = FilterCounters()
        kept = filter_reports(reports, role, self.m.cutoff, filter_counters)
        n = write_canonical(kept, out_path)
        self.stamps.write(stage, key, [out_path])
        self.log(
            stage, cache="miss", written=n,
            **parse_counters.as_dict(), **filter_counters.as_dict(),
            elapsed=f"{time.monotonic() - started:.2f}s",
        )
        return out_path

    def vocab(self, role: RoleFilter, canonical_path: Path) -> tuple[Path, Path, Path]:
        name = role.value.lower()
        vocab_dir = self.out / "vocab" / name
        drugs_path = vocab_dir / "drugs.tsv"
        ades_path = vocab_dir / "ades.tsv"
        counts_path = vocab_dir / "counts.tsv"
        stage = f"vocab_{name}"
        key = self.stamps.stage_key([canonical_path], {"min_count": self.m.min_count})
        outputs = [drugs_path, ades_path, counts_path]
        if self.stamps.fresh(stage, key, outputs):
            self.log(stage, cache="hit")
            return drugs_path, ades_path, counts_path
        started = time.monotonic()
        vocab_dir.mkdir(parents=True, exist_ok=True)
        drug_vocab, ade_vocab = build_vocabularies(parse_canonical(canonical_path), self.m.min_count)
        counts = accumulate_counts(parse_canonical(canonical_path), drug_vocab, ade_vocab)
        drug_vocab.save(drugs_path)
        ade_vocab.save(ades_path)
        counts.save(counts_path)
        self.stamps.write(stage, key, outputs)
        self.log(
            stage, cache="miss", drugs=len(drug_vocab), ades=len(ade_vocab),
            reports=counts.total_reports, pairs=len(counts.pair_reports),
            elapsed=f"{time.monotonic() - started:.2f}s",
        )
        return drugs_path, ades_path, counts_path

    def train_editions(
        self, role: RoleFilter, canonical_path: Path, drugs_path: Path, ades_path: Path
    ) -> list[tuple[int, Path, Path]]:
        name = role.value.lower()
        train_dir = self.out / "train" / name
        train_dir.mkdir(parents=True, exist_ok=True)
        m = self.m
        config_slice = {
            "dim": m.dim, "epochs": m.epochs, "negative": m.negative,
            "learning_rate": m.learning_rate, "subsample": m.subsample,
        }
        outputs: list[tuple[int, Path, Path]] = []
        drug_vocab: Vocabulary | None = None
        ade_vocab: Vocabulary | None = None
        arrays = None
        for seed in m.seeds:
            ade_path = train_dir / f"ade_s{seed}.vec"
            drug_path = train_dir / f"drug_s{seed}.vec"
            stage = f"train_{name}_s{seed}"
            key = self.stamps.stage_key(
                [canonical_path, drugs_path, ades_path], {**config_slice, "seed": seed}
            )
            if self.stamps.fresh(stage, key, [ade_path, drug_path]):
                self.log(stage, cache="hit")
                outputs.append((seed, ade_path, drug_path))
                continue
            started = time.monotonic()
            if drug_vocab is None:
                drug_vocab = Vocabulary.load(drugs_path)
                ade_vocab = Vocabulary.load(ades_path)
                arrays = events_as_arrays(
                    emit_events(parse_canonical(canonical_path), drug_vocab, ade_vocab)
                )
            config = TrainConfig(
                dim=m.dim, epochs=m.epochs, negative_samples=m.negative,
                initial_learning_rate=m.learning_rate,
                subsample_threshold=m.subsample, seed=seed, threads=m.threads,
            )
            space = init_space(drug_vocab, ade_vocab, config)
            losses: list[float] = []
            train(arrays, space, config, drug_vocab, ade_vocab, loss_sink=losses)
            save_vectors(space.ade_vectors, ade_path)
            save_vectors(space.drug_vectors, drug_path)
            self.stamps.write(stage, key, [ade_path, drug_path])
            self.log(
                stage, cache="miss", events=int(arrays[0].shape[0]),
                first_loss=f"{losses[0]:.4f}", last_loss=f"{losses[-1]:.4f}",
                elapsed=f"{time.monotonic() - started:.2f}s",
            )
            outputs.append((seed, ade_path, drug_path))
        return outputs

    def lexicon(self) -> Path:
        out_path = self.out / "lexicon" / "lexicon.txt"
        m = self.m
        if m.lexicon is not None:
            inputs = [m.lexicon]
            config = {"source": "lexicon"}
        else:
            inputs = [m.rrf_conso, m.rrf_rel]
            config = {"source": "rrf"}
        key = self.stamps.stage_key(inputs, config)
        if self.stamps.fresh("lexicon", key, [out_path]):
            self.log("lexicon", cache="hit")
            return out_path
        started = time.monotonic()
        out_path.parent.mkdir(parents=True, exist_ok=True)
        if m.lexicon is not None:
            graph = LexiconGraph.load(m.lexicon)
        else:
            counters = LexiconCounters()
            graph = build_from_rrf(m.rrf_conso, m.rrf_rel, counters, strict=m.strict)
            self.log("lexicon", **counters.as_dict())
        graph.save(out_path)
        self.stamps.write("lexicon", key, [out_path])
        self.log(
            "lexicon", cache="miss", terms=len(graph), edges=graph.n_edges(),
            elapsed=f"{time.monotonic() - started:.2f}s",
        )
        return out_path

    def evaluate(
        self,
        role: RoleFilter,
        vocab_paths: tuple[Path, Path, Path],
        editions: list[tuple[int, Path, Path]],
        lexicon_path: Path,
    ) -> list[SweepRow]:
        name = role.value.lower()
        m = self.m
        drugs_path, ades_path, counts_path = vocab_paths
        drug_vocab = Vocabulary.load(drugs_path)
        ade_vocab = Vocabulary.load(ades_path)
        counts = GlobalCounts.load(counts_path)
        graph = LexiconGraph.load(lexicon_path)
        coverage = coverage_report(graph, drug_vocab.terms)
        self.log(
            f"eval_{name}", vocab_drugs=len(drug_vocab),
            lexicon_covered=coverage.n_covered, coverage=f"{coverage.fraction:.3f}",
        )
        refsets: dict[str, list[ReferencePair]] = {}
        for ref_name, ref_path in sorted(self.m.references.items()):
            mapping_path = self.m.mappings.get(ref_name)
            refsets[ref_name] = load_reference(ref_path, mapping_path)
        spaces: list[EmbeddingSpace] = []
        for seed, ade_path, drug_path in editions:
            ade_table = load_vectors(ade_path)
            drug_table = load_vectors(drug_path)
            spaces.append(
                EmbeddingSpace(dim=ade_table.dim, ade_vectors=ade_table, drug_vectors=drug_table, seed=seed)
            )
        started = time.monotonic()
        rows = sweep_rows(
            trainset=name, editions=spaces, graph=graph, betas=m.betas,
            variants=m.variants, refsets=refsets, iterations=m.iterations,
            normalize_first=m.normalize_first, weighting=m.weighting,
            policy=m.policy, aggregate=m.aggregate,
        )
        if m.baselines:
            base = baseline_rows(
                trainset=name, refsets=refsets, counts=counts,
                drug_vocab=drug_vocab, ade_vocab=ade_vocab,
                policy=m.policy, aggregate=m.aggregate,
            )
            rows.extend(r for r in base if r.method in m.baselines)
        self.log(
            f"eval_{name}", rows=len(rows), refsets=len(refsets),
            elapsed=f"{time.monotonic() - started:.2f}s",
        )
        return rows

    def write_outputs(self, rows: list[SweepRow]) -> Path:
        results_path = self.out / "results.tsv"
        write_results(rows, results_path)
        curves_dir = self.out / "curves"
        curves_dir.mkdir(exist_ok=True)
        by_curve: dict[tuple[str, str, str], list[tuple[float, float]]] = {}
        for row in rows:
            if row.method != "aer2vec" or row.beta is None:
                continue
            by_curve.setdefault((row.trainset, row.refset, row.variant), []).append(
                (row.beta, row.summary.auc_mean)
            )
        for (trainset, refset, variant), points in sorted(by_curve.items()):
            curve_path = curves_dir / f"curve_{trainset}_{refset}_{variant}.tsv"
            with open(curve_path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write("beta\tauc_mean\n")
                for beta, auc in sorted(points):
                    fh.write(f"{format(beta, 'g')}\t{auc!r}\n")
        self.log("results", path=results_path, rows=len(rows))
        return results_path


def run(manifest: Manifest, echo: Callable[[str], None] | None = None) -> Path:
    """Execute every stage; returns the results.tsv path."""
    pipeline = PipelineRun(manifest, echo)
    try:
        lexicon_path = pipeline.lexicon()
        all_rows: list[SweepRow] = []
        for role in manifest.roles:
            canonical_path = pipeline.ingest(role)
            vocab_paths = pipeline.vocab(role, canonical_path)
            editions = pipeline.train_editions(
                role, canonical_path, vocab_paths[0], vocab_paths[1]
            )
            all_rows.extend(pipeline.evaluate(role, vocab_paths, editions, lexicon_path))
        return pipeline.write_outputs(all_rows)
    finally:
        pipeline.close()
