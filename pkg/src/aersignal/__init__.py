"""Signal detection for spontaneous adverse-event reports.

Reports become co-occurrence events; events train report-level embeddings;
a synonym graph retrofits the drug vectors; disproportionality baselines and
AUC evaluation close the loop. See the README for the command-line entry
points.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigurationError,
    ParseError,
    TrainingDivergedError,
    UndefinedMetricError,
    UnknownTermError,
)
from .ingest import (
    DrugMention,
    EventDate,
    Report,
    Role,
    RoleFilter,
    filter_reports,
    normalize_drugname,
    parse_ascii_tables,
    parse_canonical,
    write_canonical,
)
from .vocab import (
    CooccurrenceEvent,
    GlobalCounts,
    Vocabulary,
    accumulate_counts,
    build_vocabularies,
    emit_events,
)
from .embedding import (
    EmbeddingSpace,
    TrainConfig,
    VectorTable,
    init_space,
    load_vectors,
    save_vectors,
    score_pair,
    train,
)
from .lexicon import LexiconGraph, build_from_rrf, build_graph, coverage_report, parse_rrf
from .retrofit import RetrofitConfig, RetrofitResult, objective_value, rescale, retrofit
from .disproportionality import ContingencyCounts, MetricResult, contingency, prr, ror
from .evaluate import (
    Aggregate,
    OovPolicy,
    ReferencePair,
    auc_from_scores,
    load_reference,
    score_reference,
)
from .synth import PlantedClass, SynthSpec, generate

__all__ = [name for name in dir() if not name.startswith("_")]
