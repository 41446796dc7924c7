"""Report-level skip-gram embeddings with negative sampling.

Each co-occurrence event (reaction term, drug) is a training pair: the
reaction term's input vector is pulled toward the drug's output vector, and
pushed away from sampled noise drugs, through the logistic link
sigma(ade . drug). Drugs are sampled as noise proportionally to their
report frequency raised to a fractional power.

Update order per event follows the reference skip-gram implementation: the
input row's gradient is accumulated against output rows as they are BEFORE
their own update, output rows are updated immediately, and the accumulated
gradient lands on the input row once at the end of the event. Training with
one thread is bitwise reproducible for a fixed seed because permutations and
noise draws are pre-generated with a seeded PCG64 generator outside the
compiled kernel.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO, Iterable, Sequence, Union

import numpy as np
from numba import njit

from .errors import ConfigurationError, TrainingDivergedError, UnknownTermError
from .vocab import CooccurrenceEvent, Vocabulary, events_as_arrays


@dataclass
class TrainConfig:
    """Hyperparameters for one training run."""

    dim: int = 100
    epochs: int = 10
    negative_samples: int = 5
    initial_learning_rate: float = 0.025
    min_learning_rate: float = 1e-4
    noise_exponent: float = 0.75
    subsample_threshold: float | None = None
    seed: int = 0
    threads: int = 1

    def validate(self) -> None:
        if self.dim < 1:
            raise ConfigurationError(f"dim must be >= 1, got {self.dim}")
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.negative_samples < 1:
            raise ConfigurationError("negative_samples must be >= 1")
        if not (0.0 < self.min_learning_rate <= self.initial_learning_rate):
            raise ConfigurationError(
                "need 0 < min_learning_rate <= initial_learning_rate, got "
                f"{self.min_learning_rate} / {self.initial_learning_rate}"
            )
        if self.noise_exponent < 0:
            raise ConfigurationError("noise_exponent must be >= 0")
        if self.subsample_threshold is not None and not (0.0 < self.subsample_threshold <= 1.0):
            raise ConfigurationError("subsample_threshold must be in (0, 1]")
        if self.threads < 1:
            raise ConfigurationError("threads must be >= 1")

    def with_seed(self, seed: int) -> "TrainConfig":
        return replace(self, seed=seed)


@dataclass
class VectorTable:
    """Terms mapped to rows of a dense float64 matrix."""

    terms: list[str]
    vectors: np.ndarray
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.terms):
            raise ValueError("vectors must be (len(terms), dim)")
        self.index = {t: i for i, t in enumerate(self.terms)}
        if len(self.index) != len(self.terms):
            raise ValueError("duplicate terms in vector table")

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self) -> int:
        return len(self.terms)

    def __contains__(self, term: str) -> bool:
        return term in self.index

    def row(self, term: str) -> np.ndarray:
        try:
            return self.vectors[self.index[term]]
        except KeyError:
            raise UnknownTermError(term) from None

    def copy(self) -> "VectorTable":
        return VectorTable(terms=list(self.terms), vectors=self.vectors.copy())


def save_vectors(table: VectorTable, sink: Union[str, Path, IO[str]]) -> None:
    """Write the text interchange format: a "rows dim" header, then one line
    per term with full-precision floats. Terms may contain spaces (readers
    split from the right); terms containing newlines are rejected."""
    own = isinstance(sink, (str, Path))
    stream: IO[str] = open(sink, "w", encoding="utf-8", newline="\n") if own else sink
    try:
        stream.write(f"{len(table)} {table.dim}\n")
        for i, term in enumerate(table.terms):
            if "\n" in term or "\r" in term:
                raise ValueError(f"term contains a line break: {term!r}")
            values = " ".join(repr(float(v)) for v in table.vectors[i])
            stream.write(f"{term} {values}\n")
    finally:
        if own:
            stream.close()


def load_vectors(source: Union[str, Path, IO[str]]) -> VectorTable:
    own = isinstance(source, (str, Path))
    stream: IO[str] = open(source, "r", encoding="utf-8") if own else source
    try:
        header = stream.readline().split()
        if len(header) != 2:
            raise ValueError("vector file must start with 'rows dim'")
        rows, dim = int(header[0]), int(header[1])
        terms: list[str] = []
        matrix = np.empty((rows, dim), dtype=np.float64)
        for i in range(rows):
            line = stream.readline().rstrip("\n")
            if not line:
                raise ValueError(f"vector file truncated at row {i}")
            parts = line.rsplit(" ", dim)
            if len(parts) != dim + 1:
                raise ValueError(f"row {i}: expected term plus {dim} values")
            terms.append(parts[0])
            matrix[i] = [float(p) for p in parts[1:]]
    finally:
        if own:
            stream.close()
    return VectorTable(terms=terms, vectors=matrix)


@dataclass
class EmbeddingSpace:
    """Paired vector tables over the reaction and drug vocabularies."""

    dim: int
    ade_vectors: VectorTable
    drug_vectors: VectorTable
    seed: int

    def score(self, ade: str, drug: str) -> float:
        return score_pair(self, ade, drug)


def init_space(drug_vocab: Vocabulary, ade_vocab: Vocabulary, config: TrainConfig) -> EmbeddingSpace:
    """Fresh space: reaction rows uniform in [-0.5/dim, +0.5/dim], drug rows zero."""
    config.validate()
    if len(drug_vocab) == 0 or len(ade_vocab) == 0:
        raise ConfigurationError("cannot initialize an embedding over an empty vocabulary")
    rng = np.random.default_rng(config.seed)
    bound = 0.5 / config.dim
    ade_matrix = rng.uniform(-bound, bound, size=(len(ade_vocab), config.dim))
    drug_matrix = np.zeros((len(drug_vocab), config.dim), dtype=np.float64)
    return EmbeddingSpace(
        dim=config.dim,
        ade_vectors=VectorTable(terms=list(ade_vocab.terms), vectors=ade_matrix),
        drug_vectors=VectorTable(terms=list(drug_vocab.terms), vectors=drug_matrix),
        seed=config.seed,
    )


def _sigmoid(x: np.ndarray | float) -> np.ndarray | float:
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def _softplus(x: float) -> float:
    return max(x, 0.0) + math.log1p(math.exp(-abs(x)))


def pair_loss(input_vec: np.ndarray, output_vec: np.ndarray, label: int) -> float:
    """Negative log likelihood of one labeled pair under the logistic link.

    label 1 is an observed co-occurrence, label 0 a noise sample.
    """
    x = float(np.dot(input_vec, output_vec))
    return _softplus(-x) if label else _softplus(x)


def pair_gradients(
    input_vec: np.ndarray, output_vec: np.ndarray, label: int
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of pair_loss with respect to (input_vec, output_vec).

    Descending means stepping against these. The trainer's update is
    equivalent to one SGD step on this loss.
    """
    x = float(np.dot(input_vec, output_vec))
    coef = float(_sigmoid(x)) - float(label)
    return coef * np.asarray(output_vec, dtype=np.float64), coef * np.asarray(
        input_vec, dtype=np.float64
    )


def noise_distribution(drug_vocab: Vocabulary, exponent: float = 0.75) -> np.ndarray:
    """Noise probabilities proportional to report frequency ** exponent."""
    freq = np.asarray(drug_vocab.frequency, dtype=np.float64)
    if freq.size == 0:
        raise ConfigurationError("empty drug vocabulary has no noise distribution")
    weights = np.power(freq, exponent)
    total = weights.sum()
    if total <= 0:
        raise ConfigurationError("noise distribution has zero mass")
    return weights / total


@njit(cache=True, nogil=True)
def _sgns_kernel(ade_vecs, drug_vecs, ev_ade, ev_drug, negs, t_arr, total_t, lr0, lr_floor):
    dim = ade_vecs.shape[1]
    k = negs.shape[1]
    loss = 0.0
    grad = np.empty(dim, dtype=np.float64)
    for p in range(ev_ade.shape[0]):
        a = ev_ade[p]
        d = ev_drug[p]
        lr = lr0 - (lr0 - lr_floor) * (t_arr[p] / total_t)
        if lr < lr_floor:
            lr = lr_floor
        for c in range(dim):
            grad[c] = 0.0
        for s in range(k + 1):
            if s == 0:
                target = d
                label = 1.0
            else:
                target = negs[p, s - 1]
                if target == d:
                    continue
                label = 0.0
            x = 0.0
            for c in range(dim):
                x += ade_vecs[a, c] * drug_vecs[target, c]
            if x >= 0.0:
                f = 1.0 / (1.0 + math.exp(-x))
            else:
                ex = math.exp(x)
                f = ex / (1.0 + ex)
            if label > 0.0:
                contrib = f
            else:
                contrib = 1.0 - f
            if contrib < 1e-12:
                contrib = 1e-12
            loss -= math.log(contrib)
            g = (label - f) * lr
            for c in range(dim):
                grad[c] += g * drug_vecs[target, c]
            for c in range(dim):
                drug_vecs[target, c] += g * ade_vecs[a, c]
        for c in range(dim):
            ade_vecs[a, c] += grad[c]
    return loss


def _coerce_events(
    events: Union[Iterable[CooccurrenceEvent], tuple[np.ndarray, np.ndarray]],
) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(events, tuple) and len(events) == 2 and isinstance(events[0], np.ndarray):
        return (
            np.ascontiguousarray(events[0], dtype=np.int64),
            np.ascontiguousarray(events[1], dtype=np.int64),
        )
    return events_as_arrays(events)


def train(
    events: Union[Iterable[CooccurrenceEvent], tuple[np.ndarray, np.ndarray]],
    space: EmbeddingSpace,
    config: TrainConfig,
    drug_vocab: Vocabulary,
    ade_vocab: Vocabulary | None = None,
    loss_sink: list[float] | None = None,
) -> EmbeddingSpace:
    """Run SGD over all events for config.epochs epochs, in place.

    The learning rate decays linearly per scanned event from
    initial_learning_rate to min_learning_rate across the whole run. Events
    are shuffled every epoch. drug_vocab supplies the noise distribution;
    ade_vocab is only needed when subsampling is enabled. With threads > 1
    the event stream is sharded across lock-free workers and results are no
    longer bitwise reproducible.

    Per epoch, the seeded generator is consumed in a fixed order: the
    permutation, then the noise matrix, then (if enabled) the subsampling
    draws for reaction and drug.
    """
    config.validate()
    ev_ade, ev_drug = _coerce_events(events)
    n_events = int(ev_ade.shape[0])
    if n_events == 0:
        return space
    if ev_drug.max() >= len(space.drug_vectors.terms) or ev_ade.max() >= len(space.ade_vectors.terms):
        raise ConfigurationError("event ids exceed the embedding tables")

    noise = noise_distribution(drug_vocab, config.noise_exponent)
    noise_cum = np.cumsum(noise)
    noise_cum[-1] = 1.0

    keep_ade = keep_drug = None
    if config.subsample_threshold is not None:
        if ade_vocab is None:
            raise ConfigurationError("subsampling requires the reaction vocabulary")
        t = config.subsample_threshold

        def keep_probs(v: Vocabulary) -> np.ndarray:
            freq = np.asarray(v.frequency, dtype=np.float64)
            rel = freq / max(freq.sum(), 1.0)
            with np.errstate(divide="ignore", invalid="ignore"):
                p = (np.sqrt(rel / t) + 1.0) * (t / rel)
            return np.clip(np.nan_to_num(p, nan=1.0, posinf=1.0), 0.0, 1.0)

        keep_ade = keep_probs(ade_vocab)
        keep_drug = keep_probs(drug_vocab)

    rng = np.random.default_rng(config.seed)
    ade_mat = space.ade_vectors.vectors
    drug_mat = space.drug_vectors.vectors
    total_t = float(config.epochs * n_events)
    k = config.negative_samples

    executor = ThreadPoolExecutor(max_workers=config.threads) if config.threads > 1 else None
    try:
        for epoch in range(config.epochs):
            order = rng.permutation(n_events)
            if k > 0:
                draws = rng.random((n_events, k))
                negs = np.searchsorted(noise_cum, draws, side="right").astype(np.int64)
            else:
                negs = np.zeros((n_events, 0), dtype=np.int64)
            if keep_ade is not None:
                kept = (rng.random(n_events) < keep_ade[ev_ade[order]]) & (
                    rng.random(n_events) < keep_drug[ev_drug[order]]
                )
                positions = np.nonzero(kept)[0]
            else:
                positions = np.arange(n_events)
            ep_ade = ev_ade[order[positions]]
            ep_drug = ev_drug[order[positions]]
            ep_negs = negs[positions]
            t_arr = (epoch * n_events + positions).astype(np.float64)

            if executor is None:
                loss = _sgns_kernel(
                    ade_mat, drug_mat, ep_ade, ep_drug, ep_negs, t_arr,
                    total_t, config.initial_learning_rate, config.min_learning_rate,
                )
            else:
                bounds = np.linspace(0, len(positions), config.threads + 1, dtype=np.int64)
                futures = [
                    executor.submit(
                        _sgns_kernel,
                        ade_mat, drug_mat,
                        ep_ade[lo:hi], ep_drug[lo:hi], ep_negs[lo:hi], t_arr[lo:hi],
                        total_t, config.initial_learning_rate, config.min_learning_rate,
                    )
                    for lo, hi in zip(bounds[:-1], bounds[1:])
                    if hi > lo
                ]
                loss = sum(f.result() for f in futures)

            if not (np.isfinite(ade_mat).all() and np.isfinite(drug_mat).all()):
                raise TrainingDivergedError(f"non-finite values after epoch {epoch}")
            if loss_sink is not None:
                denom = max(len(positions), 1)
                loss_sink.append(float(loss) / denom)
    finally:
        if executor is not None:
            executor.shutdown(wait=True)
    return space


def score_pair(space: EmbeddingSpace, ade: str, drug: str) -> float:
    """sigma(ade . drug); raises UnknownTermError when either term is absent."""
    x = float(np.dot(space.ade_vectors.row(ade), space.drug_vectors.row(drug)))
    return float(_sigmoid(x))


def train_editions(
    events: Union[Iterable[CooccurrenceEvent], tuple[np.ndarray, np.ndarray]],
    drug_vocab: Vocabulary,
    ade_vocab: Vocabulary,
    config: TrainConfig,
    seeds: Sequence[int],
) -> list[EmbeddingSpace]:
    """Train one edition per seed over the same event arrays."""
    arrays = _coerce_events(events)
    editions: list[EmbeddingSpace] = []
    for seed in seeds:
        cfg = config.with_seed(int(seed))
        space = init_space(drug_vocab, ade_vocab, cfg)
        train(arrays, space, cfg, drug_vocab, ade_vocab)
        editions.append(space)
    return editions
