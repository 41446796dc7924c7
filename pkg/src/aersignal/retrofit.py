"""Graph retrofitting of drug vectors.

Gauss-Seidel sweeps move each graph-listed drug vector toward a convex
combination of its original position and its graph neighbors:

    q_i <- (alpha * qhat_i + w_i * sum_{j in N(i)} q_j) / denom_i

With the default inverse-degree weighting, w_i = beta / |N(i)| and
denom_i = alpha + beta, so the neighborhood contributes a fixed beta share
regardless of degree. The uniform weighting uses w_i = beta and
denom_i = alpha + beta * |N(i)|. Either update is exact per-row minimization
of the convex quadratic reported by objective_value, so the objective is
non-increasing along sweeps up to float rounding.

Only terms that appear as adjacency KEYS are updated; a term listed solely
as someone's neighbor acts as a fixed anchor. Graph terms without a vector
are skipped and counted.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np
from numba import njit

from .errors import ConfigurationError
from .embedding import VectorTable
from .lexicon import LexiconGraph

WEIGHTINGS = ("inverse_degree", "uniform")


@dataclass
class RetrofitConfig:
    """Solver settings. alpha + beta must equal 1."""

    alpha: float = 0.5
    beta: float = 0.5
    iterations: int = 10
    normalize_first: bool = True
    rescale_after: bool = False
    weighting: str = "inverse_degree"
    convergence_tol: float = 1e-6

    def validate(self) -> None:
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise ConfigurationError(f"alpha/beta outside [0, 1]: {self.alpha}, {self.beta}")
        if abs(self.alpha + self.beta - 1.0) > 1e-12:
            raise ConfigurationError(f"alpha + beta must be 1, got {self.alpha + self.beta}")
        if self.iterations < 0:
            raise ConfigurationError("iterations must be >= 0")
        if self.weighting not in WEIGHTINGS:
            raise ConfigurationError(f"unknown weighting {self.weighting!r}")
        if self.convergence_tol < 0:
            raise ConfigurationError("convergence_tol must be >= 0")

    @classmethod
    def from_beta(cls, beta: float, **kwargs) -> "RetrofitConfig":
        return cls(alpha=1.0 - beta, beta=beta, **kwargs)


@dataclass
class RetrofitResult:
    """Retrofitted table plus bookkeeping about what moved.

    qhat_vectors is the anchor table the solver actually pulled toward (the
    input rows, unit-normalized when normalize_first was on); pre_rescale is
    the converged iterate before any norm restoration.
    """

    drug_vectors: VectorTable
    qhat_vectors: VectorTable
    pre_rescale: VectorTable
    updated_terms: list[str]
    unchanged_terms: list[str]
    skipped_graph_terms: int
    missing_neighbor_refs: int
    degenerate_rows: int
    iterations_run: int
    final_max_change: float


AdjacencyLike = Union[LexiconGraph, Mapping[str, Sequence[str]]]


def _adjacency_of(graph: AdjacencyLike) -> Mapping[str, Sequence[str]]:
    if isinstance(graph, LexiconGraph):
        return graph.adjacency
    return graph


@njit(cache=True, nogil=True)
def _retrofit_sweep(mat, qhat, upd_rows, nb_flat, nb_off, alpha, beta, inverse_degree):
    dim = mat.shape[1]
    max_change = 0.0
    new_row = np.empty(dim, dtype=np.float64)
    for u in range(upd_rows.shape[0]):
        i = upd_rows[u]
        lo = nb_off[u]
        hi = nb_off[u + 1]
        n = hi - lo
        for c in range(dim):
            new_row[c] = 0.0
        for p in range(lo, hi):
            j = nb_flat[p]
            for c in range(dim):
                new_row[c] += mat[j, c]
        if inverse_degree:
            w = beta / n
            denom = alpha + beta
        else:
            w = beta
            denom = alpha + beta * n
        for c in range(dim):
            value = (alpha * qhat[i, c] + w * new_row[c]) / denom
            delta = value - mat[i, c]
            if delta < 0.0:
                delta = -delta
            if delta > max_change:
                max_change = delta
            mat[i, c] = value
    return max_change


def _compile_graph(
    table: VectorTable, adjacency: Mapping[str, Sequence[str]]
) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[str], int, int]:
    """Resolve the adjacency against the table into CSR-style index arrays."""
    upd_terms: list[str] = []
    upd_rows: list[int] = []
    nb_flat: list[int] = []
    nb_off: list[int] = [0]
    skipped_terms = 0
    missing_refs = 0
    for term in sorted(adjacency):
        row = table.index.get(term)
        if row is None:
            skipped_terms += 1
            continue
        neighbor_rows: list[int] = []
        for nb in adjacency[term]:
            j = table.index.get(nb)
            if j is None:
                missing_refs += 1
            else:
                neighbor_rows.append(j)
        if not neighbor_rows:
            continue
        upd_terms.append(term)
        upd_rows.append(row)
        nb_flat.extend(neighbor_rows)
        nb_off.append(len(nb_flat))
    return (
        np.asarray(upd_rows, dtype=np.int64),
        np.asarray(nb_flat, dtype=np.int64),
        np.asarray(nb_off, dtype=np.int64),
        upd_terms,
        skipped_terms,
        missing_refs,
    )


def normalize_rows(matrix: np.ndarray) -> tuple[np.ndarray, int]:
    """Unit-L2 rows; zero rows are left untouched. Returns (matrix, n_zero)."""
    norms = np.linalg.norm(matrix, axis=1)
    zero = norms == 0.0
    safe = np.where(zero, 1.0, norms)
    return matrix / safe[:, None], int(zero.sum())


def retrofit(
    drug_vectors: VectorTable,
    graph: AdjacencyLike,
    config: RetrofitConfig,
    objective_trace: list[float] | None = None,
) -> RetrofitResult:
    """Retrofit a copy of drug_vectors to the graph.

    Runs config.iterations Gauss-Seidel sweeps over the update terms in
    sorted order, stopping early when the largest per-coordinate change in a
    sweep falls below config.convergence_tol. When objective_trace is given,
    objective_value is appended after every sweep (and once before the first).
    """
    config.validate()
    adjacency = _adjacency_of(graph)
    original = drug_vectors.vectors.astype(np.float64, copy=True)
    working = original.copy()

    degenerate = 0
    if config.normalize_first:
        working, _ = normalize_rows(working)
    qhat = working.copy()

    upd_rows, nb_flat, nb_off, upd_terms, skipped_terms, missing_refs = _compile_graph(
        drug_vectors, adjacency
    )
    updated_set = set(upd_terms)
    unchanged_terms = [t for t in drug_vectors.terms if t not in updated_set]

    qhat_table = VectorTable(terms=list(drug_vectors.terms), vectors=qhat)
    if objective_trace is not None:
        objective_trace.append(
            objective_value(VectorTable(list(drug_vectors.terms), working), qhat_table, adjacency, config)
        )

    iterations_run = 0
    max_change = 0.0
    for _ in range(config.iterations):
        if upd_rows.size == 0:
            break
        max_change = float(
            _retrofit_sweep(
                working, qhat, upd_rows, nb_flat, nb_off,
                float(config.alpha), float(config.beta),
                config.weighting == "inverse_degree",
            )
        )
        iterations_run += 1
        if objective_trace is not None:
            objective_trace.append(
                objective_value(VectorTable(list(drug_vectors.terms), working), qhat_table, adjacency, config)
            )
        if max_change < config.convergence_tol:
            break

    working_table = VectorTable(terms=list(drug_vectors.terms), vectors=working)
    if config.rescale_after:
        original_table = VectorTable(terms=list(drug_vectors.terms), vectors=original)
        rescaled, degenerate = rescale(original_table, working_table)
        out_table = rescaled
    else:
        out_table = working_table

    return RetrofitResult(
        drug_vectors=out_table,
        qhat_vectors=qhat_table,
        pre_rescale=working_table,
        updated_terms=upd_terms,
        unchanged_terms=unchanged_terms,
        skipped_graph_terms=skipped_terms,
        missing_neighbor_refs=missing_refs,
        degenerate_rows=degenerate,
        iterations_run=iterations_run,
        final_max_change=max_change,
    )


def fixed_point_residual(
    result_vectors: VectorTable,
    qhat_vectors: VectorTable,
    graph: AdjacencyLike,
    config: RetrofitConfig,
) -> float:
    """Largest per-coordinate violation of the stationarity equation.

    At a fixed point every update term satisfies
    q_i = (alpha * qhat_i + w_i * sum q_j) / denom_i exactly.
    """
    config.validate()
    adjacency = _adjacency_of(graph)
    upd_rows, nb_flat, nb_off, _, _, _ = _compile_graph(result_vectors, adjacency)
    mat = result_vectors.vectors
    qhat = qhat_vectors.vectors
    worst = 0.0
    for u in range(upd_rows.size):
        i = upd_rows[u]
        nbs = nb_flat[nb_off[u]: nb_off[u + 1]]
        n = nbs.size
        if config.weighting == "inverse_degree":
            target = (config.alpha * qhat[i] + (config.beta / n) * mat[nbs].sum(axis=0)) / (
                config.alpha + config.beta
            )
        else:
            target = (config.alpha * qhat[i] + config.beta * mat[nbs].sum(axis=0)) / (
                config.alpha + config.beta * n
            )
        worst = max(worst, float(np.max(np.abs(mat[i] - target))))
    return worst


def objective_value(
    current: VectorTable,
    qhat: VectorTable,
    graph: AdjacencyLike,
    config: RetrofitConfig,
) -> float:
    """The convex quadratic the sweep minimizes coordinate-wise.

    inverse_degree:  sum_i alpha * |N(i)| * ||q_i - qhat_i||^2
                     + beta * sum_{edges, once} ||q_i - q_j||^2
    uniform:         sum_i alpha * ||q_i - qhat_i||^2
                     + beta * sum_{edges, once} ||q_i - q_j||^2

    The attachment sum runs over update terms (adjacency keys with at least
    one resolvable neighbor); each unordered edge with both endpoints in the
    table contributes once. On symmetric graphs the sweep never increases
    this value beyond float rounding.
    """
    config.validate()
    adjacency = _adjacency_of(graph)
    mat = current.vectors
    qh = qhat.vectors
    if mat.shape != qh.shape or current.terms != qhat.terms:
        raise ValueError("current and qhat tables must align")
    attach = 0.0
    edge = 0.0
    seen_edges: set[tuple[int, int]] = set()
    for term in sorted(adjacency):
        i = current.index.get(term)
        if i is None:
            continue
        neighbor_rows = [j for nb in adjacency[term] if (j := current.index.get(nb)) is not None]
        if not neighbor_rows:
            continue
        diff = mat[i] - qh[i]
        weight = len(neighbor_rows) if config.weighting == "inverse_degree" else 1.0
        attach += config.alpha * weight * float(np.dot(diff, diff))
        for j in neighbor_rows:
            key = (i, j) if i <= j else (j, i)
            if key in seen_edges:
                continue
            seen_edges.add(key)
            d = mat[i] - mat[j]
            edge += float(np.dot(d, d))
    return attach + config.beta * edge


def rescale(original: VectorTable, retrofitted: VectorTable) -> tuple[VectorTable, int]:
    """Restore every retrofitted row to its original L2 norm.

    output_i = (||v_i|| / ||vr_i||) * vr_i. A zero-norm retrofitted row has
    no direction to keep, so the original row is copied through and counted
    as degenerate. Tables must cover the same terms in the same order.
    """
    if original.terms != retrofitted.terms:
        raise ValueError("rescale requires identically ordered terms")
    if original.dim != retrofitted.dim:
        raise ValueError("rescale requires matching dimensions")
    orig = original.vectors
    retro = retrofitted.vectors
    orig_norms = np.linalg.norm(orig, axis=1)
    retro_norms = np.linalg.norm(retro, axis=1)
    degenerate_mask = retro_norms == 0.0
    safe = np.where(degenerate_mask, 1.0, retro_norms)
    out = retro * (orig_norms / safe)[:, None]
    if degenerate_mask.any():
        out[degenerate_mask] = orig[degenerate_mask]
    return VectorTable(terms=list(original.terms), vectors=out), int(degenerate_mask.sum())
