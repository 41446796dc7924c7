"""Reference sets, scoring policies, AUC, and sweep result tables."""

from __future__ import annotations

import io
import math

import numpy as np
import pytest
from numpy.random import default_rng

from aersignal.embedding import EmbeddingSpace, VectorTable
from aersignal.errors import UndefinedMetricError
from aersignal.evaluate import (
    Aggregate,
    EvalResult,
    EvalSummary,
    MetricScorer,
    OovPolicy,
    RESULTS_HEADER,
    ReferencePair,
    SweepRow,
    auc_from_scores,
    baseline_rows,
    beta_grid,
    evaluate_editions,
    evaluate_scored,
    load_mapping,
    load_reference,
    score_reference,
    sweep_rows,
    write_results,
)
from aersignal.vocab import accumulate_counts, build_vocabularies

from conftest import FIXTURES, make_report


def pair(drug, outcome, label, group="g1", pts=None):
    return ReferencePair(
        drug=drug, outcome=outcome, label=label, outcome_group=group,
        candidate_pts=tuple(pts) if pts is not None else (outcome,),
    )


def auc_oracle(positive, negative):
    total = 0.0
    for p in positive:
        for n in negative:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(positive) * len(negative))


def table_scorer(table):
    return lambda drug, pt: table.get((drug, pt))


class TestLoadMapping:
    def test_fixture_accumulates_candidates(self):
        mapping = load_mapping(FIXTURES / "mapping_pts.tsv")
        assert mapping["acute_liver_injury"] == ["Hepatotoxicity", "Liver injury"]
        assert len(mapping["acute_kidney_injury"]) == 1

    def test_repeated_pt_not_duplicated(self):
        mapping = load_mapping(io.StringIO("o\tPT one\no\tPT one\no\tPT two\n"))
        assert mapping["o"] == ["PT one", "PT two"]

    def test_malformed_line_fatal(self):
        with pytest.raises(ValueError, match="mapping line 1"):
            load_mapping(io.StringIO("just_one_field\n"))


class TestLoadReference:
    def test_small_fixture(self):
        pairs = load_reference(FIXTURES / "reference_small.tsv")
        assert len(pairs) == 4
        assert [p.drug for p in pairs] == ["drug_a", "drug_b", "drug_c", "drug_d"]
        assert [p.label for p in pairs] == ["positive", "positive", "negative", "negative"]
        assert pairs[0].candidate_pts == ("headache",)
        assert pairs[0].outcome_group == "g1"

    def test_large_fixtures_have_expected_label_balance(self):
        omop = load_reference(FIXTURES / "reference_omop_like.tsv")
        assert sum(p.is_positive for p in omop) == 165
        assert sum(not p.is_positive for p in omop) == 234
        eu = load_reference(FIXTURES / "reference_eu_like.tsv")
        assert sum(p.is_positive for p in eu) == 44
        assert sum(not p.is_positive for p in eu) == 50

    def test_mapping_expands_candidate_pts(self):
        ref = io.StringIO("Some Drug\tacute_liver_injury\tpositive\tg\n")
        pairs = load_reference(ref, mapping=FIXTURES / "mapping_pts.tsv")
        assert pairs[0].candidate_pts == ("Hepatotoxicity", "Liver injury")
        assert pairs[0].outcome == "acute_liver_injury"

    def test_unmapped_outcome_is_its_own_pt(self):
        pairs = load_reference(
            io.StringIO("d\tNausea\tnegative\tg\n"), mapping={"other": ["PT"]}
        )
        assert pairs[0].candidate_pts == ("Nausea",)

    def test_drug_names_are_normalized(self):
        pairs = load_reference(io.StringIO("  Drug  A ®\to\tpositive\tg\n"))
        assert pairs[0].drug == "_drug_a_"  # trailing junk strips, inner "_" stays

    def test_bad_label_fatal(self):
        with pytest.raises(ValueError, match="bad label"):
            load_reference(io.StringIO("d\to\tmaybe\tg\n"))

    def test_duplicate_pair_fatal(self):
        text = "d\to\tpositive\tg\nD\to\tnegative\tg\n"  # same after normalization
        with pytest.raises(ValueError, match="duplicate pair"):
            load_reference(io.StringIO(text))

    def test_wrong_field_count_fatal(self):
        with pytest.raises(ValueError, match="expected 4 fields"):
            load_reference(io.StringIO("d\to\tpositive\n"))

    def test_comments_and_blanks_skipped(self):
        text = "# header\n\nd\to\tpositive\tg\n"
        assert len(load_reference(io.StringIO(text))) == 1


class TestScoreReference:
    def test_all_scored(self):
        pairs = [pair("a", "x", "positive"), pair("b", "x", "negative")]
        scored = score_reference(pairs, table_scorer({("a", "x"): 0.9, ("b", "x"): 0.2}))
        assert [s.score for s in scored] == [0.9, 0.2]
        assert not any(s.imputed for s in scored)

    def test_exclude_policy_keeps_missing_as_none(self):
        pairs = [pair("a", "x", "positive"), pair("b", "x", "negative")]
        scored = score_reference(pairs, table_scorer({("a", "x"): 0.9}), OovPolicy.EXCLUDE)
        assert scored[1].score is None
        assert not scored[1].imputed

    def test_worst_policy_imputes_observed_floor(self):
        pairs = [
            pair("a", "x", "positive"),
            pair("b", "x", "negative"),
            pair("c", "x", "negative"),
        ]
        scorer = table_scorer({("a", "x"): 0.9, ("b", "x"): 0.4})
        scored = score_reference(pairs, scorer, OovPolicy.WORST)
        assert scored[2].score == 0.4
        assert scored[2].imputed
        assert not scored[0].imputed

    def test_worst_policy_with_nothing_scored_stays_missing(self):
        pairs = [pair("a", "x", "positive")]
        scored = score_reference(pairs, table_scorer({}), OovPolicy.WORST)
        assert scored[0].score is None

    def test_max_aggregate_over_candidates(self):
        pairs = [pair("a", "o", "positive", pts=["p1", "p2"])]
        scorer = table_scorer({("a", "p1"): 0.2, ("a", "p2"): 0.7})
        assert score_reference(pairs, scorer)[0].score == 0.7

    def test_mean_aggregate_over_candidates(self):
        pairs = [pair("a", "o", "positive", pts=["p1", "p2"])]
        scorer = table_scorer({("a", "p1"): 0.2, ("a", "p2"): 0.7})
        scored = score_reference(pairs, scorer, aggregate=Aggregate.MEAN)
        assert scored[0].score == pytest.approx(0.45)

    def test_undefined_candidate_ignored_in_aggregate(self):
        pairs = [pair("a", "o", "positive", pts=["p1", "p2"])]
        scorer = table_scorer({("a", "p2"): 0.7})
        assert score_reference(pairs, scorer)[0].score == 0.7


class TestAuc:
    def test_perfect_separation(self):
        assert auc_from_scores([0.9, 0.8], [0.2, 0.1]) == 1.0

    def test_all_tied_is_half(self):
        assert auc_from_scores([0.5, 0.5], [0.5, 0.5, 0.5]) == 0.5

    def test_partial_overlap(self):
        assert auc_from_scores([0.8, 0.3], [0.5, 0.1]) == 0.75

    def test_shared_boundary_value(self):
        assert auc_from_scores([0.9, 0.7], [0.7, 0.1]) == 0.875

    def test_matches_pairwise_oracle(self):
        rng = default_rng(500)
        for _ in range(200):
            n_pos = int(rng.integers(1, 20))
            n_neg = int(rng.integers(1, 20))
            if rng.random() < 0.5:  # tie-rich integer grid
                pos = list(rng.integers(0, 6, size=n_pos) / 5.0)
                neg = list(rng.integers(0, 6, size=n_neg) / 5.0)
            else:
                pos = list(rng.normal(size=n_pos))
                neg = list(rng.normal(size=n_neg))
            assert abs(auc_from_scores(pos, neg) - auc_oracle(pos, neg)) <= 1e-12

    def test_invariant_under_increasing_transform(self):
        rng = default_rng(501)
        pos = list(rng.integers(-3, 4, size=12).astype(float))
        neg = list(rng.integers(-3, 4, size=9).astype(float))
        before = auc_from_scores(pos, neg)
        after = auc_from_scores([math.exp(x) for x in pos], [math.exp(x) for x in neg])
        assert before == after

    def test_class_swap_complements(self):
        rng = default_rng(502)
        for _ in range(50):
            pos = list(rng.integers(0, 4, size=8) / 3.0)
            neg = list(rng.integers(0, 4, size=5) / 3.0)
            assert auc_from_scores(pos, neg) + auc_from_scores(neg, pos) == pytest.approx(
                1.0, abs=1e-12
            )

    def test_single_class_undefined(self):
        with pytest.raises(UndefinedMetricError):
            auc_from_scores([0.5], [])
        with pytest.raises(UndefinedMetricError):
            auc_from_scores([], [0.5])


class TestEvaluateScored:
    def make_scored(self, policy):
        pairs = [
            pair("a", "x", "positive", group="g1"),
            pair("b", "x", "positive", group="g2"),
            pair("c", "x", "negative", group="g1"),
            pair("d", "x", "negative", group="g2"),
        ]
        scorer = table_scorer({("a", "x"): 0.9, ("b", "x"): 0.6, ("c", "x"): 0.2})
        return score_reference(pairs, scorer, policy)

    def test_exclude_counts(self):
        result = evaluate_scored(self.make_scored(OovPolicy.EXCLUDE))
        assert result.n_positive == 2
        assert result.n_negative == 1
        assert result.n_scored == 3
        assert result.n_missing == 1
        assert result.auc == 1.0

    def test_worst_counts_imputed_as_missing_but_ranks_them(self):
        result = evaluate_scored(self.make_scored(OovPolicy.WORST))
        assert result.n_positive == 2
        assert result.n_negative == 2
        assert result.n_scored == 3
        assert result.n_missing == 1
        assert result.auc == 1.0  # the imputed negative got the floor 0.2

    def test_partition_invariant(self):
        for policy in OovPolicy:
            result = evaluate_scored(self.make_scored(policy))
            assert result.n_scored + result.n_missing == 4

    def test_per_outcome_breakdown(self):
        result = evaluate_scored(self.make_scored(OovPolicy.EXCLUDE))
        assert result.per_outcome == {"g1": 1.0}  # g2 has no scored negative

    def test_groups_with_both_classes_all_reported(self):
        scored = score_reference(
            [
                pair("a", "x", "positive", group="g1"),
                pair("c", "x", "negative", group="g1"),
                pair("b", "x", "positive", group="g2"),
                pair("d", "x", "negative", group="g2"),
            ],
            table_scorer(
                {("a", "x"): 0.9, ("c", "x"): 0.1, ("b", "x"): 0.3, ("d", "x"): 0.7}
            ),
        )
        result = evaluate_scored(scored)
        assert result.per_outcome == {"g1": 1.0, "g2": 0.0}
        assert result.auc == pytest.approx(auc_oracle([0.9, 0.3], [0.1, 0.7]))


class TestEvalSummary:
    def result(self, auc, per_outcome=None):
        return EvalResult(
            auc=auc, n_positive=2, n_negative=2, n_scored=4, n_missing=0,
            per_outcome=per_outcome or {},
        )

    def test_mean_and_sample_std(self):
        summary = EvalSummary.from_results([self.result(0.8), self.result(0.9)])
        assert summary.auc_mean == pytest.approx(0.85)
        assert summary.auc_std == pytest.approx(float(np.std([0.8, 0.9], ddof=1)))
        assert summary.n_seeds == 2

    def test_single_seed_std_is_zero(self):
        summary = EvalSummary.from_results([self.result(0.8)])
        assert summary.auc_std == 0.0
        assert summary.n_seeds == 1

    def test_per_outcome_mean(self):
        summary = EvalSummary.from_results(
            [self.result(0.8, {"g": 0.7}), self.result(0.9, {"g": 0.9, "h": 1.0})]
        )
        assert summary.per_outcome == {"g": pytest.approx(0.8), "h": 1.0}

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            EvalSummary.from_results([])

    def test_counts_carried_through(self):
        summary = EvalSummary.from_results([self.result(0.5)])
        assert summary.n_scored == 4
        assert summary.n_missing == 0


class TestBetaGrid:
    def test_default_grid(self):
        grid = beta_grid()
        assert len(grid) == 11
        assert grid[0] == 0.0
        assert grid[-1] == 1.0
        np.testing.assert_allclose(grid, [i / 10 for i in range(11)], atol=1e-12)

    def test_custom_step(self):
        assert beta_grid(0.0, 1.0, 0.5) == [0.0, 0.5, 1.0]

    def test_bad_step(self):
        with pytest.raises(ValueError):
            beta_grid(step=0.0)


def toy_editions(n_seeds=2, dim=4):
    """Embedding spaces over four drugs and one PT with controlled scores."""
    spaces = []
    for seed in range(n_seeds):
        rng = default_rng(600 + seed)
        ade = VectorTable(terms=["pt_a"], vectors=rng.normal(size=(1, dim)))
        drugs = VectorTable(
            terms=["d0", "d1", "d2", "d3"], vectors=rng.normal(size=(4, dim))
        )
        spaces.append(EmbeddingSpace(dim=dim, ade_vectors=ade, drug_vectors=drugs, seed=seed))
    return spaces


TOY_PAIRS = [
    pair("d0", "pt_a", "positive"),
    pair("d1", "pt_a", "positive"),
    pair("d2", "pt_a", "negative"),
    pair("d3", "pt_a", "negative"),
]

TOY_GRAPH = {"d0": ["d1"], "d1": ["d0"], "d2": ["d3"], "d3": ["d2"]}


class TestSweepRows:
    def test_row_count_per_variant_and_refset(self):
        rows = sweep_rows(
            trainset="toy",
            editions=toy_editions(),
            graph=TOY_GRAPH,
            betas=beta_grid(),
            variants=["plain", "rescaled"],
            refsets={"rs1": TOY_PAIRS, "rs2": TOY_PAIRS},
        )
        assert len(rows) == 11 * 2 * 2
        for variant in ("plain", "rescaled"):
            for refset in ("rs1", "rs2"):
                got = [r for r in rows if r.variant == variant and r.refset == refset]
                assert len(got) == 11
                assert sorted(r.beta for r in got) == beta_grid()
        assert all(r.summary.n_seeds == 2 for r in rows)

    def test_beta_zero_plain_reproduces_unretrofitted_scores(self):
        editions = toy_editions()
        rows = sweep_rows(
            trainset="toy",
            editions=editions,
            graph=TOY_GRAPH,
            betas=[0.0],
            variants=["plain", "rescaled"],
            refsets={"rs": TOY_PAIRS},
            normalize_first=False,
        )
        direct = evaluate_editions(editions, TOY_PAIRS)
        for row in rows:
            assert row.summary.auc_mean == direct.auc_mean
            assert row.summary.auc_std == direct.auc_std

    def test_unknown_variant_rejected(self):
        with pytest.raises(ValueError, match="unknown variant"):
            sweep_rows("t", toy_editions(1), TOY_GRAPH, [0.0], ["fancy"], {"rs": TOY_PAIRS})


class TestBaselineRows:
    def test_prr_and_ror_rows_per_refset(self):
        reports = [
            make_report("r1", drugs=["d0"], ades=["pt_a"]),
            make_report("r2", drugs=["d0"], ades=["pt_a"]),
            make_report("r3", drugs=["d1"], ades=["pt_a"]),
            make_report("r4", drugs=["d1"], ades=["pt_b"]),
            make_report("r5", drugs=["d2"], ades=["pt_b"]),
            make_report("r6", drugs=["d3"], ades=["pt_b"]),
        ]
        dv, av = build_vocabularies(reports)
        counts = accumulate_counts(reports, dv, av)
        rows = baseline_rows("toy", {"rs1": TOY_PAIRS, "rs2": TOY_PAIRS}, counts, dv, av)
        assert len(rows) == 4
        assert {(r.method, r.refset) for r in rows} == {
            ("prr", "rs1"), ("prr", "rs2"), ("ror", "rs1"), ("ror", "rs2"),
        }
        assert all(r.variant == "-" and r.beta is None for r in rows)
        assert all(r.summary.n_seeds == 1 for r in rows)
        # d0 always reports pt_a, d2/d3 never do, so the baselines separate
        # the positives cleanly here.
        for row in rows:
            assert row.summary.auc_mean == 1.0


class TestResultsTable:
    def make_row(self, method="aer2vec", variant="plain", beta=0.5, refset="rs"):
        summary = EvalSummary(
            auc_mean=0.75, auc_std=0.01, n_seeds=3, n_scored=10, n_missing=2,
            per_outcome={},
        )
        return SweepRow(
            trainset="t", refset=refset, method=method, variant=variant,
            beta=beta, summary=summary,
        )

    def test_render_fields(self):
        line = self.make_row().render()
        assert line.split("\t") == [
            "t", "rs", "aer2vec", "plain", "0.5", "0.75", "0.01", "3", "2",
        ]

    def test_baseline_beta_renders_as_dash(self):
        assert self.make_row(method="prr", variant="-", beta=None).render().split("\t")[4] == "-"

    def test_write_results_sorted_with_header(self):
        rows = [
            self.make_row(beta=0.5),
            self.make_row(beta=0.0),
            self.make_row(method="prr", variant="-", beta=None),
        ]
        buf = io.StringIO()
        write_results(rows, buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == RESULTS_HEADER
        keys = [tuple(line.split("\t")[:5]) for line in lines[1:]]
        assert keys == sorted(keys)

    def test_write_results_to_path_round_trips(self, tmp_path):
        target = tmp_path / "results.tsv"
        write_results([self.make_row()], target)
        text = target.read_text(encoding="utf-8")
        assert text.startswith(RESULTS_HEADER + "\n")
        assert text.endswith(self.make_row().render() + "\n")


class TestMetricScorerIntegration:
    def test_metric_scorer_returns_none_for_oov_and_undefined(self):
        reports = [
            make_report("r1", drugs=["d0"], ades=["pt_a"]),
            make_report("r2", drugs=["d1"], ades=["pt_b"]),
        ]
        dv, av = build_vocabularies(reports)
        counts = accumulate_counts(reports, dv, av)
        scorer = MetricScorer("prr", counts, dv, av)
        assert scorer("missing_drug", "pt_a") is None
        assert scorer("d0", "pt_a") is None  # pt_a never occurs without d0: c = 0
