"""Synthetic corpora with planted drug-class signals."""

from __future__ import annotations

import io

import numpy as np
import pytest
from scipy import stats

from aersignal.errors import ConfigurationError
from aersignal.evaluate import load_reference
from aersignal.synth import (
    PlantedClass,
    SynthSpec,
    ade_names,
    baseline_rate,
    drug_names,
    generate,
    length_distribution,
    plant_probability,
    variant_surface,
    write_reference,
)


def canonical_of(surface: str) -> str:
    return surface.rsplit("_v", 1)[0] if "_v" in surface else surface


def drugs_in(report) -> set[str]:
    return {canonical_of(m.normalized_name) for m in report.drugs}


def null_spec(**kwargs):
    base = dict(
        n_reports=100_000, n_drugs=200, n_ades=50,
        n_classes=1, class_size=5, lift=1.0, synonym_rate=0.3, seed=11,
        heldout_per_class=0,
    )
    base.update(kwargs)
    return SynthSpec.planted(**base)


def planted_spec(**kwargs):
    base = dict(
        n_reports=50_000, n_drugs=200, n_ades=50,
        n_classes=2, class_size=5, lift=4.0, synonym_rate=0.3, seed=12,
        heldout_per_class=1,
    )
    base.update(kwargs)
    return SynthSpec.planted(**base)


@pytest.fixture(scope="module")
def null_corpus():
    return generate(null_spec())


@pytest.fixture(scope="module")
def planted_corpus():
    return generate(planted_spec())


class TestSpecValidation:
    def test_lift_below_one_rejected(self):
        with pytest.raises(ConfigurationError, match="lift"):
            PlantedClass(members=("a",), heldout=(), ade="e", lift=0.9)

    def test_heldout_must_be_member(self):
        with pytest.raises(ConfigurationError, match="heldout"):
            PlantedClass(members=("a",), heldout=("b",), ade="e", lift=2.0)

    def test_duplicate_members_rejected(self):
        with pytest.raises(ConfigurationError, match="duplicate"):
            PlantedClass(members=("a", "a"), heldout=(), ade="e", lift=2.0)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"n_reports": 0},
            {"synonym_rate": 1.5},
            {"n_synonyms": 0},
            {"confound_neighbors": -1},
            {"max_per_report": 0},
            {"geometric_p": 1.0},
        ],
    )
    def test_bad_settings_rejected(self, kwargs):
        base = dict(
            n_reports=10, n_drugs=5, n_ades=3, classes=(),
            synonym_rate=0.1, seed=0,
        )
        base.update(kwargs)
        with pytest.raises(ConfigurationError):
            SynthSpec(**base).validate()

    def test_class_member_outside_corpus_rejected(self):
        cls = PlantedClass(members=("not_a_drug",), heldout=(), ade="Event 000", lift=2.0)
        spec = SynthSpec(
            n_reports=10, n_drugs=5, n_ades=3, classes=(cls,),
            synonym_rate=0.1, seed=0,
        )
        with pytest.raises(ConfigurationError, match="not in corpus"):
            spec.validate()

    def test_class_reaction_outside_corpus_rejected(self):
        cls = PlantedClass(members=("drug0000",), heldout=(), ade="nope", lift=2.0)
        spec = SynthSpec(
            n_reports=10, n_drugs=5, n_ades=3, classes=(cls,),
            synonym_rate=0.1, seed=0,
        )
        with pytest.raises(ConfigurationError, match="not in corpus"):
            spec.validate()

    def test_planted_layout(self):
        spec = SynthSpec.planted(
            n_reports=100, n_drugs=20, n_ades=5, n_classes=2, class_size=3,
            lift=2.0, synonym_rate=0.0, seed=0, heldout_per_class=1,
        )
        assert spec.classes[0].members == ("drug0000", "drug0001", "drug0002")
        assert spec.classes[0].heldout == ("drug0002",)
        assert spec.classes[0].ade == "Event 000"
        assert spec.classes[1].members == ("drug0003", "drug0004", "drug0005")
        assert spec.classes[1].ade == "Event 001"
        spec.validate()

    def test_planted_needs_room(self):
        with pytest.raises(ConfigurationError):
            SynthSpec.planted(
                n_reports=10, n_drugs=5, n_ades=5, n_classes=2, class_size=3,
                lift=2.0, synonym_rate=0.0, seed=0,
            )
        with pytest.raises(ConfigurationError):
            SynthSpec.planted(
                n_reports=10, n_drugs=10, n_ades=1, n_classes=2, class_size=2,
                lift=2.0, synonym_rate=0.0, seed=0,
            )
        with pytest.raises(ConfigurationError):
            SynthSpec.planted(
                n_reports=10, n_drugs=10, n_ades=5, n_classes=1, class_size=2,
                lift=2.0, synonym_rate=0.0, seed=0, heldout_per_class=2,
            )

    def test_name_pools(self):
        assert drug_names(3) == ["drug0000", "drug0001", "drug0002"]
        assert drug_names(20000)[-1] == "drug19999"
        assert ade_names(2) == ["Event 000", "Event 001"]
        assert variant_surface("drug0001", 2) == "drug0001_v2"


class TestProbabilityFormulas:
    def test_length_distribution_matches_capped_geometric(self):
        p, cap = 0.5, 10
        pmf = length_distribution(p, cap)
        assert pmf.shape == (cap,)
        expected = [(1 - p) ** (m - 1) * p for m in range(1, cap)]
        expected.append((1 - p) ** (cap - 1))
        np.testing.assert_allclose(pmf, expected, rtol=1e-15)
        assert pmf.sum() == pytest.approx(1.0, abs=1e-15)

    def test_length_distribution_cap_one(self):
        np.testing.assert_allclose(length_distribution(0.3, 1), [1.0])

    def test_baseline_rate_enumeration(self):
        n_ades, p, cap = 7, 0.4, 5
        pmf = length_distribution(p, cap)
        expected = sum(
            pmf[m - 1] * (1.0 - (1.0 - 1.0 / n_ades) ** m) for m in range(1, cap + 1)
        )
        assert baseline_rate(n_ades, p, cap) == pytest.approx(expected, rel=1e-15)

    def test_baseline_rate_single_ade_is_certain(self):
        assert baseline_rate(1, 0.5, 10) == pytest.approx(1.0)

    def test_plant_probability_hand_value(self):
        assert plant_probability(2.0, 0.2) == pytest.approx(0.25)
        assert plant_probability(1.0, 0.3) == 0.0

    def test_plant_probability_infeasible(self):
        with pytest.raises(ConfigurationError, match="infeasible"):
            plant_probability(6.0, 0.2)

    def test_plant_probability_delivers_lift_identity(self):
        for lift, p0 in [(1.5, 0.1), (3.0, 0.25), (2.0, 0.5)]:
            p_add = plant_probability(lift, p0)
            assert 0.0 <= p_add <= 1.0
            assert p0 + (1 - p0) * p_add == pytest.approx(lift * p0, rel=1e-12)

    def test_generate_rejects_infeasible_lift(self):
        # One reaction in every report means the baseline rate is 1.
        spec = SynthSpec.planted(
            n_reports=10, n_drugs=5, n_ades=1, n_classes=1, class_size=2,
            lift=2.0, synonym_rate=0.0, seed=0,
        )
        with pytest.raises(ConfigurationError, match="infeasible"):
            generate(spec)


class TestNullCorpus:
    def test_baseline_rate_observed(self, null_corpus):
        # "Event 017" belongs to no class, so its per-report rate is the
        # exact baseline; 5 sigma over 1e5 reports.
        p0 = baseline_rate(50, 0.5, 10)
        hits = sum("Event 017" in r.adverse_events for r in null_corpus.reports)
        rate = hits / len(null_corpus.reports)
        sigma = (p0 * (1 - p0) / len(null_corpus.reports)) ** 0.5
        assert abs(rate - p0) < 5 * sigma

    def test_no_planted_additions_at_unit_lift(self, null_corpus):
        assert null_corpus.diagnostics["planted_additions"] == 0
        assert null_corpus.diagnostics["heldout_suppressions"] == 0

    def test_member_and_reaction_independent_at_unit_lift(self, null_corpus):
        members = set(null_corpus.spec.classes[0].members)
        ade = null_corpus.spec.classes[0].ade
        table = np.zeros((2, 2), dtype=np.int64)
        for r in null_corpus.reports:
            i = int(bool(members & drugs_in(r)))
            j = int(ade in r.adverse_events)
            table[i, j] += 1
        assert stats.chi2_contingency(table).pvalue > 0.01

    def test_report_shape_bounds(self, null_corpus):
        cap = null_corpus.spec.max_per_report
        for r in null_corpus.reports[:2000]:
            assert 1 <= len(r.drugs) <= cap
            assert len(r.adverse_events) <= cap + len(null_corpus.spec.classes)
            surfaces = [m.normalized_name for m in r.drugs]
            assert len(set(surfaces)) == len(surfaces)

    def test_diagnostics_record_baseline(self, null_corpus):
        assert null_corpus.diagnostics["baseline_rate"] == pytest.approx(
            baseline_rate(50, 0.5, 10)
        )


class TestPlantedCorpus:
    def test_regular_members_hit_lifted_rate(self, planted_corpus):
        spec = planted_corpus.spec
        p0 = baseline_rate(spec.n_ades, spec.geometric_p, spec.max_per_report)
        cls = spec.classes[0]
        regular = set(cls.members) - set(cls.heldout)
        with_member = [r for r in planted_corpus.reports if regular & drugs_in(r)]
        rate = sum(cls.ade in r.adverse_events for r in with_member) / len(with_member)
        assert abs(rate - cls.lift * p0) < 0.04

    def test_members_report_reaction_more_than_background(self, planted_corpus):
        spec = planted_corpus.spec
        cls = spec.classes[0]
        regular = set(cls.members) - set(cls.heldout)
        member_ids = {m for c in spec.classes for m in c.members}
        background = {d for d in drug_names(spec.n_drugs) if d not in member_ids}
        with_member = [r for r in planted_corpus.reports if regular & drugs_in(r)]
        with_background = [r for r in planted_corpus.reports if background & drugs_in(r)]
        member_rate = sum(cls.ade in r.adverse_events for r in with_member) / len(with_member)
        background_rate = sum(cls.ade in r.adverse_events for r in with_background) / len(
            with_background
        )
        assert member_rate > background_rate + 0.05

    def test_heldout_never_canonical_never_with_reaction(self, planted_corpus):
        spec = planted_corpus.spec
        for cls in spec.classes:
            for drug in cls.heldout:
                variant = variant_surface(drug, 1)
                saw_variant = False
                for r in planted_corpus.reports:
                    surfaces = {m.normalized_name for m in r.drugs}
                    assert drug not in surfaces
                    assert variant_surface(drug, 2) not in surfaces
                    if variant in surfaces:
                        saw_variant = True
                        assert cls.ade not in r.adverse_events
                assert saw_variant

    def test_suppressions_happen(self, planted_corpus):
        assert planted_corpus.diagnostics["heldout_suppressions"] > 0
        assert planted_corpus.diagnostics["planted_additions"] > 0

    def test_regular_members_use_synonym_variants(self, planted_corpus):
        spec = planted_corpus.spec
        regular = spec.classes[0].members[0]
        surfaces = set()
        for r in planted_corpus.reports:
            for m in r.drugs:
                if canonical_of(m.normalized_name) == regular:
                    surfaces.add(m.normalized_name)
        assert surfaces == {regular, variant_surface(regular, 1), variant_surface(regular, 2)}


class TestSurfacePolicy:
    def test_zero_synonym_rate_uses_canonicals_except_heldout(self):
        spec = planted_spec(n_reports=4000, synonym_rate=0.0, seed=5)
        result = generate(spec)
        heldout = {d for c in spec.classes for d in c.heldout}
        allowed = set(drug_names(spec.n_drugs)) - heldout
        allowed |= {variant_surface(d, 1) for d in heldout}
        seen = {m.normalized_name for r in result.reports for m in r.drugs}
        assert seen <= allowed


class TestDeterminism:
    def test_same_spec_same_corpus(self):
        a = generate(planted_spec(n_reports=800))
        b = generate(planted_spec(n_reports=800))
        assert len(a.reports) == len(b.reports)
        for ra, rb in zip(a.reports, b.reports):
            assert ra.report_id == rb.report_id
            assert [m.normalized_name for m in ra.drugs] == [m.normalized_name for m in rb.drugs]
            assert ra.adverse_events == rb.adverse_events
            assert ra.event_date == rb.event_date
        assert a.reference == b.reference
        assert a.lexicon.adjacency == b.lexicon.adjacency

    def test_seed_changes_corpus(self):
        a = generate(planted_spec(n_reports=800, seed=1))
        b = generate(planted_spec(n_reports=800, seed=2))
        drugs_a = [[m.normalized_name for m in r.drugs] for r in a.reports]
        drugs_b = [[m.normalized_name for m in r.drugs] for r in b.reports]
        assert drugs_a != drugs_b


class TestLexiconConstruction:
    def make_tiny(self):
        spec = SynthSpec.planted(
            n_reports=50, n_drugs=6, n_ades=4, n_classes=1, class_size=2,
            lift=1.5, synonym_rate=0.2, seed=3, heldout_per_class=1,
            confound_neighbors=1,
        )
        return spec, generate(spec)

    def test_graph_validates(self):
        _, result = self.make_tiny()
        result.lexicon.validate()

    def test_synonym_cliques_present(self):
        spec, result = self.make_tiny()
        adjacency = result.lexicon.adjacency
        for drug in drug_names(spec.n_drugs):
            variants = [variant_surface(drug, k) for k in (1, 2)]
            for v in variants:
                assert v in adjacency[drug]
                assert drug in adjacency[v]
            assert variants[1] in adjacency[variants[0]]

    def test_class_clique_spans_all_member_surfaces(self):
        spec, result = self.make_tiny()
        adjacency = result.lexicon.adjacency
        surfaces = []
        for m in spec.classes[0].members:
            surfaces.extend([m, variant_surface(m, 1), variant_surface(m, 2)])
        for a in surfaces:
            for b in surfaces:
                if a != b:
                    assert b in adjacency[a]

    def test_confound_edges_touch_background(self):
        spec, result = self.make_tiny()
        members = set(spec.classes[0].members)
        background = set(drug_names(spec.n_drugs)) - members
        confounds = {
            nb
            for m in members
            for nb in result.lexicon.adjacency[m]
            if canonical_of(nb) in background
        }
        assert len(confounds) >= 1

    def test_no_confounds_when_disabled(self):
        spec = SynthSpec.planted(
            n_reports=50, n_drugs=6, n_ades=4, n_classes=1, class_size=2,
            lift=1.5, synonym_rate=0.2, seed=3, heldout_per_class=1,
            confound_neighbors=0,
        )
        result = generate(spec)
        members = set(spec.classes[0].members)
        background = set(drug_names(spec.n_drugs)) - members
        for b in background:
            expected = {variant_surface(b, 1), variant_surface(b, 2)}
            assert set(result.lexicon.adjacency[b]) == expected


class TestReference:
    def test_balanced_per_class(self, planted_corpus):
        spec = planted_corpus.spec
        for cls in spec.classes:
            group = [p for p in planted_corpus.reference if p.outcome_group == cls.ade]
            pos = [p for p in group if p.is_positive]
            neg = [p for p in group if not p.is_positive]
            assert len(pos) == len(cls.members)
            assert len(neg) == len(cls.members)

    def test_heldout_listed_under_variant_surface(self, planted_corpus):
        spec = planted_corpus.spec
        cls = spec.classes[0]
        positives = {p.drug for p in planted_corpus.reference if p.outcome_group == cls.ade and p.is_positive}
        for drug in cls.heldout:
            assert variant_surface(drug, 1) in positives
            assert drug not in positives

    def test_negatives_are_background_drugs(self, planted_corpus):
        spec = planted_corpus.spec
        members = {m for c in spec.classes for m in c.members}
        for p in planted_corpus.reference:
            if not p.is_positive:
                assert canonical_of(p.drug) not in members

    def test_write_round_trips_through_loader(self, planted_corpus):
        buf = io.StringIO()
        write_reference(planted_corpus.reference, buf)
        text = buf.getvalue()
        assert text.startswith("#")
        loaded = load_reference(io.StringIO(text))
        assert [(p.drug, p.outcome, p.label, p.outcome_group) for p in loaded] == [
            (p.drug, p.outcome, p.label, p.outcome_group) for p in planted_corpus.reference
        ]
