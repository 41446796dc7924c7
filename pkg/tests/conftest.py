"""Shared fixtures and small builders for the test suite."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from aersignal.ingest import DrugMention, EventDate, Report, Role

FIXTURES = Path(__file__).parent / "fixtures"


def make_report(rid, drugs, ades, date=None):
    """Build a Report from already-normalized drug tokens.

    `drugs` entries are either a bare name (role PS) or a (name, role) tuple.
    """
    mentions = []
    for entry in drugs:
        name, role = entry if isinstance(entry, tuple) else (entry, Role.PS)
        mentions.append(DrugMention(raw_name=name, normalized_name=name, role=role))
    return Report(
        report_id=rid,
        event_date=date,
        drugs=mentions,
        adverse_events=list(ades),
    )


def random_reports(rng, n_reports, n_drugs, n_ades, max_len=4):
    """A corpus of random reports over closed drug/ADE universes."""
    drugs = [f"drug_{i:03d}" for i in range(n_drugs)]
    ades = [f"Event {i:03d}" for i in range(n_ades)]
    reports = []
    for r in range(n_reports):
        nd = int(rng.integers(1, max_len + 1))
        na = int(rng.integers(1, max_len + 1))
        picked_d = rng.choice(n_drugs, size=min(nd, n_drugs), replace=False)
        picked_a = rng.choice(n_ades, size=min(na, n_ades), replace=False)
        reports.append(
            make_report(
                f"r{r:05d}",
                [drugs[i] for i in picked_d],
                [ades[i] for i in picked_a],
                date=EventDate(2010 + r % 5, 1 + r % 4),
            )
        )
    return reports


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def fixtures_dir():
    return FIXTURES
