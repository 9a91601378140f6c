from __future__ import annotations

import numpy as np
import pytest

from gmusic_clt.errors import ConfigError, SeparationError
from gmusic_clt.model import Scenario, SubspaceQuery, build_model, canonical_vector
from gmusic_clt.montecarlo import ks_normal, run_trials

FIG5 = build_model(20, 40, 1.0, [5, 6])
E_M = canonical_vector(20, 20)
MIXED = (canonical_vector(20, 1) + E_M) / np.sqrt(2)


def test_ks_normal_on_normal_draws() -> None:
    x = np.random.default_rng(0).standard_normal(100_000)
    assert ks_normal(x) < 0.006


def test_ks_normal_detects_departures() -> None:
    assert ks_normal(np.zeros(500)) >= 0.5
    x = np.random.default_rng(1).standard_normal(5000) + 1.0
    assert ks_normal(x) > 0.3


def test_ks_normal_needs_samples() -> None:
    with pytest.raises(ConfigError):
        ks_normal(np.zeros(50))


def test_trials_must_be_positive() -> None:
    with pytest.raises(ConfigError):
        run_trials(Scenario(FIG5, SubspaceQuery(E_M, E_M)), 0, 1)


def test_quadratic_statistic_needs_equal_probes() -> None:
    with pytest.raises(ConfigError):
        run_trials(Scenario(FIG5, SubspaceQuery(E_M, canonical_vector(20, 19))), 10, 1)


def test_separation_failure_rejected() -> None:
    m = build_model(10, 20, 1.0, [0.3])
    with pytest.raises(SeparationError):
        run_trials(Scenario(m, SubspaceQuery(canonical_vector(10, 10), canonical_vector(10, 10))), 10, 1)


def test_degenerate_variance_rejected() -> None:
    # a probe orthogonal to everything has zero predicted variance
    m = build_model(20, 40, 1.0, [5, 6])
    zero = np.zeros(20)
    with pytest.raises(ConfigError):
        run_trials(Scenario(m, SubspaceQuery(zero, zero)), 10, 1)


def test_report_is_deterministic_across_workers() -> None:
    sc = Scenario(FIG5, SubspaceQuery(MIXED, MIXED))
    a = run_trials(sc, 150, 42)
    b = run_trials(sc, 150, 42, threads=3)
    assert np.array_equal(a.samples, b.samples)
    assert a.to_dict() == b.to_dict()
    assert int(np.sum(a.histogram[1])) == 150
    c = run_trials(sc, 150, 43)
    assert not np.array_equal(a.samples, c.samples)


def test_improved_statistic_is_centred() -> None:
    rep = run_trials(Scenario(FIG5, SubspaceQuery(E_M, E_M)), 2000, 7)
    s = rep.samples
    assert abs(s.mean()) < 4 / np.sqrt(s.size) * s.std()
    assert all(np.isfinite(v) for v in rep.samples_summary.values())


def test_traditional_needs_its_own_centre() -> None:
    sc = Scenario(FIG5, SubspaceQuery(MIXED, MIXED))
    own = run_trials(sc, 2000, 5, estimator="traditional")
    naive = run_trials(sc, 2000, 5, estimator="traditional", center="true")
    assert own.ks_distance < 0.04
    assert naive.ks_distance > 0.1


def test_non_degenerate_query_is_gaussian() -> None:
    rep = run_trials(Scenario(FIG5, SubspaceQuery(MIXED, MIXED)), 3000, 11)
    assert rep.ks_distance < 0.035
    assert abs(rep.empirical_raw_variance / rep.predicted_variance - 1) < 0.1


def test_bivariate_statistic_fields() -> None:
    sc = Scenario(FIG5, SubspaceQuery(E_M, canonical_vector(20, 19)))
    rep = run_trials(sc, 300, 3, statistic="bivariate")
    assert rep.samples.shape == (300, 2)
    assert rep.statistic_kind == "bivariate-whitened"
    assert len(rep.extra["ks_per_coordinate"]) == 2
    rows = rep.histogram_rows()
    assert sum(r[2] for r in rows) == 300
