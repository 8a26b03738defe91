import dataclasses
import math
import random

import numpy as np
import pytest

from drcombine import estimators as est
from drcombine import harness
from drcombine.errors import ConfigurationError, EstimationError
from drcombine.harness import (
    RepRow,
    RunConfig,
    emit_report,
    load_config,
    nuisance_rate_probe,
    read_replications,
    read_report,
    run_config_from_mapping,
    run_scenario,
    summarize,
    write_replications,
)
from drcombine.nuisance import LearnerSpec, NuisanceSpecs

QUICK = ("HT", "Haj", "naive", "DR1", "DR2clw", "DR2", "TMLE1", "TMLE2", "DR1.gbm1")


def quick_config(pop, **kw):
    base = dict(scenario=pop.spec, reps=6, estimators=QUICK, seed=7)
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture(scope="module")
def quick_run(small_pop, tmp_path_factory):
    out = tmp_path_factory.mktemp("run1")
    return run_scenario(quick_config(small_pop, out=out), pop=small_pop), out


def test_outputs_written(quick_run):
    result, out = quick_run
    assert (out / "replications.csv").exists()
    assert (out / "summary.csv").exists()
    assert (out / "summary.txt").read_text().splitlines()[0].split() == ["bias", "empSE", "SEhat", "cover"]
    assert [s.estimator for s in result.summary] == list(QUICK)
    assert len(result.rows) == 6 * len(QUICK)


def test_same_seed_same_bytes(quick_run, small_pop, tmp_path):
    _, out = quick_run
    run_scenario(quick_config(small_pop, out=tmp_path), pop=small_pop)
    for name in ("replications.csv", "summary.csv"):
        assert (tmp_path / name).read_bytes() == (out / name).read_bytes()


def test_different_seed_differs(quick_run, small_pop):
    result, _ = quick_run
    other = run_scenario(quick_config(small_pop, seed=8, reps=2, estimators=("HT",)), pop=small_pop)
    assert other.rows[0].point != result.per_rep("HT")[0].point


def test_parallel_matches_serial(quick_run, small_pop, tmp_path):
    _, out = quick_run
    run_scenario(quick_config(small_pop, out=tmp_path, workers=2), pop=small_pop)
    assert (tmp_path / "replications.csv").read_bytes() == (out / "replications.csv").read_bytes()


def test_replication_is_independent_of_estimator_subset(quick_run, small_pop):
    result, _ = quick_run
    sub = run_scenario(quick_config(small_pop, estimators=("DR2", "HT")), pop=small_pop)
    for name in ("DR2", "HT"):
        assert [r.point for r in sub.per_rep(name)] == [r.point for r in result.per_rep(name)]


def same_summary(a, b):
    key = lambda r: (r.estimator, r.n_ok) + tuple(repr(getattr(r, f)) for f in ("bias", "empSE", "SEhat", "cover"))
    return [key(r) for r in a] == [key(r) for r in b]


def test_summary_recomputed_from_csv(quick_run):
    result, out = quick_run
    rows = read_replications(out / "replications.csv")
    assert same_summary(summarize(rows, QUICK), result.summary)


def test_summary_ignores_row_order(quick_run):
    result, _ = quick_run
    rows = list(result.rows)
    random.Random(3).shuffle(rows)
    assert same_summary(summarize(rows, QUICK), result.summary)


def test_summary_against_direct_formulas(quick_run):
    result, _ = quick_run
    rows = result.per_rep("DR2")
    pts = np.array([r.point for r in rows])
    ybar = np.array([r.Ybar for r in rows])
    ses = np.array([r.se for r in rows])
    s = result.by_name()["DR2"]
    assert s.bias == pytest.approx(np.mean(pts - ybar), abs=1e-14)
    assert s.empSE == pytest.approx(np.std(pts, ddof=1), rel=1e-12)
    assert s.SEhat == pytest.approx(ses.mean(), rel=1e-12)
    assert s.cover == pytest.approx(100 * np.mean(np.abs(pts - ybar) <= 1.96 * ses))
    naive = result.by_name()["naive"]
    assert math.isnan(naive.SEhat) and math.isnan(naive.cover)


def test_single_row_files(tmp_path):
    row = RepRow(0, "HT", 1.5, 0.1, 1.4)
    write_replications([row], tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert len(lines) == 2
    assert read_replications(tmp_path / "r.csv") == [row]
    emit_report(summarize([row]), tmp_path / "s.csv")
    assert len((tmp_path / "s.csv").read_text().splitlines()) == 2


def test_report_round_trip(quick_run, tmp_path):
    result, _ = quick_run
    emit_report(result.summary, tmp_path / "s.csv")
    back = read_report(tmp_path / "s.csv")
    for a, b in zip(result.summary, back):
        assert a.estimator == b.estimator
        for f in ("bias", "empSE", "SEhat"):
            x, y = getattr(a, f), getattr(b, f)
            assert (math.isnan(x) and math.isnan(y)) or abs(x - y) <= 5e-4
    with pytest.raises(ConfigurationError):
        emit_report([], tmp_path / "empty.csv")


def test_failed_family_is_marked_and_excluded(small_pop, monkeypatch):
    real = est.dr1

    def flaky(data, pred, name="DR1"):
        if data.nA % 2 == 0:
            raise EstimationError("forced")
        return real(data, pred, name)

    monkeypatch.setattr(est, "dr1", flaky)
    monkeypatch.setattr(harness, "FAILURE_LIMIT", 1.0)
    res = run_scenario(quick_config(small_pop, reps=8, estimators=("HT", "DR1", "DR2")), pop=small_pop)
    failed = [r for r in res.rows if r.status != "ok"]
    assert failed and all(r.estimator in ("DR1", "DR2") for r in failed)
    assert all(r.status.startswith("failed: ") for r in failed)
    by = res.by_name()
    assert by["HT"].n_ok == 8
    assert by["DR1"].n_ok == 8 - res.failed_reps


def test_too_many_failures_abort(small_pop, monkeypatch):
    def broken(*a, **k):
        raise EstimationError("forced")

    monkeypatch.setattr(est, "dr1", broken)
    with pytest.raises(EstimationError, match="aborting"):
        run_scenario(quick_config(small_pop, reps=4, estimators=("DR1",)), pop=small_pop)


def test_config_validation(small_pop):
    with pytest.raises(ConfigurationError):
        quick_config(small_pop, estimators=("DR3",))
    with pytest.raises(ConfigurationError):
        quick_config(small_pop, reps=0)
    with pytest.raises(ConfigurationError):
        quick_config(small_pop, fluctuation="probit")


def test_yaml_config(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(
        "scenario: 3\nJ: 80\nM: 16\nreps: 5\nseed: 11\nestimators: HT,DR2.gbm5\n"
        "n_trees: 50\nfeature_map: true_model_terms\noutcome_feature_map: intercept_only\n"
    )
    cfg = run_config_from_mapping(load_config(path))
    assert (cfg.scenario.J, cfg.scenario.M, cfg.reps, cfg.seed) == (80, 16, 5, 11)
    assert cfg.estimators == ("HT", "DR2.gbm5")
    assert cfg.boosted.boosting.n_trees == 50
    assert cfg.parametric.feature_map == "true_model_terms"
    assert cfg.parametric_outcome.feature_map == "intercept_only"
    assert cfg.families() == ["gbm5"]
    over = run_config_from_mapping(load_config(path), reps=2, seed=None)
    assert over.reps == 2 and over.seed == 11
    path.write_text("scenario: 3\nbogus: 1\n")
    with pytest.raises(ConfigurationError, match="bogus"):
        run_config_from_mapping(load_config(path))
    path.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigurationError):
        load_config(path)


def test_srswor_uses_one_group(small_pop):
    spec = small_pop.spec.replace(cluster_design="srswor")
    assert RunConfig(scenario=spec).L == 1
    assert RunConfig(scenario=small_pop.spec).L == small_pop.spec.L


def test_rate_probe_with_oracle_outcome(small_pop):
    spec = small_pop.spec
    specs = NuisanceSpecs(LearnerSpec(), LearnerSpec("oracle", oracle=small_pop.mean_function))
    probe = nuisance_rate_probe(spec, [12, 24], reps=2, specs=specs, seed=3)
    assert [(r.M, r.J) for r in probe.rows] == [(12, 60), (24, 120)]
    assert all(r.m_error == 0.0 for r in probe.rows)
    assert all(r.pi_error > 0 for r in probe.rows)
