import math

import pytest

import frdesign

SMALL = {"seed": 3, "particles": 100, "experiments": 2, "design_grid": {"min": 10, "max": 300, "step": 10}}


def test_expected_proportion_limits():
    p = frdesign.expected_proportion(2, 0.5, 0.7, 50)
    assert 0.0 < p < 1.0
    assert frdesign.expected_proportion(2, 1e-9, 0.7, 50) < 1e-5


def test_log_likelihood_is_a_log_probability():
    total = sum(math.exp(frdesign.log_likelihood(1, 0.5, 0.7, 0.5, n0=10, n=n)) for n in range(11))
    assert total == pytest.approx(1.0, abs=1e-12)


def test_session_round_trip():
    s = frdesign.Session(SMALL)
    assert s.status == "awaiting-design"
    proposal = s.propose()
    assert proposal["surface"]["best_design"] == proposal["d"]
    record = s.observe(proposal["d"], 0)
    assert len(record["model_probs"]) == 4
    assert sum(record["model_probs"]) == pytest.approx(1.0)
    doc = s.to_dict()
    assert doc["schema_version"] == frdesign.SCHEMA_VERSION
    again = frdesign.Session.from_dict(doc)
    assert again.model_probs == s.model_probs


def test_out_of_range_count_is_rejected():
    s = frdesign.Session(SMALL)
    d = s.propose()["d"]
    with pytest.raises(frdesign.ValidationError):
        s.observe(d, d + 1)
    assert s.history() == []


def test_invalid_config():
    with pytest.raises(ValueError):
        frdesign.Session({"tau": -1})


def test_simulate_is_reproducible():
    cfg = dict(SMALL, truth={"model": 2, "a": 0.5, "th": 0.7})
    a = frdesign.simulate(cfg)
    assert len(a) == 2
    assert a == frdesign.simulate(cfg)


def test_study_and_summary():
    manifest = dict(SMALL, replications=2, strategies=["RG"], truths=[{"model": 3, "a": 0.5, "th": 0.7}])
    manifest.pop("experiments")
    manifest["experiments"] = 2
    records = frdesign.study(manifest)
    assert len(records) == 2
    assert frdesign.summary_csv(records).startswith("truth,true_model,strategy,metric")


def test_static_utility():
    estimate, se = frdesign.static_utility([50, 150], kind="PE", B=4, seed=1)
    assert math.isfinite(estimate)
    assert se >= 0.0
