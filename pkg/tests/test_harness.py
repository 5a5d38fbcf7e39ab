import json

import numpy as np
import pytest

from jumpforms.exceptions import InvalidParameter
from jumpforms.harness import (
    FAMILIES,
    SCHEMA_VERSION,
    SEED_ENV,
    TrialConfig,
    dumps,
    estimate_constant,
    estimate_constants,
    in_theorem_range,
    resolve_seed,
    run_inequality_suite,
    sample_field,
    sample_fields,
    stability_sweep,
    write_report,
)
from jumpforms.space import build_torus_stable

TORUS = {"builder": "torus_stable", "params": {"n": 10, "alpha": 1.0}}
TWO = {"builder": "two_state", "params": {"beta": 1.0}}


@pytest.fixture
def torus10():
    return build_torus_stable(10, 1.0)


@pytest.mark.parametrize("family", FAMILIES)
def test_families_are_deterministic(torus10, family):
    a = sample_field(torus10, family, 7, 3)
    b = sample_field(torus10, family, 7, 3)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, sample_field(torus10, family, 7, 4))
    assert a.shape == (10,)


def test_family_shapes(torus10):
    assert np.all(sample_fields(torus10, "nonneg_exp", 1, 20) > 0)
    mix = sample_fields(torus10, "signed_mix", 1, 20)
    assert np.allclose(mix @ torus10.measure, 0.0, atol=1e-14)
    low = sample_fields(torus10, "low_mode", 1, 5)
    assert np.allclose(low @ torus10.measure, 0.0, atol=1e-13)
    spikes = sample_fields(torus10, "spikes", 1, 20)
    assert set(np.unique(spikes)) <= {-1.0, 0.0, 1.0}


def test_prefix_stability(torus10):
    # field t never depends on how many trials are requested
    assert np.array_equal(sample_fields(torus10, "gaussian", 2, 5), sample_fields(torus10, "gaussian", 2, 9)[:5])


def test_zero_draws_are_replaced(monkeypatch, torus10):
    import jumpforms.harness as H

    real = H.sample_field

    def flaky(space, family, seed, index):
        return np.zeros(space.n) if index == 1 else real(space, family, seed, index)

    monkeypatch.setattr(H, "sample_field", flaky)
    out = H.sample_fields(torus10, "gaussian", 0, 3)
    assert np.array_equal(out[1], real(torus10, "gaussian", 0, 3))
    assert np.all(np.abs(out).sum(axis=1) > 0)


def test_config_validation():
    with pytest.raises(InvalidParameter):
        TrialConfig({"params": {}})
    with pytest.raises(InvalidParameter):
        TrialConfig(TWO, field_family="uniform")
    with pytest.raises(InvalidParameter):
        TrialConfig(TWO, p_values=[1.0])
    with pytest.raises(InvalidParameter):
        TrialConfig(TWO, n_trials=0)
    with pytest.raises(InvalidParameter):
        TrialConfig(TWO, tolerances={"slack": -1})
    with pytest.raises(InvalidParameter):
        TrialConfig.from_dict({"n_trials": 3})
    cfg = TrialConfig.from_dict({"space_spec": TWO, "field_family": ["gaussian", "spikes"], "ignored": 1})
    assert cfg.families == ["gaussian", "spikes"]
    assert TrialConfig.from_dict(cfg.to_dict()) == cfg


def test_theorem_ranges():
    assert in_theorem_range("H_tilde", 1.5) and not in_theorem_range("H_tilde", 3.0)
    assert in_theorem_range("H_nabla", 3.0) and not in_theorem_range("H_nabla", 1.5)
    assert in_theorem_range("maximal", 1.2)


def test_h_nabla_constant_at_two():
    cfg = TrialConfig(TORUS, field_family=list(FAMILIES), p_values=[2.0], n_trials=30, seed=3)
    rep = estimate_constant(cfg, "H_nabla")
    # ||H_nabla f||_2^2 = ||f - mean||_2^2 / 2
    assert rep.empirical_constant <= 2 ** -0.5 + 1e-6
    assert rep.empirical_constant > 0.5
    assert rep.label == "max observed ratio" and rep.in_theorem_range
    assert set(rep.per_family) == set(FAMILIES)


def test_ratios_are_scale_invariant(torus10):
    from jumpforms.harness import _ratios

    f = sample_fields(torus10, "gaussian", 0, 4)
    for op in ("H_nabla", "H_tilde", "G_tilde", "G", "maximal", "decay"):
        a = _ratios(torus10, op, f, [1.5, 2.0], 1e-10)
        b = _ratios(torus10, op, 2.0 * f, [1.5, 2.0], 1e-10)
        assert np.allclose(a, b, rtol=1e-8, atol=1e-12), op


def test_estimates_are_deterministic_and_refinement_helps():
    cfg = TrialConfig(TORUS, p_values=[1.5], n_trials=10, seed=1)
    a = estimate_constants(cfg, "H_tilde", refine_steps=20)
    b = estimate_constants(cfg, "H_tilde", refine_steps=20)
    assert a == b
    plain = estimate_constants(cfg, "H_tilde")[0]
    assert a[0].empirical_constant >= plain.empirical_constant
    assert a[0].refinement_trace[0]["step"] == 0
    with pytest.raises(InvalidParameter):
        estimate_constants(cfg, "H_tilde", refine_steps=10_000)
    with pytest.raises(InvalidParameter):
        estimate_constants(cfg, "Riesz")


def test_stability_sweep_rows():
    cfg = TrialConfig(TORUS, p_values=[2.0], n_trials=10, seed=0)
    out = stability_sweep(cfg, "H_nabla", [8, 12])
    assert out["passed"]
    row = out["rows"][0]
    assert set(row["by_n"]) == {"8", "12"} and row["spread"] >= 0


def test_two_state_suite_passes():
    cfg = TrialConfig(TWO, field_family=list(FAMILIES), n_trials=20, seed=0)
    out = run_inequality_suite(cfg)
    assert out["passed"], out["failures"][:3]
    assert out["summary"]["g_tilde_le_h_tilde"]
    assert {r["family"] for r in out["checks"]} == set(FAMILIES)


def test_suite_records_failures_with_provenance():
    cfg = TrialConfig({"builder": "torus_stable", "params": {"n": 8, "alpha": 1.5}}, field_family="gaussian", n_trials=60, seed=0)
    out = run_inequality_suite(cfg)
    analytic = {k: v for k, v in out["summary"].items() if k != "g_tilde_le_h_tilde"}
    assert all(analytic.values())
    for fail in out["failures"]:
        assert fail["inequality"] == "g_tilde_le_h_tilde"
        f = sample_fields(cfg.build_space(), "gaussian", fail["field_seed"], cfg.n_trials)[fail["trial"]]
        assert f.shape == (8,)


def test_hp_domination_opt_in():
    cfg = TrialConfig(TWO, field_family="nonneg_exp", p_values=[1.5], n_trials=4, seed=0)
    out = run_inequality_suite(cfg, hp_trials=2)
    assert out["summary"]["h_p_dominates_h_tilde"]


def test_seed_precedence(monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)
    assert resolve_seed(5) == {"seed": 5, "seed_source": "config"}
    monkeypatch.setenv(SEED_ENV, "17")
    assert resolve_seed(5) == {"seed": 17, "seed_source": "env"}
    assert resolve_seed(5, 3) == {"seed": 3, "seed_source": "cli"}
    monkeypatch.setenv(SEED_ENV, "x")
    with pytest.raises(InvalidParameter):
        resolve_seed(5)


def test_dumps_is_canonical():
    doc = {"b": np.float64(1.5), "a": [np.int64(2), np.nan, np.inf], "c": np.array([True, False])}
    text = dumps(doc)
    assert text == dumps(dict(reversed(list(doc.items()))))
    assert json.loads(text) == {"a": [2, None, None], "b": 1.5, "c": [True, False]}


def test_write_report_layout(tmp_path):
    p1 = write_report({"x": 1}, tmp_path, "check", 9)
    p2 = write_report({"x": 1}, tmp_path, "check", 9)
    assert p1.parent == tmp_path / "check" and p1.name.endswith("-9.json")
    assert p1 != p2 and p1.read_bytes() == p2.read_bytes()
    assert json.loads(p1.read_text())["schema_version"] == SCHEMA_VERSION
