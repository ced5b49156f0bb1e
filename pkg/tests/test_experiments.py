import json
from pathlib import Path

import numpy as np
import pytest

from coagkit_errors import ConfigError
from experiment_config import config_from_dict
import experiments
from experiments import concentration_study, convergence_study, failed_invariants, reference_solution
from main import main
from oracles import multiplicative_tail_crossing

CONSTANT = {"kernel": {"type": "constant"}, "initial": {"monodisperse": 1}, "t_end": 1.0, "samples": 5}


def _summary(out_dir):
    return json.loads((out_dir / "summary.json").read_text())


def test_validate_config(write_config):
    assert main(["validate-config", "--config", str(write_config(dict(CONSTANT, kind="solve")))]) == 0


def test_bad_configs_exit_with_config_code(tmp_path, write_config):
    broken = tmp_path / "broken.json"
    broken.write_text('{"kind": "solve", ', encoding="utf-8")
    assert main(["solve", "--config", str(broken)]) == 2
    assert main(["solve", "--config", str(tmp_path / "absent.json")]) == 2
    assert main(["nonuniq", "--config", str(write_config(dict(CONSTANT, kind="solve")))]) == 2


def test_solve_writes_trajectory_and_summary(tmp_path, write_config):
    config = write_config(dict(CONSTANT, kind="solve", truncation={"interval": 40}, solver={"rtol": 1e-11, "atol": 1e-13}))
    out = tmp_path / "solve"
    assert main(["solve", "--config", str(config), "--out", str(out), "--seed", "3"]) == 0
    summary = _summary(out)
    assert summary["kind"] == "solve"
    assert summary["seed"] == 3
    assert "trajectory.csv" in summary["artifacts"]
    assert (out / "trajectory_moments.gp").exists()
    assert summary["results"]["reports"][0]["mass_conserved"]
    assert summary["results"]["failed_invariants"] == []


def test_solve_with_exhaustion(tmp_path, write_config):
    config = write_config(dict(CONSTANT, kind="solve", truncations=[{"interval": 8}, {"interval": 16}]))
    out = tmp_path / "exhaustion"
    assert main(["solve", "--config", str(config), "--out", str(out)]) == 0
    summary = _summary(out)
    assert len(summary["results"]["reports"]) == 2
    assert (out / "trajectory_1.csv").exists()


def test_environment_seed_and_flag_precedence(tmp_path, write_config, monkeypatch):
    config = write_config({"kind": "nonuniq", "t_end": 1.0, "samples": 3, "chain": {"N_max": 6}, "seed": 1})
    monkeypatch.setenv("COAGKIT_SEED", "11")
    assert main(["nonuniq", "--config", str(config), "--out", str(tmp_path / "env")]) == 0
    assert _summary(tmp_path / "env")["seed"] == 11
    assert main(["nonuniq", "--config", str(config), "--out", str(tmp_path / "flag"), "--seed", "12"]) == 0
    assert _summary(tmp_path / "flag")["seed"] == 12
    monkeypatch.setenv("COAGKIT_SEED", "eleven")
    assert main(["nonuniq", "--config", str(config), "--out", str(tmp_path / "bad")]) == 2


def test_nonuniq_writes_certificate(tmp_path, write_config):
    config = write_config({"kind": "nonuniq", "t_end": 1.0, "samples": 11, "chain": {"N_max": 10, "mass_base": 1.5}})
    out = tmp_path / "nonuniq"
    assert main(["nonuniq", "--config", str(config), "--out", str(out)]) == 0
    results = _summary(out)["results"]
    assert results["separation"] > 0.1
    assert results["bounds_plus_passed"] and results["bounds_minus_passed"]
    certificate = json.loads((out / "certificate.json").read_text())
    assert 0.0 < certificate["fixed_point_residual"] < 1e-4
    assert "mass" in certificate
    assert (out / "m_plus.gp").exists()


def test_failed_invariants_exit_with_invariant_code(tmp_path, write_config, monkeypatch):
    monkeypatch.setattr(experiments, "verify_chain_bounds", lambda m: {"passed": False, "violations": []})
    config = write_config({"kind": "nonuniq", "t_end": 1.0, "samples": 3, "chain": {"N_max": 6}})
    out = tmp_path / "failed"
    assert main(["nonuniq", "--config", str(config), "--out", str(out)]) == 3
    assert _summary(out)["results"]["failed_invariants"] == ["bounds_plus", "bounds_minus"]
    assert (out / "certificate.json").exists()


def test_failed_invariants_for_solve_reports():
    reports = [
        {"phi_monotone": True, "meta": {"monitor_ok": True}},
        {"phi_monotone": False, "meta": {"monitor_ok": False}},
    ]
    assert failed_invariants("solve", {"reports": reports}) == ["phi_monotone[1]", "phi2_monitor[1]"]
    assert failed_invariants("nonuniq", {"bounds_plus_passed": True, "bounds_minus_passed": True, "mass_within_certificate": None}) == []
    assert failed_invariants("simulate", {}) == []


@pytest.mark.slow
def test_shipped_gelation_config_runs_clean(tmp_path):
    config = Path(__file__).parent.parent / "configs" / "solve_gelation.json"
    out = tmp_path / "gelation"
    assert main(["solve", "--config", str(config), "--out", str(out)]) == 0
    results = _summary(out)["results"]
    assert results["failed_invariants"] == []
    assert results["blowup_horizon"] == pytest.approx(1.0)
    for report, x_max in zip(results["reports"], (50, 100, 200)):
        assert report["meta"]["min_weight"] >= -1e-12
        assert report["meta"]["monitor_ok"]
        assert report["lambda_positive_after"] == pytest.approx(multiplicative_tail_crossing(x_max, 1e-4), abs=1e-3)


def test_simulate_is_reproducible(tmp_path, write_config):
    config = write_config(dict(CONSTANT, kind="simulate", n=50))
    for name in ("a", "b"):
        assert main(["simulate", "--config", str(config), "--out", str(tmp_path / name), "--seed", "5"]) == 0
    for csv in ("trajectory.csv", "events.csv"):
        assert (tmp_path / "a" / csv).read_bytes() == (tmp_path / "b" / csv).read_bytes()
    results = _summary(tmp_path / "a")["results"]
    assert results["particles"] == 50
    assert results["final_count"] == 50 - results["events"]


def test_couple_and_family_run(tmp_path, write_config):
    couple = write_config(dict(CONSTANT, kind="couple", n=30, truncation={"interval": 4}), "couple.json")
    assert main(["couple", "--config", str(couple), "--out", str(tmp_path / "couple")]) == 0
    assert _summary(tmp_path / "couple")["results"]["truncation"] == {"interval": 4.0}

    family = write_config(
        dict(CONSTANT, kind="family", initial={"monodisperse": {"count": 20}}, truncations=[{"interval": 2}, {"interval": 4}, "all"]),
        "family.json",
    )
    assert main(["family", "--config", str(family), "--out", str(tmp_path / "family")]) == 0
    results = _summary(tmp_path / "family")["results"]
    assert len(results["events"]) == 3
    assert (tmp_path / "family" / "events_2.csv").exists()


def test_convergence_is_independent_of_threads(tmp_path, write_config):
    config = write_config(dict(CONSTANT, kind="converge", n_list=[10, 40], replicas=3))
    for name, threads in (("one", "1"), ("four", "4")):
        assert main(["converge", "--config", str(config), "--out", str(tmp_path / name), "--threads", threads]) == 0
    assert (tmp_path / "one" / "convergence.csv").read_bytes() == (tmp_path / "four" / "convergence.csv").read_bytes()


def test_convergence_single_size_has_no_slope():
    config = config_from_dict(dict(CONSTANT, kind="converge", n_list=[10], replicas=2))
    table, results = convergence_study(config)
    assert results["slope"] is None
    assert list(table.columns) == ["n", "mean_distance", "stderr", "replicas"]
    assert table["mean_distance"].iloc[0] > 0


def test_reference_solution_leaks_little():
    config = config_from_dict(dict(CONSTANT, kind="converge", n_list=[10], replicas=1))
    reference = reference_solution(config)
    assert max(state.lam for state in reference.states) < 1e-8
    assert reference.meta["truncation"]["interval"] >= 8.0


def test_concentration_beyond_diameter_never_exceeds():
    config = config_from_dict(dict(CONSTANT, kind="concentrate", truncation={"interval": 8}, n_list=[20, 40], replicas=2, delta=10.0))
    table, results = concentration_study(config)
    assert table["exceedances"].tolist() == [0, 0]
    assert results["diameter"] == pytest.approx(3.0)
    assert results["non_increasing"] and results["tail_decay"]
    assert results["norm"] == "plain"

    weighted = config_from_dict(dict(CONSTANT, kind="concentrate", truncation={"interval": 8}, n_list=[20], replicas=2, delta=2.5, norm="phi"))
    table, results = concentration_study(weighted)
    assert results["diameter"] == pytest.approx(2.0)
    assert table["exceedances"].tolist() == [0]


def test_concentration_frequencies():
    config = config_from_dict(dict(CONSTANT, kind="concentrate", truncation={"interval": 8}, n_list=[20, 80], replicas=4, delta=0.3))
    table, results = concentration_study(config)
    assert np.all((table["frequency"] >= 0) & (table["frequency"] <= 1))
    assert results["resolvable_floor"] > 0


def test_concentration_needs_a_finite_truncation():
    config = config_from_dict(dict(CONSTANT, kind="concentrate", n_list=[20], replicas=2, delta=0.5))
    with pytest.raises(ConfigError):
        concentration_study(config)


@pytest.mark.slow
def test_shipped_convergence_config_trend(tmp_path):
    config = Path(__file__).parent.parent / "configs" / "converge_constant.json"
    out = tmp_path / "converge"
    assert main(["converge", "--config", str(config), "--out", str(out)]) == 0
    results = _summary(out)["results"]
    assert results["n_list"] == [100, 1000, 10000]
    assert results["strictly_decreasing"]
    assert results["slope"] == pytest.approx(-0.5, abs=0.15)


@pytest.mark.slow
def test_shipped_concentration_config_trend(tmp_path):
    config = Path(__file__).parent.parent / "configs" / "concentrate_constant.json"
    out = tmp_path / "concentrate"
    assert main(["concentrate", "--config", str(config), "--out", str(out)]) == 0
    results = _summary(out)["results"]
    assert results["delta"] == 0.1
    assert results["truncation"] == {"set": [float(k) for k in range(1, 9)]}
    assert results["non_increasing"] and results["tail_decay"]
