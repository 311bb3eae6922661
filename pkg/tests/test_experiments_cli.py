import json

import numpy as np
import pytest

from bcel.cli import main
from bcel.data import load_dataset
from bcel.experiments import ExperimentConfig, audit_summary, binomial_p_value, results_csv, sweep
from bcel.function_classes import deserialize_function_class
from bcel.game import example_matrix_game, load_game
from bcel.policies import JointPolicy, PolicyClass, load_policy_class, save_policy_class

SMALL = dict(n_grid=[100, 400], trials=3, pilot_trials=5, n_perturbations=20)


def write_config(tmp_path, **fields):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({**SMALL, **fields}))
    return path


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(n_grid=(1000, 100))
    with pytest.raises(ValueError):
        ExperimentConfig(variant="w")
    with pytest.raises(ValueError):
        ExperimentConfig(variant="zerosum", equilibrium="CCE")
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"unknown": 1})
    c = ExperimentConfig(seed=3)
    assert ExperimentConfig.from_dict(json.loads(c.to_json())) == c
    assert c.digest() == c.replace(out="elsewhere").digest()


def test_run_is_byte_identical_across_invocations_and_workers(tmp_path, monkeypatch):
    cfg = write_config(tmp_path)
    assert main(["run", "--config", str(cfg), "--seed", "5", "--out", str(tmp_path / "a")]) == 0
    monkeypatch.setenv("BCEL_WORKERS", "2")
    assert main(["run", "--config", str(cfg), "--seed", "5", "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "results.csv").read_bytes()
    assert a == (tmp_path / "b" / "results.csv").read_bytes()
    assert a.startswith(b"# format=bcel-results/1")
    assert main(["run", "--config", str(cfg), "--seed", "6", "--out", str(tmp_path / "c")]) == 0
    assert a != (tmp_path / "c" / "results.csv").read_bytes()


def test_usage_errors_exit_with_code_two(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"n_grid": [10, 5]}))
    assert main(["run", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["run", "--variant", "w"])
    assert exc.value.code == 2


def test_singleton_policy_class_rows(tmp_path):
    pc_path = tmp_path / "pc.json"
    save_policy_class(PolicyClass([JointPolicy.deterministic([[0, 0]], (3, 3))]), pc_path)
    config = ExperimentConfig(policy_class=str(pc_path), **{**SMALL, "n_grid": (100, 400)})
    outcomes = sweep(config, audit=False)
    assert all(o.selected == 0 and o.sandwich for o in outcomes)
    lines = results_csv(config, outcomes).splitlines()
    body = [l for l in lines[2:] if l.startswith("policy")]
    assert len(body) == config.trials * len(config.n_grid)


def test_generate_writes_instance_files(tmp_path):
    out = tmp_path / "gen"
    cfg = write_config(tmp_path)
    assert main(["generate", "--config", str(cfg), "--out", str(out)]) == 0
    assert load_game(out / "game.json") == example_matrix_game()
    assert len(load_policy_class(out / "policy_class.json")) == 9
    fc = deserialize_function_class((out / "function_class_0.json").read_text())
    assert len(fc) == 9 + 20
    ds = load_dataset(out / "dataset_trial0_n100.txt")
    assert ds.n == 100
    assert json.loads((out / "config.json").read_text())["trials"] == 3


def test_audit_exit_codes(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["audit", "--config", str(cfg), "--out", str(tmp_path / "ok")]) == 0
    text = (tmp_path / "ok" / "audit.csv").read_text()
    assert text.splitlines()[-1].endswith("pass")
    broken = write_config(tmp_path, threshold_mode="theoretical", threshold_constants=[1e-9, 0.0],
                          trials=10, n_grid=[100])
    assert main(["audit", "--config", str(broken), "--out", str(tmp_path / "bad")]) == 1


def test_reproduce_example_reports_selection_share(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["reproduce-example", "--config", str(cfg), "--out", str(tmp_path / "ex"),
                 "--n-grid", "100,1000", "--trials", "2"]) == 0
    assert "selected (a1,b1)" in capsys.readouterr().out
    assert (tmp_path / "ex" / "example.csv").exists()


def test_binomial_p_value():
    assert binomial_p_value(0, 100, 0.1) == 1.0
    assert binomial_p_value(10, 100, 0.1) == pytest.approx(0.5487, abs=1e-3)
    assert binomial_p_value(30, 100, 0.1) < 1e-6


@pytest.mark.parametrize("variant", ["v", "zerosum"])
def test_other_variants_run(variant):
    config = ExperimentConfig(variant=variant, **SMALL)
    outcomes = sweep(config, audit=True)
    assert not any(o.error for o in outcomes)
    assert all(np.isfinite(o.selected_gap) for o in outcomes)


def test_rate_constants_are_finite_and_stable():
    config = ExperimentConfig(game="random", num_states=3, action_counts=(2, 2), gamma=0.7,
                              distribution="random", policy_class="random", marginal_counts=(3, 4),
                              n_perturbations=40, n_grid=(10_000,), trials=40, pilot_trials=20, seed=1)
    outcomes = sweep(config, audit=True)
    assert all(np.isfinite(o.kappa) for o in outcomes)
    summary = audit_summary(config, outcomes)
    assert summary.kappa_cv <= 0.5
    assert summary.passed


@pytest.mark.slow
def test_zero_sum_variant_selects_equilibrium_on_example():
    config = ExperimentConfig(variant="zerosum", n_grid=(100_000,), trials=100, seed=4)
    outcomes = sweep(config, audit=False)
    assert sum(1 for o in outcomes if (o.extra["mu"], o.extra["nu"]) == (0, 0)) >= 90
