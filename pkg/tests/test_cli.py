import csv
import json

import numpy as np
import pytest

from arrl.cli import EXIT_RESOURCE, EXIT_USAGE, main, save_policy
from arrl.envs import build_chain_mdp, build_cliff_walking, build_random_mdp
from arrl.mdp import evaluate_policy_pair_exact
from arrl.planner import solve_robust_optimal
from oracles import value_iteration


def read_csv(path):
    with open(path) as f:
        return list(csv.DictReader(f))


def test_solve_cliff(tmp_path, capsys):
    out = tmp_path / "sol.json"
    assert main(["solve", "--env", "cliff", "--rho", "0.2", "--H", "30", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert {"V_star", "Q_star", "pi_star", "pi_minus"} <= set(doc)
    assert np.array(doc["pi_star"]).shape == (30, 49)
    line = capsys.readouterr().out
    v = doc["V_star"][0][36]
    assert f"V*_1(s1)={v!r}" in line
    raw = float(line.split("raw=")[1].split()[0])
    assert raw == pytest.approx(100 * v - 30 * 100, abs=1e-9)


def test_solve_random_rho_zero_is_value_iteration(tmp_path):
    out = tmp_path / "sol.json"
    assert main(["solve", "--env", "random:S=3,A=2,seed=7", "--rho", "0", "--H", "4", "--out", str(out)]) == 0
    mdp = build_random_mdp(3, 2, 4, seed=7)
    assert np.allclose(json.loads(out.read_text())["V_star"], value_iteration(mdp.P, mdp.R), atol=1e-12)


def test_solve_chain_full_adversary(tmp_path):
    out = tmp_path / "sol.json"
    assert main(["solve", "--env", "chain:n=4", "--rho", "1", "--H", "10", "--out", str(out)]) == 0
    v = json.loads(out.read_text())["V_star"][0][0]
    assert v <= 0.01 * 10
    assert v == solve_robust_optimal(build_chain_mdp(4, 10), 1.0).V_star[0, 0]


def test_usage_and_resource_errors(tmp_path, capsys):
    assert main(["solve", "--env", "maze", "--out", str(tmp_path / "x.json")]) == EXIT_USAGE
    assert "unknown env" in capsys.readouterr().err
    assert main(["duality-check", "--env", "cliff", "--H", "3"]) == EXIT_RESOURCE
    assert main(["train", "--env", "cliff", "--K", "5", "--out", str(tmp_path)]) == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["train", "--alg", "sarsa"])
    assert exc.value.code == 2


def test_duality_check_small(capsys):
    assert main(["duality-check", "--env", "random:S=2,A=2,seed=3", "--H", "2", "--rho", "0.3"]) == 0
    assert "gap=0.000e+00" in capsys.readouterr().out


def test_train_cliff_rows_and_determinism(tmp_path):
    args = ["train", "--alg", "arrlc", "--env", "cliff", "--rho", "0.2", "--K", "3000", "--seed", "1"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "arrlc_seed1.csv").read_bytes()
    assert a == (tmp_path / "b" / "arrlc_seed1.csv").read_bytes()
    rows = read_csv(tmp_path / "a" / "arrlc_seed1.csv")
    assert len(rows) == 3000 and rows[-1]["episode"] == "3000"
    assert all(r["true_value_pi_bar"] != "" for r in rows[:5])
    pol = json.loads((tmp_path / "a" / "arrlc_seed1_pi_out.json").read_text())
    assert (pol["H"], pol["S"], pol["A"]) == (30, 49, 4)


def test_parallel_seeds_match_sequential(tmp_path):
    base = ["train", "--alg", "ar_ucbh", "--env", "random:S=3,A=2,seed=1", "--H", "3", "--K", "200"]
    assert main(base + ["--seed", "4", "5", "--jobs", "2", "--out", str(tmp_path / "par")]) == 0
    for seed in (4, 5):
        assert main(base + ["--seed", str(seed), "--out", str(tmp_path / "seq")]) == 0
        name = f"ar_ucbh_seed{seed}.csv"
        assert (tmp_path / "par" / name).read_bytes() == (tmp_path / "seq" / name).read_bytes()


def test_model_based_certifies_sooner_than_model_free(tmp_path):
    firsts = {}
    for alg in ("arrlc", "ar_ucbh"):
        assert main(["train", "--alg", alg, "--env", "random:S=2,A=2,seed=0", "--H", "2", "--K", "300000",
                     "--seed", "0", "--out", str(tmp_path)]) == 0
        with open(tmp_path / f"{alg}_seed0.csv") as f:
            firsts[alg] = next(int(r["episode"]) for r in csv.DictReader(f) if float(r["epsilon"]) <= 0.2)
    assert firsts["arrlc"] < firsts["ar_ucbh"]


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"env": "random:S=2,A=2,seed=0", "H": 2, "K": 50, "seed": [3], "alg": "ar_ucbh",
                               "out": str(tmp_path / "runs")}))
    assert main(["train", "--config", str(cfg), "--K", "20"]) == 0
    assert len(read_csv(tmp_path / "runs" / "ar_ucbh_seed3.csv")) == 20
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"colour": "red"}))
    with pytest.raises(SystemExit):
        main(["train", "--config", str(bad)])


def test_evaluate_optimal_policy_without_perturbation(tmp_path):
    mdp, amap = build_cliff_walking(30)
    sol = solve_robust_optimal(mdp, 0.2)
    pol = tmp_path / "pi.json"
    save_policy(pol, sol.pi_star, 4, "pi_star", "cliff")
    out = tmp_path / "eval.csv"
    assert main(["evaluate", "--env", "cliff", "--H", "30", "--policy", str(pol), "--perturb", "none:0",
                 "--out", str(out)]) == 0
    row = read_csv(out)[0]
    exact = evaluate_policy_pair_exact(mdp, sol.pi_star, sol.pi_star, 0.0).C[0, mdp.s1]
    assert float(row["mean_norm"]) == pytest.approx(exact, abs=1e-9)
    assert float(row["mean_raw"]) == pytest.approx(amap.return_to_raw(exact, 30), abs=1e-7)
    assert float(row["stderr"]) == 0.0


def test_train_then_evaluate_default_grid(tmp_path):
    assert main(["train", "--env", "cliff", "--H", "10", "--K", "20", "--seed", "0", "--out", str(tmp_path)]) == 0
    pol = tmp_path / "arrlc_seed0_pi_out.json"
    out = tmp_path / "eval.csv"
    assert main(["evaluate", "--env", "cliff", "--H", "10", "--policy", str(pol), "--out", str(out)]) == 0
    rows = read_csv(out)
    assert [(r["perturb_kind"], float(r["p"])) for r in rows] == [
        ("fixed_policy", 0.1), ("fixed_policy", 0.2), ("uniform_random", 0.1), ("uniform_random", 0.2)]
    assert all(r["n"] == "100" for r in rows)
    assert main(["evaluate", "--env", "cliff", "--H", "10", "--policy", str(pol), "--out", str(out)]) == 0
    assert read_csv(out) == rows


def test_evaluate_dimension_mismatch(tmp_path, capsys):
    pol = tmp_path / "pi.json"
    save_policy(pol, np.zeros((5, 49), int), 4, "p", "cliff")
    assert main(["evaluate", "--env", "cliff", "--H", "6", "--policy", str(pol), "--out", str(tmp_path / "e.csv")]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert "(5, 49, 4)" in err and "(6, 49, 4)" in err


def test_fixed_perturbation_needs_adversary(tmp_path):
    pol = tmp_path / "pi.json"
    save_policy(pol, np.zeros((2, 2), int), 2, "p", "random")
    args = ["evaluate", "--env", "random:S=2,A=2,seed=0", "--H", "2", "--policy", str(pol), "--out", str(tmp_path / "e.csv")]
    assert main(args + ["--perturb", "fixed:0.1"]) == EXIT_USAGE
    assert main(args + ["--perturb", "fixed:0.1", "--adversary", str(pol)]) == 0
