import json
import subprocess
import sys

import pytest

from lscopt.cli import main, read_config, resolve, UsageError


def run(args, capsys=None):
    code = main([str(a) for a in args])
    out = capsys.readouterr() if capsys is not None else None
    return code, out


@pytest.fixture
def instance(tmp_path):
    assert main(["generate", "--kind", "uniform", "--n", "8", "--h", "2", "--knn", "7",
                 "--seed", "1", "--out", str(tmp_path / "gen")]) == 0
    return tmp_path / "gen" / "instance_0000.json"


def test_generate_one_instance(tmp_path):
    out = tmp_path / "d"
    assert main(["generate", "--kind", "uniform", "--n", "20", "--h", "2", "--knn", "19",
                 "--seed", "1", "--out", str(out)]) == 0
    files = sorted(p.name for p in out.iterdir())
    assert files == ["instance_0000.json", "manifest.json"]
    assert json.loads((out / "instance_0000.json").read_text())["n"] == 20


def test_generate_clustered_count(tmp_path):
    out = tmp_path / "d"
    assert main(["generate", "--kind", "kclustered", "--k", "3", "--m", "2", "--count", "3",
                 "--seed", "2", "--out", str(out)]) == 0
    assert len(list(out.glob("instance_*.json"))) == 3


def test_two_opt_trajectory_decreases(instance, capsys):
    code, out = run(["solve", "--method", "two-opt", "--instance", instance, "--seed", 1], capsys)
    assert code == 0
    doc = json.loads(out.out)
    objs = [r["objective"] for r in doc["trajectory"]]
    assert objs and all(b < a for a, b in zip(objs, objs[1:]))
    assert doc["solution"]["problem"] == "tsp"


def test_solve_writes_files(instance, tmp_path):
    out = tmp_path / "s"
    assert main(["solve", "--method", "greedy", "--problem", "maxcut", "--instance",
                 str(instance), "--seed", "3", "--out", str(out)]) == 0
    sol = json.loads((out / "solution.json").read_text())
    assert len(sol["labels"]) == 8
    lines = (out / "trajectory.jsonl").read_text().splitlines()
    assert all(json.loads(l)["action"]["type"] == "flip" for l in lines)


def test_train_then_solve_and_eval(tmp_path, instance):
    run_dir = tmp_path / "run"
    assert main(["train", "--problem", "maxcut", "--n", "6", "--epochs", "6", "--batch", "4",
                 "--embed-dim", "4", "--seed", "1", "--out", str(run_dir)]) == 0
    assert {p.name for p in run_dir.iterdir()} == {"checkpoint.json", "metrics.csv",
                                                   "manifest.json"}
    ckpt = run_dir / "checkpoint.json"
    out = tmp_path / "sol"
    assert main(["solve", "--checkpoint", str(ckpt), "--instance", str(instance),
                 "--seed", "1", "--out", str(out)]) == 0
    assert json.loads((out / "solution.json").read_text())["method"] == "lsdqn"
    ev = tmp_path / "ev"
    assert main(["eval", "--quality", "--checkpoint", str(ckpt), "--n", "6", "--n-test", "2",
                 "--restarts", "1", "--seed", "1", "--out", str(ev)]) == 0
    header = (ev / "quality.csv").read_text().splitlines()[0]
    assert header.startswith("instance_id,method,objective,approx_ratio")


def test_baseline_results(instance, tmp_path):
    out = tmp_path / "b"
    assert main(["baseline", "--problem", "tsp", "--instance", str(instance), "--instance",
                 str(instance), "--seed", "1", "--out", str(out)]) == 0
    rows = (out / "results.csv").read_text().splitlines()
    assert len(rows) == 1 + 2 * 3 and rows[1].endswith(",exact")


def test_config_precedence(tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("# preset\nepochs = 11\nembed-dim=6\nlr=0.01\n")
    o = resolve(["train", "--config", str(cfg), "--epochs", "3", "--seed", "0"])
    assert (o["epochs"], o["embed_dim"], o["lr"], o["gamma"]) == (3, 6, 0.01, 0.9)


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("nonsense\n")
    with pytest.raises(UsageError):
        read_config(bad)
    bad.write_text("colour=red\n")
    with pytest.raises(UsageError):
        read_config(bad)
    bad.write_text("epochs=many\n")
    with pytest.raises(UsageError):
        read_config(bad)


@pytest.mark.parametrize("args,code", [
    (["train", "--epochs", "2"], 1),                              # missing --seed
    (["solve", "--seed", "1", "--frobnicate"], 1),                 # unknown flag
    (["frobnicate", "--seed", "1"], 1),
    (["eval", "--seed", "1", "--out", "OUT"], 1),                  # no experiment chosen
    (["solve", "--seed", "1", "--instance", "missing.json"], 2),
    (["train", "--seed", "1", "--gamma", "1.5", "--out", "OUT"], 1),
    (["solve", "--seed", "1", "--checkpoint", "nope.json", "--instance", "INST"], 2),
])
def test_exit_codes(args, code, tmp_path, instance, capsys):
    args = [a.replace("OUT", str(tmp_path / "o")).replace("INST", str(instance)) for a in args]
    assert main(args) == code
    err = capsys.readouterr().err
    assert err.count("\n") == 1 and err.startswith("lscopt:")


def test_oracle_refusal_is_runtime_error(tmp_path, capsys):
    out = tmp_path / "g"
    main(["generate", "--n", "16", "--seed", "0", "--out", str(out)])
    code = main(["solve", "--method", "exact", "--instance", str(out / "instance_0000.json"),
                 "--seed", "0"])
    assert code == 2 and "oracle" in capsys.readouterr().err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "lscopt", "--version"], capture_output=True,
                          text=True)
    assert proc.returncode == 0 and proc.stdout.strip()


def test_repeat_runs_identical(tmp_path):
    outs = []
    for name in ("a", "b"):
        d = tmp_path / name
        assert main(["eval", "--tradeoff", "--trajectory", "--problem", "tsp", "--n", "6",
                     "--epochs", "4", "--batch", "2", "--embed-dim", "4", "--n-test", "2",
                     "--restarts", "1", "--seed", "4", "--out", str(d)]) == 0
        outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
    assert outs[0] == outs[1]
