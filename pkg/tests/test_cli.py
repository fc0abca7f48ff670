import csv
import io
import json

import numpy as np
import pytest

from dualrl.cli import CSV_COLUMNS, main, parse_seeds
from dualrl.mdp import TabularMdp, validate_mdp


def _run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def _csv(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_gen_is_deterministic_and_valid(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for path in (a, b):
        assert _run(capsys, "gen", "--states", "4", "--actions", "2", "--gamma", "0.9", "--seed", "0", "--out", str(path))[0] == 0
    assert a.read_bytes() == b.read_bytes()
    mdp = TabularMdp.load(a)
    assert validate_mdp(mdp) == []
    assert np.max(np.abs(mdp.transition.sum(axis=2) - 1)) <= 1e-12


def test_gen_round_trip(tmp_path, capsys):
    path = tmp_path / "m.json"
    _run(capsys, "gen", "--states", "3", "--actions", "2", "--gamma", "0.8", "--seed", "5", "--out", str(path))
    mdp = TabularMdp.load(path)
    again = tmp_path / "m2.json"
    mdp.save(again)
    back = TabularMdp.load(again)
    assert np.array_equal(back.transition, mdp.transition) and np.array_equal(back.reward, mdp.reward)
    assert path.read_bytes() == again.read_bytes()


def test_gen_with_dataset(tmp_path, capsys):
    from dualrl.dataset import OfflineDataset
    code, _, _ = _run(capsys, "gen", "--states", "3", "--actions", "2", "--gamma", "0.8", "--out", str(tmp_path / "m.json"),
                      "--dataset-out", str(tmp_path / "d.json"))
    assert code == 0
    assert abs(OfflineDataset.load(tmp_path / "d.json").weights.sum() - 1) < 1e-12


@pytest.mark.parametrize("argv", [
    ("gen", "--states", "4", "--actions", "2", "--gamma", "1.2", "--out", "x.json"),
    ("gen", "--states", "0", "--actions", "2", "--out", "x.json"),
    ("gen", "--fixture", "nope", "--out", "x.json"),
    ("run", "--fixture", "single-state", "--method", "bogus"),
    ("run", "--fixture", "single-state"),
    ("gen", "--states", "4", "--bogus-flag"),
])
def test_invalid_input_exit_2(argv, tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    code, _, err = _run(capsys, *argv)
    assert code == 2


def test_errors_are_json_lines(capsys):
    code, _, err = _run(capsys, "run", "--fixture", "single-state", "--method", "bogus")
    line = json.loads(err.strip().splitlines()[-1])
    assert code == 2 and set(line) == {"error", "message"}


def test_run_closed_form_single_state(capsys):
    code, out, _ = _run(capsys, "run", "--fixture", "single-state", "--method", "dualdice:square:closed")
    res = json.loads(out)
    assert code == 0 and res["abs_error"] < 1e-8
    for key in ("method", "value_estimate", "oracle_value", "converged", "iters", "zeta_table", "q_table",
                "config_echo", "seed"):
        assert key in res


def test_run_reps_single_state(capsys):
    code, out, _ = _run(capsys, "run", "--fixture", "single-state", "--method", "reps")
    res = json.loads(out)
    assert code == 0 and res["value_estimate"] == 1.0


def test_run_periodic_chain_exit_4(capsys):
    code, _, err = _run(capsys, "run", "--fixture", "swap-chain", "--method", "undisc-dual:square")
    assert code == 4 and json.loads(err.strip())["error"] == "NotErgodic"


def test_run_coverage_exit_3(capsys):
    code, _, err = _run(capsys, "run", "--states", "3", "--actions", "2", "--gamma", "0.9", "--method", "lagrangian:zero",
                        "--behavior", "deterministic:0,0,0", "--target", "deterministic:1,1,1")
    assert code == 3 and json.loads(err.strip())["error"] == "CoverageError"


def test_run_nonconvergence_is_exit_0(capsys):
    code, out, _ = _run(capsys, "run", "--states", "2", "--actions", "2", "--gamma", "0.8", "--method", "dualdice:square",
                        "--max-iters", "3")
    assert code == 0 and json.loads(out)["converged"] is False


def test_run_writes_file_and_is_stable(tmp_path, capsys):
    path = tmp_path / "r.json"
    texts = []
    for _ in range(2):
        main(["run", "--states", "2", "--actions", "2", "--gamma", "0.8", "--method", "vlp:square", "--out", str(path)])
        texts.append(path.read_bytes())
    assert texts[0] == texts[1]


def test_config_file(tmp_path, capsys):
    cfg = tmp_path / "exp.json"
    cfg.write_text(json.dumps({"fixture": "single-state", "method": "dualdice:square:closed",
                               "solver": {"max_iters": 50}}))
    code, out, _ = _run(capsys, "run", "--config-file", str(cfg))
    res = json.loads(out)
    assert code == 0 and res["abs_error"] < 1e-8 and res["config"]["max_iters"] == 50


def test_compare_shape(capsys):
    code, out, _ = _run(capsys, "compare", "--states", "2", "--actions", "2", "--gamma", "0.8",
                        "--methods", "dualdice:square:closed,reps", "--seeds", "0-2")
    rows = _csv(out)
    assert code == 0 and len(rows) == 6
    assert out.splitlines()[0].split(",") == list(CSV_COLUMNS)
    assert [(r["seed"], r["method"]) for r in rows] == sorted((r["seed"], r["method"]) for r in rows)


def test_compare_closed_form_beats_iterative(capsys):
    code, out, _ = _run(capsys, "compare", "--states", "3", "--actions", "2", "--gamma", "0.8",
                        "--methods", "lagrangian:zero", "--methods", "dualdice:square:closed", "--seeds", "0-4")
    rows = _csv(out)
    assert len(rows) == 10
    by_seed = {}
    for r in rows:
        by_seed.setdefault(r["seed"], {})[r["method"]] = float(r["zeta_max_error"])
    for errs in by_seed.values():
        assert errs["dualdice:square:closed"] < 1e-6
        assert errs["dualdice:square:closed"] < errs["lagrangian:zero"]


def test_compare_records_errors_per_row(capsys):
    code, out, _ = _run(capsys, "compare", "--states", "3", "--actions", "2", "--gamma", "0.9",
                        "--methods", "lagrangian:zero,reps", "--behavior", "deterministic:0,0,0",
                        "--target", "deterministic:1,1,1", "--seeds", "0")
    rows = {r["method"]: r for r in _csv(out)}
    assert code == 0
    assert rows["lagrangian:zero"]["error"] == "CoverageError" and rows["lagrangian:zero"]["value_estimate"] == "NA"


def test_compare_empty_methods_exit_2(capsys):
    assert _run(capsys, "compare", "--states", "2", "--actions", "2", "--methods", ",")[0] == 2
    assert _run(capsys, "compare", "--states", "2", "--actions", "2")[0] == 2


def test_compare_is_bitwise_stable(tmp_path, capsys):
    paths = [tmp_path / f"c{i}.csv" for i in range(2)]
    for p in paths:
        main(["compare", "--states", "2", "--actions", "2", "--gamma", "0.8", "--methods", "dualdice:square,vlp-eval",
              "--seeds", "0,1", "--out", str(p)])
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_parse_seeds():
    assert parse_seeds("0-2,5") == [0, 1, 2, 5]
    assert parse_seeds("") == []


def test_catalog_command(tmp_path, capsys):
    out = tmp_path / "catalog.md"
    assert main(["catalog", "--out", str(out)]) == 0
    assert out.read_text().startswith("# Objective catalog")
