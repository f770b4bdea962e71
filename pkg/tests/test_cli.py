import csv
import io
import json
import subprocess
import sys

import pytest

from prophet_match.cli import main
from prophet_match.core import dumps_instance
from prophet_match.instances import random_instance


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


class TestSelectability:
    def test_vertex_scheme_on_edge_gadget(self, capsys):
        code, out, _ = run(["selectability", "--instance", "fig1a", "--algo", "vertex-ocrs"], capsys)
        data = json.loads(out)
        assert code == 0 and data["passed"]
        assert {e["ratio"] for e in data["selectability"]} == {"1/2"}

    def test_edge_scheme_warmup(self, capsys):
        code, out, _ = run(["selectability", "--instance", "random:7", "--algo", "edge-ocrs", "--c", "warmup"], capsys)
        assert code == 0
        assert json.loads(out)["achieved_selectability"] == "1/3"

    def test_mc_mode(self, capsys):
        code, out, _ = run(["selectability", "--instance", "random:3", "--algo", "vertex-ocrs", "--mode", "mc",
                            "--n", "4000", "--seed", "1"], capsys)
        data = json.loads(out)
        assert code == 0
        assert data["config"]["seed"] == 1 and data["diagnostics"]["max_ci_halfwidth"] > 0

    def test_csv_output(self, capsys, tmp_path):
        target = tmp_path / "rep.csv"
        code, out, _ = run(["selectability", "--instance", "random:2", "--algo", "vertex-ocrs", "--format", "csv",
                            "--out", str(target)], capsys)
        assert code == 0 and out == ""
        rows = list(csv.DictReader(io.StringIO(target.read_text())))
        assert rows and {"batch", "element", "ratio"} <= set(rows[0])

    def test_certification_failure_exits_one(self, capsys, tmp_path):
        # an instance where one edge's endpoints are free with probability below 0.382
        inst = random_instance(n_vertices=6, edge_prob=0.6, arrival="edge", seed=1)
        path = tmp_path / "inst.json"
        path.write_text(dumps_instance(inst))
        code, _, err = run(["selectability", "--instance", str(path), "--algo", "edge-ocrs", "--c", "independent"],
                           capsys)
        assert code == 1 and "certification" in err
        assert run(["selectability", "--instance", str(path), "--algo", "edge-ocrs"], capsys)[0] == 0


class TestRatio:
    def test_ex_ante_exactly_c(self, capsys):
        code, out, _ = run(["ratio", "--instance", "fig1b", "--algo", "edge-ocrs", "--benchmark", "ex-ante",
                            "--c", "warmup"], capsys)
        data = json.loads(out)
        assert code == 0 and data["ratio"] == "1/3"

    def test_optimal_online_vs_ex_ante(self, capsys):
        code, out, _ = run(["ratio", "--instance", "fig1b", "--algo", "optimal-online", "--benchmark", "ex-ante"],
                           capsys)
        assert code == 0
        assert json.loads(out)["ratio_float"] == pytest.approx(0.42117, abs=1e-5)

    def test_mc_ratio(self, capsys):
        code, out, _ = run(["ratio", "--instance", "random:4", "--algo", "pricing", "--mode", "mc", "--n", "3000",
                            "--seed", "2"], capsys)
        data = json.loads(out)
        assert code == 0 and data["diagnostics"]["samples"] == 3000


class TestUsageErrors:
    @pytest.mark.parametrize("argv", [
        ["ratio", "--instance", "random:1", "--algo", "greedy", "--mode", "mc"],
        ["ratio", "--instance", "random:1", "--algo", "greedy", "--n", "100"],
        ["ratio", "--instance", "nowhere", "--algo", "greedy"],
        ["selectability", "--instance", "random:1", "--algo", "pricing"],
        ["validate", "--only", "nonsense"],
    ])
    def test_exit_two(self, argv, capsys):
        assert run(argv, capsys)[0] == 2

    def test_argparse_errors_exit_two(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["ratio", "--algo", "teleport", "--instance", "fig1a"])
        assert info.value.code == 2

    def test_malformed_file(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"vertices": 2}')
        assert run(["ratio", "--instance", str(bad), "--algo", "greedy"], capsys)[0] == 2

    def test_json_file_round_trip(self, tmp_path, capsys):
        path = tmp_path / "inst.json"
        path.write_text(dumps_instance(random_instance(seed=6)))
        code, out, _ = run(["ratio", "--instance", str(path), "--algo", "vertex-ocrs"], capsys)
        assert code == 0 and json.loads(out)["passed"]


class TestValidate:
    def test_bad_example_group(self, capsys, tmp_path):
        target = tmp_path / "v.json"
        code, out, _ = run(["validate", "--only", "bad-ocrs", "--out", str(target)], capsys)
        assert code == 0 and "1/1 checks passed" in out
        assert json.loads(target.read_text())["results"][0]["passed"]

    def test_corrupted_constant_is_caught(self, capsys):
        code, out, _ = run(["validate", "--only", "improved", "--corrupt-constant"], capsys)
        assert code == 1 and "failed" in out


def test_console_module_entry():
    proc = subprocess.run([sys.executable, "-m", "prophet_match.cli", "validate", "--only", "gap"],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stdout + proc.stderr
