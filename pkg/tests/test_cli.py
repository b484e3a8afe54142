import shutil
import subprocess
from dataclasses import replace

import numpy as np
import pytest
import yaml

from lckmp import fileio
from lckmp.cli import main, parse_times, verify_lines
from lckmp.config import ScenarioConfig, run_pipeline
from lckmp.exceptions import ValidationError
from lckmp.model import ConstraintSet, predict

TINY = {
    "lambda": 1.0,
    "kernel": {"k_h": 2.0},
    "reference": {"times": [0.0, 0.5, 1.0], "mu": [[0, 0], [1, 1], [0, 0]], "sigma": 0.1},
}


def read_csv(path):
    return np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1))


def write_config(tmp_path, doc, name="c.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc))
    return str(path)


@pytest.fixture(scope="module")
def letter_model(tmp_path_factory):
    out = tmp_path_factory.mktemp("letter") / "model.json"
    assert main(["fit", "--config", "letter_g_2d", "--out", str(out)]) == 0
    return out


class TestParseTimes:
    def test_forms(self):
        np.testing.assert_array_equal(parse_times("0:1:3"), [0.0, 0.5, 1.0])
        np.testing.assert_array_equal(parse_times("0.1, 0.4"), [0.1, 0.4])
        assert parse_times("").size == 0 and parse_times(None).size == 0

    @pytest.mark.parametrize("text", ["0:1", "a,b", "0:1:x"])
    def test_invalid(self, text):
        with pytest.raises(ValidationError):
            parse_times(text)


class TestGen:
    def test_writes_csv(self, tmp_path, capsys):
        out = tmp_path / "d.csv"
        assert main(["gen", "walk_com", "--seed", "2", "--out", str(out)]) == 0
        assert "wrote 4 demonstrations" in capsys.readouterr().out
        header = out.read_text().splitlines()[0]
        assert header.startswith("demo_id,t,")

    def test_unknown_name(self, tmp_path, capsys):
        code = main(["gen", "letter_q", "--out", str(tmp_path / "d.csv")])
        assert code == 1
        assert "[ingest]" in capsys.readouterr().err

    def test_unwritable(self, tmp_path, capsys):
        code = main(["gen", "walk_com", "--out", str(tmp_path / "no" / "d.csv")])
        assert code == 3
        assert capsys.readouterr().err.startswith("error: [")


class TestFit:
    def test_letter_report(self, tmp_path, capsys):
        out = tmp_path / "m.json"
        traj = tmp_path / "p.csv"
        code = main(["fit", "--config", "letter_g_2d", "--out", str(out),
                     "--trajectory", str(traj), "--reference", str(tmp_path / "r.csv"),
                     "--gmm-out", str(tmp_path / "g.json")])
        assert code == 0
        text = capsys.readouterr().out
        assert "dual status: optimal" in text
        assert "active constraints: 1000" in text
        worst = float(text.split("worst constraint slack: ")[1].split()[0])
        assert worst >= -1e-6
        model = fileio.load_model(out)
        np.testing.assert_allclose(read_csv(traj)[:, 1:], predict(model, model.ref.times),
                                   rtol=0, atol=1e-12)
        assert fileio.load_gmm(tmp_path / "g.json").n_components == 8

    def test_unconstrained(self, tmp_path, capsys):
        code = main(["fit", "--config", "letter_g_2d", "--unconstrained",
                     "--out", str(tmp_path / "m.json")])
        assert code == 0
        assert "worst constraint slack: none" in capsys.readouterr().out

    def test_missing_config_flag(self, tmp_path, capsys):
        assert main(["fit", "--out", str(tmp_path / "m.json")]) == 1

    def test_bad_lambda(self, tmp_path, capsys):
        path = write_config(tmp_path, dict(TINY, **{"lambda": 0}))
        assert main(["fit", "--config", path, "--out", str(tmp_path / "m.json")]) == 1
        assert not (tmp_path / "m.json").exists()

    def test_infeasible_constraints(self, tmp_path, capsys):
        doc = dict(TINY, constraints=[{"g": [1, 0], "c": 1.0}, {"g": [-1, 0], "c": 0.0}])
        code = main(["fit", "--config", write_config(tmp_path, doc),
                     "--out", str(tmp_path / "m.json")])
        assert code == 2
        assert "infeasible" in capsys.readouterr().err

    def test_missing_demo_file(self, tmp_path, capsys):
        doc = {"lambda": 1.0, "kernel": {"k_h": 2.0},
               "demo_source": {"file": "absent.csv"}, "gmm": {"components": 2},
               "grid": {"t_start": 0.0, "t_end": 1.0, "n": 5}}
        code = main(["fit", "--config", write_config(tmp_path, doc),
                     "--out", str(tmp_path / "m.json")])
        assert code == 3


class TestPredict:
    def test_matches_in_process(self, tmp_path, letter_model):
        out = tmp_path / "p.csv"
        assert main(["predict", str(letter_model), "--times", "0:2:41", "--out", str(out)]) == 0
        res = run_pipeline(ScenarioConfig.load("letter_g_2d"))
        t = np.linspace(0.0, 2.0, 41)
        got = read_csv(out)
        np.testing.assert_array_equal(got[:, 0], t)
        np.testing.assert_allclose(got[:, 1:], predict(res.model, t), rtol=0, atol=1e-12)

    def test_empty_times(self, tmp_path, letter_model):
        out = tmp_path / "p.csv"
        assert main(["predict", str(letter_model), "--times", "", "--out", str(out)]) == 0
        assert out.read_text() == "t,x1,x2,xd1,xd2\n"

    def test_missing_model(self, tmp_path, capsys):
        code = main(["predict", str(tmp_path / "none.json"), "--out", str(tmp_path / "p.csv")])
        assert code == 3
        assert "[predict]" in capsys.readouterr().err


class TestVerify:
    def test_pass_on_grid(self, letter_model, capsys):
        assert main(["verify", str(letter_model), "--fine-factor", "1"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[-1] == "PASS" and len(lines) == 6

    def test_between_points_is_a_warning(self, letter_model, tmp_path, capsys):
        out = tmp_path / "v.txt"
        assert main(["verify", str(letter_model), "--fine-factor", "10", "--out", str(out)]) == 0
        text = capsys.readouterr().out
        assert out.read_text() == text
        assert text.splitlines()[-1] == "PASS"
        assert "between grid points" in text

    def test_unconstrained(self, tmp_path, capsys):
        path = write_config(tmp_path, TINY)
        model = tmp_path / "m.json"
        assert main(["fit", "--config", path, "--out", str(model)]) == 0
        capsys.readouterr()
        assert main(["verify", str(model)]) == 0
        assert capsys.readouterr().out == "no active constraints\nPASS\n"

    def test_violation_fails(self, tmp_path, capsys):
        path = write_config(tmp_path, dict(TINY, constraints=[{"g": [-1, 0], "c": -0.5}]))
        model = tmp_path / "m.json"
        assert main(["fit", "--config", path, "--out", str(model)]) == 0
        m = fileio.load_model(model)
        assert not verify_lines(m, 1)[1]
        cons = m.constraints
        shifted = replace(m, constraints=ConstraintSet(cons.g, cons.c + 10.0, cons.active))
        lines, failed = verify_lines(shifted, 1)
        assert failed and lines[-1] == "FAIL"

    def test_bad_fine_factor(self, letter_model, capsys):
        assert main(["verify", str(letter_model), "--fine-factor", "0"]) == 1


class TestAdapt:
    def test_endpoint(self, tmp_path, letter_model, capsys):
        points = tmp_path / "pts.yaml"
        points.write_text(yaml.safe_dump({"desired_points": [
            {"t": 2.0, "mu": [2.0, -1.0], "sigma": 1e-6}]}))
        out = tmp_path / "a.json"
        assert main(["adapt", str(letter_model), str(points), "--out", str(out)]) == 0
        model = fileio.load_model(out)
        np.testing.assert_allclose(predict(model, 2.0)[:2], [2.0, -1.0], atol=5e-2)
        assert "dual status: optimal" in capsys.readouterr().out

    def test_empty_points(self, tmp_path, letter_model, capsys):
        points = tmp_path / "pts.yaml"
        points.write_text("desired_points: []\n")
        code = main(["adapt", str(letter_model), str(points), "--out", str(tmp_path / "a.json")])
        assert code == 1
        assert "[assemble]" in capsys.readouterr().err


class TestMpc:
    @pytest.mark.parametrize("name", ["mpc_tiny", "mpc_one_constraint"])
    def test_compare(self, name, capsys):
        assert main(["mpc-compare", "--config", name]) == 0
        assert capsys.readouterr().out.splitlines()[-1].endswith("PASS")

    def test_compare_too_large(self, tmp_path, capsys):
        doc = dict(TINY, features={"n_features": 20, "seed": 0})
        doc["reference"] = {"times": [0.0, 0.2, 0.4, 0.6, 0.8], "mu": [[0, 0]] * 5,
                            "sigma": 0.1}
        assert main(["mpc-compare", "--config", write_config(tmp_path, doc)]) == 1
        assert "instance too large" in capsys.readouterr().err

    def test_compare_needs_features(self, capsys):
        assert main(["mpc-compare", "--config", "letter_g_2d"]) == 1
        assert "features" in capsys.readouterr().err

    def test_solve(self, tmp_path, capsys):
        out = tmp_path / "m.csv"
        assert main(["mpc-solve", "--config", "double_integrator", "--out", str(out)]) == 0
        assert "dual status" in capsys.readouterr().out
        rows = out.read_text().splitlines()
        assert rows[0].split(",")[:2] == ["t", "eta1"]
        assert len(rows) == 1 + 20 and rows[-1].endswith(",")

    def test_solve_receding(self, tmp_path, capsys):
        out = tmp_path / "m.csv"
        code = main(["mpc-solve", "--config", "double_integrator", "--replan-every", "5",
                     "--out", str(out)])
        assert code == 0
        assert "re-planned every 5" in capsys.readouterr().out

    def test_solve_needs_mpc_section(self, tmp_path, capsys):
        assert main(["mpc-solve", "--config", "letter_g_2d", "--out", str(tmp_path / "m")]) == 1


class TestDeterminism:
    @pytest.mark.parametrize("name", ["letter_g_2d", "walk_com"])
    def test_identical_bytes(self, tmp_path, name):
        outs = []
        for k in range(2):
            traj = tmp_path / f"p{k}.csv"
            code = main(["fit", "--config", name, "--out", str(tmp_path / f"m{k}.json"),
                         "--trajectory", str(traj)])
            assert code == 0
            outs.append(traj.read_bytes())
        assert outs[0] == outs[1]
        assert (tmp_path / "m0.json").read_bytes() == (tmp_path / "m1.json").read_bytes()


@pytest.mark.skipif(shutil.which("lckmp") is None, reason="console script not installed")
def test_console_script(tmp_path):
    proc = subprocess.run(["lckmp", "gen", "letter_g_3d", "--out", str(tmp_path / "d.csv")],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run(["lckmp", "predict", str(tmp_path / "none.json"), "--out", "x"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 3 and proc.stderr.startswith("error: [")
