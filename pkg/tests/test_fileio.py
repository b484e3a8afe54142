import csv
import json

import numpy as np
import pytest

from lckmp import fileio
from lckmp.exceptions import DataFileError, ValidationError
from lckmp.gmm import RefTrajectory, fit_em
from lckmp.kernel import KernelSpec, RandomFeatureMap
from lckmp.model import ConstraintRow, ConstraintSet, predict, train
from lckmp.mpc import MpcProblem
from lckmp.scenarios import letter_g_2d


def small_model(rows=True):
    t = np.linspace(0.0, 1.0, 8)
    mu = np.column_stack([np.sin(3 * t), 3 * np.cos(3 * t)])
    ref = RefTrajectory(t, mu, np.broadcast_to(0.05 * np.eye(2), (8, 2, 2)))
    rows = (ConstraintRow([1.0, 0.0], -0.2, (0.3, 1.0)),
            ConstraintRow([1.0, 0.1], 0.5, kind="eq", eps=0.7)) if rows else ()
    cons = ConstraintSet.from_rows(t, rows, 1)
    return train(KernelSpec(4.0, 1e-4, 1), 0.7, ref, cons, rows=rows)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestModelFiles:
    def test_round_trip(self, tmp_path):
        model = small_model()
        assert model.constraints.n_active
        path = tmp_path / "m.json"
        fileio.save_model(model, path)
        back = fileio.load_model(path)
        np.testing.assert_array_equal(back.alpha, model.alpha)
        np.testing.assert_array_equal(back.ref.sigma, model.ref.sigma)
        assert back.rows == model.rows
        t = np.linspace(-0.2, 1.2, 57)
        np.testing.assert_allclose(predict(back, t), predict(model, t), rtol=0, atol=1e-12)

    def test_round_trip_without_constraints(self, tmp_path):
        model = small_model(rows=False)
        path = tmp_path / "m.json"
        fileio.save_model(model, path)
        back = fileio.load_model(path)
        assert back.constraints.g.shape == (8, 0, 2)
        np.testing.assert_array_equal(predict(back, 0.4), predict(model, 0.4))

    def test_identical_bytes(self, tmp_path):
        model = small_model()
        fileio.save_model(model, tmp_path / "a.json")
        fileio.save_model(fileio.load_model(tmp_path / "a.json"), tmp_path / "b.json")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_custom_kernel_rejected(self, tmp_path):
        fmap = RandomFeatureMap(10, 2.0, 0)
        t = np.linspace(0, 1, 3)
        ref = RefTrajectory(t, np.zeros((3, 2)), np.broadcast_to(np.eye(2), (3, 2, 2)))
        model = train(fmap.spec(1e-2, 1), 1.0, ref)
        with pytest.raises(ValidationError):
            fileio.save_model(model, tmp_path / "m.json")

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataFileError) as info:
            fileio.load_model(tmp_path / "none.json")
        assert info.value.exit_code == 3

    def test_unwritable(self, tmp_path):
        with pytest.raises(DataFileError):
            fileio.save_model(small_model(), tmp_path / "no" / "dir" / "m.json")

    @pytest.mark.parametrize("text", ["not json", '{"format": "other", "version": 1}',
                                      '{"format": "lckmp-model", "version": 99}',
                                      '{"format": "lckmp-model", "version": 1}'])
    def test_bad_content(self, tmp_path, text):
        path = tmp_path / "m.json"
        path.write_text(text)
        with pytest.raises(ValidationError):
            fileio.load_model(path)

    def test_non_finite_rejected_on_load(self, tmp_path):
        path = tmp_path / "m.json"
        fileio.save_model(small_model(), path)
        doc = json.loads(path.read_text())
        doc["reference"]["mu"][0][0] = "nan"
        path.write_text(json.dumps(doc))
        with pytest.raises(ValidationError):
            fileio.load_model(path)


class TestConstraintRowSchema:
    def test_round_trip(self):
        row = ConstraintRow([1.0, 0.0, 0.5, 0.0], -4.0, (0.15, 2.0), "eq", 0.05)
        assert fileio.row_from_dict(fileio.row_to_dict(row)) == row

    def test_all_range(self):
        row = fileio.row_from_dict({"g": [1, 0], "c": 1, "t_range": "all"})
        assert row.t_range is None and row.kind == "ineq"

    @pytest.mark.parametrize("doc", [
        [1, 2],
        {"g": [1, 0]},
        {"g": [1, 0], "c": 1, "t_range": [0.1]},
        {"g": [1, 0], "c": 1, "weight": 2},
    ])
    def test_invalid(self, doc):
        with pytest.raises(ValidationError):
            fileio.row_from_dict(doc)


class TestGmmFiles:
    def test_round_trip(self, tmp_path):
        model = fit_em(letter_g_2d(seed=0, n_demos=2, n_points=60), c=3, seed=0)
        path = tmp_path / "g.json"
        fileio.save_gmm(model, path)
        back = fileio.load_gmm(path)
        np.testing.assert_array_equal(back.priors, model.priors)
        np.testing.assert_array_equal(back.means, model.means)
        np.testing.assert_array_equal(back.covariances, model.covariances)

    def test_component_count_checked(self, tmp_path):
        model = fit_em(letter_g_2d(seed=0, n_demos=2, n_points=60), c=2, seed=0)
        path = tmp_path / "g.json"
        fileio.save_gmm(model, path)
        doc = json.loads(path.read_text())
        doc["C"] = 3
        path.write_text(json.dumps(doc))
        with pytest.raises(ValidationError):
            fileio.load_gmm(path)


class TestCsv:
    def test_reference_round_trip(self, tmp_path):
        model = small_model()
        fileio.write_reference_csv(model.ref, tmp_path / "r.csv")
        back = fileio.read_reference_csv(tmp_path / "r.csv")
        np.testing.assert_array_equal(back.times, model.ref.times)
        np.testing.assert_array_equal(back.mu, model.ref.mu)
        np.testing.assert_array_equal(back.sigma, model.ref.sigma)
        assert read_rows(tmp_path / "r.csv")[0][:4] == ["t", "mu1", "mu2", "s1"]

    def test_trajectory(self, tmp_path):
        t = np.array([0.0, 0.1])
        eta = np.array([[1.0, 2.0, 3.0, 4.0], [5.0, 6.0, 7.0, 1.0 / 3.0]])
        fileio.write_trajectory_csv(t, eta, tmp_path / "p.csv", 2)
        rows = read_rows(tmp_path / "p.csv")
        assert rows[0] == ["t", "x1", "x2", "xd1", "xd2"]
        assert float(rows[2][4]) == 1.0 / 3.0

    def test_trajectory_header_only(self, tmp_path):
        fileio.write_trajectory_csv(np.zeros(0), np.zeros((0, 2)), tmp_path / "p.csv", 1)
        assert (tmp_path / "p.csv").read_text() == "t,x1,xd1\n"

    def test_mpc_last_row_has_no_control(self, tmp_path):
        eta = np.arange(6.0).reshape(3, 2)
        u = np.array([[0.5], [0.25]])
        fileio.write_mpc_csv([0.0, 0.1, 0.2], eta, u, tmp_path / "m.csv")
        rows = read_rows(tmp_path / "m.csv")
        assert rows[0] == ["t", "eta1", "eta2", "u1"]
        assert rows[1][-1] == "0.5" and rows[3][-1] == ""

    def test_malformed_reference(self, tmp_path):
        (tmp_path / "r.csv").write_text("t,mu1\n0,1\n")
        with pytest.raises(ValidationError):
            fileio.read_reference_csv(tmp_path / "r.csv")


class TestMpcProblemFiles:
    DOC = {
        "system": {"a": [[1.0, 0.1], [0.0, 1.0]], "b": [[0.005], [0.1]]},
        "horizon": 5,
        "eta1": [0.0, 0.0],
        "eta_hat": [1.0, 0.0],
        "q": [[1.0, 0.0], [0.0, 0.1]],
        "r": 0.01,
        "bounds": {"u_min": [-1.0], "u_max": [1.0], "eta_max": [None, 0.5]},
    }

    def test_from_dict(self):
        p = fileio.mpc_problem_from_dict(self.DOC)
        assert isinstance(p, MpcProblem) and p.horizon == 5
        np.testing.assert_array_equal(p.eta_max, [np.inf, 0.5])
        np.testing.assert_array_equal(p.eta_min, [-np.inf, -np.inf])

    def test_missing_field(self):
        doc = dict(self.DOC)
        del doc["horizon"]
        with pytest.raises(ValidationError):
            fileio.mpc_problem_from_dict(doc)

    def test_unknown_bound(self):
        doc = dict(self.DOC, bounds={"x_max": [1.0]})
        with pytest.raises(ValidationError):
            fileio.mpc_problem_from_dict(doc)

    def test_yaml(self, tmp_path):
        (tmp_path / "bad.yaml").write_text("a: [1, 2\n")
        with pytest.raises(ValidationError):
            fileio.load_yaml(tmp_path / "bad.yaml")
        (tmp_path / "list.yaml").write_text("- 1\n- 2\n")
        with pytest.raises(ValidationError):
            fileio.load_yaml(tmp_path / "list.yaml")
