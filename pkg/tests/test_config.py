import numpy as np
import pytest
import yaml

from lckmp.config import (ScenarioConfig, capture_rows, desired_points, resolve_config,
                          run_pipeline, shipped_configs)
from lckmp.exceptions import ValidationError
from lckmp.scenarios import capture_gain

BASE = {
    "name": "t",
    "lambda": 1.0,
    "kernel": {"k_h": 2.0},
    "reference": {"times": [0.0, 0.5, 1.0], "mu": [[0, 0], [1, 1], [0, 0]], "sigma": 0.1},
}


def load(tmp_path, doc, name="c.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc))
    return ScenarioConfig.load(path)


class TestShipped:
    def test_names(self):
        names = shipped_configs()
        for expected in ("letter_g_2d", "letter_g_2d_partial", "letter_g_2d_full",
                         "letter_g_3d_plane1", "letter_g_3d_plane2", "letter_g_3d_plane3",
                         "walk_com", "mpc_tiny", "mpc_one_constraint", "double_integrator"):
            assert expected in names

    @pytest.mark.parametrize("name", ["letter_g_2d", "walk_com", "letter_g_3d_plane1",
                                      "mpc_tiny", "double_integrator"])
    def test_all_load(self, name):
        assert ScenarioConfig.load(name).name

    def test_paper_parameters(self):
        g2 = ScenarioConfig.load("letter_g_2d")
        assert (g2.lam, g2.k_h) == (3.0, 6.0)
        g3 = ScenarioConfig.load("letter_g_3d_plane1")
        assert (g3.lam, g3.k_h) == (5.0, 2.0)
        walk = ScenarioConfig.load("walk_com")
        assert (walk.lam, walk.k_h) == (6.0, 2.0)

    def test_letter_limits(self):
        rows = ScenarioConfig.load("letter_g_2d").rows
        limits = {(tuple(r.g), r.c) for r in rows}
        assert limits == {((1.0, 0.0, 0.0, 0.0), -4.0), ((-1.0, 0.0, 0.0, 0.0), -10.0),
                          ((0.0, 1.0, 0.0, 0.0), -4.0), ((0.0, 0.0, 1.0, 0.0), -32.0),
                          ((0.0, 0.0, 0.0, 1.0), -20.0)}

    def test_plane_sets(self):
        expected = {1: ((1.0, 0.2, -1.1), -1.0), 2: ((0.6, 0.4, -3.0), 2.0),
                    3: ((1.0, 0.6, 2.0), 3.0)}
        for k, (a, d) in expected.items():
            (row,) = ScenarioConfig.load(f"letter_g_3d_plane{k}").rows
            assert row.g == a + (0.0, 0.0, 0.0) and row.c == d
            assert row.kind == "eq" and row.eps == 0.05 and row.t_range is None

    def test_partial_range(self):
        (row,) = ScenarioConfig.load("letter_g_2d_partial").rows[:1]
        assert row.t_range == (0.15, 2.0)

    def test_resolve_unknown(self):
        with pytest.raises(ValidationError, match="bundled"):
            resolve_config("no_such_scenario")


class TestValidation:
    @pytest.mark.parametrize("lam", [0, -1, "x"])
    def test_lambda(self, tmp_path, lam):
        with pytest.raises(ValidationError):
            load(tmp_path, dict(BASE, **{"lambda": lam}))

    def test_lambda_required(self, tmp_path):
        doc = dict(BASE)
        del doc["lambda"]
        with pytest.raises(ValidationError):
            load(tmp_path, doc)

    def test_unknown_key(self, tmp_path):
        with pytest.raises(ValidationError):
            load(tmp_path, dict(BASE, extra=1))

    def test_unknown_generator(self, tmp_path):
        doc = {k: v for k, v in BASE.items() if k != "reference"}
        doc.update(demo_source={"generator": "nope"}, grid={"t_start": 0, "t_end": 1, "n": 5})
        with pytest.raises(ValidationError):
            load(tmp_path, doc)

    def test_demo_source_needs_one_kind(self, tmp_path):
        doc = {k: v for k, v in BASE.items() if k != "reference"}
        doc.update(demo_source={"generator": "walk_com", "file": "x.csv"},
                   grid={"t_start": 0, "t_end": 1, "n": 5})
        with pytest.raises(ValidationError):
            load(tmp_path, doc)

    def test_grid_required(self, tmp_path):
        doc = {k: v for k, v in BASE.items() if k != "reference"}
        doc.update(demo_source={"generator": "walk_com"}, grid={"t_start": 0, "n": 5})
        with pytest.raises(ValidationError):
            load(tmp_path, doc)

    def test_bad_desired_point(self, tmp_path):
        with pytest.raises(ValidationError):
            load(tmp_path, dict(BASE, desired_points=[{"mu": [1, 0]}]))

    def test_seed_override(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text(yaml.safe_dump(dict(BASE, seed=3)))
        assert ScenarioConfig.load(path).seed == 3
        assert ScenarioConfig.load(path, seed=9).seed == 9

    def test_mpc_only(self):
        config = ScenarioConfig.load("double_integrator")
        assert config.lam is None and config.mpc_problem().horizon == 20
        with pytest.raises(ValidationError):
            run_pipeline(config)


class TestCaptureRows:
    def test_rows(self):
        spec = {"periods": [{"t_range": [0.0, 0.7], "x": [-0.1, 0.3], "y": [-0.2, 0.2]}]}
        rows = capture_rows(spec)
        b = capture_gain()
        assert len(rows) == 4
        np.testing.assert_allclose(rows[0].g, [1, 0, b, 0])
        np.testing.assert_allclose(rows[1].g, [-1, 0, -b, 0])
        assert (rows[0].c, rows[1].c) == (-0.1, -0.3)
        np.testing.assert_allclose(rows[2].g, [0, 1, 0, b])
        assert rows[3].t_range == (0.0, 0.7)

    def test_walk_periods(self):
        rows = ScenarioConfig.load("walk_com").rows
        assert len(rows) == 12
        ranges = sorted({r.t_range for r in rows})
        assert len(ranges) == 3


class TestDesiredPoints:
    def test_sigma_forms(self, tmp_path):
        config = load(tmp_path, dict(BASE, desired_points=[
            {"t": 0.2, "mu": [1, 2, 3, 4], "sigma": 1e-3},
            {"t": 0.4, "mu": [1, 2, 3, 4], "sigma": [1, 2, 3, 4]},
            {"t": 0.6, "mu": [1, 2, 3, 4], "sigma": np.eye(4).tolist()},
        ]))
        points = desired_points(config, None, 2)
        np.testing.assert_array_equal(points[0].sigma_bar, 1e-3 * np.eye(4))
        np.testing.assert_array_equal(points[1].sigma_bar, np.diag([1, 2, 3, 4]))
        np.testing.assert_array_equal(points[2].sigma_bar, np.eye(4))

    def test_position_only_needs_mixture(self, tmp_path):
        config = load(tmp_path, dict(BASE, desired_points=[{"t": 0.2, "mu": [1, 2]}]))
        with pytest.raises(ValidationError):
            desired_points(config, None, 2)

    def test_wrong_length(self, tmp_path):
        config = load(tmp_path, dict(BASE, desired_points=[{"t": 0.2, "mu": [1, 2, 3]}]))
        with pytest.raises(ValidationError):
            desired_points(config, None, 2)


class TestPipeline:
    def test_inline_reference(self, tmp_path):
        doc = dict(BASE, constraints=[{"g": [-1, 0], "c": -0.8}])
        res = run_pipeline(load(tmp_path, doc))
        assert res.demos is None and res.gmm is None
        assert res.model.dual_status == "optimal"
        assert np.nanmin(-res.model.constraints.c) == pytest.approx(0.8)

    def test_unconstrained_drops_rows(self, tmp_path):
        doc = dict(BASE, constraints=[{"g": [-1, 0], "c": -0.8}])
        res = run_pipeline(load(tmp_path, doc), constrained=False)
        assert res.constraints.n_constraints == 0

    def test_demo_file_relative_to_config(self, tmp_path):
        from lckmp.scenarios import gen_scenario
        from lckmp.trajdata import write_demos
        write_demos(gen_scenario("walk_com", seed=0), tmp_path / "demos.csv")
        doc = {"lambda": 6.0, "kernel": {"k_h": 2.0},
               "demo_source": {"file": "demos.csv"}, "gmm": {"components": 3},
               "grid": {"t_start": 0.01, "t_end": 2.1, "n": 30}}
        res = run_pipeline(load(tmp_path, doc))
        assert len(res.reference) == 30 and res.demos.n_demos == 4
