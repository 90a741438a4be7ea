import csv

import numpy as np
import pytest

from mccda.errors import DimensionError, ParameterError
from mccda.nn import Layer, ModelParams, init_params, mlp_spec
from mccda.reporting import boundary_grid, export_boundary_grid, load_report, write_report
from mccda.trainer import Report


def sample_report(k=3):
    m = np.eye(k)
    m[0] = [0.5, 0.5] + [0.0] * (k - 2)
    return Report([10, 20], [1.0, 0.5], [0.8, 0.4], [0.2, 0.1], [0.6, 0.7],
                  0.7, 0.95, m.tolist(), a_distance=0.3, eps_ideal=0.05,
                  iterations_to_threshold={"0.85": None}, wall_time=1.25)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestArtifacts:
    def test_byte_identical_rewrite(self, tmp_path):
        rep = sample_report()
        a = write_report(rep, tmp_path / "a", config={"mu": 1.0})
        b = write_report(rep, tmp_path / "b", config={"mu": 1.0})
        for key in a:
            assert a[key].read_bytes() == b[key].read_bytes()

    def test_wall_time_not_persisted(self, tmp_path):
        rep = sample_report()
        write_report(rep, tmp_path)
        other = Report.from_dict({**rep.to_dict(), "wall_time": 99.0})
        write_report(other, tmp_path / "o")
        assert (tmp_path / "report.json").read_bytes() == (tmp_path / "o" / "report.json").read_bytes()

    def test_error_matrix_csv(self, tmp_path):
        paths = write_report(sample_report(4), tmp_path)
        rows = read_rows(paths["error_matrix"])
        assert len(rows) == 5 and rows[0] == ["pred_0", "pred_1", "pred_2", "pred_3"]
        assert [float(v) for v in rows[1]] == [0.5, 0.5, 0.0, 0.0]

    def test_curves_csv(self, tmp_path):
        rows = read_rows(write_report(sample_report(), tmp_path)["curves"])
        assert rows[0][0] == "iteration" and len(rows) == 3

    def test_report_roundtrip(self, tmp_path):
        rep = sample_report()
        write_report(rep, tmp_path, config={"seed": 0})
        cfg, back = load_report(tmp_path)
        assert cfg == {"seed": 0}
        assert back.to_dict() == rep.to_dict()

    def test_no_temp_files_left(self, tmp_path):
        write_report(sample_report(), tmp_path, params=init_params(mlp_spec(2, [3], 2), 0))
        assert sorted(p.name for p in tmp_path.iterdir()) == [
            "curves.csv", "error_matrix.csv", "model.json", "report.json"]


def linear_model(w, b):
    return ModelParams([Layer(np.asarray(w, dtype=float), np.asarray([b], dtype=float), "none")])


class TestBoundary:
    def test_smallest_grid(self):
        grid = boundary_grid(init_params(mlp_spec(2, [4], 2), 0), (0, 1, 0, 1), 2)
        assert grid.shape == (4, 4)
        assert grid[:, :2].tolist() == [[0, 0], [1, 0], [0, 1], [1, 1]]

    def test_constant_predictor(self):
        model = linear_model(np.zeros((2, 3)), [0.0, 5.0, 0.0])
        grid = boundary_grid(model, (-1, 1, -1, 1), 7)
        assert set(grid[:, 2]) == {1.0}

    def test_linear_boundary_within_one_cell(self):
        # class 1 wins where x + 2y > 0.5
        model = linear_model([[0.0, 1.0], [0.0, 2.0]], [0.0, -0.5])
        n, bounds = 41, (-2.0, 2.0, -2.0, 2.0)
        grid = boundary_grid(model, bounds, n)
        cell = 4.0 / (n - 1)
        x, y, pred = grid[:, 0], grid[:, 1], grid[:, 2]
        wrong = pred != (x + 2 * y > 0.5)
        dist = np.abs(x + 2 * y - 0.5) / np.sqrt(5)
        assert np.all(dist[wrong] <= cell)

    def test_confidence_range(self):
        grid = boundary_grid(init_params(mlp_spec(2, [4], 3), 1), (-1, 1, -1, 1), 5)
        assert np.all((grid[:, 3] >= 1 / 3) & (grid[:, 3] <= 1))

    def test_rejects_non_planar(self):
        with pytest.raises(DimensionError):
            boundary_grid(init_params(mlp_spec(3, [4], 2), 0), (0, 1, 0, 1), 4)

    def test_rejects_bad_grid(self):
        params = init_params(mlp_spec(2, [4], 2), 0)
        with pytest.raises(ParameterError):
            boundary_grid(params, (0, 1, 0, 1), 1)
        with pytest.raises(ParameterError):
            boundary_grid(params, (1, 1, 0, 1), 4)

    def test_export(self, tmp_path):
        path = export_boundary_grid(init_params(mlp_spec(2, [4], 2), 0), (0, 1, 0, 1), 3,
                                    tmp_path / "g.csv")
        rows = read_rows(path)
        assert rows[0] == ["x", "y", "pred", "confidence"] and len(rows) == 10
        assert rows[1][2] in {"0", "1"}
