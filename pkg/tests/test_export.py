from pathlib import Path

import numpy as np
import pytest

from advmp import export
from advmp.analysis import LandscapeGrid, landscape_grid
from advmp.attacks import RobustReport
from advmp.geometry import NormKind
from advmp.models import Activation, init_mlp
from advmp.training import TrajectoryRecord

GOLDEN = Path(__file__).parent / "golden"
KINDS = (NormKind.L1, NormKind.L2, NormKind.LINF)


def test_headers_match_golden():
    assert (GOLDEN / "trajectory_header.txt").read_text() == export.TRAJECTORY_HEADER + "\n"
    assert export.SUMMARY_COLUMNS == ("clean", "l1", "l2", "linf", "union", "mix")


def test_summary_golden(tmp_path):
    reports = {
        "final": RobustReport(1.0, (0.5, 0.25, 0.125), 0.125, 0.375, KINDS),
        "best": RobustReport(0.1, (0.2, 0.3), 0.1, 0.25, (NormKind.L2, NormKind.LINF)),
    }
    path = tmp_path / "summary.csv"
    export.write_summary(reports, path)
    assert path.read_bytes() == (GOLDEN / "summary.csv").read_bytes()
    back = export.read_summary(path)
    assert back["best"]["l2"] == 0.2 and np.isnan(back["best"]["l1"])


def test_landscape_golden_row_major(tmp_path):
    axis = np.array([-1.0, 0.0, 1.0])
    t1, t2 = np.meshgrid(axis, axis, indexing="ij")
    grid = LandscapeGrid(axis, axis, (t1 - 1) ** 2 + (t2 - 1) ** 2, "p2")
    path = tmp_path / "l.csv"
    export.write_landscape_csv(grid, path)
    assert path.read_bytes() == (GOLDEN / "landscape_p2_eps0.csv").read_bytes()


@pytest.mark.parametrize("res", [5, 21])
def test_landscape_round_trip_and_row_count(tmp_path, res, rng):
    X, y = rng.standard_normal((6, 2)), rng.standard_normal(6)
    grid = landscape_grid(X, y, "wst", {k: 0.3 for k in KINDS}, 1.7, res)
    path = tmp_path / "l.csv"
    export.write_landscape_csv(grid, path)
    lines = path.read_text().splitlines()
    assert len(lines) - 1 == res * res
    back = export.read_landscape_csv(path)
    for a, b in ((back.values, grid.values), (back.theta1_axis, grid.theta1_axis), (back.theta2_axis, grid.theta2_axis)):
        np.testing.assert_array_equal(a, b)


def test_trajectory_round_trip_bitwise(tmp_path, rng):
    t = TrajectoryRecord(kinds=("l1", "l2", "linf"))
    for e in range(3):
        t.epoch.append(e + 1)
        t.lr.append(rng.random() / 7)
        t.task_losses.append(tuple(rng.random(3)))
        t.aggregate_loss.append(rng.random() * 1e-300)
        t.grad_norms.append(dict(zip(t.kinds, rng.random(3) * 1e10)))
        acc = tuple(rng.random(3))
        t.robust.append(RobustReport(rng.random(), acc, min(acc), float(np.mean(acc)), KINDS))
    path = tmp_path / "t.csv"
    export.write_trajectory_csv(t, path)
    raw = path.read_bytes()
    assert b"\r" not in raw and raw.endswith(b"\n")
    back = export.read_trajectory_csv(path)
    rows = export.trajectory_rows(t)
    names = export.TRAJECTORY_HEADER.split(",")
    for j, name in enumerate(names):
        np.testing.assert_array_equal(back[name], [r[j] for r in rows])


def test_trajectory_missing_columns_are_nan(tmp_path):
    t = TrajectoryRecord(kinds=("l2",))
    t.epoch.append(1)
    t.lr.append(0.1)
    t.task_losses.append((0.5,))
    t.aggregate_loss.append(0.5)
    path = tmp_path / "t.csv"
    export.write_trajectory_csv(t, path)
    back = export.read_trajectory_csv(path)
    assert back["loss_l2"][0] == 0.5 and np.isnan(back["loss_l1"][0]) and np.isnan(back["acc_mix"][0])


def test_scalars_and_params_round_trip(tmp_path, rng):
    vals = {"a": 1 / 3, "b": -0.0, "c": 1e-320}
    export.write_scalars(vals, tmp_path / "s.csv")
    back = export.read_scalars(tmp_path / "s.csv")
    assert back == vals and str(back["b"]) == "-0.0"
    m = init_mlp(3, 4, 2, Activation.SILU, rng)
    export.save_params(m, tmp_path / "p.npz")
    m2 = export.load_params(tmp_path / "p.npz")
    np.testing.assert_array_equal(m2.params, m.params)
    assert (m2.kind, m2.architecture, m2.activation) == (m.kind, m.architecture, m.activation)


def test_bad_header_and_unwritable_path(tmp_path):
    (tmp_path / "x.csv").write_text("nope\n")
    with pytest.raises(ValueError):
        export.read_summary(tmp_path / "x.csv")
    with pytest.raises(OSError) as info:
        export.write_scalars({"a": 1.0}, tmp_path / "x.csv" / "inner.csv")
    assert "inner.csv" in str(info.value)
