"""CSV and text artifacts: UTF-8, LF line endings, floats as ``%.17g``."""
import math

import numpy as np

from .analysis import LandscapeGrid
from .models import ToyModel

TRAJECTORY_HEADER = ("epoch,lr,loss_l1,loss_l2,loss_linf,loss_agg,gnorm_l1,gnorm_l2,gnorm_linf,"
                     "acc_l1,acc_l2,acc_linf,acc_union,acc_mix,acc_clean")
LANDSCAPE_HEADER = "theta1,theta2,value"
SUMMARY_COLUMNS = ("clean", "l1", "l2", "linf", "union", "mix")
SUMMARY_HEADER = "model," + ",".join(SUMMARY_COLUMNS)
_KINDS = ("l1", "l2", "linf")


def fmt(x):
    return "%.17g" % x


def _write(path, lines):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("".join(line + "\n" for line in lines))


def _read(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return fh.read().split("\n")[:-1]


def trajectory_rows(traj):
    """One tuple per epoch in the column order of :data:`TRAJECTORY_HEADER`."""
    nan = math.nan
    rows = []
    for e in range(len(traj)):
        by_kind = dict(zip(traj.kinds, traj.task_losses[e])) if traj.task_losses else {}
        gn = traj.grad_norms[e] if traj.grad_norms else {}
        rep = traj.robust[e] if traj.robust else None
        acc = dict(zip((k.value for k in rep.kinds), rep.per_attack_acc)) if rep else {}
        rows.append((
            traj.epoch[e], traj.lr[e],
            *(by_kind.get(k, nan) for k in _KINDS), traj.aggregate_loss[e],
            *(gn.get(k, nan) for k in _KINDS),
            *(acc.get(k, nan) for k in _KINDS),
            rep.union_acc if rep else nan, rep.mix_acc if rep else nan, rep.clean_acc if rep else nan,
        ))
    return rows


def write_trajectory_csv(traj, path):
    _write(path, [TRAJECTORY_HEADER] + [
        ",".join([str(int(r[0]))] + [fmt(v) for v in r[1:]]) for r in trajectory_rows(traj)])


def read_trajectory_csv(path):
    """Returns a dict of column name -> array (``epoch`` as int64)."""
    lines = _read(path)
    if not lines or lines[0] != TRAJECTORY_HEADER:
        raise ValueError(f"{path}: unexpected trajectory header")
    names = TRAJECTORY_HEADER.split(",")
    cols = list(zip(*[line.split(",") for line in lines[1:]])) or [()] * len(names)
    out = {"epoch": np.array([int(v) for v in cols[0]], dtype=np.int64)}
    for name, col in zip(names[1:], cols[1:]):
        out[name] = np.array([float(v) for v in col], dtype=np.float64)
    return out


def write_landscape_csv(grid, path):
    lines = [LANDSCAPE_HEADER]
    for i, t1 in enumerate(grid.theta1_axis):
        s1 = fmt(t1)
        lines.extend(f"{s1},{fmt(t2)},{fmt(v)}" for t2, v in zip(grid.theta2_axis, grid.values[i]))
    _write(path, lines)


def read_landscape_csv(path, surrogate=""):
    lines = _read(path)
    if not lines or lines[0] != LANDSCAPE_HEADER:
        raise ValueError(f"{path}: unexpected landscape header")
    data = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    t1 = np.unique(data[:, 0])
    t2 = np.unique(data[:, 1])
    return LandscapeGrid(t1, t2, data[:, 2].reshape(t1.size, t2.size), surrogate)


def write_summary(reports, path):
    """``reports`` maps a model label (final, swa, best) to a RobustReport."""
    lines = [SUMMARY_HEADER]
    for label, rep in reports.items():
        row = rep.as_row()
        lines.append(",".join([label] + [fmt(row[c]) for c in SUMMARY_COLUMNS]))
    _write(path, lines)


def read_summary(path):
    lines = _read(path)
    if not lines or lines[0] != SUMMARY_HEADER:
        raise ValueError(f"{path}: unexpected summary header")
    out = {}
    for line in lines[1:]:
        label, *vals = line.split(",")
        out[label] = dict(zip(SUMMARY_COLUMNS, (float(v) for v in vals)))
    return out


def write_scalars(values, path):
    """Flat ``key,value`` file for risk, stability and smoothness scalars."""
    _write(path, ["key,value"] + [f"{k},{fmt(v)}" for k, v in values.items()])


def read_scalars(path):
    lines = _read(path)
    if not lines or lines[0] != "key,value":
        raise ValueError(f"{path}: unexpected scalar header")
    return {k: float(v) for k, v in (line.split(",", 1) for line in lines[1:])}


def save_params(model, path):
    np.savez(path, params=model.params, kind=model.kind.value,
             architecture=np.array(model.architecture), activation=model.activation.value)


def load_params(path):
    with np.load(path) as z:
        return ToyModel(str(z["kind"]), z["params"], tuple(int(a) for a in z["architecture"]),
                        str(z["activation"]))
