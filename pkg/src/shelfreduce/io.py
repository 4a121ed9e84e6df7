"""Versioned JSON / JSON-lines files for instances, records and models."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import SchemaMismatch
from .learning.forest import ForestModel, Tree
from .learning.net import StrategyNet
from .scene import Book, BookPose, ShelfInstance

FORMAT_VERSION = 1
METRIC_COLUMNS = ("cluster", "n_total", "unique_frac", "ints", "s_pct", "det", "avg_s", "max_s")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, default=_jsonable, sort_keys=True)


# instances


def instance_to_dict(inst: ShelfInstance) -> dict:
    d = {
        "kind": "instance",
        "version": FORMAT_VERSION,
        "shelf": [inst.shelf_width, inst.shelf_height],
        "stored": [[b.width, b.height, p.x, p.y, p.theta] for b, p in inst.stored_books],
        "insert": [inst.insert_book.width, inst.insert_book.height],
        "seed": inst.seed,
    }
    if inst.insert_pose is not None:
        p = inst.insert_pose
        d["insert_pose"] = [p.x, p.y, p.theta]
    return d


def _field(d: dict, key: str, where: str):
    if key not in d:
        raise SchemaMismatch(f"{where}: missing field '{key}'")
    return d[key]


def instance_from_dict(d: dict, where: str = "instance") -> ShelfInstance:
    check_version(d, where)
    try:
        W, H = map(float, _field(d, "shelf", where))
        stored = []
        for row in _field(d, "stored", where):
            w, h, x, y, th = map(float, row)
            b = Book(w, h)
            stored.append((b, BookPose.from_angle(b, x, y, th)))
        iw, ih = map(float, _field(d, "insert", where))
        book = Book(iw, ih)
        pose = None
        if d.get("insert_pose") is not None:
            x, y, th = map(float, d["insert_pose"])
            pose = BookPose.from_angle(book, x, y, th)
    except (TypeError, ValueError) as exc:
        raise SchemaMismatch(f"{where}: malformed instance ({exc})") from None
    return ShelfInstance(W, H, tuple(stored), book, pose, d.get("seed"))


def check_version(d: dict, where: str) -> None:
    if not isinstance(d, dict):
        raise SchemaMismatch(f"{where}: expected an object")
    v = d.get("version")
    if v != FORMAT_VERSION:
        raise SchemaMismatch(f"{where}: unsupported version {v!r} (expected {FORMAT_VERSION})")


def read_json(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise SchemaMismatch(f"{path}: file not found") from None
    except json.JSONDecodeError as exc:
        raise SchemaMismatch(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None


def write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(dumps(obj) + "\n")


def write_jsonl(path, rows) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for r in rows:
            fh.write(dumps({"version": FORMAT_VERSION, **r}) + "\n")


def read_jsonl(path) -> list[dict]:
    path = Path(path)
    out = []
    try:
        lines = path.read_text().splitlines()
    except FileNotFoundError:
        raise SchemaMismatch(f"{path}: file not found") from None
    for k, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaMismatch(f"{path}:{k}: invalid JSON ({exc.msg})") from None
        check_version(row, f"{path}:{k}")
        out.append(row)
    return out


# models


def forest_to_dict(m: ForestModel) -> dict:
    return {
        "kind": "forest", "version": FORMAT_VERSION, "classes": m.classes, "train_accuracy": m.train_accuracy,
        "trees": [{"feature": t.feature, "threshold": t.threshold, "left": t.left, "right": t.right,
                   "counts": t.counts} for t in m.trees],
    }


def forest_from_dict(d: dict, where: str = "forest") -> ForestModel:
    check_version(d, where)
    trees = [Tree(np.asarray(t["feature"], int), np.asarray(t["threshold"], float), np.asarray(t["left"], int),
                  np.asarray(t["right"], int), np.asarray(t["counts"], int)) for t in _field(d, "trees", where)]
    return ForestModel(trees, np.asarray(_field(d, "classes", where)), float(d.get("train_accuracy", np.nan)))


def net_to_dict(m: StrategyNet) -> dict:
    return {"kind": "net", "version": FORMAT_VERSION, "W1": m.W1, "b1": m.b1, "W2": m.W2, "b2": m.b2,
            "mu": m.mu, "sd": m.sd, "train_accuracy": m.train_accuracy}


def net_from_dict(d: dict, where: str = "net") -> StrategyNet:
    check_version(d, where)
    arr = {k: np.asarray(_field(d, k, where), float) for k in ("W1", "b1", "W2", "b2", "mu", "sd")}
    return StrategyNet(**arr, train_accuracy=float(d.get("train_accuracy", np.nan)))


# metrics


def write_metrics_csv(path, rows) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in METRIC_COLUMNS})


def read_metrics_csv(path) -> list[dict]:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != METRIC_COLUMNS:
                raise SchemaMismatch(f"{path}: columns {reader.fieldnames} differ from {list(METRIC_COLUMNS)}")
            return list(reader)
    except FileNotFoundError:
        raise SchemaMismatch(f"{path}: file not found") from None


# solutions and model dumps


def solution_to_dict(sol, objective: float | None = None, mode: str | None = None) -> dict:
    return {
        "kind": "solution", "version": FORMAT_VERSION,
        "poses": [[p.x, p.y, p.theta] for p in sol.poses],
        "state_labels": list(sol.state_labels),
        "objective": objective, "mode": mode,
    }


def solution_from_dict(d: dict, books, where: str = "solution"):
    from .scene import SceneSolution
    check_version(d, where)
    poses = tuple(BookPose.from_angle(b, *map(float, p)) for b, p in zip(books, _field(d, "poses", where)))
    return SceneSolution(poses, tuple(_field(d, "state_labels", where)))


def spec_rows(spec) -> list[dict]:
    """One record per variable, constraint and objective term of a model, for inspection."""
    rows = [{"kind": "variable", "name": v.name, "type": v.kind, "lo": v.lo, "hi": v.hi} for v in spec.variables]
    for c in spec.linear_constraints:
        rows.append({"kind": "linear", "name": c.name, "family": c.family, "terms": list(c.terms), "sense": c.sense,
                     "rhs": c.rhs, "gate": None if c.gate is None else {"terms": list(c.gate.terms),
                                                                          "const": c.gate.const},
                     "big_m": c.big_m})
    for b in spec.bilinear_constraints:
        rows.append({"kind": "bilinear", "name": b.name, "family": b.family, "triples": list(b.triples),
                     "linear_part": {"terms": list(b.linear_part.terms), "sense": b.linear_part.sense,
                                     "rhs": b.linear_part.rhs}})
    rows.append({"kind": "objective", "terms": list(spec.objective)})
    return rows
