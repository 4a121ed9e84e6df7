import json

import numpy as np
import pytest

from shelfreduce import io
from shelfreduce.errors import SchemaMismatch
from shelfreduce.learning import train_forest, train_strategy_net
from shelfreduce.scene import sample_instance


def test_instance_round_trip(tmp_path):
    inst = sample_instance(21)
    io.write_jsonl(tmp_path / "i.jsonl", [io.instance_to_dict(inst)])
    back = io.instance_from_dict(io.read_jsonl(tmp_path / "i.jsonl")[0])
    assert back.shelf_width == inst.shelf_width
    for (b0, p0), (b1, p1) in zip(inst.stored_books, back.stored_books):
        assert b0 == b1
        assert np.allclose(p0.polygon(), p1.polygon())
    assert np.allclose(back.insert_pose.polygon(), inst.insert_pose.polygon())


def test_version_mismatch(tmp_path):
    d = io.instance_to_dict(sample_instance(1))
    d["version"] = 99
    with pytest.raises(SchemaMismatch, match="version"):
        io.instance_from_dict(d)


def test_missing_field_names_it():
    d = io.instance_to_dict(sample_instance(1))
    del d["stored"]
    with pytest.raises(SchemaMismatch, match="stored"):
        io.instance_from_dict(d)


def test_bad_json_names_file_and_line(tmp_path):
    p = tmp_path / "x.jsonl"
    p.write_text('{"version": 1}\n{oops\n')
    with pytest.raises(SchemaMismatch, match="x.jsonl:2"):
        io.read_jsonl(p)


def test_models_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(40, 3))
    y = (X[:, 0] > 0).astype(int)
    f = train_forest(X, y, 5, rng_seed=1)
    io.write_json(tmp_path / "f.json", io.forest_to_dict(f))
    f2 = io.forest_from_dict(json.loads((tmp_path / "f.json").read_text()))
    assert np.array_equal(f.votes(X), f2.votes(X))
    n = train_strategy_net(X, y, 2, hidden=4, epochs=2, rng_seed=0)
    io.write_json(tmp_path / "n.json", io.net_to_dict(n))
    n2 = io.net_from_dict(io.read_json(tmp_path / "n.json"))
    assert np.allclose(n.scores(X), n2.scores(X))


def test_metrics_csv(tmp_path):
    row = dict(zip(io.METRIC_COLUMNS, [0, 10, 0.5, 12, 90.0, 0.1, 0.2, 0.3]))
    io.write_metrics_csv(tmp_path / "m.csv", [row])
    back = io.read_metrics_csv(tmp_path / "m.csv")
    assert tuple(back[0]) == io.METRIC_COLUMNS
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(SchemaMismatch, match="bad.csv"):
        io.read_metrics_csv(tmp_path / "bad.csv")
