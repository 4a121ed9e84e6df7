import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shelfreduce.errors import IndexOutOfRange, UnboundedVariable, UnorderedInstance
from shelfreduce.formulation import (BINARY, LinearConstraint, big_m_value, build_minlp, check_assignment,
                                     integer_vars, objective_value, one_hot_states, scene_assignment, with_big_m)
from shelfreduce.scene import Book, BookPose, SamplerConfig, ShelfInstance, sample_instance


def test_big_m_examples():
    assert big_m_value(LinearConstraint("c", (("x", 1.0),), "<=", 0.0), {"x": (-1.0, 2.0)}) == 2.0
    c = LinearConstraint("c", (("x", 1.0), ("y", 1.0)), "<=", 1.0)
    assert big_m_value(c, {"x": (0.0, 1.0), "y": (0.0, 1.0)}) == 1.0
    with pytest.raises(UnboundedVariable):
        big_m_value(c, {"x": (0.0, math.inf), "y": (0.0, 1.0)})


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-3, 0), st.floats(0, 3)), min_size=1, max_size=4),
       st.floats(-3, 3), st.data())
def test_gated_constraint_vacuous_when_off(rows, rhs, data):
    terms = tuple((f"v{k}", c) for k, (c, _, _) in enumerate(rows))
    bounds = {f"v{k}": (lo, hi) for k, (_, lo, hi) in enumerate(rows)}
    from shelfreduce.formulation import Gate
    con = with_big_m(LinearConstraint("g", terms, "=", rhs, Gate.all_on("z")), bounds)
    point = {n: data.draw(st.floats(lo, hi)) for n, (lo, hi) in bounds.items()}
    point["z"] = 0.0
    assert con.violation(point) <= 1e-9


def test_one_hot_states():
    spec = build_minlp(sample_instance(1))
    refs = one_hot_states(spec, 0)
    assert len(refs) == 5 and len({r.name for r in refs}) == 5
    assert all(r.kind == BINARY for r in refs)
    names = {r.name for r in refs}
    rows = [c for c in spec.linear_constraints if c.sense == "=" and {n for n, _ in c.terms} == names]
    assert rows and rows[0].rhs == 1.0 and all(c == 1.0 for _, c in rows[0].terms)
    with pytest.raises(IndexOutOfRange):
        one_hot_states(spec, 7)


def test_state_binary_count_four_books():
    spec = build_minlp(sample_instance(2))
    states = [n for n in integer_vars(spec) if n.startswith("z[")]
    assert len(states) == 20
    fam = spec.family_counts()
    assert fam["C"] == 4
    for f in ("E", "F", "K1", "L1"):
        assert fam.get(f, 0) > 0


def test_single_book_has_no_planes():
    inst = ShelfInstance(360.0, 220.0, (), Book(30, 150), BookPose.from_angle(Book(30, 150), 50, 75, 0.0))
    spec = build_minlp(inst)
    assert spec.meta["planes"] == [] or len(spec.meta["planes"]) == 0
    assert not any(v.name.startswith("ax[") for v in spec.variables)


def test_unordered_instance_rejected():
    inst = sample_instance(4)
    rev = ShelfInstance(inst.shelf_width, inst.shelf_height, tuple(reversed(inst.stored_books)), inst.insert_book,
                        inst.insert_pose, inst.seed)
    with pytest.raises(UnorderedInstance):
        build_minlp(rev)


def test_every_bilinear_factor_bounded():
    spec = build_minlp(sample_instance(9))
    for w, u, v in spec.triples():
        for name in (u, v):
            lo, hi = spec.var(name).bounds
            assert math.isfinite(lo) and math.isfinite(hi)


def test_trivial_solution_feasible_and_zero_objective():
    for seed in range(10):
        inst = sample_instance(seed)
        spec = build_minlp(inst)
        vals = scene_assignment(spec, inst.trivial_solution())
        assert vals is not None
        assert check_assignment(spec, vals) == []
        assert abs(objective_value(spec, vals)) < 1e-9


def test_displacement_raises_objective():
    inst = sample_instance(0, SamplerConfig(n_books=3))
    spec = build_minlp(inst)
    vals = scene_assignment(spec, inst.trivial_solution())
    vals = dict(vals)
    vals["x[0]"] += 1.0
    vals["dx[0]"] = 1.0
    assert objective_value(spec, vals) == pytest.approx(1.0)


def test_two_book_hand_count():
    # one stored + insert: one pair, so one plane, one unit-norm row (F), 4+4 vertex rows in E per direction
    inst = sample_instance(0, SamplerConfig(n_books=2))
    spec = build_minlp(inst)
    fam = spec.family_counts()
    assert len(spec.meta["planes"]) == 1
    assert fam["C"] == 2
    assert fam["F"] == 1
    n_states = sum(1 for v in spec.binaries if v.name.startswith("z["))
    assert n_states == 10
    assert sum(1 for v in spec.binaries if v.name.startswith("slot[")) == 2
