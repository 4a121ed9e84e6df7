import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shelfreduce.envelope import (Axis, ClusterGrid, GridConfig, INTERVAL, admits, assign_cluster_grid,
                                  binary_count, cluster_from_dict, cluster_to_dict, code_length, code_of,
                                  decode_reduced, encode_log2n, full_cells, full_codes, make_grid, mccormick,
                                  recover_full_integers, reduced_code_map, relax_to_micp)
from shelfreduce.errors import EmptyList, InfiniteBounds, InvalidCode, OutOfRange, UncoveredVariable
from shelfreduce.formulation import (BilinearConstraint, LinearConstraint, ProblemSpec, VariableRef, build_minlp)
from shelfreduce.scene import SamplerConfig, sample_instance
from shelfreduce.solver import branch_and_bound, compile_problem


def _bounds_at(rows, u, v):
    """(max lower bound, min upper bound) on w implied by the rows at (u, v)."""
    lower, upper = -math.inf, math.inf
    for cw, cu, cv, rhs in rows:
        t = (rhs - cu * u - cv * v) / cw
        if cw < 0:
            lower = max(lower, t)
        else:
            upper = min(upper, t)
    return lower, upper


def test_mccormick_unit_box():
    rows = mccormick((0, 1), (0, 1))
    # w >= 0, w >= u + v - 1, w <= u, w <= v, written as cw*w + cu*u + cv*v <= rhs
    expect = {(-1.0, 0.0, 0.0, 0.0), (-1.0, 1.0, 1.0, 1.0), (1.0, 0.0, -1.0, 0.0), (1.0, -1.0, 0.0, 0.0)}
    assert {tuple(float(t) + 0.0 for t in r) for r in rows} == expect


def test_mccormick_degenerate_box():
    c = 1.7
    rows = mccormick((c, c), (-2, 3))
    for v in np.linspace(-2, 3, 11):
        lo, hi = _bounds_at(rows, c, v)
        assert lo == pytest.approx(c * v) and hi == pytest.approx(c * v)


def test_mccormick_infinite():
    with pytest.raises(InfiniteBounds):
        mccormick((0, math.inf), (0, 1))


@settings(max_examples=40, deadline=None)
@given(st.floats(-10, 10), st.floats(0, 5), st.floats(-10, 10), st.floats(0, 5))
def test_mccormick_sound(ul, du, vl, dv):
    rows = mccormick((ul, ul + du), (vl, vl + dv))
    rng = np.random.default_rng(0)
    for u, v in zip(rng.uniform(ul, ul + du, 50), rng.uniform(vl, vl + dv, 50)):
        lo, hi = _bounds_at(rows, u, v)
        assert lo <= u * v + 1e-9 and u * v <= hi + 1e-9


@pytest.mark.parametrize("n, m", [(27, 5), (6, 3), (1, 0), (2, 1), (64, 6), (65, 7)])
def test_code_length(n, m):
    assert code_length(n) == m
    boxes = [([k], [k + 1]) for k in range(n)]
    assert encode_log2n(boxes).m == m


def test_empty_encoding():
    with pytest.raises(EmptyList):
        encode_log2n([])


def test_single_cell_encoding_has_no_binaries():
    enc = encode_log2n([([0.0, 0.0], [1.0, 2.0])])
    variables, rows, z, lam = enc.build(["x", "y"], "g")
    assert z == []
    assert {r.name.split("|")[1].split(",")[0].rstrip("]") for r in rows} == {"a", "b"}


def test_codes_distinct_and_unused_cut():
    enc = encode_log2n([([k], [k + 1]) for k in range(5)])
    assert len(set(enc.codes)) == 5
    _, rows, _, _ = enc.build(["x"], "g")
    assert sum(r.family == "log2n_cut" for r in rows) == 3


def _toy_bilinear_spec():
    vs = (VariableRef("u", lo=0.0, hi=2.0), VariableRef("v", lo=-1.0, hi=1.0), VariableRef("w", lo=-2.0, hi=2.0))
    lin = LinearConstraint("prod", (("w", 1.0),), "<=", 0.5)
    return ProblemSpec(vs, (), (BilinearConstraint("b", (("w", "u", "v"),), lin),), (("w", -1.0),))


def test_uncovered_variable():
    spec = _toy_bilinear_spec()
    spec.meta.update({"n_books": 0})
    with pytest.raises(UncoveredVariable):
        from shelfreduce.envelope import Grid, check_coverage
        check_coverage(spec, Grid([Axis("u", ("u",), INTERVAL, (0.0, 1.0, 2.0))]))


def test_no_bilinear_is_noop():
    vs = (VariableRef("x", lo=0.0, hi=1.0),)
    spec = ProblemSpec(vs, (LinearConstraint("c", (("x", 1.0),), "<=", 0.5),), (), (("x", -1.0),))
    assert relax_to_micp(spec, None) is spec


def test_four_book_dimension_and_binaries():
    spec = build_minlp(sample_instance(0))
    grid = make_grid(spec, GridConfig())
    assert grid.dimension == 48
    assert binary_count(relax_to_micp(spec, grid)) == 130


def test_theta_axis_intervals():
    spec = build_minlp(sample_instance(0))
    grid = make_grid(spec, GridConfig())
    assert grid.axis("theta[0]").n_cells == 8


def test_coarser_theta_means_fewer_binaries():
    spec = build_minlp(sample_instance(0, SamplerConfig(n_books=3)))
    fine = binary_count(relax_to_micp(spec, make_grid(spec, GridConfig(theta_step=math.pi / 8))))
    coarse = binary_count(relax_to_micp(spec, make_grid(spec, GridConfig(theta_step=math.pi / 4))))
    assert coarse < fine


def test_relaxation_admits_feasible_minlp_point():
    # a point of the bilinear model, plugged in with its own cells, satisfies the relaxation
    from shelfreduce.formulation import scene_assignment
    from shelfreduce.solver import LPSession
    inst = sample_instance(3, SamplerConfig(n_books=3))
    spec = build_minlp(inst)
    grid = make_grid(spec, GridConfig.desk())
    micp = relax_to_micp(spec, grid)
    vals = scene_assignment(spec, inst.trivial_solution())
    cells = grid.locate(vals)
    p = compile_problem(micp)
    s = LPSession(p)
    fix = {n: vals[n] for n in p.names if n in vals and not n.startswith("lam")}
    fix.update(full_codes(grid, cells))
    s.fix(fix)
    assert s.run().status == "optimal"


def test_cluster_grid_reduction_and_roundtrip():
    grid_axis = Axis("g", ("x",), INTERVAL, tuple(float(k) for k in range(28)))
    from shelfreduce.envelope import Grid
    grid = Grid([grid_axis])
    pts = [{"x": k + 0.5} for k in (2, 5, 9, 11, 20, 26)]
    cg = assign_cluster_grid(pts, grid)
    assert cg.cells["g"] == (2, 5, 9, 11, 20, 26)
    assert cg.reduced_bits("g") == 3 and code_length(27) == 5
    cmap = reduced_code_map(cg, "g")
    for code, k in cmap.items():
        assert decode_reduced(cg, "g", code) == k
    with pytest.raises(InvalidCode):
        decode_reduced(cg, "g", (0, 1, 1))
    assert cluster_from_dict(cluster_to_dict(cg)) == cg
    for k in cg.cells["g"]:
        assert full_cells(grid, full_codes(grid, {"g": k})) == {"g": k}
        assert admits(cg, grid, full_codes(grid, {"g": k}))
    assert not admits(cg, grid, full_codes(grid, {"g": 3}))


def test_cluster_out_of_range():
    from shelfreduce.envelope import Grid
    grid = Grid([Axis("g", ("x",), INTERVAL, (0.0, 1.0, 2.0))])
    with pytest.raises(OutOfRange):
        assign_cluster_grid([{"x": 5.0}], grid)


def test_cluster_all_cells_equals_full():
    inst = sample_instance(1, SamplerConfig(n_books=3))
    spec = build_minlp(inst)
    grid = make_grid(spec, GridConfig.desk())
    everything = ClusterGrid({a.name: tuple(range(a.n_cells)) for a in grid.axes}, frozenset())
    assert binary_count(relax_to_micp(spec, grid, everything)) == binary_count(relax_to_micp(spec, grid))


def test_reduced_solve_recovers_full_codes():
    inst = sample_instance(2, SamplerConfig(n_books=3))
    spec = build_minlp(inst)
    grid = make_grid(spec, GridConfig.desk())
    full = relax_to_micp(spec, grid)
    sol = branch_and_bound(compile_problem(full), 60)
    from shelfreduce.envelope import selected_cells
    cells = selected_cells(full, sol.values)
    cg = ClusterGrid({a: (k,) for a, k in cells.items()}, frozenset())
    red = relax_to_micp(spec, grid, cg)
    assert binary_count(red) < binary_count(full)
    rsol = branch_and_bound(compile_problem(red), 60)
    rec = recover_full_integers(rsol.values, red)
    assert full_cells(grid, rec) == cells
    assert rsol.objective >= sol.objective - 1e-6
