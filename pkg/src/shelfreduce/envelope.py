"""Gridded McCormick relaxation of the bilinear model and the log2(N) cell encoding.

Each gridded group ("axis") owns its own cell choice.  A theta axis covers
the pair ``(cos, sin)`` of one book: a theta interval maps to the bounding box
of that arc.  Every other axis is a single variable split into intervals.
Within an axis, the selected cell is encoded by ``ceil(log2 L)`` binaries
together with convex weights ``lam`` over the cell's corners.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import EmptyList, InfiniteBounds, InvalidCode, OutOfRange, UncoveredVariable
from .formulation import (BINARY, CONTINUOUS, Gate, LinearConstraint, ProblemSpec, VariableRef,
                          ax_, ay_, cos_, integer_vars, sin_, vx_, vy_, with_big_m)

THETA = "theta"
INTERVAL = "interval"


# ---------------------------------------------------------------------------
# grid


@dataclass(frozen=True)
class Axis:
    name: str
    vars: tuple  # gridded variable names; (cos, sin) for a theta axis
    kind: str
    breakpoints: tuple

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float)
        if len(bp) < 2 or np.any(np.diff(bp) <= 0):
            raise ValueError(f"axis {self.name}: breakpoints must be strictly increasing")

    @property
    def n_cells(self) -> int:
        return len(self.breakpoints) - 1

    def cell_box(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        t0, t1 = self.breakpoints[k], self.breakpoints[k + 1]
        if self.kind == INTERVAL:
            return np.array([t0]), np.array([t1])
        c = [math.cos(t0), math.cos(t1)]
        c_hi = 1.0 if t0 <= 0.0 <= t1 else max(c)
        lo = np.array([max(min(c), 0.0), math.sin(t0)])
        hi = np.array([c_hi, math.sin(t1)])
        # cos(pi/2) is not exactly zero in floating point
        lo[np.abs(lo) < 1e-12] = 0.0
        hi[np.abs(hi) < 1e-12] = 0.0
        return lo, hi

    def cells(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [self.cell_box(k) for k in range(self.n_cells)]

    def coordinate(self, values: Mapping[str, float]) -> float:
        if self.kind == THETA:
            return math.atan2(values[self.vars[1]], values[self.vars[0]])
        return float(values[self.vars[0]])

    def containing(self, values: Mapping[str, float], tol: float = 1e-9) -> list[int]:
        """All cells whose closed range holds the point, lowest first."""
        t = self.coordinate(values)
        bp = self.breakpoints
        return [k for k in range(self.n_cells) if bp[k] - tol <= t <= bp[k + 1] + tol]

    def locate(self, values: Mapping[str, float], tol: float = 1e-9) -> int:
        """Index of the cell containing the point; ties go to the lower cell."""
        t = self.coordinate(values)
        bp = self.breakpoints
        if t < bp[0] - tol or t > bp[-1] + tol:
            raise OutOfRange(f"axis {self.name}: value {t} outside [{bp[0]}, {bp[-1]}]")
        k = int(np.searchsorted(bp, t - tol, side="left")) - 1
        return min(max(k, 0), self.n_cells - 1)


@dataclass(frozen=True)
class Grid:
    axes: tuple

    def __post_init__(self):
        index = {}
        for a in self.axes:
            for v in a.vars:
                index[v] = a
        object.__setattr__(self, "_by_var", index)

    def axis_of(self, var: str) -> Axis | None:
        return self._by_var.get(var)

    def axis(self, name: str) -> Axis:
        for a in self.axes:
            if a.name == name:
                return a
        raise KeyError(name)

    @property
    def dimension(self) -> int:
        """Number of gridded groups (a theta axis counts once)."""
        return len(self.axes)

    @property
    def n_cells(self) -> int:
        return int(np.prod([a.n_cells for a in self.axes])) if self.axes else 1

    def locate(self, values: Mapping[str, float]) -> dict:
        return {a.name: a.locate(values) for a in self.axes}

    def full_binary_count(self) -> int:
        return sum(code_length(a.n_cells) for a in self.axes)


@dataclass(frozen=True)
class GridConfig:
    theta_step: float = math.pi / 8
    a_step: float = 0.25
    v_frac_x: float = 0.25  # vertex x intervals as a fraction of shelf width
    v_frac_y: float = 0.25

    @classmethod
    def desk(cls) -> "GridConfig":
        return cls(theta_step=math.pi / 4)

    @classmethod
    def from_dict(cls, d: Mapping) -> "GridConfig":
        d = dict(d)
        for key in ("theta_step",):
            if isinstance(d.get(key), str):
                d[key] = float(eval_pi(d[key]))
        return cls(**d)


def eval_pi(text: str) -> float:
    """Parse strings like ``pi/8`` or ``0.25*pi``."""
    t = text.replace(" ", "").lower()
    if "pi" not in t:
        return float(t)
    num, _, rest = t.partition("pi")
    factor = float(num.rstrip("*") or 1.0)
    if rest.startswith("/"):
        factor /= float(rest[1:])
    elif rest:
        raise ValueError(f"cannot parse angle {text!r}")
    return factor * math.pi


def _steps(lo: float, hi: float, step: float) -> tuple:
    n = max(1, int(round((hi - lo) / step)))
    return tuple(float(v) for v in np.linspace(lo, hi, n + 1))


def make_grid(spec: ProblemSpec, config: GridConfig | None = None) -> Grid:
    """Axes for every bilinear factor of a bookshelf model."""
    config = config or GridConfig()
    W, H = spec.meta["shelf"]
    n = spec.meta["n_books"]
    axes = []
    for i in range(n):
        axes.append(Axis(f"theta[{i}]", (cos_(i), sin_(i)), THETA, _steps(-math.pi / 2, math.pi / 2, config.theta_step)))
    for p, q in spec.meta["pairs"]:
        axes.append(Axis(ax_(p, q), (ax_(p, q),), INTERVAL, _steps(0.0, 1.0, config.a_step)))
        axes.append(Axis(ay_(p, q), (ay_(p, q),), INTERVAL, _steps(-1.0, 1.0, config.a_step)))
    for i in range(n):
        for k in range(1, 5):
            axes.append(Axis(vx_(i, k), (vx_(i, k),), INTERVAL, _steps(0.0, W, config.v_frac_x * W)))
            axes.append(Axis(vy_(i, k), (vy_(i, k),), INTERVAL, _steps(0.0, H, config.v_frac_y * H)))
    grid = Grid(tuple(axes))
    check_coverage(spec, grid)
    return grid


def check_coverage(spec: ProblemSpec, grid: Grid) -> None:
    for _, u, v in spec.triples():
        for f in (u, v):
            if grid.axis_of(f) is None:
                raise UncoveredVariable(f"bilinear factor {f} is on no grid axis")


# ---------------------------------------------------------------------------
# McCormick


def mccormick(u_bounds, v_bounds) -> list[tuple]:
    """Four rows ``cw*w + cu*u + cv*v <= rhs`` enclosing ``w = u*v`` over the box."""
    ul, uh = map(float, u_bounds)
    vl, vh = map(float, v_bounds)
    if not all(math.isfinite(t) for t in (ul, uh, vl, vh)):
        raise InfiniteBounds(f"McCormick needs finite bounds, got {u_bounds} x {v_bounds}")
    return [
        (-1.0, vl, ul, ul * vl),
        (-1.0, vh, uh, uh * vh),
        (1.0, -vl, -uh, -uh * vl),
        (1.0, -vh, -ul, -ul * vh),
    ]


def _merge(terms) -> tuple:
    out: dict = {}
    for name, c in terms:
        out[name] = out.get(name, 0.0) + c
    return tuple((n, c) for n, c in out.items() if c != 0.0)


def envelope_rows(w: str, u: str, v: str, u_bounds, v_bounds) -> list[tuple]:
    """McCormick rows as ``(terms, rhs)``; a square ``u == v`` merges its coefficients."""
    return [(_merge([(w, cw), (u, cu), (v, cv)]), rhs) for cw, cu, cv, rhs in mccormick(u_bounds, v_bounds)]


# ---------------------------------------------------------------------------
# log2(N) encoding


def code_length(n: int) -> int:
    if n < 1:
        raise EmptyList("need at least one polytope")
    return (n - 1).bit_length()


def code_of(index: int, m: int) -> tuple:
    return tuple((index >> l) & 1 for l in range(m))


def decode(bits: Sequence[float]) -> int:
    return sum(int(round(b)) << l for l, b in enumerate(bits))


def box_corners(lo, hi) -> np.ndarray:
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    return np.array([[hi[d] if bit else lo[d] for d, bit in enumerate(bits)]
                     for bits in itertools.product((0, 1), repeat=len(lo))])


@dataclass(frozen=True)
class Log2NEncoding:
    boxes: tuple  # ((lo, hi), ...)
    vertices: tuple  # per box, array of corners
    codes: tuple
    m: int

    @property
    def n(self) -> int:
        return len(self.boxes)

    def build(self, x_names: Sequence[str], prefix: str):
        """Variables and rows tying ``x_names`` to the union of boxes.

        Returns ``(variables, constraints, z_names, lam_names)`` where
        ``lam_names[i]`` lists the weights of box ``i``.
        """
        z = [f"code[{prefix}|{l}]" for l in range(self.m)]
        lam = [[f"lam[{prefix}|{i},{j}]" for j in range(len(self.vertices[i]))] for i in range(self.n)]
        variables = [VariableRef(name, BINARY, 0.0, 1.0) for name in z]
        variables += [VariableRef(name, CONTINUOUS, 0.0, 1.0) for row in lam for name in row]
        rows = []
        # x = sum lam * vertex
        for d, x in enumerate(x_names):
            terms = [(x, 1.0)] + [(lam[i][j], -float(self.vertices[i][j][d]))
                                  for i in range(self.n) for j in range(len(lam[i]))]
            rows.append(LinearConstraint(f"log2n[{prefix}|a,{d}]", _merge(terms), "=", 0.0, family="log2n"))
        # weights sum to one
        rows.append(LinearConstraint(f"log2n[{prefix}|b]", tuple((n, 1.0) for row in lam for n in row), "=", 1.0,
                                     family="log2n"))
        # weights outside box i vanish when the binaries spell code i
        if self.m > 0:
            for i, code in enumerate(self.codes):
                terms = [(n, 1.0) for k, row in enumerate(lam) if k != i for n in row]
                terms += [(z[l], -1.0 if bit == 0 else 1.0) for l, bit in enumerate(code)]
                rows.append(LinearConstraint(f"log2n[{prefix}|c,{i}]", tuple(terms), "<=", float(sum(code)),
                                             family="log2n"))
            for c in range(self.n, 2 ** self.m):
                code = code_of(c, self.m)
                terms = [(z[l], -1.0 if bit == 0 else 1.0) for l, bit in enumerate(code)]
                rows.append(LinearConstraint(f"log2n[{prefix}|x,{c}]", tuple(terms), "<=", float(sum(code) - 1),
                                             family="log2n_cut"))
        return variables, rows, z, lam


def encode_log2n(polytopes: Sequence) -> Log2NEncoding:
    """Encoding of "the point lies in one of these boxes" with ceil(log2 N) binaries."""
    if len(polytopes) == 0:
        raise EmptyList("encode_log2n needs at least one box")
    boxes = tuple((np.asarray(lo, float), np.asarray(hi, float)) for lo, hi in polytopes)
    m = code_length(len(boxes))
    return Log2NEncoding(boxes, tuple(box_corners(lo, hi) for lo, hi in boxes),
                         tuple(code_of(i, m) for i in range(len(boxes))), m)


# ---------------------------------------------------------------------------
# relaxation


@dataclass(frozen=True)
class ClusterGrid:
    """Cells and integer values observed in one cluster of solutions.

    ``cells[axis]`` is the sorted tuple of original cell indices; position in
    the tuple is the reduced cell index, so it doubles as the code map.
    """

    cells: dict
    fixed_zero: frozenset = frozenset()

    def reduced_bits(self, axis: str) -> int:
        return code_length(len(self.cells[axis]))

    def binary_count(self, n_integer: int) -> int:
        return sum(self.reduced_bits(a) for a in self.cells) + n_integer - len(self.fixed_zero)


@dataclass(frozen=True)
class AxisEncoding:
    axis: str
    cells: tuple  # original cell indices, in encoding order
    z: tuple
    lam: tuple  # per encoded cell, names of its weights

    def mass_gate(self, pos: int) -> Gate:
        return Gate.any_on(self.lam[pos])


def relax_to_micp(spec: ProblemSpec, grid: Grid, restriction: ClusterGrid | None = None,
                  global_envelope: bool = True) -> ProblemSpec:
    """Mixed-integer linear relaxation: each product gets per-cell McCormick rows gated by the cell's weight mass.

    With ``restriction`` every axis only offers the listed cells and the
    listed integer variables are fixed to zero.
    """
    if not spec.bilinear_constraints:
        return spec
    check_coverage(spec, grid)
    variables = {v.name: v for v in spec.variables}
    if restriction is not None:
        for name in restriction.fixed_zero:
            v = variables[name]
            variables[name] = VariableRef(name, v.kind, 0.0, 0.0)
    rows: list[LinearConstraint] = list(spec.linear_constraints)
    encodings: dict = {}
    for axis in grid.axes:
        cells = tuple(range(axis.n_cells)) if restriction is None else tuple(restriction.cells[axis.name])
        enc = encode_log2n([axis.cell_box(k) for k in cells])
        new_vars, new_rows, z, lam = enc.build(axis.vars, axis.name)
        for v in new_vars:
            variables[v.name] = v
        rows.extend(new_rows)
        encodings[axis.name] = AxisEncoding(axis.name, cells, tuple(z), tuple(tuple(r) for r in lam))
        if restriction is not None:
            # the union of the offered boxes bounds each gridded variable
            lo = np.min([axis.cell_box(k)[0] for k in cells], axis=0)
            hi = np.max([axis.cell_box(k)[1] for k in cells], axis=0)
            for d, name in enumerate(axis.vars):
                v = variables[name]
                variables[name] = VariableRef(name, v.kind, max(v.lo, lo[d]), min(v.hi, hi[d]))

    bounds = {n: v.bounds for n, v in variables.items()}
    for bc in spec.bilinear_constraints:
        rows.append(bc.linear_part)
    for w, u, v in spec.triples():
        au, av = grid.axis_of(u), grid.axis_of(v)
        eu, ev = encodings[au.name], encodings[av.name]
        du, dv = au.vars.index(u), av.vars.index(v)
        if global_envelope:
            for r, (terms, rhs) in enumerate(envelope_rows(w, u, v, bounds[u], bounds[v])):
                rows.append(LinearConstraint(f"mc[{w}|*,{r}]", terms, "<=", rhs, family="mccormick"))
        if au.name == av.name:
            combos = [((p,), eu.cells[p], eu.cells[p]) for p in range(len(eu.cells))]
        else:
            combos = [((p, q), eu.cells[p], ev.cells[q]) for p in range(len(eu.cells)) for q in range(len(ev.cells))]
        single = len(combos) == 1
        for pos, cu, cv in combos:
            ub = (au.cell_box(cu)[0][du], au.cell_box(cu)[1][du])
            vb = (av.cell_box(cv)[0][dv], av.cell_box(cv)[1][dv])
            if single:
                gate = None
            elif len(pos) == 1:
                gate = eu.mass_gate(pos[0])
            else:
                gate = eu.mass_gate(pos[0]) + ev.mass_gate(pos[1])
            tag = ",".join(str(c) for c in (cu, cv)[:len(pos)])
            for r, (terms, rhs) in enumerate(envelope_rows(w, u, v, ub, vb)):
                c = LinearConstraint(f"mc[{w}|{tag},{r}]", terms, "<=", rhs, gate, family="mccormick")
                rows.append(with_big_m(c, bounds))

    meta = dict(spec.meta)
    meta.update(grid=grid, encodings=encodings, restriction=restriction, minlp=spec)
    return ProblemSpec(tuple(variables.values()), tuple(rows), (), spec.objective, meta)


def binary_count(micp: ProblemSpec) -> int:
    """Free binaries (fixed ones are not decisions)."""
    return sum(1 for v in micp.binaries if v.hi > v.lo)


def selected_cells(micp: ProblemSpec, values: Mapping[str, float]) -> dict:
    """Original cell index chosen on each axis by an integral solution."""
    out = {}
    for name, enc in micp.meta["encodings"].items():
        pos = decode([values[z] for z in enc.z])
        if pos >= len(enc.cells):
            raise InvalidCode(f"axis {name}: code {pos} with only {len(enc.cells)} cells")
        out[name] = enc.cells[pos]
    return out


def cell_codes(micp: ProblemSpec, cells: Mapping[str, int]) -> dict:
    """Binary values spelling the given original cells in ``micp``'s encoding."""
    out = {}
    for name, enc in micp.meta["encodings"].items():
        pos = enc.cells.index(cells[name])
        for z, bit in zip(enc.z, code_of(pos, len(enc.z))):
            out[z] = float(bit)
    return out


# ---------------------------------------------------------------------------
# cluster reduction


def assign_cluster_grid(cluster_solutions: Sequence[Mapping[str, float]], grid: Grid,
                        selected: Sequence[Mapping[str, int]] | None = None,
                        integer_names: Sequence[str] = ()) -> ClusterGrid:
    """Occupied cells of each axis across a cluster.

    A point's cell is found by value (ties to the lower cell); cells recorded
    in ``selected`` (the solver's own choice per axis) are added too.
    Integer variables in ``integer_names`` never set to 1 are fixed to zero.
    """
    if len(cluster_solutions) == 0:
        raise EmptyList("empty cluster")
    occupied: dict = {a.name: set() for a in grid.axes}
    for idx, point in enumerate(cluster_solutions):
        for a in grid.axes:
            try:
                occupied[a.name].add(a.locate(point))
            except OutOfRange as exc:
                raise OutOfRange(f"solution {idx}: {exc}") from None
    for sel in selected or ():
        for name, k in sel.items():
            occupied[name].add(int(k))
    seen = {n for n in integer_names if any(p.get(n, 0.0) > 0.5 for p in cluster_solutions)}
    return ClusterGrid({k: tuple(sorted(v)) for k, v in occupied.items()},
                       frozenset(n for n in integer_names if n not in seen))


def full_codes(grid: Grid, cells: Mapping[str, int]) -> dict:
    """Code binaries of the unrestricted encoding that select ``cells``."""
    out = {}
    for a in grid.axes:
        m = code_length(a.n_cells)
        for l, bit in enumerate(code_of(int(cells[a.name]), m)):
            out[f"code[{a.name}|{l}]"] = float(bit)
    return out


def full_cells(grid: Grid, binaries: Mapping[str, float]) -> dict:
    """Inverse of ``full_codes``."""
    out = {}
    for a in grid.axes:
        m = code_length(a.n_cells)
        k = decode([binaries[f"code[{a.name}|{l}]"] for l in range(m)])
        if k >= a.n_cells:
            raise InvalidCode(f"axis {a.name}: code {k} with only {a.n_cells} cells")
        out[a.name] = k
    return out


def recover_full_integers(reduced: Mapping[str, float], reduced_micp: ProblemSpec,
                          full_micp: ProblemSpec | None = None) -> dict:
    """Map binaries of a reduced MICP back to the full MICP's binaries selecting the same cells and states."""
    cells = selected_cells(reduced_micp, reduced)
    out = cell_codes(full_micp, cells) if full_micp is not None else full_codes(reduced_micp.meta["grid"], cells)
    for name in integer_vars(reduced_micp):
        out[name] = float(round(reduced[name]))
    return out


def admits(cluster: ClusterGrid, grid: Grid, binaries: Mapping[str, float]) -> bool:
    """True if a full-space assignment stays inside the cluster's cells and allowed integers."""
    if any(binaries.get(n, 0.0) > 0.5 for n in cluster.fixed_zero):
        return False
    try:
        cells = full_cells(grid, binaries)
    except InvalidCode:
        return False
    return all(cells[a] in allowed for a, allowed in cluster.cells.items())


def cluster_to_dict(cluster: ClusterGrid) -> dict:
    return {"cells": {k: list(v) for k, v in cluster.cells.items()}, "fixed_zero": sorted(cluster.fixed_zero)}


def cluster_from_dict(d: Mapping) -> ClusterGrid:
    return ClusterGrid({k: tuple(int(c) for c in v) for k, v in d["cells"].items()}, frozenset(d["fixed_zero"]))


def reduced_code_map(cluster: ClusterGrid, axis: str) -> dict:
    """Reduced code word (as a tuple of bits) -> original cell index."""
    cells = cluster.cells[axis]
    m = code_length(len(cells))
    return {code_of(pos, m): k for pos, k in enumerate(cells)}


def decode_reduced(cluster: ClusterGrid, axis: str, bits: Sequence[int]) -> int:
    pos = decode(bits)
    cells = cluster.cells[axis]
    if pos >= len(cells):
        raise InvalidCode(f"axis {axis}: code {pos} beyond {len(cells)} occupied cells")
    return cells[pos]
