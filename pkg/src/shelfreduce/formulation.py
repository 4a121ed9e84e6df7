"""Symbolic mixed-integer bilinear model of the bookshelf insertion problem.

Books are indexed ``0..N-2`` for the stored books (left to right) and ``N-1``
for the book being inserted.  The insert book's position in the final order is
a decision, encoded by one-hot ``slot[s]`` binaries: slot ``s`` places it just
before stored book ``s`` (``s = N-1`` puts it at the right end).

Every unordered pair of books gets a separating line ``a^T p = b`` whose
normal points from the left book to the right one, so ``a_x >= 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import IndexOutOfRange, UnboundedVariable, UnorderedInstance
from .scene import STATES, ShelfInstance, SceneSolution, VERTEX_SIGNS

CONTINUOUS = "continuous"
BINARY = "binary"


@dataclass(frozen=True)
class VariableRef:
    name: str
    kind: str = CONTINUOUS
    lo: float = 0.0
    hi: float = 1.0

    @property
    def bounds(self) -> tuple[float, float]:
        return (self.lo, self.hi)


@dataclass(frozen=True)
class Gate:
    """Linear ``slack = const + sum(coef * var)``; the gated constraint binds iff ``slack == 0``.

    For binary literals the slack is a nonnegative integer, and at least 1
    whenever the gate is off, so ``lhs <= rhs + M * slack`` is a big-M switch.
    """

    terms: tuple = ()
    const: float = 0.0

    @staticmethod
    def all_on(*names: str) -> "Gate":
        return Gate(tuple((n, -1.0) for n in names), float(len(names)))

    @staticmethod
    def any_on(names) -> "Gate":
        # for members of a one-hot group: slack = 1 - sum
        return Gate(tuple((n, -1.0) for n in names), 1.0)

    def __add__(self, other: "Gate") -> "Gate":
        return Gate(self.terms + other.terms, self.const + other.const)

    def slack(self, values: Mapping[str, float]) -> float:
        return self.const + sum(c * values[n] for n, c in self.terms)


@dataclass(frozen=True)
class LinearConstraint:
    name: str
    terms: tuple  # ((var name, coef), ...)
    sense: str  # "<=" or "="
    rhs: float
    gate: Gate | None = None
    big_m: tuple | None = None  # (M for lhs - rhs, M for rhs - lhs)
    family: str = ""

    def lhs(self, values: Mapping[str, float]) -> float:
        return sum(c * values[n] for n, c in self.terms)

    def violation(self, values: Mapping[str, float]) -> float:
        """Amount by which the (possibly gated) constraint is violated at ``values``."""
        r = self.lhs(values) - self.rhs
        s = 0.0 if self.gate is None else self.gate.slack(values)
        m_up, m_lo = self.big_m if self.big_m is not None else (0.0, 0.0)
        up = r - m_up * s
        if self.sense == "<=":
            return max(0.0, up)
        return max(0.0, up, -r - m_lo * s)


@dataclass(frozen=True)
class BilinearConstraint:
    name: str
    triples: tuple  # ((w, u, v), ...) meaning w = u * v
    linear_part: LinearConstraint
    family: str = ""


@dataclass(frozen=True)
class SeparatingPlane:
    pair: tuple
    a: tuple  # (a_x name, a_y name)
    b: str


@dataclass(frozen=True)
class ProblemSpec:
    variables: tuple
    linear_constraints: tuple
    bilinear_constraints: tuple
    objective: tuple  # ((var name, coef), ...), minimised
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {v.name: v for v in self.variables})

    def var(self, name: str) -> VariableRef:
        return self._index[name]

    def has_var(self, name: str) -> bool:
        return name in self._index

    @property
    def bounds(self) -> dict:
        return {v.name: v.bounds for v in self.variables}

    @property
    def binaries(self) -> list[VariableRef]:
        return [v for v in self.variables if v.kind == BINARY]

    def triples(self) -> list[tuple]:
        seen, out = set(), []
        for bc in self.bilinear_constraints:
            for t in bc.triples:
                if t[0] not in seen:
                    seen.add(t[0])
                    out.append(t)
        return out

    def family_counts(self) -> dict:
        counts: dict = {}
        for c in self.linear_constraints:
            counts[c.family] = counts.get(c.family, 0) + 1
        for c in self.bilinear_constraints:
            counts[c.family] = counts.get(c.family, 0) + 1
        return counts


def big_m_value(constraint: LinearConstraint, bounds: Mapping[str, tuple]) -> float:
    """Smallest M valid over the variable box: ``max(lhs - rhs)`` (both directions for equalities)."""
    hi = lo = 0.0
    for name, coef in constraint.terms:
        vlo, vhi = bounds[name]
        if not (math.isfinite(vlo) and math.isfinite(vhi)):
            raise UnboundedVariable(f"variable {name} in {constraint.name} has bounds [{vlo}, {vhi}]")
        hi += max(coef * vlo, coef * vhi)
        lo += min(coef * vlo, coef * vhi)
    m_up = hi - constraint.rhs
    if constraint.sense == "<=":
        return float(max(m_up, 0.0))
    return float(max(m_up, constraint.rhs - lo, 0.0))


def _directional_m(constraint: LinearConstraint, bounds: Mapping[str, tuple]) -> tuple:
    up = big_m_value(LinearConstraint(constraint.name, constraint.terms, "<=", constraint.rhs), bounds)
    neg = tuple((n, -c) for n, c in constraint.terms)
    down = big_m_value(LinearConstraint(constraint.name, neg, "<=", -constraint.rhs), bounds)
    return (up, down if constraint.sense == "=" else 0.0)


def with_big_m(constraint: LinearConstraint, bounds: Mapping[str, tuple]) -> LinearConstraint:
    if constraint.gate is None:
        return constraint
    return LinearConstraint(constraint.name, constraint.terms, constraint.sense, constraint.rhs,
                            constraint.gate, _directional_m(constraint, bounds), constraint.family)


# ---------------------------------------------------------------------------
# naming


def x_(i): return f"x[{i}]"
def y_(i): return f"y[{i}]"
def cos_(i): return f"cos[{i}]"
def sin_(i): return f"sin[{i}]"
def vx_(i, k): return f"vx[{i},{k}]"
def vy_(i, k): return f"vy[{i},{k}]"
def z_(i, s): return f"z[{i},{s}]"
def slot_(s): return f"slot[{s}]"
def ax_(p, q): return f"ax[{p},{q}]"
def ay_(p, q): return f"ay[{p},{q}]"
def b_(p, q): return f"b[{p},{q}]"
def w_(u, v): return f"w[{u}*{v}]"


STATE_INDEX = {name: k + 1 for k, name in enumerate(STATES)}  # z[i,1..5]


def final_order(n_books: int, slot: int) -> list[int]:
    stored = list(range(n_books - 1))
    return stored[:slot] + [n_books - 1] + stored[slot:]


def neighbours(n_books: int, slot: int) -> dict:
    """(book, 'left'|'right') -> neighbouring book or None, for a given slot."""
    order = final_order(n_books, slot)
    out = {}
    for r, i in enumerate(order):
        out[(i, "left")] = order[r - 1] if r > 0 else None
        out[(i, "right")] = order[r + 1] if r + 1 < len(order) else None
    return out


class _Builder:
    def __init__(self):
        self.vars: dict[str, VariableRef] = {}
        self.lin: list[LinearConstraint] = []
        self.bil: list[BilinearConstraint] = []

    def add_var(self, name, lo, hi, kind=CONTINUOUS):
        self.vars[name] = VariableRef(name, kind, float(lo), float(hi))
        return name

    def product(self, u: str, v: str) -> tuple:
        w = w_(u, v)
        if w not in self.vars:
            ul, uh = self.vars[u].bounds
            vl, vh = self.vars[v].bounds
            corners = [ul * vl, ul * vh, uh * vl, uh * vh]
            self.add_var(w, min(corners), max(corners))
        return (w, u, v)

    def linear(self, name, terms, sense, rhs, gate=None, family=""):
        c = LinearConstraint(name, tuple(terms), sense, float(rhs), gate, None, family)
        self.lin.append(with_big_m(c, self.bounds()))

    def bilinear(self, name, triples, extra_terms, sense, rhs, gate=None, family=""):
        terms = [(t[0], coef) for t, coef in triples] + list(extra_terms)
        lp = with_big_m(LinearConstraint(name, tuple(terms), sense, float(rhs), gate, None, family), self.bounds())
        self.bil.append(BilinearConstraint(name, tuple(t for t, _ in triples), lp, family))

    def bounds(self):
        return {n: v.bounds for n, v in self.vars.items()}


def build_minlp(instance: ShelfInstance, weights: tuple = (1.0, 1.0, 1.0)) -> ProblemSpec:
    """Mixed-integer bilinear model for inserting ``instance.insert_book``.

    Objective: weighted L1 displacement of the stored books, with the angle
    change measured as ``|cos - cos0| + |sin - sin0|``.
    """
    if not instance.is_ordered():
        raise UnorderedInstance("stored books must be ordered left to right by centroid x")
    W, H = float(instance.shelf_width), float(instance.shelf_height)
    books = instance.books
    n = len(books)
    ins = n - 1
    bld = _Builder()

    for i, book in enumerate(books):
        bld.add_var(x_(i), 0.0, W)
        bld.add_var(y_(i), 0.0, H)
        bld.add_var(cos_(i), 0.0, 1.0)  # angle range: theta in [-pi/2, pi/2] <=> cos >= 0
        bld.add_var(sin_(i), -1.0, 1.0)
        for k in range(1, 5):
            bld.add_var(vx_(i, k), 0.0, W)  # containment via bounds
            bld.add_var(vy_(i, k), 0.0, H)
        for s in range(1, 6):
            bld.add_var(z_(i, s), 0, 1, BINARY)
    for s in range(n):
        bld.add_var(slot_(s), 0, 1, BINARY)
    pairs = [(p, q) for p in range(n) for q in range(p + 1, n)]
    planes = {}
    for p, q in pairs:
        bld.add_var(ax_(p, q), 0.0, 1.0)
        bld.add_var(ay_(p, q), -1.0, 1.0)
        bld.add_var(b_(p, q), -H, W + H)
        planes[(p, q)] = SeparatingPlane((p, q), (ax_(p, q), ay_(p, q)), b_(p, q))

    for i, book in enumerate(books):
        # A: vertex = centroid + R h_k
        for k in range(1, 5):
            hx, hy = VERTEX_SIGNS[k - 1] * np.array([book.width / 2, book.height / 2])
            bld.linear(f"A[{i},{k},x]", [(vx_(i, k), 1.0), (x_(i), -1.0), (cos_(i), -hx), (sin_(i), hy)],
                       "=", 0.0, family="A")
            bld.linear(f"A[{i},{k},y]", [(vy_(i, k), 1.0), (y_(i), -1.0), (sin_(i), -hx), (cos_(i), -hy)],
                       "=", 0.0, family="A")
        # C: cos^2 + sin^2 = 1
        bld.bilinear(f"C[{i}]", [(bld.product(cos_(i), cos_(i)), 1.0), (bld.product(sin_(i), sin_(i)), 1.0)],
                     [], "=", 1.0, family="C")
        bld.linear(f"onehot[{i}]", [(z_(i, s), 1.0) for s in range(1, 6)], "=", 1.0, family="onehot")

    bld.linear("slot", [(slot_(s), 1.0) for s in range(n)], "=", 1.0, family="slot")

    # order: stored books keep their order, insert sits between its slot neighbours
    for k in range(n - 2):
        bld.linear(f"order[{k}]", [(x_(k), 1.0), (x_(k + 1), -1.0)], "<=", 0.0, family="order")
    for s in range(n):
        g = Gate.all_on(slot_(s))
        if s >= 1:
            bld.linear(f"order[ins,{s},l]", [(x_(s - 1), 1.0), (x_(ins), -1.0)], "<=", 0.0, g, "order")
        if s <= n - 2:
            bld.linear(f"order[ins,{s},r]", [(x_(ins), 1.0), (x_(s), -1.0)], "<=", 0.0, g, "order")

    # E, F: separating lines
    for p, q in pairs:
        ax, ay, b = ax_(p, q), ay_(p, q), b_(p, q)
        bld.bilinear(f"F[{p},{q}]", [(bld.product(ax, ax), 1.0), (bld.product(ay, ay), 1.0)], [], "=", 1.0,
                     family="F")
        if q != ins:
            orientations = [((p, q), None)]
        else:
            # insert book left of stored book p iff slot <= p
            orientations = [((p, q), Gate.any_on([slot_(s) for s in range(p + 1, n)])),
                            ((q, p), Gate.any_on([slot_(s) for s in range(0, p + 1)]))]
        for (left, right), gate in orientations:
            for k in range(1, 5):
                tl = [(bld.product(ax, vx_(left, k)), 1.0), (bld.product(ay, vy_(left, k)), 1.0)]
                bld.bilinear(f"E[{p},{q},{left}<,{k}]", tl, [(b, -1.0)], "<=", 0.0, gate, "E")
                tr = [(bld.product(ax, vx_(right, k)), -1.0), (bld.product(ay, vy_(right, k)), -1.0)]
                bld.bilinear(f"E[{p},{q},{right}>,{k}]", tr, [(b, 1.0)], "<=", 0.0, gate, "E")

    # states
    for i in range(n):
        zl, zu, zr, zll, zlr = (z_(i, s) for s in range(1, 6))
        for tag, z, c, s_, vk in (("J1", zl, 0.0, 1.0, 3), ("I1", zu, 1.0, 0.0, 2), ("H1", zr, 0.0, -1.0, 2)):
            g = Gate.all_on(z)
            bld.linear(f"{tag}[{i},cos]", [(cos_(i), 1.0)], "=", c, g, tag)
            bld.linear(f"{tag}[{i},sin]", [(sin_(i), 1.0)], "=", s_, g, tag)
            bld.linear(f"{tag}[{i},ground]", [(vy_(i, vk), 1.0)], "=", 0.0, g, tag)
        # K: lean left (pivot v3), L: lean right (pivot v2)
        bld.linear(f"K3[{i}]", [(vy_(i, 3), 1.0)], "=", 0.0, Gate.all_on(zll), "K3")
        bld.linear(f"K0[{i}]", [(sin_(i), -1.0)], "<=", 0.0, Gate.all_on(zll), "K0")
        bld.linear(f"L3[{i}]", [(vy_(i, 2), 1.0)], "=", 0.0, Gate.all_on(zlr), "L3")
        bld.linear(f"L0[{i}]", [(sin_(i), 1.0)], "<=", 0.0, Gate.all_on(zlr), "L0")

        for direction, z in (("left", zll), ("right", zlr)):
            by_nb: dict = {}
            for s in range(n):
                by_nb.setdefault(neighbours(n, s)[(i, direction)], []).append(s)
            fam = "K" if direction == "left" else "L"
            for nb, slots in sorted(by_nb.items(), key=lambda kv: (kv[0] is not None, kv[0] or 0)):
                slot_names = [slot_(s) for s in slots]
                if nb is None:
                    # nothing to lean on
                    bld.linear(f"{fam}none[{i}]", [(z, 1.0)] + [(sn, 1.0) for sn in slot_names], "<=", 1.0,
                               family=fam + "none")
                    continue
                gate = Gate.all_on(z) + Gate.any_on(slot_names)
                left, right = (nb, i) if direction == "left" else (i, nb)
                pq = (min(left, right), max(left, right))
                ax, ay, b = ax_(*pq), ay_(*pq), b_(*pq)
                # contact line through v1 of the left book and v4 of the right book
                for book_idx, k in ((left, 1), (right, 4)):
                    tr = [(bld.product(ax, vx_(book_idx, k)), 1.0), (bld.product(ay, vy_(book_idx, k)), 1.0)]
                    bld.bilinear(f"{fam}1[{i},{nb},{book_idx},{k}]", tr, [(b, -1.0)], "=", 0.0, gate, fam + "1")
                # stability: centroid between own pivot and neighbour centroid
                if direction == "left":
                    bld.linear(f"K2[{i},{nb},a]", [(x_(nb), 1.0), (x_(i), -1.0)], "<=", 0.0, gate, "K2")
                    bld.linear(f"K2[{i},{nb},b]", [(x_(i), 1.0), (vx_(i, 3), -1.0)], "<=", 0.0, gate, "K2")
                else:
                    bld.linear(f"L2[{i},{nb},a]", [(vx_(i, 2), 1.0), (x_(i), -1.0)], "<=", 0.0, gate, "L2")
                    bld.linear(f"L2[{i},{nb},b]", [(x_(i), 1.0), (x_(nb), -1.0)], "<=", 0.0, gate, "L2")

    # objective: L1 displacement of stored books through slack variables
    wx, wy, wt = weights
    objective = []
    for i, (book, pose) in enumerate(instance.stored_books):
        for var, ref, span, wgt, tag in ((x_(i), pose.x, W, wx, "dx"), (y_(i), pose.y, H, wy, "dy"),
                                         (cos_(i), pose.cos_t, 1.0, wt, "dc"), (sin_(i), pose.sin_t, 2.0, wt, "ds")):
            d = bld.add_var(f"{tag}[{i}]", 0.0, span)
            bld.linear(f"obj[{tag},{i},+]", [(var, 1.0), (d, -1.0)], "<=", ref, family="obj")
            bld.linear(f"obj[{tag},{i},-]", [(var, -1.0), (d, -1.0)], "<=", -ref, family="obj")
            objective.append((d, float(wgt)))

    meta = {
        "instance": instance,
        "n_books": n,
        "shelf": (W, H),
        "pairs": pairs,
        "planes": planes,
        "state_vars": [[z_(i, s) for s in range(1, 6)] for i in range(n)],
        "slot_vars": [slot_(s) for s in range(n)],
        "weights": tuple(weights),
    }
    return ProblemSpec(tuple(bld.vars.values()), tuple(bld.lin), tuple(bld.bil), tuple(objective), meta)


def one_hot_states(spec: ProblemSpec, book: int) -> list[VariableRef]:
    n = spec.meta["n_books"]
    if not 0 <= book < n:
        raise IndexOutOfRange(f"book {book} not in 0..{n - 1}")
    return [spec.var(name) for name in spec.meta["state_vars"][book]]


def integer_vars(spec: ProblemSpec) -> list[str]:
    """State and slot binaries (the z part of a strategy)."""
    names = [n for row in spec.meta["state_vars"] for n in row]
    return names + list(spec.meta["slot_vars"])


# ---------------------------------------------------------------------------
# plugging a physical scene into the model


def _find_plane(left_poly: np.ndarray, right_poly: np.ndarray, contact: bool, tol: float):
    """A separating line (a, b) with a_x >= 0 and |a| = 1, optionally through v1(left) and v4(right)."""
    centre = right_poly.mean(axis=0) - left_poly.mean(axis=0)
    cands = []
    for poly in (left_poly, right_poly):
        edges = np.roll(poly, -1, axis=0) - poly
        for e in edges:
            nrm = np.array([e[1], -e[0]])
            if np.linalg.norm(nrm) == 0:
                continue
            nrm = nrm / np.linalg.norm(nrm)
            if nrm @ centre < 0:
                nrm = -nrm
            cands.append(nrm)
    cands.append(np.array([1.0, 0.0]))
    for a in cands:
        if a[0] < -1e-12:
            continue
        a = np.array([max(a[0], 0.0), a[1]])
        lo, hi = (left_poly @ a).max(), (right_poly @ a).min()
        if lo > hi + tol:
            continue
        if contact:
            b1, b4 = left_poly[0] @ a, right_poly[3] @ a
            if abs(b1 - b4) > tol or abs(b1 - lo) > tol or abs(b4 - hi) > tol:
                continue
            return a, 0.5 * (b1 + b4)
        return a, 0.5 * (lo + hi)
    return None


def scene_assignment(spec: ProblemSpec, sol: SceneSolution, tol: float = 1e-6) -> dict | None:
    """Values for every model variable that realise ``sol``; None if no separating lines are found."""
    inst: ShelfInstance = spec.meta["instance"]
    n = spec.meta["n_books"]
    vals: dict = {}
    for i, pose in enumerate(sol.poses):
        vals[x_(i)], vals[y_(i)] = pose.x, pose.y
        vals[cos_(i)], vals[sin_(i)] = pose.cos_t, pose.sin_t
        for k in range(1, 5):
            vals[vx_(i, k)], vals[vy_(i, k)] = pose.vertices[k - 1]
        for s, name in enumerate(STATES, start=1):
            vals[z_(i, s)] = 1.0 if sol.state_labels[i] == name else 0.0
    xs = [p.x for p in sol.poses]
    slot = sum(1 for k in range(n - 1) if xs[k] < xs[n - 1])
    for s in range(n):
        vals[slot_(s)] = 1.0 if s == slot else 0.0
    order = final_order(n, slot)
    rank = {b: r for r, b in enumerate(order)}
    nbs = neighbours(n, slot)
    leaning = set()
    for i, label in enumerate(sol.state_labels):
        if label == "lean_left" and nbs[(i, "left")] is not None:
            leaning.add(tuple(sorted((i, nbs[(i, "left")]))))
        if label == "lean_right" and nbs[(i, "right")] is not None:
            leaning.add(tuple(sorted((i, nbs[(i, "right")]))))
    for p, q in spec.meta["pairs"]:
        left, right = (p, q) if rank[p] < rank[q] else (q, p)
        found = _find_plane(sol.poses[left].polygon(), sol.poses[right].polygon(), (p, q) in leaning, tol)
        if found is None:
            return None
        a, b = found
        vals[ax_(p, q)], vals[ay_(p, q)], vals[b_(p, q)] = float(a[0]), float(a[1]), float(b)
    for w, u, v in spec.triples():
        vals[w] = vals[u] * vals[v]
    for i, (book, pose) in enumerate(inst.stored_books):
        vals[f"dx[{i}]"] = abs(vals[x_(i)] - pose.x)
        vals[f"dy[{i}]"] = abs(vals[y_(i)] - pose.y)
        vals[f"dc[{i}]"] = abs(vals[cos_(i)] - pose.cos_t)
        vals[f"ds[{i}]"] = abs(vals[sin_(i)] - pose.sin_t)
    return vals


def check_assignment(spec: ProblemSpec, values: Mapping[str, float], tol: float = 1e-6) -> list[tuple]:
    """Every violated bound or constraint as ``(name, family, amount)``; empty means feasible."""
    bad = []
    for v in spec.variables:
        val = values[v.name]
        if val < v.lo - tol or val > v.hi + tol:
            bad.append((v.name, "bounds", max(v.lo - val, val - v.hi)))
        if v.kind == BINARY and min(abs(val), abs(val - 1)) > tol:
            bad.append((v.name, "integrality", min(abs(val), abs(val - 1))))
    for c in spec.linear_constraints:
        amt = c.violation(values)
        if amt > tol:
            bad.append((c.name, c.family, amt))
    for bc in spec.bilinear_constraints:
        for w, u, v in bc.triples:
            amt = abs(values[w] - values[u] * values[v])
            if amt > tol:
                bad.append((w, bc.family + ":product", amt))
        amt = bc.linear_part.violation(values)
        if amt > tol:
            bad.append((bc.name, bc.family, amt))
    return bad


def objective_value(spec: ProblemSpec, values: Mapping[str, float]) -> float:
    return float(sum(c * values[n] for n, c in spec.objective))
