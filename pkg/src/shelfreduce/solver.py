"""LP relaxations, branch-and-bound over binaries, and strategy-fixed solves.

LPs are handed to HiGHS' dual simplex.  Branch-and-bound is implemented here:
best-first on the relaxation bound, branching on the most fractional binary
(lowest column index on ties).  A ``highs`` engine that runs HiGHS' own MIP
search is available for throughput.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field
from typing import Mapping

import highspy
import numpy as np
import scipy.sparse as sp

from .errors import Infeasible, LimitReached, NonIntegral, NumericalFailure
from .formulation import BINARY, ProblemSpec, integer_vars

INF = highspy.kHighsInf
INT_TOL = 1e-6
MS = highspy.HighsModelStatus


@dataclass
class CompiledProblem:
    """Row form ``row_lo <= A x <= row_hi``, ``col_lo <= x <= col_hi``, minimise ``c x``."""

    names: list
    c: np.ndarray
    col_lo: np.ndarray
    col_hi: np.ndarray
    A: sp.csr_matrix
    row_lo: np.ndarray
    row_hi: np.ndarray
    row_names: list
    binary_idx: np.ndarray
    spec: ProblemSpec | None = None

    def __post_init__(self):
        self.index = {n: k for k, n in enumerate(self.names)}

    @property
    def inequality_rows(self) -> np.ndarray:
        return np.flatnonzero(self.row_lo < self.row_hi)

    def values(self, x: np.ndarray) -> dict:
        return dict(zip(self.names, map(float, x)))


def compile_problem(spec: ProblemSpec) -> CompiledProblem:
    """Flatten a bilinear-free ProblemSpec; gated rows become big-M rows."""
    if spec.bilinear_constraints:
        raise ValueError("compile_problem expects a relaxed (bilinear-free) problem")
    names = [v.name for v in spec.variables]
    index = {n: k for k, n in enumerate(names)}
    c = np.zeros(len(names))
    for n, coef in spec.objective:
        c[index[n]] += coef
    rows, cols, vals, lo, hi, rnames = [], [], [], [], [], []

    def emit(name, terms, l, h):
        r = len(lo)
        acc: dict = {}
        for n, coef in terms:
            acc[index[n]] = acc.get(index[n], 0.0) + coef
        for k, coef in acc.items():
            if coef != 0.0:
                rows.append(r)
                cols.append(k)
                vals.append(coef)
        lo.append(l)
        hi.append(h)
        rnames.append(name)

    for con in spec.linear_constraints:
        if con.gate is None:
            emit(con.name, con.terms, con.rhs if con.sense == "=" else -INF, con.rhs)
            continue
        m_up, m_lo = con.big_m
        g = con.gate
        # lhs - rhs <= M * slack  with slack = const + sum(coef * var)
        up = list(con.terms) + [(n, -m_up * cf) for n, cf in g.terms]
        emit(con.name if con.sense == "<=" else con.name + ":up", up, -INF, con.rhs + m_up * g.const)
        if con.sense == "=":
            dn = [(n, -cf) for n, cf in con.terms] + [(n, -m_lo * cf) for n, cf in g.terms]
            emit(con.name + ":dn", dn, -INF, -con.rhs + m_lo * g.const)
    A = sp.csr_matrix((vals, (rows, cols)), shape=(len(lo), len(names)))
    col_lo = np.array([v.lo for v in spec.variables], float)
    col_hi = np.array([v.hi for v in spec.variables], float)
    binary_idx = np.array([k for k, v in enumerate(spec.variables) if v.kind == BINARY], dtype=int)
    return CompiledProblem(names, c, col_lo, col_hi, A, np.array(lo, float), np.array(hi, float), rnames,
                           binary_idx, spec)


def dense_problem(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, bounds=None, binary=()) -> CompiledProblem:
    """CompiledProblem from dense arrays (variables named ``x0, x1, ...``)."""
    c = np.asarray(c, float)
    n = len(c)
    blocks, lo, hi = [], [], []
    if A_ub is not None and len(A_ub):
        blocks.append(np.asarray(A_ub, float))
        lo += [-INF] * len(A_ub)
        hi += list(map(float, b_ub))
    if A_eq is not None and len(A_eq):
        blocks.append(np.asarray(A_eq, float))
        lo += list(map(float, b_eq))
        hi += list(map(float, b_eq))
    A = sp.csr_matrix(np.vstack(blocks)) if blocks else sp.csr_matrix((0, n))
    bounds = bounds if bounds is not None else [(0.0, 1.0)] * n
    col_lo = np.array([b[0] for b in bounds], float)
    col_hi = np.array([b[1] for b in bounds], float)
    return CompiledProblem([f"x{k}" for k in range(n)], c, col_lo, col_hi, A, np.array(lo, float),
                           np.array(hi, float), [f"r{k}" for k in range(len(lo))],
                           np.array(sorted(binary), dtype=int))


def _as_compiled(problem) -> CompiledProblem:
    return problem if isinstance(problem, CompiledProblem) else compile_problem(problem)


@dataclass
class LPSolution:
    status: str  # optimal | infeasible | unbounded
    x: np.ndarray | None
    objective: float
    active_rows: tuple = ()
    names: list = field(default_factory=list, repr=False)

    @property
    def values(self) -> dict:
        return dict(zip(self.names, map(float, self.x))) if self.x is not None else {}


@dataclass
class MIPSolution:
    status: str  # optimal | limit
    x: np.ndarray
    objective: float
    node_count: int
    wall_time: float
    bound: float = -np.inf
    names: list = field(default_factory=list, repr=False)
    active_rows: tuple = ()

    @property
    def values(self) -> dict:
        return dict(zip(self.names, map(float, self.x)))

    @property
    def gap(self) -> float:
        return max(0.0, self.objective - self.bound)


@dataclass(frozen=True)
class IntegerStrategy:
    z_star: tuple  # ((name, 0|1), ...) state and slot binaries
    n_star: tuple  # ((name, 0|1), ...) cell code binaries
    active_set: frozenset = frozenset()

    def binaries(self) -> dict:
        return dict(self.z_star + self.n_star)

    def key(self) -> tuple:
        """Integer assignment identifying the strategy."""
        return tuple(v for _, v in self.z_star) + tuple(v for _, v in self.n_star)


class LPSession:
    """One HiGHS model kept alive while column bounds change between solves."""

    def __init__(self, problem, feas_tol: float = 1e-9, mip: bool = False):
        self.problem = _as_compiled(problem)
        p = self.problem
        self.h = highspy.Highs()
        self.h.setOptionValue("output_flag", False)
        self.h.setOptionValue("threads", 1)
        self.h.setOptionValue("random_seed", 0)
        self.h.setOptionValue("primal_feasibility_tolerance", feas_tol)
        self.h.setOptionValue("dual_feasibility_tolerance", feas_tol)
        lp = highspy.HighsLp()
        lp.num_col_ = len(p.names)
        lp.num_row_ = len(p.row_lo)
        lp.col_cost_ = p.c
        lp.col_lower_ = p.col_lo
        lp.col_upper_ = p.col_hi
        lp.row_lower_ = p.row_lo
        lp.row_upper_ = p.row_hi
        A = p.A.tocsc()
        lp.a_matrix_.format_ = highspy.MatrixFormat.kColwise
        lp.a_matrix_.start_ = A.indptr
        lp.a_matrix_.index_ = A.indices
        lp.a_matrix_.value_ = A.data
        if mip and len(p.binary_idx):
            integrality = np.zeros(len(p.names), dtype=np.int32)
            integrality[p.binary_idx] = 1
            lp.integrality_ = [highspy.HighsVarType(int(t)) for t in integrality]
        self.h.passModel(lp)
        self.lo = p.col_lo.copy()
        self.hi = p.col_hi.copy()

    def set_bounds(self, idx: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> None:
        idx = np.asarray(idx, dtype=np.int32)
        if len(idx) == 0:
            return
        self.lo[idx] = lo
        self.hi[idx] = hi
        self.h.changeColsBounds(len(idx), idx, np.asarray(lo, float), np.asarray(hi, float))

    def fix(self, values: Mapping[str, float]) -> None:
        idx = np.array([self.problem.index[n] for n in values], dtype=np.int32)
        v = np.array([float(values[n]) for n in values])
        self.set_bounds(idx, v, v)

    def reset_binaries(self) -> None:
        b = self.problem.binary_idx
        self.set_bounds(b, self.problem.col_lo[b], self.problem.col_hi[b])

    def run(self, active_tol: float = 1e-6, time_limit: float | None = None) -> LPSolution:
        p = self.problem
        if time_limit is not None:
            self.h.setOptionValue("time_limit", float(max(time_limit, 1e-3)))
        status = self._solve()
        if status == MS.kOptimal:
            x = np.clip(np.array(self.h.getSolution().col_value), self.lo, self.hi)
            return LPSolution("optimal", x, float(p.c @ x), self._active(x, active_tol), p.names)
        if status == MS.kInfeasible:
            return LPSolution("infeasible", None, np.inf, (), p.names)
        if status in (MS.kUnbounded, MS.kUnboundedOrInfeasible):
            return LPSolution("unbounded", None, -np.inf, (), p.names)
        if status == MS.kTimeLimit:
            raise LimitReached("time limit inside HiGHS")
        raise NumericalFailure(f"HiGHS returned {self.h.modelStatusToString(status)}")

    def _solve(self):
        self.h.run()
        status = self.h.getModelStatus()
        if status in (MS.kOptimal, MS.kInfeasible, MS.kUnbounded, MS.kTimeLimit):
            return status
        # bounded refinement: cold start without presolve, then with the primal simplex
        for opts in ({"presolve": "off"}, {"presolve": "off", "simplex_strategy": 4}):
            self.h.clearSolver()
            for k, v in opts.items():
                self.h.setOptionValue(k, v)
            self.h.run()
            status = self.h.getModelStatus()
            for k in opts:
                self.h.setOptionValue(k, "choose" if k == "presolve" else 1)
            if status in (MS.kOptimal, MS.kInfeasible, MS.kUnbounded):
                return status
        return status

    def _active(self, x: np.ndarray, tol: float) -> tuple:
        p = self.problem
        ax = p.A @ x
        ineq = p.inequality_rows
        slack = np.minimum(p.row_hi[ineq] - ax[ineq], ax[ineq] - p.row_lo[ineq])
        return tuple(p.row_names[r] for r in ineq[slack < tol])


def solve_lp(problem, active_tol: float = 1e-6) -> LPSolution:
    """Continuous relaxation (binaries relaxed to [0, 1])."""
    return LPSession(problem).run(active_tol)


def _fractionality(x: np.ndarray, idx: np.ndarray) -> np.ndarray:
    return np.abs(x[idx] - np.round(x[idx]))


def _polish(session: LPSession, x: np.ndarray) -> LPSolution:
    """Re-solve with binaries fixed at their rounded values."""
    b = session.problem.binary_idx
    r = np.round(x[b])
    session.set_bounds(b, r, r)
    sol = session.run()
    if sol.status != "optimal":
        raise NumericalFailure("rounded incumbent became infeasible on re-solve")
    sol.x[b] = r
    return sol


class PlacementRounding:
    """Primal heuristic for gridded bookshelf MICPs.

    Keeps the stored books at their reference poses, places the insert book
    geometrically for each (slot, state) ranked by the node's LP values, reads
    planes and cells off the exact scene and re-solves with every binary fixed.
    """

    def __init__(self, p: CompiledProblem, max_tries: int = 15):
        from .scene import classify_state

        meta = p.spec.meta
        self.p = p
        self.minlp = meta["minlp"]
        self.instance = meta["instance"]
        self.encodings = meta["encodings"]
        self.grid = meta["grid"]
        self.pos = {p.names[k]: j for j, k in enumerate(p.binary_idx)}
        self.state_vars = meta["state_vars"]
        self.slot_vars = meta["slot_vars"]
        self.stored_states = [classify_state(pose.theta) for pose in self.instance.stored_poses]
        self.max_tries = max_tries

    @staticmethod
    def applies(p: CompiledProblem) -> bool:
        return p.spec is not None and "encodings" in p.spec.meta and "instance" in p.spec.meta

    def _ranked(self, names, xb, lo, hi):
        js = [self.pos[n] for n in names]
        ok = [k for k, j in enumerate(js) if hi[j] > 0.5]
        return sorted(ok, key=lambda k: (-xb[js[k]], k))

    def __call__(self, x: np.ndarray, lo: np.ndarray, hi: np.ndarray, solve) -> LPSolution | None:
        from .envelope import code_of
        from .formulation import scene_assignment
        from .scene import STATES, SceneSolution, place_insert

        xb = x[self.p.binary_idx]
        ins = len(self.state_vars) - 1
        for i, st in enumerate(self.stored_states):
            j = self.pos[self.state_vars[i][STATES.index(st)]]
            if hi[j] < 0.5:
                return None
        stored = self.instance.stored_poses
        tries = 0
        for slot in self._ranked(self.slot_vars, xb, lo, hi):
            for k in self._ranked(self.state_vars[ins], xb, lo, hi):
                if tries >= self.max_tries:
                    return None
                pose = place_insert(self.instance, stored, slot, STATES[k])
                if pose is None:
                    continue
                tries += 1
                labels = tuple(self.stored_states) + (STATES[k],)
                vals = scene_assignment(self.minlp, SceneSolution(tuple(stored) + (pose,), labels))
                if vals is None:
                    continue
                fixed = self._fix(vals, lo, hi, code_of)
                if fixed is None:
                    continue
                sol = solve(*fixed)
                if sol.status == "optimal":
                    return sol
        return None

    def _fix(self, vals, lo, hi, code_of):
        lo, hi = lo.copy(), hi.copy()
        target = {}
        for row in self.state_vars:
            for n in row:
                target[n] = vals[n]
        for n in self.slot_vars:
            target[n] = vals[n]
        for name, enc in self.encodings.items():
            cells = [c for c in self.grid.axis(name).containing(vals) if c in enc.cells]
            if not cells:
                return None
            for z, bit in zip(enc.z, code_of(enc.cells.index(cells[0]), len(enc.z))):
                target[z] = float(bit)
        for n, v in target.items():
            j = self.pos[n]
            if v < lo[j] or v > hi[j]:
                return None
            lo[j] = hi[j] = v
        return lo, hi


def branch_and_bound(problem, time_limit: float | None = None, node_limit: int | None = None,
                     engine: str = "native", raise_on_limit: bool = True, heuristic="auto",
                     heuristic_every: int = 10) -> MIPSolution:
    """Minimise over binaries.  Raises Infeasible, or LimitReached carrying the incumbent.

    ``heuristic`` is a callable ``(x, lo, hi, solve) -> LPSolution | None``
    tried at the root and then every ``heuristic_every`` branchings while no
    incumbent exists; ``"auto"`` picks PlacementRounding for gridded bookshelf models.
    """
    p = _as_compiled(problem)
    if engine == "highs":
        return _highs_mip(p, time_limit, node_limit, raise_on_limit)
    if heuristic == "auto":
        heuristic = PlacementRounding(p) if PlacementRounding.applies(p) else None
    t0 = time.perf_counter()
    session = LPSession(p)
    b = p.binary_idx
    base_lo, base_hi = p.col_lo[b].copy(), p.col_hi[b].copy()

    def evaluate(lo, hi):
        session.set_bounds(b, lo, hi)
        return session.run()

    best: LPSolution | None = None
    best_obj = np.inf
    nodes = 1
    root = evaluate(base_lo, base_hi)
    if root.status == "unbounded":
        raise NumericalFailure("relaxation is unbounded")
    heap: list = []
    seq = 0
    root_bound = root.objective

    def consider(sol, lo, hi, depth):
        nonlocal best, best_obj, seq
        if sol.status != "optimal" or sol.objective >= best_obj - 1e-9:
            return
        frac = _fractionality(sol.x, b)
        if len(b) == 0 or frac.max() <= INT_TOL:
            polished = _polish(session, sol.x)
            if polished.objective < best_obj:
                best, best_obj = polished, polished.objective
            return
        heapq.heappush(heap, (sol.objective, -depth, seq, lo, hi, sol.x))
        seq += 1

    def try_heuristic(x, lo, hi):
        nonlocal best, best_obj
        sol = heuristic(x, lo, hi, evaluate)
        if sol is not None and sol.objective < best_obj - 1e-9:
            polished = _polish(session, sol.x)
            if polished.objective < best_obj:
                best, best_obj = polished, polished.objective

    consider(root, base_lo, base_hi, 0)
    limit_hit = False
    branched = 0
    while heap:
        bound, negd, _, lo, hi, x = heapq.heappop(heap)
        if bound >= best_obj - 1e-9:
            continue
        if heuristic is not None and best is None and branched % heuristic_every == 0:
            try_heuristic(x, lo, hi)
            if bound >= best_obj - 1e-9:
                continue
        branched += 1
        if (time_limit is not None and time.perf_counter() - t0 > time_limit) or \
                (node_limit is not None and nodes >= node_limit):
            heapq.heappush(heap, (bound, negd, -1, lo, hi, x))
            limit_hit = True
            break
        frac = _fractionality(x, b)
        j = int(np.argmax(frac))  # first index among ties
        for val in (np.floor(x[b[j]]), np.ceil(x[b[j]])):
            clo, chi = lo.copy(), hi.copy()
            clo[j] = chi[j] = val
            nodes += 1
            consider(evaluate(clo, chi), clo, chi, -negd + 1)
    wall = time.perf_counter() - t0
    if limit_hit:
        lower = min(h[0] for h in heap) if heap else root_bound
        inc = None
        if best is not None:
            inc = MIPSolution("limit", best.x, best.objective, nodes, wall, min(lower, best.objective), p.names,
                              best.active_rows)
        if raise_on_limit or inc is None:
            raise LimitReached(f"limit reached after {nodes} nodes", inc)
        return inc
    if best is None:
        raise Infeasible("no integral solution")
    return MIPSolution("optimal", best.x, best.objective, nodes, wall, best.objective, p.names, best.active_rows)


def _highs_mip(p: CompiledProblem, time_limit, node_limit, raise_on_limit) -> MIPSolution:
    t0 = time.perf_counter()
    session = LPSession(p, feas_tol=1e-9, mip=True)
    h = session.h
    h.setOptionValue("mip_rel_gap", 0.0)
    h.setOptionValue("mip_abs_gap", 1e-9)
    h.setOptionValue("mip_feasibility_tolerance", 1e-9)
    if time_limit is not None:
        h.setOptionValue("time_limit", float(time_limit))
    if node_limit is not None:
        h.setOptionValue("mip_max_nodes", int(node_limit))
    h.run()
    status = h.getModelStatus()
    info = h.getInfo()
    nodes = int(info.mip_node_count)
    if status == MS.kInfeasible:
        raise Infeasible("no integral solution")
    has_sol = info.primal_solution_status == 2
    if status != MS.kOptimal and not has_sol:
        if status in (MS.kTimeLimit, MS.kSolutionLimit) or nodes >= (node_limit or np.inf):
            raise LimitReached(f"limit reached after {nodes} nodes", None)
        raise NumericalFailure(f"HiGHS MIP returned {h.modelStatusToString(status)}")
    x = np.array(h.getSolution().col_value)
    lp = LPSession(p)
    polished = _polish(lp, x)
    wall = time.perf_counter() - t0
    if status == MS.kOptimal:
        return MIPSolution("optimal", polished.x, polished.objective, nodes, wall, polished.objective, p.names,
                           polished.active_rows)
    inc = MIPSolution("limit", polished.x, polished.objective, nodes, wall, float(info.mip_dual_bound), p.names,
                      polished.active_rows)
    if raise_on_limit:
        raise LimitReached(f"limit reached after {nodes} nodes", inc)
    return inc


def extract_strategy(sol: MIPSolution | LPSolution, problem, tol: float = 1e-6) -> IntegerStrategy:
    """Rounded binaries plus the inequality rows with slack below ``tol``."""
    p = _as_compiled(problem)
    x = sol.x
    b = p.binary_idx
    if len(b) and _fractionality(x, b).max() > 1e-6:
        worst = b[int(np.argmax(_fractionality(x, b)))]
        raise NonIntegral(f"binary {p.names[worst]} = {x[worst]}")
    ints = set(integer_vars(p.spec)) if p.spec is not None and "state_vars" in p.spec.meta else set()
    z = tuple((p.names[k], int(round(x[k]))) for k in b if p.names[k] in ints)
    n = tuple((p.names[k], int(round(x[k]))) for k in b if p.names[k] not in ints)
    ax = p.A @ x
    ineq = p.inequality_rows
    slack = np.minimum(p.row_hi[ineq] - ax[ineq], ax[ineq] - p.row_lo[ineq])
    active = frozenset(p.row_names[r] for r in ineq[slack < tol])
    return IntegerStrategy(z, n, active)


class StrategySolver:
    """Set up once, then solve the LP left after fixing each candidate's binaries."""

    def __init__(self, problem):
        self.session = LPSession(problem)
        self.problem = self.session.problem

    def solve(self, binaries: Mapping[str, float] | IntegerStrategy) -> LPSolution:
        if isinstance(binaries, IntegerStrategy):
            binaries = binaries.binaries()
        p = self.problem
        missing = [p.names[k] for k in p.binary_idx if p.names[k] not in binaries]
        if missing:
            raise ValueError(f"strategy leaves binaries free: {missing[:3]}")
        self.session.fix(binaries)
        sol = self.session.run()
        if sol.status != "optimal":
            raise Infeasible("strategy yields an infeasible problem")
        return sol


def solve_with_strategy(problem, strategy: IntegerStrategy | Mapping[str, float]) -> LPSolution:
    return StrategySolver(problem).solve(strategy)
