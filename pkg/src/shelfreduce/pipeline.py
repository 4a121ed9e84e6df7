"""Kick-off solving, solution clustering, reduced-grid data expansion, strategy learning and evaluation."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .envelope import (ClusterGrid, Grid, GridConfig, admits, assign_cluster_grid, binary_count, make_grid,
                       recover_full_integers, relax_to_micp, selected_cells)
from .errors import DegenerateLabels, EmptyDataset, Infeasible, LimitReached, NumericalFailure
from .formulation import (BINARY, ProblemSpec, build_minlp, check_assignment, integer_vars, objective_value,
                          scene_assignment)
from .learning import (NOISE, ForestModel, StrategyLibrary, StrategyNet, baseline_sample, dbscan, elbow_eps,
                       net_top_k, standardize, train_forest, train_strategy_net)
from .scene import STATES, BookPose, SamplerConfig, SceneSolution, ShelfInstance, encode_features, sample_instance
from .solver import IntegerStrategy, StrategySolver, branch_and_bound, compile_problem, CompiledProblem

log = logging.getLogger(__name__)

KICKOFF_OFFSET = 0
EXPAND_OFFSET = 200_000
HOLDOUT_OFFSET = 900_000


@dataclass
class PipelineConfig:
    kick_off: int = 200
    eps: float | None = None  # None: k-distance elbow
    min_pts: int = 4
    d_c: int = 100
    n_books: int = 3
    shelf_width: float = 360.0
    shelf_height: float = 220.0
    theta_step: float = math.pi / 4
    a_step: float = 0.25
    v_frac_x: float = 0.25
    v_frac_y: float = 0.25
    rf_trees: int = 150
    hidden: int = 512
    epochs: int = 200
    lr: float = 1e-3
    batch: int = 64
    top_k: int = 10
    holdout: int = 50
    time_limit: float | None = 60.0
    node_limit: int | None = None
    engine: str = "native"
    max_expansion_draws: int = 20_000
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if self.kick_off and self.kick_off < self.min_pts:
            raise ValueError("kick_off must be at least min_pts")

    @property
    def grid_config(self) -> GridConfig:
        return GridConfig(self.theta_step, self.a_step, self.v_frac_x, self.v_frac_y)

    @property
    def sampler(self) -> SamplerConfig:
        return SamplerConfig(shelf_width=self.shelf_width, shelf_height=self.shelf_height, n_books=self.n_books)

    def instance_seed(self, offset: int, k: int) -> int:
        return self.seed * 1_000_000 + offset + k

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if isinstance(d.get("theta_step"), str):
            from .envelope import eval_pi
            d["theta_step"] = eval_pi(d["theta_step"])
        return cls(**d)


# ---------------------------------------------------------------------------
# single-instance solving


@dataclass
class Prepared:
    instance: ShelfInstance
    spec: ProblemSpec
    grid: Grid
    micp: ProblemSpec
    problem: CompiledProblem


def prepare(instance: ShelfInstance, cfg: PipelineConfig, cluster: ClusterGrid | None = None) -> Prepared:
    spec = build_minlp(instance)
    grid = make_grid(spec, cfg.grid_config)
    micp = relax_to_micp(spec, grid, cluster)
    return Prepared(instance, spec, grid, micp, compile_problem(micp))


@dataclass
class SolveResult:
    binaries: dict  # full-space state, slot and code binaries
    cells: dict
    point: dict  # gridded and integer variable values
    objective: float
    time: float
    nodes: int


def solve_instance(instance: ShelfInstance, cfg: PipelineConfig, cluster: ClusterGrid | None = None) -> SolveResult | None:
    """Optimal (or best found) MICP solution in full-space coordinates; None when nothing feasible is found."""
    t0 = time.perf_counter()
    prep = prepare(instance, cfg, cluster)
    try:
        sol = branch_and_bound(prep.problem, cfg.time_limit, cfg.node_limit, cfg.engine, raise_on_limit=False)
    except (Infeasible, NumericalFailure):
        return None
    except LimitReached as exc:
        if exc.incumbent is None:
            return None
        sol = exc.incumbent
    elapsed = time.perf_counter() - t0
    values = sol.values
    binaries = recover_full_integers(values, prep.micp)
    keep = {v for a in prep.grid.axes for v in a.vars} | set(integer_vars(prep.spec))
    point = {k: values[k] for k in keep}
    return SolveResult(binaries, selected_cells(prep.micp, values), point, sol.objective, elapsed, sol.node_count)


def code_names(grid: Grid) -> list[str]:
    from .envelope import code_length
    return [f"code[{a.name}|{l}]" for a in grid.axes for l in range(code_length(a.n_cells))]


def integer_names(n_books: int) -> list[str]:
    return [f"z[{i},{s}]" for i in range(n_books) for s in range(1, 6)] + [f"slot[{s}]" for s in range(n_books)]


def strategy_from_binaries(binaries: dict, grid: Grid, n_books: int) -> IntegerStrategy:
    z = tuple((n, int(round(binaries[n]))) for n in integer_names(n_books))
    c = tuple((n, int(round(binaries[n]))) for n in code_names(grid))
    return IntegerStrategy(z, c)


def clustering_vector(point: dict, grid: Grid) -> np.ndarray:
    return np.array([a.coordinate(point) for a in grid.axes])


# ---------------------------------------------------------------------------
# data


@dataclass
class DatasetRecord:
    seed: int
    theta: list
    x: list  # clustering coordinates of the solution
    binaries: dict
    cells: dict
    point: dict
    cluster: int
    objective: float
    solve_time: float
    source: str = "kickoff"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetRecord":
        d = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**d)


def _solve_seed(args):
    seed, cfg, cluster = args
    inst = sample_instance(seed, cfg.sampler)
    return seed, inst, solve_instance(inst, cfg, cluster)


def _pmap(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _record(seed, inst, res: SolveResult, grid: Grid, cluster: int, source: str) -> DatasetRecord:
    return DatasetRecord(seed, encode_features(inst, len(inst.stored_books)).tolist(),
                         clustering_vector(res.point, grid).tolist(), res.binaries, res.cells, res.point, cluster,
                         res.objective, res.time, source)


def reference_grid(cfg: PipelineConfig) -> Grid:
    inst = sample_instance(cfg.instance_seed(KICKOFF_OFFSET, 0), cfg.sampler)
    return make_grid(build_minlp(inst), cfg.grid_config)


def collect_kickoff(cfg: PipelineConfig, count: int | None = None) -> list[DatasetRecord]:
    """``count`` instances solved with the full MICP; unsolved draws are replaced by fresh ones."""
    count = cfg.kick_off if count is None else count
    if count <= 0:
        return []
    grid = reference_grid(cfg)
    out: list[DatasetRecord] = []
    k = 0
    batch = max(1, cfg.jobs) * 4
    while len(out) < count and k < 3 * count + 10:
        seeds = [cfg.instance_seed(KICKOFF_OFFSET, j) for j in range(k, k + batch)]
        k += batch
        for seed, inst, res in _pmap(_solve_seed, [(s, cfg, None) for s in seeds], cfg.jobs):
            if res is None:
                log.warning("kick-off seed %d: no solution, resampling", seed)
                continue
            if len(out) < count:
                out.append(_record(seed, inst, res, grid, NOISE, "kickoff"))
    if len(out) < count:
        log.warning("kick-off budget exhausted with %d of %d records", len(out), count)
    return out


# ---------------------------------------------------------------------------
# clustering and classification


def cluster_kickoff(records: list[DatasetRecord], eps: float | None, min_pts: int) -> tuple[np.ndarray, float]:
    if not records:
        raise EmptyDataset("no kick-off data to cluster")
    Xs, _, _ = standardize(np.array([r.x for r in records]))
    eps = eps if eps is not None else elbow_eps(Xs, min_pts)
    return dbscan(Xs, eps, min_pts), eps


@dataclass
class ClusterClassifier:
    """Random forest over features; a single cluster needs no forest."""

    forest: ForestModel | None
    only: int | None = None

    def ranked(self, theta) -> list[int]:
        if self.forest is None:
            return [self.only]
        v = self.forest.votes(np.asarray(theta, float).reshape(1, -1))[0]
        order = sorted(range(len(v)), key=lambda c: (-v[c], self.forest.classes[c]))
        return [int(self.forest.classes[c]) for c in order]


def train_classifier(records: list[DatasetRecord], n_trees: int, seed: int) -> ClusterClassifier:
    X = np.array([r.theta for r in records])
    y = np.array([r.cluster for r in records])
    try:
        return ClusterClassifier(train_forest(X, y, n_trees, seed))
    except DegenerateLabels:
        return ClusterClassifier(None, int(y[0]))


@dataclass
class ReduceArtifacts:
    config: PipelineConfig
    grid: Grid
    eps: float
    clusters: dict  # id -> ClusterGrid
    cluster_ints: dict  # id -> free binaries of the reduced MICP
    full_ints: int
    classifier: ClusterClassifier
    library: StrategyLibrary
    net: StrategyNet | None
    records: list  # cluster datasets S_c (kick-off members and expansion)
    outliers: list
    timings: dict = field(default_factory=dict)

    def admissible_labels(self, cluster: int | None) -> list[int]:
        if cluster is None:
            return self.library.labels()
        cg = self.clusters[cluster]
        return [l for l in self.library.labels() if admits(cg, self.grid, self.library.strategy(l).binaries())]


def build_cluster_grids(records: list[DatasetRecord], grid: Grid, n_books: int) -> dict:
    out = {}
    names = integer_names(n_books)
    for c in sorted({r.cluster for r in records}):
        members = [r for r in records if r.cluster == c]
        out[c] = assign_cluster_grid([r.point for r in members], grid, [r.cells for r in members], names)
    return out


def reduced_binary_count(cfg: PipelineConfig, cluster: ClusterGrid | None) -> int:
    inst = sample_instance(cfg.instance_seed(KICKOFF_OFFSET, 0), cfg.sampler)
    spec = build_minlp(inst)
    return binary_count(relax_to_micp(spec, make_grid(spec, cfg.grid_config), cluster))


def expand(cfg: PipelineConfig, classifier: ClusterClassifier, clusters: dict, counts: dict,
           grid: Grid) -> list[DatasetRecord]:
    """Sample, classify and solve reduced problems until every cluster holds ``d_c`` records."""
    out = []
    counts = dict(counts)
    draws = 0
    batch = max(1, cfg.jobs) * 4
    while any(counts[c] < cfg.d_c for c in clusters) and draws < cfg.max_expansion_draws:
        seeds = [cfg.instance_seed(EXPAND_OFFSET, j) for j in range(draws, min(draws + batch, cfg.max_expansion_draws))]
        draws += len(seeds)
        jobs = []
        for s in seeds:
            inst = sample_instance(s, cfg.sampler)
            ranked = classifier.ranked(encode_features(inst, len(inst.stored_books)))
            ranked = [c for c in ranked if counts[c] < cfg.d_c][:2]
            if ranked:
                jobs.append((s, inst, ranked))
        results = _pmap(_expand_one, [(s, cfg, [(c, clusters[c]) for c in r]) for s, _, r in jobs], cfg.jobs)
        for (s, inst, _), (c, res) in zip(jobs, results):
            if res is None or counts[c] >= cfg.d_c:
                continue
            counts[c] += 1
            out.append(_record(s, inst, res, grid, c, "expansion"))
    short = {c: n for c, n in counts.items() if n < cfg.d_c}
    if short:
        log.warning("expansion stopped after %d draws; clusters below d_c: %s", draws, short)
    return out


def _expand_one(args):
    seed, cfg, options = args
    inst = sample_instance(seed, cfg.sampler)
    # classified cluster first, then one retry in the runner-up
    for c, cg in options:
        res = solve_instance(inst, cfg, cg)
        if res is not None:
            return c, res
    return options[0][0], None


def train_learner(records: list[DatasetRecord], grid: Grid, cfg: PipelineConfig):
    library = StrategyLibrary()
    labels = [library.add(strategy_from_binaries(r.binaries, grid, cfg.n_books)) for r in records]
    X = np.array([r.theta for r in records])
    net = train_strategy_net(X, np.array(labels), len(library), cfg.hidden, cfg.epochs, cfg.lr, cfg.batch,
                             rng_seed=cfg.seed + 7)
    return library, net


def run_reduce(cfg: PipelineConfig, kickoff: list[DatasetRecord] | None = None) -> ReduceArtifacts:
    """Kick-off, clustering, classifier, data expansion on reduced grids, strategy learner."""
    timings = {}
    t = time.perf_counter()
    kick = kickoff if kickoff is not None else collect_kickoff(cfg)
    timings["kickoff"] = time.perf_counter() - t
    grid = reference_grid(cfg)

    t = time.perf_counter()
    labels, eps = cluster_kickoff(kick, cfg.eps, cfg.min_pts)
    for r, l in zip(kick, labels):
        r.cluster = int(l)
    members = [r for r in kick if r.cluster != NOISE]
    outliers = [r for r in kick if r.cluster == NOISE]
    if not members:
        raise EmptyDataset(f"DBSCAN found no clusters (eps={eps:.4g}, min_pts={cfg.min_pts})")
    classifier = train_classifier(members, cfg.rf_trees, cfg.seed + 3)
    clusters = build_cluster_grids(members, grid, cfg.n_books)
    timings["cluster"] = time.perf_counter() - t
    log.info("%d clusters, %d outliers, eps=%.4g", len(clusters), len(outliers), eps)

    t = time.perf_counter()
    counts = {c: sum(r.cluster == c for r in members) for c in clusters}
    extra = expand(cfg, classifier, clusters, counts, grid)
    timings["expand"] = time.perf_counter() - t

    t = time.perf_counter()
    records = members + extra
    library, net = train_learner(records, grid, cfg)
    timings["train"] = time.perf_counter() - t
    return ReduceArtifacts(cfg, grid, eps, clusters, {c: reduced_binary_count(cfg, cg) for c, cg in clusters.items()},
                           reduced_binary_count(cfg, None), classifier, library, net, records, outliers, timings)


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalMetrics:
    success_rate: float
    det: float
    avg_time: float
    max_time: float
    n: int = 0


@dataclass
class Reference:
    seed: int
    instance: ShelfInstance
    theta: np.ndarray
    cluster: int | None
    result: SolveResult | None


def holdout_instances(cfg: PipelineConfig, n: int | None = None) -> list[tuple[int, ShelfInstance]]:
    n = cfg.holdout if n is None else n
    return [(s, sample_instance(s, cfg.sampler)) for s in (cfg.instance_seed(HOLDOUT_OFFSET, j) for j in range(n))]


def _reference_one(args):
    seed, inst, cfg, options = args
    for c, cg in options:
        res = solve_instance(inst, cfg, cg)
        if res is not None:
            return c, res
    return None, solve_instance(inst, cfg, None)


def reference_solutions(art: ReduceArtifacts, instances) -> list[Reference]:
    """Reduced-MIP optimum in the classified cluster (runner-up once), falling back to the full MICP."""
    cfg = art.config
    jobs = []
    for seed, inst in instances:
        theta = encode_features(inst, len(inst.stored_books))
        ranked = art.classifier.ranked(theta)[:2]
        jobs.append((seed, inst, cfg, [(c, art.clusters[c]) for c in ranked]))
    out = []
    for (seed, inst, _, _), (c, res) in zip(jobs, _pmap(_reference_one, jobs, cfg.jobs)):
        out.append(Reference(seed, inst, encode_features(inst, len(inst.stored_books)), c, res))
    return out


def candidate_labels(art: ReduceArtifacts, ref: Reference, k: int, method: str, seed: int = 0) -> list[int]:
    pool = art.admissible_labels(ref.cluster)
    if method == "learner":
        ranked = net_top_k(art.net, ref.theta, len(art.library))
        allowed = set(pool)
        return [l for l in ranked if l in allowed][:max(0, k)]
    if method == "baseline":
        return baseline_sample(art.library, k, seed, pool=pool)
    raise ValueError(f"unknown method {method!r}")


def try_candidates(instance: ShelfInstance, cfg: PipelineConfig, strategies: list[IntegerStrategy]):
    """Set the problem up once and solve candidates in order until one is feasible.

    Returns ``(rank or None, objective, seconds)``; the time includes the setup.
    """
    t0 = time.perf_counter()
    if not strategies:
        return None, math.nan, time.perf_counter() - t0
    prep = prepare(instance, cfg)
    solver = StrategySolver(prep.problem)
    for rank, s in enumerate(strategies):
        try:
            sol = solver.solve(s.binaries())
        except Infeasible:
            continue
        return rank, sol.objective, time.perf_counter() - t0
    return None, math.nan, time.perf_counter() - t0


@dataclass
class InstanceResult:
    seed: int
    cluster: int | None
    success: bool
    rank: int | None
    objective: float
    reference: float
    det: float
    time: float


def evaluate(art: ReduceArtifacts, references: list[Reference], k: int | None = None, method: str = "learner",
             seed: int = 0) -> tuple[EvalMetrics, list[InstanceResult]]:
    """Top-k candidates per holdout instance, solved in rank order until the first feasible one."""
    k = art.config.top_k if k is None else k
    rows = []
    for j, ref in enumerate(references):
        labels = candidate_labels(art, ref, k, method, seed + j)
        strategies = [art.library.strategy(l) for l in labels]
        rank, obj, secs = try_candidates(ref.instance, art.config, strategies)
        ref_obj = ref.result.objective if ref.result is not None else math.nan
        ok = rank is not None
        rows.append(InstanceResult(ref.seed, ref.cluster, ok, rank, obj, ref_obj, obj - ref_obj if ok else math.nan,
                                   secs))
    return summarize(rows), rows


def summarize(rows: list[InstanceResult]) -> EvalMetrics:
    if not rows:
        return EvalMetrics(math.nan, math.nan, math.nan, math.nan, 0)
    ok = [r for r in rows if r.success]
    dets = [r.det for r in ok if not math.isnan(r.det)]
    times = [r.time for r in rows]
    return EvalMetrics(len(ok) / len(rows), float(np.mean(dets)) if dets else math.nan, float(np.mean(times)),
                       float(np.max(times)), len(rows))


def metrics_rows(art: ReduceArtifacts, rows: list[InstanceResult]) -> list[dict]:
    """Per-cluster table rows plus an ``all`` row."""
    out = []
    groups = [(c, [r for r in art.records if r.cluster == c], [x for x in rows if x.cluster == c])
              for c in sorted(art.clusters)]
    groups.append(("all", art.records, rows))
    for c, recs, res in groups:
        keys = {strategy_from_binaries(r.binaries, art.grid, art.config.n_books).key() for r in recs}
        m = summarize(res)
        out.append({
            "cluster": c,
            "n_total": len(recs),
            "unique_frac": round(len(keys) / len(recs), 6) if recs else math.nan,
            "ints": art.cluster_ints[c] if c != "all" else art.full_ints,
            "s_pct": round(100 * m.success_rate, 4),
            "det": m.det,
            "avg_s": m.avg_time,
            "max_s": m.max_time,
        })
    return out


def compare_solve_times(art: ReduceArtifacts, references: list[Reference], n: int = 20) -> list[tuple[float, float]]:
    """(full MIP seconds, reduced MIP seconds) on instances where both solve."""
    out = []
    for ref in references:
        if len(out) >= n:
            break
        if ref.cluster is None or ref.result is None:
            continue
        full = solve_instance(ref.instance, art.config, None)
        red = solve_instance(ref.instance, art.config, art.clusters[ref.cluster])
        if full is not None and red is not None:
            out.append((full.time, red.time))
    return out


# ---------------------------------------------------------------------------
# scene recovery


def scene_from_values(spec: ProblemSpec, values: dict) -> SceneSolution:
    """Poses from position and (normalised) rotation variables; states from the one-hot binaries."""
    inst: ShelfInstance = spec.meta["instance"]
    poses, labels = [], []
    for i, book in enumerate(inst.books):
        c, s = values[f"cos[{i}]"], values[f"sin[{i}]"]
        r = math.hypot(c, s) or 1.0
        poses.append(BookPose.from_rotation(book, values[f"x[{i}]"], values[f"y[{i}]"], c / r, s / r))
        on = [k for k in range(1, 6) if values[f"z[{i},{k}]"] > 0.5]
        labels.append(STATES[on[0] - 1] if on else "upright")
    return SceneSolution(tuple(poses), tuple(labels))


def refine_minlp(spec: ProblemSpec, values: dict, maxiter: int = 200) -> tuple[dict, float]:
    """Turn a relaxed solution into a point of the bilinear model.

    The relaxed scene is rebuilt exactly (separating lines searched
    geometrically); if that fails, a local SLSQP pass restores the products
    with every binary held fixed. Returns the point and its largest violation.
    """
    exact = scene_assignment(spec, scene_from_values(spec, values))
    if exact is not None:
        bad = check_assignment(spec, exact, tol=0.0)
        viol = max((amt for _, _, amt in bad), default=0.0)
        if viol <= 1e-6:
            return exact, viol
    return _slsqp_refine(spec, values, maxiter)


def _slsqp_refine(spec: ProblemSpec, values: dict, maxiter: int) -> tuple[dict, float]:
    from scipy.optimize import minimize

    cont = [v for v in spec.variables if v.kind != BINARY]
    idx = {v.name: k for k, v in enumerate(cont)}
    fixed = {v.name: float(round(values[v.name])) for v in spec.binaries}
    n = len(cont)
    A_ub, b_ub, A_eq, b_eq = [], [], [], []
    for con in spec.linear_constraints:
        if con.gate is not None and con.gate.slack(fixed) > 0.5:
            continue
        row, rhs = np.zeros(n), con.rhs
        for name, c in con.terms:
            if name in idx:
                row[idx[name]] += c
            else:
                rhs -= c * fixed[name]
        (A_eq if con.sense == "=" else A_ub).append(row)
        (b_eq if con.sense == "=" else b_ub).append(rhs)
    triples = [(idx[w], idx[u], idx[v]) for w, u, v in spec.triples()]
    c = np.zeros(n)
    for name, coef in spec.objective:
        c[idx[name]] += coef

    def eq(x):
        out = [np.asarray(A_eq) @ x - b_eq] if A_eq else []
        out.append(np.array([x[w] - x[u] * x[v] for w, u, v in triples]))
        return np.concatenate(out)

    def eq_jac(x):
        J = np.zeros((len(triples), n))
        for r, (w, u, v) in enumerate(triples):
            J[r, w] += 1.0
            J[r, u] -= x[v]
            J[r, v] -= x[u]
        return np.vstack([np.asarray(A_eq), J]) if A_eq else J

    cons = [{"type": "eq", "fun": eq, "jac": eq_jac}]
    if A_ub:
        Au, bu = np.asarray(A_ub), np.asarray(b_ub)
        cons.append({"type": "ineq", "fun": lambda x: bu - Au @ x, "jac": lambda x: -Au})
    x0 = np.array([min(max(values[v.name], v.lo), v.hi) for v in cont])
    for w, u, v in triples:
        x0[w] = x0[u] * x0[v]
    res = minimize(lambda x: c @ x, x0, jac=lambda x: c, method="SLSQP", constraints=cons,
                   bounds=[(v.lo, v.hi) for v in cont], options={"maxiter": maxiter, "ftol": 1e-10})
    log.info("SLSQP: %s", res.message)
    out = dict(fixed)
    out.update({v.name: float(res.x[k]) for k, v in enumerate(cont)})
    bad = check_assignment(spec, out, tol=0.0)
    return out, max((amt for _, _, amt in bad), default=0.0)


# ---------------------------------------------------------------------------
# run directories


def classifier_to_dict(clf: ClusterClassifier) -> dict:
    from .io import FORMAT_VERSION, forest_to_dict
    if clf.forest is None:
        return {"kind": "forest", "version": FORMAT_VERSION, "single": clf.only}
    return forest_to_dict(clf.forest)


def classifier_from_dict(d: dict, where: str = "classifier") -> ClusterClassifier:
    from .io import check_version, forest_from_dict
    check_version(d, where)
    if "single" in d:
        return ClusterClassifier(None, int(d["single"]))
    return ClusterClassifier(forest_from_dict(d, where))


def clusters_to_dict(eps: float, clusters: dict, ints: dict, full_ints: int) -> dict:
    from .envelope import cluster_to_dict
    from .io import FORMAT_VERSION
    return {"kind": "clusters", "version": FORMAT_VERSION, "eps": eps, "full_ints": full_ints,
            "clusters": {str(c): {**cluster_to_dict(cg), "ints": ints[c]} for c, cg in clusters.items()}}


def clusters_from_dict(d: dict, where: str = "clusters"):
    from .envelope import cluster_from_dict
    from .io import check_version
    from .errors import SchemaMismatch
    check_version(d, where)
    try:
        clusters = {int(c): cluster_from_dict(v) for c, v in d["clusters"].items()}
        ints = {int(c): int(v["ints"]) for c, v in d["clusters"].items()}
        return float(d["eps"]), clusters, ints, int(d["full_ints"])
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaMismatch(f"{where}: missing or malformed field {exc}") from None


def save_artifacts(art: ReduceArtifacts, run_dir) -> None:
    from pathlib import Path
    from .io import FORMAT_VERSION, net_to_dict, write_json, write_jsonl
    d = Path(run_dir)
    write_json(d / "config.json", {"kind": "config", "version": FORMAT_VERSION, **art.config.to_dict()})
    write_json(d / "clusters.json", clusters_to_dict(art.eps, art.clusters, art.cluster_ints, art.full_ints))
    write_json(d / "forest.json", classifier_to_dict(art.classifier))
    write_jsonl(d / "dataset.jsonl", [r.to_dict() for r in art.records])
    write_jsonl(d / "outliers.jsonl", [r.to_dict() for r in art.outliers])
    write_json(d / "library.json", {"kind": "library", "version": FORMAT_VERSION, "strategies": art.library.to_list()})
    if art.net is not None:
        write_json(d / "net.json", net_to_dict(art.net))


def load_config(path) -> PipelineConfig:
    from .io import read_json
    d = read_json(path)
    d = {k: v for k, v in d.items() if k not in ("kind", "version")}
    try:
        return PipelineConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        from .errors import SchemaMismatch
        raise SchemaMismatch(f"{path}: {exc}") from None


def load_artifacts(run_dir, forest_path=None, net_path=None) -> ReduceArtifacts:
    from pathlib import Path
    from .io import check_version, net_from_dict, read_json, read_jsonl
    d = Path(run_dir)
    cfg = load_config(d / "config.json")
    eps, clusters, ints, full_ints = clusters_from_dict(read_json(d / "clusters.json"), str(d / "clusters.json"))
    fp = Path(forest_path) if forest_path else d / "forest.json"
    clf = classifier_from_dict(read_json(fp), str(fp))
    lib_doc = read_json(d / "library.json")
    check_version(lib_doc, str(d / "library.json"))
    library = StrategyLibrary.from_list(lib_doc["strategies"])
    np_ = Path(net_path) if net_path else d / "net.json"
    net = net_from_dict(read_json(np_), str(np_)) if np_.exists() else None
    records = [DatasetRecord.from_dict(r) for r in read_jsonl(d / "dataset.jsonl")]
    outliers = [DatasetRecord.from_dict(r) for r in read_jsonl(d / "outliers.jsonl")] if (d / "outliers.jsonl").exists() else []
    return ReduceArtifacts(cfg, reference_grid(cfg), eps, clusters, ints, full_ints, clf, library, net, records, outliers)
