"""Command-line front end: pipeline stages, single-instance solving and metric reports.

Stages share a run directory::

    shelfreduce kickoff --run runs/a
    shelfreduce cluster --run runs/a
    shelfreduce train-classifier --run runs/a
    shelfreduce expand --run runs/a
    shelfreduce train-strategy --run runs/a
    shelfreduce evaluate --run runs/a

Exit codes: 0 success, 1 usage or input error, 2 infeasible, 3 limit reached.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import io, pipeline as pl
from .errors import Infeasible, LimitReached, ShelfReduceError

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_LIMIT = 0, 1, 2, 3
MODES = ("minlp-desk", "micp-full", "strategy")

log = logging.getLogger("shelfreduce")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# helpers


def _config(args) -> pl.PipelineConfig:
    run = Path(args.run) if getattr(args, "run", None) else None
    if args.config:
        cfg = pl.load_config(args.config)
    elif run is not None and (run / "config.json").exists():
        cfg = pl.load_config(run / "config.json")
    else:
        cfg = pl.PipelineConfig()
    over = {}
    for key in ("seed", "jobs", "time_limit", "node_limit", "top_k"):
        val = getattr(args, key, None)
        if val is not None:
            over[key] = val
    if over:
        cfg = pl.PipelineConfig.from_dict({**cfg.to_dict(), **over})
    return cfg


def _save_config(cfg: pl.PipelineConfig, run: Path) -> None:
    io.write_json(run / "config.json", {"kind": "config", "version": io.FORMAT_VERSION, **cfg.to_dict()})


def _need(path: Path, hint: str) -> Path:
    if not path.exists():
        raise UsageError(f"{path} not found; run '{hint}' first")
    return path


def _records(path: Path) -> list[pl.DatasetRecord]:
    rows = io.read_jsonl(path)
    try:
        return [pl.DatasetRecord.from_dict(r) for r in rows]
    except TypeError as exc:
        raise ShelfReduceError(f"{path}: malformed record ({exc})") from None


def _read_instance(path: str, index: int):
    p = Path(path)
    if p.suffix == ".jsonl":
        rows = io.read_jsonl(p)
        if not 0 <= index < len(rows):
            raise UsageError(f"{p}: index {index} outside 0..{len(rows) - 1}")
        return io.instance_from_dict(rows[index], f"{p}:{index + 1}")
    return io.instance_from_dict(io.read_json(p), str(p))


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    from .scene import SamplerConfig, sample_instance
    if args.count < 0:
        raise UsageError("--count must be non-negative")
    sampler = SamplerConfig(n_books=args.books)
    rows = [io.instance_to_dict(sample_instance(args.seed * 1_000_000 + k, sampler)) for k in range(args.count)]
    io.write_jsonl(args.out, rows)
    print(f"wrote {len(rows)} instances to {args.out}")
    return EXIT_OK


def cmd_kickoff(args) -> int:
    run = Path(args.run)
    cfg = _config(args)
    if args.count is not None:
        cfg = pl.PipelineConfig.from_dict({**cfg.to_dict(), "kick_off": args.count})
    _save_config(cfg, run)
    t = time.perf_counter()
    recs = pl.collect_kickoff(cfg)
    io.write_jsonl(run / "kickoff.jsonl", [r.to_dict() for r in recs])
    print(f"kick-off: {len(recs)} records in {time.perf_counter() - t:.1f}s -> {run / 'kickoff.jsonl'}")
    return EXIT_OK


def cmd_cluster(args) -> int:
    run = Path(args.run)
    cfg = _config(args)
    recs = _records(_need(run / "kickoff.jsonl", "kickoff"))
    labels, eps = pl.cluster_kickoff(recs, cfg.eps, cfg.min_pts)
    for r, l in zip(recs, labels):
        r.cluster = int(l)
    members = [r for r in recs if r.cluster != pl.NOISE]
    if not members:
        raise ShelfReduceError(f"no clusters found (eps={eps:.4g}, min_pts={cfg.min_pts})")
    grid = pl.reference_grid(cfg)
    clusters = pl.build_cluster_grids(members, grid, cfg.n_books)
    ints = {c: pl.reduced_binary_count(cfg, cg) for c, cg in clusters.items()}
    full = pl.reduced_binary_count(cfg, None)
    io.write_json(run / "clusters.json", pl.clusters_to_dict(eps, clusters, ints, full))
    io.write_jsonl(run / "members.jsonl", [r.to_dict() for r in members])
    io.write_jsonl(run / "outliers.jsonl", [r.to_dict() for r in recs if r.cluster == pl.NOISE])
    with open(run / "binary_counts.csv", "w") as fh:
        fh.write("cluster,axis,full_cells,cluster_cells\n")
        for c, cg in clusters.items():
            for a in grid.axes:
                fh.write(f"{c},{a.name},{a.n_cells},{len(cg.cells[a.name])}\n")
    print(f"eps={eps:.4g}: {len(clusters)} clusters, {len(recs) - len(members)} outliers; "
          f"binaries full={full} per cluster={ints}")
    return EXIT_OK


def cmd_train_classifier(args) -> int:
    run = Path(args.run)
    cfg = _config(args)
    members = _records(_need(run / "members.jsonl", "cluster"))
    clf = pl.train_classifier(members, cfg.rf_trees, cfg.seed + 3)
    out = Path(args.model_out) if args.model_out else run / "forest.json"
    io.write_json(out, pl.classifier_to_dict(clf))
    acc = clf.forest.train_accuracy if clf.forest is not None else 1.0
    print(f"classifier: train accuracy {acc:.3f} -> {out}")
    return EXIT_OK


def cmd_expand(args) -> int:
    run = Path(args.run)
    cfg = _config(args)
    members = _records(_need(run / "members.jsonl", "cluster"))
    _, clusters, _, _ = pl.clusters_from_dict(io.read_json(run / "clusters.json"), str(run / "clusters.json"))
    fp = Path(args.model_in) if args.model_in else _need(run / "forest.json", "train-classifier")
    clf = pl.classifier_from_dict(io.read_json(fp), str(fp))
    counts = {c: sum(r.cluster == c for r in members) for c in clusters}
    t = time.perf_counter()
    extra = pl.expand(cfg, clf, clusters, counts, pl.reference_grid(cfg))
    records = members + extra
    io.write_jsonl(run / "dataset.jsonl", [r.to_dict() for r in records])
    sizes = {c: sum(r.cluster == c for r in records) for c in clusters}
    print(f"expansion: {len(extra)} new records in {time.perf_counter() - t:.1f}s; cluster sizes {sizes}")
    return EXIT_OK


def cmd_train_strategy(args) -> int:
    run = Path(args.run)
    cfg = _config(args)
    records = _records(_need(run / "dataset.jsonl", "expand"))
    if not records:
        raise ShelfReduceError(f"{run / 'dataset.jsonl'}: no records")
    library, net = pl.train_learner(records, pl.reference_grid(cfg), cfg)
    io.write_json(run / "library.json", {"kind": "library", "version": io.FORMAT_VERSION,
                                         "strategies": library.to_list()})
    out = Path(args.model_out) if args.model_out else run / "net.json"
    io.write_json(out, io.net_to_dict(net))
    print(f"strategy net: {len(library)} strategies, train accuracy {net.train_accuracy:.3f} -> {out}")
    return EXIT_OK


def _load(args) -> pl.ReduceArtifacts:
    run = Path(args.model_in or args.run)
    for name, stage in (("config.json", "kickoff"), ("clusters.json", "cluster"), ("forest.json", "train-classifier"),
                        ("dataset.jsonl", "expand"), ("library.json", "train-strategy"),
                        ("net.json", "train-strategy")):
        _need(run / name, stage)
    art = pl.load_artifacts(run)
    cfg = _config(args) if getattr(args, "run", None) or args.config else art.config
    art.config = pl.PipelineConfig.from_dict({**cfg.to_dict()})
    return art


def cmd_evaluate(args) -> int:
    art = _load(args)
    run = Path(args.run)
    k = args.top_k if args.top_k is not None else art.config.top_k
    n = args.count if args.count is not None else art.config.holdout
    refs = pl.reference_solutions(art, pl.holdout_instances(art.config, n))
    rows_all = []
    for method in ("learner", "baseline"):
        met, rows = pl.evaluate(art, refs, k, method, seed=art.config.seed + 11)
        name = "metrics.csv" if method == "learner" else "metrics_baseline.csv"
        io.write_metrics_csv(run / name, pl.metrics_rows(art, rows))
        rows_all += [{"method": method, **vars(r)} for r in rows]
        print(f"{method:8s} k={k}: S%={100 * met.success_rate:.1f} Det={met.det:.4g} "
              f"avg={met.avg_time:.3f}s max={met.max_time:.3f}s (n={met.n})")
    io.write_jsonl(run / "results.jsonl", rows_all)
    if args.timing:
        pairs = pl.compare_solve_times(art, refs, args.timing)
        with open(run / "solve_times.csv", "w") as fh:
            fh.write("full_s,reduced_s\n")
            for a, b in pairs:
                fh.write(f"{a:.6f},{b:.6f}\n")
        if pairs:
            print(f"median solve time: full {np.median([a for a, _ in pairs]):.3f}s, "
                  f"reduced {np.median([b for _, b in pairs]):.3f}s over {len(pairs)} instances")
    return EXIT_OK


def cmd_solve(args) -> int:
    inst = _read_instance(args.instance, args.index)
    if args.mode == "strategy" and not args.model_in:
        raise UsageError("strategy mode needs --model-in RUN_DIR")
    if args.mode == "strategy":
        art = _load(args)
        cfg = art.config
    else:
        cfg = _config(args)
    prep = pl.prepare(inst, cfg)
    if args.dump_spec:
        io.write_jsonl(args.dump_spec, io.spec_rows(prep.micp if args.mode != "minlp-desk" else prep.spec))
    t0 = time.perf_counter()
    if args.mode == "strategy":
        ref = pl.Reference(-1, inst, pl.encode_features(inst, len(inst.stored_books)), None, None)
        ranked = art.classifier.ranked(ref.theta)
        ref.cluster = ranked[0]
        labels = pl.candidate_labels(art, ref, args.top_k if args.top_k is not None else cfg.top_k, "learner")
        solver = pl.StrategySolver(prep.problem)
        sol = None
        for lab in labels:
            try:
                sol = solver.solve(art.library.strategy(lab))
                break
            except Infeasible:
                continue
        if sol is None:
            raise Infeasible(f"none of the {len(labels)} candidate strategies is feasible")
        values, obj = sol.values, sol.objective
    else:
        sol = pl.branch_and_bound(prep.problem, cfg.time_limit, cfg.node_limit, cfg.engine)
        values, obj = sol.values, sol.objective
        if args.mode == "minlp-desk":
            values, viol = pl.refine_minlp(prep.spec, values)
            obj = pl.objective_value(prep.spec, values)
            if viol > 1e-6:
                log.warning("bilinear refinement left a violation of %.3g", viol)
    elapsed = time.perf_counter() - t0
    scene = pl.scene_from_values(prep.spec, values)
    if args.out:
        io.write_json(args.out, io.solution_to_dict(scene, obj, args.mode))
    print(f"mode={args.mode} objective={obj:.6g} time={elapsed:.3f}s states={','.join(scene.state_labels)}")
    return EXIT_OK


def cmd_report(args) -> int:
    if not args.files:
        raise UsageError("report needs at least one metrics file")
    rows = []
    for f in args.files:
        for r in io.read_metrics_csv(f):
            rows.append(r)
    rows.sort(key=lambda r: (r["cluster"] == "all", _sort_key(r["cluster"])))
    if args.out:
        io.write_metrics_csv(args.out, rows)
    else:
        print(",".join(io.METRIC_COLUMNS))
        for r in rows:
            print(",".join(str(r[c]) for c in io.METRIC_COLUMNS))
    return EXIT_OK


def _sort_key(c):
    try:
        return (0, float(c), "")
    except ValueError:
        return (1, math.inf, str(c))


def cmd_run(args) -> int:
    """Every stage in order into one run directory."""
    run = Path(args.run)
    cfg = _config(args)
    _save_config(cfg, run)
    t = time.perf_counter()
    art = pl.run_reduce(cfg)
    pl.save_artifacts(art, run)
    print(f"reduce: {len(art.clusters)} clusters, {len(art.library)} strategies, "
          f"binaries full={art.full_ints} per cluster={art.cluster_ints} ({time.perf_counter() - t:.1f}s)")
    args.model_in = None
    args.count = None
    return cmd_evaluate(args)


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config (JSON)")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int, help="worker processes (default 1)")
    common.add_argument("--time-limit", type=float, dest="time_limit")
    common.add_argument("--node-limit", type=int, dest="node_limit")
    common.add_argument("--top-k", type=int, dest="top_k")
    common.add_argument("--model-in", dest="model_in")
    common.add_argument("--model-out", dest="model_out")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="shelfreduce", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", parents=[common], help="sample instances")
    g.add_argument("--count", type=int, default=10)
    g.add_argument("--books", type=int, default=3)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate, seed=0)

    for name, fn, helptext in (("kickoff", cmd_kickoff, "solve kick-off instances with the full MICP"),
                               ("cluster", cmd_cluster, "DBSCAN over kick-off solutions"),
                               ("train-classifier", cmd_train_classifier, "random forest from features to cluster"),
                               ("expand", cmd_expand, "grow cluster datasets with reduced solves"),
                               ("train-strategy", cmd_train_strategy, "train the strategy network"),
                               ("evaluate", cmd_evaluate, "holdout evaluation of learner and baseline"),
                               ("run", cmd_run, "all stages plus evaluation")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--run", required=True, help="run directory")
        if name in ("kickoff", "evaluate"):
            s.add_argument("--count", type=int)
        if name in ("evaluate", "run"):
            s.add_argument("--timing", type=int, default=0, help="compare full vs reduced solve times on N instances")
        s.set_defaults(func=fn)

    s = sub.add_parser("solve", parents=[common], help="solve one instance")
    s.add_argument("instance", help="instance .json or .jsonl")
    s.add_argument("--index", type=int, default=0, help="record index in a .jsonl file")
    s.add_argument("--mode", choices=MODES, default="micp-full")
    s.add_argument("--out", help="solution file")
    s.add_argument("--dump-spec", dest="dump_spec", help="write the model as JSON lines")
    s.set_defaults(func=cmd_solve, run=None)

    r = sub.add_parser("report", parents=[common], help="merge metrics CSV files")
    r.add_argument("files", nargs="*")
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Infeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except LimitReached as exc:
        print(f"limit reached: {exc}", file=sys.stderr)
        return EXIT_LIMIT
    except (ShelfReduceError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
