"""Command line interface: ``proxyforge <subcommand> [options]``.

Exit codes: 0 on success, 1 when the input data fails validation, 2 on usage
errors (bad flags, missing files, unknown metric or preset names). Every file
is written atomically. JSON artifacts carry a ``meta`` block with the tool
version, the resolved configuration, the seed and the sha256 of every input.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import re
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .data import PanelError, atomic_write, default_registry_path, read_cells, read_registry, write_panel, \
    write_registry
from .pareto import ParetoResult, SearchBudget, binned_search, default_bins, hypervolume_2d, random_search
from .plots import front_rows, plot_front, plot_scatter, scatter_rows
from .proxy import AllZeroWeights, DimensionMismatch, ObjectiveConfig, ProxyEvaluator, evaluate_proxy
from .scoring import best_entry_by_score, neutral_ns_breakdown, proxy_labels, score, score_weights
from .simulator import PRESETS, InvalidCovariance, UnknownPreset, preset, simulate_panel, write_truth
from .stats import StatsError, average_sensitivity, binary_sensitivity, directionality_corr, \
    directionality_mse, summarize, SensitivityConfig

log = logging.getLogger("proxyforge")

THREADS_ENV = "PROXYFORGE_THREADS"
EXIT_OK, EXIT_INVALID, EXIT_USAGE = 0, 1, 2
# Keys left out of the echoed config: they change how a run executes, not what it computes.
RUNTIME_KEYS = ("threads", "verbose", "func")


class UsageError(Exception):
    pass


class InputError(Exception):
    """Input content that cannot be used (bad weights file, degenerate data)."""


# -- helpers -------------------------------------------------------------------

TIMING_FIELD = re.compile(rb'"wall_time_ms": [^,\n}]*')


def sha256(path: str | os.PathLike, mask_timing: bool = False) -> str:
    """Hex digest of a file; with ``mask_timing`` every ``wall_time_ms`` value is hashed as 0."""
    with open(path, "rb") as fh:
        data = fh.read()
    if mask_timing:
        data = TIMING_FIELD.sub(b'"wall_time_ms": 0', data)
    return hashlib.sha256(data).hexdigest()


def resolve_threads(value: int | None) -> int:
    if value is None:
        env = os.environ.get(THREADS_ENV)
        if env:
            try:
                value = int(env)
            except ValueError:
                raise UsageError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
        else:
            value = os.cpu_count() or 1
    if value < 1:
        raise UsageError("thread count must be at least 1")
    return value


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


class Run:
    """Inputs, config and clock of one CLI invocation."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.inputs: dict[str, dict] = {}
        self.start = time.perf_counter()

    def add_input(self, role: str, path: str | os.PathLike, artifact: bool = False) -> Path:
        """Record an input's digest. For our own JSON artifacts, timing values are masked first,
        so a downstream digest does not change with how long an upstream run took."""
        p = Path(path)
        if not p.is_file():
            raise UsageError(f"{role} file not found: {path}")
        self.inputs[role] = {"path": str(path), "sha256": sha256(p, mask_timing=artifact)}
        if artifact:
            self.inputs[role]["timing_masked"] = True
        return p

    def meta(self) -> dict:
        config = {k: v for k, v in vars(self.args).items() if k not in RUNTIME_KEYS}
        return {"tool": "proxyforge", "version": __version__, "command": self.args.command,
                "config": _clean(config), "seed": getattr(self.args, "seed", None), "inputs": self.inputs}

    def elapsed_ms(self) -> float:
        return (time.perf_counter() - self.start) * 1000

    def emit_json(self, payload: dict, path: str | None = None) -> None:
        doc = {"meta": self.meta(), **_clean(payload), "wall_time_ms": self.elapsed_ms()}
        _emit(json.dumps(doc, indent=2, allow_nan=False) + "\n", path or self.args.out)


def _emit(text: str, path: str | None) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    with atomic_write(path) as fh:
        fh.write(text)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def emit_csv(header, rows, path: str | None) -> None:
    _emit(_csv_text(header, rows), path)


def load(run: Run, *, validate_only: bool = False):
    """Read ``--data`` with ``--registry`` (default ``<stem>.registry.csv``)."""
    args = run.args
    if not args.data:
        raise UsageError("--data is required")
    data = run.add_input("data", args.data)
    reg_path = args.registry or default_registry_path(data)
    if not args.registry:
        args.registry = str(reg_path)
    run.add_input("registry", reg_path)
    registry = read_registry(reg_path)
    panel, report = read_cells(data, registry)
    if validate_only:
        return panel, report
    report.raise_for_errors()
    for w in report.warnings:
        log.warning("%s: %s", w.code, w.message)
    return panel


def parse_metrics(spec: str | None, panel) -> list[str] | None:
    if not spec:
        return None
    ids = [m.strip() for m in spec.split(",") if m.strip()]
    unknown = [m for m in ids if m not in panel.metric_ids]
    if unknown:
        raise UsageError(f"unknown auxiliary metric(s): {', '.join(unknown)}")
    if len(set(ids)) != len(ids):
        raise UsageError("--metrics lists a metric twice")
    return ids


def read_weights(run: Run, path: str, panel):
    """Weights JSON: ``{"weights": {id: w}}``, a bare ``{id: w}`` map, or a list in panel order.

    Returns the panel restricted to the weighted metrics and the weight vector.
    """
    run.add_input("weights", path)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"weights file is not valid JSON: {exc}") from None
    if isinstance(doc, dict) and "weights" in doc:
        doc = doc["weights"]
    if isinstance(doc, list):
        return panel, np.asarray(doc, dtype=float)
    if not isinstance(doc, dict) or not doc:
        raise InputError("weights must be a non-empty JSON object or list")
    ids = parse_metrics(",".join(doc), panel)
    return panel.select(ids), np.array([float(doc[m]) for m in ids])


def read_result(run: Run, path: str, role: str = "result") -> ParetoResult:
    run.add_input(role, path, artifact=True)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        return ParetoResult.from_dict(doc.get("result", doc))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise InputError(f"{path} is not a ParetoResult JSON: {exc}") from None


def objective_config(args) -> ObjectiveConfig:
    return ObjectiveConfig.from_name(args.objectives, alpha=args.alpha, clamp=args.clamp)


# -- subcommands -------------------------------------------------------------

def cmd_validate(run: Run) -> int:
    panel, report = load(run, validate_only=True)
    if run.args.format == "csv":
        rows = [[sev, i.code, i.experiment_id or "", i.metric_id or "", i.message]
                for sev, issues in (("error", report.errors), ("warning", report.warnings)) for i in issues]
        emit_csv(["severity", "code", "experiment_id", "metric_id", "message"], rows, run.args.out)
    else:
        run.emit_json({"report": report.to_dict()})
    for issue in report.errors[:5]:
        log.error("%s %s %s: %s", issue.code, issue.experiment_id or "", issue.metric_id or "", issue.message)
    return EXIT_OK if report.ok else EXIT_INVALID


def metric_table(panel, alpha: float, clamp: float | None, method: str) -> list[dict]:
    table = summarize(panel, SensitivityConfig(alpha, clamp))
    ybar = table.mean[:, -1]
    rows = []
    for k, metric in enumerate(panel.metric_ids):
        t = table.t[:, k]
        try:
            bs, avg = binary_sensitivity(t, table.tau), average_sensitivity(t, clamp)
        except StatsError:
            bs = avg = math.nan
        try:
            corr = directionality_corr(table.mean[:, k], ybar, method)
        except StatsError:
            corr = math.nan
        rows.append({"metric_id": metric, "binary_sensitivity": bs, "average_sensitivity": avg,
                     "correlation": corr, "mse": directionality_mse(table.mean[:, k], ybar)})
    return rows


def cmd_sensitivity(run: Run) -> int:
    args = run.args
    panel = load(run)
    rows = metric_table(panel, args.alpha, args.clamp, args.method)
    if args.format == "json":
        run.emit_json({"metrics": rows})
    else:
        fields = ["metric_id", "binary_sensitivity", "average_sensitivity", "correlation", "mse"]
        emit_csv(fields, [[r[f] for f in fields] for r in rows], args.out)
    return EXIT_OK


def cmd_evaluate(run: Run) -> int:
    args = run.args
    if not args.weights:
        raise UsageError("--weights is required")
    panel = load(run)
    panel, w = read_weights(run, args.weights, panel)
    ev = evaluate_proxy(panel, w, objective_config(args))
    per_exp = [{"experiment_id": e, "mean": m, "se": s, "t": t}
               for e, m, s, t in zip(panel.experiments, ev.mean, ev.se, ev.t)]
    if args.format == "csv":
        emit_csv(["experiment_id", "mean", "se", "t"], [list(r.values()) for r in per_exp], args.out)
    else:
        run.emit_json({"weights": dict(zip(panel.metric_ids, ev.weights)),
                       "point": {"sensitivity": ev.point.sensitivity, "directionality": ev.point.directionality,
                                 "kind": list(ev.point.kind)},
                       "tau": ev.tau, "experiments": per_exp})
    return EXIT_OK


def cmd_optimize(run: Run) -> int:
    args = run.args
    threads = resolve_threads(args.threads)
    panel = load(run)
    ids = parse_metrics(args.metrics, panel)
    if ids:
        panel = panel.select(ids)
    cfg = objective_config(args)
    ev = ProxyEvaluator(panel, cfg)
    m = ev.n_metrics
    if args.algorithm == "random":
        iterations = args.iterations or m * 4000
        result = random_search(panel, cfg, SearchBudget(iterations, args.seed), threads=threads, evaluator=ev)
    else:
        iterations = args.iterations or 4000
        if iterations < 2 * m + 1:
            raise UsageError(f"--iterations must be at least 2*M+1 = {2 * m + 1} for binned search")
        if args.bins < 2:
            raise UsageError("--bins must be at least 2")
        bins = default_bins(ev, args.bins)
        result = binned_search(panel, cfg, bins, iterations, threads=threads, evaluator=ev)
        args.bin_edges = [float(u) for u in bins.edges]
    args.iterations = iterations
    log.info("%s search: %d entries, AUPF %.4f", args.algorithm, len(result.entries), result.aupf(strict=False))
    header, rows = front_rows(result)
    if args.format == "csv":
        emit_csv(header, rows, args.out)
    else:
        run.emit_json({"result": result.to_dict(), "aupf": result.aupf(strict=False)})
    if args.front:
        emit_csv(header, rows, args.front)
    return EXIT_OK


def cmd_score(run: Run) -> int:
    args = run.args
    if bool(args.result) == bool(args.weights):
        raise UsageError("give exactly one of --result or --weights")
    panel = load(run)
    entry = None
    if args.result:
        result = read_result(run, args.result)
        parse_metrics(",".join(result.metric_ids), panel)
        sub = panel.select(result.metric_ids)
        if not result.entries:
            raise InputError("result has no entries to score")
        if args.entry == "best":
            entry, _ = best_entry_by_score(result, sub, args.alpha)
        else:
            try:
                entry = int(args.entry)
                result.entries[entry]
            except (ValueError, IndexError):
                raise UsageError(f"--entry must be 'best' or an index below {len(result.entries)}") from None
        w = result.entries[entry].weights
    else:
        sub, w = read_weights(run, args.weights, panel)
    labels, y_mean = proxy_labels(sub, w, args.alpha)
    report = score(labels)
    payload = {"entry": entry, "weights": dict(zip(sub.metric_ids, np.asarray(w, dtype=float))),
               "report": report.to_dict(), "neutral_north_star": {str(k): v for k, v in
                                                                  neutral_ns_breakdown(labels, y_mean).items()}}
    short = panel.registry.north_star_short
    if short is not None and short.metric_id in panel.metric_ids:
        payload["north_star_short"] = score_weights(panel.select([short.metric_id]), [1.0], args.alpha).to_dict()
    rows = [[p, n, c] for (p, n), c in report.counts.items()]
    if args.format == "csv":
        emit_csv(["proxy_direction", "northstar_direction", "count"], rows, args.out)
    else:
        run.emit_json(payload)
    if args.contingency:
        emit_csv(["proxy_direction", "northstar_direction", "count"], rows, args.contingency)
    return EXIT_OK


def cmd_simulate(run: Run) -> int:
    args = run.args
    threads = resolve_threads(args.threads)
    if not args.out or args.out == "-":
        raise UsageError("--out is required for simulate")
    cfg = preset(args.preset, J=args.J, N=args.N, M=args.M, seed=args.seed)
    panel, truth = simulate_panel(cfg, threads=threads)
    reg_path = args.registry or str(default_registry_path(args.out))
    args.registry = reg_path
    write_panel(panel, args.out)
    write_registry(panel.registry, reg_path)
    outputs = {"data": args.out, "registry": reg_path}
    if args.truth:
        write_truth(truth, panel.registry, args.truth)
        outputs["truth"] = args.truth
    manifest = {"simulation": cfg.to_dict(),
                "outputs": {k: {"path": p, "sha256": sha256(p)} for k, p in outputs.items()}}
    run.emit_json(manifest, args.manifest or "-")
    return EXIT_OK


def cmd_aupf(run: Run) -> int:
    args = run.args
    fronts = []
    for i, path in enumerate(args.result):
        result = read_result(run, path, role=f"result_{i}")
        fronts.append({"path": path, "algorithm": result.algorithm, "entries": len(result.entries),
                       "aupf": hypervolume_2d(result.points, (0.0, 0.0), strict=False)})
    if args.format == "csv":
        emit_csv(["path", "algorithm", "entries", "aupf"], [list(f.values()) for f in fronts], args.out)
    else:
        run.emit_json({"reference": [0.0, 0.0], "fronts": fronts})
    return EXIT_OK


def cmd_plot_data(run: Run) -> int:
    args = run.args
    if bool(args.result) == bool(args.data):
        raise UsageError("give exactly one of --result (front table) or --data (metric scatter)")
    if args.result:
        result = read_result(run, args.result)
        header, rows = front_rows(result)
        emit_csv(header, rows, args.out)
        if args.figure:
            plot_front(header, rows, args.figure, labels=result.config.kind)
    else:
        panel = load(run)
        table = metric_table(panel, args.alpha, None, "pearson")
        header, rows = scatter_rows([r["metric_id"] for r in table], [r["binary_sensitivity"] for r in table],
                                    [r["correlation"] for r in table])
        emit_csv(header, rows, args.out)
        if args.figure:
            plot_scatter(rows, args.figure)
    return EXIT_OK


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--data", help="panel CSV (arm-level or delta-level schema)")
    common.add_argument("--registry", help="metric registry CSV (default: <data stem>.registry.csv)")
    common.add_argument("--alpha", type=float, default=0.05, help="two-sided significance level (default 0.05)")
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--threads", type=int, default=None,
                        help=f"worker threads (default: ${THREADS_ENV}, else all cores)")
    common.add_argument("--format", choices=("json", "csv"), default=None, help="output format")
    common.add_argument("--out", default=None, help="output path (default: standard output)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")

    parser = argparse.ArgumentParser(prog="proxyforge", description="Pareto-optimal proxy metrics for A/B tests.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, func, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        p.set_defaults(func=func)
        return p

    def objectives(p):
        p.add_argument("--objectives", choices=("bs-corr", "as-negmse"), default="bs-corr",
                       help="objective pair (default bs-corr)")
        p.add_argument("--clamp", type=float, default=None,
                       help="cap |t| at this value for average sensitivity")

    add("validate", cmd_validate, "check a panel and its registry, listing every problem")

    p = add("sensitivity", cmd_sensitivity, "per-metric sensitivity and directionality")
    p.add_argument("--clamp", type=float, default=None, help="cap |t| at this value for average sensitivity")
    p.add_argument("--method", choices=("pearson", "spearman"), default="pearson", help="correlation type")

    p = add("evaluate", cmd_evaluate, "objectives and per-experiment t statistics of one proxy")
    p.add_argument("--weights", help="weights JSON")
    objectives(p)

    p = add("optimize", cmd_optimize, "extract a Pareto front of proxy weights")
    p.add_argument("--algorithm", choices=("random", "binned"), default="binned")
    p.add_argument("--metrics", help="comma-separated auxiliary metrics to combine (default: all)")
    p.add_argument("--iterations", type=int, default=None,
                   help="random: total draws (default M*4000); binned: evaluations per bin (default 4000)")
    p.add_argument("--bins", type=int, default=14, help="number of sensitivity bin edges (default 14)")
    p.add_argument("--front", help="also write the front table CSV here")
    objectives(p)

    p = add("score", cmd_score, "contingency table and proxy score of a proxy")
    p.add_argument("--result", help="ParetoResult JSON from optimize")
    p.add_argument("--entry", default="best", help="front entry index, or 'best' by proxy score (default)")
    p.add_argument("--weights", help="weights JSON instead of --result")
    p.add_argument("--contingency", help="also write the 3x3 contingency counts CSV here")

    p = add("simulate", cmd_simulate, "write a seeded synthetic panel from a preset")
    p.add_argument("--preset", choices=PRESETS, default="insensitive_ns")
    p.add_argument("--J", type=int, default=300, help="experiments (default 300)")
    p.add_argument("--N", type=int, default=100, help="buckets per experiment (default 100)")
    p.add_argument("--M", type=int, default=10, help="auxiliary metrics incl. the short-term north star (default 10)")
    p.add_argument("--truth", help="write the true effects CSV here")
    p.add_argument("--manifest", help="write the run manifest JSON here (default: standard output)")

    p = add("aupf", cmd_aupf, "area under the Pareto front of one or more results")
    p.add_argument("--result", nargs="+", required=True, help="ParetoResult JSON file(s)")

    p = add("plot-data", cmd_plot_data, "plot-ready CSV of a front or of the metric scatter")
    p.add_argument("--result", help="ParetoResult JSON (front table)")
    p.add_argument("--figure", help="also render a figure (format from the extension, e.g. .png, .pdf)")
    return parser


DEFAULT_FORMAT = {"sensitivity": "csv", "plot-data": "csv"}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    if args.format is None:
        args.format = DEFAULT_FORMAT.get(args.command, "json")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    run = Run(args)
    try:
        return args.func(run)
    except PanelError as exc:
        print(f"proxyforge {args.command}: validation failed: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (InputError, StatsError, AllZeroWeights, DimensionMismatch, InvalidCovariance) as exc:
        print(f"proxyforge {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (UsageError, UnknownPreset) as exc:
        parser.print_usage(sys.stderr)
        print(f"proxyforge {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as exc:
        print(f"proxyforge {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
