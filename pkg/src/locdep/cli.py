"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data or model error, 3 numerical
failure (nonexistent MLE, singular information matrix).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from .config import (RunManifest, parse_model_config, parse_study_config,
                     write_text)
from .diagnostics import bound_expressions, information_at, theory_quantities
from .errors import DataError, LocdepError, ModelError, NumericalError
from .exact import (ENUMERATION_CAP, ExactModel, exact_mle)
from .graph import read_blocks, read_edges, write_edges
from .inference import fisher_hat, qq_points, wald_ci
from .mcmle import FitConfig, FitStatus, fit
from .model import BETWEEN, WITHIN, ParamVector
from .sampler import McmcConfig, sample_graph
from .studies import (COVERAGE_COLUMNS, ERRORS_COLUMNS, ESTIMATES_COLUMNS, QQ_COLUMNS,
                      run_study1, run_study2)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _finite(obj):
    if isinstance(obj, float):
        return obj if np.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def _dumps(obj) -> str:
    # float repr is the shortest string that round-trips exactly; non-finite
    # values become null so the output stays valid JSON
    return json.dumps(_finite(obj), indent=2, allow_nan=False) + "\n"


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([format(float(v), ".10g") if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _parse_theta(text: str | None, spec) -> ParamVector:
    if text is None:
        return ParamVector(np.zeros(spec.p), np.zeros(spec.q))
    try:
        vals = [float(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError:
        raise DataError(f"--theta: expected comma-separated numbers, got {text!r}") from None
    if len(vals) != spec.dim:
        raise DataError(f"--theta: expected {spec.dim} values ({', '.join(spec.names)}), got {len(vals)}")
    return ParamVector.from_full(spec, np.array(vals))


def _load_model(args):
    part = read_blocks(args.blocks)
    spec, canon = parse_model_config(args.model, part)
    return spec, canon


def _threads(args) -> int:
    return args.threads if args.threads else (os.cpu_count() or 1)


# -- subcommands -------------------------------------------------------------


def cmd_simulate(args) -> int:
    spec, _ = _load_model(args)
    theta = _parse_theta(args.theta, spec)
    cfg = McmcConfig(n_samples=args.n_samples, burnin_multiplier=args.burnin,
                     interval_multiplier=args.interval, seed=args.seed)
    res = sample_graph(spec, theta, cfg, threads=_threads(args), empty_between=args.empty_between,
                       keep_graphs=args.edges_dir is not None)
    if args.edges_dir is not None:
        d = Path(args.edges_dir)
        d.mkdir(parents=True, exist_ok=True)
        for r, g in enumerate(res.graphs, start=1):
            write_edges(g, d / f"draw_{r:06d}.tsv")
    if args.format == "json":
        text = _dumps({"terms": spec.names, "stats": res.stats.tolist()})
    else:
        text = _csv_text(spec.names, res.stats.tolist())
    write_text(args.out, text)
    return EXIT_OK


def cmd_fit(args) -> int:
    spec, _ = _load_model(args)
    g = read_edges(args.edges, spec.partition)
    cfg = FitConfig(n_mcmc=args.n_mcmc, burnin_multiplier=args.burnin,
                    interval_multiplier=args.interval, max_outer=args.max_outer,
                    seed=args.seed, threads=_threads(args))
    res = fit(g, spec, cfg)
    out = res.to_dict()
    code = EXIT_OK
    if res.status is FitStatus.NONEXISTENCE:
        code = EXIT_NUMERICAL
    elif args.ci is not None:
        try:
            intervals = []
            for kind, info in ((WITHIN, res.info_w), (BETWEEN, res.info_b)):
                if info.size:
                    names = [t.name for t in spec.terms_of(kind)]
                    intervals.append(wald_ci(res.theta_hat.part(kind), info, args.ci, names))
            ci = np.vstack(intervals)
            out["ci"] = {"alpha": args.ci, "lower": ci[:, 0].tolist(), "upper": ci[:, 1].tolist()}
        except NumericalError as exc:
            out["ci_error"] = str(exc)
            code = EXIT_NUMERICAL
    write_text(args.out, _dumps(out))
    return code


def cmd_exact(args) -> int:
    spec, _ = _load_model(args)
    model = ExactModel(spec, args.cap)
    theta = _parse_theta(args.theta, spec)
    out: dict = {"terms": spec.names, "theta": theta.full.tolist()}
    for kind, d in ((WITHIN, spec.p), (BETWEEN, spec.q)):
        if not d:
            continue
        t = theta.part(kind)
        out[kind] = {
            "psi": model.log_normalizer(kind, t),
            "mean_value": model.mean_value(kind, t).tolist(),
            "fisher_info": model.fisher_info(kind, t).tolist(),
        }
    code = EXIT_OK
    if args.edges is not None:
        g = read_edges(args.edges, spec.partition)
        res = exact_mle(g, spec, model=model)
        out["mle"] = {"theta": res.theta.full.tolist(), "status": res.status.value,
                      "iterations": res.iterations, "grad_norm": res.grad_norm,
                      "loglik": res.loglik}
        if res.status.value == "SuspectedNonexistence":
            code = EXIT_NUMERICAL
    write_text(args.out, _dumps(out))
    return code


def cmd_diagnose(args) -> int:
    spec, _ = _load_model(args)
    if args.edges is not None:
        g = read_edges(args.edges, spec.partition)
        est = fisher_hat(g, spec)
        iw, ib, method = est.full_w, est.full_b, "block-estimate"
    else:
        theta = _parse_theta(args.theta, spec)
        iw, ib, method = information_at(spec, theta, n_samples=args.n_samples, seed=args.seed)
    tq = theory_quantities(iw, ib, spec.partition)
    out = {"information_source": method, "quantities": tq.to_dict()}
    try:
        out["bounds"] = bound_expressions(tq, args.c).to_dict()
    except NumericalError as exc:
        out["bounds_error"] = str(exc)
        write_text(args.out, _dumps(out))
        return EXIT_NUMERICAL
    write_text(args.out, _dumps(out))
    return EXIT_OK


def _study(args, runner, command: str) -> int:
    if args.manifest is not None:
        m = RunManifest.read(args.manifest)
        if m.command != command:
            raise DataError(f"{args.manifest}: manifest is for {m.command}, not {command}")
        cfg = parse_study_config(m.config, source=str(args.manifest))
    elif args.config is not None:
        cfg = parse_study_config(args.config, seed=args.seed)
    else:
        raise UsageError(f"{command}: give --config or --manifest")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    threads = _threads(args)
    manifest = RunManifest.start(command, cfg.to_dict(), cfg.seed, threads)
    runner(cfg, out_dir=out, threads=threads)
    manifest.finish()
    manifest.write(out / "manifest.json")
    return EXIT_OK


def cmd_study1(args) -> int:
    return _study(args, run_study1, "study1")


def cmd_study2(args) -> int:
    return _study(args, run_study2, "study2")


def cmd_qq(args) -> int:
    with open(args.input, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{args.input}: empty file")
    header, body = rows[0], rows[1:]
    col = args.column
    if col in header:
        j = header.index(col)
    elif len(header) == 1:
        j = 0
    else:
        raise DataError(f"{args.input}: no column {col!r}")
    vals = []
    for line, r in enumerate(body, start=2):
        if j >= len(r) or r[j] == "":
            continue
        try:
            vals.append(float(r[j]))
        except ValueError:
            raise DataError(f"{args.input}:{line}: not a number: {r[j]!r}") from None
    if not vals:
        raise DataError(f"{args.input}: no values")
    pts = qq_points(vals)
    if args.format == "json":
        text = _dumps({"theoretical": pts[:, 0].tolist(), "sample": pts[:, 1].tolist()})
    else:
        text = _csv_text(["theoretical", "sample"], pts.tolist())
    write_text(args.out, text)
    return EXIT_OK


EPILOG = f"""\
CSV columns:
  simulate        one column per model term, in model order
  qq              theoretical, sample
  study1 errors.csv    {', '.join(ERRORS_COLUMNS)}
  study2 estimates.csv {', '.join(ESTIMATES_COLUMNS)}
  study2 coverage.csv  {', '.join(COVERAGE_COLUMNS)}
  study2 qq.csv        {', '.join(QQ_COLUMNS)}
exit codes: 0 ok, 1 usage, 2 data/model error, 3 numerical failure
"""


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="locdep", description="Local dependence random graph models",
                epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, model=True, edges=False, edges_required=False):
        if model:
            sp.add_argument("--blocks", required=True, help="blocks TSV (node_id, block_id[, node_group])")
            sp.add_argument("--model", required=True, help="model config JSON")
        if edges:
            sp.add_argument("--edges", required=edges_required, help="edges TSV (i, j)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--threads", type=int, default=0, help="worker threads (default: all CPUs)")
        sp.add_argument("--out", type=Path, default=None, help="output file (default: stdout)")

    def chain(sp):
        sp.add_argument("--burnin", type=float, default=10.0, help="burn-in multiplier of D")
        sp.add_argument("--interval", type=float, default=1.0, help="spacing multiplier of D")

    s = sub.add_parser("simulate", help="sample statistics (and edge lists) from a model",
                       epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    common(s)
    chain(s)
    s.add_argument("--theta", help="comma-separated parameters in term order")
    s.add_argument("--n-samples", type=int, default=1)
    s.add_argument("--edges-dir", type=Path, default=None, help="write one edge list per draw here")
    s.add_argument("--empty-between", action="store_true", help="leave between-block subgraphs empty")
    s.add_argument("--format", choices=("csv", "json"), default="csv")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fit", help="Monte-Carlo maximum likelihood")
    common(s, edges=True, edges_required=True)
    chain(s)
    s.add_argument("--n-mcmc", type=int, default=20000)
    s.add_argument("--max-outer", type=int, default=50)
    s.add_argument("--ci", type=float, default=None, metavar="ALPHA", help="add Wald intervals at level 1-ALPHA")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("exact", help="exact normalizer, mean, information, and MLE by enumeration")
    common(s, edges=True)
    s.add_argument("--theta", help="comma-separated parameters (default: zeros)")
    s.add_argument("--cap", type=int, default=ENUMERATION_CAP, help="max edge variables per subgraph")
    s.set_defaults(func=cmd_exact)

    s = sub.add_parser("diagnose", help="theory quantities and error-bound expressions")
    common(s, edges=True)
    s.add_argument("--theta", help="parameters at which to evaluate the information")
    s.add_argument("--c", type=float, default=1.0, help="bound constant")
    s.add_argument("--n-samples", type=int, default=5000, help="draws for Monte-Carlo information")
    s.set_defaults(func=cmd_diagnose)

    for name, func in (("study1", cmd_study1), ("study2", cmd_study2)):
        s = sub.add_parser(name, help=f"run simulation {name}", epilog=EPILOG,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        s.add_argument("--config", type=Path, help="study config JSON")
        s.add_argument("--manifest", type=Path, help="rerun from a manifest.json")
        s.add_argument("--out", type=Path, required=True, help="output directory")
        s.add_argument("--threads", type=int, default=0)
        s.add_argument("--seed", type=int, default=None, help="override the config seed")
        s.set_defaults(func=func)

    s = sub.add_parser("qq", help="normal QQ points for a column of standardized values")
    s.add_argument("--input", required=True, type=Path)
    s.add_argument("--column", default="standardized")
    s.add_argument("--out", type=Path, default=None)
    s.add_argument("--format", choices=("csv", "json"), default="csv")
    s.set_defaults(func=cmd_qq)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
        return args.func(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr, end="" if str(exc).endswith("\n") else "\n")
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, ModelError, LocdepError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
