"""``avgemb`` command line.

Exit codes: 0 success, 2 input or contract error, 3 quadrature failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import shlex
import sys
import time

import numpy as np

from . import _backend, analytic, datasets, evaluator
from .errors import AvgEmbError, QuadratureError
from .report import FORMATS, RunReport, write_report
from .stats_core import DistributionSpec, MomentSet, RandomSeed

logger = logging.getLogger("avgemb")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3

# fixed sub-streams of the global seed, so each stage replays independently
STREAM_MATRIX = 0
STREAM_TRIALS = 1
STREAM_BASELINE_MATRIX = 2
STREAM_BASELINE_TRIALS = 3
STREAM_DIAGNOSTICS = 4
STREAM_HISTOGRAM = 5


class _Stopwatch:
    def __init__(self):
        self.stages = {}

    def stage(self, name):
        watch = self

        class _Ctx:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                watch.stages[name] = round(time.perf_counter() - self.t0, 6)

        return _Ctx()


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def parse_k_range(text: str) -> list:
    """``"2..50"``, ``"2..50:4"`` (step) or ``"2,5,10"``."""
    text = text.strip()
    try:
        if ".." in text:
            lo, rest = text.split("..", 1)
            hi, _, step = rest.partition(":")
            ks = list(range(int(lo), int(hi) + 1, int(step) if step else 1))
        else:
            ks = [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad k range {text!r}") from None
    if not ks:
        raise argparse.ArgumentTypeError(f"empty k range {text!r}")
    return ks


def _int_list(text: str) -> list:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from None


def _add_global(parser, suppress):
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=default(0), help="root seed (unsigned 64-bit)")
    parser.add_argument("--threads", type=int, default=default(None),
                        help="kernel thread cap (default: $AVGEMB_THREADS or all cores)")
    parser.add_argument("--out", default=default("avgemb-out"), help="output directory")
    parser.add_argument("--format", action="append", default=default(None),
                        help="json, csv and/or svg; repeat or comma-separate (default: all)")


def _add_dist(parser, default_kind="normal"):
    g = parser.add_argument_group("entry distribution")
    g.add_argument("--dist", default=default_kind,
                   choices=["normal", "shifted-normal", "uniform", "rademacher", "beta"])
    g.add_argument("--mean", type=float, default=None)
    g.add_argument("--sd", type=float, default=None)
    g.add_argument("--lo", type=float, default=None)
    g.add_argument("--hi", type=float, default=None)
    g.add_argument("--alpha", type=float, default=None)
    g.add_argument("--beta", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avgemb", description="Consistency of average embeddings.")
    _add_global(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analytic", help="closed-form consistency curve")
    _add_global(p, suppress=True)
    _add_dist(p)
    p.add_argument("--moments", default=None, help="mean,variance,skewness,kurtosis (overrides --dist)")
    p.add_argument("--d", type=int, default=128)
    p.add_argument("--N", type=int, default=1000)
    p.add_argument("--k", type=parse_k_range, default=parse_k_range("2..50"))
    p.add_argument("--rel-tol", type=float, default=1e-8)
    p.add_argument("--half-width", type=float, default=12.0)
    p.add_argument("--max-depth", type=int, default=50)

    p = sub.add_parser("simulate", help="Monte Carlo consistency on synthetic embeddings")
    _add_global(p, suppress=True)
    _add_dist(p)
    p.add_argument("--d", type=int, default=128)
    p.add_argument("--N", type=int, default=1000)
    p.add_argument("--k", type=parse_k_range, default=parse_k_range("2..50"))
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--with-analytic", action="store_true")

    p = sub.add_parser("empirical", help="Monte Carlo consistency on an embedding file")
    _add_global(p, suppress=True)
    p.add_argument("path")
    p.add_argument("--input-format", choices=["binary", "csv"], default="binary")
    p.add_argument("--csv-header", action="store_true", help="skip the first csv line")
    p.add_argument("--k", type=parse_k_range, default=parse_k_range("2..50"))
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--center", dest="center", action="store_true", default=True)
    p.add_argument("--no-center", dest="center", action="store_false")
    p.add_argument("--baseline-normal", action="store_true",
                   help="add a N(0,1) catalog of the same shape as a reference curve")
    p.add_argument("--correlation-sample", type=int, default=datasets.MAX_CORRELATION_PAIRS)

    p = sub.add_parser("histogram", help="similarity histograms with normal overlays")
    _add_global(p, suppress=True)
    _add_dist(p, default_kind="shifted-normal")
    p.add_argument("--d-list", type=_int_list, default=[2, 10, 32, 64, 128])
    p.add_argument("--n-vectors", type=int, default=1000)
    p.add_argument("--bins", type=int, default=60)

    p = sub.add_parser("compare", help="merge curves from earlier reports")
    _add_global(p, suppress=True)
    p.add_argument("reports", nargs="+")
    return parser


def _formats(raw):
    if not raw:
        return FORMATS
    out = []
    for item in raw:
        for tok in item.split(","):
            tok = tok.strip()
            if tok not in FORMATS:
                raise AvgEmbError(f"unknown output format {tok!r}; choose from {', '.join(FORMATS)}")
            if tok not in out:
                out.append(tok)
    return tuple(out)


def dist_from_args(args) -> DistributionSpec:
    kind = args.dist.replace("-", "_")
    if kind in ("normal", "shifted_normal"):
        mean = args.mean if args.mean is not None else (0.5 if kind == "shifted_normal" else 0.0)
        return DistributionSpec(kind, (mean, args.sd if args.sd is not None else 1.0))
    if kind == "uniform":
        return DistributionSpec.uniform(args.lo if args.lo is not None else -1.0, args.hi if args.hi is not None else 1.0)
    if kind == "rademacher":
        return DistributionSpec.rademacher()
    return DistributionSpec.beta(args.alpha if args.alpha is not None else 2.0,
                                 args.beta if args.beta is not None else 2.0)


def _parameters(args) -> dict:
    params = {k: v for k, v in sorted(vars(args).items()) if k not in ("out", "format", "threads")}
    params["backend"] = _backend.BACKEND
    return params


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_analytic(args, watch) -> RunReport:
    if args.moments:
        try:
            mu, var, skew, kurt = (float(t) for t in args.moments.split(","))
        except ValueError:
            raise AvgEmbError(f"--moments needs four comma-separated numbers, got {args.moments!r}") from None
        moments = MomentSet(mu, var, skew, kurt)
        source = {"moments": moments.as_dict()}
    else:
        spec = dist_from_args(args)
        moments = spec.moments
        source = {"distribution": spec.describe()}
    quad = analytic.QuadratureConfig(rel_tol=args.rel_tol, half_width=args.half_width, max_depth=args.max_depth)
    with watch.stage("analytic"):
        curve = analytic.consistency_curve(moments, args.k, args.N, args.d, quad, label="analytic")
    params = _parameters(args)
    params.update(source)
    return RunReport("analytic", params, curves=[curve])


def _deltas(reference: evaluator.ConsistencyCurve, other: evaluator.ConsistencyCurve) -> dict:
    deltas = [o - r for r, o in zip(reference.scores, other.scores)]
    worst = max(range(len(deltas)), key=lambda t: abs(deltas[t]))
    return {
        "reference": reference.label,
        "other": other.label,
        "k_values": list(reference.k_values),
        "deltas": deltas,
        "max_abs_gap": abs(deltas[worst]),
        "max_gap_k": reference.k_values[worst],
    }


def cmd_simulate(args, watch) -> RunReport:
    spec = dist_from_args(args)
    seed = RandomSeed(args.seed)
    report = RunReport("simulate", dict(_parameters(args), distribution=spec.describe()))
    if args.trials == 1:
        msg = "trials=1: standard errors are reported as 0"
        logger.warning(msg)
        report.warnings.append(msg)
    with watch.stage("synthesize"):
        m = datasets.synth(spec, args.N, args.d, seed.derive(STREAM_MATRIX))
    with watch.stage("simulate"):
        sim = evaluator.consistency_curve_mc(m, args.k, args.trials, seed.derive(STREAM_TRIALS), label="simulated")
    report.curves.append(sim)
    if args.with_analytic:
        with watch.stage("analytic"):
            ana = analytic.consistency_curve(spec.moments, args.k, args.N, args.d, label="analytic")
        report.curves.insert(0, ana)
        report.comparisons = {"pairs": [_deltas(ana, sim)]}
    return report


def cmd_empirical(args, watch) -> RunReport:
    seed = RandomSeed(args.seed)
    with watch.stage("load"):
        m = datasets.load_embeddings(args.path, args.input_format, csv_header=args.csv_header)
    if max(args.k) > m.n_items:
        raise AvgEmbError(f"k={max(args.k)} exceeds the catalog size N={m.n_items}")
    if args.center:
        with watch.stage("center"):
            m = datasets.center(m)
    params = dict(_parameters(args), n_items=m.n_items, dim=m.dim)
    report = RunReport("empirical", params)
    with watch.stage("diagnostics"):
        diag = datasets.diagnostics(m, args.correlation_sample, seed.derive(STREAM_DIAGNOSTICS))
    report.diagnostics = diag.as_dict()
    with watch.stage("empirical"):
        emp = evaluator.consistency_curve_mc(m, args.k, args.trials, seed.derive(STREAM_TRIALS),
                                             provenance="empirical", label="empirical")
    report.curves.append(emp)
    if args.baseline_normal:
        with watch.stage("baseline"):
            base_m = datasets.synth(DistributionSpec.normal(), m.n_items, m.dim, seed.derive(STREAM_BASELINE_MATRIX),
                                    dtype=np.float32)
            base = evaluator.consistency_curve_mc(base_m, args.k, args.trials, seed.derive(STREAM_BASELINE_TRIALS),
                                                  provenance="simulated", label="normal-baseline")
        report.curves.append(base)
        report.comparisons = {"pairs": [_deltas(base, emp)]}
    return report


def histogram_entry(spec: DistributionSpec, d: int, n_vectors: int, bins: int, seed: RandomSeed) -> dict:
    m = datasets.synth(spec, n_vectors, d, seed)
    stats = evaluator.all_pair_similarities(m)
    overlay = analytic.inner_product_moments(spec.moments, spec.moments, d)
    counts, edges = np.histogram(stats.values, bins=bins)
    widths = np.diff(edges)
    density = counts / (counts.sum() * widths)
    centers = 0.5 * (edges[:-1] + edges[1:])
    normal_density = np.exp(-0.5 * (centers - overlay.mean) ** 2 / overlay.variance) / math.sqrt(
        2 * math.pi * overlay.variance
    )
    return {
        "d": int(d),
        "n_vectors": int(n_vectors),
        "pairs": int(stats.values.size),
        "bin_edges": edges.tolist(),
        "counts": counts.tolist(),
        "density": density.tolist(),
        "normal_density": normal_density.tolist(),
        "overlay": {"mean": overlay.mean, "variance": overlay.variance},
        "empirical": {
            "mean": stats.mean,
            "variance": stats.variance,
            "mean_stderr": stats.mean_stderr,
            "variance_stderr": stats.variance_stderr,
            "mean_z": (stats.mean - overlay.mean) / stats.mean_stderr,
            "variance_z": (stats.variance - overlay.variance) / stats.variance_stderr,
        },
    }


def cmd_histogram(args, watch) -> RunReport:
    spec = dist_from_args(args)
    seed = RandomSeed(args.seed).derive(STREAM_HISTOGRAM)
    hists = []
    with watch.stage("histogram"):
        for d in args.d_list:
            hists.append(histogram_entry(spec, d, args.n_vectors, args.bins, seed.derive(d)))
    return RunReport("histogram", dict(_parameters(args), distribution=spec.describe()), histograms=hists)


def cmd_compare(args, watch) -> RunReport:
    curves = []
    sources = []
    for path in args.reports:
        rep = RunReport.load(path)
        for c in rep.curves:
            label = c.label or c.provenance
            curves.append(evaluator.ConsistencyCurve(c.k_values, c.scores, c.stderr, c.provenance, c.trials, c.seed,
                                                     f"{rep.command}:{label}", c.details))
            sources.append(str(path))
    if len(curves) < 2:
        raise AvgEmbError("compare needs at least two curves across the given reports")
    ref = curves[0]
    for c in curves[1:]:
        if c.k_values != ref.k_values:
            raise AvgEmbError(
                f"mismatched k grids: {ref.label} has {list(ref.k_values)}, {c.label} has {list(c.k_values)}"
            )
    pairs = [_deltas(ref, c) for c in curves[1:]]
    summary = {"pairs": pairs, "max_abs_gap": max(p["max_abs_gap"] for p in pairs)}
    params = dict(_parameters(args), sources=sources)
    return RunReport("compare", params, curves=curves, comparisons=summary)


COMMANDS = {
    "analytic": cmd_analytic,
    "simulate": cmd_simulate,
    "empirical": cmd_empirical,
    "histogram": cmd_histogram,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    watch = _Stopwatch()
    try:
        threads = args.threads if args.threads is not None else _backend.default_threads()
        args.threads = _backend.set_threads(threads)
        formats = _formats(args.format)
        if not 0 <= args.seed < 2**64:
            raise AvgEmbError("--seed must be an unsigned 64-bit integer")
        report = COMMANDS[args.command](args, watch)
        report.timing = watch.stages
        report.parameters["command_line"] = "avgemb " + " ".join(shlex.quote(a) for a in argv)
        written = write_report(report, args.out, formats)
    except QuadratureError as exc:
        logger.error("%s", exc)
        return EXIT_NUMERIC
    except (AvgEmbError, OSError, ValueError) as exc:
        logger.error("%s", exc)
        return EXIT_INPUT
    for path in written:
        logger.info("wrote %s", path)
    for c in report.curves:
        logger.info("%s: %s", c.label or c.provenance,
                    " ".join(f"k={k}:{s:.4f}" for k, s in zip(c.k_values, c.scores)))
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
