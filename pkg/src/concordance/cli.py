"""Command-line interface: ``concordance <command> [options]``.

Commands: assoc, test, calibrate, power, qq, null-dist, recall.  Output goes
to stdout (or ``--out``) as JSON or CSV.  JSON documents carry a
``schema_version`` and echo the full configuration, seed included.

Exit codes: 0 success, 2 input error, 3 undefined statistic, 4 precision limit.
"""

import argparse
import csv
import dataclasses
import io
import json
import logging
import math
import sys
from typing import Optional

import numpy as np

from .calibration import (
    DeltaSet,
    estimate_null_fraction,
    fit_kci_kernel,
    fit_noise,
    fit_rci_threshold,
    replicate_differences,
)
from .core import (
    ConcordanceError,
    KernelSpec,
    PairedSample,
    PrecisionLimitError,
    RciParams,
    UndefinedStatisticError,
    associate,
)
from .exact_null import (
    MultisetSpec,
    asymptotic_ci_pvalue,
    asymptotic_pearson_pvalue,
    asymptotic_spearman_pvalue,
    exact_ci_test,
    inversion_dist_multiset,
    inversion_dist_no_ties,
)
from .permutation import StopSpec, adaptive_permutation_test, fixed_permutation_test
from .recall import SensitivityMatrix, drug_recall, similarity_matrix
from .simulation import NULL_METHODS, NoiseSpec, PowerConfig, run_null_calibration_sim, run_power_sim

__all__ = ["main", "build_parser", "SCHEMA_VERSION"]

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_UNDEFINED = 3
EXIT_PRECISION = 4

log = logging.getLogger("concordance")

STATISTICS = ("pearson", "spearman", "ci", "rci", "kci")


class InputError(ConcordanceError):
    pass


def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _global_options() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("common options")
    g.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    g.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    g.add_argument("--output", choices=("json", "csv"), default="json", help="output format")
    g.add_argument("--out", help="write output to this file instead of stdout")
    g.add_argument("--alpha", type=float, help="significance level")
    g.add_argument("--statistic", choices=STATISTICS, help="association statistic")
    g.add_argument("--delta-x", type=float, help="rCI threshold on x")
    g.add_argument("--delta-y", type=float, help="rCI threshold on y")
    g.add_argument("--kernel-slope", type=float, help="kCI logistic slope (negative)")
    g.add_argument("--kernel-midpoint", type=float, help="kCI logistic midpoint")
    g.add_argument("--min-cells", type=int, help="minimum common non-missing cell lines")
    g.add_argument("--ties", choices=("strict", "exclude"), default="strict", help="CI tie handling")
    g.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_options()
    parser = argparse.ArgumentParser(prog="concordance", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("assoc", parents=[common], help="compute an association statistic")
    p.add_argument("--input", help="CSV with a header; two numeric columns are compared")
    p.add_argument("--x", help="x column name (default: first column, or second if there are 3+)")
    p.add_argument("--y", help="y column name (default: the column after x's default)")
    p.add_argument("--matrix", help="drugs x cell lines CSV; emits the drug x drug similarity matrix")

    p = sub.add_parser("test", parents=[common], help="test for association")
    p.add_argument("--input", required=True)
    p.add_argument("--x")
    p.add_argument("--y")
    p.add_argument("--method", choices=("adaptive", "fixed", "exact", "asymptotic"), default="adaptive")
    p.add_argument("--permutations", type=int, default=10000, help="permutations for --method fixed")
    p.add_argument("--alternative", choices=("two_sided", "greater", "less"), default="two_sided")

    p = sub.add_parser("calibrate", parents=[common], help="rCI threshold and kCI kernel from replicates")
    p.add_argument("--replicates", required=True, nargs="+",
                   help="CSV files with columns id, measurement_a, measurement_b (pooled)")
    p.add_argument("--population", required=True, nargs="+",
                   help="CSV of measurements: id,value or an id column followed by one column per condition")
    p.add_argument("--null-fraction", default="1.0", help="pi0 in (0, 1], or 'auto' for a conservative estimate")
    p.add_argument("--bootstrap", type=int, default=0, help="bootstrap resamples for threshold stability")
    p.add_argument("--max-pairs", type=int, default=10 ** 6, help="population pairs before subsampling")

    p = sub.add_parser("power", parents=[common], help="power simulation")
    p.add_argument("--family", choices=("normal", "beta"), default="normal")
    p.add_argument("--n", type=_ints, default=[100], help="sample sizes, comma separated")
    p.add_argument("--effects", type=_floats, default=[0.0, 0.1, 0.2, 0.3, 0.4, 0.5])
    p.add_argument("--replications", type=int, default=1000)
    p.add_argument("--statistics", default="pearson,spearman,ci,rci")
    p.add_argument("--noise-scale", type=float, help="add Laplace noise of this scale to y")
    p.add_argument("--noise-location", type=float, default=0.0)

    p = sub.add_parser("qq", parents=[common], help="null p-value calibration (QQ data and false positive rates)")
    p.add_argument("--family", choices=("normal", "beta"), default="normal")
    p.add_argument("--n", type=_ints, default=[100])
    p.add_argument("--repetitions", type=int, default=10000)
    p.add_argument("--methods", default=",".join(NULL_METHODS))
    p.add_argument("--points", type=int, default=200, help="QQ points per method")
    p.add_argument("--alphas", type=_floats, default=[1e-2, 1e-3, 1e-4])

    p = sub.add_parser("null-dist", parents=[common], help="exact null distribution of inversion counts")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--n", type=int, help="number of distinct elements")
    g.add_argument("--multiplicities", type=_ints, help="tie multiplicities, comma separated")

    p = sub.add_parser("recall", parents=[common], help="cross-dataset drug recall benchmark")
    p.add_argument("--matrix-a", required=True)
    p.add_argument("--matrix-b", required=True)
    return parser


# ---------------------------------------------------------------- helpers

def _read_columns(path: str, xname: Optional[str], yname: Optional[str]):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if any(c.strip() for c in r)]
    if len(rows) < 2:
        raise InputError(f"{path}: need a header row and data rows")
    header = [h.strip() for h in rows[0]]

    def column(name, default_pos):
        if name is None:
            return default_pos
        if name not in header:
            raise InputError(f"{path}: no column named {name!r}; columns are {header}")
        return header.index(name)

    # with three or more columns the first is taken to be an id column
    first = 1 if len(header) >= 3 else 0
    ix, iy = column(xname, first), column(yname, first + 1)
    xs, ys = [], []
    for lineno, r in enumerate(rows[1:], start=2):
        if len(r) != len(header):
            raise InputError(f"{path} line {lineno}: expected {len(header)} fields, got {len(r)}")
        vals = []
        for i in (ix, iy):
            text = r[i].strip()
            if text.lower() in ("", "na", "nan", "null"):
                vals.append(math.nan)
                continue
            try:
                vals.append(float(text))
            except ValueError:
                raise InputError(f"{path} line {lineno}, column {header[i]!r}: cannot parse {text!r}") from None
        xs.append(vals[0])
        ys.append(vals[1])
    x, y = np.array(xs), np.array(ys)
    ok = np.isfinite(x) & np.isfinite(y)
    if ok.sum() < 2:
        raise InputError(f"{path}: fewer than 2 complete pairs in columns {header[ix]!r}, {header[iy]!r}")
    return PairedSample(x[ok], y[ok]), {"x": header[ix], "y": header[iy], "complete_pairs": int(ok.sum()),
                                        "dropped_rows": int((~ok).sum())}


def _stat_options(args, default_stat: str):
    stat = args.statistic or default_stat
    params = kernel = None
    if stat == "rci":
        params = RciParams(args.delta_x or 0.0, args.delta_y if args.delta_y is not None else (args.delta_x or 0.0))
    if stat == "kci":
        if args.kernel_slope is None or args.kernel_midpoint is None:
            raise InputError("kci needs --kernel-slope and --kernel-midpoint")
        kernel = KernelSpec.logistic(args.kernel_slope, args.kernel_midpoint)
    return stat, params, kernel


def _stat_config(stat, params, kernel, ties):
    return {"statistic": stat, "rci_params": None if params is None else
            {"delta_x": params.delta_x, "delta_y": params.delta_y},
            "kernel": None if kernel is None else
            {"form": kernel.form, "slope": kernel.slope, "midpoint": kernel.midpoint},
            "ties": ties}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def _document(command: str, config: dict, result) -> str:
    doc = {"schema_version": SCHEMA_VERSION, "command": command, "config": config, "result": result}
    return json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(["" if isinstance(v, float) and math.isnan(v) else (repr(v) if isinstance(v, float) else v)
                    for v in r])
    return buf.getvalue()


# ---------------------------------------------------------------- commands

def cmd_assoc(args) -> str:
    stat, params, kernel = _stat_options(args, "ci")
    config = {"seed": args.seed, **_stat_config(stat, params, kernel, args.ties)}
    if args.matrix:
        m = SensitivityMatrix.from_csv(args.matrix)
        min_cells = args.min_cells if args.min_cells is not None else 2
        sims = similarity_matrix(m, None, stat, params, kernel, args.ties, min_cells, args.threads)
        config.update(matrix=args.matrix, min_cells=min_cells)
        if args.output == "csv":
            return _csv(["drug", *m.drugs], [[d, *row] for d, row in zip(m.drugs, sims.tolist())])
        return _document("assoc", config, {"drugs": list(m.drugs), "similarity": sims})
    if not args.input:
        raise InputError("assoc needs --input or --matrix")
    sample, cols = _read_columns(args.input, args.x, args.y)
    res = associate(sample, stat, params, kernel, args.ties)
    config.update(input=args.input, **cols)
    if args.output == "csv":
        d = res.to_dict()
        return _csv(list(d), [list(d.values())])
    return _document("assoc", config, res.to_dict())


def cmd_test(args) -> str:
    stat, params, kernel = _stat_options(args, "ci")
    sample, cols = _read_columns(args.input, args.x, args.y)
    alpha = args.alpha if args.alpha is not None else 0.05
    config = {"seed": args.seed, "alpha": alpha, "method": args.method, "alternative": args.alternative,
              "input": args.input, **cols, **_stat_config(stat, params, kernel, args.ties)}
    if args.method == "adaptive":
        d = adaptive_permutation_test(sample, stat, StopSpec(alpha), args.seed, args.alternative,
                                      params, kernel, args.ties)
        result = d.to_dict()
    elif args.method == "fixed":
        config["permutations"] = args.permutations
        d = fixed_permutation_test(sample, stat, args.permutations, args.seed, alpha, args.alternative,
                                   params, kernel, args.ties)
        result = d.to_dict()
    else:
        est = associate(sample, stat, params, kernel, args.ties).estimate
        if args.method == "exact":
            if stat != "ci":
                raise InputError("the exact test is available for ci only")
            p = exact_ci_test(sample, args.alternative)
        elif stat == "pearson":
            p = asymptotic_pearson_pvalue(est, sample.n)
        elif stat == "spearman":
            p = asymptotic_spearman_pvalue(est, sample.n)
        elif stat in ("ci", "rci"):
            p = asymptotic_ci_pvalue(sample, params, args.alternative)
        else:
            raise InputError("no asymptotic test for kci; use a permutation method")
        result = {"statistic": stat, "observed": est, "p_value": p, "alpha": alpha,
                  "decision": "significant" if p < alpha else "not_significant"}
    if args.output == "csv":
        return _csv(list(result), [list(result.values())])
    return _document("test", config, result)


def _read_replicates(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if any(c.strip() for c in r)]
    if len(rows) < 2 or len(rows[0]) < 3:
        raise InputError(f"{path}: expected columns id, measurement_a, measurement_b")
    a, b = [], []
    for lineno, r in enumerate(rows[1:], start=2):
        if len(r) < 3:
            raise InputError(f"{path} line {lineno}: expected 3 fields, got {len(r)}")
        pair = []
        for col, text in zip(("measurement_a", "measurement_b"), r[1:3]):
            text = text.strip()
            if text.lower() in ("", "na", "nan", "null"):
                pair.append(math.nan)
                continue
            try:
                pair.append(float(text))
            except ValueError:
                raise InputError(f"{path} line {lineno}, column {col!r}: cannot parse {text!r}") from None
        a.append(pair[0])
        b.append(pair[1])
    return replicate_differences(a, b)


def _read_population_groups(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if any(c.strip() for c in r)]
    if len(rows) < 2:
        raise InputError(f"{path}: need a header row and data rows")
    width = len(rows[0])
    groups = []
    for lineno, r in enumerate(rows[1:], start=2):
        vals = []
        for k, text in enumerate(r[1:], start=1):
            text = text.strip()
            if text.lower() in ("", "na", "nan", "null"):
                continue
            try:
                vals.append(float(text))
            except ValueError:
                raise InputError(f"{path} line {lineno}, column {k + 1}: cannot parse {text!r}") from None
        groups.append(vals)
    if width == 2:
        return [np.array([v for g in groups for v in g])]
    return [np.array(g) for g in groups if len(g) >= 2]


def cmd_calibrate(args) -> str:
    signed = np.concatenate([_read_replicates(p) for p in args.replicates])
    s0 = DeltaSet(np.abs(signed), "replicate")
    groups = [g for p in args.population for g in _read_population_groups(p)]
    if not groups:
        raise InputError("population files contain no group with two or more values")
    total = sum(g.size * (g.size - 1) // 2 for g in groups)
    parts = []
    for k, g in enumerate(groups):
        share = g.size * (g.size - 1) // 2
        budget = max(1, int(round(args.max_pairs * share / total))) if total > args.max_pairs else share
        parts.append(DeltaSet.from_population(g, budget, seed=args.seed + k))
    s = DeltaSet.pooled(parts)
    if args.null_fraction == "auto":
        pi0 = estimate_null_fraction(s0, s)
    else:
        try:
            pi0 = float(args.null_fraction)
        except ValueError:
            raise InputError(f"--null-fraction must be a number or 'auto', got {args.null_fraction!r}") from None
    base = fit_rci_threshold(s0, s, pi0, n_bootstrap=args.bootstrap, seed=args.seed)
    try:
        # the kernel is fitted to the pi0 = 1 bound, the only curve that starts at 0
        kernel = fit_kci_kernel(s0, s, 1.0, calibration=base if pi0 == 1.0 else None).kernel
        cal = dataclasses.replace(base, kernel=kernel)
        kernel_error = None
    except ConcordanceError as exc:
        # the threshold is still usable when no sigmoid fits the posterior
        log.warning("kCI kernel not fitted: %s", exc)
        cal, kernel_error = base, str(exc)
    noise = {fam: fit_noise(signed, fam).to_dict() for fam in ("laplace", "gaussian")}
    config = {"seed": args.seed, "replicates": args.replicates, "population": args.population,
              "null_fraction": args.null_fraction, "bootstrap": args.bootstrap, "max_pairs": args.max_pairs,
              "replicate_deltas": len(s0), "population_deltas": len(s)}
    result = {**cal.to_dict(), "kernel_null_fraction": 1.0, "noise": noise}
    if kernel_error:
        result["kernel_error"] = kernel_error
    if args.bootstrap:
        tb = cal.threshold_bootstrap
        result["threshold_bootstrap_summary"] = {"mean": float(tb.mean()), "std": float(tb.std(ddof=1))
                                                 if tb.size > 1 else 0.0,
                                                 "q05": float(np.quantile(tb, 0.05)),
                                                 "q95": float(np.quantile(tb, 0.95))}
    if args.output == "csv":
        t, m = cal.mcc_curve[:, 0], cal.mcc_curve[:, 1]
        post = dict(zip(cal.posterior_curve[:, 0].tolist(), cal.posterior_curve[:, 1].tolist()))
        return _csv(["t", "mcc", "p_h1"], [[a, b, post.get(a, math.nan)] for a, b in zip(t.tolist(), m.tolist())])
    return _document("calibrate", config, result)


def _power_config(args) -> PowerConfig:
    names = [s.strip() for s in args.statistics.split(",") if s.strip()]
    for s in names:
        if s not in STATISTICS:
            raise InputError(f"unknown statistic {s!r}")
    params = None
    if args.delta_x is not None or args.delta_y is not None:
        dx = args.delta_x if args.delta_x is not None else args.delta_y
        params = RciParams(dx, args.delta_y if args.delta_y is not None else dx)
    kernel = None
    if args.kernel_slope is not None or args.kernel_midpoint is not None:
        if args.kernel_slope is None or args.kernel_midpoint is None:
            raise InputError("give both --kernel-slope and --kernel-midpoint")
        kernel = KernelSpec.logistic(args.kernel_slope, args.kernel_midpoint)
    noise = NoiseSpec(args.noise_location, args.noise_scale) if args.noise_scale is not None else None
    return PowerConfig(family=args.family, sample_sizes=tuple(args.n), effect_sizes=tuple(args.effects),
                       alpha=args.alpha if args.alpha is not None else 0.001, replications=args.replications,
                       statistics=tuple(names), rci_params=params, kernel=kernel, noise=noise, seed=args.seed,
                       threads=args.threads)


def cmd_power(args) -> str:
    config = _power_config(args)
    progress = (lambda i, k: log.info("cell %d/%d done", i, k)) if args.verbose else None
    grid = run_power_sim(config, progress)
    if args.output == "csv":
        return grid.to_csv()
    return _document("power", grid.metadata.pop("config"), {"rows": grid.to_records(), **grid.metadata})


def cmd_qq(args) -> str:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    params = None
    if args.delta_x is not None or args.delta_y is not None:
        dx = args.delta_x if args.delta_x is not None else args.delta_y
        params = RciParams(dx, args.delta_y if args.delta_y is not None else dx)
    res = run_null_calibration_sim(args.family, args.n, args.repetitions, methods, args.seed, params)
    if args.output == "csv":
        rows = []
        for (m, n) in sorted(res.pvalues):
            for e, o in res.qq(m, n, args.points).tolist():
                rows.append([m, n, e, o])
        return _csv(["method", "n", "expected_neg_log10_p", "observed_neg_log10_p"], rows)
    qq = {f"{m}:{n}": res.qq(m, n, args.points) for (m, n) in sorted(res.pvalues)}
    return _document("qq", {**res.metadata, "points": args.points, "alphas": args.alphas},
                     {"false_positive_rates": res.fpr_table(args.alphas), "qq": qq})


def cmd_null_dist(args) -> str:
    if args.n is not None:
        dist = inversion_dist_no_ties(args.n)
        config = {"seed": args.seed, "n": args.n}
    else:
        dist = inversion_dist_multiset(MultisetSpec(tuple(args.multiplicities)))
        config = {"seed": args.seed, "multiplicities": args.multiplicities}
    rows = list(dist.to_csv_rows())
    if args.output == "csv":
        return _csv(["k", "count", "probability"], rows)
    return _document("null-dist", config, {"n_elements": dist.n_elements, "max_inversions": dist.max_inversions,
                                           "k": [r[0] for r in rows], "count": [r[1] for r in rows],
                                           "probability": [r[2] for r in rows]})


def cmd_recall(args) -> str:
    stat, params, kernel = _stat_options(args, "pearson")
    a = SensitivityMatrix.from_csv(args.matrix_a)
    b = SensitivityMatrix.from_csv(args.matrix_b)
    min_cells = args.min_cells if args.min_cells is not None else 50
    rep = drug_recall(a, b, stat, params, kernel, args.ties, min_cells, args.threads)
    if args.output == "csv":
        return rep.to_csv()
    config = {"seed": args.seed, "matrix_a": args.matrix_a, "matrix_b": args.matrix_b, "min_cells": min_cells,
              **_stat_config(stat, params, kernel, args.ties)}
    return _document("recall", config, rep.to_dict())


COMMANDS = {
    "assoc": cmd_assoc,
    "test": cmd_test,
    "calibrate": cmd_calibrate,
    "power": cmd_power,
    "qq": cmd_qq,
    "null-dist": cmd_null_dist,
    "recall": cmd_recall,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    if args.seed < 0:
        parser.error("--seed must be non-negative")
    try:
        text = COMMANDS[args.command](args)
    except PrecisionLimitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRECISION
    except UndefinedStatisticError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNDEFINED
    except (ConcordanceError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
