"""Command-line front end.

Subcommands: fit, evaluate, explain, synth, bench, boundcheck.  Every
command writes a run manifest next to its output; failures print a JSON
error object on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import itertools
import json
import logging
import math
import platform
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy
import sklearn

from .bases import FAMILY_KINDS, build_family, build_omicplus
from .data import (
    gen_bound_matrix,
    gen_synthetic,
    load_dataset,
    load_triplets,
    sample_ordering,
    split,
)
from .evaluation import (
    bound_value,
    calibrate_lambdas,
    compare_on_synthetic,
    empirical_sample_complexity,
    rmse,
    spearman,
)
from .model import FittedModel, component_labels, load, save
from .scalable import AlsOptions, fit_scalable
from .solver import (
    SolveOptions,
    _fit_dense,
    _grid_product,
    default_grid,
    default_ties,
    select_on_validation,
)

__all__ = ["main", "build_parser", "parse_weights", "ConfigError"]

DENSE_LIMIT = 4_000_000
_log = logging.getLogger("omic")


class ConfigError(ValueError):
    """Invalid command-line configuration (raised before any computation)."""


# weight specifications ---------------------------------------------------


def _name_table(family):
    table = {}
    for key, label in component_labels(family).items():
        table[label] = key
        table[f"M{key[0]}{key[1]}"] = key
    return table


def parse_weights(tokens, family, multi=False):
    """Parse ``name[=name...]=v1[,v2...]`` tokens.

    Names are component labels (``user_bias``, ``residual``...) or ``Mkl``;
    ``*`` sets every component not named elsewhere.  A lone number applies
    to all components.  Returns ``(values, ties)`` where ``values`` maps keys
    to a float (or a list of floats when ``multi``) and ``ties`` lists the
    groups joined by ``=``.
    """
    names = _name_table(family)
    values, ties, default = {}, [], None
    for token in tokens:
        parts = token.split("=")
        raw, targets = parts[-1], parts[:-1]
        try:
            nums = [float(v) for v in raw.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"bad weight value in {token!r}") from None
        if not nums or any(math.isnan(v) or v < 0 for v in nums):
            raise ConfigError(f"weights must be nonnegative numbers: {token!r}")
        if not multi and len(nums) != 1:
            raise ConfigError(f"expected a single value in {token!r}; use --grid for lists")
        val = nums if multi else nums[0]
        if not targets or targets == ["*"]:
            default = val
            continue
        group = []
        for name in targets:
            if name not in names:
                raise ConfigError(
                    f"unknown component {name!r} for family {family.kind!r}; "
                    f"known: {sorted(n for n in names if not n.startswith('M'))}"
                )
            values[names[name]] = val
            group.append(names[name])
        if len(group) > 1:
            ties.append(tuple(group))
    for key in family.keys():
        if key not in values and default is not None:
            values[key] = default
    return values, ties


# helpers -----------------------------------------------------------------


def _versions():
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {
        "package": pkg,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "scikit-learn": sklearn.__version__,
    }


def _write_manifest(args, path):
    config = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    blob = json.dumps(config, sort_keys=True, default=str)
    manifest = {
        "command": args.command,
        "argv": sys.argv[1:],
        "config": json.loads(blob),
        "config_sha256": hashlib.sha256(blob.encode()).hexdigest(),
        "seed": getattr(args, "seed", None),
        "versions": _versions(),
        "created_unix": time.time(),
    }
    Path(path).write_text(json.dumps(manifest, indent=2))


def _manifest_path(out):
    out = Path(out)
    if out.is_dir():
        return out / "manifest.json"
    return out.with_name(out.name + ".manifest.json")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


def _finite(v):
    return None if v is None or (isinstance(v, float) and not math.isfinite(v)) else v


def _weights_json(family, lambdas):
    labels = component_labels(family)
    return {labels[k]: ("inf" if math.isinf(v) else v) for k, v in sorted(lambdas.items())}


def _rmse_of(model, obs):
    if obs is None or obs.nnz == 0:
        return None
    return rmse(obs.values, model.predict(obs.rows, obs.cols))


def _parse_ratios(text):
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"bad split ratios {text!r}") from None
    if len(vals) != 3:
        raise ConfigError("--split needs three comma-separated ratios")
    return vals


# commands ----------------------------------------------------------------


def _check_fit_config(args):
    if args.family in ("omicplus", "bomicplus") and not (
        args.communities_users and args.communities_items
    ):
        raise ConfigError(
            f"family {args.family!r} requires --communities-users and --communities-items"
        )
    if args.force_dense and args.force_scalable:
        raise ConfigError("--force-dense and --force-scalable are mutually exclusive")
    if (args.lam is None) == (args.grid is None):
        raise ConfigError("give exactly one of --lambda or --grid")
    if args.rank < 1:
        raise ConfigError("--rank must be >= 1")
    if not args.tol > 0 or args.max_iters < 1:
        raise ConfigError("--tol must be positive and --max-iters >= 1")


def _fit_scalable_grid(train, val, family, grid, ties, als, opts):
    best = None
    warm = None
    for lam in _grid_product(family, grid, ties):
        if all(math.isinf(v) for v in lam.values()):
            continue
        comps, trace = fit_scalable(train, family, lam, als, opts, warm_start=warm)
        warm = {k: c for k, c in comps.items() if not math.isinf(lam[k])}
        model = FittedModel(family, comps, lam)
        score = _rmse_of(model, val)
        if best is None or score < best[0]:
            best = (score, lam, comps, trace)
    if best is None:
        raise ConfigError("the grid has no admissible point")
    return best[1], best[2], best[3]


def cmd_fit(args):
    _check_fit_config(args)
    data = load_dataset(args.data, args.communities_users, args.communities_items)
    obs = data.observations
    m, n = obs.shape
    family = build_family(args.family, m, n, data.users, data.items)

    ratios = _parse_ratios(args.split) if args.split else None
    if args.grid is not None and ratios is None:
        ratios = (0.85, 0.10, 0.05)
    train, val, test = split(obs, ratios, args.seed) if ratios else (obs, None, None)

    scalable = args.force_scalable or (m * n > DENSE_LIMIT and not args.force_dense)
    opts = SolveOptions(tol=args.tol, max_iters=args.max_iters)
    als = AlsOptions(max_rank=args.rank, seed=args.seed)

    if args.lam is not None:
        lambdas, _ = parse_weights(args.lam, family)
        missing = [k for k in family.keys() if k not in lambdas]
        if missing:
            raise ConfigError(f"no weight for components {missing}; add '*=value'")
        if scalable:
            comps, trace = fit_scalable(train, family, lambdas, als, opts)
        else:
            res = _fit_dense(train, family, lambdas, opts)
            comps, trace = res.components, res.trace
    else:
        if val is None or val.nnz == 0:
            raise ConfigError("grid search needs a nonempty validation split")
        given, ties = parse_weights(args.grid, family, multi=True)
        ties = ties + [t for t in default_ties(family) if not any(set(t) & set(g) for g in ties)]
        grid = default_grid(train, family, ties=ties)
        grid.update(given)
        if scalable:
            lambdas, comps, trace = _fit_scalable_grid(train, val, family, grid, ties, als, opts)
        else:
            best, _ = select_on_validation(train, val, family, grid, opts, ties)
            lambdas, comps, trace = best.lambdas, best.components, best.trace

    meta = {
        "solver": "scalable" if scalable else "dense",
        "seed": args.seed,
        "iterations": trace.n_iter,
        "converged": trace.converged,
        "final_objective": _finite(trace.final_objective),
        "row_labels": list(obs.row_labels) if obs.row_labels else None,
        "col_labels": list(obs.col_labels) if obs.col_labels else None,
    }
    model = FittedModel(family, comps, lambdas, meta)
    out = Path(args.out)
    save(model, out)
    labels = component_labels(family)
    report = {
        "model": str(out),
        "family": family.kind,
        "shape": [m, n],
        "solver": meta["solver"],
        "lambdas": _weights_json(family, lambdas),
        "iterations": trace.n_iter,
        "converged": trace.converged,
        "objective_trace": [_finite(v) for v in trace.objective],
        "component_norms": {labels[k]: v for k, v in sorted(model.component_norms().items())},
        "train_rmse": _rmse_of(model, train),
        "validation_rmse": _rmse_of(model, val),
        "test_rmse": _rmse_of(model, test),
    }
    report_path = Path(args.report) if args.report else out.with_name(out.name + ".json")
    report_path.write_text(json.dumps(report, indent=2, default=_json_default))
    _write_manifest(args, _manifest_path(out))
    return report


def _index_maps(model):
    maps = []
    for name in ("row_labels", "col_labels"):
        labels = model.meta.get(name)
        maps.append(None if labels is None else {lab: i for i, lab in enumerate(labels)})
    return maps


def _lookup(mapping, ident, size):
    if mapping is None:
        idx = int(ident)
        return idx if 0 <= idx < size else None
    return mapping.get(ident)


def cmd_evaluate(args):
    model = load(args.model)
    obs = load_triplets(args.data)
    rmap, cmap = _index_maps(model)
    m, n = model.shape
    rows, cols, keep = [], [], []
    for t in range(obs.nnz):
        i = _lookup(rmap, obs.row_labels[obs.rows[t]], m)
        j = _lookup(cmap, obs.col_labels[obs.cols[t]], n)
        if i is None or j is None:
            continue
        rows.append(i)
        cols.append(j)
        keep.append(t)
    if not keep:
        raise ValueError("no test entry refers to a known row and column")
    truth = obs.values[keep]
    pred = model.predict(np.asarray(rows), np.asarray(cols))
    if args.clip:
        pred = np.clip(pred, *args.clip)
    report = {
        "n": len(keep),
        "skipped": obs.nnz - len(keep),
        "rmse": rmse(truth, pred),
        "spc": _finite(spearman(truth, pred)) if len(keep) > 1 else None,
    }
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2))
        _write_manifest(args, _manifest_path(args.out))
    return report


def cmd_explain(args):
    model = load(args.model)
    labels = model.labels()
    if args.global_:
        norms = model.component_norms()
        report = {"component_norms": {labels[k]: v for k, v in sorted(norms.items())}}
    else:
        if args.row is None or args.col is None:
            raise ConfigError("give --row and --col, or --global")
        rmap, cmap = _index_maps(model)
        m, n = model.shape
        i = _lookup(rmap, _coerce(args.row), m)
        j = _lookup(cmap, _coerce(args.col), n)
        if i is None or j is None:
            raise KeyError(f"unknown id (row {args.row!r}, column {args.col!r})")
        parts = model.explain_entry(i, j)
        report = {
            "row": args.row,
            "col": args.col,
            "prediction": float(model.predict(np.array([i]), np.array([j]))[0]),
            "contributions": {labels[k]: v for k, v in sorted(parts.items())},
        }
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2))
        _write_manifest(args, _manifest_path(args.out))
    return report


def _coerce(text):
    try:
        return int(text)
    except ValueError:
        return text


def cmd_synth(args):
    inst = gen_synthetic(args.alpha, args.gamma, args.p_obs, args.m, args.n, args.c, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    np.savetxt(out / "matrix.csv", inst.R, delimiter=",", fmt="%.17g")
    obs = inst.observations
    with open(out / "observed.tsv", "w") as fh:
        for i, j, v in zip(obs.rows, obs.cols, obs.values):
            fh.write(f"{i}\t{j}\t{float(v)!r}\n")
    _write_manifest(args, out / "manifest.json")
    return {"matrix": str(out / "matrix.csv"), "observed": str(out / "observed.tsv"), "nnz": obs.nnz}


BENCH_COLUMNS = ["alpha", "gamma", "p_obs", "seed", "method", "rmse", "spc", "mbd", "ubd", "ibd"]


def cmd_bench(args):
    rows = []
    for alpha, gamma, p in itertools.product(args.alpha, args.gamma, args.p_obs):
        for seed in range(args.seed, args.seed + args.seeds):
            inst = gen_synthetic(alpha, gamma, p, args.m, args.n, args.c, seed)
            opts = SolveOptions(tol=args.tol, max_iters=args.max_iters)
            for method, rep in compare_on_synthetic(inst, args.grid_size, seed=seed, opts=opts).items():
                rows.append([alpha, gamma, p, seed, method, rep.rmse, rep.spc, rep.mbd, rep.ubd, rep.ibd])
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BENCH_COLUMNS)
        writer.writerows(rows)
    _write_manifest(args, _manifest_path(args.out))
    return {"rows": len(rows), "csv": args.out}


BOUND_COLUMNS = ["config", "a", "r", "C", "m", "bound", "n_epsilon", "lambda_11", "lambda_22"]


def boundcheck_configs(count, seed, m_min=100, m_max=200):
    """Random ``(a, r, C, m)`` with ``a, r`` in 2..8, ``C`` in [0.5, 2] and ``a | m``."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        a = int(rng.integers(2, 9))
        r = int(rng.integers(2, 9))
        C = float(rng.uniform(0.5, 2.0))
        lo, hi = -(-m_min // a), m_max // a
        m = a * int(rng.integers(lo, hi + 1))
        out.append((a, r, C, m))
    return out


def run_boundcheck(configs, seed=0, mode="uniform", epsilon=0.1, opts=None):
    """``(bound, N_eps, lambdas)`` per configuration."""
    results = []
    for t, (a, r, C, m) in enumerate(configs):
        R, users, items = gen_bound_matrix(a, r, C, m, seed + t)
        lam = calibrate_lambdas(R, users, items, seed=seed + t, num=4)
        order = sample_ordering(m, m, mode, seed + t)
        res = empirical_sample_complexity(
            R, build_omicplus(users, items), lam, order, epsilon, opts=opts
        )
        bound = bound_value(a, a, m, m, {(1, 1): a, (2, 2): r}, {(1, 1): 1.0, (2, 2): C})
        results.append((bound, res.n_epsilon, lam))
    return results


def cmd_boundcheck(args):
    configs = boundcheck_configs(args.configs, args.seed, args.m_min, args.m_max)
    results = run_boundcheck(configs, args.seed, args.mode, args.epsilon)
    table = []
    for t, ((a, r, C, m), (bound, n_eps, lam)) in enumerate(zip(configs, results)):
        table.append([t, a, r, C, m, bound, n_eps if n_eps is not None else "", lam[(1, 1)], lam[(2, 2)]])
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BOUND_COLUMNS)
        writer.writerows(table)
    reached = [(b, n) for b, n, _ in results if n is not None]
    corr = spearman([b for b, _ in reached], [n for _, n in reached]) if len(reached) > 1 else None
    _write_manifest(args, _manifest_path(args.out))
    return {"csv": args.out, "configs": len(configs), "reached": len(reached), "spearman": _finite(corr)}


# parser ------------------------------------------------------------------


def _clip(text):
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("--clip expects 'low,high'") from None
    if lo > hi:
        raise argparse.ArgumentTypeError("--clip low must not exceed high")
    return lo, hi


def _floats(text):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


_WEIGHT_HELP = """\
weight syntax: NAME[=NAME...]=VALUE[,VALUE...]
  names are component labels of the family or Mkl (e.g. M22); '*' sets every
  component not named; joining names with '=' ties them to the same value.
  labels: softimpute: lowrank | bomic: global item_bias user_bias residual |
  omicplus: comm_comm ucomm_item user_icomm residual | bomicplus: global
  icomm_bias item_bias ucomm_bias comm_comm ucomm_item user_bias user_icomm residual
  'inf' removes a component.  example: --lambda global=0 user_bias=item_bias=0.5 residual=3
"""


def build_parser():
    parser = argparse.ArgumentParser(prog="omic", description="Orthogonal inductive matrix completion")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "fit",
        help="train a model on a ratings file",
        epilog=_WEIGHT_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--data", required=True, help="ratings file: user item rating (tab, comma or '::')")
    p.add_argument("--communities-users", help="file of 'user<TAB>community' lines")
    p.add_argument("--communities-items", help="file of 'item<TAB>community' lines")
    p.add_argument("--family", choices=FAMILY_KINDS, default="bomic")
    p.add_argument("--lambda", dest="lam", nargs="+", metavar="SPEC", help="fixed weights")
    p.add_argument("--grid", nargs="+", metavar="SPEC", help="candidate weights; unnamed components use a default grid")
    p.add_argument("--split", help="train,validation,test ratios (default 0.85,0.10,0.05 with --grid)")
    p.add_argument("--rank", type=int, default=50, help="maximum rank per component (scalable path)")
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--report", help="JSON report path (default: <out>.json)")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--force-dense", action="store_true")
    g.add_argument("--force-scalable", action="store_true")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("evaluate", help="RMSE and Spearman correlation on a ratings file")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--clip", type=_clip, help="clip predictions to 'low,high'")
    p.add_argument("--out", help="write the JSON report here as well")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("explain", help="per-component contributions or global component norms")
    p.add_argument("--model", required=True)
    p.add_argument("--row", help="original user id")
    p.add_argument("--col", help="original item id")
    p.add_argument("--global", dest="global_", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser(
        "synth",
        help="write a synthetic bias/interaction instance",
        description="Writes matrix.csv (full matrix), observed.tsv (row, col, value; 0-based) and manifest.json.",
    )
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--gamma", type=int, default=4)
    p.add_argument("--p-obs", type=float, default=0.3)
    p.add_argument("--m", type=int, default=100)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--c", type=float, default=100.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser(
        "bench",
        help="BOMIC vs B-SI vs SI on synthetic instances",
        description="CSV columns: " + ",".join(BENCH_COLUMNS) + " (one row per method, cell and seed).",
    )
    p.add_argument("--alpha", type=_floats, default=[0.0, 0.25, 0.5, 0.75, 1.0])
    p.add_argument("--gamma", type=lambda s: [int(v) for v in s.split(",")], default=[1, 4])
    p.add_argument("--p-obs", type=_floats, default=[0.15, 0.3, 0.5])
    p.add_argument("--seeds", type=int, default=50, help="number of seeds per cell")
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--m", type=int, default=100)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--c", type=float, default=100.0)
    p.add_argument("--grid-size", type=int, default=5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-iters", type=int, default=300)
    p.add_argument("--out", required=True, help="CSV path")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser(
        "boundcheck",
        help="sample-complexity bound versus measured N_eps",
        description="CSV columns: " + ",".join(BOUND_COLUMNS) + " (n_epsilon empty when never reached).",
    )
    p.add_argument("--configs", type=int, default=20)
    p.add_argument("--m-min", type=int, default=100)
    p.add_argument("--m-max", type=int, default=200)
    p.add_argument("--mode", choices=("uniform", "checkerboard"), default="uniform")
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="CSV path")
    p.set_defaults(func=cmd_boundcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        result = args.func(args)
    except ConfigError as exc:
        print(json.dumps({"error": "config", "message": str(exc)}), file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported as JSON for callers
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps(result, indent=2, default=_json_default))
    return 0


if __name__ == "__main__":
    sys.exit(main())
