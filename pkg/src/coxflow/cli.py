"""Command-line front end: fit, path, cv, simulate.

Exit codes: 0 success (fit: converged), 2 fit did not converge (outputs are
still written), 1 malformed input with a one-line diagnostic on stderr.
Every command writes a run manifest next to its outputs recording resolved
options, seeds, and input/output digests.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict

import numpy as np

from . import __version__
from .groups import GroupingError, GroupingStructure, read_grouping_file, validate, \
    write_grouping_file
from .select import cross_validate, lambda_sequence, solution_path, write_cv_summary
from .simulate import SCENARIOS, ScenarioSpec, generate_scenario, run_experiment
from .solver import FitConfig, fit
from .survival import DataError, build_risk_index, read_dataset, standardize_dataset, \
    write_dataset

log = logging.getLogger("coxflow")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir_or_file, command, options, inputs, outputs):
    manifest = {
        "tool": "coxflow",
        "version": __version__,
        "command": command,
        "options": {k: v for k, v in sorted(options.items())},
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {str(p): _sha256(p) for p in outputs},
    }
    if os.path.isdir(out_dir_or_file):
        path = os.path.join(out_dir_or_file, "manifest.json")
    else:
        path = str(out_dir_or_file) + ".manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _align_structure(structure: GroupingStructure, names: tuple[str, ...]) -> GroupingStructure:
    """Remap a parsed grouping structure onto the data's column order."""
    if structure.variables == names:
        aligned = structure
    else:
        pos = {v: j for j, v in enumerate(names)}
        for v in structure.variables:
            if v not in pos:
                raise GroupingError(f"grouping file references unknown covariate {v!r}")
        if structure.p != len(names):
            missing = sorted(set(names) - set(structure.variables))
            detail = f"; data columns missing from it: {missing[:5]}" if missing else ""
            raise GroupingError(
                f"grouping file covers {structure.p} of {len(names)} data columns{detail}"
            )
        remap = {old: pos[v] for old, v in enumerate(structure.variables)}
        groups = tuple(
            type(g)(g.name, tuple(remap[m] for m in g.members), g.weight)
            for g in structure.groups
        )
        unpen = tuple(remap[j] for j in structure.unpenalized)
        aligned = GroupingStructure(groups, len(names), names, unpen)
    diags = validate(aligned)
    if diags:
        raise GroupingError("; ".join(diags))
    return aligned


def _load(args):
    ds = read_dataset(args.data)
    ds.validate()
    structure = _align_structure(read_grouping_file(args.groups), ds.covariate_names)
    return ds, structure


def _coef_table(names, beta, extra_lines=()):
    lines = ["variable,beta,selected"]
    for v, b in zip(names, beta):
        lines.append(f"{v},{float(b)!r},{int(b != 0.0)}")
    lines.extend(extra_lines)
    return "\n".join(lines) + "\n"


def cmd_fit(args) -> int:
    ds, structure = _load(args)
    scales = None
    if args.standardize:
        ds, scales = standardize_dataset(ds)
    index = build_risk_index(ds)
    config = FitConfig(lam=args.lam, tol=args.tol, alpha=args.alpha, q0=args.q0,
                       max_iter=args.max_iter)
    result = fit(index, structure, config)
    beta = result.beta / scales if scales is not None else result.beta
    summary = [
        f"# lambda={args.lam!r}",
        f"# objective={result.objective!r}",
        f"# penalty={result.penalty_value!r}",
        f"# iterations={result.iterations}",
        f"# converged={int(result.converged)}",
    ]
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(_coef_table(ds.covariate_names, beta, summary))
    _write_manifest(args.out, "fit", _options(args), [args.data, args.groups], [args.out])
    if not result.converged:
        log.warning("fit did not converge in %d iterations", result.iterations)
        return 2
    return 0


def cmd_path(args) -> int:
    ds, structure = _load(args)
    index = build_risk_index(ds)
    config = FitConfig(lam=0.0, tol=args.tol, alpha=args.alpha, q0=args.q0,
                       max_iter=args.max_iter)
    if args.nlambda == 1:
        lams = lambda_sequence(index, structure, 2, args.lambda_min_ratio)[:1]
    else:
        lams = lambda_sequence(index, structure, args.nlambda, args.lambda_min_ratio)
    path = solution_path(index, structure, lams, config)
    lines = ["lambda,variable,beta"]
    for lam, f in zip(path.lambdas, path.fits):
        for v, b in zip(ds.covariate_names, f.beta):
            lines.append(f"{float(lam)!r},{v},{float(b)!r}")
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    _write_manifest(args.out, "path", _options(args), [args.data, args.groups], [args.out])
    return 0


def cmd_cv(args) -> int:
    ds, structure = _load(args)
    index = build_risk_index(ds)
    config = FitConfig(lam=0.0, tol=args.tol, alpha=args.alpha, q0=args.q0,
                       max_iter=args.max_iter)
    lams = lambda_sequence(index, structure, args.nlambda, args.lambda_min_ratio)
    cv = cross_validate(ds, structure, lams, k=args.folds, seed=args.seed, config=config,
                        threads=args.threads)
    os.makedirs(args.out_dir, exist_ok=True)
    summary_path = os.path.join(args.out_dir, "cv_summary.csv")
    with open(summary_path, "w", encoding="utf-8") as fh:
        fh.write(write_cv_summary(cv))
    lam = cv.lambda_min if args.rule == "min" else cv.lambda_1se
    beta = cv.path.beta_at(lam)
    coef_path = os.path.join(args.out_dir, "coefficients.csv")
    with open(coef_path, "w", encoding="utf-8") as fh:
        fh.write(_coef_table(ds.covariate_names, beta,
                             [f"# rule={args.rule}", f"# lambda={lam!r}"]))
    _write_manifest(args.out_dir, "cv", _options(args), [args.data, args.groups],
                    [summary_path, coef_path])
    return 0


def cmd_simulate(args) -> int:
    spec = ScenarioSpec(kind=args.scenario, n=args.n, seed=args.seed,
                        p_main=args.p_main, censoring=args.censoring)
    os.makedirs(args.out_dir, exist_ok=True)
    ds, structure, truth, meta = generate_scenario(spec)
    data_path = os.path.join(args.out_dir, "dataset.csv")
    write_dataset(ds, data_path)
    groups_path = os.path.join(args.out_dir, "groups.json")
    with open(groups_path, "w", encoding="utf-8") as fh:
        fh.write(write_grouping_file(structure))
    truth_path = os.path.join(args.out_dir, "truth.csv")
    with open(truth_path, "w", encoding="utf-8") as fh:
        fh.write("variable,beta_true\n")
        for v, b in zip(structure.variables, truth.beta):
            fh.write(f"{v},{float(b)!r}\n")
    result = run_experiment(spec, args.replications, folds=args.folds,
                            n_lambda=args.nlambda, min_ratio=args.lambda_min_ratio,
                            threads=args.threads)
    metrics_path = os.path.join(args.out_dir, "metrics.csv")
    with open(metrics_path, "w", encoding="utf-8") as fh:
        fh.write(result.to_csv())
    options = _options(args)
    options.update({k: v for k, v in meta.items() if k in ("baseline_hazard", "censor_max")})
    _write_manifest(args.out_dir, "simulate", options, [],
                    [data_path, groups_path, truth_path, metrics_path])
    return 0


def _options(args) -> dict:
    skip = {"func", "quiet"}
    return {k: v for k, v in vars(args).items() if k not in skip}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coxflow",
        description="Structured sparse Cox models with time-dependent covariates.",
    )
    parser.add_argument("--threads", type=int, default=os.cpu_count(),
                        help="worker processes for folds/replications")
    parser.add_argument("--quiet", action="store_true", help="suppress progress logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--data", required=True, help="counting-process CSV")
        p.add_argument("--groups", required=True, help="grouping JSON file")
        p.add_argument("--tol", type=float, default=1e-5)
        p.add_argument("--alpha", type=float, default=0.5)
        p.add_argument("--q0", type=float, default=1.0)
        p.add_argument("--max-iter", type=int, default=10000)

    p_fit = sub.add_parser("fit", help="single-lambda fit")
    add_common(p_fit)
    p_fit.add_argument("--lambda", dest="lam", type=float, required=True)
    p_fit.add_argument("--standardize", action="store_true")
    p_fit.add_argument("--out", required=True)
    p_fit.set_defaults(func=cmd_fit)

    p_path = sub.add_parser("path", help="regularization path")
    add_common(p_path)
    p_path.add_argument("--nlambda", type=int, default=30)
    p_path.add_argument("--lambda-min-ratio", type=float, default=0.01)
    p_path.add_argument("--out", required=True)
    p_path.set_defaults(func=cmd_path)

    p_cv = sub.add_parser("cv", help="cross-validated lambda selection")
    add_common(p_cv)
    p_cv.add_argument("--folds", type=int, default=10)
    p_cv.add_argument("--rule", choices=("min", "1se"), default="1se")
    p_cv.add_argument("--seed", type=int, required=True)
    p_cv.add_argument("--nlambda", type=int, default=30)
    p_cv.add_argument("--lambda-min-ratio", type=float, default=0.01)
    p_cv.add_argument("--out-dir", required=True)
    p_cv.set_defaults(func=cmd_cv)

    p_sim = sub.add_parser("simulate", help="generate a scenario and score it")
    p_sim.add_argument("--scenario", required=True, choices=SCENARIOS)
    p_sim.add_argument("--n", type=int, required=True)
    p_sim.add_argument("--p-main", type=int, default=20)
    p_sim.add_argument("--seed", type=int, required=True)
    p_sim.add_argument("--censoring", type=float, default=0.5)
    p_sim.add_argument("--replications", type=int, default=1)
    p_sim.add_argument("--folds", type=int, default=10)
    p_sim.add_argument("--nlambda", type=int, default=30)
    p_sim.add_argument("--lambda-min-ratio", type=float, default=0.01)
    p_sim.add_argument("--out-dir", required=True)
    p_sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (DataError, GroupingError, ValueError, OSError) as e:
        sys.stderr.write(f"error: {e}\n")
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
