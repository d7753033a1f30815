"""Command-line interface.

Subcommands
-----------
estimate     fit the exposure effect from a CSV file, optionally across
             several assumed-valid counts with a homogeneity test
simulate     run a replication study from a built-in preset or a scenario
             file and print the metric table plus a JSON report
instruments  export the generated-instrument matrix, or the
             exclusion-safe interaction index sets, to CSV

Exit codes: 0 success, 2 usage/parameter errors, 3 data errors, 4 weak
identification. All I/O goes through files and stdout; the MR2_THREADS
environment variable supplies the default worker cap for simulations.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys

import numpy as np

from . import montecarlo
from .dataset import Dataset, load_csv
from .diagnostics import hausman_test
from .errors import (
    DataError,
    Mr2Error,
    ParameterError,
    WeakIdentificationError,
)
from .estimator import fit_mr2, fit_naive_2sls, fit_oracle_2sls, ratio_estimate
from .instruments import build_instruments
from .subsets import enumerate_family, partial_id_interactions

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_WEAK_IV = 4


def _expand_names(expr: str) -> list[str]:
    """Split a comma list; 'G1..G5' ranges over a shared prefix."""
    out: list[str] = []
    for part in expr.split(","):
        part = part.strip()
        if not part:
            continue
        m = re.fullmatch(r"([A-Za-z_]\w*?)(\d+)\.\.(?:[A-Za-z_]\w*?)?(\d+)", part)
        if m:
            prefix, lo, hi = m.group(1), int(m.group(2)), int(m.group(3))
            if hi < lo:
                raise ParameterError(f"empty range {part!r}")
            out.extend(f"{prefix}{i}" for i in range(lo, hi + 1))
        else:
            out.append(part)
    return out


def _parse_kdag_list(expr: str) -> list[int]:
    try:
        values = [int(v) for v in expr.split(",") if v.strip()]
    except ValueError:
        raise ParameterError(f"--kdag expects integers, got {expr!r}") from None
    if not values:
        raise ParameterError("--kdag list is empty")
    return values


def _default_threads() -> int:
    env = os.environ.get("MR2_THREADS", "")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


def _emit(text: str, out_path: str | None) -> None:
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")
    else:
        print(text)


def _json_dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)


def cmd_estimate(args) -> int:
    kdags = _parse_kdag_list(args.kdag) if args.kdag else [1]
    d = load_csv(
        args.data, outcome=args.outcome, exposure=args.exposure,
        instruments=_expand_names(args.instruments),
        covariates=_expand_names(args.covariates) if args.covariates else None,
    )
    for kd in kdags:
        if not 1 <= kd <= d.k_total:
            raise ParameterError(
                f"k_dagger {kd} is out of range [1, {d.k_total}] for {d.k_total} instruments"
            )
    if args.method == "mr2":
        fits = [
            fit_mr2(d, kd, adjust_covariates=bool(args.covariates),
                    weighted=args.weighted)
            for kd in kdags
        ]
        payloads = [f.to_json_dict() for f in fits]
        if args.hausman:
            if len(fits) < 2:
                raise ParameterError("--hausman needs at least two --kdag values")
            tests = [
                hausman_test(fits[0], alt, variance=args.variance).to_json_dict()
                for alt in fits[1:]
            ]
            _emit(_json_dumps({"fits": payloads, "hausman": tests}), args.out)
        elif len(payloads) == 1:
            _emit(_json_dumps(payloads[0]), args.out)
        else:
            _emit(_json_dumps(payloads), args.out)
        return EXIT_OK
    if args.hausman:
        raise ParameterError("--hausman applies to the mr2 method only")
    if args.method == "naive":
        payload = fit_naive_2sls(d).to_json_dict()
    elif args.method == "oracle":
        if not args.valid:
            raise ParameterError("--method oracle requires --valid index list")
        valid = tuple(int(v) for v in args.valid.split(","))
        payload = fit_oracle_2sls(d, valid).to_json_dict()
    else:  # ratio
        beta = ratio_estimate(d)
        payload = {
            "beta_a": beta, "se_sandwich": None, "se_homoskedastic": None,
            "first_stage_F": None, "n": d.n, "K": d.k_total,
            "k_dagger": None, "J": 1, "method": "ratio",
        }
    _emit(_json_dumps(payload), args.out)
    return EXIT_OK


def cmd_instruments(args) -> int:
    if args.partial_id:
        if args.K is None or args.kdag is None:
            raise ParameterError("--partial-id needs --K and --kdag")
        kd = int(args.kdag)
        sets = partial_id_interactions(int(args.K), kd)
        text = "\n".join(",".join(map(str, s)) for s in sets)
        _emit(text, args.out)
        return EXIT_OK
    if not args.data or not args.instruments:
        raise ParameterError("instrument export needs --data and --instruments")
    names = _expand_names(args.instruments)
    if not names:
        raise ParameterError("instrument column list is empty")
    kd = int(args.kdag) if args.kdag else 1
    d = _load_instrument_only(args.data, names)
    fam = enumerate_family(d.k_total, kd)
    z = build_instruments(d, fam)
    header = ["Z_" + "_".join(map(str, lab)) for lab in z.labels]
    lines = [",".join(header)]
    for row in z.z:
        lines.append(",".join(f"{v:.17g}" for v in row))
    _emit("\n".join(lines), args.out)
    return EXIT_OK


def _load_instrument_only(path, names) -> Dataset:
    # the exporter only needs the candidate columns; outcome/exposure are
    # placeholders that never reach the output
    from .dataset import _parse_columns, _read_table

    header, rows = _read_table(path)
    cols = _parse_columns(header, rows, names, path)
    g = np.column_stack([cols[c] for c in names])
    dummy = np.arange(g.shape[0], dtype=float)
    return Dataset(y=dummy, a=dummy, g=g, instrument_names=tuple(names))


def cmd_simulate(args) -> int:
    if bool(args.preset) == bool(args.scenario):
        raise ParameterError("provide exactly one of --preset or --scenario")
    if args.preset:
        if args.preset not in montecarlo.PRESETS:
            raise ParameterError(
                f"unknown preset {args.preset!r}; available: "
                + ", ".join(sorted(montecarlo.PRESETS))
            )
        scenario = montecarlo.PRESETS[args.preset]
    else:
        scenario = montecarlo.load_scenario(args.scenario)
    overrides = {}
    if args.reps is not None:
        overrides["reps"] = int(args.reps)
    if args.seed is not None:
        overrides["seed"] = int(args.seed)
    if args.n is not None:
        overrides["n"] = int(args.n)
    if args.kdag is not None:
        overrides["k_dagger"] = int(args.kdag)
    if overrides:
        base = scenario.to_dict()
        base.update(overrides)
        base["beta_direct"] = tuple(base["beta_direct"])
        base["error_cov"] = tuple(tuple(r) for r in base["error_cov"])
        scenario = montecarlo.McScenario(**base)
    estimators = tuple(args.estimators.split(",")) if args.estimators else ("mr2", "oracle", "naive")
    report = montecarlo.run(scenario, estimators=estimators, threads=args.threads)
    print(montecarlo.format_report_table(report))
    if args.out:
        _emit(report.to_json(), args.out)
    else:
        print(report.to_json())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mr2",
        description="Multiply robust instrumental-variable estimation with "
                    "possibly invalid candidate instruments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="fit the exposure effect from a CSV file")
    est.add_argument("--data", required=True, help="CSV file with a header row")
    est.add_argument("--outcome", required=True, help="outcome column name")
    est.add_argument("--exposure", required=True, help="exposure column name")
    est.add_argument("--instruments", required=True,
                     help="comma list of candidate columns; 'G1..G5' ranges allowed")
    est.add_argument("--covariates", default=None,
                     help="comma list of covariate columns used to adjust the "
                          "instrument centering and the outcome stage")
    est.add_argument("--kdag", default="1",
                     help="comma list of assumed-valid counts to fit (sensitivity analysis)")
    est.add_argument("--variance", choices=("sandwich", "homoskedastic"),
                     default="sandwich",
                     help="variance used by the homogeneity test (both are always reported)")
    est.add_argument("--method", choices=("mr2", "ratio", "naive", "oracle"),
                     default="mr2", help="estimator to run")
    est.add_argument("--valid", default=None,
                     help="comma list of valid candidate indices (oracle method)")
    est.add_argument("--weighted", action="store_true",
                     help="apply empirical dependence weights (correlated candidates)")
    est.add_argument("--hausman", action="store_true",
                     help="test the first --kdag fit against each later one")
    est.add_argument("--out", default=None, help="write JSON here instead of stdout")
    est.set_defaults(func=cmd_estimate)

    sim = sub.add_parser("simulate", help="run a replication study")
    sim.add_argument("--preset", default=None,
                     help="built-in design name (e.g. table1-block1)")
    sim.add_argument("--scenario", default=None, help="scenario file path")
    sim.add_argument("--reps", type=int, default=None, help="override replication count")
    sim.add_argument("--seed", type=int, default=None, help="override master seed")
    sim.add_argument("--n", type=int, default=None, help="override sample size")
    sim.add_argument("--kdag", type=int, default=None, help="override assumed-valid count")
    sim.add_argument("--estimators", default=None,
                     help="comma list from: mr2,oracle,naive,ratio (default mr2,oracle,naive)")
    sim.add_argument("--threads", type=int, default=_default_threads(),
                     help="worker cap for replications (default: MR2_THREADS or 1)")
    sim.add_argument("--out", default=None, help="write the JSON report here")
    sim.set_defaults(func=cmd_simulate)

    ins = sub.add_parser("instruments",
                         help="export generated instruments or exclusion-safe index sets")
    ins.add_argument("--data", default=None, help="CSV file with a header row")
    ins.add_argument("--instruments", default=None,
                     help="comma list of candidate columns; ranges allowed")
    ins.add_argument("--kdag", default=None, help="assumed-valid count")
    ins.add_argument("--partial-id", action="store_true", dest="partial_id",
                     help="emit the index sets of exclusion-safe interactions instead")
    ins.add_argument("--K", type=int, default=None,
                     help="candidate count (with --partial-id, no data needed)")
    ins.add_argument("--out", default=None, help="write CSV here instead of stdout")
    ins.set_defaults(func=cmd_instruments)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 on --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except WeakIdentificationError as exc:
        f_part = ""
        if exc.first_stage_f is not None:
            f_part = f" (first-stage F = {exc.first_stage_f:.4g})"
        print(
            f"error: weak identification{f_part}: {exc}\n"
            "hint: inspect the first-stage F statistic across a range of "
            "assumed-valid counts before trusting any point estimate",
            file=sys.stderr,
        )
        return EXIT_WEAK_IV
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Mr2Error as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
