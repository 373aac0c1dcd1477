"""Command-line front end.

Exit status: 0 on success, 2 on usage errors (bad flags, missing fit
artifact), 1 on data or numerical failures.  Failures print the pipeline
stage and a remediation hint to stderr.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .artifact import ArtifactError, FittedModel, load_model, save_model
from .model_core import DataError, load_csv
from .pipeline import FitOptions, StageError, fit
from .predict import report_table, report_to_csv, reports_from_csv
from .simulate import ReplicateFailure, load_config, run_experiment

__all__ = ["main", "build_parser"]

log = logging.getLogger("nonsparse")


def _lambda(text: str):
    if text == "auto":
        return None
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected 'auto' or a positive number") from None
    if not v > 0:
        raise argparse.ArgumentTypeError("lambda must be positive")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="nonsparse",
        description="Dantzig selection with bias-corrected sub-model estimation.",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit a CSV dataset and save a model artifact")
    f.add_argument("--input", required=True, help="CSV with a header row; last column is the response")
    f.add_argument("--response", help="name of the response column (default: last column)")
    f.add_argument("--output", required=True, help="output prefix for .json, _coef.csv and _summary.txt")
    f.add_argument("--lambda", dest="lam", type=_lambda, default=None, metavar="{auto|VALUE}",
                   help="Dantzig tuning constant on the unit-norm column scale (default auto)")
    f.add_argument("--sigma", type=_lambda, default=None, metavar="{auto|VALUE}",
                   help="noise standard deviation (default: estimated)")
    f.add_argument("--kappa", type=float, default=0.25, help="threshold multiplier, tau = kappa * sigma")
    f.add_argument("--d-pseudo", type=_positive_int, default=1, help="pseudo-variables taken from U")
    f.add_argument("--alpha", choices=("zero", "dantzig", "file"), default="zero",
                   help="weights on unselected columns for the first V coordinate")
    f.add_argument("--alpha-file", help="comma-separated weights, one per predictor column (with --alpha file)")
    f.add_argument("--instrument", choices=("auto", "exact", "approx"), default="auto")
    f.add_argument("--rank-cap", type=_positive_int, default=3,
                   help="largest retained rank before the single-row instrument is used")
    f.add_argument("--bandwidth-scale", type=float, default=1.0)
    f.add_argument("--sis", type=_positive_int, default=None, metavar="D_KEEP",
                   help="screen to D_KEEP columns before selection")
    f.add_argument("--seed", type=int, default=0, help="seed for the data-driven lambda draws")
    f.add_argument("--empty-selection", choices=("error", "strongest"), default="error")

    pr = sub.add_parser("predict", help="predict new rows from a saved artifact")
    pr.add_argument("--model", required=True, help="artifact written by 'fit'")
    pr.add_argument("--input", required=True, help="CSV with the training predictor columns")
    pr.add_argument("--output", required=True, help="CSV for the three predictor columns")

    s = sub.add_parser("simulate", help="run a simulation config and write a report")
    s.add_argument("--config", required=True, help="INI experiment file")
    s.add_argument("--seed", type=int, required=True, help="master seed (required)")
    s.add_argument("--replicates", type=_positive_int, default=None)
    s.add_argument("--workers", type=_positive_int, default=1)
    s.add_argument("--output", required=True, help="output prefix for .csv and .txt")

    r = sub.add_parser("report", help="render saved report CSVs as an aligned table")
    r.add_argument("--input", required=True, nargs="+", help="report CSV files")
    r.add_argument("--output", help="write the table here instead of stdout")
    return p


def _cmd_fit(args, parser) -> int:
    if args.alpha == "file" and not args.alpha_file:
        parser.error("--alpha file needs --alpha-file")
    data = load_csv(args.input, args.response)
    opts = FitOptions(
        lambda_p=args.lam, sigma=args.sigma, kappa=args.kappa, lambda_seed=args.seed,
        sis_keep=args.sis, d_pseudo=args.d_pseudo, instrument=args.instrument,
        rank_cap=args.rank_cap, bandwidth_scale=args.bandwidth_scale,
        alpha_policy="zero" if args.alpha == "zero" else "dantzig",
        empty_selection=args.empty_selection,
    )
    if args.alpha == "file":
        alpha = np.loadtxt(args.alpha_file, delimiter=",", ndmin=1, dtype=float).ravel()
        opts = replace(opts, alpha_policy="given", alpha=alpha)
    out = fit(data, opts)
    header = load_header(args.input)
    resp = args.response or header[-1]
    model = FittedModel.from_fit(out, resp)
    prefix = Path(args.output)
    save_model(model, prefix.with_suffix(".json"))
    _write_coefficients(out, prefix.parent / f"{prefix.name}_coef.csv")
    text = _fit_summary(out)
    (prefix.parent / f"{prefix.name}_summary.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def load_header(path) -> list[str]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [h.strip() for h in next(csv.reader(fh))]


def _write_coefficients(out, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["column", "index", "theta", "std_error", "theta_dantzig_alpha", "theta_refit"])
        for k, j in enumerate(out.selected):
            w.writerow([
                out.names[j], int(j) + 1, repr(float(out.theta[k])), repr(float(out.theta_se[k])),
                repr(float(out.theta_dantzig_alpha[k])), repr(float(out.theta_refit[k])),
            ])


def _fit_summary(out) -> str:
    d = out.diagnostics
    width = max(len(out.names[j]) for j in out.selected)
    lines = [
        f"selected {out.selected.size} of {out.scale.size} columns",
        f"{'column'.ljust(width)}  {'theta':>11}  {'std.err':>10}  {'refit':>11}",
    ]
    for k, j in enumerate(out.selected):
        lines.append(
            f"{out.names[j].ljust(width)}  {out.theta[k]:11.5g}  {out.theta_se[k]:10.4g}  {out.theta_refit[k]:11.5g}"
        )
    lines += [
        "",
        f"lambda_p (unit-norm scale): {d['lambda_p']:.4g}   sigma: {d['sigma']:.4g}",
        f"instrument: {d['instrument_mode']} (rank {d['effective_rank']})   bandwidth: {d['bandwidth_new']:.4g}",
        f"identifiability eigenvalue: {d['identifiability']:.4g}   boundary flags: {d['boundary_flags_new']}",
    ]
    if d.get("selection_fallback"):
        lines.append("note: threshold kept nothing; the strongest marginal column was used")
    return "\n".join(lines) + "\n"


def _cmd_predict(args, parser) -> int:
    if not Path(args.model).is_file():
        parser.error(f"fit artifact {args.model!r} not found; run 'nonsparse fit' first")
    try:
        model = load_model(args.model)
    except ArtifactError as exc:
        parser.error(str(exc))
    header = load_header(args.input)
    missing = [nm for nm in model.names if nm not in header]
    if missing:
        raise DataError(f"{args.input}: missing predictor columns {missing[:5]}")
    table = np.loadtxt(args.input, delimiter=",", skiprows=1, ndmin=2, dtype=float)
    if not np.all(np.isfinite(table)):
        raise DataError(f"{args.input}: non-finite values")
    cols = [header.index(nm) for nm in model.names]
    b = model.predict(table[:, cols])
    with open(args.output, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["y_full", "y_sub_new", "y_sub_classic"])
        for row in zip(b.y_full, b.y_sub_new, b.y_sub_classic):
            w.writerow([repr(float(v)) for v in row])
    if b.boundary_flags:
        log.warning("%d rows used the nearest-neighbour fallback", b.boundary_flags)
    return 0


def _cmd_simulate(args, parser) -> int:
    if not Path(args.config).is_file():
        parser.error(f"config {args.config!r} not found")
    cfgs = load_config(args.config, master_seed=args.seed, replicates=args.replicates)
    reports = []
    for cfg in cfgs:
        log.info("cell %s: %d replicates", cfg.label or "-", cfg.replicates)
        reports.append(run_experiment(cfg, workers=args.workers))
    prefix = Path(args.output)
    prefix.with_suffix(".csv").write_text(report_to_csv(reports), encoding="utf-8")
    table = report_table(reports)
    prefix.with_suffix(".txt").write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    return 0


def _cmd_report(args, parser) -> int:
    reports = []
    for path in args.input:
        if not Path(path).is_file():
            parser.error(f"report {path!r} not found")
        reports.extend(reports_from_csv(Path(path).read_text(encoding="utf-8")))
    table = report_table(reports)
    if args.output:
        Path(args.output).write_text(table, encoding="utf-8")
    else:
        sys.stdout.write(table)
    return 0


_COMMANDS = {"fit": _cmd_fit, "predict": _cmd_predict, "simulate": _cmd_simulate, "report": _cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _COMMANDS[args.command](args, parser)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
    except ReplicateFailure as exc:
        print(f"error [simulate]: {exc}", file=sys.stderr)
    except (DataError, ArtifactError) as exc:
        print(f"error [input]: {exc}", file=sys.stderr)
    except (ValueError, OSError, np.linalg.LinAlgError) as exc:
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
