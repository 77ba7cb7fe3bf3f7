"""Command-line interface.

Subcommands: ``enumerate`` (model spaces), ``fit-all`` (sweep one table),
``curve`` (estimate continuum plus model overlays), ``mle`` (one conditional
estimate), ``simulate`` (AIC selection experiment). Outputs are CSV or JSON;
file outputs are accompanied by a run manifest recording the command, input
digest, configuration and tool version.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .estimators import curve, feasible_phi_lb, mle_phi_two, mle_psi_k, psi_for_phi, var_psi_k, wald_interval
from .loglinear import aic_tie_set, fit_models
from .models import enumerate_all, enumerate_conventional
from .oracle import oracle_check
from .simulate import SCENARIO_PRESETS, ConditionalParams, run_scenario
from .tables import FrequencyTable


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if value == int(value) and abs(value) < 1e15:
            return str(int(value))
        return f"{value:.10g}"
    return str(value)


def _json_value(value):
    if isinstance(value, float):
        if math.isnan(value):
            return None
        if value == int(value) and abs(value) < 1e15:
            return int(value)
        return float(f"{value:.10g}")
    return value


def _rows_to_csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def _rows_to_json(rows: list[dict], columns: list[str]) -> list[dict]:
    return [{c: _json_value(row.get(c)) for c in columns} for row in rows]


def _manifest(command: str, config: dict, input_path: str | None) -> dict:
    digest = None
    if input_path:
        digest = hashlib.sha256(Path(input_path).read_bytes()).hexdigest()
    return {
        "command": command,
        "tool": "crckit",
        "version": __version__,
        "input": input_path,
        "input_sha256": digest,
        "config": config,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }


def _emit(args, rows: list[dict], columns: list[str], manifest: dict) -> None:
    if args.format == "json":
        payload = json.dumps({"manifest": manifest, "rows": _rows_to_json(rows, columns)}, indent=2) + "\n"
    else:
        payload = _rows_to_csv(rows, columns)
    output = getattr(args, "output", None)
    if output:
        Path(output).write_text(payload, encoding="utf-8")
        _write_manifest(Path(output), manifest, [str(output)])
    else:
        sys.stdout.write(payload)


def _write_manifest(anchor: Path, manifest: dict, outputs: list[str]) -> None:
    manifest = dict(manifest, outputs=outputs)
    path = anchor.with_name(anchor.name + ".manifest.json") if anchor.suffix else anchor
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def _load_table(path: str) -> FrequencyTable:
    try:
        return FrequencyTable.from_file(path)
    except FileNotFoundError:
        raise SystemExit(f"error: table file not found: {path}")
    except ValueError as exc:
        raise SystemExit(f"error: {exc}")


def _maybe_relabel(table: FrequencyTable, args) -> FrequencyTable:
    last = getattr(args, "last_stream", None)
    if last is None:
        return table
    try:
        return table.with_last_stream(last)
    except ValueError as exc:
        raise SystemExit(f"error: {exc}")


# -- enumerate ---------------------------------------------------------------


def _cmd_enumerate(args) -> int:
    specs = enumerate_conventional(args.streams) if args.conventions else enumerate_all(args.streams)
    if args.counts_only:
        sys.stdout.write(f"{len(specs)}\n")
        return 0
    rows = [{"model_id": i + 1, "p": s.n_params, "terms": s.label} for i, s in enumerate(specs)]
    manifest = _manifest(
        "enumerate",
        {"streams": args.streams, "conventions": args.conventions, "count": len(specs)},
        None,
    )
    _emit(args, rows, ["model_id", "p", "terms"], manifest)
    return 0


# -- fit-all -----------------------------------------------------------------


def _fit_all_rows(table: FrequencyTable, args):
    specs = enumerate_conventional(table.n_streams) if args.conventions else enumerate_all(table.n_streams)
    fits = fit_models(table, specs)
    ties = set(aic_tie_set(fits))
    rows = []
    for i, fit in enumerate(fits):
        row = {
            "model_id": i + 1,
            "terms": fit.spec.label,
            "p": fit.spec.n_params,
            "status": fit.status,
            "loglik": fit.loglik,
            "aic": fit.aic,
            "aic_1dp": "" if math.isnan(fit.aic) else f"{fit.aic:.1f}",
            "bic": fit.bic,
            "n_hat": fit.n_hat,
            "psi_hat": fit.psi_hat,
            "is_aic_min": i in ties,
        }
        if table.n_streams == 2:
            row["phi_hat"] = fit.phi_hat
        if args.oracle_check:
            verdict = oracle_check(fit, table)
            row["oracle_ok"] = "" if verdict is None else verdict
        rows.append(row)
    if args.sort == "aic":
        rows.sort(key=lambda r: (math.isnan(r["aic"]), r["aic"], r["model_id"]))
    return rows


def _cmd_fit_all(args) -> int:
    table = _load_table(args.table)
    rows = _fit_all_rows(table, args)
    columns = ["model_id", "terms", "p", "status", "loglik", "aic", "aic_1dp", "bic", "n_hat", "psi_hat"]
    if table.n_streams == 2:
        columns.append("phi_hat")
    if args.oracle_check:
        columns.append("oracle_ok")
    columns.append("is_aic_min")
    manifest = _manifest(
        "fit-all",
        {"conventions": args.conventions, "oracle_check": args.oracle_check, "sort": args.sort},
        args.table,
    )
    _emit(args, rows, columns, manifest)
    return 0


# -- curve -------------------------------------------------------------------


def _cmd_curve(args) -> int:
    table = _maybe_relabel(_load_table(args.table), args)
    specs = enumerate_conventional(table.n_streams) if args.conventions else enumerate_all(table.n_streams)
    fits = fit_models(table, specs)
    try:
        result = curve(
            table,
            args.param,
            lo=args.lo,
            hi=args.hi,
            step=args.step,
            num=args.points,
            fits=fits,
        )
    except ValueError as exc:
        message = f"error: {exc}"
        if args.param == "phi":
            try:
                message += f" (feasible phi range: [{feasible_phi_lb(table):.10g}, inf))"
            except ValueError:
                pass
        raise SystemExit(message)

    curve_columns = [args.param, "n_hat", "variance", "ci_lo", "ci_hi"]
    curve_rows = [
        {args.param: p.param, "n_hat": p.n_hat, "variance": p.variance, "ci_lo": p.ci_lo, "ci_hi": p.ci_hi}
        for p in result.points
    ]
    hat = f"{args.param}_hat"
    overlay_columns = ["model_id", "terms", hat, "n_hat", "aic", "on_curve"]
    overlay_rows = [
        {"model_id": o.model_id, "terms": o.label, hat: o.param_hat, "n_hat": o.n_hat, "aic": o.aic, "on_curve": o.on_curve}
        for o in result.overlay
    ]
    manifest = _manifest(
        "curve",
        {
            "param": args.param,
            "grid_lo": result.grid_lo,
            "grid_hi": result.grid_hi,
            "grid_size": result.grid_size,
            "step": args.step,
            "conventions": args.conventions,
            "last_stream": args.last_stream,
        },
        args.table,
    )
    prefix = Path(args.out)
    if args.format == "json":
        path = prefix.with_suffix(".json") if not prefix.suffix else prefix
        payload = {
            "manifest": manifest,
            "curve": _rows_to_json(curve_rows, curve_columns),
            "overlay": _rows_to_json(overlay_rows, overlay_columns),
        }
        path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    else:
        curve_path = prefix.parent / f"{prefix.name}.curve.csv"
        overlay_path = prefix.parent / f"{prefix.name}.overlay.csv"
        curve_path.write_text(_rows_to_csv(curve_rows, curve_columns), encoding="utf-8")
        overlay_path.write_text(_rows_to_csv(overlay_rows, overlay_columns), encoding="utf-8")
        manifest_path = prefix.parent / f"{prefix.name}.manifest.json"
        manifest_path.write_text(
            json.dumps(dict(manifest, outputs=[str(curve_path), str(overlay_path)]), indent=2) + "\n",
            encoding="utf-8",
        )
    return 0


# -- mle ---------------------------------------------------------------------


def _cmd_mle(args) -> int:
    table = _maybe_relabel(_load_table(args.table), args)
    try:
        if args.psi is not None:
            value = args.psi
            n_hat = mle_psi_k(table, value)
            variance = var_psi_k(table, value)
            param = "psi"
        else:
            value = args.phi
            if table.n_streams != 2:
                raise ValueError("a phi estimate is defined for two-stream tables only")
            n_hat = mle_phi_two(table, value)
            variance = var_psi_k(table, min(1.0, psi_for_phi(table, value)))
            param = "phi"
    except ValueError as exc:
        raise SystemExit(f"error: {exc}")
    ci_lo, ci_hi = wald_interval(n_hat, variance)
    rows = [
        {"param": param, "value": value, "n_hat": n_hat, "variance": variance, "ci_lo": ci_lo, "ci_hi": ci_hi}
    ]
    manifest = _manifest("mle", {"param": param, "value": value, "last_stream": args.last_stream}, args.table)
    _emit(args, rows, ["param", "value", "n_hat", "variance", "ci_lo", "ci_hi"], manifest)
    return 0


# -- simulate ----------------------------------------------------------------


def _load_scenario(name_or_path: str) -> ConditionalParams:
    if name_or_path in SCENARIO_PRESETS:
        return SCENARIO_PRESETS[name_or_path]
    path = Path(name_or_path)
    if not path.exists():
        raise SystemExit(
            f"error: unknown scenario {name_or_path!r} (presets: {', '.join(sorted(SCENARIO_PRESETS))})"
        )
    try:
        return ConditionalParams.from_dict(json.loads(path.read_text(encoding="utf-8")))
    except (ValueError, json.JSONDecodeError) as exc:
        raise SystemExit(f"error: bad scenario file {name_or_path}: {exc}")


def _cmd_simulate(args) -> int:
    params = _load_scenario(args.scenario)
    try:
        result = run_scenario(
            params, args.reps, space=args.space, seed=args.seed, tie_rule=args.tie_rule
        )
    except ValueError as exc:
        raise SystemExit(f"error: {exc}")
    rows = result.rows()
    manifest = _manifest(
        "simulate",
        {
            "scenario": args.scenario,
            "params": params.to_dict(),
            "reps": args.reps,
            "seed": args.seed,
            "space": args.space,
            "tie_rule": args.tie_rule,
        },
        None,
    )
    _emit(args, rows, ["model_id", "terms", "p", "selections", "mean_n_hat"], manifest)
    return 0


# -- parser ------------------------------------------------------------------


def _add_format(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--format", choices=("csv", "json"), default="csv", help="output format")


def _add_output(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("-o", "--output", help="write to this file (stdout if omitted)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crckit",
        description="Capture-recapture case-count estimation over multiple surveillance streams.",
    )
    parser.add_argument("--version", action="version", version=f"crckit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enumerate", help="list the log-linear model space")
    p.add_argument("--streams", "-K", type=int, required=True, help="number of streams (2-4)")
    p.add_argument("--conventions", action="store_true", help="apply the usual sweep conventions")
    p.add_argument("--counts-only", action="store_true", help="print only the number of models")
    _add_format(p)
    _add_output(p)
    p.set_defaults(func=_cmd_enumerate)

    p = sub.add_parser("fit-all", help="fit every model in the space to a table")
    p.add_argument("table", help="frequency table (CSV or JSON)")
    p.add_argument("--conventions", action="store_true", help="restrict to the conventional models")
    p.add_argument("--oracle-check", action="store_true", help="cross-check fits against closed forms")
    p.add_argument("--sort", choices=("id", "aic"), default="id", help="row order")
    _add_format(p)
    _add_output(p)
    p.set_defaults(func=_cmd_fit_all)

    p = sub.add_parser("curve", help="sample the conditional-estimate continuum with model overlays")
    p.add_argument("table", help="frequency table (CSV or JSON)")
    p.add_argument("--param", choices=("psi", "phi"), required=True, help="index parameter")
    p.add_argument("--lo", type=float, help="grid lower bound")
    p.add_argument("--hi", type=float, help="grid upper bound")
    p.add_argument("--step", type=float, help="grid step (default: uniform --points)")
    p.add_argument("--points", type=int, default=200, help="grid size when --step is not given")
    p.add_argument("--conventions", action="store_true", help="overlay only the conventional models")
    p.add_argument("--last-stream", type=int, help="relabel this stream (1-based) as the last one")
    p.add_argument("--out", required=True, help="output prefix for curve/overlay/manifest files")
    _add_format(p)
    p.set_defaults(func=_cmd_curve)

    p = sub.add_parser("mle", help="one conditional estimate of the total case count")
    p.add_argument("table", help="frequency table (CSV or JSON)")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--psi", type=float, help="assumed last-stream capture probability, in (0, 1]")
    group.add_argument("--phi", type=float, help="assumed two-stream dependence ratio")
    p.add_argument("--last-stream", type=int, help="relabel this stream (1-based) as the last one")
    _add_format(p)
    _add_output(p)
    p.set_defaults(func=_cmd_mle)

    p = sub.add_parser("simulate", help="AIC selection experiment over simulated tables")
    p.add_argument("--scenario", required=True, help="preset name (scenario1, scenario2) or JSON file")
    p.add_argument("--reps", type=int, default=1000, help="number of replicates")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--space", choices=("all", "conventions"), default="all", help="model space")
    p.add_argument(
        "--tie-rule",
        choices=("fractional", "strict"),
        default="fractional",
        help="how AIC ties share a replicate",
    )
    _add_format(p)
    _add_output(p)
    p.set_defaults(func=_cmd_simulate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SystemExit as exc:
        if isinstance(exc.code, str):
            print(exc.code, file=sys.stderr)
            return 2
        raise
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
