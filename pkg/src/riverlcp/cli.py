"""Command-line front door: solve one structure, run the factorial sweep,
or run the installation-deferment study.

Every command writes its outputs (delimited data, JSON, rendered figures)
into ``--out`` together with a run manifest; reruns from the same manifest
produce byte-identical output sets.  Exit codes: 0 success, 2 input error,
3 solver non-convergence; failures print a machine-readable error JSON.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .basin import (
    BasinConfig,
    InvariantViolation,
    SchemaError,
    builtin_basin_names,
    load_basin,
    serialize,
)
from .deferment import MissingProjectError, consumption_rows, run_deferment
from .formulations import (
    MarketStructure,
    build_problem,
    solve_no_market_recursive,
    solution_from_report,
)
from .lcp import dump_problem, solve_fb_newton, solve_lemke
from .metrics import display_quantities, rewards
from .scenarios import (
    SweepOptions,
    classify_scenarios,
    generate_scenarios,
    named_scenario,
    rows_to_csv,
    run_sweep,
)
from .theory import verify_theorem3, verify_theorem4

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SOLVER = 3

STRUCTURES = {
    "gcm": MarketStructure.GCM,
    "csm": MarketStructure.CSM,
    "none": MarketStructure.NO_MARKET,
}


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message}, sort_keys=True))
    return code


def _load(basin_arg: str) -> BasinConfig:
    try:
        return load_basin(basin_arg)
    except (SchemaError, InvariantViolation) as exc:
        raise CliError(f"{type(exc).__name__}: {exc}") from exc


def _parse_start(text: str | None):
    if text is None:
        return 1.0
    try:
        return float(text)
    except ValueError:
        pass
    path = Path(text)
    if not path.exists():
        raise CliError(f"start {text!r} is neither a number nor a file")
    try:
        values = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"start file {text!r} is not valid JSON: {exc}") from exc
    return np.asarray(values, dtype=float)


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_manifest(out: Path, args: argparse.Namespace, extra: dict | None = None) -> None:
    manifest = {
        "tool": "riverlcp",
        "version": __version__,
        "command": args.command,
        "basin": args.basin,
        "structure": getattr(args, "structure", None),
        "solver": getattr(args, "solver", None),
        "start": getattr(args, "start", None),
        "seed": getattr(args, "seed", None),
        "limit": getattr(args, "limit", None),
        "scenario": getattr(args, "scenario", None),
        "years": getattr(args, "years", None),
        "detail": getattr(args, "detail", None),
        "figures": not getattr(args, "no_figures", False),
        "out": str(out),
    }
    if extra:
        manifest.update(extra)
    _write_json(out / "manifest.json", manifest)


def _csv_text(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _solution_payload(cfg: BasinConfig, sol) -> dict:
    entries = []
    for key in sorted(sol.values, key=lambda k: (k[1], k[0], k[2], -1 if k[3] is None else k[3])):
        symbol, player, period, cls = key
        entries.append(
            {
                "symbol": symbol,
                "player": cfg.players[player].name,
                "period": cfg.period_labels[period] if cfg.period_labels else period + 1,
                "class": cls,
                "value": sol.values[key],
            }
        )
    return {
        "structure": sol.structure.value,
        "status": sol.report.status.value,
        "residual": sol.report.residual,
        "iterations": sol.report.iterations,
        "welfare": list(sol.welfare),
        "values": entries,
    }


def cmd_solve(args: argparse.Namespace) -> int:
    cfg = _load(args.basin)
    structure = STRUCTURES[args.structure]
    start = _parse_start(args.start)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    problem = build_problem(cfg, structure)
    if args.dump_problem:
        dump_problem(problem, out / "problem")
    if args.solver == "fb":
        report = solve_fb_newton(problem, start)
    else:
        report = solve_lemke(problem)
    sol = solution_from_report(cfg, structure, problem, report)
    if not report.converged:
        raise CliError(f"solver did not converge (residual {report.residual:.3e})", EXIT_SOLVER)

    _write_manifest(out, args)
    _write_json(out / "solution.json", _solution_payload(cfg, sol))
    _write_json(out / "basin.json", serialize(cfg))

    labels = cfg.period_labels or tuple(range(1, cfg.periods + 1))
    wrows = [[cfg.players[i].name, f"{sol.welfare[i]:.9f}"] for i in range(cfg.n_players)]
    (out / "welfare.csv").write_text(_csv_text(["player", "welfare"], wrows))

    dq = display_quantities(cfg, sol)
    rows = []
    for i, p in enumerate(cfg.players):
        for t in range(cfg.periods):
            rows.append(
                [
                    p.name,
                    labels[t],
                    f"{dq.inflow_with_market[i, t]:.9f}",
                    f"{dq.inflow_without_market[i, t]:.9f}",
                    f"{dq.freely_available_inflow[i, t]:.9f}",
                    f"{dq.max_usable_inflow[i, t]:.9f}",
                    f"{dq.resource_utilization[i, t]:.9f}",
                ]
            )
    (out / "display_quantities.csv").write_text(
        _csv_text(
            [
                "player", "period", "inflow_with_market", "inflow_without_market",
                "freely_available_inflow", "max_usable_inflow", "resource_utilization",
            ],
            rows,
        )
    )

    if structure is MarketStructure.GCM:
        findings3 = [f.as_dict() for f in verify_theorem3(cfg, sol)]
        findings4 = [f.as_dict() for f in verify_theorem4(cfg, sol)]
        _write_json(
            out / "theorem_checks.json",
            {"common_price_findings": findings3, "price_identity_findings": findings4},
        )

    if not args.no_figures:
        from .plots import save_flow_profile

        save_flow_profile(cfg, sol, out / "profile.png")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _load(args.basin)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    opts = SweepOptions(start=float(args.start) if args.start else 1.0)

    specs = generate_scenarios(cfg)
    if args.scenario is not None:
        try:
            spec = named_scenario(args.scenario)
        except KeyError:
            try:
                spec = specs[int(args.scenario)]
            except (ValueError, IndexError) as exc:
                raise CliError(
                    f"unknown scenario {args.scenario!r}; expected a name "
                    f"or an id 0..{len(specs) - 1}"
                ) from exc
        specs = [spec]
    if args.limit is not None:
        specs = specs[: args.limit]

    summary = run_sweep(cfg, specs, opts)
    _write_manifest(out, args, {"scenarios_run": len(specs)})
    (out / "scenarios.csv").write_text(rows_to_csv(summary.rows))
    payload = summary.as_dict()
    if len(specs) == len(generate_scenarios(cfg)):
        payload["classification"] = classify_scenarios(summary)
    _write_json(out / "summary.json", payload)
    (out / "summary_table.txt").write_text(_render_summary_table(summary))

    if summary.n_failures:
        raise CliError(f"{summary.n_failures} scenarios failed to converge", EXIT_SOLVER)

    if args.detail and len(specs) == 1:
        _write_detail(cfg, specs[0], opts, out, figures=not args.no_figures)
    if not args.no_figures and len(specs) > 1:
        from .plots import save_sweep_figure

        save_sweep_figure(summary, out / "sweep.png")
    return EXIT_OK


def _render_summary_table(summary) -> str:
    lines = ["metric                     GCM          CSM"]
    rows = [
        ("% higher v(N)", "pct_higher", "{:.2f}%"),
        ("average v(N)", "mean_v", "${:.2f}"),
        ("std. dev v(N)", "std_v", "${:.2f}"),
        ("average v_delta(N)", "mean_gap", "${:.2f}"),
        ("std. dev v_delta(N)", "std_gap", "${:.2f}"),
    ]
    import math

    def cell(fmt, value):
        return fmt.format(value) if math.isfinite(value) else "-"

    for label, attr, fmt in rows:
        vals = getattr(summary, attr)
        lines.append(
            f"{label:<24s} {cell(fmt, vals['gcm']):>10s} {cell(fmt, vals['csm']):>12s}"
        )
    lines.append(f"scenarios: {len(summary.rows)}  ties: {summary.n_ties}  failures: {summary.n_failures}")
    return "\n".join(lines) + "\n"


def _write_detail(cfg, spec, opts, out: Path, *, figures: bool) -> None:
    from .scenarios import apply_scenario
    from .formulations import solve_structure

    scn = apply_scenario(cfg, spec)
    base = solve_no_market_recursive(scn)
    rows = []
    sols = {}
    for structure in (MarketStructure.GCM, MarketStructure.CSM):
        sol = solve_structure(scn, structure, start=opts.start)
        sols[structure] = sol
        metrics = rewards(sol, base)
        dq = display_quantities(scn, sol)
        for i, p in enumerate(scn.players):
            for t in range(scn.periods):
                rows.append(
                    [
                        structure.value,
                        p.name,
                        t + 1,
                        f"{metrics.rewards[i]:.9f}",
                        f"{dq.inflow_with_market[i, t]:.9f}",
                        f"{dq.inflow_without_market[i, t]:.9f}",
                        f"{dq.freely_available_inflow[i, t]:.9f}",
                        f"{dq.max_usable_inflow[i, t]:.9f}",
                        f"{dq.resource_utilization[i, t]:.9f}",
                    ]
                )
    (out / "detail_profile.csv").write_text(
        _csv_text(
            [
                "structure", "player", "period", "reward",
                "inflow_with_market", "inflow_without_market",
                "freely_available_inflow", "max_usable_inflow", "resource_utilization",
            ],
            rows,
        )
    )
    if figures:
        from .plots import save_flow_profile

        for structure, sol in sols.items():
            save_flow_profile(scn, sol, out / f"profile_{structure.value}.png")


def cmd_deferment(args: argparse.Namespace) -> int:
    cfg = _load(args.basin)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    years = None
    if args.years:
        try:
            years = [int(v) for v in args.years.split(",") if v]
        except ValueError as exc:
            raise CliError(f"bad --years {args.years!r}: {exc}") from exc
    try:
        study = run_deferment(cfg, years, basin_name=args.basin)
    except MissingProjectError as exc:
        raise CliError(str(exc)) from exc
    bad = [r.year for r in study.results if not (r.gcm.report.converged and r.csm.report.converged)]
    if bad:
        raise CliError(f"solver did not converge for installation years {bad}", EXIT_SOLVER)

    _write_manifest(out, args, {"years": list(study.years)})
    wrows = [
        [
            r.year,
            f"{r.total_gcm:.9f}",
            f"{r.total_csm:.9f}",
            f"{r.total_no_market:.9f}",
            f"{r.market_vs_none:.9f}",
        ]
        for r in study.results
    ]
    (out / "welfare_by_year.csv").write_text(
        _csv_text(["install_year", "welfare_gcm", "welfare_csm", "welfare_no_market", "market_minus_none"], wrows)
    )
    crows = [
        [
            row["install_year"], row["player"], row["period"],
            f"{row['Q']:.9f}", f"{row['nominal_demand']:.9f}",
            f"{row['lambda_sup']:.9f}", f"{row['purchases']:.9f}",
        ]
        for row in consumption_rows(cfg, study)
    ]
    (out / "consumption.csv").write_text(
        _csv_text(["install_year", "player", "period", "Q", "nominal_demand", "lambda_sup", "purchases"], crows)
    )
    _write_json(
        out / "common_prices.json",
        {
            str(r.year): [
                {"period": int(t), "price": price, "sellers": [cfg.players[j].name for j in sellers]}
                for (t, price, sellers) in r.common_prices
            ]
            for r in study.results
        },
    )
    if not args.no_figures:
        from .plots import save_deferment_figure

        save_deferment_figure(study, out / "welfare_by_year.png")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="riverlcp",
        description="Water-release market equilibria on line-graph river basins",
    )
    parser.add_argument("--version", action="version", version=f"riverlcp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    names = ", ".join(builtin_basin_names())

    p = sub.add_parser("solve", help="solve one market structure on a basin")
    p.add_argument("--basin", required=True, help=f"built-in name ({names}) or JSON path")
    p.add_argument("--structure", choices=sorted(STRUCTURES), default="gcm")
    p.add_argument("--solver", choices=["fb", "lemke"], default="fb")
    p.add_argument("--start", default=None, help="scalar or JSON vector file (default 1.0)")
    p.add_argument("--out", default="out/solve")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--dump-problem", action="store_true", help="emit the matrix and variable map")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="run the 1296-scenario factorial study")
    p.add_argument("--basin", default="three_node_baseline")
    p.add_argument("--limit", type=int, default=None, help="run only the first N scenario ids")
    p.add_argument("--scenario", default=None, help="single scenario by name or id")
    p.add_argument("--detail", action="store_true", help="emit per-player profile data (single scenario)")
    p.add_argument("--start", default=None, help="scalar start (default 1.0)")
    p.add_argument("--out", default="out/sweep")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("deferment", help="capital installation deferment study")
    p.add_argument("--basin", default="duck_river")
    p.add_argument("--years", default=None, help="comma-separated installation years")
    p.add_argument("--out", default="out/deferment")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_deferment)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        kind = "SolverError" if exc.code == EXIT_SOLVER else "InputError"
        return _fail(kind, str(exc), exc.code)
    except (SchemaError, InvariantViolation) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_INPUT)


if __name__ == "__main__":
    sys.exit(main())
