"""Command-line interface.

Subcommands: test (single-shot tests on CSV data), mpt (the
multiple-splitting projection test), simulate (Monte Carlo size/power
scenarios, grids, and power-vs-m studies), combine (combine externally
computed p-values), tables (dump the embedded critical-value tables).

Reports are JSON by default — sorted keys, two-space indent, trailing
newline — so fixed-seed runs are byte-identical regardless of thread
count; simulation and table rows are also available as CSV.  Wall time
goes to stderr, never into the report.  Exit codes: 0 success, 2 usage
error, 3 data error.
"""

import csv
import io
import json
import os
import time
from typing import Dict, List, Optional, Sequence

import click
import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from click.core import ParameterSource

from .baselines import (
    clx_test,
    cq_test,
    random_projection_test,
    ridge_projection_test,
)
from .combine import (
    COMBINER_NAMES,
    TABLE1_C,
    TABLE2_BETA,
    TABLE_M,
    Z_ALPHA_HALF,
    combine,
)
from .datagen import CovarianceSpec, MeanSpec
from .mpt import mpt, mpt_from_pvalues
from .optimizer import default_lambda
from .penalty import PenaltySpec
from .projtest import make_split, spt
from .simharness import (
    ScenarioConfig,
    TestSpec,
    power_vs_m_study,
    run_grid,
    run_scenario,
)

_TABLE_ALPHA = 0.05


class DataError(click.ClickException):
    """Problem with the data or the computation on it (exit code 3)."""

    exit_code = 3


# ---------------------------------------------------------------------------
# Input handling


def load_matrix(path: str, header: bool = False, normalize: bool = False) -> np.ndarray:
    """Load an observations-by-variables matrix from a CSV file.

    Args:
        path: CSV file path; rows are observations, columns are variables.
        header: If True, the first non-blank row is a header and is skipped.
        normalize: If True, rescale each column j so that
            (1/n) sum_i X_ij^2 = 1.

    Returns:
        n x p float matrix.

    Raises:
        ValueError: Empty file, ragged row, or non-numeric cell — each
            error names the offending row (1-based file line) and column.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        lines = [
            (lineno, row)
            for lineno, row in enumerate(reader, start=1)
            if any(cell.strip() for cell in row)
        ]
    if header:
        lines = lines[1:]
    if not lines:
        raise ValueError(f"{path}: no data rows")
    width = len(lines[0][1])
    data: List[List[float]] = []
    for lineno, row in lines:
        if len(row) != width:
            raise ValueError(
                f"{path}: ragged row at line {lineno}: "
                f"{len(row)} fields, expected {width}"
            )
        values = []
        for col, cell in enumerate(row, start=1):
            try:
                values.append(float(cell))
            except ValueError:
                raise ValueError(
                    f"{path}: non-numeric cell at line {lineno}, "
                    f"column {col}: {cell.strip()!r}"
                ) from None
        data.append(values)
    X = np.asarray(data, dtype=float)
    if normalize:
        scale = np.sqrt(np.mean(X * X, axis=0))
        zero = np.flatnonzero(scale == 0.0)
        if zero.size:
            raise ValueError(
                f"{path}: column {zero[0] + 1} is identically zero; "
                "cannot normalize"
            )
        X = X / scale
    return X


# ---------------------------------------------------------------------------
# Option plumbing

_CONFIG_KEY_ALIASES = {"lambda": "lam"}


def _apply_config_file(ctx: click.Context, opts: Dict) -> Dict:
    """Merge a TOML config file into opts; explicit flags win."""
    path = opts.get("config")
    if not path:
        return opts
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise click.UsageError(f"invalid TOML in {path}: {exc}")
    params = {p.name: p for p in ctx.command.params if isinstance(p, click.Option)}
    for raw_key, value in doc.items():
        name = _CONFIG_KEY_ALIASES.get(raw_key, raw_key.replace("-", "_"))
        if name == "config" or name not in params or name not in opts:
            raise click.UsageError(
                f"unknown config key {raw_key!r} for command {ctx.command.name!r}"
            )
        source = ctx.get_parameter_source(name)
        if source in (ParameterSource.DEFAULT, ParameterSource.ENVIRONMENT):
            param = params[name]
            opts[name] = param.type.convert(value, param, ctx)
    return opts


def _resolve_seed(seed: Optional[int]) -> int:
    """Return the given seed, or draw a fresh one to echo in the report."""
    if seed is not None:
        return int(seed)
    return int(np.random.SeedSequence().generate_state(1, np.uint64)[0])


def _make_penalty(
    kind: str, lam: Optional[float], lambda_c0: float, n1: int, p: int
) -> PenaltySpec:
    """Materialize the penalty from CLI flags for a known split size."""
    value = lam if lam is not None else default_lambda(n1, p, lambda_c0)
    return PenaltySpec(kind=kind, lam=float(value))


def _penalty_echo(pen: PenaltySpec) -> Dict:
    return {"kind": pen.kind, "lambda": pen.lam, "a": pen.a, "b": pen.b}


def _check_alpha_tabulated(alpha: float, override: Optional[float]) -> None:
    if override is None and abs(alpha - _TABLE_ALPHA) > 1e-12:
        raise click.UsageError(
            f"critical values are tabulated only for alpha={_TABLE_ALPHA}; "
            "pass --critical-override for other levels"
        )


def _parse_list(text: str, kind, flag: str) -> List:
    items = [s.strip() for s in text.split(",") if s.strip()]
    if not items:
        raise click.UsageError(f"{flag} must contain at least one value")
    try:
        return [kind(s) for s in items]
    except ValueError:
        raise click.UsageError(f"{flag}: could not parse {text!r}")


def _jsonify(obj):
    """Coerce numpy scalars/arrays into plain JSON-ready Python values."""
    if isinstance(obj, dict):
        return {str(k): _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonify(v) for v in obj.tolist()]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _write_report(
    report: Dict,
    out: str,
    out_file: Optional[str],
    csv_header: Optional[Sequence[str]] = None,
    csv_rows: Optional[Sequence[Sequence]] = None,
) -> None:
    """Emit the report as canonical JSON or, for tabular commands, CSV."""
    if out == "json":
        text = json.dumps(_jsonify(report), sort_keys=True, indent=2) + "\n"
    else:
        if csv_rows is None:
            raise click.UsageError(
                "--out csv is only available for tabular commands "
                "(simulate, tables)"
            )
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(csv_header)
        writer.writerows(csv_rows)
        text = buf.getvalue()
    if out_file:
        with open(out_file, "w") as fh:
            fh.write(text)
    else:
        click.echo(text, nl=False)


def _echo_wall_time(t0: float) -> None:
    click.echo(f"wall time: {time.perf_counter() - t0:.3f}s", err=True)


def _io_options(f):
    f = click.option(
        "--config",
        type=click.Path(exists=True, dir_okay=False),
        default=None,
        help="TOML config file; explicit flags win on conflict.",
    )(f)
    f = click.option(
        "--out-file",
        type=click.Path(dir_okay=False, writable=True),
        default=None,
        help="Write the report to this file instead of stdout.",
    )(f)
    f = click.option(
        "--out",
        type=click.Choice(["json", "csv"]),
        default="json",
        show_default=True,
        help="Report format; csv only for tabular commands.",
    )(f)
    return f


def _data_options(f):
    f = click.option(
        "--normalize",
        is_flag=True,
        default=False,
        help="Rescale each column so (1/n) sum_i X_ij^2 = 1.",
    )(f)
    f = click.option(
        "--header", is_flag=True, default=False, help="Skip a header row."
    )(f)
    return f


def _penalty_options(f):
    f = click.option(
        "--lambda-c0",
        type=float,
        default=1.0,
        show_default=True,
        help="Constant c0 in the rate formula lambda = c0 sqrt(log p / n1).",
    )(f)
    f = click.option(
        "--lambda",
        "lam",
        type=float,
        default=None,
        help="Explicit regularization level (overrides the rate formula).",
    )(f)
    f = click.option(
        "--penalty",
        type=click.Choice(["lasso", "scad", "mcp"]),
        default="lasso",
        show_default=True,
        help="Penalty for the direction estimate.",
    )(f)
    return f


def _seed_option(f):
    return click.option(
        "--seed",
        type=int,
        default=None,
        envvar="HDMT_SEED",
        help="Seed (fallback: HDMT_SEED env var; otherwise drawn and echoed).",
    )(f)


# ---------------------------------------------------------------------------
# Commands


@click.group()
@click.version_option(package_name="hdmt")
def main():
    """High-dimensional mean testing by penalized projections."""


@main.command("test")
@click.argument("data", type=click.Path(exists=True, dir_okay=False))
@click.option(
    "--method",
    type=click.Choice(["spt", "cq", "clx", "rpt", "ridge"]),
    required=True,
    help="Which single-shot test to run.",
)
@click.option("--kappa", type=float, default=0.5, show_default=True,
              help="Testing fraction for splitting methods.")
@_penalty_options
@click.option(
    "--reference",
    type=click.Choice(["normal", "t"]),
    default=None,
    help="Null reference for spt/ridge (defaults: spt normal, ridge t).",
)
@click.option("--k", type=int, default=None,
              help="Projection dimension for rpt (default floor(n/2)).")
@click.option("--ridge-lambda", type=float, default=None,
              help="Ridge level for ridge (default sqrt(log p / n1)).")
@click.option("--alpha", type=float, default=0.05, show_default=True)
@_seed_option
@_data_options
@_io_options
@click.pass_context
def cmd_test(ctx, **opts):
    """Run one test on a CSV data matrix (rows = observations)."""
    t0 = time.perf_counter()
    opts = _apply_config_file(ctx, opts)
    seed = _resolve_seed(opts["seed"])
    method = opts["method"]
    alpha = opts["alpha"]
    try:
        X = load_matrix(opts["data"], opts["header"], opts["normalize"])
        n, p = X.shape
        rng = np.random.default_rng(seed)
        config: Dict = {
            "data": opts["data"],
            "method": method,
            "alpha": alpha,
            "seed": seed,
            "header": opts["header"],
            "normalize": opts["normalize"],
            "n": n,
            "p": p,
        }
        if method == "spt":
            plan = make_split(n, opts["kappa"], rng.permutation(n))
            pen = _make_penalty(
                opts["penalty"], opts["lam"], opts["lambda_c0"], plan.n1, p
            )
            reference = opts["reference"] or "normal"
            result = spt(X, plan, pen, reference=reference, alpha=alpha)
            config.update(
                kappa=opts["kappa"], penalty=_penalty_echo(pen), reference=reference
            )
        elif method == "cq":
            result = cq_test(X, alpha)
        elif method == "clx":
            result = clx_test(X, alpha)
        elif method == "rpt":
            result = random_projection_test(X, k=opts["k"], rng=rng, alpha=alpha)
            config.update(k=result.diagnostics["k"])
        else:
            reference = opts["reference"] or "t"
            result = ridge_projection_test(
                X,
                kappa=opts["kappa"],
                ridge_lambda=opts["ridge_lambda"],
                rng=rng,
                alpha=alpha,
                reference=reference,
            )
            config.update(kappa=opts["kappa"], reference=reference)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    report = {"command": "test", "config": config, "results": result.to_dict()}
    _write_report(report, opts["out"], opts["out_file"])
    _echo_wall_time(t0)


@main.command("mpt")
@click.argument("data", type=click.Path(exists=True, dir_okay=False))
@click.option("--m", type=int, default=40, show_default=True,
              help="Number of random splits.")
@click.option("--kappa", type=float, default=0.5, show_default=True,
              help="Testing fraction.")
@_penalty_options
@click.option(
    "--rho",
    type=click.Choice(["variance", "quantile"]),
    default="quantile",
    show_default=True,
    help="Correlation estimator for the combination step.",
)
@click.option(
    "--reference",
    type=click.Choice(["t", "normal"]),
    default="t",
    show_default=True,
    help="Per-split null reference.",
)
@click.option("--alpha", type=float, default=0.05, show_default=True)
@click.option("--critical-override", type=float, default=None,
              help="Explicit critical value replacing the embedded table.")
@_seed_option
@_data_options
@_io_options
@click.pass_context
def cmd_mpt(ctx, **opts):
    """Run the multiple-splitting projection test on a CSV data matrix."""
    t0 = time.perf_counter()
    opts = _apply_config_file(ctx, opts)
    _check_alpha_tabulated(opts["alpha"], opts["critical_override"])
    seed = _resolve_seed(opts["seed"])
    try:
        X = load_matrix(opts["data"], opts["header"], opts["normalize"])
        n, p = X.shape
        n2 = int(np.floor(opts["kappa"] * n))
        pen = _make_penalty(
            opts["penalty"], opts["lam"], opts["lambda_c0"], n - n2, p
        )
        result = mpt(
            X,
            m=opts["m"],
            kappa=opts["kappa"],
            alpha=opts["alpha"],
            penalty=pen,
            rho_method=opts["rho"],
            reference=opts["reference"],
            seed=seed,
            critical_override=opts["critical_override"],
        )
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    config = {
        "data": opts["data"],
        "m": opts["m"],
        "kappa": opts["kappa"],
        "penalty": _penalty_echo(pen),
        "rho": opts["rho"],
        "reference": opts["reference"],
        "alpha": opts["alpha"],
        "critical_override": opts["critical_override"],
        "seed": seed,
        "header": opts["header"],
        "normalize": opts["normalize"],
        "n": n,
        "p": p,
    }
    report = {"command": "mpt", "config": config, "results": result.to_dict()}
    _write_report(report, opts["out"], opts["out_file"])
    _echo_wall_time(t0)


@main.command("simulate")
@click.option("--n", type=int, default=40, show_default=True)
@click.option("--p", type=int, default=100, show_default=True)
@click.option("--family", type=click.Choice(["cs", "ar", "identity"]),
              default="cs", show_default=True, help="Covariance family.")
@click.option("--r", type=float, default=0.5, show_default=True,
              help="Correlation parameter.")
@click.option("--c", type=float, default=0.0, show_default=True,
              help="Signal scale (0 = null).")
@click.option("--signal-k", type=int, default=10, show_default=True,
              help="Number of nonzero mean entries.")
@click.option("--dist", type=click.Choice(["gaussian", "t"]),
              default="gaussian", show_default=True)
@click.option("--df", type=float, default=6.0, show_default=True,
              help="Degrees of freedom for --dist t.")
@click.option("--reps", type=int, default=1000, show_default=True)
@click.option("--tests", type=str, default="mpt", show_default=True,
              help="Comma-separated test methods to run on each dataset.")
@click.option("--m", type=int, default=40, show_default=True)
@click.option("--kappa", type=float, default=0.5, show_default=True)
@_penalty_options
@click.option("--rho", type=click.Choice(["variance", "quantile"]),
              default="quantile", show_default=True)
@click.option("--reference", type=click.Choice(["normal", "t"]), default=None,
              help="Per-split null reference override; method defaults apply "
                   "when omitted (spt: normal, others: t).")
@click.option("--alpha", type=float, default=0.05, show_default=True)
@click.option("--grid-r", type=str, default=None,
              help="Comma-separated r grid (enables grid mode).")
@click.option("--grid-c", type=str, default=None,
              help="Comma-separated c grid (enables grid mode).")
@click.option("--families", type=str, default=None,
              help="Comma-separated families for grid mode.")
@click.option("--m-values", type=str, default=None,
              help="Comma-separated m values (enables the power-vs-m study).")
@click.option("--threads", type=int, default=None,
              help="Worker threads (default: machine parallelism).")
@_seed_option
@_io_options
@click.pass_context
def cmd_simulate(ctx, **opts):
    """Monte Carlo size/power study; emits one row per (scenario, test)."""
    t0 = time.perf_counter()
    opts = _apply_config_file(ctx, opts)
    seed = _resolve_seed(opts["seed"])
    threads = opts["threads"] if opts["threads"] else (os.cpu_count() or 1)

    methods = [s.strip() for s in opts["tests"].split(",") if s.strip()]
    if not methods:
        raise click.UsageError("--tests must name at least one test")
    if "mpt" in methods or opts["m_values"]:
        _check_alpha_tabulated(opts["alpha"], None)
    pen = None
    if opts["lam"] is not None:
        pen = PenaltySpec(kind=opts["penalty"], lam=opts["lam"])
    elif opts["penalty"] != "lasso":
        n2 = int(np.floor(opts["kappa"] * opts["n"]))
        pen = _make_penalty(
            opts["penalty"], None, opts["lambda_c0"], opts["n"] - n2, opts["p"]
        )
    try:
        tests = tuple(
            TestSpec(
                method=meth,
                m=opts["m"],
                kappa=opts["kappa"],
                penalty=pen,
                lambda_c0=opts["lambda_c0"],
                reference=opts["reference"],
                rho_method=opts["rho"],
            )
            for meth in methods
        )
        base = ScenarioConfig(
            n=opts["n"],
            p=opts["p"],
            covariance=CovarianceSpec(opts["family"], opts["r"]),
            mean=MeanSpec("sparse_ones", c=opts["c"], k=opts["signal_k"]),
            distribution=opts["dist"],
            df=opts["df"],
            alpha=opts["alpha"],
            reps=opts["reps"],
            tests=tests,
            master_seed=seed,
        )
    except ValueError as exc:
        raise click.UsageError(str(exc))

    if opts["p"] >= 500 or opts["reps"] >= 5000:
        click.echo(
            "note: full-scale configuration; expect a long runtime", err=True
        )

    grid_mode = any(opts[k] for k in ("grid_r", "grid_c", "families"))
    if opts["m_values"] and grid_mode:
        raise click.UsageError("--m-values cannot be combined with grid mode")
    try:
        if opts["m_values"]:
            m_values = _parse_list(opts["m_values"], int, "--m-values")
            rows = power_vs_m_study(base, m_values, threads=threads)
            mode: Dict = {"mode": "power_vs_m", "m_values": m_values}
        elif grid_mode:
            r_values = (
                _parse_list(opts["grid_r"], float, "--grid-r")
                if opts["grid_r"]
                else [opts["r"]]
            )
            c_values = (
                _parse_list(opts["grid_c"], float, "--grid-c")
                if opts["grid_c"]
                else [opts["c"]]
            )
            families = (
                _parse_list(opts["families"], str, "--families")
                if opts["families"]
                else [opts["family"]]
            )
            rows = run_grid(
                base, r_values, c_values, families, [opts["dist"]], threads=threads
            )
            mode = {
                "mode": "grid",
                "r_values": r_values,
                "c_values": c_values,
                "families": families,
            }
        else:
            rows = run_scenario(base, threads=threads)
            mode = {"mode": "single"}
    except (ValueError, RuntimeError) as exc:
        raise DataError(str(exc)) from exc

    config = {
        "n": opts["n"],
        "p": opts["p"],
        "family": opts["family"],
        "r": opts["r"],
        "c": opts["c"],
        "signal_k": opts["signal_k"],
        "dist": opts["dist"],
        "df": opts["df"],
        "alpha": opts["alpha"],
        "reps": opts["reps"],
        "tests": methods,
        "m": opts["m"],
        "kappa": opts["kappa"],
        "penalty": opts["penalty"],
        "lambda": opts["lam"],
        "lambda_c0": opts["lambda_c0"],
        "rho": opts["rho"],
        "reference": opts["reference"],
        "seed": seed,
        **mode,
    }
    report = {
        "command": "simulate",
        "config": config,
        "results": [row.to_dict() for row in rows],
    }
    header = [
        "scenario", "test", "rejection_rate", "mc_stderr",
        "reps_completed", "failures",
    ]
    csv_rows = [
        [
            row.scenario,
            row.test,
            f"{row.rejection_rate:.10g}",
            f"{row.mc_stderr:.10g}",
            row.reps_completed,
            row.failures,
        ]
        for row in rows
    ]
    _write_report(report, opts["out"], opts["out_file"], header, csv_rows)
    _echo_wall_time(t0)


@main.command("combine")
@click.argument("pvalues", type=float, nargs=-1)
@click.option(
    "--method",
    type=click.Choice(["mpt"] + list(COMBINER_NAMES)),
    default="mpt",
    show_default=True,
    help="Combination rule applied to the p-values.",
)
@click.option("--rho", type=click.Choice(["variance", "quantile"]),
              default="quantile", show_default=True,
              help="Correlation estimator (mpt method only).")
@click.option("--alpha", type=float, default=0.05, show_default=True)
@click.option("--critical-override", type=float, default=None,
              help="Explicit critical value for the mpt method.")
@_io_options
@click.pass_context
def cmd_combine(ctx, **opts):
    """Combine externally computed p-values into one decision."""
    t0 = time.perf_counter()
    opts = _apply_config_file(ctx, opts)
    pvalues = list(opts["pvalues"])
    if len(pvalues) < 2:
        raise click.UsageError("supply at least 2 p-values")
    bad = [v for v in pvalues if not (0.0 <= v <= 1.0)]
    if bad:
        raise click.UsageError(f"p-values must lie in [0, 1]; got {bad[0]}")
    method = opts["method"]
    if method == "mpt":
        _check_alpha_tabulated(opts["alpha"], opts["critical_override"])
    try:
        if method == "mpt":
            results = mpt_from_pvalues(
                np.asarray(pvalues),
                alpha=opts["alpha"],
                rho_method=opts["rho"],
                critical_override=opts["critical_override"],
            ).to_dict()
        else:
            results = combine(method, pvalues, opts["alpha"]).to_dict()
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    config = {
        "method": method,
        "rho": opts["rho"] if method == "mpt" else None,
        "alpha": opts["alpha"],
        "critical_override": opts["critical_override"],
        "pvalues": pvalues,
    }
    report = {"command": "combine", "config": config, "results": results}
    _write_report(report, opts["out"], opts["out_file"])
    _echo_wall_time(t0)


@main.command("tables")
@click.option(
    "--method",
    type=click.Choice(["variance", "quantile", "both"]),
    default="both",
    show_default=True,
    help="Which embedded table(s) to emit.",
)
@_io_options
@click.pass_context
def cmd_tables(ctx, **opts):
    """Dump the embedded critical-value tables."""
    t0 = time.perf_counter()
    opts = _apply_config_file(ctx, opts)
    variance_rows = [
        {"m": int(m), "critical": float(c)} for m, c in zip(TABLE_M, TABLE1_C)
    ]
    quantile_rows = [
        {"m": int(m), "beta": float(b), "critical": float(Z_ALPHA_HALF)}
        for m, b in zip(TABLE_M, TABLE2_BETA)
    ]
    results: Dict = {}
    csv_rows: List[List] = []
    if opts["method"] in ("variance", "both"):
        results["variance"] = variance_rows
        csv_rows += [
            ["variance", row["m"], "", f"{row['critical']:.10g}"]
            for row in variance_rows
        ]
    if opts["method"] in ("quantile", "both"):
        results["quantile"] = quantile_rows
        csv_rows += [
            ["quantile", row["m"], f"{row['beta']:.10g}", f"{row['critical']:.10g}"]
            for row in quantile_rows
        ]
    config = {"method": opts["method"], "alpha": _TABLE_ALPHA}
    report = {"command": "tables", "config": config, "results": results}
    _write_report(
        report,
        opts["out"],
        opts["out_file"],
        ["method", "m", "beta", "critical"],
        csv_rows,
    )
    _echo_wall_time(t0)


if __name__ == "__main__":
    main()
