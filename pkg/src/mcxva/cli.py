"""Command-line orchestration: bootstrap curves, simulate, price deals,
emit adjustment tables, and run the acceptance suite.

Subcommands: ``bootstrap``, ``simulate``, ``price``, ``adjustments``,
``selftest``.  Every run writes a ``manifest.json`` recording the
command, input file hashes, seed and outputs; reruns with identical
manifest inputs produce byte-identical numeric outputs (floats are
serialized with 15 significant digits).  Runs compose through files
only; there is no hidden state between invocations.

Exit codes: 0 success, 1 computation failure, 2 usage/validation error.
Set ``MCE_LOG=debug|info|warning|error`` to control log verbosity.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .curves import build_curves, dump_curves
from .errors import (
    AlphaOutOfRangeError,
    EngineError,
    InvariantViolationError,
    MalformedRecordError,
    NoQuotesError,
    OutOfDomainError,
    UnknownKeyError,
    UsageError,
)
from .hjm import simulate
from .market_data import (
    load_config,
    load_credit,
    load_funding,
    load_policy,
    parse_quotes,
)
from .pricing import (
    CashFlow,
    DealSchedule,
    adjusted_bond,
    convexity_adjustment,
    price_reduced,
)

__all__ = ["main", "run", "emit_report", "load_deal"]

log = logging.getLogger("mcxva")

_VALIDATION_ERRORS = (
    UsageError,
    UnknownKeyError,
    MalformedRecordError,
    InvariantViolationError,
    OutOfDomainError,
    NoQuotesError,
    AlphaOutOfRangeError,
    FileNotFoundError,
)


# --------------------------------------------------------------------------
# Canonical serialization (15 significant digits, stable field order)
# --------------------------------------------------------------------------

def _fmt_float(value: float) -> str:
    return format(float(value), ".15g")

def _canonical_json(obj, indent: int = 0) -> str:
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = ",\n".join(
            f'{pad}  {json.dumps(str(key))}: {_canonical_json(val, indent + 1)}'
            for key, val in obj.items())
        return "{\n" + items + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = ",\n".join(f"{pad}  {_canonical_json(val, indent + 1)}" for val in obj)
        return "[\n" + items + "\n" + pad + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(obj)
    return json.dumps(str(obj))


def _flatten(mapping: dict, prefix: str = "") -> dict:
    out = {}
    for key, value in mapping.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(_flatten(value, name + "."))
        else:
            out[name] = value
    return out


def emit_report(results, fmt: str, path) -> Path:
    """Write a report dict or list-of-dicts table as JSON or CSV."""
    path = Path(path)
    if fmt == "json":
        path.write_text(_canonical_json(results) + "\n")
        return path
    if fmt != "csv":
        raise UsageError(f"unknown report format {fmt!r}")

    def cell(value):
        return _fmt_float(value) if isinstance(value, (float, np.floating)) else str(value)

    if isinstance(results, dict):
        flat = _flatten(results)
        lines = [",".join(flat)] + [",".join(cell(v) for v in flat.values())]
    else:
        rows = [_flatten(row) for row in results]
        header = list(rows[0]) if rows else []
        lines = [",".join(header)]
        lines += [",".join(cell(row[col]) for col in header) for row in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir, command: str, inputs, parameters: dict, outputs) -> Path:
    manifest = {
        "command": command,
        "version": __version__,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "parameters": parameters,
        "outputs": [str(p) for p in outputs],
    }
    path = Path(out_dir) / "manifest.json"
    path.write_text(_canonical_json(manifest) + "\n")
    return path


# --------------------------------------------------------------------------
# Deal files
# --------------------------------------------------------------------------

_DEAL_FIELDS = {
    "irs": {"maturity", "tenor", "fixed_rate", "notional", "receive_fixed"},
    "one_period_irs": {"maturity", "tenor", "fixed_rate", "notional", "receive_fixed"},
    "ois": {"maturity", "fixed_rate", "interval", "notional", "receive_fixed"},
    "one_period_ois": {"maturity", "tenor", "fixed_rate", "notional", "receive_fixed"},
    "bullet": {"pay_time", "amount"},
    "custom": {"flows"},
}


def load_deal(path) -> DealSchedule:
    """Read a deal.json file into a :class:`DealSchedule`."""
    with open(path) as handle:
        try:
            raw = json.load(handle)
        except json.JSONDecodeError as exc:
            raise MalformedRecordError(exc.lineno, exc.msg) from None
    if not isinstance(raw, dict) or "type" not in raw:
        raise UsageError("deal file must be an object with a 'type' field")
    kind = raw["type"]
    if kind not in _DEAL_FIELDS:
        raise UsageError(f"unknown deal type {kind!r}")
    for key in raw:
        if key != "type" and key not in _DEAL_FIELDS[kind]:
            raise UnknownKeyError(f"deal.{key}")
    params = {key: value for key, value in raw.items() if key != "type"}
    if kind == "custom":
        flows = tuple(CashFlow(**flow) for flow in params["flows"])
        return DealSchedule(flows)
    return getattr(DealSchedule, kind)(**params)


def _pricing_grid(deal: DealSchedule, extra=(), record_dt: float = 1.0 / 12.0) -> np.ndarray:
    """Recording grid: deal pay and reset dates, a regular refinement for
    the sign induction, and any policy dates."""
    dates = {0.0, deal.maturity}
    for flow in deal.flows:
        dates.add(flow.pay_time)
        if flow.kind in ("libor", "ois"):
            dates.add(max(flow.pay_time - flow.tenor, 0.0))
    n = int(np.ceil(deal.maturity / record_dt - 1e-9))
    dates.update(np.round(np.arange(1, n + 1) * record_dt, 12).tolist())
    dates.update(float(t) for t in extra)
    grid = np.array(sorted(t for t in dates if t <= deal.maturity + 1e-9))
    keep = np.concatenate([[True], np.diff(grid) > 1e-9])
    return grid[keep]


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------

def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_bootstrap(args) -> int:
    quotes = parse_quotes(args.quotes, args.format)
    curves = build_curves(quotes)
    out = _out_dir(args)
    files = dump_curves(curves, out)
    write_manifest(out, "bootstrap", [args.quotes], {"format": args.format}, files)
    log.info("bootstrap wrote %d curve files to %s", len(files), out)
    print(f"bootstrapped {len(curves.forwards) + 1} curves -> {out}")
    return 0


def _load_market(args):
    quotes = parse_quotes(args.quotes, getattr(args, "format", None) or None)
    config = load_config(args.config)
    return quotes, config


def cmd_simulate(args) -> int:
    quotes, config = _load_market(args)
    curves = build_curves(quotes)
    spec = config.volatility_spec()
    record_dt = args.record_dt
    n = int(np.ceil(args.horizon / record_dt - 1e-9))
    grid = np.concatenate([[0.0], np.round(np.arange(1, n + 1) * record_dt, 12)])
    paths = args.paths or config.num_paths
    seed = args.seed if args.seed is not None else config.seed
    ensemble = simulate(spec, curves, grid, paths, seed,
                        step_dt=args.grid_dt or config.grid_dt,
                        threads=args.threads or config.threads)
    out = _out_dir(args)
    rows = []
    for k, t in enumerate(ensemble.grid):
        row = {"t": float(t)}
        for i in range(spec.num_factors):
            row[f"mean_x{i}"] = float(np.mean(ensemble.x[k, :, i]))
            row[f"std_x{i}"] = float(np.std(ensemble.x[k, :, i]))
            row[f"mean_v{i}"] = float(np.mean(ensemble.v[k, :, i]))
        rows.append(row)
    outputs = [emit_report(rows, "csv", out / "summary.csv")]
    if args.dump_paths:
        outputs.append(_dump_paths(ensemble, out / "paths.csv"))
    write_manifest(out, "simulate", [args.quotes, args.config],
                   {"paths": paths, "seed": seed, "horizon": args.horizon,
                    "record_dt": record_dt}, outputs)
    print(f"simulated {paths} paths to horizon {args.horizon:g} -> {out}")
    return 0


def _dump_paths(ensemble, path) -> Path:
    n = ensemble.spec.num_factors
    header = (["path", "t"] + [f"x{i}" for i in range(n)]
              + [f"y{i}{i}" for i in range(n)] + [f"v{i}" for i in range(n)])
    lines = [",".join(header)]
    for p in range(ensemble.num_paths):
        for k, t in enumerate(ensemble.grid):
            cells = [str(p), _fmt_float(t)]
            cells += [_fmt_float(v) for v in ensemble.x[k, p]]
            cells += [_fmt_float(ensemble.y[k, p, i, i]) for i in range(n)]
            cells += [_fmt_float(v) for v in ensemble.v[k, p]]
            lines.append(",".join(cells))
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def _load_specs(args, config):
    policy = load_policy(args.policy) if args.policy else config.policy()
    credit = load_credit(args.credit) if args.credit else config.credit_spec()
    funding = load_funding(args.funding) if args.funding else config.funding_spec()
    return policy, credit, funding


def cmd_price(args) -> int:
    quotes, config = _load_market(args)
    curves = build_curves(quotes)
    policy, credit, funding = _load_specs(args, config)
    deal = load_deal(args.deal)
    extra = [policy.delta] if policy.mode == "ccp" else []
    grid = _pricing_grid(deal, extra, args.record_dt)
    paths = args.paths or config.num_paths
    seed = args.seed if args.seed is not None else config.seed
    ensemble = simulate(config.volatility_spec(), curves, grid, paths, seed,
                        step_dt=args.grid_dt or config.grid_dt,
                        threads=args.threads or config.threads)
    result = price_reduced(deal, policy, funding, credit, ensemble)
    report = {
        "clean": result.clean_price,
        "adjusted": result.adjusted_price,
        "decomposition": {key: result.decomposition[key]
                          for key in ("cva", "dva", "funding_cost", "collateral_cost")},
        "std_error": result.std_error,
    }
    out = _out_dir(args)
    suffix = "json" if args.report_format == "json" else "csv"
    report_path = emit_report(report, args.report_format, out / f"report.{suffix}")
    inputs = [args.quotes, args.config, args.deal]
    inputs += [p for p in (args.policy, args.credit, args.funding) if p]
    write_manifest(out, "price", inputs,
                   {"paths": paths, "seed": seed, "threads": args.threads or config.threads,
                    "grid_dt": args.grid_dt or config.grid_dt,
                    "record_dt": args.record_dt}, [report_path])
    print(f"clean {report['clean']:.10g}  adjusted {report['adjusted']:.10g}"
          f"  (se {report['std_error']:.3g}) -> {report_path}")
    return 0


def cmd_adjustments(args) -> int:
    quotes, config = _load_market(args)
    curves = build_curves(quotes)
    policy, credit, funding = _load_specs(args, config)
    tenor = args.tenor
    maturities = [float(tok) for tok in args.maturities.split(",") if tok.strip()]
    if not maturities:
        raise UsageError("no maturities given")
    dates = {0.0}
    for maturity in maturities:
        dates.add(maturity - tenor)
        dates.add(maturity)
    grid = np.array(sorted(dates))
    paths = args.paths or config.num_paths
    seed = args.seed if args.seed is not None else config.seed
    ensemble = simulate(config.volatility_spec(), curves, grid, paths, seed,
                        step_dt=args.grid_dt or config.grid_dt,
                        threads=args.threads or config.threads)
    fcurve = curves.forward_curve(tenor)
    rows = []
    for maturity in maturities:
        f0 = fcurve.forward(maturity)
        gamma, _se = convexity_adjustment(
            maturity, tenor, policy, funding, credit, ensemble,
            exposure_sign=args.exposure_sign, alpha_override=args.alpha)
        pbar = adjusted_bond(maturity, policy, funding, credit, ensemble,
                             exposure_sign=args.exposure_sign, alpha_override=args.alpha)
        rows.append({
            "T": maturity, "x": tenor, "F": f0, "Fbar": f0 * (1.0 + gamma),
            "gamma": gamma, "P": curves.discount.discount(maturity), "Pbar": pbar,
        })
    out = _out_dir(args)
    suffix = "json" if args.report_format == "json" else "csv"
    path = emit_report(rows, args.report_format, out / f"adjustments.{suffix}")
    inputs = [args.quotes, args.config]
    inputs += [p for p in (args.policy, args.credit, args.funding) if p]
    write_manifest(out, "adjustments", inputs,
                   {"paths": paths, "seed": seed, "tenor": tenor,
                    "maturities": maturities}, [path])
    print(f"adjustments table for tenor {tenor:g} -> {path}")
    return 0


def cmd_selftest(args) -> int:
    from . import acceptance

    only = None
    if args.only:
        only = {int(tok) for tok in args.only.split(",") if tok.strip()}
    results = acceptance.run_all(only=only)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} acceptance criteria passed")
    return 0 if not failed else 1


# --------------------------------------------------------------------------
# Argument parsing and dispatch
# --------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcxva",
        description="Multi-curve pricing engine with collateral, funding and "
                    "credit adjustments.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True, sim=True):
        p.add_argument("--quotes", required=True, help="quote file (csv or json)")
        p.add_argument("--format", choices=["csv", "json"], default=None,
                       help="quote file format (default: by extension)")
        if config:
            p.add_argument("--config", required=True, help="engine config json")
        if sim:
            p.add_argument("--paths", type=int, default=None, help="Monte Carlo paths")
            p.add_argument("--seed", type=int, default=None, help="random seed")
            p.add_argument("--threads", type=int, default=None, help="simulation threads")
            p.add_argument("--grid-dt", dest="grid_dt", type=float, default=None,
                           help="simulation step size in years (default 1/96)")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("bootstrap", help="bootstrap curves from quotes")
    common(p, config=False, sim=False)
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("simulate", help="simulate the model state")
    common(p)
    p.add_argument("--horizon", type=float, default=5.0, help="simulation horizon (years)")
    p.add_argument("--record-dt", dest="record_dt", type=float, default=0.25,
                   help="recording interval (years)")
    p.add_argument("--dump-paths", action="store_true", help="write per-path state CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("price", help="price a deal under a collateral policy")
    common(p)
    p.add_argument("--deal", required=True, help="deal json")
    p.add_argument("--policy", default=None, help="policy json (default: from config)")
    p.add_argument("--credit", default=None, help="credit json (default: from config)")
    p.add_argument("--funding", default=None, help="funding json (default: from config)")
    p.add_argument("--record-dt", dest="record_dt", type=float, default=1.0 / 12.0,
                   help="sign-induction grid interval (years)")
    p.add_argument("--report-format", dest="report_format", choices=["json", "csv"],
                   default="json")
    p.set_defaults(func=cmd_price)

    p = sub.add_parser("adjustments", help="adjusted forwards and bonds per maturity")
    common(p)
    p.add_argument("--policy", default=None)
    p.add_argument("--credit", default=None)
    p.add_argument("--funding", default=None)
    p.add_argument("--tenor", type=float, required=True, help="floating tenor x")
    p.add_argument("--maturities", required=True, help="comma-separated maturities")
    p.add_argument("--exposure-sign", dest="exposure_sign", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=None,
                   help="resolved collateral fraction for ccp policies")
    p.add_argument("--report-format", dest="report_format", choices=["json", "csv"],
                   default="csv")
    p.set_defaults(func=cmd_adjustments)

    p = sub.add_parser("selftest", help="run the acceptance suite")
    p.add_argument("--only", default=None, help="comma-separated criterion numbers")
    p.set_defaults(func=cmd_selftest)
    return parser


def run(argv) -> int:
    """Run the CLI on an argument list; returns the process exit code."""
    level = os.environ.get("MCE_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (EngineError, OSError) as exc:
        print(f"computation error: {exc}", file=sys.stderr)
        return 1


def main(argv=None) -> int:
    return run(sys.argv[1:] if argv is None else argv)
