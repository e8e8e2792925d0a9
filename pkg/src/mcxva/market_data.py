"""Market quote ingestion and engine configuration.

Quote files carry par rates for the OIS discounting strip and for
fixed-vs-floating swaps per floating tenor.  Two formats are supported:

CSV with header ``instrument,maturity,tenor,rate`` (tenor empty for OIS
rows), optionally preceded by a ``# as_of YYYY-MM-DD`` comment line, and
a JSON mirror with one array per instrument list.  Maturities and
tenors are decimal year fractions, rates are decimals per annum
(0.02 means 2%), never percent.  Calendar arithmetic is collapsed to
continuous year fractions at ingestion.
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
from dataclasses import dataclass, field, fields

import numpy as np

from .credit_funding import CollateralPolicy, CreditSpec, FundingSpec, as_curve
from .errors import (
    EngineError,
    InvariantViolationError,
    MalformedRecordError,
    OutOfDomainError,
    UnknownKeyError,
    UsageError,
)

__all__ = [
    "QuoteSet",
    "parse_quotes",
    "serialize_quotes",
    "EngineConfig",
    "validate_config",
    "load_config",
    "load_policy",
    "load_credit",
    "load_funding",
]

_HEADER = ["instrument", "maturity", "tenor", "rate"]
_DIVISIBILITY_TOL = 1e-9


def _check_strip(pairs, label: str):
    last = 0.0
    seen = set()
    for maturity, _rate in pairs:
        if maturity <= 0.0:
            raise InvariantViolationError(f"{label}: maturity {maturity} not positive")
        if maturity in seen:
            raise InvariantViolationError(f"{label}: duplicate maturity {maturity}")
        if maturity <= last:
            raise InvariantViolationError(f"{label}: maturities not increasing")
        seen.add(maturity)
        last = maturity


@dataclass(frozen=True, eq=True)
class QuoteSet:
    """Validated par-rate quotes for the OIS strip and per-tenor swap strips."""

    ois_quotes: tuple = ()
    irs_quotes: dict = field(default_factory=dict)
    as_of_date: _dt.date | None = None
    day_count: str = "ACT/365F"

    def __post_init__(self):
        ois = tuple((float(m), float(r)) for m, r in self.ois_quotes)
        irs = {
            float(x): tuple((float(m), float(r)) for m, r in quotes)
            for x, quotes in self.irs_quotes.items()
        }
        object.__setattr__(self, "ois_quotes", ois)
        object.__setattr__(self, "irs_quotes", irs)
        if not ois and not any(irs.values()):
            raise InvariantViolationError("no quotes")
        _check_strip(ois, "OIS")
        for x, quotes in irs.items():
            if x <= 0.0:
                raise InvariantViolationError(f"IRS tenor {x} not positive")
            _check_strip(quotes, f"IRS[{x}]")
            for maturity, _rate in quotes:
                periods = round(maturity / x)
                if periods < 1 or abs(maturity - periods * x) > _DIVISIBILITY_TOL:
                    raise InvariantViolationError(
                        f"IRS[{x}]: tenor does not divide maturity {maturity}"
                    )


def _parse_float(text: str, line_no: int, what: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise MalformedRecordError(line_no, f"bad {what}: {text!r}") from None


def _parse_csv(path) -> QuoteSet:
    ois = []
    irs: dict[float, list] = {}
    as_of = None
    with open(path, newline="") as handle:
        header_seen = False
        for line_no, row in enumerate(csv.reader(handle), start=1):
            if not row or not any(cell.strip() for cell in row):
                continue
            first = row[0].strip()
            if first.startswith("#"):
                parts = first.lstrip("# ").split()
                if len(parts) == 2 and parts[0] == "as_of":
                    as_of = _dt.date.fromisoformat(parts[1])
                continue
            if not header_seen:
                if [c.strip() for c in row] != _HEADER:
                    raise MalformedRecordError(line_no, f"expected header {_HEADER}, got {row}")
                header_seen = True
                continue
            if len(row) != 4:
                raise MalformedRecordError(line_no, f"expected 4 fields, got {len(row)}")
            instrument = row[0].strip().upper()
            maturity = _parse_float(row[1], line_no, "maturity")
            rate = _parse_float(row[3], line_no, "rate")
            if instrument == "OIS":
                if row[2].strip():
                    raise MalformedRecordError(line_no, "OIS rows must leave tenor empty")
                ois.append((maturity, rate))
            elif instrument == "IRS":
                tenor = _parse_float(row[2], line_no, "tenor")
                irs.setdefault(tenor, []).append((maturity, rate))
            else:
                raise MalformedRecordError(line_no, f"unknown instrument {row[0]!r}")
    return QuoteSet(ois_quotes=tuple(ois),
                    irs_quotes={x: tuple(q) for x, q in irs.items()},
                    as_of_date=as_of)


def _parse_json(path) -> QuoteSet:
    with open(path) as handle:
        try:
            raw = json.load(handle)
        except json.JSONDecodeError as exc:
            raise MalformedRecordError(exc.lineno, exc.msg) from None
    if not isinstance(raw, dict):
        raise MalformedRecordError(0, "top-level JSON value must be an object")
    known = {"as_of_date", "day_count", "ois", "irs"}
    for key in raw:
        if key not in known:
            raise MalformedRecordError(0, f"unknown field {key!r}")
    as_of = raw.get("as_of_date")
    if as_of is not None:
        as_of = _dt.date.fromisoformat(as_of)
    try:
        ois = tuple((float(m), float(r)) for m, r in raw.get("ois", []))
        irs = {float(x): tuple((float(m), float(r)) for m, r in quotes)
               for x, quotes in raw.get("irs", {}).items()}
    except (TypeError, ValueError) as exc:
        raise MalformedRecordError(0, f"bad quote entry: {exc}") from None
    kwargs = {"day_count": raw["day_count"]} if "day_count" in raw else {}
    return QuoteSet(ois_quotes=ois, irs_quotes=irs, as_of_date=as_of, **kwargs)


def parse_quotes(path, fmt: str | None = None) -> QuoteSet:
    """Parse a quote file into a validated :class:`QuoteSet`.

    ``fmt`` is ``"csv"`` or ``"json"``; inferred from the file suffix
    when omitted.  Parsing is locale-independent (decimal points only).
    """
    if fmt is None:
        fmt = "json" if str(path).lower().endswith(".json") else "csv"
    if fmt == "csv":
        return _parse_csv(path)
    if fmt == "json":
        return _parse_json(path)
    raise UsageError(f"unknown quote format {fmt!r}")


def serialize_quotes(quotes: QuoteSet, path, fmt: str | None = None):
    """Write a QuoteSet back to disk; inverse of :func:`parse_quotes`."""
    if fmt is None:
        fmt = "json" if str(path).lower().endswith(".json") else "csv"
    if fmt == "csv":
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            if quotes.as_of_date is not None:
                handle.write(f"# as_of {quotes.as_of_date.isoformat()}\n")
            writer.writerow(_HEADER)
            for maturity, rate in quotes.ois_quotes:
                writer.writerow(["OIS", repr(maturity), "", repr(rate)])
            for tenor in sorted(quotes.irs_quotes):
                for maturity, rate in quotes.irs_quotes[tenor]:
                    writer.writerow(["IRS", repr(maturity), repr(tenor), repr(rate)])
    elif fmt == "json":
        payload = {
            "as_of_date": quotes.as_of_date.isoformat() if quotes.as_of_date else None,
            "day_count": quotes.day_count,
            "ois": [[m, r] for m, r in quotes.ois_quotes],
            "irs": {repr(x): [[m, r] for m, r in q] for x, q in sorted(quotes.irs_quotes.items())},
        }
        with open(path, "w") as handle:
            json.dump(payload, handle, indent=2)
            handle.write("\n")
    else:
        raise UsageError(f"unknown quote format {fmt!r}")


# --------------------------------------------------------------------------
# Engine configuration
# --------------------------------------------------------------------------

def _as_float_tuple(value, n, key):
    if np.isscalar(value):
        return (float(value),) * n
    out = tuple(float(v) for v in value)
    if len(out) != n:
        raise OutOfDomainError(key, value, f"expected {n} entries")
    return out


def _as_matrix(value, n, key):
    arr = np.asarray(value, dtype=float)
    if arr.shape != (n, n):
        raise OutOfDomainError(key, value, f"expected a {n}x{n} matrix")
    return tuple(tuple(row) for row in arr)


def _as_curve_spec(value, key):
    """Normalize a scalar or {"times": [...], "values": [...]} to a pair of tuples."""
    if np.isscalar(value):
        return ((0.0,), (float(value),))
    if isinstance(value, dict):
        extra = set(value) - {"times", "values"}
        if extra:
            raise OutOfDomainError(key, value, f"unknown curve fields {sorted(extra)}")
        try:
            return (tuple(float(t) for t in value["times"]),
                    tuple(float(v) for v in value["values"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise OutOfDomainError(key, value, str(exc)) from None
    raise OutOfDomainError(key, value, "expected scalar or {times, values}")


@dataclass(frozen=True, eq=True)
class EngineConfig:
    """Typed engine configuration with defaults applied.

    Model parameters (factor count, mean reversion, loadings, variance
    process, correlations), simulation controls, and default policy /
    credit / funding parameters.  Curve-valued entries are stored as
    ``(times, values)`` pairs.
    """

    num_factors: int = 1
    mean_reversion: tuple = (0.05,)
    loadings: tuple = ((0.008,),)
    q: dict = field(default_factory=dict)
    kappa: tuple = (1.5,)
    theta: tuple = (1.0,)
    nu: tuple = (0.7,)
    v0: tuple = (1.0,)
    rho: tuple = ((0.0,),)
    grid_dt: float = 1.0 / 96.0
    num_paths: int = 20000
    seed: int = 7
    threads: int = 1
    block_size: int = 4096
    lgd_C: float = 0.6
    lgd_I: float = 0.6
    lambda_CI: tuple = ((0.0,), (0.0,))
    lambda_IC: tuple = ((0.0,), (0.0,))
    lambda_P: tuple = ((0.0,), (0.0,))
    lambda_I: tuple = ((0.0,), (0.0,))
    w_plus: tuple = ((0.0,), (0.0,))
    w_minus: tuple = ((0.0,), (0.0,))
    w_P: tuple = ((0.0,), (0.0,))
    w_I: tuple = ((0.0,), (0.0,))
    c_spread: tuple = ((0.0,), (0.0,))
    mode: str = "perfect"
    alpha: float | None = None
    delta_days: float = 10.0
    quantile_q: float = 0.01
    haircut_method: str = "price"

    def volatility_spec(self):
        from .hjm import VolatilitySpec

        return VolatilitySpec(
            num_factors=self.num_factors,
            mean_reversion=np.array(self.mean_reversion),
            loadings=np.array(self.loadings),
            q_loadings={x: np.array(v) for x, v in self.q.items()},
            kappa=np.array(self.kappa),
            theta=np.array(self.theta),
            nu=np.array(self.nu),
            v_bar=np.array(self.v0),
            rho=np.array(self.rho),
        )

    def credit_spec(self) -> CreditSpec:
        return CreditSpec(
            lambda_ci=as_curve(self.lambda_CI),
            lambda_ic=as_curve(self.lambda_IC),
            lgd_c=self.lgd_C,
            lgd_i=self.lgd_I,
            lambda_pool=as_curve(self.lambda_P),
            lambda_inv=as_curve(self.lambda_I),
        )

    def funding_spec(self) -> FundingSpec:
        return FundingSpec(
            w_plus=as_curve(self.w_plus),
            w_minus=as_curve(self.w_minus),
            w_pool=as_curve(self.w_P),
            w_inv=as_curve(self.w_I),
        )

    def policy(self) -> CollateralPolicy:
        return CollateralPolicy(
            mode=self.mode,
            alpha=self.alpha,
            c_spread=as_curve(self.c_spread),
            delta=self.delta_days / 365.0,
            quantile_q=self.quantile_q,
            haircut_method=self.haircut_method,
        )


_CONFIG_FIELDS = {f.name for f in fields(EngineConfig)}
_CURVE_KEYS = {"lambda_CI", "lambda_IC", "lambda_P", "lambda_I",
               "w_plus", "w_minus", "w_P", "w_I", "c_spread"}
_POSITIVE_KEYS = {"grid_dt", "num_paths", "block_size"}


def validate_config(raw: dict) -> EngineConfig:
    """Validate a raw key/value tree and apply defaults.

    Rejects unknown keys and out-of-domain values; returns a fully typed
    :class:`EngineConfig`.  Every input either yields a valid config or
    raises a structured error.
    """
    if not isinstance(raw, dict):
        raise OutOfDomainError("config", raw, "expected a key/value tree")
    for key in raw:
        if key not in _CONFIG_FIELDS:
            raise UnknownKeyError(key)

    out = {}
    try:
        n = int(raw.get("num_factors", 1))
    except (TypeError, ValueError):
        raise OutOfDomainError("num_factors", raw.get("num_factors")) from None
    if n < 1:
        raise OutOfDomainError("num_factors", n, "need at least one factor")
    out["num_factors"] = n

    for key, value in raw.items():
        try:
            if key == "num_factors":
                continue
            elif key in ("mean_reversion", "kappa", "theta", "nu", "v0"):
                out[key] = _as_float_tuple(value, n, key)
            elif key in ("loadings", "rho"):
                out[key] = _as_matrix(value, n, key)
            elif key == "q":
                out[key] = {float(x): _as_float_tuple(v, n, key) for x, v in value.items()}
            elif key in _CURVE_KEYS:
                out[key] = _as_curve_spec(value, key)
            elif key in ("lgd_C", "lgd_I"):
                value = float(value)
                if not 0.0 <= value <= 1.0:
                    raise OutOfDomainError(key, value, "loss given default is a fraction")
                out[key] = value
            elif key in ("grid_dt", "delta_days", "quantile_q"):
                out[key] = float(value)
            elif key in ("num_paths", "seed", "threads", "block_size"):
                out[key] = int(value)
            elif key == "alpha":
                out[key] = None if value is None else float(value)
            elif key in ("mode", "haircut_method"):
                out[key] = str(value)
            else:  # pragma: no cover - all keys enumerated above
                raise UnknownKeyError(key)
        except (TypeError, ValueError):
            raise OutOfDomainError(key, value) from None

    for key in _POSITIVE_KEYS & out.keys():
        if out[key] <= 0:
            raise OutOfDomainError(key, out[key], "must be positive")

    config = EngineConfig(**out)
    # Construct the typed specs now so deep validation errors surface at load.
    try:
        config.volatility_spec()
        credit = config.credit_spec()
        config.funding_spec().validate_against(credit)
        config.policy()
    except EngineError as exc:
        raise OutOfDomainError("config", None, str(exc)) from exc
    return config


def load_config(path) -> EngineConfig:
    with open(path) as handle:
        try:
            raw = json.load(handle)
        except json.JSONDecodeError as exc:
            raise MalformedRecordError(exc.lineno, exc.msg) from None
    return validate_config(raw)


def _load_json_object(path, known: set, label: str) -> dict:
    with open(path) as handle:
        try:
            raw = json.load(handle)
        except json.JSONDecodeError as exc:
            raise MalformedRecordError(exc.lineno, exc.msg) from None
    if not isinstance(raw, dict):
        raise MalformedRecordError(0, f"{label}: top-level value must be an object")
    for key in raw:
        if key not in known:
            raise UnknownKeyError(f"{label}.{key}")
    return raw


def load_policy(path) -> CollateralPolicy:
    """Read a policy.json file: {mode, alpha, c_spread, delta_days, quantile_q, haircut_method}."""
    raw = _load_json_object(
        path, {"mode", "alpha", "c_spread", "delta_days", "quantile_q", "haircut_method"},
        "policy")
    kwargs = {}
    if "mode" in raw:
        kwargs["mode"] = raw["mode"]
    if raw.get("alpha") is not None:
        kwargs["alpha"] = raw["alpha"]
    if "c_spread" in raw:
        kwargs["c_spread"] = as_curve(_as_curve_spec(raw["c_spread"], "c_spread"))
    if "delta_days" in raw:
        kwargs["delta"] = float(raw["delta_days"]) / 365.0
    if "quantile_q" in raw:
        kwargs["quantile_q"] = float(raw["quantile_q"])
    if "haircut_method" in raw:
        kwargs["haircut_method"] = raw["haircut_method"]
    return CollateralPolicy(**kwargs)


def load_credit(path) -> CreditSpec:
    """Read a credit.json file: intensity pillars and LGDs."""
    raw = _load_json_object(
        path, {"lambda_CI", "lambda_IC", "lambda_P", "lambda_I", "lgd_C", "lgd_I"},
        "credit")
    def curve(key):
        return as_curve(_as_curve_spec(raw[key], key)) if key in raw else as_curve(0.0)
    return CreditSpec(
        lambda_ci=curve("lambda_CI"),
        lambda_ic=curve("lambda_IC"),
        lgd_c=float(raw.get("lgd_C", 0.6)),
        lgd_i=float(raw.get("lgd_I", 0.6)),
        lambda_pool=curve("lambda_P"),
        lambda_inv=curve("lambda_I"),
    )


def load_funding(path) -> FundingSpec:
    """Read a funding.json file: weight pillars."""
    raw = _load_json_object(path, {"w_plus", "w_minus", "w_P", "w_I"}, "funding")
    def curve(key):
        return as_curve(_as_curve_spec(raw[key], key)) if key in raw else as_curve(0.0)
    return FundingSpec(w_plus=curve("w_plus"), w_minus=curve("w_minus"),
                       w_pool=curve("w_P"), w_inv=curve("w_I"))
