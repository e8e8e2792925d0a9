"""Synthetic market data and default model settings.

The quote strip is generated from a smooth reference curve with a
mildly humped overnight rate and a decaying floating-rate basis, giving
a realistic shape without depending on any vendor feed.  Quote files
shipped with the repository come from these builders.
"""

from __future__ import annotations

import datetime as _dt

import numpy as np

from .curves import ois_coupon_times
from .market_data import EngineConfig, QuoteSet, validate_config

__all__ = [
    "reference_log_discount",
    "make_synthetic_quotes",
    "default_config_dict",
    "default_config",
]

OIS_MATURITIES = (0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0, 7.0, 10.0, 12.0)
IRS_MATURITIES = {
    0.25: (0.25, 0.5, 1.0, 2.0, 3.0, 5.0),
    0.5: (0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0),
}


def reference_log_discount(t):
    """ln P(t) of the smooth reference overnight curve.

    Short rate 1.5% rising towards 2.5% with a 4y time constant.
    """
    t = np.asarray(t, dtype=float)
    integral = 0.015 * t + 0.01 * (t - 4.0 * (1.0 - np.exp(-t / 4.0)))
    out = -integral
    return float(out) if out.ndim == 0 else out


def _reference_discount(t):
    return np.exp(reference_log_discount(t))


def _reference_forward_simple(t0, t1):
    return (_reference_discount(t0) / _reference_discount(t1) - 1.0) / (t1 - t0)


def make_synthetic_quotes(as_of: _dt.date | None = _dt.date(2026, 1, 2)) -> QuoteSet:
    """Ten-pillar OIS strip plus 3m and 6m swap strips."""
    ois = []
    for maturity in OIS_MATURITIES:
        times = ois_coupon_times(maturity)
        accruals = np.diff(np.concatenate([[0.0], times]))
        annuity = float(np.sum(accruals * _reference_discount(times)))
        ois.append((maturity, (1.0 - _reference_discount(maturity)) / annuity))

    irs = {}
    for tenor, maturities in IRS_MATURITIES.items():
        quotes = []
        for maturity in maturities:
            n = int(round(maturity / tenor))
            times = tenor * np.arange(1, n + 1)
            ps = _reference_discount(times)
            basis = 1.0 + 0.10 * np.exp(-times / 5.0)
            fs = np.array([_reference_forward_simple(t - tenor, t) for t in times])
            fs = fs * basis + 0.0003
            quotes.append((maturity, float(np.sum(fs * ps) / np.sum(ps))))
        irs[tenor] = tuple(quotes)
    return QuoteSet(ois_quotes=tuple(ois), irs_quotes=irs, as_of_date=as_of)


def default_config_dict() -> dict:
    """One-factor model with stochastic variance and moderate rate vol."""
    return {
        "num_factors": 1,
        "mean_reversion": 0.03,
        "loadings": [[0.0075]],
        "q": {"0.25": [1.15], "0.5": [1.1]},
        "kappa": 1.2,
        "theta": 1.0,
        "nu": 0.5,
        "v0": 1.3,
        "rho": [[-0.3]],
        "grid_dt": 1.0 / 96.0,
        "num_paths": 20000,
        "seed": 7,
        "lgd_C": 0.6,
        "lgd_I": 0.65,
        "lambda_CI": 0.02,
        "lambda_IC": 0.01,
        "lambda_P": 0.015,
        "lambda_I": 0.02,
        "w_plus": 0.0015,
        "w_minus": 0.0005,
        "w_P": 0.4,
        "w_I": 0.25,
        "c_spread": 0.0,
        "mode": "perfect",
    }


def default_config() -> EngineConfig:
    return validate_config(default_config_dict())
