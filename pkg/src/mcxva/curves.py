"""Collateralized discount and forward curve construction.

The discount curve holds zero-coupon bonds P(T) implied by OIS quotes,
interpolated log-linearly in the discount factor, which makes the
instantaneous forward piecewise constant between pillars and keeps the
bootstrap local.  Daily compounding of the overnight leg is
approximated by continuous compounding, so a one-period OIS spanning
[T-x, T] is fair at

    E(T, x) = (P(T-x) / P(T) - 1) / x

Multi-period OIS pay annual fixed coupons against the compounded
overnight leg; their floating leg telescopes to 1 - P(T).  Swap strips
per floating tenor x are bootstrapped against OIS discounting: the par
rate K of a maturity-T swap with both legs on the tenor grid satisfies

    sum_i x * K * P(T_i) = sum_i x * F(T_i, x) * P(T_i),   T_i = i * x

Unquoted reset pillars between two quoted maturities take a common flat
forward, solved in closed form from the annuity equation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from scipy.optimize import brentq

from .errors import (
    InconsistentStripError,
    InvariantViolationError,
    NoQuotesError,
    OutOfDomainError,
    RootNotBracketedError,
)

if TYPE_CHECKING:  # pragma: no cover
    from .market_data import QuoteSet

__all__ = [
    "DiscountCurve",
    "ForwardCurve",
    "CurveSet",
    "bootstrap_ois",
    "bootstrap_forwards",
    "build_curves",
    "discount_factor",
    "instantaneous_forward",
    "ois_par_rate",
    "par_rate_from_discounts",
    "ois_swap_rate",
    "irs_swap_rate",
    "ois_coupon_times",
    "dump_curves",
]

_PILLAR_TOL = 1e-9


@dataclass(eq=False)
class DiscountCurve:
    """Pillar representation of collateralized zero-coupon bonds.

    ``log_discounts[i]`` is ln P(pillars[i]); interpolation is linear in
    ln P.  No extrapolation beyond the last pillar unless
    ``allow_extrapolation`` is set, in which case the last forward is
    held flat.
    """

    pillars: np.ndarray
    log_discounts: np.ndarray
    interpolation: str = "loglinear"
    allow_extrapolation: bool = False

    def __post_init__(self):
        self.pillars = np.asarray(self.pillars, dtype=float)
        self.log_discounts = np.asarray(self.log_discounts, dtype=float)
        if self.pillars.shape != self.log_discounts.shape or self.pillars.ndim != 1:
            raise InvariantViolationError("pillars and log_discounts must be 1-d and equal length")
        if self.pillars.size == 0 or self.pillars[0] != 0.0:
            raise InvariantViolationError("first pillar must be T=0")
        if self.log_discounts[0] != 0.0:
            raise InvariantViolationError("P(0) must equal 1 exactly")
        if np.any(np.diff(self.pillars) <= 0.0):
            raise InvariantViolationError("pillars must be strictly increasing")
        if not np.all(np.isfinite(self.log_discounts)):
            raise InvariantViolationError("discounts must be positive and finite")
        if self.interpolation != "loglinear":
            raise InvariantViolationError(f"unsupported interpolation {self.interpolation!r}")

    @classmethod
    def flat(cls, rate: float, horizon: float = 50.0) -> "DiscountCurve":
        """Curve with a constant continuously-compounded rate."""
        pillars = np.array([0.0, horizon])
        return cls(pillars, -rate * pillars)

    @property
    def max_time(self) -> float:
        return float(self.pillars[-1])

    def _check_domain(self, t: np.ndarray):
        if np.any(t < -_PILLAR_TOL):
            raise OutOfDomainError("T", float(np.min(t)), "negative time")
        if not self.allow_extrapolation and np.any(t > self.max_time + _PILLAR_TOL):
            raise OutOfDomainError("T", float(np.max(t)),
                                   f"beyond last pillar {self.max_time}")

    def log_discount(self, t):
        """ln P(t), exact at pillars."""
        t_arr = np.asarray(t, dtype=float)
        self._check_domain(t_arr)
        out = np.interp(t_arr, self.pillars, self.log_discounts)
        if self.allow_extrapolation and np.any(t_arr > self.max_time):
            last_fwd = self.forward(self.max_time)
            over = np.maximum(t_arr - self.max_time, 0.0)
            out = out - last_fwd * over
        return float(out) if out.ndim == 0 else out

    def discount(self, t):
        """Zero-coupon bond P(t)."""
        out = np.exp(self.log_discount(t))
        return float(out) if np.ndim(out) == 0 else out

    def forward(self, t):
        """Instantaneous forward -d ln P / dT; right-limit at pillar kinks."""
        t_arr = np.asarray(t, dtype=float)
        self._check_domain(t_arr)
        # Segment i covers [pillars[i], pillars[i+1]); the last pillar uses
        # the final segment's slope (its left limit).
        idx = np.clip(np.searchsorted(self.pillars, t_arr, side="right") - 1,
                      0, self.pillars.size - 2)
        slope = -np.diff(self.log_discounts) / np.diff(self.pillars)
        out = slope[idx]
        return float(out) if out.ndim == 0 else out

    def integrated_forward(self, t0, t1):
        """Exact integral of the instantaneous forward over [t0, t1]."""
        return self.log_discount(t0) - self.log_discount(t1)


@dataclass(eq=False)
class ForwardCurve:
    """Tenor-specific floating forwards F(T, x) at reset-aligned pillars.

    ``pillars`` are pay times i*x of the quoted strip; the shift k keeps
    k + F strictly positive, which the log-based dynamics require.
    """

    tenor: float
    pillars: np.ndarray
    forwards: np.ndarray
    shift: float | None = None

    def __post_init__(self):
        self.pillars = np.asarray(self.pillars, dtype=float)
        self.forwards = np.asarray(self.forwards, dtype=float)
        if self.tenor <= 0.0:
            raise InvariantViolationError("tenor must be positive")
        if self.shift is None:
            self.shift = 1.0 / self.tenor
        if self.pillars.shape != self.forwards.shape or self.pillars.ndim != 1:
            raise InvariantViolationError("pillars and forwards must be 1-d and equal length")
        if self.pillars.size == 0:
            raise InvariantViolationError("forward curve needs at least one pillar")
        if np.any(np.diff(self.pillars) <= 0.0):
            raise InvariantViolationError("pillars must be strictly increasing")
        if self.pillars[0] < self.tenor - _PILLAR_TOL:
            raise InvariantViolationError("first pillar pays before one tenor elapses")
        if np.any(self.shift + self.forwards <= 0.0):
            raise InvariantViolationError("k + F must be strictly positive at all pillars")

    def forward(self, maturity: float, interpolate: bool = False) -> float:
        """F(maturity, x).  Exact pillar lookup by default; with
        ``interpolate`` the previous pillar's forward is held flat."""
        idx = np.searchsorted(self.pillars, maturity - _PILLAR_TOL)
        if idx < self.pillars.size and abs(self.pillars[idx] - maturity) <= _PILLAR_TOL:
            return float(self.forwards[idx])
        if interpolate and self.pillars[0] <= maturity <= self.pillars[-1]:
            return float(self.forwards[max(idx - 1, 0)])
        raise OutOfDomainError("T", maturity, f"not a pillar of the {self.tenor}y strip")


@dataclass(eq=False)
class CurveSet:
    """Discount curve plus forward curves keyed by tenor."""

    discount: DiscountCurve
    forwards: dict

    def forward_curve(self, tenor: float) -> ForwardCurve:
        for x, curve in self.forwards.items():
            if abs(x - tenor) <= _PILLAR_TOL:
                return curve
        raise NoQuotesError(f"no forward curve for tenor {tenor}")


# --------------------------------------------------------------------------
# Queries
# --------------------------------------------------------------------------

def discount_factor(curve: DiscountCurve, maturity: float) -> float:
    """P(maturity); exact at pillars, log-linear between."""
    return curve.discount(maturity)


def instantaneous_forward(curve: DiscountCurve, maturity: float) -> float:
    """Piecewise-constant instantaneous forward under log-linear interpolation."""
    return curve.forward(maturity)


def par_rate_from_discounts(p_start: float, p_end: float, tenor: float) -> float:
    """Simply-compounded rate making a one-period overnight swap fair.

    Depends only on the ratio p_start / p_end, so it is invariant under
    a common positive rescaling of both discounts.
    """
    if p_start <= 0.0 or p_end <= 0.0:
        raise OutOfDomainError("discount", min(p_start, p_end), "must be positive")
    if tenor <= 0.0:
        raise OutOfDomainError("x", tenor, "tenor must be positive")
    return (p_start / p_end - 1.0) / tenor


def ois_par_rate(curve: DiscountCurve, maturity: float, tenor: float) -> float:
    """Fair fixed rate of a one-period overnight swap spanning [T-x, T]."""
    start = maturity - tenor
    if start < -_PILLAR_TOL:
        raise OutOfDomainError("T-x", start, "period starts before today")
    return par_rate_from_discounts(curve.discount(max(start, 0.0)),
                                   curve.discount(maturity), tenor)


def ois_coupon_times(maturity: float, interval: float = 1.0) -> np.ndarray:
    """Fixed-leg coupon times of an OIS: annual from inception, final
    stub capped at maturity."""
    n = int(np.ceil(maturity / interval - _PILLAR_TOL))
    times = np.minimum(interval * np.arange(1, n + 1), maturity)
    return times


def ois_swap_rate(curve: DiscountCurve, maturity: float, interval: float = 1.0) -> float:
    """Par rate of a (possibly multi-period) OIS under the curve.

    The compounded floating leg telescopes to 1 - P(T); the fixed leg is
    the accrual-weighted annuity.
    """
    times = ois_coupon_times(maturity, interval)
    accruals = np.diff(np.concatenate([[0.0], times]))
    annuity = float(np.sum(accruals * curve.discount(times)))
    return (1.0 - curve.discount(maturity)) / annuity


def irs_swap_rate(discount: DiscountCurve, forward_curve: ForwardCurve,
                  maturity: float) -> float:
    """Par rate of a fixed-vs-floating swap with both legs on the tenor grid."""
    x = forward_curve.tenor
    n = int(round(maturity / x))
    if abs(maturity - n * x) > _PILLAR_TOL or n < 1:
        raise OutOfDomainError("T", maturity, f"not a multiple of tenor {x}")
    times = x * np.arange(1, n + 1)
    ps = discount.discount(times)
    fs = np.array([forward_curve.forward(t) for t in times])
    return float(np.sum(fs * ps) / np.sum(ps))


# --------------------------------------------------------------------------
# Bootstrap
# --------------------------------------------------------------------------

def _ois_residual(d: float, pillars, log_ps, maturity: float, rate: float,
                  coupon_times) -> float:
    """Par-equation residual for a candidate last discount d = P(maturity)."""
    cand_pillars = np.concatenate([pillars, [maturity]])
    cand_logs = np.concatenate([log_ps, [np.log(d)]])
    discounts = np.exp(np.interp(coupon_times, cand_pillars, cand_logs))
    accruals = np.diff(np.concatenate([[0.0], coupon_times]))
    fixed_leg = rate * float(np.sum(accruals * discounts))
    float_leg = 1.0 - d
    return fixed_leg - float_leg


def bootstrap_ois(quotes: "QuoteSet", coupon_interval: float = 1.0) -> DiscountCurve:
    """Bootstrap the OIS-collateralized discount curve from par quotes.

    Quotes with maturity up to one coupon interval are single-period
    swaps over [0, T]; longer maturities pay annual fixed coupons.  Each
    pillar discount is solved by bracketed root finding in (0, 10] to a
    1e-14 tolerance; the resulting curve reprices every input quote.
    """
    if not quotes.ois_quotes:
        raise NoQuotesError("no OIS quotes")
    pillars = np.array([0.0])
    log_ps = np.array([0.0])
    for maturity, rate in quotes.ois_quotes:
        coupon_times = ois_coupon_times(maturity, coupon_interval)
        residual = lambda d: _ois_residual(d, pillars, log_ps, maturity, rate, coupon_times)
        lo, hi = 1e-12, 10.0
        if residual(lo) * residual(hi) > 0.0:
            raise RootNotBracketedError(maturity)
        d = brentq(residual, lo, hi, xtol=1e-15, rtol=8.9e-16)
        pillars = np.concatenate([pillars, [maturity]])
        log_ps = np.concatenate([log_ps, [np.log(d)]])
    return DiscountCurve(pillars, log_ps)


def bootstrap_forwards(quotes: "QuoteSet", discount: DiscountCurve,
                       tenor: float, shift: float | None = None) -> ForwardCurve:
    """Bootstrap the floating forward strip for one tenor against OIS
    discounting.

    Solves maturity by maturity; reset pillars between two quoted
    maturities share a flat forward obtained in closed form from the
    annuity equation.
    """
    strip = None
    for x, entries in quotes.irs_quotes.items():
        if abs(x - tenor) <= _PILLAR_TOL:
            strip = entries
            break
    if not strip:
        raise NoQuotesError(f"no swap quotes for tenor {tenor}")
    last_maturity = strip[-1][0]
    if last_maturity > discount.max_time + _PILLAR_TOL:
        raise OutOfDomainError("T", last_maturity, "discount curve too short")

    k_shift = 1.0 / tenor if shift is None else shift
    n_total = int(round(last_maturity / tenor))
    times = tenor * np.arange(1, n_total + 1)
    ps = discount.discount(times)
    forwards = np.full(n_total, np.nan)

    solved = 0          # number of reset pillars already fixed
    known_pv = 0.0      # sum_i x * F_i * P_i over solved pillars
    known_annuity = 0.0  # sum_i x * P_i over solved pillars
    for maturity, rate in strip:
        n = int(round(maturity / tenor))
        block = slice(solved, n)
        block_annuity = float(np.sum(tenor * ps[block]))
        total_annuity = known_annuity + block_annuity
        # rate * total_annuity = known_pv + flat * block_annuity
        flat = (rate * total_annuity - known_pv) / block_annuity
        if k_shift + flat <= 0.0:
            raise InconsistentStripError(
                f"solved forward {flat:.6f} at T={maturity} violates k + F > 0"
            )
        forwards[block] = flat
        known_pv += flat * block_annuity
        known_annuity = total_annuity
        solved = n
    return ForwardCurve(tenor, times, forwards, shift=k_shift)


def build_curves(quotes: "QuoteSet", coupon_interval: float = 1.0) -> CurveSet:
    """Bootstrap the discount curve and all quoted forward strips."""
    discount = bootstrap_ois(quotes, coupon_interval)
    forwards = {x: bootstrap_forwards(quotes, discount, x)
                for x in sorted(quotes.irs_quotes)}
    return CurveSet(discount, forwards)


# --------------------------------------------------------------------------
# Curve dumps
# --------------------------------------------------------------------------

def dump_curves(curves: CurveSet, out_dir, float_format: str = ".15g") -> list:
    """Write curve pillars to CSV for inspection and golden tests.

    Returns the list of files written: ``discount.csv`` with columns
    ``T,logP`` and one ``forward_<tenor>.csv`` per strip with columns
    ``T,x,F``.
    """
    from pathlib import Path

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    path = out_dir / "discount.csv"
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["T", "logP"])
        for t, logp in zip(curves.discount.pillars, curves.discount.log_discounts):
            writer.writerow([format(t, float_format), format(logp, float_format)])
    written.append(path)
    for tenor in sorted(curves.forwards):
        fcurve = curves.forwards[tenor]
        path = out_dir / f"forward_{tenor:g}.csv"
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["T", "x", "F"])
            for t, f in zip(fcurve.pillars, fcurve.forwards):
                writer.writerow([format(t, float_format), format(tenor, float_format),
                                 format(f, float_format)])
        written.append(path)
    return written
