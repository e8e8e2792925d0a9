"""Default intensities, treasury funding rates, collateral policies and
initial-margin haircuts.

All term structures here are deterministic piecewise-flat functions of
time measured in year fractions.  Intensities are first-to-default
intensities split by who defaults first: ``lambda_ci`` is the intensity
of the counterparty defaulting before the investor, ``lambda_ic`` the
reverse, and their sum is the intensity of the first default.

Funding and investing rates are affine in the overnight rate and the
intensities::

    f_borrow(t) = e(t) + w_plus(t) + w_pool(t) * lambda_pool(t) + w_inv(t) * lambda_inv(t)
    f_invest(t) = e(t) + w_minus(t) + w_pool(t) * lambda_pool(t)

where ``lambda_pool`` is the average intensity of the names backing the
collateral portfolio and ``lambda_inv`` the investor's own intensity.

Initial-margin haircuts come in two flavours: a quantile (VaR) haircut
on the distribution of the value at the end of the margin period of
risk, and an option-style haircut built from the expected upside of the
discounted future value.  Both map into an over-collateralization
fraction ``alpha = 1 + haircut``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AlphaOutOfRangeError,
    EmptySamplesError,
    InvariantViolationError,
    OutOfDomainError,
    UsageError,
    ZeroValueError,
)

__all__ = [
    "PiecewiseFlatCurve",
    "as_curve",
    "CreditSpec",
    "FundingSpec",
    "CollateralPolicy",
    "HaircutContext",
    "funding_rate",
    "empirical_quantile",
    "haircut_var",
    "haircut_price",
    "collateral_fraction",
]

_MAX_MARGIN_PERIOD = 20.0 / 365.0


@dataclass(eq=False)
class PiecewiseFlatCurve:
    """Right-continuous step function of time with exact integrals.

    ``values[i]`` applies on ``[times[i], times[i+1])``; the last value
    extends to infinity.  ``times[0]`` must be 0.
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.atleast_1d(np.asarray(self.times, dtype=float))
        self.values = np.atleast_1d(np.asarray(self.values, dtype=float))
        if self.times.shape != self.values.shape:
            raise InvariantViolationError("times and values must have equal length")
        if self.times.size == 0:
            raise InvariantViolationError("curve needs at least one segment")
        if self.times[0] != 0.0:
            raise InvariantViolationError("first breakpoint must be t=0")
        if np.any(np.diff(self.times) <= 0):
            raise InvariantViolationError("breakpoints must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise InvariantViolationError("curve values must be finite")
        # Antiderivative at each breakpoint, for exact integrals.
        seg = self.values[:-1] * np.diff(self.times)
        self._cum = np.concatenate([[0.0], np.cumsum(seg)])

    @classmethod
    def flat(cls, value: float) -> "PiecewiseFlatCurve":
        return cls(np.array([0.0]), np.array([float(value)]))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, None)
        out = self.values[idx]
        return float(out) if out.ndim == 0 else out

    def _antiderivative(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, None)
        out = self._cum[idx] + self.values[idx] * (t - self.times[idx])
        return out

    def integral(self, a, b):
        """Exact integral of the step function over [a, b]."""
        out = self._antiderivative(b) - self._antiderivative(a)
        return float(out) if np.ndim(out) == 0 else out

    def _binary(self, other, op):
        other = as_curve(other)
        times = np.union1d(self.times, other.times)
        return PiecewiseFlatCurve(times, op(self(times), other(times)))

    def __add__(self, other):
        return self._binary(other, lambda a, b: a + b)

    def __sub__(self, other):
        return self._binary(other, lambda a, b: a - b)

    def __mul__(self, other):
        return self._binary(other, lambda a, b: a * b)

    __radd__ = __add__
    __rmul__ = __mul__

    def __neg__(self):
        return PiecewiseFlatCurve(self.times.copy(), -self.values)


def as_curve(spec) -> PiecewiseFlatCurve:
    """Coerce a scalar, ``(times, values)`` pair or curve into a curve."""
    if isinstance(spec, PiecewiseFlatCurve):
        return spec
    if np.isscalar(spec):
        return PiecewiseFlatCurve.flat(float(spec))
    if isinstance(spec, dict):
        return PiecewiseFlatCurve(np.asarray(spec["times"]), np.asarray(spec["values"]))
    times, values = spec
    return PiecewiseFlatCurve(np.asarray(times), np.asarray(values))


def _require_nonnegative(curve: PiecewiseFlatCurve, name: str):
    if np.any(curve.values < 0.0):
        raise InvariantViolationError(f"{name} must be nonnegative everywhere")


@dataclass(eq=False)
class CreditSpec:
    """First-to-default intensities, loss-given-default fractions, and the
    pool/investor intensities driving funding spreads.

    The first-to-default intensity is ``lambda_ci + lambda_ic`` by
    construction and is exposed through :meth:`lambda_total`.
    """

    lambda_ci: PiecewiseFlatCurve = field(default_factory=lambda: PiecewiseFlatCurve.flat(0.0))
    lambda_ic: PiecewiseFlatCurve = field(default_factory=lambda: PiecewiseFlatCurve.flat(0.0))
    lgd_c: float = 0.6
    lgd_i: float = 0.6
    lambda_pool: PiecewiseFlatCurve = field(default_factory=lambda: PiecewiseFlatCurve.flat(0.0))
    lambda_inv: PiecewiseFlatCurve = field(default_factory=lambda: PiecewiseFlatCurve.flat(0.0))

    def __post_init__(self):
        self.lambda_ci = as_curve(self.lambda_ci)
        self.lambda_ic = as_curve(self.lambda_ic)
        self.lambda_pool = as_curve(self.lambda_pool)
        self.lambda_inv = as_curve(self.lambda_inv)
        for name in ("lambda_ci", "lambda_ic", "lambda_pool", "lambda_inv"):
            _require_nonnegative(getattr(self, name), name)
        for name in ("lgd_c", "lgd_i"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise OutOfDomainError(name, value, "loss given default is a fraction")

    @classmethod
    def flat(cls, lambda_ci=0.0, lambda_ic=0.0, lgd_c=0.6, lgd_i=0.6,
             lambda_pool=0.0, lambda_inv=0.0) -> "CreditSpec":
        return cls(as_curve(lambda_ci), as_curve(lambda_ic), lgd_c, lgd_i,
                   as_curve(lambda_pool), as_curve(lambda_inv))

    def lambda_total(self, t):
        """First-to-default intensity lambda_ci(t) + lambda_ic(t)."""
        return self.lambda_ci(t) + self.lambda_ic(t)


@dataclass(eq=False)
class FundingSpec:
    """Deterministic weights defining treasury borrowing/investing rates
    as spreads over the overnight rate."""

    w_plus: PiecewiseFlatCurve = field(default_factory=lambda: PiecewiseFlatCurve.flat(0.0))
    w_minus: PiecewiseFlatCurve = field(default_factory=lambda: PiecewiseFlatCurve.flat(0.0))
    w_pool: PiecewiseFlatCurve = field(default_factory=lambda: PiecewiseFlatCurve.flat(0.0))
    w_inv: PiecewiseFlatCurve = field(default_factory=lambda: PiecewiseFlatCurve.flat(0.0))

    def __post_init__(self):
        self.w_plus = as_curve(self.w_plus)
        self.w_minus = as_curve(self.w_minus)
        self.w_pool = as_curve(self.w_pool)
        self.w_inv = as_curve(self.w_inv)

    @classmethod
    def flat(cls, w_plus=0.0, w_minus=0.0, w_pool=0.0, w_inv=0.0) -> "FundingSpec":
        return cls(as_curve(w_plus), as_curve(w_minus), as_curve(w_pool), as_curve(w_inv))

    def borrow_spread_curve(self, credit: CreditSpec) -> PiecewiseFlatCurve:
        """f_borrow(t) - e(t) as a piecewise-flat curve."""
        return self.w_plus + self.w_pool * credit.lambda_pool + self.w_inv * credit.lambda_inv

    def invest_spread_curve(self, credit: CreditSpec) -> PiecewiseFlatCurve:
        """f_invest(t) - e(t) as a piecewise-flat curve."""
        return self.w_minus + self.w_pool * credit.lambda_pool

    def validate_against(self, credit: CreditSpec):
        """Borrowing must cost at least as much as investing earns.

        Checked at every breakpoint of the combined spread curves.
        """
        gap = self.borrow_spread_curve(credit) - self.invest_spread_curve(credit)
        if np.any(gap.values < -1e-15):
            raise InvariantViolationError(
                "borrowing rate falls below investing rate "
                f"(min gap {gap.values.min():.3e})"
            )


def funding_rate(spec: FundingSpec, credit: CreditSpec, e_t: float, t: float,
                 direction: str) -> float:
    """Treasury rate at time t given the overnight rate ``e_t``.

    ``direction`` is ``"borrow"`` (cash raised by the desk) or
    ``"invest"`` (excess cash lent out).
    """
    if t < 0.0:
        raise OutOfDomainError("t", t, "negative time")
    if direction == "borrow":
        return float(e_t + spec.borrow_spread_curve(credit)(t))
    if direction == "invest":
        return float(e_t + spec.invest_spread_curve(credit)(t))
    raise UsageError(f"direction must be 'borrow' or 'invest', got {direction!r}")


@dataclass(eq=False)
class CollateralPolicy:
    """Collateralization rule of a deal.

    mode:
        ``none`` (alpha=0), ``perfect`` (alpha=1), ``fraction`` (constant
        or scheduled alpha in [0, 1]) or ``ccp`` (alpha = 1 + haircut,
        with the haircut computed at inception from the value
        distribution at the end of the margin period of risk).
    c_spread:
        accrual spread of the collateral rate over the overnight rate
        (symmetric for posted and received collateral, as in cash CSAs).
    delta:
        margin period of risk in years; capped at ``max_delta``
        (20 calendar days by default).
    """

    mode: str = "perfect"
    alpha: object = None
    c_spread: object = 0.0
    delta: float = 10.0 / 365.0
    quantile_q: float = 0.01
    haircut_method: str = "price"
    max_delta: float = _MAX_MARGIN_PERIOD

    def __post_init__(self):
        if self.mode not in ("none", "perfect", "fraction", "ccp"):
            raise UsageError(f"unknown collateral mode {self.mode!r}")
        self.c_spread = as_curve(self.c_spread)
        if self.mode == "fraction":
            if self.alpha is None:
                raise AlphaOutOfRangeError("fraction mode requires alpha")
            self.alpha = as_curve(self.alpha)
            if np.any(self.alpha.values < 0.0) or np.any(self.alpha.values > 1.0):
                raise AlphaOutOfRangeError(
                    f"fraction alpha must lie in [0, 1], got {self.alpha.values}"
                )
        if not 0.0 <= self.delta <= self.max_delta + 1e-12:
            raise OutOfDomainError("delta", self.delta,
                                   f"margin period of risk capped at {self.max_delta:.6f}y")
        if not 0.0 < self.quantile_q < 1.0:
            raise OutOfDomainError("quantile_q", self.quantile_q, "must lie in (0, 1)")
        if self.haircut_method not in ("var", "price"):
            raise UsageError(f"haircut_method must be 'var' or 'price', got {self.haircut_method!r}")

    @classmethod
    def none(cls, **kw) -> "CollateralPolicy":
        return cls(mode="none", **kw)

    @classmethod
    def perfect(cls, **kw) -> "CollateralPolicy":
        return cls(mode="perfect", **kw)

    @classmethod
    def fraction(cls, alpha, **kw) -> "CollateralPolicy":
        return cls(mode="fraction", alpha=alpha, **kw)

    @classmethod
    def ccp(cls, **kw) -> "CollateralPolicy":
        return cls(mode="ccp", **kw)


@dataclass(eq=False)
class HaircutContext:
    """Inputs for computing a CCP haircut at inception.

    ``future_values`` are per-path values of the deal at the end of the
    margin period of risk; ``discount_factors`` (optional) discount them
    back over the margin period at the treasury rate.
    """

    current_value: float
    future_values: np.ndarray
    discount_factors: np.ndarray | None = None


def empirical_quantile(samples: np.ndarray, q: float) -> float:
    """Lower quantile Q_X(q) = inf{x : q < P[X < x]} of an empirical sample."""
    samples = np.sort(np.asarray(samples, dtype=float))
    n = samples.size
    k = int(math.floor(q * n)) + 1
    return float(samples[min(k, n) - 1])


def haircut_var(pnl_samples: np.ndarray, current_value: float, q: float):
    """Quantile (VaR) haircuts for initial margin.

    ``pnl_samples`` is the empirical distribution of the deal value at
    the end of the margin period of risk.  The quantile is taken on the
    change in value over the period; the resulting haircuts satisfy
    ``0 <= haircut < 1`` by the activation indicators, which switch the
    add-on off once the quantile move exceeds the full current value.

    Returns ``(haircut_up, haircut_down)``; only the branch matching the
    sign of the current value can be non-zero.
    """
    samples = np.asarray(pnl_samples, dtype=float)
    if samples.size == 0:
        raise EmptySamplesError("empty sample set")
    if current_value == 0.0:
        raise ZeroValueError("haircut undefined for a deal worth exactly zero")
    if not 0.0 < q < 1.0:
        raise OutOfDomainError("q", q, "quantile level must lie in (0, 1)")

    change = samples - current_value
    q_up = min(empirical_quantile(-change, q), 0.0)
    up = -q_up / current_value if -current_value < q_up else 0.0
    q_dn = min(empirical_quantile(change, q), 0.0)
    down = q_dn / current_value if current_value < q_dn else 0.0
    return float(up), float(down)


def haircut_price(forward_values: np.ndarray, current_value: float) -> float:
    """Option-style haircut from the expected upside of the discounted
    future value.

    ``forward_values`` are per-path values at the end of the margin
    period of risk already discounted at the treasury rate.  The result
    is clipped into [0, 1]; hitting the upper bound means the expected
    upside exceeded the current value and is flagged with a warning.
    """
    values = np.asarray(forward_values, dtype=float)
    if values.size == 0:
        raise EmptySamplesError("empty sample set")
    if current_value == 0.0:
        raise ZeroValueError("haircut undefined for a deal worth exactly zero")
    upside = np.maximum(values / current_value - 1.0, 0.0).mean()
    result = 1.0 + min(upside - 1.0, 0.0)
    if upside >= 1.0:
        warnings.warn(
            f"option-style haircut saturated at 1 (expected upside {upside:.4f})",
            RuntimeWarning,
            stacklevel=2,
        )
    return float(result)


def collateral_fraction(policy: CollateralPolicy, context: HaircutContext | None = None) -> float:
    """Collateral fraction alpha implied by a policy.

    ``fraction`` mode with a scheduled alpha returns the value at t=0;
    scheduled fractions enter pricing through the full curve.  ``ccp``
    mode requires a :class:`HaircutContext`.
    """
    if policy.mode == "none":
        return 0.0
    if policy.mode == "perfect":
        return 1.0
    if policy.mode == "fraction":
        return float(policy.alpha(0.0))
    if context is None:
        raise UsageError("ccp mode requires a HaircutContext")
    if policy.haircut_method == "var":
        up, down = haircut_var(context.future_values, context.current_value, policy.quantile_q)
        return 1.0 + up + down
    dfs = context.discount_factors
    values = context.future_values if dfs is None else context.future_values * np.asarray(dfs)
    return 1.0 + haircut_price(values, context.current_value)
