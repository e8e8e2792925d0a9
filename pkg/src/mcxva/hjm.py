"""Markovian multi-curve term-structure model with stochastic volatility.

The model drives the discount curve and all floating forward strips off
one family of Markov processes.  Volatilities factorize as

    sigma(t, u; T, x) = h_t . (q(u; T, x) * g(t, u)),
    g(t, u) = exp(-int_t^u a(s) ds),      q(u; u, 0) = 1,

with h_t = sqrt(v_t) R for an upper-triangular loading matrix R and a
square-root variance process

    dv = kappa (theta - v) dt + nu sqrt(v) dZ,    v_0 = v_bar.

Separability makes the state Markov in (X, Y, v):

    dX_i = (sum_j Y_ij - a_i X_i) dt + (h^T dW)_i
    dY_ij = ((h^T h)_ij - (a_i + a_j) Y_ij) dt,      X_0 = 0, Y_0 = 0,

and every bond and forward is reconstructed from the state:

    ln[(k + F_t(T,x)) / (k + F_0(T,x))]
        = G(t,T-x,T;T,x) . (X_t + Y_t (G0(t,t,T) - G(t,T-x,T;T,x)/2))
    P_t(T) = P_0(T)/P_0(t) * exp(-G0(t,t,T) . X_t - G0^T Y_t G0 / 2)

where G0 integrates g and G integrates q*g over the accrual period.
The overnight rate along a path is e_t = f_0(t) + sum_i X_i(t); its
running integral is accumulated during simulation so that pathwise
discount factors cost nothing at pricing time (and are exact when
volatility is zero).

Simulation uses full-truncation Euler for the variance and Euler steps
for (X, Y), with counter-based random substreams per fixed-size path
block so results are independent of thread scheduling.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .curves import CurveSet, DiscountCurve, ForwardCurve
from .errors import (
    EmptyGridError,
    GridTooCoarseError,
    InvalidIntervalError,
    InvariantViolationError,
    NonPositiveDtError,
    OutOfDomainError,
    StaleStateError,
)

__all__ = [
    "VolatilitySpec",
    "MarkovState",
    "PathEnsemble",
    "zero_state",
    "g_factor",
    "g_integrals",
    "evolve_state",
    "reconstruct_forward",
    "reconstruct_bond",
    "simulate",
]

_TIME_TOL = 1e-9
_GAUSS_ORDER = 64


def _leggauss_nodes(a: float, b: float, order: int = _GAUSS_ORDER):
    nodes, weights = np.polynomial.legendre.leggauss(order)
    half = 0.5 * (b - a)
    return 0.5 * (a + b) + half * nodes, half * weights


@dataclass(eq=False)
class VolatilitySpec:
    """Volatility structure and variance dynamics of the model.

    mean_reversion:
        per-factor constants, or a callable t -> (N,) array (the
        quadrature path is then used for g and its integrals).
    q_loadings:
        per-tenor constant loading vectors q_x; tenors without an entry
        (and the x=0 limit) use ones, preserving q(u; u, 0) = 1.
    rho:
        cross-correlation block, rho[i, j] = d<Z_i, W_j>/dt.  The joint
        2N x 2N correlation (independent W block, independent Z block)
        must be positive semidefinite; degenerate inputs are rejected.
    """

    num_factors: int
    mean_reversion: object = 0.0
    loadings: np.ndarray = None
    q_loadings: dict = field(default_factory=dict)
    kappa: np.ndarray = None
    theta: np.ndarray = None
    nu: np.ndarray = None
    v_bar: np.ndarray = None
    rho: np.ndarray = None
    q_fn: object = None

    def __post_init__(self):
        n = self.num_factors
        if n < 1:
            raise InvariantViolationError("need at least one factor")

        def vec(value, default):
            if value is None:
                value = default
            arr = np.broadcast_to(np.asarray(value, dtype=float), (n,)).copy()
            return arr

        if not callable(self.mean_reversion):
            self.mean_reversion = vec(self.mean_reversion, 0.0)
        self.loadings = np.eye(n) if self.loadings is None else np.asarray(self.loadings, float)
        if self.loadings.shape != (n, n):
            raise InvariantViolationError(f"loadings must be {n}x{n}")
        if not np.allclose(self.loadings, np.triu(self.loadings)):
            raise InvariantViolationError("loadings matrix must be upper triangular")
        self.kappa = vec(self.kappa, 0.0)
        self.theta = vec(self.theta, 0.0)
        self.nu = vec(self.nu, 0.0)
        self.v_bar = vec(self.v_bar, 0.0)
        for name in ("kappa", "theta", "nu", "v_bar"):
            if np.any(getattr(self, name) < 0.0):
                raise InvariantViolationError(f"{name} must be elementwise nonnegative")
        self.rho = np.zeros((n, n)) if self.rho is None else np.asarray(self.rho, float)
        if self.rho.shape != (n, n):
            raise InvariantViolationError(f"rho must be {n}x{n}")
        if np.any(np.abs(self.rho) > 1.0 + 1e-12):
            raise InvariantViolationError("correlations must lie in [-1, 1]")
        self.q_loadings = {float(x): np.broadcast_to(np.asarray(v, float), (n,)).copy()
                           for x, v in self.q_loadings.items()}
        for x in self.q_loadings:
            if x <= 0.0:
                raise InvariantViolationError("q loadings are keyed by positive tenors")
        if self.q_fn is not None:
            for u in (0.0, 1.0, 5.0):
                probe = np.broadcast_to(np.asarray(self.q_fn(u, u, 0.0), float), (n,))
                if not np.allclose(probe, 1.0, atol=1e-10):
                    raise InvariantViolationError("q(u; u, 0) must equal 1")

        joint = np.eye(2 * n)
        joint[:n, n:] = self.rho.T
        joint[n:, :n] = self.rho
        eigs = np.linalg.eigvalsh(joint)
        if eigs.min() < -1e-10:
            raise InvariantViolationError(
                f"joint driver correlation not positive semidefinite (min eig {eigs.min():.3e})"
            )
        try:
            chol = np.linalg.cholesky(joint)
        except np.linalg.LinAlgError:
            # PSD but singular: symmetric square root keeps the covariance.
            vals, vecs = np.linalg.eigh(joint)
            chol = vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None)))
        self._chol_t = chol.T.copy()
        # r_outer[i, j, k] = R_ij R_ik, so (h^T h)_jk = sum_i v_i r_outer[i, j, k].
        self._r_outer = self.loadings[:, :, None] * self.loadings[:, None, :]

    @property
    def has_constant_mean_reversion(self) -> bool:
        return not callable(self.mean_reversion)

    def a_at(self, t: float) -> np.ndarray:
        if callable(self.mean_reversion):
            return np.broadcast_to(np.asarray(self.mean_reversion(t), float),
                                   (self.num_factors,))
        return self.mean_reversion

    def a_pair(self, t: float) -> np.ndarray:
        a = self.a_at(t)
        return a[:, None] + a[None, :]

    def q_vector(self, tenor: float) -> np.ndarray:
        if tenor <= _TIME_TOL:
            return np.ones(self.num_factors)
        for x, v in self.q_loadings.items():
            if abs(x - tenor) <= _TIME_TOL:
                return v
        return np.ones(self.num_factors)


@dataclass
class MarkovState:
    """Model state at one time on one path: factor vector x, auxiliary
    covariance-accumulator matrix y, and variance vector v."""

    t: float
    x: np.ndarray
    y: np.ndarray
    v: np.ndarray


def zero_state(spec: VolatilitySpec) -> MarkovState:
    """Initial state: x = 0, y = 0, v = v_bar."""
    n = spec.num_factors
    return MarkovState(0.0, np.zeros(n), np.zeros((n, n)), spec.v_bar.copy())


# --------------------------------------------------------------------------
# Deterministic building blocks
# --------------------------------------------------------------------------

def g_factor(spec: VolatilitySpec, t: float, u: float) -> np.ndarray:
    """Mean-reversion decay g(t, u) = exp(-int_t^u a), elementwise per factor."""
    if u < t - _TIME_TOL:
        raise InvalidIntervalError(f"t={t} > u={u}")
    u = max(u, t)
    if spec.has_constant_mean_reversion:
        return np.exp(-spec.mean_reversion * (u - t))
    nodes, weights = _leggauss_nodes(t, u)
    integral = np.tensordot(weights, np.array([spec.a_at(s) for s in nodes]), axes=1)
    return np.exp(-integral)


def _g0_closed_form(a: np.ndarray, t: float, t0: float, t1: float) -> np.ndarray:
    d0, d1 = t0 - t, t1 - t
    out = np.empty_like(a)
    nonzero = np.abs(a) > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        out[nonzero] = (np.exp(-a[nonzero] * d0) - np.exp(-a[nonzero] * d1)) / a[nonzero]
    out[~nonzero] = d1 - d0
    return out


def g_integrals(spec: VolatilitySpec, t: float, t0: float, t1: float,
                maturity: float | None = None, tenor: float = 0.0):
    """Accrual integrals of the decay factor.

    Returns ``(big_g0, big_g)`` where big_g0 integrates g(t, v) over
    [t0, t1] and big_g integrates q(v; maturity, tenor) * g(t, v).
    Closed form for constant mean reversion, Gauss-Legendre otherwise.
    """
    if t0 < t - _TIME_TOL or t1 < t0 - _TIME_TOL:
        raise InvalidIntervalError(f"need t <= T0 <= T1, got t={t}, T0={t0}, T1={t1}")
    t0, t1 = max(t0, t), max(t1, t0)
    maturity = t1 if maturity is None else maturity
    if spec.has_constant_mean_reversion:
        big_g0 = _g0_closed_form(spec.mean_reversion, t, t0, t1)
    else:
        nodes, weights = _leggauss_nodes(t0, t1)
        big_g0 = np.tensordot(weights, np.array([g_factor(spec, t, v) for v in nodes]), axes=1)
    if spec.q_fn is None:
        big_g = spec.q_vector(tenor) * big_g0
    else:
        nodes, weights = _leggauss_nodes(t0, t1)
        vals = np.array([np.asarray(spec.q_fn(v, maturity, tenor), float)
                         * g_factor(spec, t, v) for v in nodes])
        big_g = np.tensordot(weights, vals, axes=1)
    return big_g0, big_g


# --------------------------------------------------------------------------
# Evolution
# --------------------------------------------------------------------------

def _step_arrays(spec: VolatilitySpec, t: float, dt: float,
                 x: np.ndarray, y: np.ndarray, v: np.ndarray,
                 ix: np.ndarray, z: np.ndarray):
    """One Euler step, in place, on path-batched arrays.

    x: (B, N), y: (B, N, N), v: (B, N), ix: (B,), z: (B, 2N) iid normals.
    The variance uses the full-truncation scheme (nonnegative by
    construction of v+); ix accumulates int sum_i x_i dt by trapezoid.
    """
    n = spec.num_factors
    zc = z @ spec._chol_t
    cw, cz = zc[:, :n], zc[:, n:]
    vplus = np.maximum(v, 0.0)
    sq = np.sqrt(vplus)
    m = np.tensordot(vplus, spec._r_outer, axes=([1], [0]))
    a = spec.a_at(t)
    sqrt_dt = np.sqrt(dt)
    sx0 = x.sum(axis=1)
    x_new = x + (y.sum(axis=2) - a * x) * dt + (sq * cw) @ spec.loadings * sqrt_dt
    y += (m - spec.a_pair(t) * y) * dt
    v += spec.kappa * (spec.theta - vplus) * dt + spec.nu * sq * cz * sqrt_dt
    x[:] = x_new
    ix += 0.5 * dt * (sx0 + x.sum(axis=1))


def evolve_state(state: MarkovState, dt: float, dw: np.ndarray, dz: np.ndarray,
                 spec: VolatilitySpec) -> MarkovState:
    """Advance one state by one Euler step.

    ``dw`` and ``dz`` are independent standard normals; the driver
    correlation is applied inside.  Returns a new state; the variance
    stays nonnegative under full truncation.
    """
    if dt <= 0.0:
        raise NonPositiveDtError(f"dt={dt}")
    n = spec.num_factors
    x = np.array(state.x, dtype=float, copy=True).reshape(1, n)
    y = np.array(state.y, dtype=float, copy=True).reshape(1, n, n)
    v = np.array(state.v, dtype=float, copy=True).reshape(1, n)
    ix = np.zeros(1)
    z = np.concatenate([np.asarray(dw, float).reshape(n),
                        np.asarray(dz, float).reshape(n)]).reshape(1, 2 * n)
    _step_arrays(spec, state.t, dt, x, y, v, ix, z)
    return MarkovState(state.t + dt, x[0], y[0], v[0])


# --------------------------------------------------------------------------
# Reconstruction
# --------------------------------------------------------------------------

def _forward_exponent(spec, t, maturity, tenor, x, y):
    _, big_g = g_integrals(spec, t, maturity - tenor, maturity, maturity, tenor)
    big_g0, _ = g_integrals(spec, t, t, maturity)
    w = big_g0 - 0.5 * big_g
    return x @ big_g + (y @ w) @ big_g


def _bond_exponent(spec, t, maturity, x, y):
    big_g0, _ = g_integrals(spec, t, t, maturity)
    return -(x @ big_g0) - 0.5 * (y @ big_g0) @ big_g0


def reconstruct_forward(state: MarkovState, curve0: ForwardCurve,
                        spec: VolatilitySpec, maturity: float, tenor: float) -> float:
    """Floating forward F_t(T, x) implied by the state.

    Valid until the reset time T - x; always strictly above -k by
    construction of the shifted-lognormal representation.
    """
    reset = maturity - tenor
    if state.t > reset + _TIME_TOL:
        raise StaleStateError(f"state at t={state.t} is past reset {reset}")
    f0 = curve0.forward(maturity)
    k = curve0.shift
    expo = _forward_exponent(spec, state.t, maturity, tenor, state.x, state.y)
    return float((k + f0) * np.exp(expo) - k)


def reconstruct_bond(state: MarkovState, curve0: DiscountCurve,
                     spec: VolatilitySpec, maturity: float) -> float:
    """Zero-coupon bond P_t(T) implied by the state; positive, and equal
    to P_0(T)/P_0(t) on zero-volatility paths."""
    if maturity < state.t - _TIME_TOL:
        raise OutOfDomainError("T", maturity, f"bond matured before state time {state.t}")
    maturity = max(maturity, state.t)
    ratio = np.exp(curve0.log_discount(maturity) - curve0.log_discount(state.t))
    expo = _bond_exponent(spec, state.t, maturity, state.x, state.y)
    return float(ratio * np.exp(expo))


# --------------------------------------------------------------------------
# Simulation
# --------------------------------------------------------------------------

@dataclass(eq=False)
class PathEnsemble:
    """Recorded Markov states on a fixed time grid for many paths.

    Arrays are indexed ``[time, path, ...]``; ``ix`` holds the running
    integral of sum_i x_i used for pathwise overnight discounting.
    """

    grid: np.ndarray
    x: np.ndarray
    y: np.ndarray
    v: np.ndarray
    ix: np.ndarray
    seed: int
    spec: VolatilitySpec
    curves: CurveSet

    @property
    def num_paths(self) -> int:
        return self.x.shape[1]

    @property
    def num_times(self) -> int:
        return self.grid.size

    def index_of(self, t: float) -> int:
        idx = int(np.searchsorted(self.grid, t))
        for candidate in (idx - 1, idx):
            if 0 <= candidate < self.grid.size and abs(self.grid[candidate] - t) <= _TIME_TOL:
                return candidate
        raise GridTooCoarseError(f"time {t} is not on the simulation grid")

    def state(self, path: int, k: int) -> MarkovState:
        return MarkovState(float(self.grid[k]), self.x[k, path].copy(),
                           self.y[k, path].copy(), self.v[k, path].copy())

    def ln_deflator(self, k: int) -> np.ndarray:
        """ln D(0, t_k; e) per path: overnight bank-account deflator."""
        return self.curves.discount.log_discount(float(self.grid[k])) - self.ix[k]

    def forward_at(self, k: int, maturity: float, tenor: float) -> np.ndarray:
        """F_{t_k}(maturity, tenor) per path."""
        t = float(self.grid[k])
        reset = maturity - tenor
        if t > reset + _TIME_TOL:
            raise StaleStateError(f"grid time {t} is past reset {reset}")
        curve0 = self.curves.forward_curve(tenor)
        f0 = curve0.forward(maturity)
        expo = _forward_exponent(self.spec, t, maturity, tenor, self.x[k], self.y[k])
        return (curve0.shift + f0) * np.exp(expo) - curve0.shift

    def bond_at(self, k: int, maturity: float) -> np.ndarray:
        """P_{t_k}(maturity) per path."""
        t = float(self.grid[k])
        if maturity < t - _TIME_TOL:
            raise OutOfDomainError("T", maturity, f"bond matured before grid time {t}")
        maturity = max(maturity, t)
        ratio = np.exp(self.curves.discount.log_discount(maturity)
                       - self.curves.discount.log_discount(t))
        expo = _bond_exponent(self.spec, t, maturity, self.x[k], self.y[k])
        return ratio * np.exp(expo)


def _substeps(grid: np.ndarray, step_dt: float):
    plan = []
    for k in range(grid.size - 1):
        span = grid[k + 1] - grid[k]
        n = max(1, int(np.ceil(span / step_dt - _TIME_TOL)))
        plan.append((n, span / n))
    return plan


def simulate(spec: VolatilitySpec, curves: CurveSet, grid, num_paths: int,
             seed: int, *, step_dt: float = 1.0 / 96.0, threads: int = 1,
             block_size: int = 4096) -> PathEnsemble:
    """Simulate the Markov state on a recording grid.

    ``grid`` must start at 0 and increase; intervals are internally
    subdivided to at most ``step_dt``.  Paths are generated in fixed
    blocks of ``block_size`` with one counter-based random substream per
    block, so path p is bitwise identical for a given seed regardless of
    ``threads``.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise EmptyGridError("empty simulation grid")
    if grid[0] != 0.0:
        raise InvariantViolationError("simulation grid must start at t=0")
    if np.any(np.diff(grid) <= 0.0):
        raise InvariantViolationError("simulation grid must be strictly increasing")
    if num_paths < 1:
        raise InvariantViolationError("num_paths must be at least 1")
    if step_dt <= 0.0:
        raise NonPositiveDtError(f"step_dt={step_dt}")
    if seed < 0:
        raise InvariantViolationError("seed must be a nonnegative integer")
    discount = curves.discount
    if not discount.allow_extrapolation and grid[-1] > discount.max_time + _TIME_TOL:
        raise OutOfDomainError("grid", float(grid[-1]), "beyond the discount curve")
    if spec.has_constant_mean_reversion and spec.mean_reversion.size:
        if float(np.max(spec.mean_reversion)) * step_dt > 0.5:
            raise InvariantViolationError("step_dt too large for the mean reversion speed")

    n = spec.num_factors
    n_rec = grid.size
    x = np.zeros((n_rec, num_paths, n))
    y = np.zeros((n_rec, num_paths, n, n))
    v = np.zeros((n_rec, num_paths, n))
    ix = np.zeros((n_rec, num_paths))
    plan = _substeps(grid, step_dt)

    def run_block(block_index: int, p0: int, p1: int):
        width = p1 - p0
        key = np.array([seed & 0xFFFFFFFFFFFFFFFF, block_index], dtype=np.uint64)
        rng = np.random.Generator(np.random.Philox(key=key))
        bx = np.zeros((width, n))
        by = np.zeros((width, n, n))
        bv = np.tile(spec.v_bar, (width, 1))
        bix = np.zeros(width)
        x[0, p0:p1] = bx
        y[0, p0:p1] = by
        v[0, p0:p1] = bv
        ix[0, p0:p1] = bix
        t = 0.0
        for k, (n_sub, h) in enumerate(plan):
            for _ in range(n_sub):
                z = rng.standard_normal((width, 2 * n))
                _step_arrays(spec, t, h, bx, by, bv, bix, z)
                t += h
            t = float(grid[k + 1])
            x[k + 1, p0:p1] = bx
            y[k + 1, p0:p1] = by
            v[k + 1, p0:p1] = bv
            ix[k + 1, p0:p1] = bix

    blocks = [(b, start, min(start + block_size, num_paths))
              for b, start in enumerate(range(0, num_paths, block_size))]
    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(run_block, *blk) for blk in blocks]
            for future in futures:
                future.result()
    else:
        for blk in blocks:
            run_block(*blk)

    return PathEnsemble(grid=grid, x=x, y=y, v=v, ix=ix, seed=seed,
                        spec=spec, curves=curves)
