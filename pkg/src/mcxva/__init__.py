"""Multi-curve interest-rate pricing engine with collateral, funding and
credit adjustments.

Build OIS-collateralized discount and floating forward curves from par
quotes, simulate a Markovian multi-curve term-structure model with
stochastic volatility, and value swap schedules under perfect, partial,
zero and cleared (over-) collateralization, with the adjustment split
into CVA, DVA, funding and collateral-cost buckets.
"""

__version__ = "0.1.0"

from .credit_funding import (
    CollateralPolicy,
    CreditSpec,
    FundingSpec,
    HaircutContext,
    PiecewiseFlatCurve,
    collateral_fraction,
    funding_rate,
    haircut_price,
    haircut_var,
)
from .curves import (
    CurveSet,
    DiscountCurve,
    ForwardCurve,
    bootstrap_forwards,
    bootstrap_ois,
    build_curves,
    discount_factor,
    instantaneous_forward,
    irs_swap_rate,
    ois_par_rate,
    ois_swap_rate,
)
from .hjm import (
    MarkovState,
    PathEnsemble,
    VolatilitySpec,
    evolve_state,
    g_factor,
    g_integrals,
    reconstruct_bond,
    reconstruct_forward,
    simulate,
    zero_state,
)
from .market_data import (
    EngineConfig,
    QuoteSet,
    parse_quotes,
    serialize_quotes,
    validate_config,
)
from .pricing import (
    AdjustedPrice,
    CashFlow,
    DealSchedule,
    adjusted_bond,
    convexity_adjustment,
    curve_value,
    effective_rate_xi,
    effective_rate_zeta,
    on_default_cashflow,
    price_irs_partial,
    price_master_oracle,
    price_perfect,
    price_reduced,
)

__all__ = [
    "__version__",
    "AdjustedPrice", "CashFlow", "CollateralPolicy", "CreditSpec", "CurveSet",
    "DealSchedule", "DiscountCurve", "EngineConfig", "ForwardCurve",
    "FundingSpec", "HaircutContext", "MarkovState", "PathEnsemble",
    "PiecewiseFlatCurve", "QuoteSet", "VolatilitySpec",
    "adjusted_bond", "bootstrap_forwards", "bootstrap_ois", "build_curves",
    "collateral_fraction", "convexity_adjustment", "curve_value",
    "discount_factor", "effective_rate_xi", "effective_rate_zeta",
    "evolve_state", "funding_rate", "g_factor", "g_integrals",
    "haircut_price", "haircut_var", "instantaneous_forward", "irs_swap_rate",
    "ois_par_rate", "ois_swap_rate", "on_default_cashflow", "parse_quotes",
    "price_irs_partial", "price_master_oracle", "price_perfect",
    "price_reduced", "reconstruct_bond", "reconstruct_forward",
    "serialize_quotes", "simulate", "validate_config", "zero_state",
]
