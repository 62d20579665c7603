"""Synthetic option chains from known parameters.

Used to exercise the calibration pipeline end to end with a known ground truth: the
chain's closes are model prices at ``truth`` computed with the variance-reduced
estimator at a high path count, and the bid/ask band is a symmetric relative spread
around the close. Maturities are specified in integer days so the ACT/365 year
fractions written to CSV round-trip exactly.
"""
from __future__ import annotations

import datetime as dt

from .market import DAYS_PER_YEAR, OptionQuote, OptionStructure, compute_weights
from .model import MarketEnv, ModelParams
from .pricing import ChainPricingRequest, price_chain

__all__ = ["generate_chain"]

_DEFAULT_TRADE_DATE = dt.date(2026, 1, 2)


def generate_chain(truth: ModelParams, env: MarketEnv, strikes, maturity_days,
                   *, steps_per_year: int = 252, path_count: int = 100_000,
                   seed: int = 0, rel_spread: float = 0.01,
                   trade_date: dt.date = _DEFAULT_TRADE_DATE,
                   threads: int = 1, weight_rule: str = "inv_spread_sq",
                   ) -> OptionStructure:
    """Price the strike x maturity cross product at ``truth`` and wrap it as a chain.

    ``maturity_days`` are integer calendar-day offsets from the trade date. Every
    close must come out strictly positive (guaranteed for calls on a positive spot,
    barring a strike so deep out of the money that all sampled paths miss it — widen
    ``path_count`` or move the strike in that case).
    """
    strikes = [float(k) for k in strikes]
    days = [int(d) for d in maturity_days]
    if not strikes or not days:
        raise ValueError("need at least one strike and one maturity")
    if any(d <= 0 for d in days):
        raise ValueError("maturity_days must be positive integers")
    if rel_spread < 0.0:
        raise ValueError("rel_spread must be non-negative")
    if len(set(days)) != len(days):
        raise ValueError("duplicate maturities in maturity_days")

    options = [(k, d / DAYS_PER_YEAR) for d in sorted(days) for k in strikes]
    request = ChainPricingRequest(options=tuple(options), env=env, params=truth,
                                  path_count=path_count,
                                  steps_per_year=steps_per_year, seed=seed)
    estimates = price_chain(request, threads=threads)

    half = 0.5 * rel_spread
    quotes = []
    for (strike, maturity), est in zip(request.options, estimates):
        close = est.price
        if close <= 0.0:
            raise ValueError(
                f"non-positive synthetic price {close} at strike {strike}, "
                f"maturity {maturity}; increase path_count or adjust strikes")
        quotes.append(OptionQuote(strike=strike, maturity=maturity,
                                  bid=close * (1.0 - half), ask=close * (1.0 + half),
                                  close=close,
                                  volume=None))
    weights = compute_weights(quotes, rule=weight_rule)
    return OptionStructure(quotes=tuple(quotes), env=env, trade_date=trade_date,
                           weights=weights)
