"""Black pricing on the forward and implied-volatility inversion.

Everything is undiscounted: prices are forward prices, the forward for SPX
options is the spot (martingale, no rates) and for VIX options it must be
the model's VIX future for the same expiry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy.special import ndtr

from .errors import DataError, DomainError, NumericalError, PriceBoundsError

_KINDS = ("call", "put")

PRICE_TOL = 1e-12   # times the forward
MAX_ITER = 200


@dataclass(frozen=True)
class VolQuote:
    """One implied-volatility quote, keyed by log-moneyness.

    log_moneyness is ln(strike / forward) and must agree with the stored
    strike; quotes usually come from CSV where log-moneyness is primary,
    so the factory below derives the strike.
    """

    forward: float
    strike: float
    expiry: float
    vol: float
    log_moneyness: float

    def __post_init__(self):
        if not (self.forward > 0.0 and self.strike > 0.0):
            raise DomainError("forward and strike must be positive")
        if not self.expiry > 0.0:
            raise DomainError(f"expiry must be positive, got {self.expiry}")
        if not self.vol >= 0.0:
            raise DomainError(f"vol must be nonnegative, got {self.vol}")
        lm = math.log(self.strike / self.forward)
        if abs(lm - self.log_moneyness) > 1e-12:
            raise DataError(
                f"log_moneyness {self.log_moneyness} inconsistent with "
                f"strike/forward (expected {lm})"
            )

    @classmethod
    def from_log_moneyness(cls, forward, log_moneyness, expiry, vol):
        if not forward > 0.0:
            raise DomainError(f"forward must be positive, got {forward}")
        strike = forward * math.exp(log_moneyness)
        return cls(forward, strike, expiry, vol, log_moneyness)


def _check_contract(forward, strike, expiry):
    if not forward > 0.0:
        raise DomainError(f"forward must be positive, got {forward}")
    if not strike > 0.0:
        raise DomainError(f"strike must be positive, got {strike}")
    if not expiry > 0.0:
        raise DomainError(f"expiry must be positive, got {expiry}")


def _check_kind(kind):
    if kind not in _KINDS:
        raise DomainError(f"kind must be 'call' or 'put', got {kind!r}")


def black_price(forward, strike, expiry, vol, kind="call"):
    """Undiscounted Black price of a vanilla on the forward."""
    _check_contract(forward, strike, expiry)
    _check_kind(kind)
    if not vol >= 0.0:
        raise DomainError(f"vol must be nonnegative, got {vol}")
    if vol == 0.0:
        intrinsic = forward - strike if kind == "call" else strike - forward
        return max(intrinsic, 0.0)
    total = vol * math.sqrt(expiry)
    d1 = math.log(forward / strike) / total + 0.5 * total
    d2 = d1 - total
    if kind == "call":
        return forward * ndtr(d1) - strike * ndtr(d2)
    return strike * ndtr(-d2) - forward * ndtr(-d1)


def _vega(forward, strike, expiry, vol):
    total = vol * math.sqrt(expiry)
    d1 = math.log(forward / strike) / total + 0.5 * total
    return forward * math.exp(-0.5 * d1 * d1) / math.sqrt(2.0 * math.pi) * math.sqrt(expiry)


def implied_vol(price, forward, strike, expiry, kind="call"):
    """Invert the Black formula: bracketing bisection sharpened by Newton.

    The price must lie strictly between intrinsic value and the upper
    no-arbitrage bound (the forward for calls, the strike for puts).
    In-the-money inputs are reduced to their out-of-the-money twin by
    parity, so the iteration always works on pure time value and wing
    quotes stay invertible where vega is tiny.
    """
    _check_contract(forward, strike, expiry)
    _check_kind(kind)
    intrinsic = max(forward - strike if kind == "call" else strike - forward, 0.0)
    upper = forward if kind == "call" else strike
    if not price > intrinsic:
        raise PriceBoundsError(
            f"price {price} at or below the intrinsic value {intrinsic}"
        )
    if not price < upper:
        raise PriceBoundsError(
            f"price {price} at or above the upper bound {upper} "
            f"({'forward' if kind == 'call' else 'strike'})"
        )
    if intrinsic > 0.0:
        price = price - intrinsic
        kind = "put" if kind == "call" else "call"

    # absolute cap from the contract scale, sharpened to a relative target
    # so wing prices (itself << forward) still resolve their vol
    tol = min(PRICE_TOL * forward, 1e-10 * price)
    lo, hi = 0.0, 1.0
    while black_price(forward, strike, expiry, hi, kind) < price:
        hi *= 2.0
        if hi > 1e6:  # unreachable for in-bounds prices; guards cycles
            raise NumericalError("implied vol bracket expansion failed")

    vol = 0.5 * (lo + hi)
    for _ in range(MAX_ITER):
        value = black_price(forward, strike, expiry, vol, kind)
        err = value - price
        if abs(err) <= tol:
            return vol
        if err > 0.0:
            hi = vol
        else:
            lo = vol
        # Newton in log-price: plain Newton crawls on the log-convex wings
        # where the price spans hundreds of orders of magnitude
        vega = _vega(forward, strike, expiry, vol)
        step = None
        if vega > 1e-300 and value > 0.0:
            step = vol - math.log(value / price) * value / vega
        if step is not None and lo < step < hi:
            vol = step
        else:
            vol = 0.5 * (lo + hi)
        if hi - lo < 1e-16 * max(1.0, hi):
            return vol
    raise NumericalError(
        f"implied vol iteration did not converge within {MAX_ITER} steps"
    )


def vol_band(price, std_error, forward, strike, expiry, kind="call"):
    """(lo, mid, hi) implied vols from inverting price -/+ one s.e.

    Inverting the price band keeps the vol band honest in the wings where
    vega dies; edges that leave the arbitrage interval clip to 0 below and
    inf above.
    """
    if not std_error >= 0.0:
        raise DomainError(f"std_error must be nonnegative, got {std_error}")
    mid = implied_vol(price, forward, strike, expiry, kind)
    intrinsic = max(forward - strike if kind == "call" else strike - forward, 0.0)
    upper = forward if kind == "call" else strike
    lo_price, hi_price = price - std_error, price + std_error
    lo = (implied_vol(lo_price, forward, strike, expiry, kind)
          if lo_price > intrinsic else 0.0)
    hi = (implied_vol(hi_price, forward, strike, expiry, kind)
          if hi_price < upper else math.inf)
    return lo, mid, hi
