"""Monte Carlo pricing: SPX vanillas on the outer ensemble, VIX futures and
VIX vanillas by nested simulation (restarted inner paths per outer path).

Rates and dividends are zero throughout, so the SPX forward is S0 and SPX
prices are undiscounted payoff means.  VIX instruments are quoted in
volatility points (the index is scaled by 100).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from dataclasses import replace as dc_replace

import numpy as np

from . import rng
from .errors import DomainError
from .simulate import (
    PathEnsemble,
    SimConfig,
    _aligned_history_drift,
    _grids_align,
    _restart_theta_values,
    _theta_drift,
    _volterra_paths,
    grid_index,
    kernel_cell_masses,
)

_KINDS = ("call", "put")


@dataclass(frozen=True)
class PriceEstimate:
    """A Monte Carlo price with its sampling uncertainty.

    ``split_value`` is populated by the nested VIX estimators: the same
    statistic recomputed from half-sized inner samples, whose drift against
    ``value`` exposes the inner convexity bias (the plain nested estimator
    is biased; halving the inner sample roughly doubles that bias).
    """

    value: float
    std_error: float
    n_outer: int
    n_inner: int = 0
    split_value: float | None = None

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise DomainError(f"price must be finite, got {self.value}")
        if not self.std_error >= 0.0:
            raise DomainError(f"std_error must be >= 0, got {self.std_error}")


@dataclass(frozen=True)
class VixConvention:
    delta: float = 30.0 / 365.0
    scale: float = 100.0

    def __post_init__(self):
        if not self.delta > 0.0:
            raise DomainError(f"VIX window must be positive, got {self.delta}")
        if not self.scale > 0.0:
            raise DomainError(f"VIX scale must be positive, got {self.scale}")


def _check_kind(kind):
    if kind not in _KINDS:
        raise DomainError(f"kind must be 'call' or 'put', got {kind!r}")


def _payoff(x, strike, kind):
    if kind == "call":
        return np.maximum(x - strike, 0.0)
    return np.maximum(strike - x, 0.0)


def vix_squared_at(restarted: PathEnsemble, convention: VixConvention = VixConvention()) -> float:
    """VIX^2 estimate from an inner ensemble spanning exactly the VIX window.

    VIX_t^2 = scale^2 * (1/delta) * E[ int_t^{t+delta} V ds | F_t ], with the
    inner-path average standing in for the conditional expectation.
    """
    horizon = restarted.horizon
    if abs(horizon - convention.delta) > 1e-9 * convention.delta:
        raise DomainError(
            f"inner ensemble spans {horizon}, expected the VIX window "
            f"{convention.delta}"
        )
    dt = horizon / (restarted.grid.size - 1)
    integrals = np.trapezoid(restarted.v, dx=dt, axis=1)
    return convention.scale**2 * float(integrals.mean()) / convention.delta


def price_spx_option(ensemble: PathEnsemble, strike, expiry, kind="call", *,
                     control_variate: bool = False) -> PriceEstimate:
    """Vanilla SPX price (per unit of S0) from the outer ensemble.

    The default is the plain payoff mean, under which put-call parity holds
    to machine precision on a shared ensemble.  ``control_variate`` sweeps
    S_T (known mean S0) out of the payoff, cutting variance on in-the-money
    contracts at the cost of exact parity.
    """
    _check_kind(kind)
    if not strike > 0.0:
        raise DomainError(f"strike must be positive, got {strike}")
    k = grid_index(ensemble.grid, expiry)
    s_t = np.exp(ensemble.log_spot[:, k])
    payoff = _payoff(s_t, strike, kind)
    if control_variate:
        beta = np.cov(payoff, s_t, ddof=1)[0, 1] / np.var(s_t, ddof=1)
        payoff = payoff - beta * (s_t - 1.0)
    n = payoff.size
    se = float(payoff.std(ddof=1)) / math.sqrt(n) if n > 1 else 0.0
    return PriceEstimate(float(payoff.mean()), se, n_outer=n)


def _inner_window_integrals(ensemble: PathEnsemble, expiry, inner_config: SimConfig,
                            convention: VixConvention):
    """Per-outer-path inner-window variance integrals, (n_outer, n_inner).

    Row p holds the same estimate as restarting outer path p with this
    inner_config and integrating V over the window: identical RNG draws
    and drift construction, batched across outer paths (so values agree
    with the one-path restart up to float associativity in the batched
    matrix products, and exactly when the ensemble has a single path).
    """
    if abs(inner_config.horizon - convention.delta) > 1e-9 * convention.delta:
        raise DomainError(
            f"inner horizon {inner_config.horizon} must equal the VIX window "
            f"{convention.delta}"
        )
    params = ensemble.params
    trunc = ensemble.truncated(expiry)
    if trunc.horizon == 0.0 and trunc.n_paths > 1:
        # all outer paths coincide at t = 0: one conditional suffices
        trunc = dc_replace(
            trunc,
            log_spot=trunc.log_spot[:1],
            z=trunc.z[:1],
            v=trunc.v[:1],
            increments=trunc.increments[:1],
        )
    n = inner_config.grid_size
    dt = inner_config.dt
    if _grids_align(trunc, inner_config):
        th = _aligned_history_drift(trunc, slice(None), params, inner_config)
    else:
        out_grid = np.arange(1, n + 1) * dt
        values = _restart_theta_values(trunc, slice(None), params, out_grid)
        q = params.alpha if trunc.horizon > 0.0 else trunc.theta.extrapolation_exponent
        mass = kernel_cell_masses(params, dt, n)
        th = _theta_drift(values, q, params, dt, n, mass)

    n_outer = trunc.n_paths
    n_inner = inner_config.n_paths
    integrals = np.empty((n_outer, n_inner))

    def worker(start, stop):
        for p in range(start, stop):
            normals = rng.normal_block(
                inner_config.seed, p * n_inner, n_inner, n, inner=True
            )
            _, _, vv, _ = _volterra_paths(
                params, dt, n, float(trunc.z[p, -1]), 0.0, th[p], normals,
                params.eta,
            )
            integrals[p] = np.trapezoid(vv, dx=dt, axis=1)

    rng.map_chunks(n_outer, worker)
    return integrals


def _vix_points(integrals, convention):
    """Map window integrals of V to VIX points: scale * sqrt(mean / delta)."""
    return convention.scale * np.sqrt(integrals / convention.delta)


def _split_halves(integrals):
    h = integrals.shape[1] // 2
    if h == 0:
        return None, None
    return integrals[:, :h].mean(axis=1), integrals[:, h:].mean(axis=1)


def _future_from_integrals(integrals, convention, at_origin):
    n_outer, n_inner = integrals.shape
    half1, half2 = _split_halves(integrals)
    if at_origin:
        w = integrals[0]
        m = w.mean()
        se_m = w.std(ddof=1) / math.sqrt(n_inner) if n_inner > 1 else 0.0
        value = convention.scale * math.sqrt(m / convention.delta)
        se = convention.scale * se_m / (2.0 * math.sqrt(m * convention.delta))
    else:
        per_path = _vix_points(integrals.mean(axis=1), convention)
        value = float(per_path.mean())
        se = float(per_path.std(ddof=1)) / math.sqrt(n_outer) if n_outer > 1 else 0.0
    split = None
    if half1 is not None:
        split = 0.5 * float(
            _vix_points(half1, convention).mean()
            + _vix_points(half2, convention).mean()
        )
    return PriceEstimate(value, se, n_outer=n_outer, n_inner=n_inner,
                         split_value=split)


def _option_from_integrals(integrals, strike, kind, convention):
    _check_kind(kind)
    if not strike > 0.0:
        raise DomainError(f"strike must be positive, got {strike}")
    n_outer, n_inner = integrals.shape
    payoff = _payoff(_vix_points(integrals.mean(axis=1), convention), strike, kind)
    half1, half2 = _split_halves(integrals)
    split = None
    if half1 is not None:
        split = 0.5 * float(
            _payoff(_vix_points(half1, convention), strike, kind).mean()
            + _payoff(_vix_points(half2, convention), strike, kind).mean()
        )
    se = float(payoff.std(ddof=1)) / math.sqrt(n_outer) if n_outer > 1 else 0.0
    return PriceEstimate(float(payoff.mean()), se, n_outer=n_outer,
                         n_inner=n_inner, split_value=split)


def vix_future(ensemble: PathEnsemble, expiry, inner_config: SimConfig,
               convention: VixConvention = VixConvention()) -> PriceEstimate:
    """Nested VIX future: outer average of per-path sqrt(VIX^2 estimates).

    sqrt is concave, so finite inner samples bias each per-path estimate
    (and the future) low; ``split_value`` re-averages with the inner sample
    split in halves, roughly doubling the bias, to make it observable.
    At expiry 0 the future is F0-measurable and the only uncertainty is the
    inner sampling error of the single conditional expectation.
    """
    integrals = _inner_window_integrals(ensemble, expiry, inner_config, convention)
    return _future_from_integrals(integrals, convention, expiry == 0.0)


def price_vix_option(ensemble: PathEnsemble, strike, expiry, kind,
                     inner_config: SimConfig,
                     convention: VixConvention = VixConvention()) -> PriceEstimate:
    """Vanilla on the nested per-path VIX estimates, in VIX points.

    Payoffs are evaluated on each outer path's VIX estimate; the inner
    convexity bias propagates through the payoff and is surfaced the same
    way as for the future (``split_value``).
    """
    _check_kind(kind)
    if not strike > 0.0:
        raise DomainError(f"strike must be positive, got {strike}")
    integrals = _inner_window_integrals(ensemble, expiry, inner_config, convention)
    return _option_from_integrals(integrals, strike, kind, convention)


def vix_smile(ensemble: PathEnsemble, strikes, expiry, inner_config: SimConfig,
              convention: VixConvention = VixConvention(), kind="call"):
    """(future, option estimates) for many strikes off one nested pass.

    Equivalent to vix_future plus price_vix_option per strike, but the
    inner simulation - the expensive part - runs once.
    """
    integrals = _inner_window_integrals(ensemble, expiry, inner_config, convention)
    future = _future_from_integrals(integrals, convention, expiry == 0.0)
    options = [
        _option_from_integrals(integrals, k, kind, convention) for k in strikes
    ]
    return future, options
