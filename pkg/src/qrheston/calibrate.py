"""Joint SPX/VIX smile calibration.

The objective is the equally weighted sum of the two per-class mean squared
vol errors.  Quotes carry log-moneyness, not absolute strikes: each model
evaluation prices at strikes keyed off its own forward (S0 = 1 for SPX, the
model's VIX future for VIX options), so a smile set fully determines the
objective.  All Monte Carlo runs inside one calibration share a fixed seed
(common random numbers), which makes F a deterministic function of the
parameters and lets the grid and simplex stages compare candidates at
moderate path counts.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from dataclasses import replace as dc_replace

import numpy as np
from scipy.optimize import minimize

from .errors import ConfigError, DataError, DomainError, InfeasibleGridError, PriceBoundsError
from .impliedvol import implied_vol
from .model import ForwardCurve, ModelParams
from .pricing import (VixConvention, _future_from_integrals,
                      _inner_window_integrals, _option_from_integrals,
                      price_spx_option)
from .simulate import SimConfig, simulate
from . import rng as _rng

log = logging.getLogger(__name__)

_CLASSES = ("SPX", "VIX")

CSV_HEADER = ("class", "expiry_years", "log_moneyness", "bid_vol", "ask_vol", "mid_vol")

# reflection bounds for the simplex stage; the same box rules the grid
# (alpha stays strictly inside (1/2, 1): conditional restarts need alpha < 1)
PARAM_BOUNDS = {
    "alpha": (0.5 + 1e-6, 1.0 - 1e-6),
    "lam": (1e-4, 50.0),
    "a": (0.0, 10.0),
    "b": (-5.0, 5.0),
    "c": (1e-8, 1.0),
    "z0": (-5.0, 5.0),
}
_PARAM_ORDER = ("alpha", "lam", "a", "b", "c", "z0")


@dataclass(frozen=True)
class MCConfig:
    """Sampling sizes for one calibration (a fixed seed pins the CRN)."""

    n_outer: int = 30000
    n_inner: int = 300
    n_steps: int = 500
    seed: int = 0

    def __post_init__(self):
        for name in ("n_outer", "n_inner", "n_steps"):
            v = getattr(self, name)
            if not (isinstance(v, (int, np.integer)) and v >= 1):
                raise DomainError(f"{name} must be a positive integer, got {v}")
        _rng._validate_seed(self.seed)


@dataclass(frozen=True)
class SmileQuote:
    instrument: str
    expiry: float
    log_moneyness: float
    bid_vol: float
    ask_vol: float
    mid_vol: float

    def __post_init__(self):
        if self.instrument not in _CLASSES:
            raise DataError(f"instrument must be SPX or VIX, got {self.instrument!r}")
        for name in ("expiry", "log_moneyness", "bid_vol", "ask_vol", "mid_vol"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not self.expiry > 0.0:
            raise DataError(f"quote expiry must be positive, got {self.expiry}")
        if not (self.bid_vol <= self.mid_vol <= self.ask_vol):
            raise DataError(
                f"vols must satisfy bid <= mid <= ask, got "
                f"({self.bid_vol}, {self.mid_vol}, {self.ask_vol})"
            )


@dataclass(frozen=True)
class SmileSet:
    quotes: tuple
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "quotes", tuple(self.quotes))
        if not self.quotes:
            raise DataError("smile set holds no quotes")

    def by_class(self, instrument):
        return tuple(q for q in self.quotes if q.instrument == instrument)

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            if self.label:
                f.write(f"# label: {self.label}\n")
            w = csv.writer(f)
            w.writerow(CSV_HEADER)
            for q in self.quotes:
                w.writerow([q.instrument, repr(q.expiry), repr(q.log_moneyness),
                            repr(q.bid_vol), repr(q.ask_vol), repr(q.mid_vol)])

    @classmethod
    def from_csv(cls, path):
        label = ""
        body = []
        with open(path, newline="") as f:
            for ln in f:
                if ln.startswith("#"):
                    if ln[1:].strip().startswith("label:"):
                        label = ln.split("label:", 1)[1].strip()
                    continue
                body.append(ln)
        reader = csv.reader(body)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise DataError(f"expected header {','.join(CSV_HEADER)}, got {header}")
        rows = []
        for rec in reader:
            if not rec:
                continue
            if len(rec) != 6:
                raise DataError(f"malformed quote row: {rec}")
            try:
                rows.append(SmileQuote(rec[0].strip(), *map(float, rec[1:])))
            except ValueError as exc:
                raise DataError(f"non-numeric quote field in {rec}") from exc
        return cls(tuple(rows), label=label)


@dataclass(frozen=True)
class GridSpec:
    """Coordinate-wise grid: per-parameter half-widths, points per axis,
    rounds with shrinking widths."""

    half_widths: dict
    n_points: int = 5
    rounds: int = 2
    shrink: float = 0.5

    def __post_init__(self):
        unknown = set(self.half_widths) - set(_PARAM_ORDER)
        if unknown:
            raise ConfigError(f"unknown parameters in grid spec: {sorted(unknown)}")
        if not all(w >= 0.0 for w in self.half_widths.values()):
            raise ConfigError("grid half-widths must be nonnegative")
        if not (isinstance(self.n_points, int) and self.n_points >= 1):
            raise ConfigError(f"n_points must be a positive integer, got {self.n_points}")
        if not (isinstance(self.rounds, int) and self.rounds >= 1):
            raise ConfigError(f"rounds must be a positive integer, got {self.rounds}")
        if not 0.0 < self.shrink <= 1.0:
            raise ConfigError(f"shrink must be in (0, 1], got {self.shrink}")


@dataclass(frozen=True)
class CalibrationResult:
    params: ModelParams
    objective: float
    residuals: tuple         # model vol - mid vol per quote; nan if excluded
    trace: tuple             # (ModelParams, F) in evaluation order
    mc_config: MCConfig
    n_excluded: int = 0
    valid: bool = True


def _otm_kind(log_moneyness):
    return "put" if log_moneyness < 0.0 else "call"


def _model_vols(params, data: SmileSet, mc: MCConfig,
                convention: VixConvention = VixConvention()):
    """Model implied vols per distinct quote; None marks an exclusion.

    One outer simulation per distinct expiry (its horizon IS the expiry, so
    the expiry always lands on the grid), shared between the SPX and VIX
    legs; the nested inner pass runs once per VIX expiry and feeds both the
    future and every strike on that smile.
    """
    spx = data.by_class("SPX")
    vix = data.by_class("VIX")
    t_max = max(q.expiry for q in data.quotes)
    curve = ForwardCurve.from_parametric(
        params, np.geomspace(1e-4, (t_max + convention.delta) * 1.02, 800)
    )
    ensembles = {}

    def outer(expiry):
        if expiry not in ensembles:
            cfg = SimConfig(mc.n_steps, mc.n_outer, expiry, mc.seed)
            ensembles[expiry] = simulate(params, curve, cfg)
        return ensembles[expiry]

    vols = {}
    for expiry in sorted({q.expiry for q in spx}):
        ens = outer(expiry)
        for q in (p for p in spx if p.expiry == expiry):
            strike = math.exp(q.log_moneyness)
            kind = _otm_kind(q.log_moneyness)
            est = price_spx_option(ens, strike, expiry, kind)
            try:
                vols[q] = implied_vol(est.value, 1.0, strike, expiry, kind)
            except PriceBoundsError as exc:
                log.debug("SPX quote %s excluded: %s", q, exc)
                vols[q] = None

    inner_cfg = SimConfig(mc.n_steps, mc.n_inner, convention.delta, mc.seed)
    for expiry in sorted({q.expiry for q in vix}):
        integrals = _inner_window_integrals(outer(expiry), expiry, inner_cfg, convention)
        future = _future_from_integrals(integrals, convention, False)
        for q in (p for p in vix if p.expiry == expiry):
            strike = future.value * math.exp(q.log_moneyness)
            kind = _otm_kind(q.log_moneyness)
            est = _option_from_integrals(integrals, strike, kind, convention)
            try:
                vols[q] = implied_vol(est.value, future.value, strike, expiry, kind)
            except PriceBoundsError as exc:
                log.debug("VIX quote %s excluded: %s", q, exc)
                vols[q] = None
    return vols


def _objective_detail(params, data, mc):
    vols = _model_vols(params, data, mc)
    residuals = tuple(
        math.nan if vols[q] is None else vols[q] - q.mid_vol for q in data.quotes
    )
    n_excluded = sum(1 for r in residuals if math.isnan(r))
    if n_excluded:
        log.info("%d of %d quotes excluded at %s", n_excluded, len(data.quotes), params)
    value = 0.0
    for klass in _CLASSES:
        errs = [r for q, r in zip(data.quotes, residuals)
                if q.instrument == klass and not math.isnan(r)]
        if errs:
            value += float(np.mean(np.square(errs)))
    return value, residuals, n_excluded


def objective(params: ModelParams, data: SmileSet, mc: MCConfig) -> float:
    """F: sum over instrument classes of the mean squared vol error."""
    value, _, _ = _objective_detail(params, data, mc)
    return value


def _key(params):
    return tuple(getattr(params, n) for n in _PARAM_ORDER)


def _check_feasible(name, values):
    lo, hi = PARAM_BOUNDS[name]
    bad = [float(v) for v in values if not lo <= v <= hi]
    if bad:
        raise InfeasibleGridError(f"grid for {name} leaves [{lo}, {hi}]: {bad}")


def _result(trace, evaluations, mc, data):
    best_params, best_f, residuals, n_excluded = min(
        evaluations.values(), key=lambda e: e[1]
    )
    frac = n_excluded / len(data.quotes)
    return CalibrationResult(
        params=best_params,
        objective=best_f,
        residuals=residuals,
        trace=tuple(trace),
        mc_config=mc,
        n_excluded=n_excluded,
        valid=frac <= 0.05,
    )


def grid_search(nu0: ModelParams, data: SmileSet, grid_spec: GridSpec,
                mc: MCConfig) -> CalibrationResult:
    """Coordinate-wise descent on per-parameter grids around nu0.

    Each round sweeps the parameters in a fixed order; each sweep evaluates
    n_points values centered on the incumbent and keeps the best.  Widths
    shrink between rounds.  Previously evaluated points are reused, so the
    trace holds each distinct candidate exactly once.
    """
    for name in _PARAM_ORDER:
        _check_feasible(name, [getattr(nu0, name)])
        hw = grid_spec.half_widths.get(name, 0.0)
        if hw > 0.0:
            center = getattr(nu0, name)
            _check_feasible(name, np.linspace(center - hw, center + hw,
                                              grid_spec.n_points))

    evaluations = {}
    trace = []

    def evaluate(p):
        k = _key(p)
        if k not in evaluations:
            f, residuals, n_excl = _objective_detail(p, data, mc)
            evaluations[k] = (p, f, residuals, n_excl)
            trace.append((p, f))
        return evaluations[k][1]

    best = nu0
    best_f = evaluate(nu0)
    for rnd in range(grid_spec.rounds):
        scale = grid_spec.shrink**rnd
        for name in _PARAM_ORDER:
            hw = grid_spec.half_widths.get(name, 0.0) * scale
            if hw == 0.0:
                continue
            center = getattr(best, name)
            points = np.linspace(center - hw, center + hw, grid_spec.n_points)
            _check_feasible(name, points)
            for v in points:
                candidate = best.replace(**{name: float(v)})
                f = evaluate(candidate)
                if f < best_f:
                    best, best_f = candidate, f
    return _result(trace, evaluations, mc, data)


def _reflect(x, lo, hi):
    if lo <= x <= hi:
        return x
    span = hi - lo
    y = math.fmod(x - lo, 2.0 * span)
    if y < 0.0:
        y += 2.0 * span
    return lo + (y if y <= span else 2.0 * span - y)


def refine(start: CalibrationResult, data: SmileSet, mc: MCConfig,
           max_evals: int = 120) -> CalibrationResult:
    """Nelder-Mead polish from a grid result, under the same seed.

    The simplex wanders in an unbounded copy of parameter space; candidates
    fold back into the feasible box by reflection at the bounds before
    pricing, so the box never clips a search direction.  The returned
    objective never exceeds the starting one.
    """
    evaluations = {
        _key(start.params): (start.params, start.objective,
                             start.residuals, start.n_excluded)
    }
    trace = list(start.trace)

    def fold(x):
        vals = {n: _reflect(float(v), *PARAM_BOUNDS[n])
                for n, v in zip(_PARAM_ORDER, x)}
        return start.params.replace(**vals)

    def evaluate(p):
        k = _key(p)
        if k not in evaluations:
            f, residuals, n_excl = _objective_detail(p, data, mc)
            evaluations[k] = (p, f, residuals, n_excl)
            trace.append((p, f))
        return evaluations[k][1]

    x0 = np.array([getattr(start.params, n) for n in _PARAM_ORDER])
    minimize(
        lambda x: evaluate(fold(x)),
        x0,
        method="Nelder-Mead",
        options={"maxfev": max_evals, "xatol": 1e-4, "fatol": 1e-10},
    )
    return _result(trace, evaluations, mc, data)


@dataclass(frozen=True)
class SmileLayout:
    """Instrument layout for synthetic smiles: (expiry, log-moneyness tuple)
    pairs per class."""

    spx: tuple = ()
    vix: tuple = ()

    def __post_init__(self):
        for klass in (self.spx, self.vix):
            for expiry, lms in klass:
                if not expiry > 0.0:
                    raise DomainError(f"layout expiry must be positive, got {expiry}")
                if not len(lms):
                    raise DomainError("layout needs at least one log-moneyness per expiry")


def synth_smiles(params: ModelParams, layout: SmileLayout, mc: MCConfig,
                 spread: float = 0.005, label: str = "synthetic") -> SmileSet:
    """SmileSet priced from the model itself; mids are model vols, bid and
    ask sit at mid -/+ spread.

    Degenerate instruments - model price pinned at a no-arbitrage bound, as
    happens for VIX options when a = 0 makes the variance constant - carry
    no vol information; they are emitted with vol 0 and zero spread so
    downstream code can recognize them.
    """
    probe = []
    for klass, entries in (("SPX", layout.spx), ("VIX", layout.vix)):
        for expiry, lms in entries:
            for lm in lms:
                probe.append(SmileQuote(klass, float(expiry), float(lm),
                                        -math.inf, math.inf, 0.0))
    vols = _model_vols(params, SmileSet(tuple(probe), label=label), mc)
    quotes = []
    for q in probe:
        vol = vols[q]
        if vol is None:
            quotes.append(dc_replace(q, bid_vol=0.0, ask_vol=0.0, mid_vol=0.0))
        else:
            quotes.append(dc_replace(q, bid_vol=vol - spread,
                                     ask_vol=vol + spread, mid_vol=vol))
    return SmileSet(tuple(quotes), label=label)
