"""Special functions attached to the power-law kernel.

The kernel in use everywhere in this package is

    K(t) = lam * t**(alpha-1) / Gamma(alpha),        1/2 < alpha <= 1,

whose resolvent (of the second kind) is the Mittag-Leffler probability
density

    f(t) = lam * t**(alpha-1) * E_{alpha,alpha}(-lam * t**alpha),

with E_{a,b}(z) = sum_n z**n / Gamma(a*n + b).  The density integrates to
one on (0, inf), its CDF is 1 - E_{alpha,1}(-lam * t**alpha), and the pair
satisfies the resolvent identity

    f(t) + (K * f)(t) = K(t)        ('*' = convolution on [0, t]),

which `resolvent_residual` checks by quadrature.  These functions are the
ground truth the simulation weights and forward-curve formulas are tested
against.

Evaluation strategy for E_{a,b}(z) on the real line: plain float series
for z >= -2 (no damaging cancellation there), the same series in extended
precision for moderately negative z where float cancellation would eat the
result, and the standard asymptotic expansion in 1/z on the far negative
axis.  Full complex-plane algorithms are deliberately out of scope.
"""

from dataclasses import dataclass
import math

import mpmath
import numpy as np
from scipy.special import betainc, gammaln, rgamma
from scipy.special import gamma as _gamma

from .errors import DomainError, RangeError

# Series / expansion switch points (z-axis, negative side).
_FLOAT_SERIES_MIN = -2.0
_MP_SERIES_MIN = -12.0
_MP_SERIES_MIN_NEAR_ONE = -40.0
_MAX_TERMS = 4000
_MAX_ASYM_TERMS = 80


@dataclass(frozen=True)
class KernelSpec:
    """Power-law kernel parameters: exponent ``alpha`` and scale ``lam``.

    alpha = 1 is admitted (the kernel degenerates to the constant lam and
    the density to the exponential lam*exp(-lam*t)), which the classical
    limit tests rely on.
    """

    alpha: float
    lam: float

    def __post_init__(self):
        if not 0.5 < self.alpha <= 1.0:
            raise DomainError(f"kernel exponent alpha must be in (1/2, 1], got {self.alpha}")
        if not self.lam > 0.0:
            raise DomainError(f"kernel scale lam must be positive, got {self.lam}")


def _ml_series_float(alpha: float, beta: float, z: float) -> float:
    """Power series in double precision.  Safe for z >= -2, any alpha."""
    if z == 0.0:
        return float(rgamma(beta))
    log_az = math.log(abs(z))
    total = 0.0
    prev_mag = math.inf
    past_peak = False
    for n in range(_MAX_TERMS):
        log_mag = n * log_az - gammaln(alpha * n + beta)
        if log_mag > 709.0:  # exp() would overflow
            raise RangeError(
                f"mittag_leffler({alpha}, {beta}, {z}): series term overflows double precision"
            )
        mag = math.exp(log_mag)
        total += mag if (z > 0.0 or n % 2 == 0) else -mag
        if mag < prev_mag:
            past_peak = True
        if past_peak and mag < 1e-17 * max(abs(total), 1.0):
            return total
        prev_mag = mag
    raise RangeError(f"mittag_leffler({alpha}, {beta}, {z}): series did not converge")


def _ml_series_mp(alpha: float, beta: float, z: float) -> float:
    """Power series in extended precision, for the cancellation regime.

    The working precision is sized from the largest term of the series,
    located where digamma(alpha*n + beta) = log|z| / alpha.
    """
    w = math.exp(math.log(abs(z)) / alpha) + 0.5  # approx inverse digamma
    n_peak = max(1.0, (w - beta) / alpha)
    log_peak = n_peak * math.log(abs(z)) - gammaln(alpha * n_peak + beta)
    dps = 25 + max(0, int(0.4343 * log_peak))
    max_terms = max(_MAX_TERMS, int(8 * n_peak))
    with mpmath.workdps(dps):
        # The gamma argument must be built in working precision: forming
        # alpha*n in a double loses ~1e-13 relative accuracy, which the
        # huge cancelling terms amplify into garbage.
        aa = mpmath.mpf(alpha)
        bb = mpmath.mpf(beta)
        zz = mpmath.mpf(z)
        total = mpmath.mpf(0)
        tol = mpmath.mpf(10) ** (-(dps - 3))
        prev_mag = mpmath.inf
        past_peak = False
        for n in range(max_terms):
            term = zz**n / mpmath.gamma(aa * n + bb)
            total += term
            mag = abs(term)
            if mag < prev_mag:
                past_peak = True
            if past_peak and mag < tol * max(abs(total), mpmath.mpf(1)):
                return float(total)
            prev_mag = mag
    raise RangeError(f"mittag_leffler({alpha}, {beta}, {z}): series did not converge")


def _ml_asymptotic_neg(alpha: float, beta: float, z: float) -> float:
    """Expansion E_{a,b}(-x) ~ sum_{k>=1} (-1)**(k+1) x**-k / Gamma(b - a*k),
    truncated at the globally smallest term.  Valid for 0 < alpha < 1, x large.

    Term magnitudes are not monotone: whenever b - a*k sits near a Gamma
    pole the coefficient collapses, so the optimal truncation point must be
    found on the whole envelope rather than at the first uptick.
    """
    x = -z
    ks = np.arange(1, _MAX_ASYM_TERMS, dtype=float)
    coeffs = rgamma(beta - alpha * ks)  # zero at the Gamma poles
    terms = (-1.0) ** (ks + 1.0) * x**-ks * coeffs
    mags = np.abs(terms)
    live = mags > 0.0
    if not np.any(live):
        return 0.0
    cut = int(np.argmin(np.where(live, mags, np.inf)))
    return float(np.sum(terms[: cut + 1]))


def mittag_leffler(alpha: float, beta: float, z: float) -> float:
    """Two-parameter Mittag-Leffler function E_{alpha,beta}(z), real z.

    Supported range: the whole negative axis (for alpha <= 1), and positive
    z as long as the series value fits in double precision.  Arguments this
    artifact actually meets stay within |z| <= 50 on the negative side and
    small positive z, but nothing here depends on that cap.
    """
    if not (alpha > 0.0 and beta > 0.0):
        raise DomainError(f"mittag_leffler requires alpha > 0 and beta > 0, got ({alpha}, {beta})")
    z = float(z)
    if not math.isfinite(z):
        raise DomainError(f"mittag_leffler argument must be finite, got {z}")
    if z >= _FLOAT_SERIES_MIN:
        return _ml_series_float(alpha, beta, z)
    # For alpha close to 1 the negative-axis expansion omits an
    # exponentially small oscillatory piece ~ exp(x**(1/alpha) cos(pi/alpha)),
    # which decays too slowly to ignore at moderate x; push the arbitrary-
    # precision series further out before trusting the expansion.
    switch = _MP_SERIES_MIN if alpha <= 0.74 else _MP_SERIES_MIN_NEAR_ONE
    if z >= switch or alpha >= 1.0:
        if alpha > 1.0 and z < _MP_SERIES_MIN:
            raise RangeError(
                f"mittag_leffler: deep negative arguments unsupported for alpha > 1 (alpha={alpha})"
            )
        return _ml_series_mp(alpha, beta, z)
    return _ml_asymptotic_neg(alpha, beta, z)


def _apply(func, t):
    """Evaluate a scalar function over a scalar or array argument."""
    arr = np.asarray(t, dtype=float)
    out = np.empty(arr.shape)
    flat_in = arr.ravel()
    flat_out = out.ravel()
    for i in range(flat_in.size):
        flat_out[i] = func(flat_in[i])
    if np.isscalar(t) or arr.ndim == 0:
        return float(out.reshape(-1)[0])
    return out


def fractional_kernel(spec: KernelSpec, t):
    """K(t) = lam * t**(alpha-1) / Gamma(alpha) for t > 0."""
    arr = np.asarray(t, dtype=float)
    if np.any(arr <= 0.0):
        raise DomainError("fractional_kernel requires t > 0")
    out = spec.lam * arr ** (spec.alpha - 1.0) / _gamma(spec.alpha)
    return float(out) if arr.ndim == 0 else out


def ml_density(spec: KernelSpec, t):
    """Mittag-Leffler density f(t) = lam * t**(alpha-1) * E_{a,a}(-lam*t**a).

    Behaves like the kernel K(t) as t -> 0+ and decays like
    alpha / (lam * Gamma(1-alpha)) * t**(-alpha-1) as t -> inf (for
    alpha < 1; alpha = 1 gives the exponential density).
    """
    arr = np.asarray(t, dtype=float)
    if np.any(arr <= 0.0):
        raise DomainError("ml_density requires t > 0")
    a, lam = spec.alpha, spec.lam

    def point(x):
        return lam * x ** (a - 1.0) * mittag_leffler(a, a, -lam * x**a)

    return _apply(point, t)


def ml_cdf(spec: KernelSpec, t):
    """CDF of the Mittag-Leffler density: 1 - E_{alpha,1}(-lam * t**alpha)."""
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0.0):
        raise DomainError("ml_cdf requires t >= 0")
    a, lam = spec.alpha, spec.lam

    def point(x):
        if x == 0.0:
            return 0.0
        return 1.0 - mittag_leffler(a, 1.0, -lam * x**a)

    return _apply(point, t)


def resolvent_residual(spec: KernelSpec, grid) -> float:
    """Max absolute residual of f + K*f - K over the given grid.

    The grid supplies both the evaluation points and the quadrature cells:
    cell j is (grid[j-1], grid[j]] with a leading cell (0, grid[0]].  Cells
    where the integrand is smooth use the exact kernel cell integral times
    the density at the cell midpoint; the leading cell (where the density
    itself is singular) is integrated against the local t**(alpha-1) shape
    with its mass pinned to the exact CDF increment, which keeps the
    residual small even very close to the origin.  A geometrically spaced grid
    resolves both endpoints of the convolution; refining it shrinks the
    residual.
    """
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or g.size < 1:
        raise DomainError("resolvent_residual needs a 1-D grid of at least one point")
    if g[0] <= 0.0 or np.any(np.diff(g) <= 0.0):
        raise DomainError("resolvent_residual grid must be positive and strictly increasing")

    a, lam = spec.alpha, spec.lam
    ga = _gamma(a)
    # Density at cell midpoints (cells 1..n-1) and at the grid itself.
    mids = 0.5 * (g[1:] + g[:-1])
    f_mid = ml_density(spec, mids) if mids.size else np.empty(0)
    f_grid = ml_density(spec, g)
    k_grid = fractional_kernel(spec, g)
    # Leading cell: mass from the exact CDF, local shape C * s**(alpha-1).
    mass0 = ml_cdf(spec, g[0])
    c0 = mass0 * a / g[0] ** a
    beta_aa = _gamma(a) ** 2 / _gamma(2.0 * a)

    worst = 0.0
    edges = np.concatenate(([0.0], g))
    for k in range(g.size):
        t = g[k]
        # cells 1..k: exact integral of K(t - s) over each cell, f at midpoint
        lo = edges[1 : k + 1]
        hi = edges[2 : k + 2]
        cell_int = ((t - lo) ** a - (t - hi) ** a) * (lam / (ga * a))
        conv = float(np.dot(cell_int, f_mid[:k]))
        # leading cell, exact in the t**(alpha-1) shape
        frac = betainc(a, a, min(1.0, g[0] / t))
        conv += c0 * (lam / ga) * beta_aa * t ** (2.0 * a - 1.0) * frac
        worst = max(worst, abs(f_grid[k] + conv - k_grid[k]))
    return worst
