"""Model parameters, the quadratic variance map, and forward curves.

The variance process is driven by a mean-reverting Volterra factor Z with
kernel K(t) = lam * t**(alpha-1) / Gamma(alpha) and instantaneous variance

    V_t = a * (Z_t - b)**2 + c ,

so V is bounded below by c and reacts quadratically (and, through b > 0,
asymmetrically) to the level of Z.  The initial forward curve theta0 can be
the one-parameter family

    theta0(t) = Z0 * t**(-alpha) / (lam * Gamma(1 - alpha)) ,

whose kernel convolution is identically Z0 -- this is how the initial level
of Z enters the otherwise initial-condition-free Volterra equation.  After
conditioning at time t0 > 0, the same dynamics hold with theta0 replaced by
theta_t0 = theta0(t0 + .) + psi, where psi is the exact deconvolution of the
history term h(u) = int_0^t0 K(t0 + u - s) [(theta0(s) - Z_s) ds
+ eta sqrt(V_s) dW_s].  Since convolution by K is lam times the fractional
integral of order alpha, psi = D^alpha h / lam, which reduces to

    psi(u) = sin(pi alpha)/pi * u**-alpha
             * int_0^t0 (t0 - v)**alpha / (u + t0 - v)
                        [ (theta0(v) - Z_v) dv + eta sqrt(V_v) dW_v ] .

Note psi needs the Brownian history, not only Z (which is why simulated
ensembles retain their increments), and that psi(u) ~ Z_t0 * u**-alpha
/ (lam * Gamma(1 - alpha)) as u -> 0: the restarted curve carries the
current level of Z the same way theta0 carries Z0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import hyp2f1

from .errors import ConfigError, DomainError, UnsupportedParameterError

_PARAM_KEYS = ("alpha", "lambda", "a", "b", "c", "z0")


@dataclass(frozen=True)
class ModelParams:
    """Parameter vector nu = (alpha, lambda, a, b, c, z0).

    ``lam`` stands in for the reserved word ``lambda``; config files use
    the key ``lambda``.  ``eta`` is pinned to 1: the family
    (Z, eta, a, b, Z0) -> (k Z, k eta, a/k^2, k b, k Z0) leaves V unchanged,
    so eta is pure redundancy and fixing it is the identifiability
    normalization.
    """

    alpha: float
    lam: float
    a: float
    b: float
    c: float
    z0: float
    eta: float = 1.0

    def __post_init__(self):
        if not 0.5 < self.alpha <= 1.0:
            raise DomainError(f"alpha must lie in (1/2, 1], got {self.alpha}")
        if not self.lam > 0.0:
            raise DomainError(f"lambda must be positive, got {self.lam}")
        if self.a < 0.0:
            raise DomainError(f"a must be nonnegative, got {self.a}")
        if self.b < 0.0:
            raise DomainError(f"b must be nonnegative, got {self.b}")
        if not self.c > 0.0:
            raise DomainError(f"c must be positive, got {self.c}")
        if self.eta != 1.0:
            raise DomainError(f"eta is fixed to 1 by convention, got {self.eta}")

    @property
    def hurst(self) -> float:
        """H = alpha - 1/2, in (0, 1/2]."""
        return self.alpha - 0.5

    @classmethod
    def from_mapping(cls, mapping) -> "ModelParams":
        """Build from a flat key->value mapping (keys: alpha, lambda, a, b,
        c, z0).  An ``eta`` key is rejected unless its value is 1."""
        data = dict(mapping)
        if "eta" in data:
            eta = float(data.pop("eta"))
            if eta != 1.0:
                raise ConfigError(f"eta is fixed to 1 by convention, got {eta}")
        missing = [k for k in _PARAM_KEYS if k not in data]
        if missing:
            raise ConfigError(f"missing model parameter keys: {', '.join(missing)}")
        extra = sorted(set(data) - set(_PARAM_KEYS))
        if extra:
            raise ConfigError(f"unknown model parameter keys: {', '.join(extra)}")
        try:
            values = {k: float(data[k]) for k in _PARAM_KEYS}
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"non-numeric model parameter value: {exc}") from exc
        return cls(
            alpha=values["alpha"],
            lam=values["lambda"],
            a=values["a"],
            b=values["b"],
            c=values["c"],
            z0=values["z0"],
        )

    def to_mapping(self) -> dict:
        return {
            "alpha": self.alpha,
            "lambda": self.lam,
            "a": self.a,
            "b": self.b,
            "c": self.c,
            "z0": self.z0,
        }

    def replace(self, **changes) -> "ModelParams":
        """Copy with the given fields replaced (revalidates)."""
        fields = dict(
            alpha=self.alpha, lam=self.lam, a=self.a, b=self.b, c=self.c, z0=self.z0
        )
        fields.update(changes)
        return ModelParams(**fields)


def instantaneous_variance(z, params: ModelParams):
    """V = a * (z - b)**2 + c, elementwise on z; always >= c."""
    z = np.asarray(z, dtype=float)
    out = params.a * (z - params.b) ** 2 + params.c
    if out.ndim == 0:
        return float(out)
    return out


def theta0_parametric(params: ModelParams, t):
    """theta0(t) = z0 * t**(-alpha) / (lam * Gamma(1 - alpha)), t > 0.

    The kernel convolution of this curve is identically z0, which is what
    plants the initial level of Z into the Volterra equation.
    """
    if params.alpha == 1.0:
        raise UnsupportedParameterError(
            "the parametric forward curve degenerates at alpha = 1 "
            "(Gamma(1 - alpha) pole); supply an explicit ForwardCurve instead"
        )
    arr = np.asarray(t, dtype=float)
    if np.any(arr <= 0.0):
        raise DomainError("theta0_parametric requires t > 0")
    coeff = params.z0 / (params.lam * math.gamma(1.0 - params.alpha))
    out = coeff * arr ** (-params.alpha)
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class ForwardCurve:
    """A forward curve theta on a time grid.

    Linear interpolation between grid points; power-law continuation with
    the stored exponent on both sides of the grid (t/t_edge)**(-exponent)
    anchored at the edge value.  The inward continuation matters because
    simulation integrates the curve against the kernel over (0, dt], below
    the first grid point.  With exponent = alpha the parametric family is
    reproduced exactly everywhere from its values on any grid.
    """

    grid: np.ndarray
    values: np.ndarray
    extrapolation_exponent: float

    def __post_init__(self):
        grid = np.atleast_1d(np.asarray(self.grid, dtype=float))
        values = np.atleast_1d(np.asarray(self.values, dtype=float))
        if grid.ndim != 1 or values.ndim != 1 or grid.size != values.size:
            raise DomainError("grid and values must be 1-D arrays of equal length")
        if grid.size < 1:
            raise DomainError("a forward curve needs at least one grid point")
        if np.any(grid < 0.0) or not np.all(np.isfinite(grid)):
            raise DomainError("curve grid must be nonnegative and finite")
        if grid.size > 1 and np.any(np.diff(grid) <= 0.0):
            raise DomainError("curve grid must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise DomainError("curve values must be finite")
        grid.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "extrapolation_exponent", float(self.extrapolation_exponent))

    @classmethod
    def from_parametric(cls, params: ModelParams, grid) -> "ForwardCurve":
        """Sample theta0_parametric on a grid; exponent alpha preserves the
        family exactly under both extrapolations."""
        grid = np.asarray(grid, dtype=float)
        return cls(grid, theta0_parametric(params, grid), params.alpha)

    def __call__(self, t):
        arr = np.asarray(t, dtype=float)
        scalar = arr.ndim == 0
        arr = np.atleast_1d(arr)
        if np.any(arr < 0.0) or (self.grid[0] > 0.0 and np.any(arr <= 0.0)):
            raise DomainError("curve evaluated at t <= 0 outside its grid")
        out = np.interp(arr, self.grid, self.values)
        q = self.extrapolation_exponent
        below = arr < self.grid[0]
        if np.any(below):
            out[below] = self.values[0] * (arr[below] / self.grid[0]) ** (-q)
        above = arr > self.grid[-1]
        if np.any(above):
            out[above] = self.values[-1] * (arr[above] / self.grid[-1]) ** (-q)
        if scalar:
            return float(out[0])
        return out


def _last_cell_moments(alpha: float, dt: float, u: np.ndarray):
    """M0 = int_0^dt w**a / (u+w) dw and M1 = likewise with w**(1+a).

    The history weight (t0-v)**a / (u + t0-v) turns over at w = t0-v ~ u,
    which the grid cannot resolve when u < dt; these closed forms (a Gauss
    hypergeometric evaluation) integrate the final history cell exactly.
    """
    m0 = dt ** (1.0 + alpha) / (u * (1.0 + alpha)) * hyp2f1(
        1.0, 1.0 + alpha, 2.0 + alpha, -dt / u
    )
    m1 = dt ** (1.0 + alpha) / (1.0 + alpha) - u * m0
    return m0, m1


def _history_quadrature(n_hist: int, dt: float, alpha: float, q: float,
                        out_grid: np.ndarray):
    """Weights for the history integrals of the conditional curve.

    Returns (wz, wn, theta_first_cell) with
        int_0^t0 phi_u(v) g(v) dv           ~  g @ wz.T      (nodal values)
        int_0^t0 phi_u(v) x(v) dW_v         ~  x*dW @ wn.T   (left points)
    for phi_u(v) = (t0-v)**alpha / (u + t0-v); trapezoidal in the interior,
    with the final cell [t0-dt, t0] integrated exactly against a linear g
    (phi_u concentrates there when u is small).  theta_first_cell carries
    the first cell's theta0 mass point: theta0 ~ A v**-q is singular at
    v = 0, so that cell contributes its exact mass A dt**(1-q)/(1-q) at the
    mass centroid, returned as (centroid, mass-over-amplitude).
    """
    m = out_grid.size
    u = out_grid[:, None]
    v = (np.arange(n_hist) * dt)[None, :]
    t0 = (n_hist - 1) * dt
    w = t0 - v
    phi = np.zeros((m, n_hist))
    phi[:, :-1] = w[:, :-1] ** alpha / (u + w[:, :-1])
    m0, m1 = _last_cell_moments(alpha, dt, out_grid)

    wz = np.zeros((m, n_hist))
    wn = np.zeros((m, n_hist - 1))
    if n_hist > 2:
        # trapezoid over cells 0 .. n-3 (the last cell is exact)
        wz[:, : n_hist - 1] = dt * phi[:, : n_hist - 1]
        wz[:, 0] *= 0.5
        wz[:, n_hist - 2] *= 0.5
        wn[:, : n_hist - 2] = 0.5 * (phi[:, : n_hist - 2] + phi[:, 1: n_hist - 1])
    wz[:, n_hist - 2] += m1 / dt
    wz[:, n_hist - 1] += m0 - m1 / dt
    wn[:, n_hist - 2] = m0 / dt

    centroid = dt * (1.0 - q) / (2.0 - q)
    mass_over_amp = dt ** (1.0 - q) / (1.0 - q)
    return wz, wn, (centroid, mass_over_amp)


def _forward_theta_values(z_paths: np.ndarray, dw_paths: np.ndarray,
                          theta0: ForwardCurve, params: ModelParams,
                          out_grid: np.ndarray, t0: float,
                          eta: float | None = None):
    """Batched conditional-curve values: rows are independent histories.

    Returns an array (n_paths, n_out) of theta_t0 values on out_grid.
    ``eta`` scales the Brownian history term (the eta the history was
    generated under); defaults to the model's eta.
    """
    base = theta0(t0 + out_grid)[None, :]
    if t0 == 0.0 or params.alpha == 1.0:
        # alpha = 1: sin(pi alpha) = 0, the history correction vanishes
        return np.broadcast_to(base, (z_paths.shape[0], out_grid.size)).copy()
    if eta is None:
        eta = params.eta
    alpha = params.alpha
    n_hist = z_paths.shape[1]
    dt = t0 / (n_hist - 1)
    q = theta0.extrapolation_exponent
    if q >= 1.0:
        raise DomainError(
            f"curve inward exponent must be < 1 for an integrable origin, got {q}"
        )
    wz, wn, (centroid, mass_over_amp) = _history_quadrature(
        n_hist, dt, alpha, q, out_grid
    )
    # path-independent theta0 part of the history integral: node weights as
    # for Z except over the first cell, where theta0 ~ A v**-q is singular
    # and its exact cell mass is lumped at the mass centroid
    th_nodes = np.concatenate(([0.0], theta0(np.arange(1, n_hist) * dt)))
    if n_hist == 2:
        dth = np.zeros(out_grid.size)
    else:
        wth = wz.copy()
        wth[:, 0] = 0.0
        w1 = t0 - dt
        wth[:, 1] -= 0.5 * dt * w1 ** alpha / (out_grid + w1)
        dth = th_nodes @ wth.T
    amp = theta0(dt) * dt ** q
    w_star = t0 - centroid
    dth = dth + amp * mass_over_amp * w_star ** alpha / (out_grid + w_star)

    hist = dth[None, :] - z_paths @ wz.T
    if eta != 0.0:
        x = np.sqrt(instantaneous_variance(z_paths[:, :-1], params)) * dw_paths
        hist = hist + eta * (x @ wn.T)
    pref = math.sin(math.pi * alpha) / math.pi
    return base + pref * out_grid[None, :] ** (-alpha) * hist


def forward_theta(z_path, theta0: ForwardCurve, params: ModelParams,
                  out_grid, *, t0: float, increments=None,
                  eta: float | None = None) -> ForwardCurve:
    """Conditional forward curve theta_t0 evaluated on out_grid.

    ``z_path`` holds Z samples on the uniform grid covering [0, t0] (so
    t0 = dt * (len(z_path) - 1)) and ``increments`` the Brownian increments
    of the same run (one fewer entry); both histories enter the exact
    conditional curve.  ``out_grid`` holds strictly positive offsets u.
    For t0 = 0 the result is theta0 restricted to out_grid and increments
    are not consulted.  ``eta`` is the noise scale the history was
    generated under (defaults to the model's).
    """
    out_grid = np.atleast_1d(np.asarray(out_grid, dtype=float))
    if out_grid.ndim != 1 or out_grid.size == 0:
        raise DomainError("out_grid must be a nonempty 1-D array")
    if np.any(out_grid <= 0.0):
        raise DomainError(
            "out_grid must be strictly positive: the conditional curve "
            "has a u**-alpha singularity at u = 0"
        )
    if np.any(np.diff(out_grid) <= 0.0):
        raise DomainError("out_grid must be strictly increasing")
    if t0 < 0.0:
        raise DomainError("t0 must be nonnegative")
    z_path = np.asarray(z_path, dtype=float)
    if z_path.ndim != 1:
        raise DomainError("z_path must be 1-D")
    if t0 > 0.0:
        if z_path.size < 2:
            raise DomainError("z_path must cover [0, t0] with at least two samples")
        if increments is None:
            raise DomainError(
                "increments are required for t0 > 0: the conditional curve "
                "depends on the Brownian history, not only on Z"
            )
        increments = np.asarray(increments, dtype=float)
        if increments.shape != (z_path.size - 1,):
            raise DomainError(
                "increments must hold one Brownian increment per history cell"
            )
    else:
        increments = np.zeros(max(z_path.size - 1, 1))
    values = _forward_theta_values(
        z_path[None, :], increments[None, :], theta0, params, out_grid, t0, eta
    )[0]
    return ForwardCurve(out_grid, values, params.alpha)
