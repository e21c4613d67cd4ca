"""Euler-Volterra simulation of the coupled (log S, Z, V) dynamics.

One Brownian motion drives everything:

    Z_k = sum_{j<k} w_{k,j} [ (theta(t_j) - Z_j) dt + eta sqrt(V_j) dW_j ]
    log S_{k+1} = log S_k - V_k dt / 2 + sqrt(V_k) dW_k
    V_k = a (Z_k - b)^2 + c

with integrated-kernel weights w_{k,j} = (lam/Gamma(alpha)) *
int_{t_j}^{t_{j+1}} (t_k - s)**(alpha-1) ds / dt, so every cell carries its
exact kernel mass (point-evaluating the singular kernel on the newest cell
would diverge).  The theta drift of the j = 0 cell is treated separately:
theta can blow up like s**-q at the origin, so that cell integrates the
kernel against the curve's inward power-law continuation in closed form
(an incomplete-Beta evaluation) instead of using theta(0).

The convolution is direct O(N^2) per path with the weight table shared
across paths; paths run in fixed-size chunks that may be spread over
threads without changing any output bit (see rng).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace as dc_replace

import numpy as np
from scipy.special import betainc, beta as beta_fn

from .errors import ConfigError, DataError, DomainError, UnsupportedParameterError
from .model import (
    ForwardCurve,
    ModelParams,
    _forward_theta_values,
    instantaneous_variance,
)
from . import rng

_SCHEMES = ("euler-volterra",)


@dataclass(frozen=True)
class SimConfig:
    """Discretization and sampling sizes.

    n_steps counts steps per year; a run over ``horizon`` years uses
    N = max(1, round(n_steps * horizon)) uniform steps.
    """

    n_steps: int
    n_paths: int
    horizon: float
    seed: int
    scheme: str = "euler-volterra"

    def __post_init__(self):
        if not (isinstance(self.n_steps, (int, np.integer)) and self.n_steps >= 1):
            raise DomainError(f"n_steps must be a positive integer, got {self.n_steps}")
        if not (isinstance(self.n_paths, (int, np.integer)) and self.n_paths >= 1):
            raise DomainError(f"n_paths must be a positive integer, got {self.n_paths}")
        if not self.horizon > 0.0:
            raise DomainError(f"horizon must be positive, got {self.horizon}")
        rng._validate_seed(self.seed)
        if self.scheme not in _SCHEMES:
            raise ConfigError(
                f"unknown scheme {self.scheme!r}; available: {', '.join(_SCHEMES)}"
            )

    @property
    def grid_size(self) -> int:
        return max(1, round(self.n_steps * self.horizon))

    @property
    def dt(self) -> float:
        return self.horizon / self.grid_size


@dataclass(frozen=True)
class PathEnsemble:
    """Simulated paths on a uniform grid, plus what a restart needs.

    Arrays are immutable; ``v`` equals instantaneous_variance(z) exactly by
    construction.  ``increments`` are the Brownian increments dW, retained
    for restarts and control variates.
    """

    grid: np.ndarray        # (N+1,)
    log_spot: np.ndarray    # (n_paths, N+1)
    z: np.ndarray           # (n_paths, N+1)
    v: np.ndarray           # (n_paths, N+1)
    increments: np.ndarray  # (n_paths, N)
    params: ModelParams
    theta: ForwardCurve
    config: SimConfig
    eta: float = 1.0        # noise scale Z was generated under (1 unless hooked)

    def __post_init__(self):
        for name in ("grid", "log_spot", "z", "v", "increments"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        n = self.grid.size
        if self.z.shape != self.log_spot.shape or self.z.shape != self.v.shape:
            raise DomainError("log_spot, z, v must share one shape")
        if self.z.shape[1] != n or self.increments.shape != (self.z.shape[0], n - 1):
            raise DomainError("array shapes inconsistent with the grid")

    @property
    def n_paths(self) -> int:
        return self.z.shape[0]

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    def truncated(self, expiry: float) -> "PathEnsemble":
        """View of the ensemble cut at a grid time (arrays are slices)."""
        k = grid_index(self.grid, expiry)
        if k == self.grid.size - 1:
            return self
        return dc_replace(
            self,
            grid=self.grid[: k + 1],
            log_spot=self.log_spot[:, : k + 1],
            z=self.z[:, : k + 1],
            v=self.v[:, : k + 1],
            increments=self.increments[:, :k],
        )


def grid_index(grid: np.ndarray, t: float) -> int:
    """Index of time t on the grid, or a domain error if t is off-grid."""
    k = int(round(t / grid[-1] * (grid.size - 1))) if grid[-1] > 0 else 0
    if not 0 <= k < grid.size or abs(grid[k] - t) > 1e-9 * max(1.0, abs(t)):
        raise DomainError(f"time {t} is not on the simulation grid")
    return k


def kernel_cell_masses(params: ModelParams, dt: float, n: int) -> np.ndarray:
    """mass[m] = (lam/Gamma(alpha)) int over one cell at lag m of the kernel.

    mass[0] is zero padding so mass[m] corresponds to lag m = k - j >= 1.
    """
    m = np.arange(0, n + 1, dtype=float)
    out = (params.lam / math.gamma(params.alpha)) * dt ** params.alpha * (
        m ** params.alpha - np.maximum(m - 1.0, 0.0) ** params.alpha
    ) / params.alpha
    out[0] = 0.0
    return out


def _head_shape(params: ModelParams, q: float, dt: float, n: int) -> np.ndarray:
    """Kernel integral against s**-q over the first cell, for k = 1..n.

    shape[k-1] = (lam/Gamma(alpha)) int_0^dt (t_k - s)**(alpha-1) s**-q ds
    divided by the anchor amplitude; an incomplete-Beta evaluation.
    """
    if q >= 1.0:
        raise DomainError(
            f"curve inward exponent must be < 1 for an integrable origin, got {q}"
        )
    al = params.alpha
    t = np.arange(1, n + 1, dtype=float) * dt
    x = np.minimum(dt / t, 1.0)
    return (
        params.lam / math.gamma(al)
        * t ** (al - q)
        * beta_fn(1.0 - q, al)
        * betainc(1.0 - q, al, x)
    )


def _theta_drift(theta_values: np.ndarray, q: float, params: ModelParams,
                 dt: float, n: int, mass: np.ndarray) -> np.ndarray:
    """Per-step theta contribution TH with Z_k = TH[k-1] - (mass conv Z) + noise.

    theta_values holds the curve at t_1..t_n (shape (..., n)); the j = 0
    cell uses the closed-form head integral anchored at theta(dt), the
    j >= 1 cells use left-point values with their exact kernel cell mass.
    """
    theta_values = np.atleast_2d(theta_values)
    amp = theta_values[:, 0] * dt ** q
    out = amp[:, None] * _head_shape(params, q, dt, n)[None, :]
    if n > 1:
        band = np.zeros((n - 1, n))
        for i in range(n - 1):
            band[i, i + 1:] = mass[1: n - i]
        out = out + theta_values[:, : n - 1] @ band
    return out


def _volterra_paths(params: ModelParams, dt: float, n: int, z0, log_s0,
                    theta_drift: np.ndarray, normals: np.ndarray, eta: float):
    """Run the recursion for one block of paths.

    theta_drift is (n,) shared or (P, n) per path; z0/log_s0 scalars or
    (P,) vectors.  Returns (log_spot, z, v, increments).
    """
    n_paths = normals.shape[0]
    dw = normals * math.sqrt(dt)
    log_spot = np.empty((n_paths, n + 1))
    z = np.empty((n_paths, n + 1))
    v = np.empty((n_paths, n + 1))
    z[:, 0] = z0
    v[:, 0] = instantaneous_variance(z[:, 0], params)
    log_spot[:, 0] = log_s0
    shared_theta = theta_drift.ndim == 1
    mass = kernel_cell_masses(params, dt, n)
    mass_rev = mass[1:][::-1].copy()
    hist = np.empty((n_paths, n))
    for k in range(1, n + 1):
        j = k - 1
        sq = np.sqrt(v[:, j])
        log_spot[:, k] = log_spot[:, j] - 0.5 * v[:, j] * dt + sq * dw[:, j]
        hist[:, j] = eta * sq * dw[:, j] / dt - z[:, j]
        conv = hist[:, :k] @ mass_rev[n - k:]
        th = theta_drift[k - 1] if shared_theta else theta_drift[:, k - 1]
        z[:, k] = th + conv
        v[:, k] = instantaneous_variance(z[:, k], params)
    return log_spot, z, v, dw


def simulate(params: ModelParams, theta0: ForwardCurve, config: SimConfig,
             *, eta_override: float | None = None) -> PathEnsemble:
    """Simulate the joint (log S, Z, V) ensemble under theta0.

    S_0 is 1 by convention (log_spot starts at 0); spot scaling, where it
    matters, happens at the pricing layer.  ``eta_override`` is a test hook
    (eta = 0 makes Z deterministic and exposes the drift part of the
    scheme); production paths always run at the model's eta = 1.
    """
    n = config.grid_size
    dt = config.dt
    eta = params.eta if eta_override is None else float(eta_override)
    grid = np.arange(n + 1) * dt
    mass = kernel_cell_masses(params, dt, n)
    th = _theta_drift(
        theta0(grid[1:]), theta0.extrapolation_exponent, params, dt, n, mass
    )[0]

    p = config.n_paths
    log_spot = np.empty((p, n + 1))
    z = np.empty((p, n + 1))
    v = np.empty((p, n + 1))
    dw = np.empty((p, n))

    def worker(start, stop):
        normals = rng.normal_block(config.seed, start, stop - start, n)
        ls, zz, vv, dd = _volterra_paths(
            params, dt, n, params.z0, 0.0, th, normals, eta
        )
        log_spot[start:stop] = ls
        z[start:stop] = zz
        v[start:stop] = vv
        dw[start:stop] = dd

    rng.map_chunks(p, worker)
    return PathEnsemble(grid, log_spot, z, v, dw, params, theta0, config, eta)


def _restart_theta_values(ensemble: PathEnsemble, path_slice, params: ModelParams,
                          out_grid: np.ndarray) -> np.ndarray:
    """Conditional theta values for the selected outer paths on the inner
    grid.  The u**-alpha level carrier is part of the exact formula."""
    return _forward_theta_values(
        ensemble.z[path_slice],
        ensemble.increments[path_slice],
        ensemble.theta,
        params,
        out_grid,
        ensemble.horizon,
        ensemble.eta,
    )


def _grids_align(ensemble: PathEnsemble, inner_config: SimConfig) -> bool:
    """True when the inner grid continues the outer grid cell for cell."""
    if ensemble.horizon == 0.0:
        return False  # no history: theta0 itself is the conditional curve
    outer_dt = ensemble.grid[1] - ensemble.grid[0]
    return abs(inner_config.dt - outer_dt) <= 1e-9 * outer_dt


def _aligned_history_drift(ensemble: PathEnsemble, path_slice,
                           params: ModelParams, inner_config: SimConfig
                           ) -> np.ndarray:
    """Exact conditional drift when the inner grid extends the outer one.

    With a shared step size the inner recursion literally continues the
    outer one, so conditioning is exact: the inner drift is the full-grid
    theta drift plus the kernel convolution of the stored history terms
    (the same eta * sqrt(V) dW / dt - Z combination the outer recursion
    used).  This sidesteps the conditional-curve quadrature, whose
    u**-alpha carrier is too singular to re-integrate accurately on the
    inner grid; left-point cells there overshoot the drift by O(1e-1)
    right after t0, which the quadratic variance feedback then amplifies.
    Returns an (n_paths, n_inner) drift array.
    """
    n = inner_config.grid_size
    dt = inner_config.dt
    m = ensemble.grid.size - 1
    mass = kernel_cell_masses(params, dt, m + n)
    grid = np.arange(1, m + n + 1) * dt
    theta0 = ensemble.theta
    th_full = _theta_drift(
        theta0(grid), theta0.extrapolation_exponent, params, dt, m + n, mass
    )[0]
    hist = (
        ensemble.eta * np.sqrt(ensemble.v[path_slice, :m])
        * ensemble.increments[path_slice] / dt
        - ensemble.z[path_slice, :m]
    )
    lag = (m + np.arange(1, n + 1))[:, None] - np.arange(m)[None, :]
    return th_full[m:] + hist @ mass[lag].T


def _conditional_theta_drift(ensemble: PathEnsemble, path_slice,
                             params: ModelParams, inner_config: SimConfig
                             ) -> np.ndarray:
    """Drift for a restart whose step size differs from the outer grid's.

    Kernel-integrates the conditional curve: the theta0(t0 + u) part is
    smooth and handled like any curve, while the history carrier
    u**-alpha * H(u), H smooth, has its cells integrated against the
    kernel in closed form (incomplete-Beta moments) with H frozen at cell
    midpoints.  Left-point sampling of the carrier would overshoot the
    first cells' drift by O(1e-1); the exact moments bring that down to
    the scheme's own discretization error.  Returns (n_paths, n_inner).
    """
    n = inner_config.grid_size
    dt = inner_config.dt
    grid = np.arange(1, n + 1) * dt
    mass = kernel_cell_masses(params, dt, n)
    curve = ensemble.theta
    t0 = ensemble.horizon
    if t0 == 0.0:
        return _theta_drift(curve(grid), curve.extrapolation_exponent,
                            params, dt, n, mass)
    if params.alpha == 1.0:
        raise UnsupportedParameterError(
            "conditional drift off the outer grid requires alpha < 1: at "
            "alpha = 1 no forward-curve carrier can encode the history"
        )
    al = params.alpha
    base = _theta_drift(curve(t0 + grid), 0.0, params, dt, n, mass)
    mids = grid - 0.5 * dt
    bracket = (
        (_restart_theta_values(ensemble, path_slice, params, mids)
         - curve(t0 + mids))
        * mids ** al * (math.pi / math.sin(math.pi * al))
    )
    k = np.arange(1, n + 1, dtype=float)
    x = np.minimum(np.arange(0, n + 1, dtype=float)[None, :] / k[:, None], 1.0)
    moments = (params.lam / math.gamma(al)) * np.diff(
        betainc(1.0 - al, al, x), axis=1
    )
    return base + bracket @ moments.T


def restart(ensemble: PathEnsemble, path_index: int, params: ModelParams,
            inner_config: SimConfig, *, eta_override: float | None = None
            ) -> PathEnsemble:
    """Conditional simulation beyond one path's endpoint.

    Builds the conditional drift from the path's Z and Brownian histories,
    then simulates inner_config.n_paths inner paths over
    inner_config.horizon starting from (S_t0, Z_t0).  When the inner step
    size matches the outer one the drift is the exact discrete
    continuation of the outer recursion; otherwise it is rebuilt from the
    conditional curve theta_t0, which is accurate away from t0 but carries
    a quadrature bias over the first few inner cells.  The inner grid is
    relative to t0.  Inner draws live in a separate key space, indexed so
    that restarting path p matches the nested pricer bit for bit: inner
    row q of outer path p is stream path p * n_paths + q.
    """
    if params.alpha == 1.0:
        raise UnsupportedParameterError(
            "conditional restart requires alpha < 1: at alpha = 1 no "
            "forward-curve carrier can encode the current level of Z"
        )
    if not 0 <= path_index < ensemble.n_paths:
        raise DomainError(f"path index {path_index} out of range")
    n = inner_config.grid_size
    dt = inner_config.dt
    out_grid = np.arange(1, n + 1) * dt
    values = _restart_theta_values(
        ensemble, slice(path_index, path_index + 1), params, out_grid
    )
    # The carrier's u**-alpha singularity dominates near the origin; a
    # t0 = 0 restart has no carrier and keeps theta0's own inward shape.
    q = params.alpha if ensemble.horizon > 0.0 else ensemble.theta.extrapolation_exponent
    if _grids_align(ensemble, inner_config):
        th = _aligned_history_drift(
            ensemble, slice(path_index, path_index + 1), params, inner_config
        )[0]
    else:
        mass = kernel_cell_masses(params, dt, n)
        th = _theta_drift(values, q, params, dt, n, mass)[0]
    normals = rng.normal_block(
        inner_config.seed,
        path_index * inner_config.n_paths,
        inner_config.n_paths,
        n,
        inner=True,
    )
    z0 = float(ensemble.z[path_index, -1])
    log_s0 = float(ensemble.log_spot[path_index, -1])
    eta = params.eta if eta_override is None else float(eta_override)
    ls, zz, vv, dd = _volterra_paths(params, dt, n, z0, log_s0, th, normals, eta)
    curve = ForwardCurve(out_grid, values[0], q)
    return PathEnsemble(
        np.arange(n + 1) * dt, ls, zz, vv, dd, params, curve, inner_config, eta
    )


def estimate_roughness(ensemble: PathEnsemble) -> float:
    """Log-moment variogram estimate of the Hurst exponent of sqrt(V).

    Regresses E[log|sqrt(V)_{t+delta} - sqrt(V)_t|] on log delta over lags
    of {1, 2, 4, 8, 16} grid steps, pooling every path; the slope is H.
    The log-moment form is preferred over the classical second-moment
    variogram because sqrt(a(Z-b)^2 + c) folds increments near the vertex
    Z = b, which scales |increments| by a lag-independent factor; taking
    logs moves that contamination into the regression intercept.
    """
    n_steps = ensemble.grid.size - 1
    if n_steps < 100:
        raise DataError(
            f"roughness estimation needs at least 100 steps, got {n_steps}"
        )
    sv = np.sqrt(ensemble.v)
    lags = np.array([1, 2, 4, 8, 16])
    logmom = np.empty(lags.size)
    for i, lag in enumerate(lags):
        diff = np.abs(sv[:, lag:] - sv[:, :-lag])
        diff = diff[diff > 0.0]
        if diff.size == 0:
            raise DataError(
                "degenerate ensemble: sqrt(V) has vanishing increments "
                "(constant variance paths carry no roughness signal)"
            )
        logmom[i] = np.mean(np.log(diff))
    slope = np.polyfit(np.log(lags.astype(float)), logmom, 1)[0]
    return float(slope)
