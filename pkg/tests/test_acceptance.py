"""End-to-end acceptance battery.

One test per headline guarantee, each printing a single PASS/FAIL line with
the measured quantities (run pytest with -s or -rA to see the lines for
passing tests).  These are deliberately redundant with the per-module unit
tests: the unit tests localize breakage, this file certifies the package
as a whole at the sizes and tolerances the guarantees are stated for.
"""

import math
import time

import numpy as np
from scipy.integrate import quad

from qrheston import (
    ForwardCurve,
    KernelSpec,
    MCConfig,
    ModelParams,
    SimConfig,
    SmileLayout,
    black_price,
    grid_search,
    mittag_leffler,
    ml_cdf,
    ml_density,
    objective,
    price_spx_option,
    price_vix_option,
    refine,
    resolvent_residual,
    simulate,
    synth_smiles,
    theta0_parametric,
    vix_future,
    vol_band,
)
from qrheston.calibrate import GridSpec
from qrheston.pricing import (VixConvention, _future_from_integrals,
                              _inner_window_integrals, _option_from_integrals)
from qrheston.rng import normal_block
from qrheston.simulate import _theta_drift, _volterra_paths, kernel_cell_masses

BENCH = ModelParams(alpha=0.51, lam=1.2, a=0.384, b=0.095, c=0.0025, z0=0.1)
MONTH = 30.0 / 365.0
CONV = VixConvention()


def bench_curve(params=BENCH, t_max=2.0):
    grid = np.geomspace(1e-4, t_max, 800)
    return ForwardCurve(grid, theta0_parametric(params, grid), params.alpha)


def report(label, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} {label}: {detail}"
    print(line)
    assert ok, line


def otm_vol(ensemble, lm, expiry):
    strike = math.exp(lm)
    kind = "put" if lm < 0.0 else "call"
    est = price_spx_option(ensemble, strike, expiry, kind)
    lo, mid, hi = vol_band(est.value, est.std_error, 1.0, strike, expiry, kind)
    return mid, max(mid - lo, hi - mid)


def test_special_function_identities():
    t0 = time.perf_counter()
    exp_err = max(
        abs(mittag_leffler(1.0, 1.0, x) - math.exp(x)) for x in (-2.0, 0.0, 1.0, 3.0)
    )
    spec = KernelSpec(alpha=0.51, lam=1.2)
    quad_cdf, quad_err = quad(lambda t: ml_density(spec, t), 0.0, 5.0, limit=200)
    cdf_err = abs(ml_cdf(spec, 5.0) - quad_cdf)
    residual = resolvent_residual(spec, np.geomspace(1e-6, 2.0, 512))
    elapsed = time.perf_counter() - t0
    ok = exp_err < 1e-10 and cdf_err < 1e-6 and residual < 1e-3 and elapsed < 1.0
    report(
        "special functions",
        ok,
        f"|E_11 - exp| = {exp_err:.2e} (tol 1e-10), "
        f"|cdf - quad(density)| = {cdf_err:.2e} (tol 1e-6, quad err {quad_err:.1e}), "
        f"resolvent residual = {residual:.2e} (tol 1e-3), {elapsed:.2f}s (< 1s)",
    )


def test_flat_variance_reduces_to_black_scholes():
    t0 = time.perf_counter()
    params = BENCH.replace(a=0.0, c=0.04)  # V frozen at 20% vol
    expiry = 0.25
    cfg = SimConfig(n_steps=200, n_paths=300000, horizon=expiry, seed=71)
    ens = simulate(params, bench_curve(params), cfg)

    atm = price_spx_option(ens, 1.0, expiry, "call")
    reference = black_price(1.0, 1.0, expiry, 0.2, "call")
    atm_ok = abs(atm.value - reference) < 3.0 * atm.std_error

    worst = 0.0
    for lm in (-0.2, -0.1, -0.05, 0.0, 0.05, 0.1, 0.2):
        vol, _ = otm_vol(ens, lm, expiry)
        worst = max(worst, abs(vol - 0.2))
    elapsed = time.perf_counter() - t0
    ok = atm_ok and worst < 0.002 and elapsed < 30.0
    report(
        "flat variance vs Black-Scholes",
        ok,
        f"ATM |mc - closed form| = {abs(atm.value - reference):.2e} "
        f"(3 s.e. = {3 * atm.std_error:.2e}), max |iv - 0.20| = {worst:.4f} "
        f"(tol 0.002), {elapsed:.1f}s (< 30s)",
    )


def test_flat_variance_vix_levels():
    t0 = time.perf_counter()
    params = BENCH.replace(a=0.0)  # V frozen at c = 0.0025 -> VIX = 5.00
    inner = SimConfig(500, 80, CONV.delta, 72)
    ens = simulate(params, bench_curve(params), SimConfig(500, 1500, MONTH, 73))

    fut = vix_future(ens, MONTH, inner)
    fut_err = abs(fut.value - 5.0)
    fut_ok = fut_err < 0.02 and fut_err <= max(3.0 * fut.std_error, 1e-9)

    call = price_vix_option(ens, 4.0, MONTH, "call", inner)
    call_err = abs(call.value - 1.0)
    call_ok = call_err <= max(3.0 * call.std_error, 1e-9)
    elapsed = time.perf_counter() - t0
    ok = fut_ok and call_ok and elapsed < 60.0
    report(
        "flat variance VIX levels",
        ok,
        f"future = {fut.value:.12f} (|err| = {fut_err:.1e}, bias tol 0.02, "
        f"s.e. = {fut.std_error:.1e}), call K=4 = {call.value:.12f} "
        f"(|err| = {call_err:.1e}), {elapsed:.1f}s (< 60s)",
    )


def test_nonsingular_kernel_matches_markovian_euler():
    """With a constant kernel the convolution recursion collapses to a
    mean-reverting SDE; an independently seeded fine-grid Euler scheme for
    that SDE must agree on the terminal distribution."""
    t0 = time.perf_counter()
    params = ModelParams(alpha=1.0, lam=1.2, a=0.384, b=0.095, c=0.0025, z0=0.0)
    theta, expiry, n_paths = 0.04, 0.25, 100000
    curve = ForwardCurve([0.5, 1.0, 2.0], [theta] * 3, 0.0)

    ens = simulate(params, curve, SimConfig(500, n_paths, expiry, 74))
    z_scheme = ens.z[:, -1]

    rng = np.random.default_rng(987654321)  # independent draws on purpose
    n_fine = 500
    dt = expiry / n_fine
    z = np.zeros(n_paths)
    for _ in range(n_fine):
        v = params.a * (z - params.b) ** 2 + params.c
        dw = rng.standard_normal(n_paths) * math.sqrt(dt)
        z = z + params.lam * ((theta - z) * dt + np.sqrt(v) * dw)

    def mean_se(x):
        return x.mean(), x.std(ddof=1) / math.sqrt(x.size)

    def var_se(x):
        centered = (x - x.mean()) ** 2
        return x.var(ddof=1), centered.std(ddof=1) / math.sqrt(x.size)

    m1, se_m1 = mean_se(z_scheme)
    m2, se_m2 = mean_se(z)
    v1, se_v1 = var_se(z_scheme)
    v2, se_v2 = var_se(z)
    mean_gap = abs(m1 - m2)
    mean_tol = 3.0 * math.hypot(se_m1, se_m2)
    var_gap = abs(v1 - v2)
    var_tol = 3.0 * math.hypot(se_v1, se_v2)
    elapsed = time.perf_counter() - t0
    ok = mean_gap < mean_tol and var_gap < var_tol and elapsed < 120.0
    report(
        "constant kernel vs Markovian Euler",
        ok,
        f"terminal Z mean gap = {mean_gap:.2e} (3 c.s.e. = {mean_tol:.2e}), "
        f"variance gap = {var_gap:.2e} (3 c.s.e. = {var_tol:.2e}), "
        f"{elapsed:.1f}s (< 2min)",
    )


def test_spot_martingale_and_negative_leverage():
    cfg = SimConfig(n_steps=500, n_paths=100000, horizon=MONTH, seed=75)
    ens = simulate(BENCH, bench_curve(), cfg)

    s_t = np.exp(ens.log_spot[:, -1])
    se = s_t.std(ddof=1) / math.sqrt(cfg.n_paths)
    drift = abs(s_t.mean() - 1.0)

    ret = ens.log_spot[:, -1] - ens.log_spot[:, -11]
    r = np.corrcoef(ret, ens.v[:, -1])[0, 1]
    t_stat = r * math.sqrt((cfg.n_paths - 2) / (1.0 - r * r))

    ok = drift < 3.0 * se and r < 0.0 and abs(t_stat) > 5.0
    report(
        "martingale and leverage feedback",
        ok,
        f"|mean(S_T) - 1| = {drift:.2e} (3 s.e. = {3 * se:.2e}), "
        f"corr(trailing return, V) = {r:.3f}, |t| = {abs(t_stat):.0f} (> 5)",
    )


def test_spx_skew_negative_and_vix_smile_upward():
    t0 = time.perf_counter()
    ens = simulate(BENCH, bench_curve(), SimConfig(500, 100000, MONTH, 76))
    vol_dn, se_dn = otm_vol(ens, -0.05, MONTH)
    vol_up, se_up = otm_vol(ens, 0.05, MONTH)
    skew = (vol_up - vol_dn) / 0.1
    skew_se = math.hypot(se_dn, se_up) / 0.1
    spx_ok = skew < 0.0 and abs(skew) > 3.0 * skew_se

    outer = simulate(BENCH, bench_curve(), SimConfig(500, 30000, MONTH, 77))
    inner = SimConfig(500, 300, CONV.delta, 78)
    integrals = _inner_window_integrals(outer, MONTH, inner, CONV)
    future = _future_from_integrals(integrals, CONV, False)

    def vix_vol(lm):
        strike = future.value * math.exp(lm)
        kind = "put" if lm < 0.0 else "call"
        est = _option_from_integrals(integrals, strike, kind, CONV)
        lo, mid, hi = vol_band(est.value, est.std_error, future.value,
                               strike, MONTH, kind)
        return mid, max(mid - lo, hi - mid)

    viv_dn, vse_dn = vix_vol(-0.2)
    viv_up, vse_up = vix_vol(0.2)
    slope = (viv_up - viv_dn) / 0.4
    slope_se = math.hypot(vse_dn, vse_up) / 0.4
    vix_ok = slope > 0.0 and slope > 3.0 * slope_se
    elapsed = time.perf_counter() - t0
    ok = spx_ok and vix_ok and elapsed < 600.0
    report(
        "SPX skew / VIX smile shapes",
        ok,
        f"SPX ATM skew = {skew:.3f} (3 s.e. = {3 * skew_se:.3f}), "
        f"VIX smile slope = {slope:.3f} (3 s.e. = {3 * slope_se:.3f}), "
        f"{elapsed:.0f}s (< 10min)",
    )


def test_conditional_restart_matches_bundled_estimate():
    """Three probes of the conditional restart at t0 = 0.05.

    (1) Tower property at the benchmark parameters: the nested estimate
    of E[int V] over the month after t0 matches a direct un-restarted run
    within 3 combined s.e.  (2) Paired continuation, also at the
    benchmark: per outer path, the production inner mean is compared with
    an oracle that replays the stored history increments through the
    full-horizon recursion and continues with fresh noise -- the
    sharpest form of bundling, where a bundle is the set of continuations
    of one exact history.  Pairing matters because the benchmark window
    integral is violently heavy-tailed (per-history conditional means
    span four decades), so differences of independent sample means say
    nothing at these sizes.  (3) Bundling on coarse state, (Z_t0,
    trailing variance) terciles, needs cell averages to be meaningful,
    so it runs at a moderate parameter set where the window integral is
    light-tailed and the nine cells resolve at the few-permille level;
    every cell must agree between the nested and direct runs within 3
    combined s.e."""
    t_start = time.perf_counter()
    t0, per_year = 0.05, 1460  # t0 and t0 + delta both land on this grid
    inner_cfg = SimConfig(per_year, 150, CONV.delta, 82)
    outer = simulate(BENCH, bench_curve(), SimConfig(per_year, 4000, t0, 81))
    mu = _inner_window_integrals(outer, t0, inner_cfg, CONV).mean(axis=1)

    direct_cfg = SimConfig(per_year, 20000, t0 + CONV.delta, 83)
    direct = simulate(BENCH, bench_curve(), direct_cfg)
    k = round(t0 / direct_cfg.dt)
    assert abs(k * direct_cfg.dt - t0) < 1e-12
    w = np.trapezoid(direct.v[:, k:], dx=direct_cfg.dt, axis=1)
    agg_gap = abs(mu.mean() - w.mean())
    agg_tol = 3.0 * math.hypot(
        mu.std(ddof=1) / math.sqrt(mu.size), w.std(ddof=1) / math.sqrt(w.size)
    )

    m = outer.grid.size - 1
    dt = direct_cfg.dt
    n_full = m + inner_cfg.grid_size
    mass = kernel_cell_masses(BENCH, dt, n_full)
    th_full = _theta_drift(
        outer.theta(np.arange(1, n_full + 1) * dt),
        outer.theta.extrapolation_exponent, BENCH, dt, n_full, mass,
    )[0]
    oracle = np.empty(outer.n_paths)
    for p in range(outer.n_paths):
        normals = normal_block(
            4242, p * inner_cfg.n_paths, inner_cfg.n_paths, n_full
        )
        normals[:, :m] = outer.increments[p] / math.sqrt(dt)
        _, _, vv, _ = _volterra_paths(
            BENCH, dt, n_full, BENCH.z0, 0.0, th_full, normals, 1.0
        )
        oracle[p] = np.trapezoid(vv[:, m:], dx=dt, axis=1).mean()
    diff = mu - oracle
    paired_z = diff.mean() / (diff.std(ddof=1) / math.sqrt(diff.size))

    tame = ModelParams(alpha=0.60, lam=1.0, a=0.15, b=0.10, c=0.02, z0=0.10)
    t_direct = simulate(tame, bench_curve(tame), direct_cfg)
    w_t = np.trapezoid(t_direct.v[:, k:], dx=dt, axis=1)
    t_outer = simulate(tame, bench_curve(tame), SimConfig(per_year, 4000, t0, 81))
    mu_t = _inner_window_integrals(t_outer, t0, inner_cfg, CONV).mean(axis=1)

    z_a, trail_a = t_outer.z[:, -1], t_outer.v[:, -15:].mean(axis=1)
    z_b, trail_b = t_direct.z[:, k], t_direct.v[:, k - 14:k + 1].mean(axis=1)
    z_edges = np.quantile(z_b, [1 / 3, 2 / 3])
    za_bin, zb_bin = np.digitize(z_a, z_edges), np.digitize(z_b, z_edges)
    worst_z, n_min = 0.0, mu_t.size
    cell_means = []
    for zc in range(3):
        ma_all, mb_all = mu_t[za_bin == zc], w_t[zb_bin == zc]
        t_edges = np.quantile(trail_b[zb_bin == zc], [1 / 3, 2 / 3])
        ta_bin = np.digitize(trail_a[za_bin == zc], t_edges)
        tb_bin = np.digitize(trail_b[zb_bin == zc], t_edges)
        for tc in range(3):
            ma, mb = ma_all[ta_bin == tc], mb_all[tb_bin == tc]
            n_min = min(n_min, ma.size, mb.size)
            se = math.hypot(ma.std(ddof=1) / math.sqrt(ma.size),
                            mb.std(ddof=1) / math.sqrt(mb.size))
            worst_z = max(worst_z, abs(ma.mean() - mb.mean()) / se)
            cell_means.append(mb.mean())
    spread = max(cell_means) / min(cell_means)  # conditioning must matter
    elapsed = time.perf_counter() - t_start
    ok = (agg_gap < agg_tol and abs(paired_z) < 3.0 and worst_z < 3.0
          and n_min >= 100 and spread > 1.03)
    report(
        "conditional restart vs bundled paths",
        ok,
        f"E[window integral] gap = {agg_gap:.2e} (3 c.s.e. = {agg_tol:.2e}), "
        f"paired continuation z = {paired_z:+.2f}, worst of 9 bundles = "
        f"{worst_z:.2f} c.s.e. (thinnest n = {n_min}, cell spread "
        f"{spread:.2f}x), {elapsed:.0f}s",
    )


def test_synthetic_smile_recovery():
    """Generate quotes from the model, perturb every parameter by +10%,
    and calibrate back under a different seed.  The fit must land at or
    below twice the cross-seed noise floor with nearly every quote inside
    its half-spread."""
    t0 = time.perf_counter()
    layout = SmileLayout(
        spx=((MONTH, (-0.1, -0.05, 0.0, 0.05)),),
        vix=((MONTH, (-0.1, 0.0, 0.1)),),
    )
    mc_data = MCConfig(seed=11)
    mc_fit = MCConfig(seed=22)
    data = synth_smiles(BENCH, layout, mc_data)
    floor = objective(BENCH, data, mc_fit)

    nu0 = ModelParams(alpha=0.561, lam=1.32, a=0.4224, b=0.1045,
                      c=0.00275, z0=0.11)
    spec = GridSpec(half_widths={"alpha": 0.06, "lam": 0.18, "a": 0.06,
                                 "b": 0.015, "c": 0.0004, "z0": 0.015})
    result = grid_search(nu0, data, spec, mc_fit)
    result = refine(result, data, mc_fit, max_evals=60)

    inside = sum(1 for r in result.residuals if abs(r) <= 0.005)
    coverage = inside / len(result.residuals)
    elapsed = time.perf_counter() - t0
    ok = (result.objective <= 2.0 * floor and coverage >= 0.95
          and elapsed < 7200.0)
    report(
        "synthetic smile recovery",
        ok,
        f"F = {result.objective:.3e} vs 2x noise floor = {2 * floor:.3e}, "
        f"{inside}/{len(result.residuals)} quotes within half-spread "
        f"(need 95%), {len(result.trace)} evaluations, "
        f"{elapsed:.0f}s (< 2h)",
    )


def test_bitwise_reproducibility(monkeypatch, tmp_path):
    from qrheston import cli

    cfg = SimConfig(500, 400, MONTH, 91)
    base = simulate(BENCH, bench_curve(), cfg)
    monkeypatch.setenv("QRH_WORKERS", "4")
    wide = simulate(BENCH, bench_curve(), cfg)
    monkeypatch.setenv("QRH_WORKERS", "1")
    narrow = simulate(BENCH, bench_curve(), cfg)
    sim_ok = (np.array_equal(base.z, wide.z) and np.array_equal(base.z, narrow.z)
              and np.array_equal(base.log_spot, narrow.log_spot))

    price_a = price_spx_option(base, 1.0, MONTH).value
    price_b = price_spx_option(narrow, 1.0, MONTH).value
    fut_a = vix_future(base, MONTH, SimConfig(500, 30, CONV.delta, 92)).value
    monkeypatch.setenv("QRH_WORKERS", "3")
    fut_b = vix_future(wide, MONTH, SimConfig(500, 30, CONV.delta, 92)).value

    layout = SmileLayout(spx=((MONTH, (0.0,)),), vix=((MONTH, (0.0,)),))
    mc = MCConfig(n_outer=300, n_inner=20, seed=93)
    data = synth_smiles(BENCH, layout, mc)
    f_a = objective(BENCH.replace(a=0.4), data, mc)
    monkeypatch.setenv("QRH_WORKERS", "1")
    f_b = objective(BENCH.replace(a=0.4), data, mc)

    params_file = tmp_path / "p.cfg"
    params_file.write_text(
        "alpha = 0.51\nlambda = 1.2\na = 0.384\nb = 0.095\nc = 0.0025\n"
        "z0 = 0.1\nmc.outer_paths = 250\nmc.inner_paths = 16\nmc.seed = 3\n"
        "spx.expiries = 0.08\nspx.log_moneyness = 0.0\n"
        "vix.expiries = 0.08\nvix.log_moneyness = 0.0\n"
    )
    monkeypatch.setenv("QRH_WORKERS", "2")
    rc1 = cli.main(["synth", "--params", str(params_file),
                    "--out", str(tmp_path / "r1")])
    monkeypatch.setenv("QRH_WORKERS", "5")
    rc2 = cli.main(["synth", "--params", str(params_file),
                    "--out", str(tmp_path / "r2")])

    def stripped(p):
        with open(p) as f:
            return [ln for ln in f if not ln.startswith("# generated_at")]

    cli_ok = (rc1 == rc2 == 0 and
              stripped(tmp_path / "r1/smiles.csv") == stripped(tmp_path / "r2/smiles.csv"))

    ok = (sim_ok and price_a == price_b and fut_a == fut_b and f_a == f_b
          and cli_ok)
    report(
        "bitwise reproducibility",
        ok,
        f"paths {'equal' if sim_ok else 'DIFFER'}, price equal: "
        f"{price_a == price_b}, future equal: {fut_a == fut_b}, "
        f"objective equal: {f_a == f_b}, CLI bytes equal: {cli_ok}",
    )
