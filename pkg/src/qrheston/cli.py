"""Command-line surface: simulate paths, price instruments, emit smiles,
run calibrations, generate synthetic fixtures.  Everything is plain CSV
with provenance comment headers, so outputs feed any plotting tool and
reruns with the same config are byte-identical apart from the
``generated_at`` line.

Config files are flat ``key = value`` text with ``#`` comments.  Model
parameters use the keys alpha, lambda, a, b, c, z0; Monte Carlo sizes use
dotted keys (mc.outer_paths, mc.inner_paths, mc.steps_per_year, mc.seed)
and can be overridden by flags; the calibrate command reads grid.* and
refine.* keys, the synth command spx.*/vix.* layout keys.
"""

from __future__ import annotations

import argparse
import datetime
import math
import sys
from pathlib import Path

import numpy as np

from .calibrate import (GridSpec, MCConfig, SmileLayout, SmileSet,
                        grid_search, refine, synth_smiles)
from .errors import DataError, NumericalError, PriceBoundsError, QrhError
from .impliedvol import vol_band
from .model import ForwardCurve, ModelParams
from .pricing import (VixConvention, _future_from_integrals,
                      _inner_window_integrals, _option_from_integrals,
                      price_spx_option)
from .simulate import SimConfig, simulate

MONTH = 30.0 / 365.0
_MC_KEYS = {
    "mc.outer_paths": "n_outer",
    "mc.inner_paths": "n_inner",
    "mc.steps_per_year": "n_steps",
    "mc.seed": "seed",
}
_RESERVED = {"horizon", "label", "expiries", "log_moneyness"}
_SECTION_PREFIXES = ("mc.", "grid.", "refine.", "spx.", "vix.")


def parse_config(path) -> dict:
    """Flat key = value file; '#' starts a comment, blank lines ignored."""
    out = {}
    try:
        with open(path) as f:
            lines = f.readlines()
    except OSError as exc:
        raise DataError(f"cannot read config file {path}: {exc}") from exc
    for i, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{i}: expected key = value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise DataError(f"{path}:{i}: empty key or value")
        if key in out:
            raise DataError(f"{path}:{i}: duplicate key {key!r}")
        out[key] = value
    return out


def _floats(text) -> tuple:
    try:
        return tuple(float(tok) for tok in str(text).split(",") if tok.strip())
    except ValueError as exc:
        raise DataError(f"expected comma-separated numbers, got {text!r}") from exc


def _model_params(cfg) -> ModelParams:
    plain = {
        k: v for k, v in cfg.items()
        if "." not in k and k not in _RESERVED
    }
    return ModelParams.from_mapping(plain)


def _mc_config(cfg, args) -> MCConfig:
    kwargs = {}
    for key, field in _MC_KEYS.items():
        if key in cfg:
            try:
                kwargs[field] = int(cfg[key])
            except ValueError as exc:
                raise DataError(f"{key} must be an integer, got {cfg[key]!r}") from exc
    for flag, field in (("outer_paths", "n_outer"), ("inner_paths", "n_inner"),
                        ("steps_per_year", "n_steps"), ("seed", "seed")):
        value = getattr(args, flag)
        if value is not None:
            kwargs[field] = value
    return MCConfig(**kwargs)


def _provenance(command, params, mc) -> list:
    stamp = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
    pairs = " ".join(f"{k}={v!r}" for k, v in params.to_mapping().items())
    return [
        f"# command: {command}",
        f"# params: {pairs}",
        f"# mc: outer_paths={mc.n_outer} inner_paths={mc.n_inner} "
        f"steps_per_year={mc.n_steps} seed={mc.seed}",
        f"# generated_at: {stamp}",
    ]


def _write_csv(path, header_lines, columns, rows):
    with open(path, "w") as f:
        for line in header_lines:
            f.write(line + "\n")
        f.write(",".join(columns) + "\n")
        for row in rows:
            f.write(",".join(_cell(x) for x in row) + "\n")
    print(f"wrote {path}")


def _cell(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _theta(params, t_max) -> ForwardCurve:
    return ForwardCurve.from_parametric(
        params, np.geomspace(1e-4, t_max * 1.02, 800)
    )


def _expiries(args, cfg, default) -> tuple:
    if args.expiries is not None:
        return _floats(args.expiries)
    if "expiries" in cfg:
        return _floats(cfg["expiries"])
    return default


def _log_moneyness(args, cfg, default) -> tuple:
    if args.log_moneyness is not None:
        return _floats(args.log_moneyness)
    if "log_moneyness" in cfg:
        return _floats(cfg["log_moneyness"])
    return default


def _otm_kind(lm):
    return "put" if lm < 0.0 else "call"


def cmd_simulate(args, cfg, params, mc, out):
    horizon = float(cfg.get("horizon", 1.0))
    if args.expiries is not None:
        horizon = _floats(args.expiries)[0]
    ens = simulate(params, _theta(params, horizon + MONTH),
                   SimConfig(mc.n_steps, mc.n_outer, horizon, mc.seed))
    spot = np.exp(ens.log_spot)
    rows = (
        (p, float(t), float(spot[p, i]), float(ens.z[p, i]), float(ens.v[p, i]))
        for p in range(spot.shape[0])
        for i, t in enumerate(ens.grid)
    )
    _write_csv(out / "paths.csv", _provenance("simulate", params, mc),
               ("path", "t", "S", "Z", "V"), rows)


def cmd_price(args, cfg, params, mc, out):
    expiries = _expiries(args, cfg, (MONTH,))
    lms = _log_moneyness(args, cfg, (-0.2, -0.1, -0.05, 0.0, 0.05))
    curve = _theta(params, max(expiries) + MONTH)
    rows = []
    for expiry in expiries:
        ens = simulate(params, curve,
                       SimConfig(mc.n_steps, mc.n_outer, expiry, mc.seed))
        for lm in lms:
            est = price_spx_option(ens, math.exp(lm), expiry, _otm_kind(lm))
            rows.append(("SPX", float(expiry), float(lm), est.value, est.std_error))
    header = _provenance("price", params, mc)
    header.insert(-1, "# convention: out-of-the-money (put below forward, call at or above)")
    _write_csv(out / "prices.csv", header,
               ("instrument", "expiry_years", "log_moneyness", "price", "std_error"),
               rows)


def _spx_smile_rows(ens, expiry, lms):
    for lm in lms:
        strike = math.exp(lm)
        kind = _otm_kind(lm)
        est = price_spx_option(ens, strike, expiry, kind)
        try:
            lo, mid, hi = vol_band(est.value, est.std_error, 1.0, strike,
                                   expiry, kind)
            yield (float(lm), mid, lo, hi)
        except PriceBoundsError:
            yield (float(lm), math.nan, math.nan, math.nan)


def _vix_smile_rows(ens, expiry, lms, mc, convention):
    inner = SimConfig(mc.n_steps, mc.n_inner, convention.delta, mc.seed)
    integrals = _inner_window_integrals(ens, expiry, inner, convention)
    future = _future_from_integrals(integrals, convention, False)
    for lm in lms:
        strike = future.value * math.exp(lm)
        kind = _otm_kind(lm)
        est = _option_from_integrals(integrals, strike, kind, convention)
        try:
            lo, mid, hi = vol_band(est.value, est.std_error, future.value,
                                   strike, expiry, kind)
            yield (float(lm), mid, lo, hi)
        except PriceBoundsError:
            yield (float(lm), math.nan, math.nan, math.nan)


def cmd_smile(args, cfg, params, mc, out):
    expiries = _expiries(args, cfg, (MONTH,))
    lms = _log_moneyness(args, cfg, (-0.2, -0.15, -0.1, -0.05, 0.0, 0.05))
    instrument = args.instrument
    convention = VixConvention()
    curve = _theta(params, max(expiries) + 2 * convention.delta)
    for expiry in expiries:
        ens = simulate(params, curve,
                       SimConfig(mc.n_steps, mc.n_outer, expiry, mc.seed))
        if instrument == "spx":
            rows = _spx_smile_rows(ens, expiry, lms)
        else:
            rows = _vix_smile_rows(ens, expiry, lms, mc, convention)
        header = _provenance("smile", params, mc)
        header.insert(-1, f"# instrument: {instrument.upper()} expiry_years: {expiry!r}")
        path = out / f"smile_{instrument}_{expiry:g}.csv"
        _write_csv(path, header,
                   ("log_moneyness", "model_vol", "vol_se_lo", "vol_se_hi"), rows)


def cmd_vix_futures(args, cfg, params, mc, out):
    expiries = _expiries(args, cfg, (MONTH,))
    convention = VixConvention()
    curve = _theta(params, max(expiries) + 2 * convention.delta)
    inner = SimConfig(mc.n_steps, mc.n_inner, convention.delta, mc.seed)
    rows = []
    for expiry in expiries:
        ens = simulate(params, curve,
                       SimConfig(mc.n_steps, mc.n_outer, expiry, mc.seed))
        integrals = _inner_window_integrals(ens, expiry, inner, convention)
        est = _future_from_integrals(integrals, convention, False)
        split = est.split_value if est.split_value is not None else math.nan
        rows.append((float(expiry), est.value, est.std_error, split))
    _write_csv(out / "vix_futures.csv", _provenance("vix-futures", params, mc),
               ("expiry_years", "future", "std_error", "split_estimate"), rows)


def _layout_from_config(cfg) -> SmileLayout:
    def side(prefix, default_lms):
        exp_key, lm_key = f"{prefix}.expiries", f"{prefix}.log_moneyness"
        if exp_key not in cfg:
            return ()
        lms = _floats(cfg[lm_key]) if lm_key in cfg else default_lms
        return tuple((t, lms) for t in _floats(cfg[exp_key]))

    spx = side("spx", (-0.1, -0.05, 0.0, 0.05))
    vix = side("vix", (-0.1, 0.0, 0.1))
    if not spx and not vix:
        spx = ((MONTH, (-0.1, -0.05, 0.0, 0.05)),)
        vix = ((MONTH, (-0.1, 0.0, 0.1)),)
    return SmileLayout(spx=spx, vix=vix)


def cmd_synth(args, cfg, params, mc, out):
    layout = _layout_from_config(cfg)
    label = cfg.get("label", "synthetic")
    data = synth_smiles(params, layout, mc, label=label)
    path = out / "smiles.csv"
    data.to_csv(path)
    body = path.read_text()
    header = "\n".join(_provenance("synth", params, mc))
    path.write_text(header + "\n" + body)
    print(f"wrote {path}")


def _default_half_widths(nu0) -> dict:
    """15% of each parameter's magnitude, with alpha kept inside its open
    interval; zero-valued parameters are left off their axis."""
    widths = {}
    for name in ("lam", "a", "b", "c", "z0"):
        v = abs(getattr(nu0, name))
        if v > 0.0:
            widths[name] = 0.15 * v
    lo, hi = 0.5 + 1e-6, 1.0 - 1e-6
    margin = min(nu0.alpha - lo, hi - nu0.alpha)
    if margin > 0.0:
        widths["alpha"] = min(0.15 * nu0.alpha, margin)
    return widths


def cmd_calibrate(args, cfg, params, mc, out):
    if args.data is None:
        raise DataError("calibrate needs --data pointing at a smile CSV")
    data = SmileSet.from_csv(args.data)
    widths = {
        key.split(".", 1)[1]: float(value)
        for key, value in cfg.items()
        if key.startswith("grid.")
        and key.split(".", 1)[1] not in ("n_points", "rounds", "shrink")
    }
    if not widths:
        widths = _default_half_widths(params)
    spec = GridSpec(
        half_widths=widths,
        n_points=int(cfg.get("grid.n_points", 5)),
        rounds=int(cfg.get("grid.rounds", 2)),
        shrink=float(cfg.get("grid.shrink", 0.5)),
    )
    max_evals = int(cfg.get("refine.max_evals", 60))
    result = grid_search(params, data, spec, mc)
    if max_evals > 0:
        result = refine(result, data, mc, max_evals=max_evals)

    report = out / "calibration_report.txt"
    with open(report, "w") as f:
        for line in _provenance("calibrate", params, mc):
            f.write(line + "\n")
        f.write(f"label = {data.label}\n")
        f.write(f"n_quotes = {len(data.quotes)}\n")
        f.write(f"n_evaluations = {len(result.trace)}\n")
        f.write(f"n_excluded = {result.n_excluded}\n")
        f.write(f"valid = {result.valid}\n")
        f.write(f"objective = {result.objective!r}\n")
        for name, value in result.params.to_mapping().items():
            f.write(f"{name} = {value!r}\n")
    print(f"wrote {report}")

    rows = []
    for quote, residual in zip(data.quotes, result.residuals):
        model_vol = quote.mid_vol + residual
        rows.append((quote.instrument, quote.expiry, quote.log_moneyness,
                     quote.mid_vol, model_vol, residual))
    _write_csv(out / "residuals.csv", _provenance("calibrate", result.params, mc),
               ("class", "expiry_years", "log_moneyness", "mid_vol",
                "model_vol", "residual"), rows)
    print(f"objective = {result.objective!r}")


_COMMANDS = {
    "simulate": cmd_simulate,
    "price": cmd_price,
    "smile": cmd_smile,
    "vix-futures": cmd_vix_futures,
    "calibrate": cmd_calibrate,
    "synth": cmd_synth,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qrh",
        description="Quadratic rough Heston: simulation, pricing, calibration.",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--params", required=True, help="model parameter config file")
    parser.add_argument("--data", help="smile CSV (calibrate)")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--outer-paths", type=int, dest="outer_paths")
    parser.add_argument("--inner-paths", type=int, dest="inner_paths")
    parser.add_argument("--steps-per-year", type=int, dest="steps_per_year")
    parser.add_argument("--expiries", help="comma-separated expiries in years")
    parser.add_argument("--log-moneyness", dest="log_moneyness",
                        help="comma-separated log-moneyness grid "
                             "(write --log-moneyness=-0.2,0.0 for negative values)")
    parser.add_argument("--instrument", choices=("spx", "vix"), default="spx",
                        help="smile instrument class")
    return parser


def _failing_module(exc) -> str:
    name = "qrheston"
    tb = exc.__traceback__
    while tb is not None:
        mod = tb.tb_frame.f_globals.get("__name__", "")
        if mod.startswith("qrheston"):
            name = mod
        tb = tb.tb_next
    return name


def run(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = parse_config(args.params)
    params = _model_params(cfg)
    mc = _mc_config(cfg, args)
    _COMMANDS[args.command](args, cfg, params, mc, out)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except NumericalError as exc:
        print(
            f"qrh-error: status=3 type={type(exc).__name__} "
            f"module={_failing_module(exc)} message={str(exc)!r}",
            file=sys.stderr,
        )
        return 3
    except (QrhError, OSError) as exc:
        print(
            f"qrh-error: status=2 type={type(exc).__name__} "
            f"module={_failing_module(exc)} message={str(exc)!r}",
            file=sys.stderr,
        )
        return 2


if __name__ == "__main__":
    sys.exit(main())
