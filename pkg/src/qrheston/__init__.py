"""Quadratic rough Heston: joint SPX/VIX simulation, pricing, calibration."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DataError,
    DomainError,
    InfeasibleGridError,
    NumericalError,
    PriceBoundsError,
    QrhError,
    RangeError,
    UnsupportedParameterError,
)
from .specialfn import (
    KernelSpec,
    fractional_kernel,
    mittag_leffler,
    ml_cdf,
    ml_density,
    resolvent_residual,
)
from .model import (
    ForwardCurve,
    ModelParams,
    forward_theta,
    instantaneous_variance,
    theta0_parametric,
)
from .simulate import (
    PathEnsemble,
    SimConfig,
    estimate_roughness,
    restart,
    simulate,
)
from .impliedvol import (
    VolQuote,
    black_price,
    implied_vol,
    vol_band,
)
from .pricing import (
    PriceEstimate,
    VixConvention,
    price_spx_option,
    price_vix_option,
    vix_future,
    vix_smile,
    vix_squared_at,
)
from .calibrate import (
    CalibrationResult,
    GridSpec,
    MCConfig,
    SmileLayout,
    SmileQuote,
    SmileSet,
    grid_search,
    objective,
    refine,
    synth_smiles,
)

__all__ = [
    "__version__",
    "QrhError",
    "DomainError",
    "RangeError",
    "DataError",
    "ConfigError",
    "NumericalError",
    "UnsupportedParameterError",
    "InfeasibleGridError",
    "PriceBoundsError",
    "KernelSpec",
    "mittag_leffler",
    "ml_density",
    "ml_cdf",
    "fractional_kernel",
    "resolvent_residual",
    "ModelParams",
    "ForwardCurve",
    "instantaneous_variance",
    "theta0_parametric",
    "forward_theta",
    "SimConfig",
    "PathEnsemble",
    "simulate",
    "restart",
    "estimate_roughness",
    "VolQuote",
    "black_price",
    "implied_vol",
    "vol_band",
    "PriceEstimate",
    "VixConvention",
    "vix_squared_at",
    "price_spx_option",
    "vix_future",
    "vix_smile",
    "price_vix_option",
    "MCConfig",
    "SmileQuote",
    "SmileSet",
    "GridSpec",
    "SmileLayout",
    "CalibrationResult",
    "objective",
    "grid_search",
    "refine",
    "synth_smiles",
]
