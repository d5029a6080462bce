"""Islanded microgrid operation control with SoC-dependent storage power limits."""

from polygrid.polytope import (
    AffineMap,
    HalfPlane,
    LimitSample,
    StoragePolytope,
    contains,
    fit_polytope,
    power_bounds_at,
    rescale,
    violation_magnitude,
)
from polygrid.model import (
    BatteryParams,
    CostCoefficients,
    DroopGains,
    FcParams,
    MicrogridParams,
    PvParams,
    UnitState,
    curtailed_pv_output,
    pv_available_from_irradiance,
    soc_step,
    stage_cost,
    validate,
)
from polygrid.defaults import default_params, default_storage_polytope

__version__ = "0.1.0"
