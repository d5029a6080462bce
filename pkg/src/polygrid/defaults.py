"""Shipped default parameter set.

The battery limit lines come from a 422 V / 11.6 kWh Li-ion storage system
measured behind a 15 kW inverter; they are stored in the measurement's
native units (x on the measured energy axis, p in kW) and rescaled to the
simulator's per-unit system (10 kW base) for the default microgrid.
"""

from __future__ import annotations

from polygrid.model import (
    BatteryParams,
    CostCoefficients,
    DroopGains,
    FcParams,
    MicrogridParams,
    PvParams,
)
from polygrid.polytope import AffineMap, StoragePolytope, polytope_from_lines, rescale

# Measured limit lines p = alpha*x + beta in native units, and the native box.
LIMIT_LINE_SLOPES = (0.66, 0.28, -0.01, 0.05)
LIMIT_LINE_OFFSETS = (-4.81, -25.77, -5.21, 19.53)
NATIVE_BOX = (11.31, 86.5, -5.9, 15.0)

# Per-unit box the native measurements map onto (10 kW base).
PU_ENERGY_RANGE = (0.258, 1.972)
PU_POWER_RANGE = (-0.59, 1.5)

DEFAULT_X0 = 1.5
DEFAULT_DELTA_FC0 = 0


def native_storage_polytope() -> StoragePolytope:
    """The measured limit set in native units."""
    return polytope_from_lines(LIMIT_LINE_SLOPES, LIMIT_LINE_OFFSETS, NATIVE_BOX)


def default_storage_polytope() -> StoragePolytope:
    """The measured limit set rescaled to per-unit / per-unit-hours."""
    native = native_storage_polytope()
    x_map = AffineMap.from_intervals((NATIVE_BOX[0], NATIVE_BOX[1]), PU_ENERGY_RANGE)
    p_map = AffineMap.from_intervals((NATIVE_BOX[2], NATIVE_BOX[3]), PU_POWER_RANGE)
    return rescale(native, x_map, p_map)


def default_params() -> MicrogridParams:
    """Case-study parameter set (per unit, 10 kW base)."""
    return MicrogridParams(
        pv=PvParams(p_min=0.0, p_max=4.5),
        fc=FcParams(p_min=0.2, p_max=4.5),
        battery=BatteryParams(polytope=default_storage_polytope()),
        droop=DroopGains(k_b=1.0, k_fc=1.0),
        cost=CostCoefficients(
            c_pv_quad=1.0,
            c_fc_run_fixed=0.13,
            c_fc_run_linear=4.56,
            c_fc_switch=0.2,
            c_b_quad=0.1,
            gamma=0.9,
        ),
        dt_mpc_h=0.5,
        dt_plant_h=1.0 / 60.0,
        horizon_steps=6,
        base_power_kw=10.0,
    )
