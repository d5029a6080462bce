"""Microgrid unit parameters and the pure per-step physics / cost formulas.

Everything here is a plain value type or a pure function; per-unit power
(base 10 kW by default) and per-unit-hour energy are used throughout, with
unit conversion confined to the IO layer.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

from polygrid.polytope import StoragePolytope


@dataclass(frozen=True)
class PvParams:
    """PV output and setpoint box, per unit."""

    p_min: float = 0.0
    p_max: float = 4.5


@dataclass(frozen=True)
class FcParams:
    """Fuel-cell power box while enabled, per unit."""

    p_min: float = 0.2
    p_max: float = 4.5


@dataclass(frozen=True)
class BatteryParams:
    polytope: StoragePolytope


@dataclass(frozen=True)
class DroopGains:
    """Proportional power-sharing gains of the two grid-forming units."""

    k_b: float = 1.0
    k_fc: float = 1.0


@dataclass(frozen=True)
class CostCoefficients:
    """Stage-cost weights: curtailment, fuel-cell running/switching, battery use."""

    c_pv_quad: float = 1.0
    c_fc_run_fixed: float = 0.13
    c_fc_run_linear: float = 4.56
    c_fc_switch: float = 0.2
    c_b_quad: float = 0.1
    gamma: float = 0.9


@dataclass(frozen=True)
class MicrogridParams:
    pv: PvParams
    fc: FcParams
    battery: BatteryParams
    droop: DroopGains
    cost: CostCoefficients
    dt_mpc_h: float = 0.5
    dt_plant_h: float = 1.0 / 60.0
    horizon_steps: int = 6
    base_power_kw: float = 10.0

    @property
    def plant_steps_per_mpc(self) -> int:
        return int(round(self.dt_mpc_h / self.dt_plant_h))


@dataclass
class UnitState:
    """Controller-visible state: stored energy and last applied on/off flag."""

    x: float
    delta_fc_prev: int


def pv_available_from_irradiance(irradiance_wm2, p_max):
    """Available PV power for a measured irradiance.

    Negative readings give zero, readings above 1000 W/m2 saturate at the
    panel maximum, and the conversion is linear in between.  Accepts scalars
    or numpy arrays.
    """
    import numpy as np

    irr = np.asarray(irradiance_wm2, dtype=float)
    out = np.clip(irr / 1000.0, 0.0, 1.0) * p_max
    if out.ndim == 0:
        return float(out)
    return out


def curtailed_pv_output(u_pv: float, w_pv: float) -> float:
    """Realised PV infeed: the setpoint can only curtail, never exceed."""
    return min(u_pv, w_pv)


def soc_step(x: float, p_b: float, dt: float) -> float:
    """Stored energy after running the battery at ``p_b`` for ``dt`` hours."""
    return x - dt * p_b


def stage_cost(p_fc, p_b, p_pv, delta_fc, delta_fc_prev, coeffs: CostCoefficients, p_pv_max):
    """One-step operating cost.

    Spilled renewable potential is charged quadratically against the panel
    maximum, the fuel cell pays a fixed-plus-linear running cost and a
    switching penalty, and battery throughput costs quadratically.
    """
    spill = p_pv_max - p_pv
    switch = delta_fc - delta_fc_prev
    return (
        coeffs.c_pv_quad * spill * spill
        + coeffs.c_fc_run_fixed * delta_fc
        + coeffs.c_fc_run_linear * p_fc
        + coeffs.c_fc_switch * switch * switch
        + coeffs.c_b_quad * p_b * p_b
    )


def validate(params: MicrogridParams, scenario=None) -> list:
    """Collect every violated parameter invariant (empty list means valid).

    With a scenario attached, additionally warns when the peak load falls
    between the battery and PV power ratings, the regime known to provoke
    storage-limit violations under fixed-limit control.
    """
    problems = []
    if not 0.0 <= params.pv.p_min < params.pv.p_max:
        problems.append(f"pv box invalid: [{params.pv.p_min}, {params.pv.p_max}]")
    if not 0.0 <= params.fc.p_min < params.fc.p_max:
        problems.append(f"fc box invalid: [{params.fc.p_min}, {params.fc.p_max}]")
    if not (params.droop.k_b > 0.0 and params.droop.k_fc > 0.0):
        problems.append("droop gains must be strictly positive")
    c = params.cost
    for name in ("c_pv_quad", "c_fc_run_fixed", "c_fc_run_linear", "c_fc_switch", "c_b_quad"):
        if getattr(c, name) < 0.0:
            problems.append(f"cost coefficient {name} must be nonnegative")
    if not 0.0 < c.gamma < 1.0:
        problems.append(f"discount factor must lie in (0, 1), got {c.gamma}")
    if params.dt_plant_h <= 0.0 or params.dt_mpc_h <= 0.0:
        problems.append("sample times must be positive")
    else:
        ratio = params.dt_mpc_h / params.dt_plant_h
        if abs(ratio - round(ratio)) > 1e-9 * max(ratio, 1.0):
            problems.append(
                f"controller sample time must be an integer multiple of the plant "
                f"sample time (ratio {ratio:.6g})"
            )
    if params.horizon_steps < 1:
        problems.append("prediction horizon must be at least 1 step")
    if params.base_power_kw <= 0.0:
        problems.append("base power must be positive")
    poly = params.battery.polytope
    if not poly.x_min < poly.x_max or not poly.p_min < poly.p_max:
        problems.append("battery polytope box is degenerate")

    if scenario is not None and not problems:
        peak_load = float(max(scenario.load_pu))
        if params.pv.p_max > peak_load > poly.p_max:
            warnings.warn(
                "peak load lies between the battery and PV power ratings; "
                "expect storage-limit violations when the controller ignores "
                "the SoC-dependent limits",
                stacklevel=2,
            )
    return problems
