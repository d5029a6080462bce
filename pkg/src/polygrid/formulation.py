"""Assembly of one receding-horizon instance as a mixed-binary convex QP.

Decision variables per horizon step j: the setpoints (u_FC, u_B, u_PV), the
realised powers (p_FC, p_B, p_PV), the power-sharing variable mu, the on/off
binaries (delta_FC, delta_PV) and a switching slack; plus the stored energy
x at every step boundary.  The min() curtailment law and the conditional
power-sharing equality are encoded with big-M rows, and the storage polytope
rows can be toggled off to emulate a controller that only knows fixed power
limits.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from polygrid.model import MicrogridParams, stage_cost
from polygrid.polytope import power_bounds_at

_PER_STEP = ("u_fc", "u_b", "u_pv", "p_fc", "p_b", "p_pv", "mu", "delta_fc", "delta_pv", "s_sw")


@dataclass(frozen=True)
class VariableLayout:
    """Dense index map for one horizon of length J."""

    J: int

    def index(self, name: str, j: int) -> int:
        if name == "x":
            if not 0 <= j <= self.J:
                raise IndexError(f"x index {j} outside 0..{self.J}")
            return 10 * self.J + j
        if not 0 <= j < self.J:
            raise IndexError(f"step {j} outside horizon 0..{self.J - 1}")
        return 10 * j + _PER_STEP.index(name)

    @property
    def n_variables(self) -> int:
        return 10 * self.J + (self.J + 1)

    @property
    def binary_indices(self) -> tuple:
        out = []
        for j in range(self.J):
            out.append(self.index("delta_fc", j))
            out.append(self.index("delta_pv", j))
        return tuple(out)

    def names(self) -> list:
        out = [f"{name}[{j}]" for j in range(self.J) for name in _PER_STEP]
        out.extend(f"x[{j}]" for j in range(self.J + 1))
        return out


@dataclass(frozen=True)
class BigMParams:
    """Relaxation constants for the curtailment and power-sharing rows."""

    pv_pos: float
    pv_neg: float
    fc_pos: float
    fc_neg: float


@dataclass(frozen=True)
class MixedBinaryQp:
    """One Problem instance: 0.5 z'Pz + q'z + c0 over affine constraints."""

    P: np.ndarray
    q: np.ndarray
    c0: float
    A: np.ndarray
    b: np.ndarray
    G: np.ndarray
    h: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    binary_idx: tuple
    layout: VariableLayout
    eq_names: tuple
    ineq_names: tuple


@dataclass(frozen=True)
class PlannedTrajectories:
    """Decoded physical trajectories of one solved instance."""

    u_fc: np.ndarray
    u_b: np.ndarray
    u_pv: np.ndarray
    p_fc: np.ndarray
    p_b: np.ndarray
    p_pv: np.ndarray
    mu: np.ndarray
    delta_fc: np.ndarray
    delta_pv: np.ndarray
    s_sw: np.ndarray
    x: np.ndarray
    objective: float


class DecodeError(ValueError):
    """Raised when a raw solver point fails the decode re-checks."""


def compute_big_m(params: MicrogridParams) -> BigMParams:
    """Big-M constants with a 10 % margin over the required strict bounds."""
    pv_span = params.pv.p_max - params.pv.p_min
    mu_max = params.droop.k_b * (
        params.battery.polytope.p_max - params.battery.polytope.p_min
    ) + params.droop.k_fc * params.fc.p_max
    fc_span = params.droop.k_fc * params.fc.p_max + mu_max
    return BigMParams(
        pv_pos=1.1 * pv_span,
        pv_neg=-1.1 * pv_span,
        fc_pos=1.1 * fc_span,
        fc_neg=-1.1 * fc_span,
    )


def build_mpc_problem(
    params: MicrogridParams,
    x0: float,
    delta_prev: int,
    forecasts,
    include_polytope: bool,
) -> MixedBinaryQp:
    """Assemble the horizon program for one control instant.

    ``forecasts`` is a length-J sequence of (available PV power, load) pairs
    in per unit.  With ``include_polytope`` the storage rows constrain both
    the realised battery power and its setpoint at both ends of every
    interval; without it only the box limits remain.
    """
    J = params.horizon_steps
    forecasts = np.asarray(forecasts, dtype=float).reshape(J, 2)
    lay = VariableLayout(J)
    n = lay.n_variables
    poly = params.battery.polytope
    big_m = compute_big_m(params)
    k_b, k_fc = params.droop.k_b, params.droop.k_fc
    cost = params.cost
    gamma = cost.gamma

    if not poly.x_min - 1e-9 <= x0 <= poly.x_max + 1e-9:
        warnings.warn(
            f"initial energy {x0:.6g} outside [{poly.x_min:.6g}, {poly.x_max:.6g}]; clamping",
            stacklevel=2,
        )
    x0 = min(max(x0, poly.x_min), poly.x_max)

    P = np.zeros((n, n))
    q = np.zeros(n)
    c0 = 0.0
    lb = np.full(n, -np.inf)
    ub = np.full(n, np.inf)
    eq_rows, eq_rhs, eq_names = [], [], []
    in_rows, in_rhs, in_names = [], [], []

    def row(entries):
        r = np.zeros(n)
        for name, j, coef in entries:
            r[lay.index(name, j)] += coef
        return r

    def add_eq(entries, rhs, name):
        eq_rows.append(row(entries))
        eq_rhs.append(rhs)
        eq_names.append(name)

    def add_in(entries, rhs, name):
        in_rows.append(row(entries))
        in_rhs.append(rhs)
        in_names.append(name)

    mu_box = big_m.fc_pos / 1.1

    for j in range(J):
        w_pv, w_l = forecasts[j]
        g = gamma ** (j + 1)

        # variable boxes
        lb[lay.index("u_fc", j)], ub[lay.index("u_fc", j)] = 0.0, params.fc.p_max
        lb[lay.index("p_fc", j)], ub[lay.index("p_fc", j)] = 0.0, params.fc.p_max
        lb[lay.index("u_b", j)], ub[lay.index("u_b", j)] = poly.p_min, poly.p_max
        lb[lay.index("p_b", j)], ub[lay.index("p_b", j)] = poly.p_min, poly.p_max
        lb[lay.index("u_pv", j)], ub[lay.index("u_pv", j)] = params.pv.p_min, params.pv.p_max
        lb[lay.index("p_pv", j)], ub[lay.index("p_pv", j)] = params.pv.p_min, params.pv.p_max
        lb[lay.index("mu", j)], ub[lay.index("mu", j)] = -mu_box, mu_box
        lb[lay.index("delta_fc", j)], ub[lay.index("delta_fc", j)] = 0.0, 1.0
        lb[lay.index("delta_pv", j)], ub[lay.index("delta_pv", j)] = 0.0, 1.0
        lb[lay.index("s_sw", j)], ub[lay.index("s_sw", j)] = 0.0, 1.0

        # curtailment: p_pv = min(u_pv, available) through one PV binary
        add_in([("p_pv", j, 1.0), ("u_pv", j, -1.0)], 0.0, f"pv_below_setpoint[{j}]")
        add_in(
            [("u_pv", j, 1.0), ("p_pv", j, -1.0), ("delta_pv", j, -big_m.pv_pos)],
            0.0,
            f"pv_tracks_setpoint[{j}]",
        )
        add_in([("p_pv", j, 1.0)], w_pv, f"pv_below_available[{j}]")
        add_in(
            [("p_pv", j, -1.0), ("delta_pv", j, -big_m.pv_neg)],
            -w_pv - big_m.pv_neg,
            f"pv_tracks_available[{j}]",
        )

        # fuel cell enablement box
        add_in(
            [("p_fc", j, 1.0), ("delta_fc", j, -params.fc.p_max)], 0.0, f"fc_power_cap[{j}]"
        )
        add_in(
            [("p_fc", j, -1.0), ("delta_fc", j, params.fc.p_min)], 0.0, f"fc_power_floor[{j}]"
        )
        add_in(
            [("u_fc", j, 1.0), ("delta_fc", j, -params.fc.p_max)], 0.0, f"fc_setpoint_cap[{j}]"
        )
        add_in(
            [("u_fc", j, -1.0), ("delta_fc", j, params.fc.p_min)],
            0.0,
            f"fc_setpoint_floor[{j}]",
        )

        # conditional power sharing of the fuel cell
        share = [("p_fc", j, k_fc), ("u_fc", j, -k_fc)]
        add_in(share + [("delta_fc", j, -big_m.fc_pos)], 0.0, f"fc_share_cap[{j}]")
        add_in(
            [(nm, jj, -cf) for nm, jj, cf in share] + [("delta_fc", j, big_m.fc_neg)],
            0.0,
            f"fc_share_floor[{j}]",
        )
        add_in(
            share + [("mu", j, -1.0), ("delta_fc", j, -big_m.fc_neg)],
            -big_m.fc_neg,
            f"fc_share_couple_hi[{j}]",
        )
        add_in(
            [(nm, jj, -cf) for nm, jj, cf in share]
            + [("mu", j, 1.0), ("delta_fc", j, big_m.fc_pos)],
            big_m.fc_pos,
            f"fc_share_couple_lo[{j}]",
        )

        # battery always shares
        add_eq(
            [("p_b", j, k_b), ("u_b", j, -k_b), ("mu", j, -1.0)], 0.0, f"battery_share[{j}]"
        )

        # stored-energy dynamics and power equilibrium
        add_eq(
            [("x", j + 1, 1.0), ("x", j, -1.0), ("p_b", j, params.dt_mpc_h)],
            0.0,
            f"energy_dynamics[{j}]",
        )
        add_eq(
            [("p_fc", j, 1.0), ("p_b", j, 1.0), ("p_pv", j, 1.0)], w_l, f"power_balance[{j}]"
        )

        # switching slack linearises the quadratic switching cost exactly
        if j == 0:
            add_in([("delta_fc", 0, 1.0), ("s_sw", 0, -1.0)], float(delta_prev), "switch_up[0]")
            add_in(
                [("delta_fc", 0, -1.0), ("s_sw", 0, -1.0)], -float(delta_prev), "switch_down[0]"
            )
        else:
            add_in(
                [("delta_fc", j, 1.0), ("delta_fc", j - 1, -1.0), ("s_sw", j, -1.0)],
                0.0,
                f"switch_up[{j}]",
            )
            add_in(
                [("delta_fc", j, -1.0), ("delta_fc", j - 1, 1.0), ("s_sw", j, -1.0)],
                0.0,
                f"switch_down[{j}]",
            )

        # storage operating set, applied to both interval ends and both the
        # realised power and the setpoint
        if include_polytope:
            for pi, pl in enumerate(poly.planes):
                for var in ("p_b", "u_b"):
                    for xj in (j, j + 1):
                        add_in(
                            [("x", xj, pl.a), (var, j, pl.b)],
                            pl.c,
                            f"storage_plane{pi}[{var}[{j}],x[{xj}]]",
                        )

        # discounted stage cost
        P[lay.index("p_pv", j), lay.index("p_pv", j)] += 2.0 * g * cost.c_pv_quad
        q[lay.index("p_pv", j)] += -2.0 * g * cost.c_pv_quad * params.pv.p_max
        c0 += g * cost.c_pv_quad * params.pv.p_max**2
        P[lay.index("p_b", j), lay.index("p_b", j)] += 2.0 * g * cost.c_b_quad
        q[lay.index("delta_fc", j)] += g * cost.c_fc_run_fixed
        q[lay.index("p_fc", j)] += g * cost.c_fc_run_linear
        q[lay.index("s_sw", j)] += g * cost.c_fc_switch

    for j in range(J + 1):
        lb[lay.index("x", j)], ub[lay.index("x", j)] = poly.x_min, poly.x_max
    lb[lay.index("x", 0)] = ub[lay.index("x", 0)] = x0

    return MixedBinaryQp(
        P=P,
        q=q,
        c0=c0,
        A=np.array(eq_rows).reshape(-1, n),
        b=np.array(eq_rhs, dtype=float),
        G=np.array(in_rows).reshape(-1, n),
        h=np.array(in_rhs, dtype=float),
        lb=lb,
        ub=ub,
        binary_idx=lay.binary_indices,
        layout=lay,
        eq_names=tuple(eq_names),
        ineq_names=tuple(in_names),
    )


def decode_solution(program: MixedBinaryQp, raw, solver_objective=None) -> PlannedTrajectories:
    """Turn a raw solver point into named trajectories, re-checking it.

    Binaries must sit within 1e-6 of an integer, every constraint residual
    must stay below 1e-6, and the objective recomputed from the stage-cost
    formula must agree with the solver's value when one is supplied.
    """
    raw = np.asarray(raw, dtype=float)
    lay = program.layout
    if raw.shape != (lay.n_variables,):
        raise DecodeError(f"expected {lay.n_variables} values, got {raw.shape}")
    bins = np.array(program.binary_idx, dtype=int)
    frac = np.abs(raw[bins] - np.round(raw[bins]))
    if np.max(frac, initial=0.0) > 1e-6:
        j = int(np.argmax(frac))
        raise DecodeError(f"binary variable {bins[j]} is fractional: {raw[bins[j]]!r}")
    z = raw.copy()
    z[bins] = np.round(z[bins])

    res = 0.0
    if program.A.size:
        res = max(res, float(np.max(np.abs(program.A @ z - program.b))))
    if program.G.size:
        res = max(res, float(np.max(program.G @ z - program.h, initial=0.0)))
    res = max(res, float(np.max(program.lb - z, initial=0.0)))
    res = max(res, float(np.max(z - program.ub, initial=0.0)))
    if res > 1e-6:
        raise DecodeError(f"solution violates the program by {res:.3g}")

    J = lay.J
    pick = lambda name, count: np.array([z[lay.index(name, j)] for j in range(count)])
    traj = PlannedTrajectories(
        u_fc=pick("u_fc", J),
        u_b=pick("u_b", J),
        u_pv=pick("u_pv", J),
        p_fc=pick("p_fc", J),
        p_b=pick("p_b", J),
        p_pv=pick("p_pv", J),
        mu=pick("mu", J),
        delta_fc=pick("delta_fc", J).astype(int),
        delta_pv=pick("delta_pv", J).astype(int),
        s_sw=pick("s_sw", J),
        x=pick("x", J + 1),
        objective=float(0.5 * z @ program.P @ z + program.q @ z + program.c0),
    )
    if solver_objective is not None and abs(traj.objective - solver_objective) > 1e-6:
        raise DecodeError(
            f"objective mismatch: decoded {traj.objective!r} vs solver {solver_objective!r}"
        )
    return traj


def recompute_objective(params: MicrogridParams, traj: PlannedTrajectories, delta_prev: int):
    """Discounted stage-cost sum evaluated from the decoded trajectories."""
    total = 0.0
    prev = delta_prev
    for j in range(params.horizon_steps):
        total += params.cost.gamma ** (j + 1) * stage_cost(
            traj.p_fc[j],
            traj.p_b[j],
            traj.p_pv[j],
            traj.delta_fc[j],
            prev,
            params.cost,
            params.pv.p_max,
        )
        prev = traj.delta_fc[j]
    return total


def first_control(traj: PlannedTrajectories) -> tuple:
    """Setpoints applied to the plant: step-0 entries of the plan."""
    return (
        float(traj.u_fc[0]),
        float(traj.u_b[0]),
        float(traj.u_pv[0]),
        int(traj.delta_fc[0]),
    )


def format_program(program: MixedBinaryQp) -> str:
    """Human-readable listing of one built program, one constraint per line."""
    names = program.layout.names()
    lines = [
        f"variables {program.lb.size}  equalities {program.b.size}  "
        f"inequalities {program.h.size}  binaries {len(program.binary_idx)}"
    ]

    def term(coef, idx):
        return f"{coef:+.6g}*{names[idx]}"

    for label, M, rhs, sep in (
        ("eq", program.A, program.b, "=="),
        ("in", program.G, program.h, "<="),
    ):
        row_names = program.eq_names if label == "eq" else program.ineq_names
        for rname, r, v in zip(row_names, M, rhs):
            body = " ".join(term(c, i) for i, c in enumerate(r) if c != 0.0)
            lines.append(f"{rname}: {body} {sep} {v:.6g}")
    for i, nm in enumerate(names):
        lines.append(f"bound: {program.lb[i]:.6g} <= {nm} <= {program.ub[i]:.6g}")
    return "\n".join(lines) + "\n"


def planned_power_bounds(params: MicrogridParams, traj: PlannedTrajectories):
    """Admissible battery band along the planned energy path (debug aid)."""
    poly = params.battery.polytope
    return np.array([power_bounds_at(poly, x) for x in traj.x])
