"""Dense convex QP solver and mixed-binary branch-and-bound.

The QP engine is a Mehrotra-style primal-dual interior-point method on the
form ``min 0.5 z'Pz + q'z  s.t.  Az = b, Gz <= h, lb <= z <= ub`` with every
general row carried elastically (a penalised overflow variable), so a single
solve both optimises and certifies infeasibility: a feasible program ends
with zero overflow and the exact optimum (the penalty is exact for penalty
weights above the dual norms), an infeasible one ends at a
violation-minimising point whose overflow is reported.

All state lives in arrays with a leading batch axis, so many programs that
share one constraint structure (e.g. every binary assignment of one MPC
instance) factor and iterate together; scalar solves are a batch of one.
Everything is deterministic for fixed inputs.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration-limit"

_ELASTIC_WEIGHT = 1e5  # exact-penalty weight; must dominate the dual norms
_FEAS_TOL = 1e-7
_REG = 1e-11
_BOX_FLOOR = 1e-9  # minimum half-width kept between tightened bounds
_DIVERGE = 1e10


@dataclass(frozen=True)
class QuadraticProgram:
    """Convex QP data; ``A``/``b`` equalities, ``G``/``h`` inequalities."""

    P: np.ndarray
    q: np.ndarray
    c0: float
    A: np.ndarray
    b: np.ndarray
    G: np.ndarray
    h: np.ndarray
    lb: np.ndarray
    ub: np.ndarray


@dataclass
class QpResult:
    status: str
    x: np.ndarray | None
    objective: float
    max_residual: float
    iterations: int


@dataclass
class MiqpResult:
    status: str
    x: np.ndarray | None
    objective: float
    node_count: int
    gap: float


@dataclass(frozen=True)
class BnbSettings:
    integrality_tol: float = 1e-6
    absolute_gap: float = 1e-6
    node_limit: int = 100_000
    branching: str = "most-fractional"
    exploration: str = "best-first"

    def __post_init__(self):
        if self.integrality_tol <= 0 or self.absolute_gap <= 0:
            raise ValueError("tolerances must be positive")
        if self.branching != "most-fractional":
            raise ValueError(f"unknown branching rule {self.branching!r}")
        if self.exploration != "best-first":
            raise ValueError(f"unknown exploration rule {self.exploration!r}")


# ---------------------------------------------------------------------------
# presolve: fix variables, fold single-variable rows into bounds
# ---------------------------------------------------------------------------


@dataclass
class _Reduced:
    """One batch of structurally identical reduced programs."""

    P: np.ndarray
    q: np.ndarray  # (nk,) or (B, nk)
    c0: np.ndarray  # (B,)
    A: np.ndarray
    b: np.ndarray  # (B, me)
    G: np.ndarray
    h: np.ndarray  # (B, mi)
    lb: np.ndarray  # (B, nk)
    ub: np.ndarray  # (B, nk)
    keep: np.ndarray  # indices of surviving variables in the full space
    fixed: np.ndarray  # indices of eliminated variables
    vals: np.ndarray  # (B, nf) values of the eliminated variables
    a_scale: np.ndarray  # per-row normalisation of A
    g_scale: np.ndarray  # per-row normalisation of G
    infeasible: np.ndarray  # (B,) constant rows or empty boxes already failed

    def assemble(self, z_reduced):
        n_full = self.keep.size + self.fixed.size
        z = np.empty(z_reduced.shape[:-1] + (n_full,))
        z[..., self.keep] = z_reduced
        z[..., self.fixed] = self.vals
        return z


def _presolve(program, fix_idx=None, fix_val=None, batch=1):
    """Reduce a program by eliminating fixed variables.

    ``fix_val`` may carry a batch axis; every batch element must fix the
    same variable set so the reduced programs stay structurally identical.
    Single-variable inequality rows are folded into the bounds, zero rows
    are dropped after a consistency check, and boxes tightened to (near)
    zero width are kept slightly open so the interior-point solver always
    has room.
    """
    P = np.asarray(program.P, dtype=float)
    q = np.asarray(program.q, dtype=float)
    c0 = float(program.c0)
    A = np.asarray(program.A, dtype=float).reshape(-1, P.shape[0])
    b0 = np.asarray(program.b, dtype=float).reshape(-1)
    G = np.asarray(program.G, dtype=float).reshape(-1, P.shape[0])
    h0 = np.asarray(program.h, dtype=float).reshape(-1)
    lb0 = np.asarray(program.lb, dtype=float)
    ub0 = np.asarray(program.ub, dtype=float)
    n = P.shape[0]

    lb = np.broadcast_to(lb0, (batch, n)).copy()
    ub = np.broadcast_to(ub0, (batch, n)).copy()
    if fix_idx is not None and len(fix_idx):
        fix_idx = np.asarray(fix_idx, dtype=int)
        fv = np.asarray(fix_val, dtype=float)
        fv = np.broadcast_to(fv, (batch, fix_idx.size))
        lb[:, fix_idx] = fv
        ub[:, fix_idx] = fv

    fixed_mask = lb[0] == ub[0]
    if batch > 1 and not np.all((lb == ub) == fixed_mask):
        raise ValueError("batched presolve requires a uniform fixed-variable pattern")
    fixed = np.flatnonzero(fixed_mask)
    keep = np.flatnonzero(~fixed_mask)
    vals = lb[:, fixed]

    infeasible = np.zeros(batch, dtype=bool)

    q_r = q[keep]
    c0_r = np.full(batch, c0)
    if fixed.size:
        cross = P[np.ix_(keep, fixed)]
        if np.any(cross):
            q_r = q_r + vals @ cross.T
        Pff = P[np.ix_(fixed, fixed)]
        c0_r = c0 + 0.5 * np.einsum("bi,ij,bj->b", vals, Pff, vals) + vals @ q[fixed]
        b_r = b0 - vals @ A[:, fixed].T if A.size else np.zeros((batch, 0))
        h_r = h0 - vals @ G[:, fixed].T if G.size else np.zeros((batch, 0))
    else:
        b_r = np.broadcast_to(b0, (batch, b0.size)).copy()
        h_r = np.broadcast_to(h0, (batch, h0.size)).copy()
    A_r = A[:, keep]
    G_r = G[:, keep]
    lb_r = lb[:, keep]
    ub_r = ub[:, keep]

    # drop equality rows without surviving variables
    if A_r.shape[0]:
        zero_rows = ~np.any(A_r, axis=1)
        if np.any(zero_rows):
            infeasible |= np.any(np.abs(b_r[:, zero_rows]) > _FEAS_TOL, axis=1)
            A_r = A_r[~zero_rows]
            b_r = b_r[:, ~zero_rows]

    # fold single-variable inequality rows into the box, drop empty rows
    if G_r.shape[0]:
        nz_count = np.count_nonzero(G_r, axis=1)
        zero_rows = np.flatnonzero(nz_count == 0)
        if zero_rows.size:
            infeasible |= np.any(h_r[:, zero_rows] < -_FEAS_TOL, axis=1)
        single_rows = np.flatnonzero(nz_count == 1)
        for r in single_rows:
            j = int(np.flatnonzero(G_r[r])[0])
            g = G_r[r, j]
            bound = h_r[:, r] / g
            if g > 0:
                ub_r[:, j] = np.minimum(ub_r[:, j], bound)
            else:
                lb_r[:, j] = np.maximum(lb_r[:, j], bound)
        keep_rows = nz_count > 1
        G_r = G_r[keep_rows]
        h_r = h_r[:, keep_rows]

    # empty boxes are infeasible; near-empty ones are kept slightly open
    gap = ub_r - lb_r
    infeasible |= np.any(gap < -_FEAS_TOL, axis=1)
    tight = gap < 2 * _BOX_FLOOR
    if np.any(tight):
        centre = 0.5 * (lb_r + ub_r)
        lb_r = np.where(tight, centre - _BOX_FLOOR, lb_r)
        ub_r = np.where(tight, centre + _BOX_FLOOR, ub_r)

    # normalise rows to unit max coefficient
    if A_r.shape[0]:
        a_scale = np.max(np.abs(A_r), axis=1)
        A_r = A_r / a_scale[:, None]
        b_r = b_r / a_scale
    else:
        a_scale = np.zeros(0)
    if G_r.shape[0]:
        g_scale = np.max(np.abs(G_r), axis=1)
        G_r = G_r / g_scale[:, None]
        h_r = h_r / g_scale
    else:
        g_scale = np.zeros(0)

    # Opposite row pairs (g.z <= h_i and -g.z <= h_j) appear once binaries are
    # fixed inside big-M groups.  When the bracket h_i + h_j closes to zero the
    # pair has no slack at any feasible point, which sends the interior-point
    # duals into the elastic cap; keep a floor width between such pairs.
    if G_r.shape[0] > 1:
        probe = G_r @ np.sqrt(np.arange(2, G_r.shape[1] + 2, dtype=float))
        unpaired = np.ones(G_r.shape[0], dtype=bool)
        for i in range(G_r.shape[0]):
            if not unpaired[i]:
                continue
            cand = np.flatnonzero(unpaired & (np.abs(probe + probe[i]) <= 1e-9))
            for j in cand:
                if j == i or not np.allclose(G_r[j], -G_r[i], atol=1e-12, rtol=0.0):
                    continue
                half = 0.5 * (h_r[:, i] + h_r[:, j])
                mid = 0.5 * (h_r[:, i] - h_r[:, j])
                infeasible |= half < -_FEAS_TOL
                closing = half < _BOX_FLOOR
                h_r[:, i] = np.where(closing, mid + _BOX_FLOOR, h_r[:, i])
                h_r[:, j] = np.where(closing, -mid + _BOX_FLOOR, h_r[:, j])
                unpaired[i] = unpaired[j] = False
                break

    return _Reduced(
        P=P[np.ix_(keep, keep)],
        q=q_r,
        c0=c0_r,
        A=A_r,
        b=b_r,
        G=G_r,
        h=h_r,
        lb=lb_r,
        ub=ub_r,
        keep=keep,
        fixed=fixed,
        vals=vals,
        a_scale=a_scale,
        g_scale=g_scale,
        infeasible=infeasible,
    )


# ---------------------------------------------------------------------------
# interior-point core
# ---------------------------------------------------------------------------


def _max_step(pairs):
    """Largest step keeping every (value, delta) pair strictly positive."""
    alpha = None
    for v, dv in pairs:
        if v.shape[-1] == 0:
            continue
        ratio = np.where(dv < 0.0, -v / np.where(dv < 0.0, dv, -1.0), np.inf)
        a = np.min(ratio, axis=-1)
        alpha = a if alpha is None else np.minimum(alpha, a)
    if alpha is None:
        return None
    return alpha


class _IpmState:
    """Batched iterate of the elastic interior-point method."""

    def __init__(self, red: _Reduced, rho: float):
        B, nk = red.lb.shape
        self.rho = rho
        lbf = np.where(np.isfinite(red.lb), red.lb, -1.0)
        ubf = np.where(np.isfinite(red.ub), red.ub, 1.0)
        z = 0.5 * (lbf + ubf)
        z = np.where(np.isfinite(red.lb) & ~np.isfinite(red.ub), red.lb + 1.0, z)
        z = np.where(~np.isfinite(red.lb) & np.isfinite(red.ub), red.ub - 1.0, z)
        z = np.where(~np.isfinite(red.lb) & ~np.isfinite(red.ub), 0.0, z)
        self.z = z
        self.iu = np.flatnonzero(np.isfinite(red.ub[0]))
        self.il = np.flatnonzero(np.isfinite(red.lb[0]))
        self.tu = red.ub[:, self.iu] - z[:, self.iu]
        self.tl = z[:, self.il] - red.lb[:, self.il]
        self.wu = np.ones_like(self.tu)
        self.wl = np.ones_like(self.tl)
        me = red.A.shape[0]
        mi = red.G.shape[0]
        self.y = np.zeros((B, me))
        r_eq = z @ red.A.T - red.b if me else np.zeros((B, 0))
        self.sp = np.maximum(-r_eq, 0.0) + 1.0
        self.sm = np.maximum(r_eq, 0.0) + 1.0
        r_in = z @ red.G.T - red.h if mi else np.zeros((B, 0))
        self.s = np.maximum(-r_in, 0.0) + 1.0
        self.sg = np.maximum(r_in, 0.0) + 1.0
        self.w = np.full((B, mi), 0.5 * rho)
        # distances of the capped multipliers to their caps, carried as
        # explicit state: recomputing rho - w by subtraction would cancel to
        # zero once the gap falls below one ulp of rho
        self.gw = np.full((B, mi), 0.5 * rho)  # rho - w
        self.gyp = np.full((B, me), rho)  # rho + y
        self.gym = np.full((B, me), rho)  # rho - y

    def mu(self):
        total = (
            np.sum(self.s * self.w, axis=1)
            + np.sum(self.sg * self.gw, axis=1)
            + np.sum(self.tu * self.wu, axis=1)
            + np.sum(self.tl * self.wl, axis=1)
            + np.sum(self.sp * self.gyp, axis=1)
            + np.sum(self.sm * self.gym, axis=1)
        )
        n_pairs = (
            2 * self.s.shape[1] + self.tu.shape[1] + self.tl.shape[1] + 2 * self.sp.shape[1]
        )
        return total / max(n_pairs, 1)


def _ipm(red: _Reduced, tol: float, max_iter: int):
    """Solve one reduced batch; returns per-element z, status and violation.

    Elements leave the working batch as they converge (or diverge), so the
    per-iteration factorisation cost tracks the unfinished problems only.
    """
    rho = _ELASTIC_WEIGHT
    B, nk = red.lb.shape
    me = red.A.shape[0]
    mi = red.G.shape[0]
    P, A, G = red.P, red.A, red.G
    q = red.q if red.q.ndim == 2 else np.broadcast_to(red.q, (B, nk))
    st = _IpmState(red, rho)
    iu, il = st.iu, st.il
    b, h = red.b, red.h
    ubv, lbv = red.ub[:, iu].copy(), red.lb[:, il].copy()

    scale_d = 1.0 + float(np.max(np.abs(q))) if q.size else 1.0
    scale_p = 1.0 + max(
        float(np.max(np.abs(red.b))) if red.b.size else 0.0,
        float(np.max(np.abs(red.h))) if red.h.size else 0.0,
    )

    z_out = st.z.copy()
    viol_out = np.zeros(B)
    rd_out = np.full(B, np.inf)
    finished = np.zeros(B, dtype=bool)
    iters_out = np.full(B, max_iter, dtype=int)
    orig = np.arange(B)
    n_pairs = max(2 * mi + iu.size + il.size + 2 * me, 1)
    eye = np.eye(nk + me)

    state_names = (
        "z", "y", "w", "s", "sg", "tu", "wu", "tl", "wl", "sp", "sm", "gw", "gyp", "gym",
    )

    for it in range(max_iter):
        nb = orig.size
        Pz = st.z @ P.T
        r_d = Pz + q
        if me:
            r_d = r_d + st.y @ A
        if mi:
            r_d = r_d + st.w @ G
        if iu.size:
            r_d[:, iu] += st.wu
        if il.size:
            r_d[:, il] -= st.wl
        r_eq = st.z @ A.T + st.sp - st.sm - b if me else np.zeros((nb, 0))
        r_in = st.z @ G.T + st.s - st.sg - h if mi else np.zeros((nb, 0))
        r_u = st.z[:, iu] + st.tu - ubv
        r_l = st.z[:, il] - st.tl - lbv

        mu = st.mu()
        rd_inf = np.max(np.abs(r_d), axis=1) if nk else np.zeros(nb)
        rp_inf = np.zeros(nb)
        for r in (r_eq, r_in, r_u, r_l):
            if r.shape[1]:
                rp_inf = np.maximum(rp_inf, np.max(np.abs(r), axis=1))
        converged = (
            (mu <= tol * scale_d)
            & (rd_inf <= 10 * tol * scale_d)
            & (rp_inf <= 10 * tol * scale_p)
        )
        diverged = (np.max(np.abs(st.z), axis=1) > _DIVERGE) if nk else np.ones(nb, bool)
        leaving = converged | diverged
        if np.any(leaving):
            dst = orig[leaving]
            z_out[dst] = st.z[leaving]
            rd_out[dst] = rd_inf[leaving]
            iters_out[dst] = it
            finished[dst] = converged[leaving]
            viol = np.zeros(dst.size)
            if mi:
                viol = np.maximum(viol, np.max(st.sg[leaving] * red.g_scale, axis=1))
            if me:
                viol = np.maximum(viol, np.max(st.sp[leaving] * red.a_scale, axis=1))
                viol = np.maximum(viol, np.max(st.sm[leaving] * red.a_scale, axis=1))
            viol_out[dst] = viol
            stay = ~leaving
            if not np.any(stay):
                orig = orig[stay]
                break
            orig = orig[stay]
            for name in state_names:
                setattr(st, name, getattr(st, name)[stay])
            b, h = b[stay], h[stay]
            ubv, lbv = ubv[stay], lbv[stay]
            if q.ndim == 2:
                q = q[stay]
            r_d, r_eq, r_in = r_d[stay], r_eq[stay], r_in[stay]
            r_u, r_l = r_u[stay], r_l[stay]
            mu = mu[stay]
            nb = orig.size

        rho_w = st.gw
        rho_yp = st.gyp
        rho_ym = st.gym

        D_in = 1.0 / (st.s / st.w + st.sg / rho_w) if mi else np.zeros((nb, 0))
        E_eq = st.sp / rho_yp + st.sm / rho_ym if me else np.zeros((nb, 0))
        Du = st.wu / st.tu
        Dl = st.wl / st.tl

        K = np.zeros((nb, nk + me, nk + me))
        if mi:
            GD = G[None, :, :] * D_in[:, :, None]
            K[:, :nk, :nk] = P + np.matmul(G.T[None, :, :], GD)
        else:
            K[:, :nk, :nk] = P
        if iu.size:
            K[:, iu, iu] += Du
        if il.size:
            K[:, il, il] += Dl
        if me:
            K[:, :nk, nk:] = A.T
            K[:, nk:, :nk] = A
            idx = np.arange(nk, nk + me)
            K[:, idx, idx] = -E_eq
        # quasidefinite regularisation: +reg on the Hessian block, -reg on
        # the equality block
        K += _REG * np.diag(np.concatenate([np.ones(nk), -np.ones(me)]))
        K_inv = np.linalg.inv(K)

        def solve_direction(rc_s, rc_sg, rc_u2, rc_l2, rc_p, rc_m):
            rhs_z = -r_d
            if mi:
                gterm = D_in * (r_in + rc_s / st.w - rc_sg / rho_w)
                rhs_z = rhs_z - gterm @ G
            if iu.size:
                rhs_z[:, iu] -= (rc_u2 + st.wu * r_u) / st.tu
            if il.size:
                rhs_z[:, il] += (rc_l2 - st.wl * r_l) / st.tl
            if me:
                rhs_y = -r_eq - rc_p / rho_yp + rc_m / rho_ym
                rhs = np.concatenate([rhs_z, rhs_y], axis=1)
            else:
                rhs = rhs_z
            sol = np.matmul(K_inv, rhs[..., None])[..., 0]
            # one refinement pass recovers the accuracy the inverse loses on
            # the late, badly scaled iterations
            resid = rhs - np.matmul(K, sol[..., None])[..., 0]
            sol = sol + np.matmul(K_inv, resid[..., None])[..., 0]
            dz = sol[:, :nk]
            dy = sol[:, nk:]
            dw = (
                D_in * (dz @ G.T + r_in + rc_s / st.w - rc_sg / rho_w)
                if mi
                else np.zeros((nb, 0))
            )
            ds = (rc_s - st.s * dw) / st.w if mi else dw
            dsg = (rc_sg + st.sg * dw) / rho_w if mi else dw
            dtu = -r_u - dz[:, iu]
            dwu = (rc_u2 - st.wu * dtu) / st.tu
            dtl = dz[:, il] + r_l
            dwl = (rc_l2 - st.wl * dtl) / st.tl
            dsp = (rc_p - st.sp * dy) / rho_yp if me else dy
            dsm = (rc_m + st.sm * dy) / rho_ym if me else dy
            return dz, dy, dw, ds, dsg, dtu, dwu, dtl, dwl, dsp, dsm

        # affine direction
        aff = solve_direction(
            -st.s * st.w,
            -st.sg * rho_w,
            -st.tu * st.wu,
            -st.tl * st.wl,
            -st.sp * rho_yp,
            -st.sm * rho_ym,
        )
        dz, dy, dw, ds, dsg, dtu, dwu, dtl, dwl, dsp, dsm = aff
        alpha_aff = _max_step(
            [
                (st.s, ds),
                (st.sg, dsg),
                (st.w, dw),
                (rho_w, -dw),
                (st.tu, dtu),
                (st.wu, dwu),
                (st.tl, dtl),
                (st.wl, dwl),
                (st.sp, dsp),
                (st.sm, dsm),
                (rho_yp, dy),
                (rho_ym, -dy),
            ]
        )
        alpha_aff = np.ones(nb) if alpha_aff is None else np.minimum(alpha_aff, 1.0)
        a = alpha_aff[:, None]
        mu_aff = (
            np.sum((st.s + a * ds) * (st.w + a * dw), axis=1)
            + np.sum((st.sg + a * dsg) * (rho_w - a * dw), axis=1)
            + np.sum((st.tu + a * dtu) * (st.wu + a * dwu), axis=1)
            + np.sum((st.tl + a * dtl) * (st.wl + a * dwl), axis=1)
            + np.sum((st.sp + a * dsp) * (rho_yp + a * dy), axis=1)
            + np.sum((st.sm + a * dsm) * (rho_ym - a * dy), axis=1)
        ) / n_pairs
        sigma = np.clip((mu_aff / np.maximum(mu, 1e-300)) ** 3, 1e-8, 1.0)
        t = (sigma * mu)[:, None]

        # corrector direction
        cor = solve_direction(
            t - st.s * st.w - ds * dw,
            t - st.sg * rho_w + dsg * dw,
            t - st.tu * st.wu - dtu * dwu,
            t - st.tl * st.wl - dtl * dwl,
            t - st.sp * rho_yp - dsp * dy,
            t - st.sm * rho_ym + dsm * dy,
        )
        dz, dy, dw, ds, dsg, dtu, dwu, dtl, dwl, dsp, dsm = cor
        alpha = _max_step(
            [
                (st.s, ds),
                (st.sg, dsg),
                (st.w, dw),
                (rho_w, -dw),
                (st.tu, dtu),
                (st.wu, dwu),
                (st.tl, dtl),
                (st.wl, dwl),
                (st.sp, dsp),
                (st.sm, dsm),
                (rho_yp, dy),
                (rho_ym, -dy),
            ]
        )
        alpha = np.ones(nb) if alpha is None else 0.995 * np.minimum(alpha, 1.0 / 0.995)
        alpha = alpha[:, None]

        st.z = st.z + alpha * dz
        st.y = st.y + alpha * dy
        st.w = st.w + alpha * dw
        # positive quantities stay strictly positive; floor them far below any
        # meaningful scale so stragglers cannot underflow into divide-by-zero
        st.s = np.maximum(st.s + alpha * ds, 1e-250)
        st.sg = np.maximum(st.sg + alpha * dsg, 1e-250)
        st.tu = np.maximum(st.tu + alpha * dtu, 1e-250)
        st.wu = np.maximum(st.wu + alpha * dwu, 1e-250)
        st.tl = np.maximum(st.tl + alpha * dtl, 1e-250)
        st.wl = np.maximum(st.wl + alpha * dwl, 1e-250)
        st.sp = np.maximum(st.sp + alpha * dsp, 1e-250)
        st.sm = np.maximum(st.sm + alpha * dsm, 1e-250)
        st.gw = np.maximum(st.gw - alpha * dw, 1e-250)
        st.gyp = np.maximum(st.gyp + alpha * dy, 1e-250)
        st.gym = np.maximum(st.gym - alpha * dy, 1e-250)

    if orig.size:  # ran out of iterations with elements still active
        z_out[orig] = st.z
        rd_out[orig] = np.inf
        viol_out[orig] = np.inf

    status = np.where(finished, OPTIMAL, ITERATION_LIMIT)
    big = np.max(np.abs(z_out), axis=1) > _DIVERGE if nk else np.zeros(B, bool)
    status = np.where(big, UNBOUNDED, status)
    return z_out, status, viol_out, rd_out, iters_out


def _objective(program, z):
    P = np.asarray(program.P, dtype=float)
    q = np.asarray(program.q, dtype=float)
    return float(0.5 * z @ P @ z + q @ z + program.c0)


def _primal_residual(program, z):
    res = 0.0
    A = np.asarray(program.A, dtype=float)
    if A.size:
        res = max(res, float(np.max(np.abs(A @ z - program.b))))
    G = np.asarray(program.G, dtype=float)
    if G.size:
        res = max(res, float(np.max(G @ z - program.h, initial=0.0)))
    lb = np.asarray(program.lb, dtype=float)
    ub = np.asarray(program.ub, dtype=float)
    res = max(res, float(np.max(lb - z, initial=0.0)))
    res = max(res, float(np.max(z - ub, initial=0.0)))
    return res


def solve_qp(program, tol: float = 1e-9, max_iter: int = 100) -> QpResult:
    """Solve one convex QP (binaries, if any, relaxed to their boxes)."""
    return _solve_fixed(program, None, None, tol, max_iter)


def _solve_fixed(program, fix_idx, fix_val, tol, max_iter) -> QpResult:
    red = _presolve(program, fix_idx, fix_val, batch=1)
    if red.infeasible[0]:
        return QpResult(INFEASIBLE, None, np.inf, np.inf, 0)
    if red.keep.size == 0:
        z = red.assemble(np.zeros((1, 0)))[0]
        resid = _primal_residual(program, z)
        status = OPTIMAL if resid <= _FEAS_TOL else INFEASIBLE
        return QpResult(status, z, _objective(program, z), resid, 0)
    z_r, status, viol, rd, iters = _ipm(red, tol, max_iter)
    z = red.assemble(z_r)[0]
    if status[0] == UNBOUNDED:
        return QpResult(UNBOUNDED, z, -np.inf, np.inf, int(iters[0]))
    if status[0] == ITERATION_LIMIT:
        return QpResult(ITERATION_LIMIT, z, _objective(program, z), np.inf, int(iters[0]))
    if viol[0] > _FEAS_TOL:
        return QpResult(INFEASIBLE, z, np.inf, float(viol[0]), int(iters[0]))
    resid = max(_primal_residual(program, z), float(rd[0]))
    return QpResult(OPTIMAL, z, _objective(program, z), resid, int(iters[0]))


# ---------------------------------------------------------------------------
# mixed-binary solves
# ---------------------------------------------------------------------------


def _binary_indices(program):
    return np.asarray(getattr(program, "binary_idx", ()), dtype=int)


def solve_miqp(program, settings: BnbSettings | None = None) -> MiqpResult:
    """Branch-and-bound over the binary variables of a mixed-binary QP.

    Best-first exploration ordered by relaxation bound, branching on the
    most fractional binary; an integral relaxation is re-solved with the
    binaries pinned so the incumbent satisfies the constraints at solver
    accuracy.  Deterministic for fixed inputs and settings.
    """
    settings = settings or BnbSettings()
    bins = _binary_indices(program)
    if bins.size == 0:
        res = solve_qp(program)
        return MiqpResult(res.status, res.x, res.objective, 1, 0.0)

    counter = itertools.count()
    incumbent = None
    incumbent_obj = np.inf
    nodes = 0
    heap = []

    def relax(fixed: dict):
        idx = np.array(sorted(fixed), dtype=int)
        val = np.array([fixed[i] for i in sorted(fixed)], dtype=float)
        return _solve_fixed(program, idx, val, 1e-9, 100)

    root = relax({})
    nodes += 1
    if root.status == INFEASIBLE:
        return MiqpResult(INFEASIBLE, None, np.inf, nodes, np.inf)
    if root.status == UNBOUNDED:
        return MiqpResult(UNBOUNDED, None, -np.inf, nodes, np.inf)
    heap.append((root.objective, next(counter), {}, root))
    heapq.heapify(heap)

    def try_incumbent(fixed, res):
        nonlocal incumbent, incumbent_obj, nodes
        frac = res.x[bins]
        rounded = np.round(frac)
        if np.max(np.abs(frac - rounded)) > settings.integrality_tol:
            return False
        full = dict(fixed)
        full.update({int(i): float(v) for i, v in zip(bins, rounded)})
        exact = relax(full)
        nodes += 1
        if exact.status == OPTIMAL and exact.objective < incumbent_obj - 1e-12:
            incumbent = exact
            incumbent_obj = exact.objective
        return True

    status = OPTIMAL
    while heap:
        bound, _, fixed, res = heapq.heappop(heap)
        if bound >= incumbent_obj - settings.absolute_gap:
            continue
        if nodes >= settings.node_limit:
            status = ITERATION_LIMIT
            break
        if try_incumbent(fixed, res):
            continue
        frac = res.x[bins]
        dist = np.abs(frac - np.round(frac))
        dist[[i in fixed for i in bins]] = -1.0
        if np.max(dist) < 0.0:
            continue  # every binary pinned yet unusable: nothing to branch on
        j = int(bins[int(np.argmax(dist))])
        for v in (0.0, 1.0):
            child_fixed = dict(fixed)
            child_fixed[j] = v
            child = relax(child_fixed)
            nodes += 1
            if child.status in (INFEASIBLE, UNBOUNDED):
                continue
            # an unconverged relaxation still inherits its parent's valid bound
            child_bound = child.objective if child.status == OPTIMAL else bound
            if child_bound >= incumbent_obj - settings.absolute_gap:
                continue
            heapq.heappush(heap, (child_bound, next(counter), child_fixed, child))

    if incumbent is None:
        if status == ITERATION_LIMIT:
            return MiqpResult(ITERATION_LIMIT, None, np.inf, nodes, np.inf)
        return MiqpResult(INFEASIBLE, None, np.inf, nodes, np.inf)
    outstanding = min((entry[0] for entry in heap), default=incumbent_obj)
    gap = max(0.0, incumbent_obj - min(outstanding, incumbent_obj))
    x = incumbent.x.copy()
    x[bins] = np.round(x[bins])
    return MiqpResult(status, x, incumbent_obj, nodes, gap)


def enumerate_miqp(program, tol: float = 1e-9, chunk: int = 256) -> MiqpResult:
    """Exhaustive oracle: one QP per binary assignment, best feasible wins.

    Assignments are enumerated in lexicographic order and solved in batches
    that share the reduced problem structure.  Capped at 20 binaries.
    """
    bins = _binary_indices(program)
    nb = bins.size
    if nb > 20:
        raise ValueError(f"enumeration capped at 20 binaries, got {nb}")
    if nb == 0:
        res = solve_qp(program)
        return MiqpResult(res.status, res.x, res.objective, 1, 0.0)

    total = 1 << nb
    codes = np.arange(total, dtype=np.int64)
    # lexicographic over (delta_0, delta_1, ...) with delta_0 most significant
    assigns = ((codes[:, None] >> np.arange(nb - 1, -1, -1)[None, :]) & 1).astype(float)

    best_obj = np.inf
    best_z = None
    for start in range(0, total, chunk):
        vals = assigns[start : start + chunk]
        B = vals.shape[0]
        red = _presolve(program, bins, vals, batch=B)
        todo = ~red.infeasible
        if not np.any(todo):
            continue
        sub = _subset_reduced(red, todo)
        if sub.keep.size == 0:
            z_full = sub.assemble(np.zeros((int(np.sum(todo)), 0)))
            resid = np.array([_primal_residual(program, z) for z in z_full])
            ok = resid <= _FEAS_TOL
        else:
            z_r, status, viol, _rd, _ = _ipm(sub, tol, 100)
            z_full = sub.assemble(z_r)
            ok = (status == OPTIMAL) & (viol <= _FEAS_TOL)
        if not np.any(ok):
            continue
        P = np.asarray(program.P, dtype=float)
        q = np.asarray(program.q, dtype=float)
        zi = z_full[ok]
        objs = 0.5 * np.einsum("bi,ij,bj->b", zi, P, zi) + zi @ q + program.c0
        j = int(np.argmin(objs))
        if objs[j] < best_obj - 1e-12:
            best_obj = float(objs[j])
            best_z = zi[j]
    if best_z is None:
        return MiqpResult(INFEASIBLE, None, np.inf, total, np.inf)
    best_z = best_z.copy()
    best_z[bins] = np.round(best_z[bins])
    return MiqpResult(OPTIMAL, best_z, best_obj, total, 0.0)


def _subset_reduced(red: _Reduced, mask):
    return _Reduced(
        P=red.P,
        q=red.q if red.q.ndim == 1 else red.q[mask],
        c0=red.c0[mask],
        A=red.A,
        b=red.b[mask],
        G=red.G,
        h=red.h[mask],
        lb=red.lb[mask],
        ub=red.ub[mask],
        keep=red.keep,
        fixed=red.fixed,
        vals=red.vals[mask],
        a_scale=red.a_scale,
        g_scale=red.g_scale,
        infeasible=red.infeasible[mask],
    )
