"""Convex polytope of admissible battery (energy, power) operating points.

The admissible set is a 2-D H-representation: a box
``[x_min, x_max] x [p_min, p_max]`` intersected with oriented half-planes
``a*x + b*p <= c``.  Planes with ``b > 0`` cap the discharge power from
above, planes with ``b < 0`` restrict the charging power from below.  The
module also fits such polytopes to measured limit curves by segmented
least squares and rescales them between measurement units and per-unit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ABS_TOL = 1e-9

_GRID = 101  # per-axis resolution for construction-time set checks


class PolytopeError(ValueError):
    """Raised when a polytope would violate its structural invariants."""


class EnergyOutOfRangeError(PolytopeError):
    """Raised when an energy coordinate lies outside the polytope box."""


class FitDataError(PolytopeError):
    """Raised when limit samples cannot support the requested envelope fit."""


@dataclass(frozen=True)
class HalfPlane:
    """One oriented inequality ``a*x + b*p <= c`` over (energy, power)."""

    a: float
    b: float
    c: float

    def __post_init__(self):
        if self.a == 0.0 and self.b == 0.0:
            raise PolytopeError("half-plane needs a nonzero normal (a, b)")

    def value(self, x, p):
        return self.a * x + self.b * p - self.c


@dataclass(frozen=True)
class LimitSample:
    """A measured power limit at one energy level.

    ``side`` is ``"U"`` for a discharge (upper) limit sample and ``"L"``
    for a charge (lower) limit sample, matching the CSV column values.
    """

    x: float
    p: float
    side: str

    def __post_init__(self):
        if self.side not in ("U", "L"):
            raise FitDataError(f"sample side must be 'U' or 'L', got {self.side!r}")


@dataclass(frozen=True)
class AffineMap:
    """Strictly increasing affine map given by two anchor points.

    Anchored form keeps interval endpoints exact: ``apply(x1) == y1``
    bit-for-bit, which matters when box corners must land on published
    per-unit bounds.
    """

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ValueError("affine map must be strictly increasing")

    @classmethod
    def from_intervals(cls, src, dst):
        return cls(src[0], dst[0], src[1], dst[1])

    @classmethod
    def identity(cls):
        return cls(0.0, 0.0, 1.0, 1.0)

    @property
    def scale(self):
        return (self.y1 - self.y0) / (self.x1 - self.x0)

    @property
    def offset(self):
        return self.y0 - self.scale * self.x0

    def apply(self, x):
        lam = (x - self.x0) / (self.x1 - self.x0)
        return self.y0 * (1.0 - lam) + self.y1 * lam


@dataclass(frozen=True)
class StoragePolytope:
    """Admissible (energy, power) set: box plus oriented half-planes."""

    x_min: float
    x_max: float
    p_min: float
    p_max: float
    planes: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "planes", tuple(self.planes))
        if not self.x_min < self.x_max:
            raise PolytopeError(f"need x_min < x_max, got [{self.x_min}, {self.x_max}]")
        if not self.p_min < self.p_max:
            raise PolytopeError(f"need p_min < p_max, got [{self.p_min}, {self.p_max}]")
        xs = np.linspace(self.x_min, self.x_max, _GRID)
        lo, hi = self._bounds_arrays(xs)
        bad = xs[(lo > ABS_TOL) | (hi < -ABS_TOL)]
        if bad.size:
            raise PolytopeError(
                f"zero power must be admissible across the box; violated at x={bad[0]:.6g}"
            )
        # With p=0 feasible everywhere the set is trivially nonempty; the grid
        # check below guards against planes that close the box off entirely.
        if not np.any(lo <= hi + ABS_TOL):
            raise PolytopeError("polytope is empty on the sampling grid")

    def _bounds_arrays(self, xs):
        lo = np.full_like(xs, self.p_min, dtype=float)
        hi = np.full_like(xs, self.p_max, dtype=float)
        for pl in self.planes:
            if pl.b > 0.0:
                hi = np.minimum(hi, (pl.c - pl.a * xs) / pl.b)
            elif pl.b < 0.0:
                lo = np.maximum(lo, (pl.c - pl.a * xs) / pl.b)
            # b == 0 planes constrain x only; the box already bounds x.
        return lo, hi

    @property
    def x_span(self):
        return self.x_max - self.x_min


def contains(poly: StoragePolytope, x: float, p: float, tol: float = ABS_TOL) -> bool:
    """Membership test with absolute tolerance on every inequality."""
    if x < poly.x_min - tol or x > poly.x_max + tol:
        return False
    if p < poly.p_min - tol or p > poly.p_max + tol:
        return False
    return all(pl.value(x, p) <= tol for pl in poly.planes)


def power_bounds_at(poly: StoragePolytope, x: float) -> tuple:
    """Admissible power interval ``(p_lo, p_hi)`` at energy ``x``.

    ``x`` must lie inside the box (within tolerance); charge limits come
    from the ``b < 0`` planes and the box floor, discharge limits from the
    ``b > 0`` planes and the box cap.
    """
    if x < poly.x_min - ABS_TOL or x > poly.x_max + ABS_TOL:
        raise EnergyOutOfRangeError(
            f"x={x:.6g} outside energy range [{poly.x_min:.6g}, {poly.x_max:.6g}]"
        )
    lo, hi = poly.p_min, poly.p_max
    for pl in poly.planes:
        if pl.b > 0.0:
            hi = min(hi, (pl.c - pl.a * x) / pl.b)
        elif pl.b < 0.0:
            lo = max(lo, (pl.c - pl.a * x) / pl.b)
    return lo, hi


def violation_magnitude(poly: StoragePolytope, x: float, p: float) -> float:
    """One-dimensional power exceedance at fixed energy, 0 inside the set."""
    xc = min(max(x, poly.x_min), poly.x_max)
    if contains(poly, xc, p):
        return 0.0
    lo, hi = power_bounds_at(poly, xc)
    return max(p - hi, lo - p, 0.0)


def rescale(poly: StoragePolytope, x_map: AffineMap, p_map: AffineMap) -> StoragePolytope:
    """Map the polytope through increasing affine maps on each axis.

    Membership is preserved: ``(x, p)`` is admissible exactly when
    ``(x_map(x), p_map(p))`` is admissible in the result.
    """
    sx, ox = x_map.scale, x_map.offset
    sp, op = p_map.scale, p_map.offset
    planes = []
    for pl in poly.planes:
        # a*x + b*p <= c with x = (x' - ox)/sx, p = (p' - op)/sp
        planes.append(
            HalfPlane(pl.a / sx, pl.b / sp, pl.c + pl.a * ox / sx + pl.b * op / sp)
        )
    return StoragePolytope(
        x_min=x_map.apply(poly.x_min),
        x_max=x_map.apply(poly.x_max),
        p_min=p_map.apply(poly.p_min),
        p_max=p_map.apply(poly.p_max),
        planes=tuple(planes),
    )


def polytope_from_lines(alphas, betas, box) -> StoragePolytope:
    """Build a polytope from limit lines ``p = alpha*x + beta`` plus a box.

    Orientation is assigned automatically: a line whose value at the box
    midpoint is nonnegative acts as a discharge (upper) bound, otherwise as
    a charge (lower) bound.  Lines that are redundant against the box cap or
    floor everywhere are dropped.
    """
    x_min, x_max, p_min, p_max = box
    x_mid = 0.5 * (x_min + x_max)
    planes = []
    for alpha, beta in zip(alphas, betas):
        v_lo = alpha * x_min + beta
        v_hi = alpha * x_max + beta
        if alpha * x_mid + beta >= 0.0:
            # Upper bound p <= alpha*x + beta; redundant if it never dips
            # below the box cap anywhere in the box.
            if min(v_lo, v_hi) >= p_max:
                continue
            planes.append(HalfPlane(-alpha, 1.0, beta))
        else:
            # Lower bound p >= alpha*x + beta; redundant below the box floor.
            if max(v_lo, v_hi) <= p_min:
                continue
            planes.append(HalfPlane(alpha, -1.0, -beta))
    return StoragePolytope(x_min, x_max, p_min, p_max, tuple(planes))


# ---------------------------------------------------------------------------
# Envelope fitting
# ---------------------------------------------------------------------------


def _prefix_moments(xs, ps):
    z = np.zeros(1)
    return (
        np.concatenate([z, np.cumsum(xs)]),
        np.concatenate([z, np.cumsum(ps)]),
        np.concatenate([z, np.cumsum(xs * xs)]),
        np.concatenate([z, np.cumsum(xs * ps)]),
        np.concatenate([z, np.cumsum(ps * ps)]),
    )


def _ols_segment(mom, i, j):
    """Least-squares line and SSE for samples [i, j); requires j - i >= 2."""
    sx, sy, sxx, sxy, syy = (m[j] - m[i] for m in mom)
    n = j - i
    den = n * sxx - sx * sx
    if den <= 1e-12 * max(1.0, sxx):
        # Vertical stack of x values: only fittable when the p values agree.
        if n * syy - sy * sy > 1e-12 * max(1.0, syy):
            raise FitDataError("duplicate x with differing p: limit data is not a function of x")
        return 0.0, sy / n, 0.0
    slope = (n * sxy - sx * sy) / den
    intercept = (sy - slope * sx) / n
    sse = (
        syy
        + slope * slope * sxx
        + n * intercept * intercept
        - 2.0 * slope * sxy
        - 2.0 * intercept * sy
        + 2.0 * slope * intercept * sx
    )
    return slope, intercept, max(sse, 0.0)


def _cap_sse(mom, i, j, cap):
    _, sy, _, _, syy = (m[j] - m[i] for m in mom)
    n = j - i
    return max(syy - 2.0 * cap * sy + n * cap * cap, 0.0)


def _segment_sse_from(mom, starts, j):
    """Vector of OLS SSEs for segments [s, j) over an array of starts."""
    sx = mom[0][j] - mom[0][starts]
    sy = mom[1][j] - mom[1][starts]
    sxx = mom[2][j] - mom[2][starts]
    sxy = mom[3][j] - mom[3][starts]
    syy = mom[4][j] - mom[4][starts]
    n = (j - starts).astype(float)
    den = n * sxx - sx * sx
    safe = den > 1e-12 * np.maximum(1.0, sxx)
    slope = np.where(safe, (n * sxy - sx * sy) / np.where(safe, den, 1.0), 0.0)
    intercept = (sy - slope * sx) / n
    sse = (
        syy
        + slope**2 * sxx
        + n * intercept**2
        - 2.0 * slope * sxy
        - 2.0 * intercept * sy
        + 2.0 * slope * intercept * sx
    )
    return np.maximum(sse, 0.0)


def fit_side_envelope(xs, ps, n_segments, cap, side):
    """Fit one envelope side: ``n_segments`` OLS lines plus the box cap.

    Samples are partitioned contiguously in x; each free group gets its own
    least-squares line and a trailing group may sit on the cap value
    (``p_max`` for the upper side, ``p_min`` for the lower side).  Returns
    ``(lines, sse)`` with lines as (slope, intercept) pairs ordered by x.

    The admissible envelope is the pointwise min (upper) or max (lower) of
    the returned lines and the cap, so fitted slopes must decrease along x
    for the upper side and increase for the lower side; anything else means
    the breakpoint search degenerated and raises :class:`FitDataError`.
    """
    xs = np.asarray(xs, dtype=float)
    ps = np.asarray(ps, dtype=float)
    order = np.argsort(xs, kind="stable")
    xs, ps = xs[order], ps[order]
    m = xs.size
    if n_segments < 1:
        raise FitDataError("need at least one segment per side")
    if m < 2 * n_segments:
        raise FitDataError(
            f"need at least {2 * n_segments} samples for {n_segments} segments, got {m}"
        )
    same = np.diff(xs) < 1e-12
    if np.any(same & (np.abs(np.diff(ps)) > 1e-6)):
        raise FitDataError("duplicate x with differing p: limit data is not a function of x")

    mom = _prefix_moments(xs, ps)
    cap_tail = np.array([_cap_sse(mom, s, m, cap) for s in range(m + 1)])

    if n_segments == 1:
        ends = np.arange(2, m + 1)
        sse_line = np.array([_ols_segment(mom, 0, e)[2] for e in ends])
        total = sse_line + cap_tail[ends]
        j = int(np.argmin(total))
        splits = [0, int(ends[j])]
        best_sse = float(total[j])
    elif n_segments == 2:
        best = (np.inf, None)
        for e2 in range(4, m + 1):
            s2 = np.arange(2, e2 - 1)
            sse2 = _segment_sse_from(mom, s2, e2)
            sse1 = np.array([_ols_segment(mom, 0, s)[2] for s in s2])
            total = sse1 + sse2 + cap_tail[e2]
            j = int(np.argmin(total))
            if total[j] < best[0] - 1e-15:
                best = (float(total[j]), [0, int(s2[j]), e2])
        best_sse, splits = best[0], best[1]
    else:
        # Coordinate descent over breakpoints, seeded at sample quantiles.
        cuts = [0] + [int(round(m * i / n_segments)) for i in range(1, n_segments)] + [m]
        cuts = _monotone_cuts(cuts, m, n_segments)
        cap_start = m
        for _ in range(60):
            changed = False
            for ci in range(1, n_segments):
                lo = cuts[ci - 1] + 2
                hi = min(cuts[ci + 1] - 2, m) if ci + 1 < len(cuts) else m - 2
                if lo > hi:
                    continue
                cand = np.arange(lo, hi + 1)
                left = np.array([_ols_segment(mom, cuts[ci - 1], c)[2] for c in cand])
                right = np.array([_ols_segment(mom, c, cuts[ci + 1])[2] for c in cand])
                j = int(np.argmin(left + right))
                if cand[j] != cuts[ci]:
                    cuts[ci] = int(cand[j])
                    changed = True
            # trailing cap split
            lo = cuts[n_segments - 1] + 2
            cand = np.arange(lo, m + 1)
            tail = np.array([_ols_segment(mom, cuts[n_segments - 1], c)[2] for c in cand])
            j = int(np.argmin(tail + cap_tail[cand]))
            if cand[j] != cap_start:
                cap_start = int(cand[j])
                changed = True
            cuts[n_segments] = cap_start
            if not changed:
                break
        splits = cuts[: n_segments + 1]
        best_sse = sum(
            _ols_segment(mom, splits[i], splits[i + 1])[2] for i in range(n_segments)
        ) + float(cap_tail[splits[-1]])

    lines = [
        _ols_segment(mom, splits[i], splits[i + 1])[:2] for i in range(len(splits) - 1)
    ]
    # The moment formulas carry ~1e-11 cancellation noise; report the final
    # residual directly so exact-fit data really shows a zero residual.
    best_sse = 0.0
    for (slope, intercept), i in zip(lines, range(len(splits) - 1)):
        seg = slice(splits[i], splits[i + 1])
        best_sse += float(np.sum((ps[seg] - slope * xs[seg] - intercept) ** 2))
    best_sse += float(np.sum((ps[splits[-1] :] - cap) ** 2))
    slopes = [ln[0] for ln in lines]
    ordered = all(
        (slopes[i] > slopes[i + 1] - 1e-12) if side == "U" else (slopes[i] < slopes[i + 1] + 1e-12)
        for i in range(len(slopes) - 1)
    )
    if not ordered:
        raise FitDataError(
            "fitted segment slopes are not monotone; breakpoint search degenerated"
        )
    return lines, float(best_sse)


def _monotone_cuts(cuts, m, k):
    out = list(cuts)
    for i in range(1, k):
        out[i] = max(out[i], out[i - 1] + 2)
    out[k] = max(out[k], out[k - 1] + 2)
    if out[k] > m:
        raise FitDataError("too few samples for the requested segment count")
    return out


def fit_polytope(upper, lower, n_upper, n_lower, box) -> StoragePolytope:
    """Fit a storage polytope to measured limit samples.

    ``upper`` and ``lower`` are sequences of :class:`LimitSample` for the
    discharge and charge limit curves.  The upper envelope becomes the
    pointwise minimum of ``n_upper`` least-squares lines and the box cap,
    the lower envelope the pointwise maximum of ``n_lower`` lines and the
    box floor, with breakpoints chosen to minimise the summed squared
    residuals per side.
    """
    x_min, x_max, p_min, p_max = box
    planes = []
    for samples, n_seg, cap, side in (
        (upper, n_upper, p_max, "U"),
        (lower, n_lower, p_min, "L"),
    ):
        xs = np.array([s.x for s in samples], dtype=float)
        ps = np.array([s.p for s in samples], dtype=float)
        bad = [s for s in samples if s.side != side]
        if bad:
            raise FitDataError(f"sample with side {bad[0].side!r} passed to the {side} fit")
        lines, sse = fit_side_envelope(xs, ps, n_seg, cap, side)
        slack = np.sqrt(sse / max(xs.size, 1)) + ABS_TOL
        for slope, intercept in lines:
            if side == "U":
                planes.append(HalfPlane(-slope, 1.0, intercept))
            else:
                planes.append(HalfPlane(slope, -1.0, -intercept))
        _check_sample_feasibility(xs, ps, lines, cap, side, slack)
    return StoragePolytope(x_min, x_max, p_min, p_max, tuple(planes))


def _check_sample_feasibility(xs, ps, lines, cap, side, slack):
    vals = np.full_like(xs, cap)
    for slope, intercept in lines:
        line = slope * xs + intercept
        vals = np.minimum(vals, line) if side == "U" else np.maximum(vals, line)
    gap = ps - vals if side == "U" else vals - ps
    worst = float(np.max(gap)) if gap.size else 0.0
    if worst > max(3.0 * slack, 1e-6):
        raise FitDataError(
            f"samples stick out of the fitted envelope by {worst:.3g}; "
            "increase the segment count or clean the data"
        )
