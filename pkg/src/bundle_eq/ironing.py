"""Virtual values, Myerson ironing, and the worst-off type.

The stitched virtual value for a conjectured worst-off type t0 is

    Phi(t; t0) = t + F(t)/f(t)        for t <= t0   (cost branch)
                 t - (1 - F(t))/f(t)  for t >  t0   (value branch)

Ironing replaces Phi by the right-derivative of the lower convex envelope
of H(q; t0) = integral of Phi(F^{-1}(u); t0) du over [0, q].  Both branches
integrate in closed form against f, so H needs no quadrature at all:

    H(q; t0) = t F(t) - max(0, t - t0)   at t = F^{-1}(q).

That identity makes every hull build exact up to grid resolution and keeps
the worst-off search cheap enough to run inside equilibrium iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import NumericError
from .value_model import TypeLine

__all__ = ["VirtualCurve", "phi", "iron", "g_diag", "find_worst_off"]

# Endpoint rule: evaluations clamp to [EPS, 1-EPS]; where the density has
# effectively vanished the affected branch returns +/-SENTINEL instead of
# overflowing.
EPS = 1e-6
SENTINEL = 1e12
_F_FLOOR = 1e-300


# ---------------------------------------------------------------------------
# Raw virtual value


def phi(line: TypeLine, t, t0: float):
    """Stitched virtual value Phi(t; t0) for the line's signal distribution.

    Scalar in, scalar out; arrays broadcast.  The cost branch applies at
    t <= t0, the value branch above, and both are clamped to the sentinel
    band so downstream code never sees inf or nan.
    """
    t_arr = np.clip(np.asarray(t, dtype=float), EPS, 1.0 - EPS)
    scalar = t_arr.ndim == 0
    t_arr = np.atleast_1d(t_arr)
    dist = line.F
    fv = np.maximum(dist.f(t_arr), _F_FLOOR)
    Fv = dist.cdf(t_arr)
    low = t_arr + Fv / fv
    up = t_arr - (1.0 - Fv) / fv
    out = np.where(t_arr <= t0, low, up)
    out = np.clip(out, -SENTINEL, SENTINEL)
    return float(out[0]) if scalar else out


# ---------------------------------------------------------------------------
# Ironing


@dataclass(frozen=True)
class VirtualCurve:
    """Phi and its ironed version on a shared quantile grid.

    `intervals` lists maximal [l, u] stretches where the ironed curve is
    constant and strictly below/above the raw one.  `hull_q` and
    `hull_slope` describe the envelope exactly: the ironed value at any
    interior quantile q is hull_slope[j] for the segment containing q,
    which is what `value_at` looks up.
    """

    t0: float
    grid: np.ndarray
    phi: np.ndarray
    phibar: np.ndarray
    intervals: list
    hull_q: np.ndarray = field(repr=False, default=None)
    hull_slope: np.ndarray = field(repr=False, default=None)
    _q: np.ndarray = field(repr=False, default=None)

    def value_at(self, q) -> np.ndarray:
        """Ironed value at quantile(s) q (right-derivative convention)."""
        q_arr = np.atleast_1d(np.asarray(q, dtype=float))
        j = np.clip(
            np.searchsorted(self.hull_q, q_arr, side="right") - 1,
            0,
            len(self.hull_slope) - 1,
        )
        out = self.hull_slope[j]
        return float(out[0]) if np.ndim(q) == 0 else out


def _lower_hull(q: np.ndarray, h: np.ndarray):
    """Lower convex envelope of the points (q, h), q strictly increasing.

    Returns (indices of hull vertices, segment slopes).  Collinear runs are
    merged so consecutive slopes are strictly increasing.
    """
    n = len(q)
    stack = [0]
    for i in range(1, n):
        while len(stack) >= 2:
            j, k = stack[-2], stack[-1]
            # keep k only if (j, k, i) turns left: slope(j,k) < slope(k,i)
            if (h[k] - h[j]) * (q[i] - q[k]) >= (h[i] - h[k]) * (q[k] - q[j]):
                stack.pop()
            else:
                break
        stack.append(i)
    idx = np.asarray(stack, dtype=int)
    slopes = np.diff(h[idx]) / np.diff(q[idx])
    return idx, slopes


def _grid_for(line: TypeLine, n: int = 4096):
    """Shared quantile grid with exact cdf values, endpoints included."""
    return line.F.ironing_grid(n)


def _h_values(t: np.ndarray, q: np.ndarray, t0: float) -> np.ndarray:
    # H(q; t0) = t F(t) - (t - t0)^+ evaluated along the grid.
    return t * q - np.maximum(t - t0, 0.0)


def iron(line: TypeLine, t0: float, n: int = 4096) -> VirtualCurve:
    """Ironed virtual value Phi-bar(.; t0) via the convexified H.

    The hull is built on the exact (q, H) pairs, so no quadrature error
    enters; resolution is set by the grid alone.
    """
    t, q = _grid_for(line, n)
    if len(t) < 8:
        raise NumericError("ironing grid degenerate: %d nodes" % len(t))
    H = _h_values(t, q, float(t0))
    idx, slopes = _lower_hull(q, H)
    hull_q = q[idx]

    # Right-derivative at every grid node, composed with F.
    j = np.clip(np.searchsorted(hull_q, q, side="right") - 1, 0, len(slopes) - 1)
    phibar = slopes[j]

    inner = slice(1, -1)  # drop the t=0 and t=1 anchors from the report
    phi_vals = phi(line, t[inner], float(t0))
    phibar_vals = np.clip(phibar[inner], -SENTINEL, SENTINEL)

    # Ironing intervals: hull segments that skip at least one grid node.
    intervals = []
    for seg in range(len(idx) - 1):
        lo, hi = idx[seg], idx[seg + 1]
        if hi - lo > 1:
            intervals.append((float(t[lo]), float(t[hi])))

    return VirtualCurve(
        t0=float(t0),
        grid=t[inner],
        phi=phi_vals,
        phibar=phibar_vals,
        intervals=intervals,
        hull_q=hull_q,
        hull_slope=slopes,
        _q=q[inner],
    )


def g_diag(line: TypeLine, t0: float, n: int = 4096) -> float:
    """Diagonal g(t0) = Phi-bar(t0; t0), the ironed value at the stitch."""
    t, q = _grid_for(line, n)
    H = _h_values(t, q, float(t0))
    idx, slopes = _lower_hull(q, H)
    q0 = line.F.cdf(float(np.clip(t0, EPS, 1.0 - EPS)))
    j = int(np.clip(np.searchsorted(q[idx], q0, side="right") - 1, 0, len(slopes) - 1))
    return float(slopes[j])


# ---------------------------------------------------------------------------
# Worst-off type


def _phi_up(dist, t: float) -> float:
    fv = max(dist.f(t), _F_FLOOR)
    return t - (1.0 - dist.cdf(t)) / fv


def _solve_phi_up(dist, lam: float) -> float:
    """Unique root of Phi(t; 0) = lam below the mode; lam <= 0 expected."""
    lo = EPS
    hi = 0.5
    # The value branch is strictly increasing up to 0.5 and nonnegative at
    # 0.5 for every symmetric unimodal F built here; expand right if a very
    # flat density pushes the crossing past the midpoint anyway.
    while _phi_up(dist, hi) < lam and hi < 1.0 - 2 * EPS:
        hi = min(1.0 - EPS, hi + 0.25)
    if not (_phi_up(dist, lo) < lam <= _phi_up(dist, hi) + 1e-12):
        raise NumericError(
            "no bracket for Phi(t;0) = %.6g on [%g, %g]" % (lam, lo, hi)
        )
    return float(brentq(lambda x: _phi_up(dist, x) - lam, lo, hi, xtol=1e-13))


def _verify_fast_path(line: TypeLine, t0: float, tbar: float, lam: float) -> bool:
    """One hull build confirming the conjectured solution.

    Checks that the ironing interval of Phi(.; t0) containing t0 starts at
    0, ends at tbar, and carries ironed value lam.
    """
    curve = iron(line, t0)
    if len(curve.hull_slope) == 0:
        return False
    if abs(curve.hull_slope[0] - lam) > 5e-6 * max(1.0, abs(lam)) + 5e-6:
        return False
    first_end_q = curve.hull_q[1]
    q_tbar = line.F.cdf(tbar)
    if abs(first_end_q - q_tbar) > 2e-3:
        return False
    # t0 must sit inside the first (flat) segment.
    return line.F.cdf(t0) <= first_end_q + 1e-9


def find_worst_off(line: TypeLine, lam: float, verify: bool = True):
    """Worst-off type t0* with g(t0*) = lam, plus its ironing interval.

    Vertical lines (all slopes nonnegative) short-circuit to the bottom
    type.  Otherwise the solution is pinned by two tangency conditions that
    reduce to a single one-dimensional root find:

        Phi(tbar; 0) = lam          (envelope leaves the chord at tbar)
        t0* = tbar - F(tbar)(1 - F(tbar)) / f(tbar)

    One hull build verifies the candidate (skipped when `verify` is False,
    for tight scan loops whose winner is re-verified); if verification
    fails (the envelope geometry was more exotic than the two-condition
    picture) a scan over 256 cells finds the smallest root of g(t0) = lam
    by bisection.
    """
    if bool(np.all(np.asarray(line.a) >= -1e-12)):
        return 0.0, (0.0, 0.0)
    if lam > 1e-12:
        raise NumericError("worst-off multiplier must be <= 0, got %g" % lam)

    dist = line.F
    tbar = _solve_phi_up(dist, lam)
    Fb = dist.cdf(tbar)
    fb = max(dist.f(tbar), _F_FLOOR)
    t0 = float(np.clip(tbar - Fb * (1.0 - Fb) / fb, 0.0, tbar))
    if not verify:
        return t0, (0.0, float(tbar))
    if _verify_fast_path(line, t0, tbar, lam):
        return t0, (0.0, float(tbar))

    # Fallback: smallest root of g - lam on an expanding bracket.
    delta = 1e-4
    grid = np.linspace(delta, 1.0 - delta, 257)
    vals = np.array([g_diag(line, x) - lam for x in grid])
    sign_change = np.nonzero((vals[:-1] <= 0.0) & (vals[1:] > 0.0))[0]
    if len(sign_change) == 0:
        if abs(vals[0]) < 1e-8:
            sign_change = [0]
        else:
            raise NumericError(
                "g(t0) = lambda has no bracket: g(%g)=%.4g g(%g)=%.4g lam=%.4g"
                % (grid[0], vals[0] + lam, grid[-1], vals[-1] + lam, lam)
            )
    j = int(sign_change[0])
    lo, hi = grid[j], grid[min(j + 1, len(grid) - 1)]
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if g_diag(line, mid) - lam <= 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-9:
            break
    t0 = 0.5 * (lo + hi)

    curve = iron(line, t0)
    interval = (0.0, t0)
    for l, u in curve.intervals:
        if l - 1e-9 <= t0 <= u + 1e-9:
            interval = (l, u)
            break
    if interval[0] > 1e-6:
        raise NumericError(
            "ironing interval at t0*=%.6f does not reach 0: [%g, %g]"
            % (t0, interval[0], interval[1])
        )
    return float(t0), (0.0, float(interval[1]))
