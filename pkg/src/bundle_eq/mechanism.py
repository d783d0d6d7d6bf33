"""Optimal selling mechanisms against a posterior mean line.

Two regimes, split by the sign pattern of the slopes:

* vertical (all slopes nonnegative): deterministic nested thresholds; the
  bottom type is worst off and no rationing is needed.
* horizontal (some slope negative): the auxiliary program supplies the
  multiplier and a zero-slope rationing lottery sold to every type below
  t-bar; above it the balancing and negative goods go in full, and the
  remaining positive goods enter at ironed-virtual-value thresholds.

Payments follow the envelope formula, so each segment's price is the
segment-start value of the allocation minus the utility accumulated so
far.  Revenue and the worst-off certificate use closed forms of the
partial integrals of Phi, no quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .auxiliary import solve_auxiliary
from .errors import InputError, NumericError
from .ironing import EPS, find_worst_off
from .value_model import TypeLine

__all__ = [
    "MechanismSegment",
    "Mechanism",
    "Menu",
    "optimal_mechanism",
    "worst_off_certificate",
    "revenue",
    "extract_menu",
    "menu_envelope",
    "CertificateResult",
]

_ZERO = 1e-12


# ---------------------------------------------------------------------------
# Types


@dataclass(frozen=True)
class MechanismSegment:
    t_lo: float
    t_hi: float
    x: np.ndarray
    price: float

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        x.setflags(write=False)
        object.__setattr__(self, "x", x)


@dataclass(frozen=True)
class Mechanism:
    """Direct mechanism as ordered constant-allocation segments on [0, 1]."""

    segments: tuple
    t0_star: float
    lam: float
    ironing_interval: tuple
    thresholds: dict
    revenue: float

    def allocation(self, t: float) -> np.ndarray:
        """Allocation at type t; upper segment wins at shared endpoints."""
        for seg in reversed(self.segments):
            if t >= seg.t_lo - _ZERO:
                return seg.x
        return self.segments[0].x

    def price_at(self, t: float) -> float:
        for seg in reversed(self.segments):
            if t >= seg.t_lo - _ZERO:
                return seg.price
        return self.segments[0].price

    def to_dict(self) -> dict:
        return {
            "segments": [
                {
                    "t_lo": round(s.t_lo, 10),
                    "t_hi": round(s.t_hi, 10),
                    "lottery": [round(float(v), 10) for v in s.x],
                    "price": round(s.price, 10),
                }
                for s in self.segments
            ],
            "t0_star": self.t0_star,
            "lambda": self.lam,
            "ironing_interval": list(self.ironing_interval),
            "thresholds": {str(k): v for k, v in self.thresholds.items()},
            "revenue": self.revenue,
        }


@dataclass(frozen=True)
class Menu:
    """Price list of lotteries; the null option (0, 0) is always implicit."""

    options: tuple

    def __post_init__(self):
        opts = []
        for x, p in self.options:
            x = np.asarray(x, dtype=float)
            if np.any(x < -1e-9) or np.any(x > 1.0 + 1e-9):
                raise InputError("menu lottery outside [0,1]: %s" % x)
            if not np.isfinite(p):
                raise InputError("menu price not finite")
            x = np.clip(x, 0.0, 1.0)
            x.setflags(write=False)
            opts.append((x, float(p)))
        object.__setattr__(self, "options", tuple(opts))

    def __len__(self):
        return len(self.options)

    def to_payload(self) -> list:
        return [
            {"lottery": [float(v) for v in x], "price": p}
            for x, p in self.options
        ]

    @classmethod
    def from_payload(cls, payload) -> "Menu":
        if not isinstance(payload, list):
            raise InputError("menu payload must be a list of options")
        opts = []
        for k, entry in enumerate(payload):
            if not isinstance(entry, dict) or "lottery" not in entry or "price" not in entry:
                raise InputError(
                    "menu option %d must be an object with 'lottery' and 'price'" % k
                )
            opts.append((np.asarray(entry["lottery"], dtype=float), float(entry["price"])))
        return cls(options=tuple(opts))


# ---------------------------------------------------------------------------
# Construction


def _threshold(line: TypeLine, ai: float, bi: float, lo: float) -> float:
    """Crossing of a_i * Phi-bar(t; t0) + b_i = 0 on (lo, 1 - EPS].

    Above the worst-off ironing interval the raw value branch is smooth and
    the product single-crosses zero, so a node scan for the sign change
    plus one bracketed root find gives full precision.  The ironed and raw
    curves agree wherever the crossing can land.
    """
    dist = line.F
    t_all, phi_all = dist.virtual_nodes()
    mask = t_all > lo + _ZERO
    t_nodes = t_all[mask]
    h_nodes = ai * phi_all[mask] + bi
    if len(t_nodes) == 0 or h_nodes[0] > 0.0:
        return max(lo, 0.0)
    pos = h_nodes > 0.0
    if not bool(pos.any()):
        raise NumericError(
            "no threshold for good with a=%.4g b=%.4g above %.4g: "
            "h range [%.4g, %.4g]" % (ai, bi, lo, h_nodes.min(), h_nodes.max())
        )
    j = int(np.argmax(pos))

    def h(tt):
        fv = max(dist.f(tt), 1e-300)
        return ai * (tt - (1.0 - dist.cdf(tt)) / fv) + bi

    root = float(brentq(h, t_nodes[j - 1], t_nodes[j], xtol=1e-12))
    return max(root, lo)


def _build_segments(line: TypeLine, cuts, allocs):
    """Envelope payments over constant-allocation segments.

    cuts is the increasing list of segment starts (first equals 0), allocs
    the matching lotteries.  Utility starts at zero at the bottom, which is
    correct in both regimes: the ironing interval pins U = 0 there.
    """
    a, b = line.a, line.b
    segments = []
    U = 0.0
    bounds = list(cuts) + [1.0]
    for j, x in enumerate(allocs):
        s, e = bounds[j], bounds[j + 1]
        if e - s < _ZERO and not (j == 0 and len(allocs) == 1):
            # Degenerate slice; carry utility through without emitting.
            U += float(a @ x) * (e - s)
            continue
        slope = float(a @ x)
        price = slope * s + float(b @ x) - U
        segments.append(MechanismSegment(t_lo=float(s), t_hi=float(e), x=x, price=price))
        U += slope * (e - s)
    return segments


def optimal_mechanism(line: TypeLine, verify: bool = True) -> Mechanism:
    """Revenue-maximizing mechanism against the given posterior line.

    `verify` controls the worst-off fast-path certificate; scans that
    rebuild thousands of mechanisms disable it and re-verify the winner.
    """
    a, b = line.a, line.b
    K = len(a)
    scale = float(np.max(np.abs(a))) or 1.0
    vertical = bool(np.all(a >= -_ZERO * scale))

    if vertical:
        t0_star, interval = 0.0, (0.0, 0.0)
        lam = 0.0
        thresholds = {}
        for i in range(K):
            if a[i] <= _ZERO * scale:
                thresholds[i] = 0.0  # zero-slope goods go to everyone
            else:
                thresholds[i] = _threshold(line, a[i], b[i], 0.0)
        base = np.array([1.0 if thresholds[i] <= _ZERO else 0.0 for i in range(K)])
        cut_vals = sorted({thresholds[i] for i in range(K) if thresholds[i] > _ZERO})
        cuts = [0.0] + cut_vals
        allocs = []
        for s in cuts:
            x = base.copy()
            for i in range(K):
                if _ZERO < thresholds[i] <= s + _ZERO:
                    x[i] = 1.0
            allocs.append(x)
        segments = _build_segments(line, cuts, allocs)
    else:
        aux = solve_auxiliary(a, b)
        lam = aux.lam
        t0_star, interval = find_worst_off(line, lam, verify=verify)
        tbar = interval[1]
        x_dag = np.asarray(aux.x_dagger, dtype=float).copy()
        full = np.zeros(K)
        for i in aux.I_minus:
            full[i] = 1.0
        for i in aux.I_star:
            full[i] = 1.0
        thresholds = {}
        for i in aux.I_plus_nonbal:
            thresholds[i] = _threshold(line, a[i], b[i], tbar)
        if tbar >= 1.0 - 2 * EPS:
            # Ironing swallowed the whole interval: only the rationing
            # lottery is ever sold.
            segments = _build_segments(line, [0.0], [x_dag])
            thresholds = {}
        else:
            cut_vals = sorted({v for v in thresholds.values() if v > tbar + _ZERO})
            cuts = [0.0, tbar] + cut_vals
            allocs = [x_dag]
            for s in cuts[1:]:
                x = full.copy()
                for i, ti in thresholds.items():
                    if ti <= s + _ZERO:
                        x[i] = 1.0
                allocs.append(x)
            segments = _build_segments(line, cuts, allocs)

    segs = tuple(segments)
    rev = _segment_revenue(line, segs)
    return Mechanism(
        segments=segs,
        t0_star=float(t0_star),
        lam=float(lam),
        ironing_interval=(float(interval[0]), float(interval[1])),
        thresholds=thresholds,
        revenue=rev,
    )


def _segment_revenue(line: TypeLine, segments) -> float:
    lo = np.array([s.t_lo for s in segments])
    hi = np.array([s.t_hi for s in segments])
    prices = np.array([s.price for s in segments])
    mass = line.F.m0(lo, hi)
    return float(prices @ mass)


# ---------------------------------------------------------------------------
# Certificates and menu plumbing


@dataclass(frozen=True)
class CertificateResult:
    ok: bool
    margin: float
    t_hat_argmin: float
    value_at_t0: float
    value_min: float


def _virtual_surplus(line: TypeLine, segments, t_hat: np.ndarray) -> np.ndarray:
    """R(t_hat) = E[ sum_i x_i(t) (a_i Phi(t; t_hat) + b_i) ], closed form.

    Uses the exact primitive: the integral of Phi(.; t_hat) dF over [l, u]
    equals u F(u) - l F(l) - (u - c) + (l - c at l) with c = clip(t_hat),
    which follows from the same identity that powers the ironing hull.
    """
    t_hat = np.atleast_1d(np.asarray(t_hat, dtype=float))
    dist = line.F
    a, b = line.a, line.b
    out = np.zeros_like(t_hat)
    for seg in segments:
        l, u = seg.t_lo, seg.t_hi
        if u - l < _ZERO:
            continue
        Fl, Fu = dist.cdf(l), dist.cdf(u)
        mass = dist.m0(l, u)
        # integral of Phi dF on [l, u] for each conjectured stitch
        int_phi = (u * Fu - np.maximum(u - t_hat, 0.0)) - (
            l * Fl - np.maximum(l - t_hat, 0.0)
        )
        slope = float(a @ seg.x)
        inter = float(b @ seg.x)
        out += slope * int_phi + inter * mass
    return out


def worst_off_certificate(mech: Mechanism, line: TypeLine, n_grid: int = 200) -> CertificateResult:
    """Saddle check: t0* must minimize expected virtual surplus on a grid."""
    grid = np.linspace(0.0, 1.0, n_grid)
    vals = _virtual_surplus(line, mech.segments, grid)
    at_t0 = float(_virtual_surplus(line, mech.segments, np.array([mech.t0_star]))[0])
    vmin = float(vals.min())
    scale = max(1.0, float(np.sum(np.abs(line.a)) + np.sum(np.abs(line.b))))
    ok = at_t0 <= vmin + 1e-5 * scale
    return CertificateResult(
        ok=bool(ok),
        margin=float(at_t0 - vmin),
        t_hat_argmin=float(grid[int(vals.argmin())]),
        value_at_t0=at_t0,
        value_min=vmin,
    )


def menu_envelope(line: TypeLine, menu: Menu):
    """Buyer-optimal choice regions for a menu, as exact breakpoints.

    Returns (cuts, choice) where cuts has length m+1 spanning [0, 1] and
    choice[j] is the option index served on [cuts[j], cuts[j+1]] (-1 for
    the null option).  Ties go to the higher price.
    """
    a, b = line.a, line.b
    A = [0.0]
    B = [0.0]
    P = [0.0]
    for x, p in menu.options:
        A.append(float(a @ x))
        B.append(float(b @ x) - p)
        P.append(p)
    A = np.asarray(A)
    B = np.asarray(B)
    P = np.asarray(P)
    order = np.lexsort((-P, B, A))  # slope, then intercept, then price desc
    A, B, P = A[order], B[order], P[order]
    keep_ids = order

    hull = []  # indices into sorted arrays
    for i in range(len(A)):
        if hull and abs(A[hull[-1]] - A[i]) < 1e-14:
            if B[i] <= B[hull[-1]] + 1e-15:
                continue  # dominated or duplicate: first one had higher price
            hull.pop()
        while len(hull) >= 2:
            j, k = hull[-2], hull[-1]
            # x-coordinate where i overtakes j vs where k overtakes j
            lhs = (B[j] - B[i]) * (A[k] - A[j])
            rhs = (B[j] - B[k]) * (A[i] - A[j])
            if lhs <= rhs:
                hull.pop()
            else:
                break
        hull.append(i)

    # Crossing points between consecutive envelope lines.
    xs = []
    for j in range(len(hull) - 1):
        p, q = hull[j], hull[j + 1]
        xs.append((B[p] - B[q]) / (A[q] - A[p]))
    segs = []
    start = 0.0
    for j, line_id in enumerate(hull):
        end = xs[j] if j < len(xs) else 1.0
        lo, hi_ = max(start, 0.0), min(end, 1.0)
        if hi_ > lo + 1e-15:
            segs.append((lo, hi_, line_id))
        start = end
        if start >= 1.0:
            break
    out_cuts = [0.0]
    out_choice = []
    for lo, hi_, line_id in segs:
        out_cuts.append(hi_)
        out_choice.append(int(keep_ids[line_id]) - 1)  # -1 is the null line
    if not out_choice:
        out_cuts = [0.0, 1.0]
        out_choice = [-1]
    out_cuts[-1] = 1.0
    return np.asarray(out_cuts), out_choice


def revenue(menu: Menu, line: TypeLine) -> float:
    """Expected revenue of a menu against the line, buyer best-responding."""
    if len(menu) == 0:
        return 0.0
    cuts, choice = menu_envelope(line, menu)
    mass = line.F.m0(cuts[:-1], cuts[1:])
    total = 0.0
    for j, c in enumerate(choice):
        if c >= 0:
            total += menu.options[c][1] * float(mass[j])
    return float(total)


def extract_menu(mech: Mechanism) -> Menu:
    """Distinct priced options across segments, null dropped.

    Vertical mechanisms must produce a deterministic nested chain; a
    violation means the construction itself went wrong, so it raises.
    """
    seen = {}
    for seg in mech.segments:
        key = (tuple(np.round(seg.x, 10)), round(seg.price, 10))
        if np.all(seg.x < _ZERO) and abs(seg.price) < 1e-9:
            continue
        if key not in seen:
            seen[key] = (seg.x, seg.price)
    options = tuple(seen.values())

    deterministic = all(
        np.all((np.abs(x) < 1e-9) | (np.abs(x - 1.0) < 1e-9)) for x, _ in options
    )
    if deterministic and options:
        sets = sorted(
            (frozenset(int(i) for i in np.nonzero(x > 0.5)[0]) for x, _ in options),
            key=len,
        )
        for s_small, s_big in zip(sets[:-1], sets[1:]):
            if not s_small <= s_big:
                raise NumericError(
                    "deterministic menu is not nested: %s vs %s"
                    % (sorted(s_small), sorted(s_big))
                )
    return Menu(options=options)
