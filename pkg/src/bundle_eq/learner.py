"""Buyer-side computations: expected utility and direction search.

Expected utility of a direction against a menu is an exact piecewise
integral: every option is a line in the buyer's one-dimensional type, the
buyer follows the upper envelope (null option included), and partial
moments of the universal type distribution finish the job.  No sampling.

Direction search exploits the sign symmetry alpha ~ -alpha: for K = 2 the
half-circle [0, pi) is gridded densely and the leaders refined by golden
section; for K > 2 a spherical-coordinate lattice seeds a simplex polish.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .mechanism import Menu, extract_menu, menu_envelope, optimal_mechanism
from .value_model import Direction, Scenario, TypeLine, posterior_line

__all__ = [
    "SearchConfig",
    "EnvelopeSegments",
    "BestResponse",
    "envelope_segments",
    "eu_of_line",
    "expected_utility",
    "best_direction",
    "buyer_commitment_optimum",
]

_TIE = 1e-9


@dataclass(frozen=True)
class SearchConfig:
    angle_grid: int = 720
    refine_tol: float = 1e-7
    lattice_per_dim: int = 15

    @classmethod
    def from_dict(cls, d: dict) -> "SearchConfig":
        keys = {"angle_grid", "refine_tol", "lattice_per_dim"}
        return cls(**{k: v for k, v in (d or {}).items() if k in keys})


@dataclass(frozen=True)
class EnvelopeSegments:
    """Buyer-optimal choice structure for one line and menu."""

    breakpoints: np.ndarray
    choice: tuple          # option index per segment, -1 for the null option
    slopes: np.ndarray     # payoff slope A on each segment
    intercepts: np.ndarray  # payoff intercept B on each segment


@dataclass(frozen=True)
class BestResponse:
    direction: Direction | None
    expected_utility: float
    search_trace: tuple = field(repr=False, default=())


# ---------------------------------------------------------------------------
# Expected utility


def envelope_segments(line: TypeLine, menu: Menu) -> EnvelopeSegments:
    cuts, choice = menu_envelope(line, menu)
    A = np.zeros(len(choice))
    B = np.zeros(len(choice))
    for j, c in enumerate(choice):
        if c >= 0:
            x, p = menu.options[c]
            A[j] = float(line.a @ x)
            B[j] = float(line.b @ x) - p
    return EnvelopeSegments(
        breakpoints=cuts, choice=tuple(choice), slopes=A, intercepts=B
    )


def eu_of_line(line: TypeLine, menu: Menu) -> float:
    """Expected buyer payoff against the menu, exact envelope integral."""
    if len(menu) == 0:
        return 0.0
    env = envelope_segments(line, menu)
    lo, hi = env.breakpoints[:-1], env.breakpoints[1:]
    m0 = line.F.m0(lo, hi)
    m1 = line.F.m1(lo, hi)
    return float(env.slopes @ m1 + env.intercepts @ m0)


def expected_utility(scenario: Scenario, direction, menu: Menu) -> float:
    if not isinstance(direction, Direction):
        direction = Direction(direction)
    line = posterior_line(scenario, direction)
    return eu_of_line(line, menu)


# ---------------------------------------------------------------------------
# Direction search


def _tie_break(candidates, scenario: Scenario):
    """Best candidate; near-ties prefer vertical, then lexicographic alpha."""
    best_eu = max(eu for _, eu in candidates)
    pool = [(d, eu) for d, eu in candidates if eu >= best_eu - _TIE]

    def key(entry):
        d, _ = entry
        canon = d.canonical(scenario)
        return (not canon.is_vertical(scenario), tuple(np.round(canon.alpha, 12)))

    pool.sort(key=key)
    return pool[0]


def _golden(f, lo: float, hi: float, tol: float):
    """Golden-section maximization on [lo, hi]."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    x = (a + b) / 2.0
    return x, f(x)


def _search_k2(eu_of_angle, config: SearchConfig):
    n = int(config.angle_grid)
    angles = np.linspace(0.0, math.pi, n, endpoint=False)
    vals = np.array([eu_of_angle(th) for th in angles])
    step = math.pi / n
    top = np.argsort(vals)[-3:]
    leaders = []
    for j in top:
        th, v = _golden(eu_of_angle, angles[j] - step, angles[j] + step, config.refine_tol)
        leaders.append((th, v))
    trace = list(zip(angles.tolist(), vals.tolist()))
    return leaders, trace


def _sphere(phis):
    """Spherical coordinates to a unit vector (K = len(phis) + 1)."""
    out = []
    s = 1.0
    for p in phis:
        out.append(s * math.cos(p))
        s *= math.sin(p)
    out.append(s)
    return np.array(out)


def best_direction(scenario: Scenario, menu: Menu, config: SearchConfig | None = None) -> BestResponse:
    """Search the direction sphere for the buyer's best learning choice."""
    config = config or SearchConfig()
    if len(menu) == 0:
        return BestResponse(direction=None, expected_utility=0.0, search_trace=())
    K = scenario.k

    if K == 2:
        def eu_of_angle(th):
            return expected_utility(
                scenario, Direction((math.cos(th), math.sin(th))), menu
            )

        leaders, trace = _search_k2(eu_of_angle, config)
        candidates = [
            (Direction((math.cos(th), math.sin(th))), v) for th, v in leaders
        ]
        d, eu = _tie_break(candidates, scenario)
        return BestResponse(
            direction=d.canonical(scenario),
            expected_utility=float(eu),
            search_trace=tuple(trace),
        )

    # K > 2: lattice over spherical coordinates, then simplex polish.
    m = int(config.lattice_per_dim)
    grids = [np.linspace(0.08, math.pi - 0.08, m)] * (K - 1)
    mesh = np.meshgrid(*grids, indexing="ij")
    phis_all = np.stack([g.ravel() for g in mesh], axis=1)
    extra = [np.eye(K)[i] for i in range(K)] + [np.ones(K) / math.sqrt(K)]

    evaluated = []
    for phis in phis_all:
        alpha = _sphere(phis)
        evaluated.append((phis, expected_utility(scenario, Direction(alpha), menu)))
    seeds = sorted(evaluated, key=lambda e: -e[1])[:5]

    candidates = [(Direction(v), expected_utility(scenario, Direction(v), menu)) for v in extra]
    for phis, _ in seeds:
        res = minimize(
            lambda p: -expected_utility(scenario, Direction(_sphere(p)), menu),
            phis,
            method="Nelder-Mead",
            options={"xatol": config.refine_tol, "fatol": 1e-12, "maxiter": 400},
        )
        candidates.append((Direction(_sphere(res.x)), float(-res.fun)))
    d, eu = _tie_break(candidates, scenario)
    trace = tuple((tuple(p), v) for p, v in evaluated)
    return BestResponse(direction=d.canonical(scenario), expected_utility=float(eu), search_trace=trace)


# ---------------------------------------------------------------------------
# Commitment (buyer moves first, seller best-responds)


def _buyer_value_of_mechanism(line: TypeLine, mech) -> float:
    """E[U(t)] under a mechanism's own segments (IC already certified)."""
    lo = np.array([s.t_lo for s in mech.segments])
    hi = np.array([s.t_hi for s in mech.segments])
    A = np.array([float(line.a @ s.x) for s in mech.segments])
    B = np.array([float(line.b @ s.x) - s.price for s in mech.segments])
    m0 = line.F.m0(lo, hi)
    m1 = line.F.m1(lo, hi)
    return float(A @ m1 + B @ m0)


def buyer_commitment_optimum(scenario: Scenario, config: SearchConfig | None = None):
    """Best direction to commit to, given seller best response.

    Returns (direction, menu, buyer_utility).  The scan uses fast mechanism
    construction; the winner is rebuilt with full verification.
    """
    if scenario.k != 2:
        raise NotImplementedError("commitment scan implemented for K = 2")
    config = config or SearchConfig()

    def value_of_angle(th, fast=True):
        d = Direction((math.cos(th), math.sin(th)))
        line = posterior_line(scenario, d)
        mech = optimal_mechanism(line, verify=not fast)
        return _buyer_value_of_mechanism(line, mech)

    n = int(config.angle_grid)
    angles = np.linspace(0.0, math.pi, n, endpoint=False)
    vals = np.array([value_of_angle(th) for th in angles])
    step = math.pi / n
    leaders = []
    for j in np.argsort(vals)[-3:]:
        th, v = _golden(value_of_angle, angles[j] - step, angles[j] + step, config.refine_tol)
        leaders.append((Direction((math.cos(th), math.sin(th))), v))
    d, eu = _tie_break(leaders, scenario)
    d = d.canonical(scenario)
    line = posterior_line(scenario, d)
    mech = optimal_mechanism(line)
    menu = extract_menu(mech)
    return d, menu, float(_buyer_value_of_mechanism(line, mech))
