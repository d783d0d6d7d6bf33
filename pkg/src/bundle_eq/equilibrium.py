"""Simultaneous-move equilibria and the seller-commitment benchmark.

The fixed-point engine iterates the two best responses directly: given a
direction, build the revenue-optimal mechanism; given its menu, search the
buyer's best direction.  There is no damping because the seller map is
deterministic; a short cycle detector stops oscillations and reports them
honestly as non-convergence.  Converged candidates are then audited from
both sides (buyer: fresh direction search; seller: virtual-surplus
certificate plus the brute-force menu oracle) before the report may claim
`converged`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InputError, NumericError
from .learner import SearchConfig, best_direction, eu_of_line
from .mechanism import (
    Mechanism,
    Menu,
    extract_menu,
    menu_envelope,
    optimal_mechanism,
    revenue as menu_revenue,
    worst_off_certificate,
)
from .oracle import OracleConfig, _batched_envelope, oracle_seller_best
from .value_model import (
    Direction,
    Scenario,
    coordinate_marginal,
    posterior_line,
)

_ANGLE_TOL = 1e-6
_PRICE_TOL = 1e-6
_CYCLE_WINDOW = 8


@dataclass(frozen=True)
class EquilibriumConfig:
    """Iteration and verification knobs for find_equilibrium."""

    seed: tuple | None = None          # direction seed; None = all-ones
    max_iter: int = 200
    angle_tol: float = _ANGLE_TOL
    price_tol: float = _PRICE_TOL
    cycle_window: int = _CYCLE_WINDOW
    verify_seller: bool = True         # run the menu-grid oracle at the end
    oracle: OracleConfig | None = None
    search: SearchConfig | None = None

    @classmethod
    def from_dict(cls, doc: dict) -> "EquilibriumConfig":
        if not isinstance(doc, dict):
            raise InputError("equilibrium config must be a mapping")
        kw = {}
        for k in ("seed", "max_iter", "angle_tol", "price_tol",
                  "cycle_window", "verify_seller"):
            if k in doc:
                kw[k] = tuple(doc[k]) if k == "seed" and doc[k] is not None else doc[k]
        if "search" in doc:
            kw["search"] = SearchConfig.from_dict(doc["search"])
        return cls(**kw)


@dataclass(frozen=True)
class EquilibriumReport:
    """Outcome of one best-response iteration run plus its audits."""

    direction: Direction | None
    menu: Menu
    revenue: float
    buyer_utility: float
    vertical: bool
    nested_menu: Menu | None
    var_log_theta: tuple
    tiers: tuple
    iterations: int
    convergence_gaps: dict
    converged: bool
    scenario: Scenario = field(repr=False, compare=False, default=None)

    def to_dict(self) -> dict:
        return {
            "direction": None if self.direction is None
            else [float(x) for x in self.direction.alpha],
            "menu": self.menu.to_payload(),
            "revenue": self.revenue,
            "buyer_utility": self.buyer_utility,
            "vertical": self.vertical,
            "nested_menu": None if self.nested_menu is None
            else self.nested_menu.to_payload(),
            "var_log_theta": list(self.var_log_theta),
            "tiers": list(self.tiers),
            "iterations": self.iterations,
            "convergence_gaps": dict(self.convergence_gaps),
            "converged": self.converged,
            "scenario": None if self.scenario is None else self.scenario.to_dict(),
        }


# ---------------------------------------------------------------------------
# report ingredients
# ---------------------------------------------------------------------------


def _menu_price_gap(m_old: Menu, m_new: Menu) -> float:
    """Max price movement between two menus of the same shape, else inf."""
    if len(m_old) != len(m_new):
        return math.inf
    def keyed(m):
        return sorted(((tuple(np.round(x, 9)), p) for x, p in m.options))
    gap = 0.0
    for (xa, pa), (xb, pb) in zip(keyed(m_old), keyed(m_new)):
        if xa != xb:
            return math.inf
        gap = max(gap, abs(pa - pb))
    return gap


def _var_log_theta(line) -> tuple:
    """Var(log theta_i) under F for each good, by quadrature."""
    out = []
    for ai, bi in zip(line.a, line.b):
        if abs(ai) < 1e-14:
            out.append(0.0)
            continue
        def lg(t, ai=ai, bi=bi):
            return np.log(np.maximum(ai * t + bi, 1e-300))
        m = line.F.expect(lambda t: lg(t))
        m2 = line.F.expect(lambda t: lg(t) ** 2)
        out.append(max(m2 - m * m, 0.0))
    return tuple(out)


def _chain_and_tiers(menu: Menu, k: int):
    """Sorted nested chain plus per-good tier index (0 = never allocated).

    Returns (nested_menu | None, tiers).  Tier 1 is the innermost option;
    a good first appearing in the j-th option of the chain has tier j.
    Non-deterministic menus have no chain.
    """
    if not menu.options:
        return None, tuple([0] * k)
    deterministic = all(
        np.all((np.abs(x) < 1e-9) | (np.abs(x - 1.0) < 1e-9))
        for x, _ in menu.options
    )
    if not deterministic:
        return None, tuple([0] * k)
    opts = sorted(menu.options, key=lambda op: (float(np.sum(op[0])), op[1]))
    sets = [frozenset(int(i) for i in np.nonzero(x > 0.5)[0]) for x, _ in opts]
    for s_small, s_big in zip(sets[:-1], sets[1:]):
        if not s_small <= s_big:
            return None, tuple([0] * k)
    tiers = []
    for i in range(k):
        tier = 0
        for j, s in enumerate(sets, start=1):
            if i in s:
                tier = j
                break
        tiers.append(tier)
    return Menu(options=tuple(opts)), tuple(tiers)


# ---------------------------------------------------------------------------
# fixed-point iteration
# ---------------------------------------------------------------------------


def _seed_directions(scenario: Scenario) -> list[Direction]:
    k = scenario.k
    seeds = [np.ones(k)]
    seeds += [np.eye(k)[i] for i in range(k)]
    seeds.append(scenario.cov() @ np.ones(k))
    out = []
    for s in seeds:
        try:
            out.append(Direction(s).canonical(scenario))
        except Exception:
            continue
    return out


def find_equilibrium(scenario: Scenario,
                     config: EquilibriumConfig | None = None) -> EquilibriumReport:
    """Best-response iteration from one seed, with two-sided verification.

    Deterministic: the same scenario and config produce a bit-identical
    report.  Non-convergence (max_iter or a detected cycle) is reported with
    converged=False rather than raised.
    """
    cfg = config or EquilibriumConfig()
    seed = np.ones(scenario.k) if cfg.seed is None else np.asarray(cfg.seed, float)
    direction = Direction(seed).canonical(scenario)

    menu = Menu(options=())
    mech: Mechanism | None = None
    angle_gap = math.inf
    price_gap = math.inf
    it = 0
    seen: list[tuple] = []
    iter_converged = False

    for it in range(1, cfg.max_iter + 1):
        line = posterior_line(scenario, direction)
        mech = optimal_mechanism(line, verify=False)
        new_menu = extract_menu(mech)
        br = best_direction(scenario, new_menu, cfg.search)
        if br.direction is None:
            menu = new_menu
            break
        new_dir = br.direction.canonical(scenario)

        angle_gap = direction.angle_to(new_dir)
        price_gap = _menu_price_gap(menu, new_menu)
        menu = new_menu
        direction = new_dir

        if angle_gap < cfg.angle_tol and price_gap < cfg.price_tol:
            iter_converged = True
            break

        sig = (round(float(np.arctan2(direction.alpha[-1], direction.alpha[0])), 10),
               tuple(round(p, 10) for _, p in menu.options))
        if sig in seen[-cfg.cycle_window:]:
            break
        seen.append(sig)

    # final rebuild with full verification at the last direction
    line = posterior_line(scenario, direction)
    mech = optimal_mechanism(line, verify=True)
    menu = extract_menu(mech)
    rev = mech.revenue
    buyer_eu = eu_of_line(line, menu)

    # buyer-side audit: can any direction do strictly better against menu?
    br = best_direction(scenario, menu, cfg.search)
    buyer_slack = max(0.0, br.expected_utility - buyer_eu)
    buyer_tol = 1e-5 * float(np.sum(scenario.mu))

    # seller-side audit: certificate plus menu-grid oracle
    cert = worst_off_certificate(mech, line)
    seller_gap = 0.0
    if cfg.verify_seller and scenario.k == 2:
        _, oracle_rev = oracle_seller_best(line, cfg.oracle or OracleConfig())
        seller_gap = max(0.0, oracle_rev - rev)
    seller_ok = cert.ok and seller_gap <= 1e-3

    converged = bool(iter_converged and buyer_slack <= buyer_tol and seller_ok)

    nested_menu, tiers = _chain_and_tiers(menu, scenario.k)
    report = EquilibriumReport(
        direction=direction,
        menu=menu,
        revenue=rev,
        buyer_utility=buyer_eu,
        vertical=direction.is_vertical(scenario),
        nested_menu=nested_menu,
        var_log_theta=_var_log_theta(line),
        tiers=tiers,
        iterations=it,
        convergence_gaps={
            "angle_delta": float(angle_gap),
            "revenue_delta": float(price_gap),
            "buyer_slack": float(buyer_slack),
            "seller_gap": float(seller_gap),
        },
        converged=converged,
        scenario=scenario,
    )
    return report


def enumerate_equilibria(scenario: Scenario,
                         config: EquilibriumConfig | None = None) -> tuple:
    """Run find_equilibrium from the standard seed family; dedupe outcomes.

    Seeds: all-ones, each coordinate axis, and the covariance-weighted
    vector.  Returns the reports of the distinct converged fixed points
    (all reports if none converged), in seed order.
    """
    cfg = config or EquilibriumConfig()
    reports = []
    for d in _seed_directions(scenario):
        sub = EquilibriumConfig(
            seed=tuple(float(x) for x in d.alpha),
            max_iter=cfg.max_iter, angle_tol=cfg.angle_tol,
            price_tol=cfg.price_tol, cycle_window=cfg.cycle_window,
            verify_seller=cfg.verify_seller, oracle=cfg.oracle,
            search=cfg.search,
        )
        reports.append(find_equilibrium(scenario, sub))

    winners = [r for r in reports if r.converged]
    if not winners:
        return tuple(reports)
    out: list[EquilibriumReport] = []
    for r in winners:
        dup = any(
            r.direction.angle_to(o.direction) < 1e-5
            and _menu_price_gap(r.menu, o.menu) < 1e-5
            for o in out
        )
        if not dup:
            out.append(r)
    return tuple(out)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OrderingCheck:
    ok: bool
    vacuous: bool
    detail: dict


def verify_ordering(report: EquilibriumReport) -> OrderingCheck:
    """Tier-monotone dispersion audit of a vertical nested outcome.

    Lower tier (earlier in the chain) must mean lower Var(log theta); with
    rho = 0 the adjusted weights sigma_i^2 alpha_i / mu_i must be ordered
    the same way.  Never raises: a report that is not vertical-and-nested
    simply fails with a reason in detail.
    """
    detail: dict = {"var_log_theta": list(report.var_log_theta),
                    "tiers": list(report.tiers)}
    if not report.vertical or report.nested_menu is None:
        detail["reason"] = "report is not a vertical nested outcome"
        return OrderingCheck(ok=False, vacuous=False, detail=detail)
    sc = report.scenario
    if sc is None:
        detail["reason"] = "report carries no scenario"
        return OrderingCheck(ok=False, vacuous=False, detail=detail)

    sold = [i for i, t in enumerate(report.tiers) if t > 0]
    tiers_sold = {report.tiers[i] for i in sold}
    vacuous = len(tiers_sold) <= 1

    ok = True
    for i in sold:
        for j in sold:
            if report.tiers[i] <= report.tiers[j]:
                vi, vj = report.var_log_theta[i], report.var_log_theta[j]
                if vi > vj + 1e-8 * max(1.0, vj):
                    ok = False
                    detail["reason"] = (
                        f"Var(log theta_{i+1}) = {vi:.6g} exceeds "
                        f"Var(log theta_{j+1}) = {vj:.6g} against tier order"
                    )

    if abs(sc.rho) < 1e-15 and report.direction is not None:
        alpha = report.direction.canonical(sc).alpha
        w = (sc.sigma ** 2) * alpha / sc.mu
        detail["adjusted_weights"] = [float(x) for x in w]
        if np.any(w < -1e-12):
            ok = False
            detail["reason"] = "negative adjusted learning weight"
        for i in sold:
            for j in sold:
                if report.tiers[i] <= report.tiers[j] and w[i] > w[j] + 1e-9:
                    ok = False
                    detail["reason"] = (
                        f"adjusted weight order violated on goods "
                        f"{i+1}, {j+1}"
                    )

    return OrderingCheck(ok=ok, vacuous=vacuous, detail=detail)


def check_pure_bundling_condition(scenario: Scenario) -> bool:
    """Exact pairwise balance test for vertical-learning pure bundling."""
    mu, sg, rho = scenario.mu, scenario.sigma, scenario.rho
    total = float(np.sum(sg))
    k = scenario.k
    for i in range(k):
        for j in range(i + 1, k):
            ai = sg[i] ** 2 + rho * sg[i] * (total - sg[i])
            aj = sg[j] ** 2 + rho * sg[j] * (total - sg[j])
            lhs = mu[i] * aj
            rhs = mu[j] * ai
            if abs(lhs - rhs) > 1e-9 * max(1.0, abs(lhs), abs(rhs)):
                return False
    return True


def signal_cost_bound(scenario: Scenario, report: EquilibriumReport) -> float:
    """Lower bound on the info cost that keeps the buyer from deviating.

    Needs a two-good, rho = 0, nested equilibrium whose inner option is a
    single deterministic good at price p; the bound is the base good's
    option value E[max(v - p, 0)] net of the sure surplus mu - p.
    """
    if scenario.k != 2:
        raise InputError("signal_cost_bound is defined for two goods")
    if abs(scenario.rho) > 1e-15:
        raise InputError("signal_cost_bound needs uncorrelated goods")
    if report.nested_menu is None or len(report.nested_menu) < 1:
        raise InputError("signal_cost_bound needs a nested equilibrium menu")
    x0, p0 = report.nested_menu.options[0]
    goods = np.nonzero(np.asarray(x0) > 0.5)[0]
    if len(goods) != 1:
        raise InputError(
            "signal_cost_bound needs a single-good inner option; "
            f"got lottery {list(map(float, x0))}"
        )
    base = int(goods[0])
    cm = coordinate_marginal(scenario, base)
    return float(cm.expected_excess(float(p0))
                 - (float(scenario.mu[base]) - float(p0)))


# ---------------------------------------------------------------------------
# seller commitment: menu-grid search against the buyer's best response
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MenuGridConfig:
    """Grids for seller_commitment_optimum."""

    price_step: float = 0.01
    coarse_step: float = 0.1
    coarse_angles: int = 240
    refine_angles: int = 1440
    top_k: int = 10

    def __post_init__(self):
        if self.price_step <= 0 or self.coarse_step <= 0:
            raise InputError("menu grid steps must be positive")
        if self.coarse_angles < 16 or self.refine_angles < 16:
            raise InputError("menu grid angle counts must be at least 16")

    @classmethod
    def from_dict(cls, doc: dict) -> "MenuGridConfig":
        if not isinstance(doc, dict):
            raise InputError("menu grid config must be a mapping")
        kw = {k: doc[k] for k in
              ("price_step", "coarse_step", "coarse_angles", "refine_angles",
               "top_k") if k in doc}
        return cls(**kw)


def _angle_lines(scenario: Scenario, n: int):
    angles = np.linspace(0.0, math.pi, n, endpoint=False)
    lines = [posterior_line(scenario, Direction((math.cos(t), math.sin(t))))
             for t in angles]
    la = np.stack([ln.a for ln in lines])
    lb = np.stack([ln.b for ln in lines])
    return angles, la, lb, lines[0].F


def _commitment_scan(X: np.ndarray, P: np.ndarray, la, lb, dist,
                     chunk: int = 1500):
    """For each menu: the buyer's best grid angle and the revenue there.

    X: (n, m, 2), P: (n, m); la/lb: (na, 2) posterior-line tables sharing
    one type distribution.  Returns (best_angle_idx, revenue) arrays.
    """
    n, m, _ = X.shape
    na = la.shape[0]
    best_idx = np.empty(n, dtype=int)
    best_rev = np.empty(n)
    for s in range(0, n, chunk):
        Xc = X[s:s + chunk]
        Pc = P[s:s + chunk]
        nc = len(Xc)
        A = np.einsum("ak,nmk->nam", la, Xc).reshape(nc * na, m)
        Bv = np.einsum("ak,nmk->nam", lb, Xc).reshape(nc * na, m)
        Pr = np.repeat(Pc[:, None, :], na, axis=1).reshape(nc * na, m)
        B = Bv - Pr
        cuts, win = _batched_envelope(A, B, Pr)
        Aaug = np.concatenate([A, np.zeros((nc * na, 1))], axis=1)
        Baug = np.concatenate([B, np.zeros((nc * na, 1))], axis=1)
        Paug = np.concatenate([Pr, np.zeros((nc * na, 1))], axis=1)
        Aw = np.take_along_axis(Aaug, win, axis=1)
        Bw = np.take_along_axis(Baug, win, axis=1)
        Pw = np.take_along_axis(Paug, win, axis=1)
        mass0 = dist.m0_table(cuts[:, :-1], cuts[:, 1:])
        mass1 = dist.m1_table(cuts[:, :-1], cuts[:, 1:])
        eu = (Aw * mass1 + Bw * mass0).sum(axis=1).reshape(nc, na)
        rv = (Pw * mass0).sum(axis=1).reshape(nc, na)
        idx = np.argmax(eu, axis=1)
        best_idx[s:s + chunk] = idx
        best_rev[s:s + chunk] = rv[np.arange(nc), idx]
    return best_idx, best_rev


def _span(scenario: Scenario) -> float:
    ones = np.ones(scenario.k)
    return float(np.sum(scenario.mu)
                 + scenario.radius * math.sqrt(ones @ scenario.cov() @ ones))


def _commitment_families(prices: np.ndarray):
    """Deterministic two-good menu families on a shared price grid."""
    from .oracle import (_family_bundle, _family_mixed, _family_nested,
                         _family_separate)
    fams = {}
    fams["bundle"] = _family_bundle(prices, 2)
    fams["nested01"] = _family_nested(prices, 2, (0,))
    fams["nested10"] = _family_nested(prices, 2, (1,))
    fams["separate"] = _family_separate(prices, 2)
    fams["mixed"] = _family_mixed(prices, 2)
    return fams


def seller_commitment_optimum(scenario: Scenario,
                              menu_grid_config: MenuGridConfig | None = None):
    """Best menu to commit to, anticipating the buyer's direction choice.

    Two-stage deterministic grid: coarse scan over the standard menu
    families with a shared angle table, then a fine price box around the
    leaders, then exact re-evaluation (full direction search and exact
    moments) of the final short list.  Returns (menu, direction, revenue).
    """
    if scenario.k != 2:
        raise InputError("seller_commitment_optimum supports two goods")
    cfg = menu_grid_config or MenuGridConfig()
    span = _span(scenario)

    n_coarse = int(math.floor(span / cfg.coarse_step)) + 1
    coarse = np.arange(n_coarse) * cfg.coarse_step
    angles, la, lb, dist = _angle_lines(scenario, cfg.coarse_angles)

    leaders = []  # (rev, family, X_row, P_row)
    for name, (X, P) in _commitment_families(coarse).items():
        if not len(X):
            continue
        _, rev = _commitment_scan(X, P, la, lb, dist)
        order = np.argsort(rev)[::-1][:max(2, cfg.top_k // 2)]
        for i in order:
            leaders.append((float(rev[i]), name, X[i].copy(), P[i].copy()))
    leaders.sort(key=lambda r: -r[0])
    leaders = leaders[:cfg.top_k]

    # fine stage: per-leader price boxes at the target step
    anglesF, laF, lbF, distF = _angle_lines(scenario, cfg.refine_angles)
    refined = []
    half = 1.5 * cfg.coarse_step
    from .oracle import (_family_bundle, _family_mixed, _family_nested,
                         _family_separate, _refine_axis)
    for rev0, name, Xw, Pw in leaders:
        axes = [_refine_axis(p, cfg.price_step, 0.0, span, half) for p in Pw]
        pp = np.unique(np.concatenate(axes))
        if name == "bundle":
            Xr, Pr = _family_bundle(pp, 2)
        elif name == "nested01":
            Xr, Pr = _family_nested(pp, 2, (0,))
        elif name == "nested10":
            Xr, Pr = _family_nested(pp, 2, (1,))
        elif name == "separate":
            Xr, Pr = _family_separate(pp, 2)
        else:
            Xr, Pr = _family_mixed(pp, 2)
        if not len(Xr):
            continue
        idx, rev = _commitment_scan(Xr, Pr, laF, lbF, distF)
        j = int(np.argmax(rev))
        refined.append((float(rev[j]), name, Xr[j].copy(), Pr[j].copy()))
    refined.sort(key=lambda r: -r[0])

    # exact stage: full direction search on the short list
    best = None
    for rev0, name, Xw, Pw in refined[:5]:
        options = tuple(
            (tuple(float(v) for v in Xw[j]), float(Pw[j]))
            for j in range(len(Pw))
        )
        menu = Menu(options=options)
        br = best_direction(scenario, menu)
        if br.direction is None:
            continue
        line = posterior_line(scenario, br.direction)
        rev = menu_revenue(menu, line)
        if best is None or rev > best[2]:
            best = (menu, br.direction, rev)
    if best is None:
        raise NumericError("commitment search produced no evaluable menu")
    return best


# ---------------------------------------------------------------------------
# figure tables
# ---------------------------------------------------------------------------


def figure_rows(scenario: Scenario, report: EquilibriumReport,
                n: int = 201) -> list[dict]:
    """Long-format rows (t, theta_i, chosen option, payoff) for plotting."""
    if report.direction is None:
        raise InputError("figure_rows needs a report with a direction")
    line = posterior_line(scenario, report.direction)
    cuts, choice = menu_envelope(line, report.menu)
    X = [x for x, _ in report.menu.options]
    P = [p for _, p in report.menu.options]
    rows = []
    ts = np.linspace(0.0, 1.0, n)
    for t in ts:
        seg = min(np.searchsorted(cuts, t, side="right") - 1, len(choice) - 1)
        opt = int(choice[seg])
        theta = line.a * t + line.b
        if opt < 0:
            payoff = 0.0
        else:
            payoff = float(np.asarray(X[opt]) @ theta - P[opt])
        row = {"t": float(t)}
        for i, th in enumerate(theta, start=1):
            row[f"theta_{i}"] = float(th)
        row["option"] = opt
        row["payoff"] = payoff
        rows.append(row)
    return rows
