"""Brute-force cross-checks: menu grids, angle grids, Monte Carlo.

Everything here is deliberately dumb.  The solvers in mechanism.py and
learner.py are clever and therefore suspect; the routines in this module
re-derive the same quantities by exhaustive enumeration or simulation so
the two can be compared in tests.  Nothing in the package imports oracle
results for production answers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .errors import BudgetError, InputError, NumericError
from .mechanism import Menu
from .value_model import (
    Direction,
    Scenario,
    TypeLine,
    coordinate_marginal,
    posterior_line,
)

# Hard ceiling on the number of (menu, segment) cells a single grid stage may
# enumerate.  Above this the caller is told to coarsen rather than left to
# swap.
_CELL_BUDGET = 60_000_000


@dataclass(frozen=True)
class OracleConfig:
    """Knobs for the exhaustive searches.

    price_grid_step / lottery_grid_step control the seller menu grids,
    angle_grid_size the buyer direction grid, mc_samples and rng_seed the
    Monte Carlo validator.  Every routine is deterministic given the same
    config.
    """

    price_grid_step: float = 0.01
    lottery_grid_step: float = 0.02
    max_options: int = 3
    angle_grid_size: int = 3600
    mc_samples: int = 200_000
    rng_seed: int = 0

    def __post_init__(self):
        if self.price_grid_step <= 0 or self.lottery_grid_step <= 0:
            raise InputError("oracle grid steps must be positive")
        if self.angle_grid_size < 8:
            raise InputError("angle_grid_size must be at least 8")
        if self.mc_samples < 1000:
            raise InputError("mc_samples must be at least 1000")


# ---------------------------------------------------------------------------
# batched upper-envelope evaluation
# ---------------------------------------------------------------------------
#
# A menu faced by a one-dimensional type is a family of affine payoff lines
# u_j(t) = A_j t + B_j.  Buyer choice is the upper envelope (ties to the
# higher price), so both seller revenue and buyer utility reduce to
# integrating step data against the universal type density.  The batched
# evaluator handles many line systems at once: seller grids vary the menu
# with the type line fixed, buyer grids vary the type line with the menu
# fixed, and both land on the same (A, B, P) arrays.


def _batched_envelope(A: np.ndarray, B: np.ndarray, P: np.ndarray):
    """Upper envelope of each row's line system over t in [0, 1].

    A, B, P: (n, m) slope/intercept/price arrays; a null line (0, 0, price 0)
    is appended internally.  Returns (cuts, win) where cuts is (n, s+1) and
    win is (n, s) with indices into the augmented system (m = null).
    """
    n, m = A.shape
    zeros = np.zeros((n, 1))
    A = np.concatenate([A, zeros], axis=1)
    B = np.concatenate([B, zeros], axis=1)
    P = np.concatenate([P, zeros], axis=1)
    ma = m + 1

    ii, jj = np.triu_indices(ma, k=1)
    dA = A[:, jj] - A[:, ii]
    with np.errstate(divide="ignore", invalid="ignore"):
        cross = (B[:, ii] - B[:, jj]) / dA
    cross = np.where(np.isfinite(cross), cross, -1.0)
    cross = np.clip(cross, 0.0, 1.0)

    cuts = np.concatenate(
        [np.zeros((n, 1)), cross, np.ones((n, 1))], axis=1
    )
    cuts.sort(axis=1)
    mids = 0.5 * (cuts[:, :-1] + cuts[:, 1:])

    # winner per segment: max payoff, ties to the highest price
    V = A[:, None, :] * mids[:, :, None] + B[:, None, :]
    vmax = V.max(axis=2, keepdims=True)
    near = V >= vmax - 1e-12
    score = np.where(near, P[:, None, :], -np.inf)
    win = np.argmax(score, axis=2)
    return cuts, win


def _batched_revenue(line: TypeLine, X: np.ndarray, P: np.ndarray,
                     exact: bool = False) -> np.ndarray:
    """Revenue of each menu in the batch against a fixed type line.

    X: (n, m, K) lotteries, P: (n, m) prices.  Uses the interpolated mass
    table unless exact=True.
    """
    A = X @ line.a
    B = X @ line.b - P
    cuts, win = _batched_envelope(A, B, P)
    n, m = P.shape
    Paug = np.concatenate([P, np.zeros((n, 1))], axis=1)
    price_w = np.take_along_axis(Paug, win, axis=1)
    mass_fn = line.F.m0 if exact else line.F.m0_table
    mass = mass_fn(cuts[:, :-1], cuts[:, 1:])
    return np.sum(price_w * mass, axis=1)


def _batched_eu(lines_a: np.ndarray, lines_b: np.ndarray, menu: Menu,
                dists) -> np.ndarray:
    """Buyer expected utility of one menu under many posterior lines.

    lines_a / lines_b: (n, K) per-row line coefficients, dists: list of the
    matching TypeDistribution objects (rows may share).  Exact moments.
    """
    if not menu.options:
        return np.zeros(len(lines_a))
    X = np.array([x for x, _ in menu.options])
    prices = np.array([p for _, p in menu.options])
    A = lines_a @ X.T
    B = lines_b @ X.T - prices[None, :]
    P = np.broadcast_to(prices, A.shape).copy()
    cuts, win = _batched_envelope(A, B, P)
    n = A.shape[0]
    Aaug = np.concatenate([A, np.zeros((n, 1))], axis=1)
    Baug = np.concatenate([B, np.zeros((n, 1))], axis=1)
    Aw = np.take_along_axis(Aaug, win, axis=1)
    Bw = np.take_along_axis(Baug, win, axis=1)
    out = np.empty(n)
    for i in range(n):
        d = dists[i]
        m0 = d.m0(cuts[i, :-1], cuts[i, 1:])
        m1 = d.m1(cuts[i, :-1], cuts[i, 1:])
        out[i] = float(Aw[i] @ m1 + Bw[i] @ m0)
    return out


# ---------------------------------------------------------------------------
# seller oracle: exhaustive menu families on a price grid
# ---------------------------------------------------------------------------


def _grid(span: float, step: float) -> np.ndarray:
    n = int(math.floor(span / step + 1e-9)) + 1
    return np.arange(n) * step


def _check_budget(cells: float, step: float, what: str):
    if cells > _CELL_BUDGET:
        needed = step * math.sqrt(cells / _CELL_BUDGET)
        raise BudgetError(
            f"oracle menu grid for {what} needs {cells:.2e} cells; "
            f"raise price_grid_step to about {needed:.3f} or shrink the span"
        )


def _best_of(line: TypeLine, X: np.ndarray, P: np.ndarray,
             chunk: int = 200_000):
    """Scan a family of menus; return (best_idx, best_rev) via the fast table."""
    n = len(X)
    best_i, best_r = -1, -np.inf
    for s in range(0, n, chunk):
        rev = _batched_revenue(line, X[s:s + chunk], P[s:s + chunk])
        i = int(np.argmax(rev))
        if rev[i] > best_r:
            best_r = float(rev[i])
            best_i = s + i
    return best_i, best_r


def _family_bundle(prices: np.ndarray, K: int):
    n = len(prices)
    X = np.ones((n, 1, K))
    P = prices[:, None]
    return X, P


def _family_nested(prices: np.ndarray, K: int, small: Sequence[int]):
    """Two-option nested menus: small set at p1 < p2 for the full bundle."""
    p1, p2 = np.meshgrid(prices, prices, indexing="ij")
    keep = p1.ravel() < p2.ravel()
    p1 = p1.ravel()[keep]
    p2 = p2.ravel()[keep]
    n = len(p1)
    X = np.zeros((n, 2, K))
    for i in small:
        X[:, 0, i] = 1.0
    X[:, 1, :] = 1.0
    P = np.stack([p1, p2], axis=1)
    return X, P


def _family_separate(prices: np.ndarray, K: int):
    """Independent per-good prices; bundle offered at the sum."""
    if K != 2:
        raise InputError("separate-price family is wired for K = 2 only")
    p1, p2 = np.meshgrid(prices, prices, indexing="ij")
    p1 = p1.ravel()
    p2 = p2.ravel()
    n = len(p1)
    X = np.zeros((n, 3, 2))
    X[:, 0, 0] = 1.0
    X[:, 1, 1] = 1.0
    X[:, 2, :] = 1.0
    P = np.stack([p1, p2, p1 + p2], axis=1)
    return X, P


def _family_mixed(prices: np.ndarray, K: int):
    """Free-standing goods plus a discounted bundle (p3 <= p1 + p2)."""
    if K != 2:
        raise InputError("mixed-bundling family is wired for K = 2 only")
    p1, p2, p3 = np.meshgrid(prices, prices, prices, indexing="ij")
    keep = p3.ravel() <= p1.ravel() + p2.ravel() + 1e-12
    p1 = p1.ravel()[keep]
    p2 = p2.ravel()[keep]
    p3 = p3.ravel()[keep]
    n = len(p1)
    X = np.zeros((n, 3, 2))
    X[:, 0, 0] = 1.0
    X[:, 1, 1] = 1.0
    X[:, 2, :] = 1.0
    P = np.stack([p1, p2, p3], axis=1)
    return X, P


def _family_rationed(prices: np.ndarray, fracs: np.ndarray, K: int):
    """Rationed first good at a low price plus the full bundle."""
    if K != 2:
        raise InputError("rationing family is wired for K = 2 only")
    xg, p1g, p2g = np.meshgrid(fracs, prices, prices, indexing="ij")
    keep = p1g.ravel() < p2g.ravel()
    xv = xg.ravel()[keep]
    p1 = p1g.ravel()[keep]
    p2 = p2g.ravel()[keep]
    n = len(p1)
    X = np.zeros((n, 2, 2))
    X[:, 0, 0] = xv
    X[:, 0, 1] = 1.0
    X[:, 1, :] = 1.0
    P = np.stack([p1, p2], axis=1)
    return X, P


def _refine_axis(center: float, step: float, lo: float, hi: float,
                 halfwidth: float) -> np.ndarray:
    a = max(lo, center - halfwidth)
    b = min(hi, center + halfwidth)
    n = int(round((b - a) / step)) + 1
    return a + step * np.arange(max(n, 1))


def oracle_seller_best(line: TypeLine, config: OracleConfig | None = None):
    """Grid-search the seller's menu over the standard two-good families.

    Families: bundle-only, nested (either orientation), separate prices,
    mixed bundling, and bundle-plus-rationed-good.  Coarse pass at a step of
    at least 0.05, then a local refinement at the configured step around the
    coarse winner.  Returns (menu, revenue) with revenue re-evaluated on the
    exact moment integrals.
    """
    cfg = config or OracleConfig()
    K = line.a.shape[0]
    if K != 2:
        raise InputError("oracle_seller_best supports K = 2 only")
    span = float(np.sum(line.a) + np.sum(line.b))
    step = cfg.price_grid_step
    coarse_step = max(step, 0.05)
    _check_budget((span / step + 1) ** 2 * 8, step, "pair families")

    coarse = _grid(span, coarse_step)
    lotto_step = max(cfg.lottery_grid_step, 0.05)
    fracs_c = _grid(1.0, lotto_step)

    families: list[tuple[str, tuple]] = [("bundle", ())]
    if cfg.max_options >= 2:
        families += [
            ("nested01", (0,)), ("nested10", (1,)), ("rationed", ()),
        ]
    if cfg.max_options >= 3:
        families += [("separate", ()), ("mixed", ())]

    def build(name, arg, prices, fracs):
        if name == "bundle":
            return _family_bundle(prices, K)
        if name.startswith("nested"):
            return _family_nested(prices, K, arg)
        if name == "separate":
            return _family_separate(prices, K)
        if name == "mixed":
            return _family_mixed(prices, K)
        return _family_rationed(prices, fracs, K)

    best = None  # (rev, name, arg, X_row, P_row)
    for name, arg in families:
        X, P = build(name, arg, coarse, fracs_c)
        if len(X) == 0:
            continue
        i, rev = _best_of(line, X, P)
        if best is None or rev > best[0]:
            best = (rev, name, arg, X[i].copy(), P[i].copy())

    # refinement: full-resolution box around the coarse winner
    rev0, name, arg, Xw, Pw = best
    half = 1.5 * coarse_step
    axes = [_refine_axis(p, step, 0.0, span, half) for p in Pw]
    if name == "rationed":
        fr = _refine_axis(float(Xw[0, 0]), cfg.lottery_grid_step, 0.0, 1.0,
                          1.5 * lotto_step)
        Xr, Pr = _family_rationed(np.unique(np.concatenate(axes)), fr, K)
    elif name == "bundle":
        Xr, Pr = _family_bundle(axes[0], K)
    elif name.startswith("nested"):
        pp = np.unique(np.concatenate(axes))
        Xr, Pr = _family_nested(pp, K, arg)
    elif name == "separate":
        pp = np.unique(np.concatenate(axes[:2]))
        Xr, Pr = _family_separate(pp, K)
    else:
        pp = np.unique(np.concatenate(axes))
        Xr, Pr = _family_mixed(pp, K)

    if len(Xr):
        i, rev1 = _best_of(line, Xr, Pr)
        if rev1 >= rev0:
            rev0, Xw, Pw = rev1, Xr[i].copy(), Pr[i].copy()

    options = tuple(
        (tuple(float(v) for v in Xw[j]), float(Pw[j]))
        for j in range(len(Pw)) if Pw[j] > 1e-12 or np.any(Xw[j] > 1e-12)
    )
    menu = Menu(options=options)
    exact = float(_batched_revenue(line, Xw[None], Pw[None], exact=True)[0])
    return menu, exact


# ---------------------------------------------------------------------------
# buyer oracle: exhaustive angle grid (K = 2)
# ---------------------------------------------------------------------------


def oracle_buyer_best(scenario: Scenario, menu: Menu,
                      config: OracleConfig | None = None):
    """Evaluate every direction on a dense half-circle grid; no refinement.

    Returns (direction, expected_utility).  K = 2 only.
    """
    cfg = config or OracleConfig()
    if scenario.mu.shape[0] != 2:
        raise InputError("oracle_buyer_best supports K = 2 only")
    if not menu.options:
        return None, 0.0
    n = cfg.angle_grid_size
    angles = np.linspace(0.0, math.pi, n, endpoint=False)
    lines = [posterior_line(scenario, Direction((math.cos(t), math.sin(t))))
             for t in angles]
    la = np.stack([ln.a for ln in lines])
    lb = np.stack([ln.b for ln in lines])
    dists = [ln.F for ln in lines]
    eu = _batched_eu(la, lb, menu, dists)
    i = int(np.argmax(eu))
    best = Direction((math.cos(angles[i]), math.sin(angles[i])))
    return best, float(eu[i])


# ---------------------------------------------------------------------------
# Monte Carlo validation of the value model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MCReport:
    """Summary statistics from the rejection-sampling cross-check."""

    n_kept: int
    acceptance: float
    acceptance_theory: float
    mean_dev: float          # max |sample mean - mu| in se units
    corr_dev: float          # max |sample corr - rho| (off-diagonal)
    ks_signal: float         # max KS stat over probed directions
    ks_bound: float
    posterior_dev: float     # max binned-mean deviation from the line
    marginal_dev: float      # max coordinate-marginal deviation in se units
    ok: bool
    details: dict = field(compare=False, default_factory=dict)


def sample_values(scenario: Scenario, n: int, rng: np.random.Generator):
    """Rejection-sample n value vectors from the truncated ellipsoid."""
    K = scenario.mu.shape[0]
    L = np.linalg.cholesky(scenario.cov())
    out = []
    kept = 0
    total = 0
    acc_p = float(stats.chi2.cdf(scenario.radius ** 2, df=K))
    if acc_p < 1e-3:
        raise NumericError(
            "rejection sampling acceptance below 1e-3; radius too small "
            "for Monte Carlo validation"
        )
    while kept < n:
        batch = max(int((n - kept) / acc_p * 1.2), 1000)
        total += batch
        z = rng.standard_normal((batch, K))
        keep = np.einsum("ij,ij->i", z, z) <= scenario.radius ** 2
        zk = z[keep]
        out.append(scenario.mu + zk @ L.T)
        kept += len(zk)
    v = np.concatenate(out)
    return v[:n], total, len(v)


def mc_validate(scenario: Scenario, config: OracleConfig | None = None) -> MCReport:
    """Simulate raw values and test every analytic layer against them.

    Checks: acceptance rate, mean, correlation structure, the universal
    signal marginal along probe directions (KS), posterior linearity via
    binned conditional means, and the coordinate marginal used by the
    information-cost bound.
    """
    cfg = config or OracleConfig()
    rng = np.random.default_rng(cfg.rng_seed)
    n = cfg.mc_samples
    K = scenario.mu.shape[0]
    v, total, kept_all = sample_values(scenario, n, rng)

    acc = kept_all / total
    acc_theory = float(stats.chi2.cdf(scenario.radius ** 2, df=K))
    acc_se = math.sqrt(acc_theory * (1 - acc_theory) / total)

    mean_dev = float(np.max(np.abs(v.mean(axis=0) - scenario.mu)
                            / (v.std(axis=0) / math.sqrt(n))))

    corr = np.corrcoef(v.T)
    off = corr[~np.eye(K, dtype=bool)]
    corr_dev = float(np.max(np.abs(off - scenario.rho))) if K > 1 else 0.0

    # signal marginal along probe directions
    probes = [np.ones(K)] + [np.eye(K)[i] for i in range(min(K, 2))]
    ks_max = 0.0
    post_dev = 0.0
    for alpha in probes:
        d = Direction(alpha).canonical(scenario)
        line = posterior_line(scenario, d)
        s = v @ d.alpha
        denom = 2.0 * scenario.radius * math.sqrt(
            float(d.alpha @ scenario.cov() @ d.alpha))
        t_emp = (s - float(d.alpha @ scenario.mu)) / denom + 0.5
        grid = np.linspace(0.02, 0.98, 49)
        emp = np.searchsorted(np.sort(t_emp), grid) / n
        ks = float(np.max(np.abs(emp - line.F.cdf(grid))))
        ks_max = max(ks_max, ks)

        # binned conditional means against the posterior line
        bins = np.quantile(t_emp, np.linspace(0, 1, 41))
        idx = np.clip(np.searchsorted(bins, t_emp) - 1, 0, 39)
        scale = float(np.max(np.abs(line.a)) + np.max(np.abs(line.b)))
        for bdx in range(40):
            msk = idx == bdx
            if msk.sum() < 200:
                continue
            tbar = float(t_emp[msk].mean())
            pred = line.a * tbar + line.b
            got = v[msk].mean(axis=0)
            post_dev = max(post_dev,
                           float(np.max(np.abs(got - pred))) / scale)

    ks_bound = 3.0 * 1.2239 / math.sqrt(n)  # ~3x the KS 5% scale

    # coordinate marginal: E[(v_i - p)+] at a few strikes
    marg_dev = 0.0
    for i in range(K):
        cm = coordinate_marginal(scenario, i)
        sd = math.sqrt(scenario.cov()[i, i])
        for p in (scenario.mu[i] - 0.5 * sd, scenario.mu[i],
                  scenario.mu[i] + 0.5 * sd):
            ex = np.maximum(v[:, i] - p, 0.0)
            se = float(ex.std() / math.sqrt(n))
            dev = abs(float(ex.mean()) - cm.expected_excess(float(p)))
            marg_dev = max(marg_dev, dev / max(se, 1e-12))

    ok = (abs(acc - acc_theory) < 4 * acc_se
          and mean_dev < 4.0
          and corr_dev < 8.0 / math.sqrt(n) * 4
          and ks_max < ks_bound
          and post_dev < 0.02
          and marg_dev < 4.0)
    return MCReport(
        n_kept=n, acceptance=acc, acceptance_theory=acc_theory,
        mean_dev=mean_dev, corr_dev=corr_dev, ks_signal=ks_max,
        ks_bound=ks_bound, posterior_dev=post_dev, marginal_dev=marg_dev,
        ok=ok,
        details={"total_drawn": total, "acc_se": acc_se},
    )
