"""Auxiliary knapsack program: zero-slope lotteries with maximal intercept.

Given a posterior mean line theta(t) = a t + b, the program is

    max  sum_i b_i x_i   over x in [0,1]^K   s.t.  sum_i a_i x_i = 0.

Goods with a_i <= 0 enter at full weight; the slack they create is a budget
spent greedily on positive-slope goods in decreasing order of b_i / a_i.
The critical ratio kappa of the marginal good prices the constraint, and
lambda = -kappa is the multiplier the worst-off search consumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError

__all__ = ["AuxSolution", "solve_auxiliary"]

# Slopes within this relative band of zero are grouped with the negative
# goods, matching the classification that treats a_i = 0 as costless.
_ZERO_BAND = 1e-12


@dataclass(frozen=True)
class AuxSolution:
    """Greedy optimum of the auxiliary program.

    x_dagger is one optimal lottery (the rationing option under horizontal
    learning); I_minus / I_star / I_plus_nonbal partition the goods into
    nonpositive slopes, positive balancing goods, and positive goods shut
    out of every optimum.
    """

    x_dagger: np.ndarray
    kappa: float
    lam: float
    I_minus: tuple
    I_star: tuple
    I_plus_nonbal: tuple
    value: float

    def __post_init__(self):
        x = np.asarray(self.x_dagger, dtype=float)
        x.setflags(write=False)
        object.__setattr__(self, "x_dagger", x)


def solve_auxiliary(a, b) -> AuxSolution:
    """Solve the fractional knapsack over lotteries with zero total slope.

    Expects the canonical orientation sum(a) >= 0 and b >= 0.  Returns the
    greedy optimum; the budget constraint binds exactly, so the slope of
    x_dagger vanishes up to roundoff.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise InputError("auxiliary inputs a, b must be equal-length vectors")
    scale = float(np.max(np.abs(a))) or 1.0
    if float(a.sum()) < -1e-9 * scale:
        raise InputError("auxiliary program requires sum(a) >= 0")
    if np.any(b < -1e-9):
        raise InputError("auxiliary program requires b >= 0")

    neg = a <= _ZERO_BAND * scale
    pos_idx = np.nonzero(~neg)[0]
    x = np.zeros_like(a)
    x[neg] = 1.0
    budget = -float(a[neg].sum())

    if budget <= _ZERO_BAND * scale or len(pos_idx) == 0:
        # Nothing to balance: only nonpositive-slope goods are feasible.
        kappa = 0.0
        I_star = ()
        I_plus = tuple(int(i) for i in pos_idx)
        if budget <= _ZERO_BAND * scale:
            budget = 0.0
        return AuxSolution(
            x_dagger=x,
            kappa=kappa,
            lam=-kappa if kappa else 0.0,
            I_minus=tuple(int(i) for i in np.nonzero(neg)[0]),
            I_star=I_star,
            I_plus_nonbal=I_plus,
            value=float(b @ x),
        )

    ratios = b[pos_idx] / a[pos_idx]
    order = pos_idx[np.argsort(-ratios, kind="stable")]
    remaining = budget
    kappa = 0.0
    for i in order:
        if remaining <= _ZERO_BAND * scale:
            break
        take = min(1.0, remaining / a[i])
        x[i] = take
        remaining -= take * a[i]
        kappa = b[i] / a[i]
    # Canonical orientation guarantees the positive slopes can absorb the
    # whole budget, so `remaining` is zero here up to roundoff.
    if remaining > 1e-9 * scale:
        raise InputError(
            "auxiliary budget not absorbed (%.3g left); "
            "check the sign convention of a" % remaining
        )

    # Balancing set: strictly better ratios always enter; ties at kappa
    # enter when some optimal solution gives them positive weight, which
    # the greedy fill certifies by having reached them at all.
    tol = 1e-12 * max(1.0, float(np.max(np.abs(b))) / scale)
    I_star = []
    I_plus_nonbal = []
    reached = set(
        int(i) for i in order[: int(np.count_nonzero(x[order] > 0.0))]
    )
    for i in pos_idx:
        r = b[i] / a[i]
        if r > kappa + tol:
            I_star.append(int(i))
        elif abs(r - kappa) <= tol and (int(i) in reached or x[i] > 0.0):
            I_star.append(int(i))
        elif abs(r - kappa) <= tol and kappa > 0.0 and _tie_reachable(
            a, b, x, pos_idx, kappa, tol, int(i)
        ):
            I_star.append(int(i))
        else:
            I_plus_nonbal.append(int(i))

    slope = float(a @ x)
    if abs(slope) > 1e-10 * scale:
        raise InputError("auxiliary solution slope %.3g not zero" % slope)

    return AuxSolution(
        x_dagger=x,
        kappa=float(kappa),
        lam=float(-kappa) if kappa else 0.0,
        I_minus=tuple(int(i) for i in np.nonzero(neg)[0]),
        I_star=tuple(sorted(I_star)),
        I_plus_nonbal=tuple(sorted(I_plus_nonbal)),
        value=float(b @ x),
    )


def _tie_reachable(a, b, x, pos_idx, kappa, tol, i) -> bool:
    """Can good i at ratio kappa carry positive weight in some optimum?

    True iff the budget left after all strictly-better goods is positive,
    since tied goods can then swap weight freely without changing value.
    """
    strictly_better = [j for j in pos_idx if b[j] / a[j] > kappa + tol]
    budget = -float(a[a <= 0].sum())
    spent = float(sum(a[j] for j in strictly_better))
    return budget - spent > tol
