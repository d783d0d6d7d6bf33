"""Truncated elliptical value model and posterior-mean type lines.

A market scenario is a Gaussian value vector v ~ N(mu, Sigma) restricted to the
Mahalanobis ellipsoid V = {v : (v-mu)' Sigma^{-1} (v-mu) <= r^2}, with Sigma
built from per-good standard deviations and a common pairwise correlation.
The buyer observes the linear signal s = alpha . v for a chosen direction
alpha.  Conditional means are linear in s and truncation only shrinks the
covariance by a scalar, so the slope ratios Cov(v_k, s)/Var(s) can be read off
the untruncated Sigma.

After whitening, the signal is an affine function of one coordinate of a
standard normal restricted to the centered ball of radius r.  That coordinate
u in [-r, r] has density proportional to

    phi(u) * GammaReg((K-1)/2, (r^2 - u^2)/2),

the Gaussian weight times the mass of a (K-1)-variate standard normal inside
the ball of radius sqrt(r^2 - u^2).  Mapping u affinely onto t in [0, 1]
yields one fixed type distribution F per (K, r): the same F serves every
direction.  The posterior means then trace the line theta_i(t) = a_i t + b_i.

All integrals run through the substitution u = r sin(psi), which removes the
square-root endpoint behaviour of the density (the integrand gains a factor
cos^K psi and becomes analytic), so fixed-order Gauss-Legendre rules are
accurate to machine precision.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import gammainc

from .errors import InputError, ModelError, NumericError

_SQRT_2PI = math.sqrt(2.0 * math.pi)

# Tolerances for construction-time invariant checks.
_GEOM_TOL = 1e-9
_BAYES_TOL = 1e-8


# ---------------------------------------------------------------------------
# Scenario
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    """Market primitives: prior means, dispersions, common correlation, radius.

    Invariants enforced on construction: positive mu and sigma, a positive
    definite equicorrelation covariance (1 + rho*(K-1) > 0), and support
    containment mu_i - r*sigma_i >= 0 so the truncation ellipsoid stays inside
    the nonnegative orthant.
    """

    mu: np.ndarray
    sigma: np.ndarray
    rho: float
    radius: float = 1.0

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float)).copy()
        sigma = np.atleast_1d(np.asarray(self.sigma, dtype=float)).copy()
        mu.flags.writeable = False
        sigma.flags.writeable = False
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "rho", float(self.rho))
        object.__setattr__(self, "radius", float(self.radius))
        k = mu.size
        if k < 2:
            raise ModelError("scenario field 'mu': need at least two goods")
        if sigma.size != k:
            raise ModelError(
                f"scenario field 'sigma': length {sigma.size} != k={k}"
            )
        if not np.all(np.isfinite(mu)) or np.any(mu <= 0):
            raise ModelError("scenario field 'mu': entries must be finite and > 0")
        if not np.all(np.isfinite(sigma)) or np.any(sigma <= 0):
            raise ModelError("scenario field 'sigma': entries must be finite and > 0")
        if not (-1.0 < self.rho < 1.0):
            raise ModelError("scenario field 'rho': must lie in (-1, 1)")
        if 1.0 + self.rho * (k - 1) <= 0.0:
            raise ModelError(
                "scenario field 'rho': equicorrelation matrix not positive "
                f"definite, 1 + rho*(k-1) = {1.0 + self.rho * (k - 1):.6g} <= 0"
            )
        if not (self.radius > 0.0 and np.isfinite(self.radius)):
            raise ModelError("scenario field 'radius': must be finite and > 0")
        slack = mu - self.radius * sigma
        if np.any(slack < -_GEOM_TOL):
            i = int(np.argmin(slack))
            raise ModelError(
                f"scenario field 'radius': support leaves the nonnegative orthant "
                f"on good {i + 1} (mu_i - r*sigma_i = {slack[i]:.6g} < 0)"
            )

    @property
    def k(self) -> int:
        return self.mu.size

    def cov(self) -> np.ndarray:
        """Covariance matrix with common pairwise correlation."""
        s = self.sigma
        full = self.rho * np.outer(s, s)
        np.fill_diagonal(full, s * s)
        return full

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "mu": [float(x) for x in self.mu],
            "sigma": [float(x) for x in self.sigma],
            "rho": self.rho,
            "radius": self.radius,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Scenario":
        if not isinstance(doc, dict):
            raise InputError("scenario document must be a key-value mapping")
        for name in ("mu", "sigma", "rho"):
            if name not in doc:
                raise InputError(f"scenario field '{name}': missing")

        def _vector(name):
            raw = doc[name]
            try:
                vec = np.asarray([float(x) for x in raw], dtype=float)
            except (TypeError, ValueError):
                raise InputError(f"scenario field '{name}': expected a list of numbers")
            return vec

        mu = _vector("mu")
        sigma = _vector("sigma")
        try:
            rho = float(doc["rho"])
        except (TypeError, ValueError):
            raise InputError("scenario field 'rho': expected a number")
        radius = doc.get("radius", 1.0)
        try:
            radius = float(radius)
        except (TypeError, ValueError):
            raise InputError("scenario field 'radius': expected a number")
        if "k" in doc:
            try:
                k = int(doc["k"])
            except (TypeError, ValueError):
                raise InputError("scenario field 'k': expected an integer")
            if k != mu.size:
                raise InputError(
                    f"scenario field 'k': value {k} does not match len(mu)={mu.size}"
                )
        return cls(mu=mu, sigma=sigma, rho=rho, radius=radius)

    @classmethod
    def from_json_file(cls, path: str) -> "Scenario":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise InputError(f"scenario file '{path}': {exc}") from exc
        except json.JSONDecodeError as exc:
            raise InputError(f"scenario file '{path}': invalid JSON ({exc})") from exc
        return cls.from_dict(doc)


# ---------------------------------------------------------------------------
# Direction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Direction:
    """Learning weights alpha, stored with unit Euclidean length.

    The posterior line is invariant to positive rescaling, and flipping the
    sign relabels the signal; the canonical representative (relative to a
    scenario) has Cov(v_k, alpha.v) > 0 for at least one good.
    """

    alpha: np.ndarray

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float)).copy()
        if not np.all(np.isfinite(alpha)):
            raise InputError("direction: weights must be finite")
        norm = float(np.linalg.norm(alpha))
        if norm <= 0.0:
            raise InputError("direction: weights must not all be zero")
        alpha /= norm
        alpha.flags.writeable = False
        object.__setattr__(self, "alpha", alpha)

    @property
    def k(self) -> int:
        return self.alpha.size

    def signal_cov(self, scenario: Scenario) -> np.ndarray:
        """Cov(v_k, alpha.v) for each good, from the untruncated covariance."""
        return scenario.cov() @ self.alpha

    def canonical(self, scenario: Scenario) -> "Direction":
        cov = self.signal_cov(scenario)
        if np.all(cov <= 0.0):
            return Direction(-self.alpha)
        return self

    def is_vertical(self, scenario: Scenario, tol: float = 1e-12) -> bool:
        """True when all posterior means move together along the signal."""
        cov = self.canonical(scenario).signal_cov(scenario)
        return bool(np.all(cov >= -tol * max(1.0, float(np.max(np.abs(cov))))))

    def angle_to(self, other: "Direction") -> float:
        """Angle between the two lines of learning (sign-insensitive)."""
        c = abs(float(np.dot(self.alpha, other.alpha)))
        return float(math.acos(min(1.0, c)))


# ---------------------------------------------------------------------------
# Type distribution F
# ---------------------------------------------------------------------------

class TypeDistribution:
    """Distribution of the normalized type t in [0, 1] for a given (K, r).

    Exposes the density f, cdf, quantile, and exact partial moments
    m0(l, u) = F(u) - F(l) and m1(l, u) = int_l^u t f(t) dt.  A 2048-cell
    cached table anchors cdf/quantile lookups (monotone linear interpolation
    in the psi variable for the quantile; the cdf adds an exact in-cell
    Gauss-Legendre remainder on top of the cached node, so partial moments and
    cdf differences agree to machine precision).
    """

    def __init__(self, k: int, radius: float, cache_cells: int = 2048):
        if k < 2:
            raise ModelError("type distribution needs k >= 2 goods")
        if not (radius > 0.0 and np.isfinite(radius)):
            raise ModelError("type distribution needs a finite radius > 0")
        self.k = int(k)
        self.radius = float(radius)
        self._gamma_shape = 0.5 * (self.k - 1)

        # Gauss-Legendre rules reused everywhere (nodes on [-1, 1]).
        self._gl64 = leggauss(64)
        self._gl16 = leggauss(16)

        # psi-grid cache of the unnormalized cumulative weight.
        n = int(cache_cells)
        psi = np.linspace(-0.5 * math.pi, 0.5 * math.pi, n + 1)
        cell_mass = self._raw_cell_integrals(psi, self._gl16)
        cum = np.concatenate(([0.0], np.cumsum(cell_mass)))
        self._norm = float(cum[-1])
        if not (self._norm > 0.0 and np.isfinite(self._norm)):
            raise NumericError("type distribution: normalization integral failed")
        # Cross-check against a single global 512-node rule.
        x, w = leggauss(512)
        half = 0.5 * math.pi
        z512 = float(np.sum(w * self._raw_weight_psi(half * x)) * half)
        if abs(z512 / self._norm - 1.0) > 1e-9:
            raise NumericError(
                "type distribution: normalization mismatch between the cell "
                f"cache and the 512-node rule (rel err {abs(z512/self._norm-1.0):.3g})"
            )
        self._psi_nodes = psi
        self._cdf_nodes = cum / self._norm
        self._cdf_nodes[-1] = 1.0

        # Cumulative first moment at the same nodes, for fast m1 anchoring.
        cell_m1 = self._raw_cell_integrals(psi, self._gl16, power=1)
        cum1 = np.concatenate(([0.0], np.cumsum(cell_m1))) / self._norm
        self._m1_nodes = cum1

        self._ironing_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self._virtual_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    # -- raw weights --------------------------------------------------------

    def _remaining_mass(self, z):
        """Mass of a standard (K-1)-variate normal inside radius sqrt(r^2-z^2).

        For K=2 this is erf(sqrt((r^2-z^2)/2)); gammainc(1/2, x) evaluates to
        exactly that, so no separate branch is needed.
        """
        arg = 0.5 * np.clip(self.radius**2 - np.square(z), 0.0, None)
        return gammainc(self._gamma_shape, arg)

    def _raw_weight_psi(self, psi):
        """Unnormalized density in the psi variable (z = r sin psi)."""
        z = self.radius * np.sin(psi)
        dens = np.exp(-0.5 * z * z) / _SQRT_2PI
        return dens * self._remaining_mass(z) * self.radius * np.cos(psi)

    def _raw_cell_integrals(self, psi_edges, rule, power: int = 0):
        x, w = rule
        lo = psi_edges[:-1]
        hi = psi_edges[1:]
        half = 0.5 * (hi - lo)
        mid = 0.5 * (hi + lo)
        nodes = mid[:, None] + half[:, None] * x[None, :]
        vals = self._raw_weight_psi(nodes)
        if power:
            t = 0.5 * (1.0 + np.sin(nodes))
            vals = vals * t**power
        return np.sum(vals * w[None, :], axis=1) * half

    # -- public density / cdf / quantile ------------------------------------

    def f(self, t):
        """Density of t; zero outside [0, 1]."""
        t = np.asarray(t, dtype=float)
        inside = (t >= 0.0) & (t <= 1.0)
        z = self.radius * (2.0 * np.clip(t, 0.0, 1.0) - 1.0)
        dens = np.exp(-0.5 * z * z) / _SQRT_2PI * self._remaining_mass(z)
        out = 2.0 * self.radius * dens / self._norm
        out = np.where(inside, out, 0.0)
        return out if out.ndim else float(out)

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        tc = np.clip(t, 0.0, 1.0)
        psi = np.arcsin(np.clip(2.0 * tc - 1.0, -1.0, 1.0))
        # Anchor at the cached node below, integrate the in-cell remainder.
        step = math.pi / (self._psi_nodes.size - 1)
        idx = np.clip(
            ((psi + 0.5 * math.pi) / step).astype(int), 0, self._psi_nodes.size - 2
        )
        lo = self._psi_nodes[idx]
        out = self._cdf_nodes[idx] + self._psi_segment_mass(lo, psi) / self._norm
        out = np.clip(out, 0.0, 1.0)
        return out if out.ndim else float(out)

    def _psi_segment_mass(self, psi_lo, psi_hi, power: int = 0):
        """Exact unnormalized integral over [psi_lo, psi_hi] (vectorized)."""
        x, w = self._gl64
        half = 0.5 * (psi_hi - psi_lo)
        mid = 0.5 * (psi_hi + psi_lo)
        nodes = mid[..., None] + half[..., None] * x
        vals = self._raw_weight_psi(nodes)
        if power:
            tt = 0.5 * (1.0 + np.sin(nodes))
            vals = vals * tt**power
        return np.sum(vals * w, axis=-1) * half

    def quantile(self, q):
        """Inverse cdf by monotone linear interpolation on the cached table."""
        q = np.asarray(q, dtype=float)
        qc = np.clip(q, 0.0, 1.0)
        psi = np.interp(qc, self._cdf_nodes, self._psi_nodes)
        t = 0.5 * (1.0 + np.sin(psi))
        return t if t.ndim else float(t)

    # -- partial moments -----------------------------------------------------

    def _partial(self, lo, hi, power: int):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        lo_b, hi_b = np.broadcast_arrays(np.clip(lo, 0.0, 1.0), np.clip(hi, 0.0, 1.0))
        hi_b = np.maximum(lo_b, hi_b)
        psi_lo = np.arcsin(np.clip(2.0 * lo_b - 1.0, -1.0, 1.0))
        psi_hi = np.arcsin(np.clip(2.0 * hi_b - 1.0, -1.0, 1.0))
        out = self._psi_segment_mass(psi_lo, psi_hi, power=power) / self._norm
        return out if out.ndim else float(out)

    def m0(self, lo, hi):
        """F(hi) - F(lo), exact."""
        return self._partial(lo, hi, power=0)

    def m1(self, lo, hi):
        """int_lo^hi t f(t) dt, exact."""
        return self._partial(lo, hi, power=1)

    def m0_table(self, lo, hi):
        """Fast table-interpolated F(hi)-F(lo) for large searches (~1e-6 abs)."""
        psi_lo = np.arcsin(np.clip(2.0 * np.clip(lo, 0, 1) - 1.0, -1.0, 1.0))
        psi_hi = np.arcsin(np.clip(2.0 * np.clip(hi, 0, 1) - 1.0, -1.0, 1.0))
        f_lo = np.interp(psi_lo, self._psi_nodes, self._cdf_nodes)
        f_hi = np.interp(psi_hi, self._psi_nodes, self._cdf_nodes)
        return np.clip(f_hi - f_lo, 0.0, 1.0)

    def m1_table(self, lo, hi):
        """Fast table-interpolated partial first moment (~1e-6 abs)."""
        psi_lo = np.arcsin(np.clip(2.0 * np.clip(lo, 0, 1) - 1.0, -1.0, 1.0))
        psi_hi = np.arcsin(np.clip(2.0 * np.clip(hi, 0, 1) - 1.0, -1.0, 1.0))
        g_lo = np.interp(psi_lo, self._psi_nodes, self._m1_nodes)
        g_hi = np.interp(psi_hi, self._psi_nodes, self._m1_nodes)
        return np.maximum(g_hi - g_lo, 0.0)

    def expect(self, fn: Callable[[np.ndarray], np.ndarray], lo: float = 0.0,
               hi: float = 1.0, nodes: int = 512):
        """int_lo^hi fn(t) f(t) dt with a dense psi-space rule."""
        x, w = leggauss(nodes)
        psi_lo = math.asin(min(1.0, max(-1.0, 2.0 * lo - 1.0)))
        psi_hi = math.asin(min(1.0, max(-1.0, 2.0 * hi - 1.0)))
        half = 0.5 * (psi_hi - psi_lo)
        mid = 0.5 * (psi_hi + psi_lo)
        psi = mid + half * x
        t = 0.5 * (1.0 + np.sin(psi))
        vals = self._raw_weight_psi(psi) / self._norm * fn(t)
        return float(np.sum(vals * w) * half)

    def sample_t(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Inverse-cdf draws of t (used by Monte Carlo cross-checks)."""
        return np.asarray(self.quantile(rng.random(n)))

    # -- shared ironing grid --------------------------------------------------

    def ironing_grid(self, n: int = 4096):
        """Quantile-uniform t nodes (plus uniform-t fill) with exact cdf values.

        Returns (t, q) with t[0]=0, t[-1]=1, q exact at every node.  Cached:
        the grid is direction-independent, so mechanism construction reuses it.
        """
        key = int(n)
        hit = self._ironing_cache.get(key)
        if hit is not None:
            return hit
        q_u = np.linspace(0.0, 1.0, n + 1)
        t = np.asarray(self.quantile(q_u), dtype=float)
        t = np.union1d(t, np.linspace(0.0, 1.0, 513))
        # Drop nodes closer than resolution so hull slopes stay well-posed.
        keep = np.concatenate(([True], np.diff(t) > 1e-12))
        t = t[keep]
        t[0], t[-1] = 0.0, 1.0
        q = np.concatenate(([0.0], np.cumsum(self.m0(t[:-1], t[1:]))))
        q /= q[-1]
        q[-1] = 1.0
        self._ironing_cache[key] = (t, q)
        return t, q


    def virtual_nodes(self, n: int = 4096):
        """Grid nodes with the value-branch virtual value t - (1-F)/f.

        Cached per grid size; endpoints are dropped since the density
        vanishes there.  Used by threshold root-finding, which only ever
        looks above the worst-off ironing interval where this branch is
        the live one.
        """
        key = int(n)
        hit = self._virtual_cache.get(key)
        if hit is not None:
            return hit
        t, q = self.ironing_grid(n)
        t = t[1:-1]
        q = q[1:-1]
        fv = np.maximum(self.f(t), 1e-300)
        phi_up = t - (1.0 - q) / fv
        t.setflags(write=False)
        phi_up.setflags(write=False)
        self._virtual_cache[key] = (t, phi_up)
        return t, phi_up


_DIST_CACHE: dict[tuple, TypeDistribution] = {}


def type_distribution(k: int, radius: float, cache_cells: int = 2048) -> TypeDistribution:
    """Shared, cached TypeDistribution per (k, radius)."""
    key = (int(k), round(float(radius), 12), int(cache_cells))
    dist = _DIST_CACHE.get(key)
    if dist is None:
        dist = TypeDistribution(k, radius, cache_cells)
        _DIST_CACHE[key] = dist
    return dist


# ---------------------------------------------------------------------------
# TypeLine
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TypeLine:
    """Posterior-mean line theta_i(t) = a_i t + b_i with its type law F.

    Sign convention: sum(a) >= 0 (a line violating it is re-indexed by
    t -> 1-t before construction).  Lines built by posterior_line additionally
    satisfy Bayes plausibility a_i/2 + b_i = mu_i; standalone lines only need
    the geometric invariants theta_i >= 0 and (a_i, b_i) != (0, 0).
    """

    a: np.ndarray
    b: np.ndarray
    F: TypeDistribution
    s_lo: float = 0.0
    s_hi: float = 1.0
    flipped: bool = False

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.a, dtype=float)).copy()
        b = np.atleast_1d(np.asarray(self.b, dtype=float)).copy()
        if a.size != b.size:
            raise InputError("type line: slope and intercept lengths differ")
        scale = max(1.0, float(np.max(np.abs(a))), float(np.max(np.abs(b))))
        if float(np.sum(a)) < -_GEOM_TOL * scale:
            raise InputError("type line: sign convention sum(a) >= 0 violated")
        if np.any(b < -_GEOM_TOL * scale) or np.any(a + b < -_GEOM_TOL * scale):
            i = int(np.argmin(np.minimum(b, a + b)))
            raise InputError(
                f"type line: theta_{i + 1}(t) goes negative on [0, 1] "
                f"(b={b[i]:.6g}, a+b={(a + b)[i]:.6g})"
            )
        degenerate = (np.abs(a) <= _GEOM_TOL * scale) & (np.abs(b) <= _GEOM_TOL * scale)
        if np.any(degenerate):
            i = int(np.argmax(degenerate))
            raise InputError(f"type line: good {i + 1} has a_i = b_i = 0")
        a.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def k(self) -> int:
        return self.a.size

    def theta(self, t):
        """Posterior means at t; shape (..., K)."""
        t = np.asarray(t, dtype=float)
        return t[..., None] * self.a + self.b

    def theta_good(self, i: int, t):
        t = np.asarray(t, dtype=float)
        out = self.a[i] * t + self.b[i]
        return out if out.ndim else float(out)

    def signal_of_t(self, t):
        """Raw signal value backing type t (orientation-aware)."""
        t = np.asarray(t, dtype=float)
        frac = 1.0 - t if self.flipped else t
        out = self.s_lo + (self.s_hi - self.s_lo) * frac
        return out if out.ndim else float(out)

    def is_vertical(self, tol: float = 1e-12) -> bool:
        scale = max(1.0, float(np.max(np.abs(self.a))))
        return bool(np.all(self.a >= -tol * scale))

    def implied_mu(self) -> np.ndarray:
        """Prior means recovered from Bayes plausibility (E[t] = 1/2)."""
        return 0.5 * self.a + self.b


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def signal_marginal(scenario: Scenario, direction: Direction) -> TypeDistribution:
    """Type distribution F for the scenario; identical for every direction."""
    if direction.k != scenario.k:
        raise InputError(
            f"direction has {direction.k} weights but the scenario has "
            f"{scenario.k} goods"
        )
    # Positive-definiteness beyond the equicorrelation check, for safety.
    try:
        np.linalg.cholesky(scenario.cov())
    except np.linalg.LinAlgError as exc:
        raise ModelError("scenario covariance is not positive definite") from exc
    return type_distribution(scenario.k, scenario.radius)


def posterior_line(scenario: Scenario, direction: Direction) -> TypeLine:
    """Posterior-mean line for the canonical representative of `direction`.

    Slopes come from the untruncated covariance (truncation shrinks Sigma by a
    scalar, leaving Cov(v_k, s)/Var(s) unchanged); the signal range is
    alpha.mu +- r * sqrt(alpha' Sigma alpha).
    """
    direction = direction.canonical(scenario)
    dist = signal_marginal(scenario, direction)
    alpha = direction.alpha
    cov_ks = scenario.cov() @ alpha
    var_s = float(alpha @ cov_ks)
    if var_s <= 0.0:
        raise ModelError("signal variance alpha' Sigma alpha is not positive")
    sd_s = math.sqrt(var_s)
    r = scenario.radius
    s_mid = float(alpha @ scenario.mu)
    s_lo, s_hi = s_mid - r * sd_s, s_mid + r * sd_s

    a = 2.0 * r * cov_ks / sd_s
    b = scenario.mu - 0.5 * a
    flipped = False
    tot = float(np.sum(a))
    scale = max(1.0, float(np.max(np.abs(a))))
    if tot < -1e-12 * scale or (
        abs(tot) <= 1e-12 * scale and _first_nonzero_sign(a, scale) < 0
    ):
        a, b = -a, a + b
        flipped = True

    line = TypeLine(a=a, b=b, F=dist, s_lo=s_lo, s_hi=s_hi, flipped=flipped)
    err = float(np.max(np.abs(line.implied_mu() - scenario.mu)))
    if err > _BAYES_TOL * max(1.0, float(np.max(scenario.mu))):
        raise NumericError(
            f"posterior line failed Bayes plausibility by {err:.3g}"
        )
    return line


def _first_nonzero_sign(a: np.ndarray, scale: float) -> float:
    for x in a:
        if abs(x) > 1e-12 * scale:
            return math.copysign(1.0, x)
    return 0.0


@dataclass(frozen=True)
class CoordinateMarginal:
    """One-dimensional law of a single good's value under the truncation."""

    lo: float
    hi: float
    mean: float
    dist: TypeDistribution

    def _t_of_v(self, v):
        return np.clip((np.asarray(v, dtype=float) - self.lo) / (self.hi - self.lo), 0.0, 1.0)

    def pdf(self, v):
        inside = (np.asarray(v, dtype=float) >= self.lo) & (np.asarray(v) <= self.hi)
        out = self.dist.f(self._t_of_v(v)) / (self.hi - self.lo)
        out = np.where(inside, out, 0.0)
        return out if out.ndim else float(out)

    def cdf(self, v):
        return self.dist.cdf(self._t_of_v(v))

    def expected_excess(self, p: float) -> float:
        """E[max(v - p, 0)]."""
        if p <= self.lo:
            return self.mean - p
        if p >= self.hi:
            return 0.0
        t_p = (p - self.lo) / (self.hi - self.lo)
        span = self.hi - self.lo
        return span * self.dist.m1(t_p, 1.0) + (self.lo - p) * self.dist.m0(t_p, 1.0)


def coordinate_marginal(scenario: Scenario, i: int) -> CoordinateMarginal:
    """Marginal of v_i: the direction e_i mapped to value units."""
    if not (0 <= i < scenario.k):
        raise InputError(f"good index {i} out of range for k={scenario.k}")
    dist = type_distribution(scenario.k, scenario.radius)
    mu_i = float(scenario.mu[i])
    half = scenario.radius * float(scenario.sigma[i])
    return CoordinateMarginal(lo=mu_i - half, hi=mu_i + half, mean=mu_i, dist=dist)
