"""Population bounds from a fully specified data-generating process."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from .core import IdentifiedPrimitives, check_theta, make_primitives
from .distributions import Law, Mixture, law_from_config, law_to_config, mix, quad
from .errors import Assumption5Violated, DegenerateSelection, InvalidDgp

STRATA = ((1, 1), (1, 0), (0, 1), (0, 0))


def _key(k):
    if isinstance(k, str):
        k = tuple(int(c) for c in k.replace(",", "").replace("(", "").replace(")", "").strip())
    return (int(k[0]), int(k[1]))


@dataclass(frozen=True, eq=False)
class DgpSpec:
    """Joint law of ``(Y1*, Y0*, S1, S0, D)``.

    ``pi`` maps strata ``(s1, s0)`` to probabilities.  ``f1_given`` holds the
    law of ``Y1*`` for every stratum with ``s1 = 1`` (and optionally the
    ``(0, 1)`` stratum, needed only to check conditional independence);
    ``f0_given`` holds the law of ``Y0*`` for strata with ``s0 = 1``.
    """

    pi: Mapping[tuple[int, int], float]
    f1_given: Mapping[tuple[int, int], Law]
    f0_given: Mapping[tuple[int, int], Law]
    p_d1: float = 0.5
    name: str = ""

    def __post_init__(self):
        pi = {k: 0.0 for k in STRATA}
        pi.update({_key(k): float(v) for k, v in self.pi.items()})
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "f1_given", {_key(k): v for k, v in self.f1_given.items()})
        object.__setattr__(self, "f0_given", {_key(k): v for k, v in self.f0_given.items()})
        if any(v < 0 for v in pi.values()) or not math.isclose(sum(pi.values()), 1.0, abs_tol=1e-12):
            raise InvalidDgp(f"stratum probabilities must be nonnegative and sum to 1: {pi}")
        if not (0.0 < self.p_d1 < 1.0):
            raise InvalidDgp("treatment probability must lie in (0, 1)")
        for k in STRATA:
            if pi[k] > 0 and k[0] == 1 and k not in self.f1_given:
                raise InvalidDgp(f"missing Y1* law for stratum {k}")
            if pi[k] > 0 and k[1] == 1 and k not in self.f0_given:
                raise InvalidDgp(f"missing Y0* law for stratum {k}")

    @property
    def p_s1(self) -> float:
        """P(S1 = 1)."""
        return self.pi[(1, 1)] + self.pi[(1, 0)]

    @property
    def p_s0(self) -> float:
        return self.pi[(1, 1)] + self.pi[(0, 1)]

    @property
    def theta_true(self) -> float:
        """P(S1 = 1 | S0 = 1)."""
        return self.pi[(1, 1)] / self.p_s0

    def check_densities(self, tol: float = 1e-6) -> None:
        """Raise if any continuous conditional law fails to integrate to one."""
        for laws in (self.f1_given, self.f0_given):
            for k, law in laws.items():
                if not law.continuous:
                    continue
                lo, hi = law.support()
                mass = quad(lambda t: float(law.pdf(t)), lo, hi, points=law.breakpoints())
                if abs(mass - 1.0) > tol:
                    raise InvalidDgp(f"law for stratum {k} integrates to {mass}")

    def check_conditional_independence(self, grid=None, tol: float = 1e-10) -> bool:
        """Y* laws do not depend on S1 among units with S0 = 1."""
        if grid is None:
            grid = np.linspace(-10, 10, 201)
        for laws in (self.f1_given, self.f0_given):
            a, b = laws.get((1, 1)), laws.get((0, 1))
            if a is None or b is None:
                continue
            if np.max(np.abs(np.asarray(a.cdf(grid)) - np.asarray(b.cdf(grid)))) > tol:
                return False
        return True

    def to_config(self) -> dict:
        return {
            "pi": {f"{k[0]}{k[1]}": v for k, v in self.pi.items()},
            "f1": {f"{k[0]}{k[1]}": law_to_config(v) for k, v in self.f1_given.items()},
            "f0": {f"{k[0]}{k[1]}": law_to_config(v) for k, v in self.f0_given.items()},
            "p_d1": self.p_d1,
            "name": self.name,
        }

    @classmethod
    def from_config(cls, cfg: Mapping) -> "DgpSpec":
        if cfg.get("preset") == "example1":
            return example1_dgp()
        try:
            return cls(
                pi={_key(k): v for k, v in cfg["pi"].items()},
                f1_given={_key(k): law_from_config(v) for k, v in cfg["f1"].items()},
                f0_given={_key(k): law_from_config(v) for k, v in cfg["f0"].items()},
                p_d1=float(cfg.get("p_d1", 0.5)),
                name=str(cfg.get("name", "")),
            )
        except KeyError as e:
            raise InvalidDgp(f"DGP config lacks key {e}") from None


def example1_dgp(pi=None, p_d1: float = 0.5) -> DgpSpec:
    """Job-training illustration: 2.5% of units defy monotone selection.

    Always-takers and defiers have ``N(0, 1/2)`` outcomes in both arms, units
    selected only under treatment have ``N(2, 1/2)``; the effect is zero.
    """
    from .distributions import Normal

    sd = math.sqrt(0.5)
    pi = pi or {(1, 1): 0.475, (0, 1): 0.025, (1, 0): 0.300, (0, 0): 0.200}
    base, shifted = Normal(0.0, sd), Normal(2.0, sd)
    return DgpSpec(
        pi=pi,
        f1_given={(1, 1): base, (0, 1): base, (1, 0): shifted},
        f0_given={(1, 1): base, (0, 1): base, (1, 0): shifted},
        p_d1=p_d1,
        name="example1",
    )


@dataclass(frozen=True)
class PopulationBounds:
    lower: float
    upper: float
    assumption_set: str
    theta: float = float("nan")
    q0: float = float("nan")
    eta0: float = float("nan")
    quantiles: tuple = ()

    def __post_init__(self):
        if self.assumption_set not in ("lee", "stochastic", "stochastic_symmetry"):
            raise ValueError(f"unknown assumption set {self.assumption_set!r}")
        if self.lower > self.upper + 1e-12 * max(1.0, abs(self.upper)):
            raise ValueError("population lower bound exceeds upper bound")

    @property
    def width(self):
        return self.upper - self.lower

    def contains(self, x: float, tol: float = 0.0) -> bool:
        return self.lower - tol <= x <= self.upper + tol


def treated_law(dgp: DgpSpec) -> Law:
    """Law of Y given D=1, S=1: selected-treated strata mixed by their weights."""
    p = dgp.p_s1
    if p <= 0:
        raise DegenerateSelection("P(S1 = 1) is zero")
    ks = [k for k in ((1, 1), (1, 0)) if dgp.pi[k] > 0]
    return mix([dgp.pi[k] / p for k in ks], [dgp.f1_given[k] for k in ks])


def control_law(dgp: DgpSpec) -> Law:
    p = dgp.p_s0
    if p <= 0:
        raise DegenerateSelection("P(S0 = 1) is zero")
    ks = [k for k in ((1, 1), (0, 1)) if dgp.pi[k] > 0]
    return mix([dgp.pi[k] / p for k in ks], [dgp.f0_given[k] for k in ks])


def mixture_cdf_treated(dgp: DgpSpec, y):
    """P(Y <= y | D=1, S=1)."""
    return treated_law(dgp).cdf(y)


def population_primitives(dgp: DgpSpec, theta_L: float) -> IdentifiedPrimitives:
    return make_primitives(dgp.p_s0, dgp.p_s1, dgp.p_d1, control_law(dgp).mean(), theta_L)


def clamp_share(x: float) -> float:
    return min(max(x, 0.0), 1.0)


def lower_trimmed_mean(law: Law, share: float) -> float:
    """Mean of the lowest ``share`` of ``law``."""
    if share <= 0:
        return law.ppf(0.0)
    return law.quantile_integral(0.0, share) / share


def upper_trimmed_mean(law: Law, share: float) -> float:
    if share <= 0:
        return law.ppf(1.0)
    return law.quantile_integral(1.0 - share, 1.0) / share


def population_bounds_stochastic(dgp: DgpSpec, theta_L: float) -> PopulationBounds:
    """Sharp trimming bounds under stochastic monotonicity."""
    prim = population_primitives(dgp, check_theta(theta_L))
    law = treated_law(dgp)
    share = clamp_share(prim.theta * prim.q0)
    lo = lower_trimmed_mean(law, share)
    hi = upper_trimmed_mean(law, share)
    tag = "lee" if prim.theta == 1.0 else "stochastic"
    return PopulationBounds(
        lo - prim.eta0, hi - prim.eta0, tag, prim.theta, prim.q0, prim.eta0,
        (law.ppf(share), law.ppf(1.0 - share)),
    )


def population_bounds_symmetry(dgp: DgpSpec, theta_L: float) -> PopulationBounds:
    """Quantile bounds valid when the always-taker outcome law has mean = median."""
    prim = population_primitives(dgp, check_theta(theta_L))
    law = treated_law(dgp)
    half = clamp_share(prim.theta * prim.q0) / 2.0
    ql, qu = law.ppf(half), law.ppf(1.0 - half)
    return PopulationBounds(
        ql - prim.eta0, qu - prim.eta0, "stochastic_symmetry", prim.theta, prim.q0, prim.eta0, (ql, qu)
    )


@dataclass(frozen=True)
class FoldCheck:
    lower_ok: bool
    upper_ok: bool
    lower_violation: float
    upper_violation: float
    fold_points: tuple

    @property
    def ok(self):
        return self.lower_ok and self.upper_ok


def assumption5_check(dgp: DgpSpec, theta_L: float, n_grid: int = 20001, rtol: float = 1e-8) -> FoldCheck:
    """Check the folded-density (tail smoothness) condition on a fine grid.

    Lower fold point ``c``: ``f(c - a) <= f(c + a)``; upper fold point:
    ``f(c - a) >= f(c + a)``, for every ``a > 0``.
    """
    prim = population_primitives(dgp, theta_L)
    law = treated_law(dgp)
    half = clamp_share(prim.theta * prim.q0) / 2.0
    cl, cu = law.ppf(half), law.ppf(1.0 - half)
    lo, hi = law.support()
    fmax = float(np.max(law.pdf(np.linspace(lo, hi, 4001))))
    tol = rtol * fmax + 1e-14
    out = []
    for c, sign in ((cl, 1.0), (cu, -1.0)):
        span = max(c - lo, hi - c)
        a = np.concatenate([np.geomspace(1e-9 * span, 1e-3 * span, 200), np.linspace(1e-3 * span, span, n_grid)])
        left, right = law.pdf(c - a), law.pdf(c + a)
        # lower fold needs left <= right; upper fold needs left >= right
        gap = sign * (np.asarray(left) - np.asarray(right))
        out.append(max(float(np.max(gap)), 0.0))
    return FoldCheck(out[0] <= tol, out[1] <= tol, out[0], out[1], (cl, cu))


@dataclass(frozen=True)
class NestingReport:
    stochastic: PopulationBounds
    symmetry: PopulationBounds
    nested: bool
    violation: float
    assumption_5: bool
    fold: FoldCheck


def nesting_check(dgp: DgpSpec, theta_L: float, tol: float = 1e-9) -> NestingReport:
    st = population_bounds_stochastic(dgp, theta_L)
    sy = population_bounds_symmetry(dgp, theta_L)
    viol = max(st.lower - sy.lower, sy.upper - st.upper, 0.0)
    fold = assumption5_check(dgp, theta_L)
    return NestingReport(st, sy, viol <= tol, viol, fold.ok, fold)


@dataclass(frozen=True, eq=False)
class SharpnessConstruction:
    """Joint law that reproduces the observed data and attains a symmetry bound.

    ``pi_tilde`` holds the constructed stratum probabilities;
    ``always_taker_cdf`` is the law of Y1* among constructed always-takers
    (also used for the (s1=0, s0=1) stratum); ``complier_cdf`` the law of Y1*
    in the (1, 0) stratum.  Y0* keeps the observed control law in every stratum.
    """

    side: str
    theta: float
    fold_point: float
    pi_tilde: Mapping[tuple[int, int], float]
    always_taker_cdf: Callable
    complier_cdf: Callable
    treated_cdf: Callable
    control_mean: float
    attained_tau: float
    target: float
    max_observed_error: float
    complier_monotone: bool
    grid: np.ndarray = field(repr=False, default=None)

    @property
    def passes(self) -> bool:
        return self.max_observed_error <= 1e-4 and abs(self.attained_tau - self.target) <= 1e-4 and self.complier_monotone


def sharpness_construction(
    dgp: DgpSpec, theta_L: float, side: str = "upper", n_grid: int = 4001, enforce: bool = True
) -> SharpnessConstruction:
    """Fold the selected-treated law about a symmetry-bound quantile.

    The constructed always-taker law is symmetric about the fold point, so its
    mean equals the bound.  Whatever treated mass is not claimed by it goes to
    the (1, 0) stratum; that remainder is a proper CDF exactly when the
    tail-smoothness condition holds on ``side``.  With ``enforce=False`` the
    construction is returned regardless and ``complier_monotone`` tells
    whether it is a valid law.
    """
    if side not in ("upper", "lower"):
        raise ValueError("side must be 'upper' or 'lower'")
    fold = assumption5_check(dgp, theta_L)
    ok, gap = (fold.upper_ok, fold.upper_violation) if side == "upper" else (fold.lower_ok, fold.lower_violation)
    if enforce and not ok:
        raise Assumption5Violated(f"folded density exceeds density at the {side} fold by {gap:.3g}")
    prim = population_primitives(dgp, theta_L)
    law = treated_law(dgp)
    th, a0, p1 = prim.theta, prim.alpha0, prim.p_s1_d1
    r = clamp_share(th * prim.q0)
    c = law.ppf(1.0 - r / 2.0) if side == "upper" else law.ppf(r / 2.0)
    F = law.cdf

    def always(y):
        y = np.asarray(y, dtype=float)
        if side == "upper":
            return np.where(y >= c, 0.5 + (F(y) - F(c)) / r, (1.0 - F(2 * c - y)) / r)
        return np.where(y <= c, F(y) / r, 1.0 - F(2 * c - y) / r)

    def complier(y):
        if r >= 1.0:
            return np.asarray(F(y), dtype=float)
        return (F(y) - r * always(y)) / (1.0 - r)

    pi_t = {
        (1, 1): th * a0,
        (0, 1): (1.0 - th) * a0,
        (1, 0): p1 - th * a0,
    }
    pi_t[(0, 0)] = 1.0 - sum(pi_t.values())

    lo, hi = law.support()
    span = max(c - lo, hi - c)
    grid = np.linspace(c - span, c + span, n_grid)
    implied = dgp.p_d1 * (pi_t[(1, 1)] * always(grid) + pi_t[(1, 0)] * complier(grid))
    observed = dgp.p_d1 * p1 * F(grid)
    err = float(np.max(np.abs(implied - observed)))
    cg = complier(grid)
    monotone = bool(np.all(np.diff(cg) >= -1e-10) and cg.min() >= -1e-10 and cg.max() <= 1 + 1e-10)

    # mean of the folded law: the kept tail plus its mirror image
    if side == "upper":
        kept = quad(lambda t: t * float(law.pdf(t)), c, hi, points=law.breakpoints())
        mirrored = quad(lambda t: (2 * c - t) * float(law.pdf(t)), c, hi, points=law.breakpoints())
    else:
        kept = quad(lambda t: t * float(law.pdf(t)), lo, c, points=law.breakpoints())
        mirrored = quad(lambda t: (2 * c - t) * float(law.pdf(t)), lo, c, points=law.breakpoints())
    mean_at = (kept + mirrored) / r
    return SharpnessConstruction(
        side=side, theta=th, fold_point=c, pi_tilde=pi_t, always_taker_cdf=always,
        complier_cdf=complier, treated_cdf=F, control_mean=prim.eta0,
        attained_tau=mean_at - prim.eta0, target=c - prim.eta0,
        max_observed_error=err, complier_monotone=monotone, grid=grid,
    )
