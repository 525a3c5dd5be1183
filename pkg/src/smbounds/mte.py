"""Bounds on marginal treatment effects for always-takers, by latent index.

Population-level only: the model supplies selection probabilities and
outcome laws given the latent index ``v``; bounds trim the treated outcome
law at each ``v`` by the share ``s(v)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .distributions import Discrete, Law, norm_cdf, norm_ppf
from .errors import ZeroSelection
from .identify import lower_trimmed_mean, upper_trimmed_mean

SETS = ("monotone", "stochastic", "frechet_only")
DEFAULT_GRID = np.round(np.arange(0.05, 0.9500001, 0.01), 10)


@dataclass(frozen=True)
class MteModel:
    p_s1_given_v: Callable[[float], float]
    p_s0_given_v: Callable[[float], float]
    f1_given_v: Callable[[float], Law]
    f0_given_v: Callable[[float], Law]
    support: tuple = (0.0, 1.0)
    truth: Optional[Callable[[float], float]] = None
    name: str = ""

    def check(self, v: float) -> None:
        lo, hi = self.support
        if not lo <= v <= hi:
            raise ValueError(f"v={v} outside model support {self.support}")


@dataclass(frozen=True)
class MteBounds:
    grid: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    s_of_v: np.ndarray
    assumption_set: str
    theta_L: float = 1.0

    def __post_init__(self):
        if np.any(self.lower > self.upper + 1e-12):
            raise ValueError("MTE lower bound above upper bound")
        if np.any((self.s_of_v < 0) | (self.s_of_v > 1)):
            raise ValueError("trimming share outside [0, 1]")

    @property
    def tag(self) -> str:
        return f"stochastic({self.theta_L:g})" if self.assumption_set == "stochastic" else self.assumption_set

    def rows(self):
        for v, lo, hi, s in zip(self.grid, self.lower, self.upper, self.s_of_v):
            yield {"v": float(v), "lower": float(lo), "upper": float(hi), "s": float(s), "set": self.tag}


def mte_trim_share(model: MteModel, v: float, theta_L: float = 1.0, set: str = "stochastic") -> float:
    """Kept share ``s(v)`` of the treated selected law at ``v``."""
    model.check(v)
    p1, p0 = float(model.p_s1_given_v(v)), float(model.p_s0_given_v(v))
    if p1 <= 0:
        raise ZeroSelection(f"P(S1=1 | V={v}) is zero")
    eta = p0 / p1
    alpha_t = max(p0 + p1 - 1.0, 0.0) / p1
    if set == "monotone":
        s = eta
    elif set == "frechet_only":
        s = alpha_t
    elif set == "stochastic":
        s = max(theta_L * eta, alpha_t)
    else:
        raise ValueError(f"assumption set must be one of {SETS}")
    return min(max(s, 0.0), 1.0)


def mte_bounds(model: MteModel, grid: Optional[Sequence[float]] = None, theta_L: float = 1.0,
               set: str = "stochastic") -> MteBounds:
    grid = DEFAULT_GRID if grid is None else np.asarray(grid, dtype=float)
    lo, hi, ss = [], [], []
    for v in grid:
        s = mte_trim_share(model, float(v), theta_L, set)
        law1, law0 = model.f1_given_v(float(v)), model.f0_given_v(float(v))
        m0 = law0.mean()
        lo.append(lower_trimmed_mean(law1, s) - m0)
        hi.append(upper_trimmed_mean(law1, s) - m0)
        ss.append(s)
    return MteBounds(np.asarray(grid), np.array(lo), np.array(hi), np.array(ss), set,
                     1.0 if set == "monotone" else theta_L)


def _p_sel(d):
    c = (0.1 + 0.4 * d) * math.sqrt(2.0)
    return lambda v: float(norm_cdf(c - norm_ppf(v)))


def build_appendix_dgp() -> MteModel:
    """Selection threshold ``0.1 + 0.4 D`` on ``(eps_V + eps_S)/sqrt(2)``.

    Given ``eps_V = e``: ``Y0*`` is ``+-e`` and ``Y1*`` is ``5e`` or ``-e``,
    each with probability 1/2, independently of selection.  The effect at
    ``v`` is ``2 Phi^{-1}(v)``.
    """
    def f1(v):
        e = float(norm_ppf(v))
        return Discrete([5 * e, -e], [0.5, 0.5])

    def f0(v):
        e = float(norm_ppf(v))
        return Discrete([e, -e], [0.5, 0.5])

    return MteModel(_p_sel(1), _p_sel(0), f1, f0, (0.0, 1.0),
                    truth=lambda v: 2.0 * float(norm_ppf(v)), name="latent_index")


def draw_appendix(n: int, seed=0) -> dict:
    """Unit-level draws from the built-in latent-index design (for Monte Carlo checks)."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    ev, es = rng.standard_normal(n), rng.standard_normal(n)
    xi = rng.choice([-1.0, 1.0], size=n)
    us = (ev + es) / math.sqrt(2.0)
    s0 = (us <= 0.1).astype(int)
    s1 = (us <= 0.5).astype(int)
    y0 = np.where(xi > 0, ev, -ev)
    y1 = np.where(xi > 0, 5 * ev, -ev)
    return {"v": norm_cdf(ev), "s0": s0, "s1": s1, "y0": y0, "y1": y1}
