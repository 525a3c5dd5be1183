"""Shared data model: observed samples, identified primitives, bound results."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import BadFlag, DivideByZero, EmptyCell, EmptyInput, MissingOutcome

METHODS = ("lee", "stochastic", "stochastic_symmetry", "unknown_max", "covariate_adjusted", "mte")


def _frozen(a):
    a = np.asarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SelectionSample:
    """Validated unit-level data ``(y, s, d[, w])``.

    ``y`` is only meaningful where ``s == 1``.  Unobserved outcomes are
    stored as NaN inside the array and surface as ``None`` through
    :meth:`records`; nothing ever reads them.  ``flipped`` marks a sample
    whose arm labels were swapped by :func:`smbounds.estimate.flip_direction`
    so that estimators can map bounds back to the original sign convention.
    """

    y: np.ndarray
    s: np.ndarray
    d: np.ndarray
    w: Optional[np.ndarray] = None
    flipped: bool = False
    counts: Mapping[tuple[int, int], int] = field(default_factory=dict)

    @classmethod
    def from_arrays(cls, y, s, d, w=None, flipped=False, require_cells=True) -> "SelectionSample":
        s = np.asarray(s)
        d = np.asarray(d)
        y = np.asarray(y, dtype=float)
        n = len(s)
        if n == 0:
            raise EmptyInput("sample has no records")
        if len(d) != n or len(y) != n or (w is not None and len(w) != n):
            raise BadFlag("columns have different lengths")
        for name, col in (("s", s), ("d", d)):
            bad = ~np.isin(col, (0, 1))
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                raise BadFlag(f"{name}={col[i]!r} at record {i} is outside {{0, 1}}")
        s = s.astype(np.int8)
        d = d.astype(np.int8)
        sel = s == 1
        missing = sel & ~np.isfinite(y)
        if missing.any():
            raise MissingOutcome(int(np.flatnonzero(missing)[0]))
        y = np.where(sel, y, np.nan)
        counts = {(dd, ss): int(np.sum((d == dd) & (s == ss))) for dd in (0, 1) for ss in (0, 1)}
        if require_cells:
            for dd in (1, 0):
                if counts[(dd, 1)] == 0:
                    raise EmptyCell(dd, 1)
        if w is not None:
            w = _frozen(np.asarray(w, dtype=object))
        return cls(_frozen(y), _frozen(s), _frozen(d), w, bool(flipped), counts)

    @property
    def n(self) -> int:
        return len(self.s)

    def outcomes(self, arm: int) -> np.ndarray:
        """Observed outcomes of selected units in arm ``arm``."""
        return self.y[(self.d == arm) & (self.s == 1)]

    def records(self) -> Iterable[dict]:
        for i in range(self.n):
            yield {
                "y": float(self.y[i]) if self.s[i] == 1 else None,
                "s": int(self.s[i]),
                "d": int(self.d[i]),
                "w": None if self.w is None else self.w[i],
            }

    def subset(self, mask, require_cells=True) -> "SelectionSample":
        w = None if self.w is None else self.w[mask]
        return SelectionSample.from_arrays(
            self.y[mask], self.s[mask], self.d[mask], w, self.flipped, require_cells
        )


def validate_sample(raw: Sequence[Any], require_cells: bool = True) -> SelectionSample:
    """Validate a list of records.

    Records are mappings with keys ``y``, ``s``, ``d`` and optionally ``w``, or
    tuples ``(y, s, d[, w])``.  ``y`` may be ``None`` (or absent) when ``s == 0``.
    """
    if raw is None or len(raw) == 0:
        raise EmptyInput("no records")
    n = len(raw)
    y = np.full(n, np.nan)
    s = np.empty(n, dtype=object)
    d = np.empty(n, dtype=object)
    w = [None] * n
    has_w = False
    for i, rec in enumerate(raw):
        if isinstance(rec, Mapping):
            yi, si, di, wi = rec.get("y"), rec.get("s"), rec.get("d"), rec.get("w")
        else:
            yi, si, di = rec[0], rec[1], rec[2]
            wi = rec[3] if len(rec) > 3 else None
        if si not in (0, 1):
            raise BadFlag(f"s={si!r} at record {i} is outside {{0, 1}}")
        if di not in (0, 1):
            raise BadFlag(f"d={di!r} at record {i} is outside {{0, 1}}")
        if si == 1:
            if yi is None or (isinstance(yi, float) and math.isnan(yi)):
                raise MissingOutcome(i)
            y[i] = float(yi)
        s[i], d[i] = int(si), int(di)
        if wi is not None:
            has_w = True
        w[i] = wi
    return SelectionSample.from_arrays(
        y, s.astype(int), d.astype(int), w if has_w else None, require_cells=require_cells
    )


def check_theta(theta_L: float) -> float:
    theta_L = float(theta_L)
    if not (0.0 < theta_L <= 1.0):
        raise ValueError(f"theta_L must lie in (0, 1], got {theta_L}")
    return theta_L


def frechet_floor(alpha0: float, q0: float) -> float:
    """Smallest P(S1=1 | S0=1) compatible with the observed selection rates."""
    return 1.0 + 1.0 / q0 - 1.0 / alpha0


@dataclass(frozen=True)
class IdentifiedPrimitives:
    alpha0: float
    p_s1_d1: float
    q0: float
    theta_F: float
    theta: float
    eta0: float
    p_d1: float
    theta_L: float = 1.0

    def __post_init__(self):
        for name in ("alpha0", "p_s1_d1", "p_d1"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name}={v} is not a probability")
        if self.q0 < 0:
            raise ValueError("q0 must be nonnegative")

    @property
    def p_d0(self) -> float:
        return 1.0 - self.p_d1

    @property
    def p_s1d1(self) -> float:
        """Joint probability P(S=1, D=1)."""
        return self.p_s1_d1 * self.p_d1

    @property
    def p_s1d0(self) -> float:
        return self.alpha0 * self.p_d0

    def share(self, theta: Optional[float] = None) -> float:
        """Always-taker share ``theta * q0`` of the selected treated arm, raw."""
        return (self.theta if theta is None else theta) * self.q0


def make_primitives(alpha0, p_s1_d1, p_d1, eta0, theta_L) -> IdentifiedPrimitives:
    theta_L = check_theta(theta_L)
    if p_s1_d1 <= 0:
        raise DivideByZero("P(S=1 | D=1) is zero")
    if alpha0 <= 0:
        raise DivideByZero("P(S=1 | D=0) is zero")
    q0 = alpha0 / p_s1_d1
    theta_F = frechet_floor(alpha0, q0)
    return IdentifiedPrimitives(
        alpha0=float(alpha0), p_s1_d1=float(p_s1_d1), q0=float(q0), theta_F=float(theta_F),
        theta=float(max(theta_L, theta_F)), eta0=float(eta0), p_d1=float(p_d1), theta_L=theta_L,
    )


def identified_primitives(sample: SelectionSample, theta_L: float) -> IdentifiedPrimitives:
    """Cell proportions, selection ratio, Frechet floor and control mean."""
    c = sample.counts
    n1 = c[(1, 0)] + c[(1, 1)]
    n0 = c[(0, 0)] + c[(0, 1)]
    if n1 == 0 or c[(1, 1)] == 0:
        raise DivideByZero("no selected treated units")
    if n0 == 0 or c[(0, 1)] == 0:
        raise DivideByZero("no selected control units")
    alpha0 = c[(0, 1)] / n0
    p1 = c[(1, 1)] / n1
    eta0 = float(np.mean(sample.outcomes(0)))
    return make_primitives(alpha0, p1, n1 / sample.n, eta0, theta_L)


@dataclass(frozen=True)
class QuantileSpec:
    """Probability level with the left-continuous inverse convention."""

    r: float
    side: str = "left_inf"

    def __post_init__(self):
        if not (0.0 <= self.r <= 1.0):
            raise ValueError(f"quantile level {self.r} outside [0, 1]")
        if self.side != "left_inf":
            raise ValueError("only the left-continuous inf convention is supported")


@dataclass(frozen=True)
class CiResult:
    lo: float
    hi: float
    level: float
    critical_value: float
    method: str
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError(f"CI endpoints out of order: {self.lo} > {self.hi}")

    def to_dict(self):
        return {
            "lo": self.lo, "hi": self.hi, "level": self.level,
            "critical_value": self.critical_value, "method": self.method,
            "metadata": dict(self.metadata),
        }


@dataclass(frozen=True)
class BoundsResult:
    """Point bounds plus optional standard errors and confidence interval.

    ``trim_fraction`` is the share of the selected treated arm trimmed away
    (``1 - theta * q0`` after clamping), so 0 means no trimming.
    """

    lower: float
    upper: float
    method: str
    theta_used: float
    trim_fraction: float
    se_lower: Optional[float] = None
    se_upper: Optional[float] = None
    ci: Optional[CiResult] = None
    n: Optional[int] = None
    warnings: tuple = ()
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method tag {self.method!r}")
        tol = 1e-12 * max(1.0, abs(self.lower), abs(self.upper))
        if self.lower > self.upper + tol:
            raise ValueError(f"lower bound {self.lower} exceeds upper bound {self.upper}")
        if not (0.0 <= self.trim_fraction <= 1.0):
            raise ValueError("trim_fraction must lie in [0, 1]")
        if self.ci is not None and (self.ci.lo > self.lower + tol or self.ci.hi < self.upper - tol):
            raise ValueError("confidence interval does not contain the point bounds")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def replace(self, **kw) -> "BoundsResult":
        from dataclasses import replace

        return replace(self, **kw)

    def to_dict(self):
        return {
            "lower": self.lower, "upper": self.upper,
            "se_lower": self.se_lower, "se_upper": self.se_upper,
            "ci": None if self.ci is None else self.ci.to_dict(),
            "method": self.method, "theta_used": self.theta_used,
            "trim_fraction": self.trim_fraction, "n": self.n,
            "warnings": list(self.warnings), "metadata": dict(self.metadata),
        }
