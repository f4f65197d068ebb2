"""Distortion functions, their TVaR-mixture form, and parameter calibration.

A distortion ``g`` maps exceedance probabilities to risk-adjusted
probabilities. Pricing a layer with attachment probability ``s`` costs
``g(s)`` per unit of width, so the price of a risk is the integral of
``g(S(x))`` over ``x``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np
from scipy import optimize, special

from .errors import CalibrationError, DomainError

if TYPE_CHECKING:
    from .discrete import LevelView

# slope reported where the derivative is unbounded (s -> 0)
SLOPE_CAP = 1e12


def _as_prob(s):
    arr = np.asarray(s, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError(f"probability outside [0, 1]: {s!r}")
    return arr


def _out(arr, like):
    return float(arr) if np.ndim(like) == 0 else arr


class Distortion:
    """Concave distortion function on [0, 1] with g(0)=0 and g(1)=1."""

    family = "abstract"

    def _g(self, s: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _g_prime(self, s: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def g(self, s):
        """Evaluate the distortion; accepts scalars or arrays."""
        arr = _as_prob(s)
        return _out(self._g(arr), s)

    def g_prime(self, s):
        """Left derivative of g, capped at ``SLOPE_CAP`` near zero."""
        arr = _as_prob(s)
        return _out(np.minimum(self._g_prime(arr), SLOPE_CAP), s)

    __call__ = g

    def to_spec(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Identity(Distortion):
    family = "identity"

    def _g(self, s):
        return s.copy()

    def _g_prime(self, s):
        return np.ones_like(s)

    def to_spec(self):
        return {"family": "identity"}


@dataclass(frozen=True)
class ProportionalHazard(Distortion):
    """``g(s) = s**r`` for ``0 < r <= 1``."""

    r: float
    family = "ph"

    def __post_init__(self):
        if not 0.0 < self.r <= 1.0:
            raise DomainError(f"proportional hazard exponent must lie in (0, 1], got {self.r}")

    def _g(self, s):
        return np.power(s, self.r)

    def _g_prime(self, s):
        if self.r == 1.0:
            return np.ones_like(s)
        with np.errstate(divide="ignore"):
            return np.where(s > 0, self.r * np.power(np.where(s > 0, s, 1.0), self.r - 1.0), np.inf)

    def to_spec(self):
        return {"family": "ph", "r": self.r}


@dataclass(frozen=True)
class Wang(Distortion):
    """Wang transform ``g(s) = Phi(Phi^{-1}(s) + lam)``."""

    lam: float
    family = "wang"

    def __post_init__(self):
        if not self.lam >= 0.0:
            raise DomainError(f"Wang shift must be non-negative, got {self.lam}")

    def _g(self, s):
        inner = (s > 0) & (s < 1)
        z = special.ndtri(np.where(inner, s, 0.5))
        return np.where(inner, special.ndtr(z + self.lam), s)

    def _g_prime(self, s):
        # phi(z + lam) / phi(z) = exp(-lam z - lam^2 / 2)
        inner = (s > 0) & (s < 1)
        z = special.ndtri(np.where(inner, s, 0.5))
        slope = np.exp(-self.lam * z - 0.5 * self.lam**2)
        top = 0.0 if self.lam > 0 else 1.0
        return np.where(inner, slope, np.where(s == 0, np.inf, top))

    def to_spec(self):
        return {"family": "wang", "lambda": self.lam}


@dataclass(frozen=True)
class PiecewiseLinear(Distortion):
    """Linear interpolation through knots ``(s, g(s))`` from (0, 0) to (1, 1)."""

    knots: tuple
    family = "piecewise"
    _s: np.ndarray = field(init=False, repr=False, compare=False)
    _v: np.ndarray = field(init=False, repr=False, compare=False)
    _slopes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        pts = sorted((float(a), float(b)) for a, b in self.knots)
        object.__setattr__(self, "knots", tuple(pts))
        s = np.array([p[0] for p in pts])
        v = np.array([p[1] for p in pts])
        if len(s) < 2 or s[0] != 0.0 or s[-1] != 1.0 or v[0] != 0.0 or v[-1] != 1.0:
            raise DomainError("piecewise distortion must run from (0, 0) to (1, 1)")
        if np.any(np.diff(s) <= 0):
            raise DomainError("piecewise distortion knots must have distinct s values")
        slopes = np.diff(v) / np.diff(s)
        if np.any(slopes < -1e-12):
            raise DomainError("piecewise distortion must be nondecreasing")
        if np.any(np.diff(slopes) > 1e-9 * np.maximum(1.0, np.abs(slopes[1:]))):
            raise DomainError("piecewise distortion must be concave")
        object.__setattr__(self, "_s", s)
        object.__setattr__(self, "_v", v)
        object.__setattr__(self, "_slopes", slopes)

    def _g(self, s):
        return np.interp(s, self._s, self._v)

    def _g_prime(self, s):
        seg = np.clip(np.searchsorted(self._s, s, side="left") - 1, 0, len(self._slopes) - 1)
        return self._slopes[seg]

    def to_mixture(self) -> TVaRMixture:
        """Weights of the TVaR mixture that prices identically to this distortion."""
        s_right = self._s[1:]
        c = self._slopes
        c_next = np.append(c[1:], 0.0)
        mu = s_right * (c - c_next)
        pairs = [(1.0 - sk, mk) for sk, mk in zip(s_right, mu) if mk > 0.0]
        pairs.sort()
        return TVaRMixture(tuple(pairs))

    def to_spec(self):
        return {"family": "piecewise", "knots": [list(k) for k in self.knots]}


@dataclass(frozen=True)
class TVaRMixture:
    """Finite mixture ``sum mu_k TVaR_{p_k}``; ``weights`` holds ``(p, mu)`` pairs."""

    weights: tuple

    def __post_init__(self):
        pairs = tuple((float(p), float(m)) for p, m in self.weights)
        object.__setattr__(self, "weights", pairs)
        ps = np.array([p for p, _ in pairs])
        mus = np.array([m for _, m in pairs])
        if len(pairs) == 0:
            raise DomainError("mixture needs at least one weight")
        if np.any(ps < 0) or np.any(ps >= 1):
            raise DomainError("TVaR levels must lie in [0, 1)")
        if np.any(np.diff(ps) <= 0):
            raise DomainError("TVaR levels must be strictly increasing")
        if np.any(mus < 0):
            raise DomainError("mixture weights must be non-negative")
        if abs(math.fsum(mus) - 1.0) > 1e-9:
            raise DomainError(f"mixture weights sum to {math.fsum(mus)}, not 1")

    def to_distortion(self) -> PiecewiseLinear:
        """``g(s) = sum mu_k min(s / (1 - p_k), 1)``, with knots at ``s = 1 - p_k``."""
        s_knots = sorted({0.0, 1.0, *(1.0 - p for p, _ in self.weights)})

        def g(s):
            return math.fsum(m * min(s / (1.0 - p), 1.0) for p, m in self.weights)

        knots = [(s, g(s)) for s in s_knots]
        knots[-1] = (1.0, 1.0)
        return PiecewiseLinear(tuple(knots))


def from_spec(spec) -> Distortion:
    """Build a distortion from its JSON form (a dict or a JSON string)."""
    if isinstance(spec, str):
        spec = json.loads(spec)
    family = str(spec.get("family", "")).lower()
    if family == "identity":
        return Identity()
    if family in ("ph", "proportional_hazard"):
        return ProportionalHazard(float(spec["r"]))
    if family == "wang":
        return Wang(float(spec["lambda"]))
    if family in ("piecewise", "piecewise_linear"):
        return PiecewiseLinear(tuple(tuple(k) for k in spec["knots"]))
    raise DomainError(f"unknown distortion family {family!r}")


def eval_g(d: Distortion, s):
    return d.g(s)


def eval_g_prime(d: Distortion, s):
    return d.g_prime(s)


def tvar(view: LevelView, p: float) -> float:
    """Exact TVaR at level ``p`` of the step quantile function of ``view``."""
    if not 0.0 <= p < 1.0:
        raise DomainError(f"TVaR level must lie in [0, 1), got {p}")
    tail = 1.0 - p
    s_hi = np.concatenate(([1.0], view.S[:-1]))
    width = np.minimum(s_hi, tail) - np.minimum(view.S, tail)
    return math.fsum(view.levels * width) / tail


def price_via_tvar_mixture(m: TVaRMixture, view: LevelView) -> float:
    return math.fsum(mu * tvar(view, p) for p, mu in m.weights)


_BRACKETS = {"wang": (0.0, 20.0), "ph": (1e-6, 1.0)}


def _family_member(family: str, theta: float) -> Distortion:
    return Wang(theta) if family == "wang" else ProportionalHazard(theta)


def calibrate(
    family: str,
    view: LevelView,
    assets: float,
    target_return: float,
    bracket: Sequence[float] | None = None,
) -> Distortion:
    """Find the family member whose total return ``M(a)/Q(a)`` equals ``target_return``.

    Bisection on the single parameter (Wang shift or PH exponent). Raises
    ``CalibrationError`` when the target is not bracketed.
    """
    from .discrete import bind_distortion, expected_limited, rho_total

    family = family.lower()
    if target_return <= 0:
        raise DomainError("target return must be positive")
    if family == "identity":
        raise CalibrationError("identity distortion has zero margin at every asset level", (0.0, 0.0))
    if family not in _BRACKETS:
        raise CalibrationError(f"cannot calibrate family {family!r}")
    loss = expected_limited(view, assets)

    def achieved(theta):
        prem = rho_total(bind_distortion(view, _family_member(family, theta)), assets)
        equity = assets - prem
        if equity <= 0:
            return math.inf
        return (prem - loss) / equity

    lo, hi = bracket if bracket is not None else _BRACKETS[family]
    r_lo, r_hi = achieved(lo), achieved(hi)
    span = (min(r_lo, r_hi), max(r_lo, r_hi))
    if not span[0] <= target_return <= span[1]:
        raise CalibrationError(
            f"target return {target_return} outside achievable range [{span[0]:.6g}, {span[1]:.6g}]"
            f" for {family} on [{lo}, {hi}]",
            span,
        )
    theta = optimize.bisect(lambda t: achieved(t) - target_return, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=400)
    got = achieved(theta)
    if abs(got - target_return) > 1e-8:
        raise CalibrationError(f"bisection stalled at return {got}", span)
    return _family_member(family, theta)
