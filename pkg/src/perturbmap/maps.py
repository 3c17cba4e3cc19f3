"""One-step maps ``f`` and numerical certificates for their structural assumptions.

A map is stored together with its growth gap ``F(x) = f(x) - x`` in a form
that avoids cancellation near zero, because conditions such as
``sigma_{n+1} <= F(M sigma_n)`` are evaluated at arguments far below machine
epsilon relative to one.
"""
from __future__ import annotations

import math
from decimal import Decimal
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .errors import BracketError, ConfigError, ConvergenceError, DomainError, EmptySetError

ArrayLike = Any

BISECT_TOL = 1e-12
BISECT_MAX_ITER = 200
GRID_SIZE = 100_000
EXCLUSION_RADIUS = 1e-6
KAPPA_SCAN_START = 0.25
KAPPA_SCAN_STEPS = 40
KAPPA_FLOOR = 1e-9


@dataclass(frozen=True)
class MapSpec:
    """A map ``f`` on the nonnegative half-line with ``f(0) = 0``.

    ``evaluate`` and ``gap`` accept floats or numpy arrays.  ``family`` and
    ``params`` identify built-in families so that a map can be rebuilt from
    its configuration entry.
    """

    evaluate: Callable[[ArrayLike], ArrayLike] = field(repr=False)
    gap: Callable[[ArrayLike], ArrayLike] = field(repr=False)
    domain_hint: float
    label: str
    family: str = "custom"
    params: tuple = ()
    evaluate_decimal: Callable[[Decimal], Decimal] | None = field(default=None, repr=False, compare=False)

    def __call__(self, x):
        return self.evaluate(x)

    def to_config(self) -> dict:
        cfg = {"family": self.family, **dict(self.params)}
        cfg["domain_hint"] = self.domain_hint
        return cfg


def _horner(coeffs: Sequence) -> Callable:
    c = tuple(coeffs)

    def poly(x):
        acc = c[-1]
        for ck in c[-2::-1]:
            acc = acc * x + ck
        return acc

    return poly


def polynomial(coeffs: Sequence[float], domain_hint: float = 1.0, label: str | None = None) -> MapSpec:
    """Map ``f(x) = sum_k coeffs[k] x**k``; ``coeffs[0]`` must be zero."""
    coeffs = [float(v) for v in coeffs]
    if len(coeffs) < 2 or coeffs[0] != 0.0:
        raise ValueError("polynomial maps need f(0) = 0: coeffs[0] must be 0")
    gap_coeffs = list(coeffs)
    gap_coeffs[1] -= 1.0
    if label is None:
        label = " + ".join(f"{c:g}*x^{k}" for k, c in enumerate(coeffs) if c != 0.0) or "0"
    return MapSpec(_horner(coeffs), _horner(gap_coeffs), float(domain_hint), label,
                   "poly", (("coeffs", tuple(coeffs)),), _horner([Decimal(c) for c in coeffs]))


def sqrt_map(domain_hint: float = 4.0) -> MapSpec:
    return MapSpec(np.sqrt, lambda x: np.sqrt(x) - x, float(domain_hint), "sqrt(x)", "sqrt",
                   evaluate_decimal=lambda x: x.sqrt())


def ricker(r: float, domain_hint: float = 4.0) -> MapSpec:
    """Ricker map ``x exp(r (1 - x))`` with equilibrium 1."""
    r = float(r)
    return MapSpec(lambda x: x * np.exp(r * (1.0 - x)),
                   lambda x: x * np.expm1(r * (1.0 - x)),
                   float(domain_hint), f"x*exp({r:g}*(1-x))", "ricker", (("r", r),),
                   lambda x: x * (Decimal(r) * (1 - x)).exp())


def holling(a: float, b: float, domain_hint: float = 4.0) -> MapSpec:
    """Beverton-Holt type map ``a x / (1 + b x)``; equilibrium ``(a - 1) / b``."""
    a, b = float(a), float(b)
    return MapSpec(lambda x: a * x / (1.0 + b * x),
                   lambda x: x * (a - 1.0 - b * x) / (1.0 + b * x),
                   float(domain_hint), f"{a:g}*x/(1+{b:g}*x)", "holling", (("a", a), ("b", b)),
                   lambda x: Decimal(a) * x / (1 + Decimal(b) * x))


def quartic_map() -> MapSpec:
    """``f(x) = x + x^2 - x^3 - x^4``, positive on (0, 1) with equilibrium near 0.618."""
    return polynomial([0.0, 1.0, 1.0, -1.0, -1.0], domain_hint=1.0, label="x+x^2-x^3-x^4")


def from_config(cfg: Mapping[str, Any], where: str = "map") -> MapSpec:
    """Build a map from ``{"family": ..., <params>}``."""
    if not isinstance(cfg, Mapping):
        raise ConfigError(where, "expected an object with a 'family' key")
    family = cfg.get("family")
    extra = {}
    if "domain_hint" in cfg:
        extra["domain_hint"] = _positive(cfg["domain_hint"], f"{where}.domain_hint")
    try:
        if family == "poly":
            if "coeffs" not in cfg:
                raise ConfigError(f"{where}.coeffs", "missing")
            return polynomial(cfg["coeffs"], label=cfg.get("label"), **extra)
        if family == "sqrt":
            return sqrt_map(**extra)
        if family == "ricker":
            return ricker(_required(cfg, "r", where), **extra)
        if family == "holling":
            return holling(_required(cfg, "a", where), _required(cfg, "b", where), **extra)
        if family == "quartic":
            return quartic_map()
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(where, str(exc)) from exc
    raise ConfigError(f"{where}.family", f"unknown map family {family!r}")


def _required(cfg, key, where):
    if key not in cfg:
        raise ConfigError(f"{where}.{key}", "missing")
    return float(cfg[key])


def _positive(value, where):
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigError(where, f"not a number: {value!r}") from None
    if not v > 0:
        raise ConfigError(where, "must be positive")
    return v


# ---------------------------------------------------------------------------
# basic operations

def growth_gap(m: MapSpec, x: float) -> float:
    """Return ``F(x) = f(x) - x``; defined for ``x > 0`` only."""
    if not x > 0:
        raise DomainError(f"growth gap is defined for x > 0, got {x!r}")
    return float(m.gap(x))


def find_positive_fixed_point(m: MapSpec, bracket: tuple[float, float],
                              tol: float = BISECT_TOL, max_iter: int = BISECT_MAX_ITER) -> float:
    """Bisection on the growth gap over ``bracket``.

    The endpoints must give growth gaps of strictly opposite sign.  Iteration
    stops once the bracket is narrower than ``tol * max(1, K)``.
    """
    lo, hi = float(bracket[0]), float(bracket[1])
    if not 0 < lo < hi:
        raise BracketError(f"invalid bracket {bracket!r}")
    glo, ghi = float(m.gap(lo)), float(m.gap(hi))
    if not (glo * ghi < 0):
        raise BracketError(f"growth gap has no sign change on [{lo}, {hi}] ({glo:g}, {ghi:g})")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if hi - lo <= tol * max(1.0, mid):
            return mid
        gm = float(m.gap(mid))
        if gm == 0.0:
            return mid
        if (gm > 0) == (glo > 0):
            lo, glo = mid, gm
        else:
            hi = mid
    raise ConvergenceError(f"bisection did not reach width {tol:g} in {max_iter} iterations")


def check_lambda_pointwise(m: MapSpec, K: float, lam: float, x: float) -> bool:
    """True iff ``|f(x)-K| <= lam |x-K|`` or ``f(x)`` and ``x`` lie on the same side of K."""
    if not x > 0:
        raise DomainError(f"x must be positive, got {x!r}")
    if x == K:
        raise DomainError("x must differ from K")
    if not 0 < lam < 1:
        raise DomainError(f"lambda must lie in (0, 1), got {lam!r}")
    fx = float(m.evaluate(x))
    return abs(fx - K) <= lam * abs(x - K) or (fx - K) * (x - K) > 0


def invariant_margin(K: float, lambda_hat: float) -> float:
    """Supremum of admissible ``eps0`` for the invariant interval ``[eps0, 2K - eps0]``.

    Any ``lam`` in ``[lambda_hat, 1)`` is also a valid contraction witness, so
    the bound ``min(lam K, (1 - lam) K / 2)`` is maximised over that range.
    """
    if lambda_hat is None or not 0 <= lambda_hat < 1:
        raise DomainError("a contraction witness lambda_hat in [0, 1) is required")
    lam = max(lambda_hat, 1.0 / 3.0)
    return min(lam * K, (1.0 - lam) * K / 2.0)


# ---------------------------------------------------------------------------
# certification

@dataclass(frozen=True)
class AssumptionReport:
    K: float | None
    lambda_hat: float | None
    kappa: float | None
    delta: float | None
    dissipativity_gap: float | None
    grid: dict
    verdicts: dict
    counterexamples: dict

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "lambda_hat": self.lambda_hat,
            "kappa": self.kappa,
            "delta": self.delta,
            "dissipativity_gap": self.dissipativity_gap,
            "grid": dict(self.grid),
            "verdicts": dict(self.verdicts),
            "counterexamples": dict(self.counterexamples),
        }


def _first(mask: np.ndarray, x: np.ndarray):
    idx = np.flatnonzero(mask)
    return float(x[idx[0]]) if idx.size else None


def _locate_K(m: MapSpec, grid_size: int):
    """Bracket the first +/- sign change of the growth gap on (0, domain_hint]."""
    xs = m.domain_hint * np.arange(1, grid_size + 1) / grid_size
    F = np.asarray(m.gap(xs), dtype=float)
    down = np.flatnonzero((F[:-1] > 0) & (F[1:] <= 0))
    if down.size == 0:
        return None
    i = down[0]
    if F[i + 1] == 0.0:
        # exact zero on the grid; widen by one cell so the bracket has a strict sign change
        if i + 2 < F.size and F[i + 2] < 0:
            return float(xs[i]), float(xs[i + 2])
        return None
    return float(xs[i]), float(xs[i + 1])


def equilibrium(m: MapSpec, grid_size: int = GRID_SIZE) -> float:
    """The first positive equilibrium of ``m`` found on ``(0, domain_hint]``."""
    bracket = _locate_K(m, grid_size)
    if bracket is None:
        raise EmptySetError("growth gap has no positive-to-negative crossing on the domain hint")
    return find_positive_fixed_point(m, bracket)


def certify_assumptions(m: MapSpec, grid_size: int = GRID_SIZE,
                        exclusion_radius: float = EXCLUSION_RADIUS,
                        upper: float | None = None,
                        kappa_floor: float = KAPPA_FLOOR) -> AssumptionReport:
    """Scan ``m`` on a uniform grid and fill the assumption witnesses.

    The grid is ``(0, X]`` with ``X = max(2K, domain_hint)`` unless ``upper``
    is given.  Properties about limits at zero or infinity are reported as
    ``"undetermined-pass"`` at best: the report is evidence, not proof.
    """
    if grid_size < 1000:
        raise DomainError("grid_size must be at least 1000")
    verdicts: dict[str, str] = {}
    counter: dict[str, float] = {}

    f0 = float(m.evaluate(0.0))
    bracket = _locate_K(m, grid_size)
    K = None
    if bracket is not None:
        try:
            K = find_positive_fixed_point(m, bracket)
        except (BracketError, ConvergenceError):
            K = None

    X = float(upper) if upper is not None else max(2.0 * K if K else 0.0, m.domain_hint)
    xs = X * np.arange(1, grid_size + 1) / grid_size
    fx = np.asarray(m.evaluate(xs), dtype=float)
    F = np.asarray(m.gap(xs), dtype=float)

    bad = ~(fx > 0)
    if f0 != 0.0:
        verdicts["A1"] = "fail"
        counter["A1"] = 0.0
    elif bad.any():
        verdicts["A1"] = "fail"
        counter["A1"] = _first(bad, xs)
    else:
        verdicts["A1"] = "pass"

    lambda_hat = kappa = delta = dgap = None
    if K is None:
        verdicts["A2"] = "fail"
        verdicts["lambda"] = "undetermined"
        verdicts["dissipativity"] = "undetermined"
        zero_or_neg = ~(F > 0)
        if zero_or_neg.any():
            counter["A2"] = _first(zero_or_neg, xs)
    else:
        below = xs < K - exclusion_radius
        above = xs > K + exclusion_radius
        wrong = (below & ~(F > 0)) | (above & ~(F < 0))
        if wrong.any():
            verdicts["A2"] = "fail"
            counter["A2"] = _first(wrong, xs)
        else:
            verdicts["A2"] = "pass"

        opposite = ((fx - K) * (xs - K) <= 0) & (np.abs(xs - K) > exclusion_radius)
        if opposite.any():
            ratios = np.abs(fx[opposite] - K) / np.abs(xs[opposite] - K)
            worst = float(ratios.max())
            if worst < 1.0:
                lambda_hat = worst
                verdicts["lambda"] = "undetermined-pass"
            else:
                verdicts["lambda"] = "fail"
                counter["lambda"] = float(xs[opposite][int(np.argmax(ratios))])
        else:
            lambda_hat = 0.0
            verdicts["lambda"] = "undetermined-pass"

        tail = xs >= 2.0 * K
        if tail.any():
            dgap = float(np.min(xs[tail] - fx[tail]))
            verdicts["dissipativity"] = "undetermined-pass" if dgap > 0 else "undetermined"
        else:
            verdicts["dissipativity"] = "undetermined"

    delta0 = KAPPA_SCAN_START if K is None or K > KAPPA_SCAN_START else K / 2.0
    scan = delta0 * 2.0 ** -np.arange(KAPPA_SCAN_STEPS + 1)
    near = xs[xs < delta0]
    pts = np.concatenate([scan, near])
    ratio = np.asarray(m.evaluate(pts), dtype=float) / pts
    kmin = float(ratio.min()) - 1.0
    if kmin > kappa_floor:
        kappa, delta = kmin, delta0
        verdicts["kappa"] = "undetermined-pass"
    else:
        verdicts["kappa"] = "undetermined"

    grid = {"size": grid_size, "lower": float(xs[0]), "upper": X, "exclusion_radius": exclusion_radius,
            "kappa_scan": [float(scan[-1]), delta0]}
    return AssumptionReport(K, lambda_hat, kappa, delta, dgap, grid, verdicts, counter)


def lambda_on_grid(m: MapSpec, K: float, upper: float, grid_size: int = GRID_SIZE,
                   exclusion_radius: float = EXCLUSION_RADIUS) -> float | None:
    """Contraction witness restricted to ``(0, upper]``; None if it reaches 1."""
    rep = certify_assumptions(m, grid_size, exclusion_radius, upper=upper)
    if rep.K is None or not math.isclose(rep.K, K, rel_tol=1e-9, abs_tol=1e-12):
        raise DomainError("equilibrium does not match the supplied K")
    return rep.lambda_hat
