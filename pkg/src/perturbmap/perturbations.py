"""Deterministic perturbation and amplitude sequences, and the conditions tying them to a map."""
from __future__ import annotations

import math
from decimal import Decimal
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DegenerateSignError, DomainError, EmptySetError
from .maps import MapSpec, equilibrium

STRICT_SLACK = 1e-12
DEFAULT_FROM_K = 10


@dataclass(frozen=True)
class PerturbationSeq:
    """A sequence ``n -> value`` for integer ``n >= 0``.

    ``fn`` is vectorised over an integer array; ``value_at`` and ``values``
    both route through it so scalar and block evaluation agree bit for bit.
    ``l2`` carries the analytic square-summability answer when one is known.
    """

    fn: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    family: str
    sign_info: str = "unknown"
    params: tuple = ()
    l2: bool | None = None
    decimal_at: Callable[[int], Decimal] | None = field(default=None, repr=False, compare=False)

    def value_at(self, n: int) -> float:
        return float(self.fn(np.asarray([n], dtype=np.int64))[0])

    __call__ = value_at

    def values(self, start: int, stop: int) -> np.ndarray:
        return np.asarray(self.fn(np.arange(start, stop, dtype=np.int64)), dtype=np.float64)

    def to_config(self) -> dict:
        return {"family": self.family, **dict(self.params)}


def power_law(eps: float, d: float) -> PerturbationSeq:
    """``eps / n**d`` for ``n >= 1`` and ``eps`` at ``n = 0``."""
    eps, d = float(eps), float(d)
    if not d > 0:
        raise DomainError("power_law exponent d must be positive")

    def fn(ns):
        nf = np.maximum(ns, 1).astype(np.float64)
        return np.where(ns == 0, eps, eps / nf ** d)

    sign = "nonnegative" if eps >= 0 else "nonpositive"
    def dec(n):
        return Decimal(eps) if n == 0 else Decimal(eps) / Decimal(n) ** Decimal(d)

    return PerturbationSeq(fn, "power_law", sign, (("eps", eps), ("d", d)), l2=d > 0.5, decimal_at=dec)


def double_exp() -> PerturbationSeq:
    """``exp(-2**n)``; exactly zero once the value underflows."""

    def fn(ns):
        out = np.zeros(ns.shape, dtype=np.float64)
        small = ns < 64
        with np.errstate(under="ignore"):
            out[small] = np.exp(-np.exp2(ns[small].astype(np.float64)))
        return out

    return PerturbationSeq(fn, "double_exp", "nonnegative", (), l2=True,
                           decimal_at=lambda n: (-Decimal(2) ** n).exp())


def zero() -> PerturbationSeq:
    return PerturbationSeq(lambda ns: np.zeros(ns.shape, dtype=np.float64), "zero", "nonnegative", (), l2=True,
                           decimal_at=lambda n: Decimal(0))


def table(values: Sequence[float], finite: bool = False) -> PerturbationSeq:
    """Values listed from index 0; zero beyond the table.

    With ``finite=True`` the zero tail is part of the definition and the
    sequence is square summable; otherwise the table is treated as a prefix
    of an unknown sequence.
    """
    arr = np.asarray([float(v) for v in values], dtype=np.float64)

    def fn(ns):
        out = np.zeros(ns.shape, dtype=np.float64)
        inside = (ns >= 0) & (ns < arr.size)
        out[inside] = arr[ns[inside]]
        return out

    if np.all(arr >= 0):
        sign = "nonnegative"
    elif np.all(arr <= 0):
        sign = "nonpositive"
    else:
        nz = np.sign(arr[arr != 0])
        sign = "alternating" if nz.size > 1 and np.all(nz[1:] != nz[:-1]) else "mixed"
    return PerturbationSeq(fn, "table", sign, (("values", tuple(arr.tolist())), ("finite", bool(finite))),
                           l2=True if finite else None,
                           decimal_at=lambda n: Decimal(float(arr[n])) if 0 <= n < arr.size else Decimal(0))


def alternating(beta: PerturbationSeq, even_positive: bool = True) -> PerturbationSeq:
    """``(-1)**n beta_n`` (or its negation when ``even_positive`` is false)."""
    s0 = 1.0 if even_positive else -1.0

    def fn(ns):
        sign = np.where(ns % 2 == 0, s0, -s0)
        return sign * np.abs(beta.fn(ns))

    dec = None
    if beta.decimal_at is not None:
        def dec(n):
            v = abs(beta.decimal_at(n))
            return v if (n % 2 == 0) == even_positive else -v

    return PerturbationSeq(fn, "alternating", "alternating",
                           (("beta", beta.to_config()), ("even_positive", even_positive)), l2=beta.l2,
                           decimal_at=dec)


def quartic_decay_gamma() -> PerturbationSeq:
    """``gamma_{n+1} = -1/n^2 + 1/(n+1)^4``; with ``f = sqrt`` and ``x_1 = 1`` the orbit is ``1/n^4``."""

    def fn(ns):
        k = ns.astype(np.float64)
        prev = np.maximum(k - 1.0, 1.0)
        return np.where(ns >= 2, -1.0 / prev ** 2 + 1.0 / np.maximum(k, 1.0) ** 4, 0.0)

    def dec(n):
        if n < 2:
            return Decimal(0)
        return -1 / Decimal(n - 1) ** 2 + 1 / Decimal(n) ** 4

    return PerturbationSeq(fn, "quartic_decay", "nonpositive", (), l2=True, decimal_at=dec)


def two_phase_gamma(eps: float) -> PerturbationSeq:
    """Alternating perturbation giving ``x_{2n} = (2n)^-4`` and ``x_{2n+1} = (1+eps)(2n)^-2`` from ``x_2 = 1/16``."""
    eps = float(eps)
    root = math.sqrt(1.0 + eps)

    def fn(ns):
        k = ns.astype(np.float64)
        out = np.zeros(ns.shape, dtype=np.float64)
        odd = (ns % 2 == 1) & (ns >= 3)
        even = (ns % 2 == 0) & (ns >= 4)
        out[odd] = eps / (k[odd] - 1.0) ** 2
        n = k[even] / 2.0 - 1.0
        out[even] = -root / (2.0 * n) + 1.0 / k[even] ** 4
        return out

    def dec(k):
        if k >= 3 and k % 2 == 1:
            return Decimal(eps) / Decimal(k - 1) ** 2
        if k >= 4 and k % 2 == 0:
            n = k // 2 - 1
            return -(1 + Decimal(eps)).sqrt() / (2 * n) + 1 / Decimal(k) ** 4
        return Decimal(0)

    return PerturbationSeq(fn, "two_phase", "alternating", (("eps", eps),), l2=True, decimal_at=dec)


def from_config(cfg: Mapping[str, Any] | None, where: str = "perturbation") -> PerturbationSeq:
    if cfg is None:
        return zero()
    if not isinstance(cfg, Mapping):
        raise ConfigError(where, "expected an object with a 'family' key")
    family = cfg.get("family")
    try:
        if family == "power_law":
            return power_law(_num(cfg, "eps", where), _num(cfg, "d", where))
        if family == "double_exp":
            return double_exp()
        if family == "zero":
            return zero()
        if family == "table":
            vals = cfg.get("values")
            if not isinstance(vals, list) or not vals:
                raise ConfigError(f"{where}.values", "expected a non-empty list of numbers")
            return table(vals, finite=bool(cfg.get("finite", False)))
        if family == "alternating":
            return alternating(from_config(cfg.get("beta"), f"{where}.beta"),
                               bool(cfg.get("even_positive", True)))
        if family == "quartic_decay":
            return quartic_decay_gamma()
        if family == "two_phase":
            return two_phase_gamma(_num(cfg, "eps", where))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(where, str(exc)) from exc
    raise ConfigError(f"{where}.family", f"unknown sequence family {family!r}")


def _num(cfg, key, where):
    if key not in cfg:
        raise ConfigError(f"{where}.{key}", "missing")
    try:
        return float(cfg[key])
    except (TypeError, ValueError):
        raise ConfigError(f"{where}.{key}", f"not a number: {cfg[key]!r}") from None


# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class L2Result:
    verdict: str  # "in_l2" | "not_l2" | "undetermined"
    partial_sum: float


def l2_classify(s: PerturbationSeq, horizon: int) -> L2Result:
    """Square-summability: analytic for known families, partial sum otherwise."""
    if horizon < 100:
        raise DomainError("horizon must be at least 100")
    v = s.values(0, horizon + 1)
    partial = float(np.sum(v * v))
    if s.l2 is None:
        return L2Result("undetermined", partial)
    return L2Result("in_l2" if s.l2 else "not_l2", partial)


@dataclass(frozen=True)
class SignGroupReduction:
    """Maximal same-sign blocks of a perturbation, starting at the first positive term.

    ``boundaries[k]`` is the last index of block ``k``; ``betas[k]`` its absolute
    sum; ``signs`` alternate starting with +1.  The final block is cut by the
    scan horizon and is excluded from :meth:`pairs`.
    """

    boundaries: tuple
    betas: tuple
    signs: tuple
    first_index: int
    sign_changes: int

    def pairs(self) -> list[tuple[float, float]]:
        """(positive block sum, following negative block sum), complete blocks only."""
        out = []
        complete = len(self.betas) - 1
        for k in range(0, complete - 1, 2):
            out.append((self.betas[k], self.betas[k + 1]))
        return out


def sign_groups(g: PerturbationSeq, horizon: int, start: int = 1) -> SignGroupReduction:
    vals = g.values(start, horizon + 1)
    nz = np.flatnonzero(vals != 0)
    changes = int(np.count_nonzero(np.sign(vals[nz][1:]) != np.sign(vals[nz][:-1]))) if nz.size else 0
    if changes < 2:
        raise DegenerateSignError(f"only {changes} sign changes in [{start}, {horizon}]")
    pos = np.flatnonzero(vals > 0)
    i0 = int(pos[0])
    boundaries, betas, signs = [], [], []
    sign = 1.0
    acc = 0.0
    for i in range(i0, vals.size):
        v = float(vals[i])
        if v != 0.0 and (v > 0) != (sign > 0):
            boundaries.append(start + i - 1)
            betas.append(abs(acc))
            signs.append(int(sign))
            sign, acc = -sign, 0.0
        acc += v
    boundaries.append(horizon)
    betas.append(abs(acc))
    signs.append(int(sign))
    return SignGroupReduction(tuple(boundaries), tuple(betas), tuple(signs), start + i0, changes)


@dataclass(frozen=True)
class ConditionReport:
    condition: str
    verdict: str  # "holds" | "fails" | "undetermined"
    witness: dict
    scan: dict

    def __post_init__(self):
        if self.verdict == "fails" and self.witness.get("counterexample") is None:
            raise ValueError("a failing condition report needs a counterexample")

    def to_dict(self) -> dict:
        return {"condition": self.condition, "verdict": self.verdict,
                "witness": dict(self.witness), "scan": dict(self.scan)}


def _strict(lhs: float, rhs: float) -> int:
    """+1 if lhs > rhs beyond the relative slack, -1 if below it, 0 on a tie."""
    slack = STRICT_SLACK * max(abs(lhs), abs(rhs))
    d = lhs - rhs
    if d > slack:
        return 1
    if d < -slack:
        return -1
    return 0


def check_beta_condition(m: MapSpec, r: SignGroupReduction, from_k: int = DEFAULT_FROM_K) -> ConditionReport:
    """``f(beta_{2k}) > beta_{2k+1}`` for every complete block pair ``k >= from_k``."""
    pairs = r.pairs()
    tested = 0
    tie = None
    for k in range(from_k, len(pairs)):
        bp, bn = pairs[k]
        outcome = _strict(float(m.evaluate(bp)), bn)
        tested += 1
        if outcome < 0:
            return ConditionReport("beta", "fails", {"counterexample": k, "beta_pos": bp, "beta_neg": bn},
                                   {"from_k": from_k, "pairs": len(pairs)})
        if outcome == 0 and tie is None:
            tie = k
    scan = {"from_k": from_k, "pairs": len(pairs), "tested": tested}
    if tested == 0 or tie is not None:
        return ConditionReport("beta", "undetermined", {"tie": tie}, scan)
    return ConditionReport("beta", "holds", {}, scan)


def check_increment_condition(m: MapSpec, delta_bar: float, grid: int = 200) -> ConditionReport:
    """``f(x + a) - f(x) > a`` on grid nodes with ``x, a > 0`` and ``x + a < delta_bar``."""
    if not delta_bar > 0:
        raise DomainError("delta_bar must be positive")
    nodes = delta_bar * np.arange(1, grid + 1) / (grid + 1)
    x, a = np.meshgrid(nodes, nodes, indexing="ij")
    keep = x + a < delta_bar
    x, a = x[keep], a[keep]
    f1 = np.asarray(m.evaluate(x + a), dtype=float)
    f0 = np.asarray(m.evaluate(x), dtype=float)
    lhs = f1 - f0
    slack = STRICT_SLACK * np.maximum(np.abs(f1), a)
    d = lhs - a
    scan = {"delta_bar": delta_bar, "grid": grid, "nodes": int(x.size)}
    bad = np.flatnonzero(d < -slack)
    if bad.size:
        i = bad[0]
        return ConditionReport("increment", "fails", {"counterexample": [float(x[i]), float(a[i])]}, scan)
    ties = np.flatnonzero(d <= slack)
    if ties.size:
        i = ties[0]
        return ConditionReport("increment", "undetermined", {"tie": [float(x[i]), float(a[i])],
                                                             "ties": int(ties.size)}, scan)
    return ConditionReport("increment", "holds", {"min_margin": float(d.min())}, scan)


def persistence_threshold(m: MapSpec, gamma_tilde: float, tol: float = 1e-12,
                          grid_size: int = 100_000) -> float:
    """Smallest ``b`` with ``F(b) = gamma_tilde`` from the left, i.e. ``inf{x > 0: F(x) > gamma_tilde}``."""
    if gamma_tilde < 0:
        raise DomainError("gamma_tilde must be nonnegative")
    if gamma_tilde == 0:
        return 0.0
    K = equilibrium(m)
    xs = K * np.arange(1, grid_size) / grid_size
    above = np.flatnonzero(np.asarray(m.gap(xs), dtype=float) > gamma_tilde)
    if above.size == 0:
        raise EmptySetError(f"growth gap never exceeds {gamma_tilde:g} on (0, K)")
    i = int(above[0])
    lo = float(xs[i - 1]) if i > 0 else 0.0
    hi = float(xs[i])
    for _ in range(200):
        if hi - lo <= tol * max(1.0, hi):
            break
        mid = 0.5 * (lo + hi)
        if float(m.gap(mid)) > gamma_tilde:
            hi = mid
        else:
            lo = mid
    return hi


def check_persistence_condition(m: MapSpec, gamma_tilde: float, grid_size: int = 100_000) -> ConditionReport:
    """``gamma_tilde + b(gamma_tilde) < lam`` where ``f`` increases on ``[0, c]`` and ``f >= lam`` beyond ``c``."""
    K = equilibrium(m)
    X = max(2.0 * K, m.domain_hint)
    xs = X * np.arange(0, grid_size + 1) / grid_size
    fx = np.asarray(m.evaluate(xs), dtype=float)
    drops = np.flatnonzero(np.diff(fx) < 0)
    if drops.size:
        ci = int(drops[0])
        c = float(xs[ci])
        lam = float(fx[ci + 1:].min())
    else:
        c = X
        lam = float(fx[-1])
    scan = {"upper": X, "grid": grid_size}
    try:
        b = persistence_threshold(m, gamma_tilde)
    except EmptySetError:
        return ConditionReport("persistence", "fails", {"counterexample": "empty", "c": c, "lambda": lam}, scan)
    witness = {"c": c, "lambda": lam, "b": b, "gamma_tilde": gamma_tilde}
    outcome = _strict(lam, gamma_tilde + b)
    if outcome > 0:
        return ConditionReport("persistence", "holds", witness, scan)
    if outcome < 0:
        witness["counterexample"] = gamma_tilde + b
        return ConditionReport("persistence", "fails", witness, scan)
    return ConditionReport("persistence", "undetermined", witness, scan)


def _sigmaF_table(m: MapSpec, s: PerturbationSeq, M: float, lo: int, hi: int):
    sig = s.values(lo, hi + 2)
    if np.any(sig < 0):
        raise DomainError("amplitudes must be nonnegative")
    lhs = sig[1:]
    with np.errstate(under="ignore"):
        rhs = np.asarray(m.gap(M * sig[:-1]), dtype=float)
    return lhs, rhs


def check_sigmaF(m: MapSpec, s: PerturbationSeq, M: float, n_range: tuple[int, int]) -> ConditionReport:
    """``sigma_{n+1} <= F(M sigma_n)`` for each ``n`` in the inclusive ``n_range``.

    Both sides exactly zero (after underflow) counts as a vacuous hold.  A
    comparison within the relative slack is a tie: it neither certifies nor
    refutes.  The witness ``L`` is the first index from which every
    comparison through the end of the range is a clear or vacuous hold.
    """
    lo, hi = int(n_range[0]), int(n_range[1])
    if hi < lo:
        raise DomainError("empty n_range")
    lhs, rhs = _sigmaF_table(m, s, M, lo, hi)
    slack = STRICT_SLACK * np.maximum(np.abs(lhs), np.abs(rhs))
    vacuous = (lhs == 0) & (rhs == 0)
    ok = vacuous | (lhs < rhs - slack)
    bad = lhs > rhs + slack
    failing = np.flatnonzero(bad)
    unsure = np.flatnonzero(~ok)
    nonvacuous = np.flatnonzero(lhs > 0)
    if unsure.size == 0:
        L = lo
    elif unsure[-1] == ok.size - 1:
        L = None
    else:
        L = lo + int(unsure[-1]) + 1
    witness = {
        "M": M,
        "L": L,
        "counterexample": lo + int(failing[0]) if failing.size else None,
        "ties": int(unsure.size - failing.size),
        "last_nonvacuous": lo + int(nonvacuous[-1]) if nonvacuous.size else None,
    }
    scan = {"n_range": [lo, hi]}
    if failing.size:
        verdict = "fails"
    elif unsure.size:
        verdict = "undetermined"
    else:
        verdict = "holds"
    return ConditionReport("sigmaF", verdict, witness, scan)


def search_M(m: MapSpec, s: PerturbationSeq, M_grid: Sequence[float],
             n_range: tuple[int, int]) -> tuple[float, int] | None:
    """Smallest grid ``M`` whose sigma-F inequality holds on a tail ``[L, end]`` of ``n_range``.

    A certified tail must cover at least the second half of the range and
    contain a non-vacuous comparison, so a tail made only of underflowed
    zeros does not count.  An identically zero sequence holds vacuously at
    the smallest ``M``.
    """
    if not M_grid:
        raise DomainError("M_grid must be nonempty")
    lo, hi = int(n_range[0]), int(n_range[1])
    mid = lo + (hi - lo) // 2
    for M in sorted(float(v) for v in M_grid):
        rep = check_sigmaF(m, s, M, (lo, hi))
        L = rep.witness["L"]
        last = rep.witness["last_nonvacuous"]
        if L is None:
            continue
        if last is None:
            return M, L
        if L <= mid and L <= last:
            return M, L
    return None
