"""Bounded noise laws on [-1, 1] and counter-based random streams."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DomainError

_U53 = 2.0 ** -53


@dataclass(frozen=True)
class RngStream:
    """Philox stream keyed by ``(master_seed, stream_index)``.

    The draw at step ``k`` is a pure function of the key and ``k``, so any
    block of a run can be regenerated without replaying the run.  ``position``
    is the step consumed by the next call to :meth:`next`.
    """

    master_seed: int
    stream_index: int
    position: int = 0

    def _key(self) -> np.ndarray:
        return np.array([self.master_seed % 2**64, self.stream_index % 2**64], dtype=np.uint64)

    def raw_block(self, start: int, count: int) -> np.ndarray:
        """``count`` raw 64-bit words starting at step ``start``."""
        if start < 0 or count < 0:
            raise DomainError("start and count must be nonnegative")
        q, r = divmod(start, 4)
        bg = np.random.Philox(key=self._key(), counter=np.array([q, 0, 0, 0], dtype=np.uint64))
        return bg.random_raw(r + count)[r:]

    def uniform_block(self, start: int, count: int) -> np.ndarray:
        """Uniforms in [0, 1) with 53-bit resolution."""
        return (self.raw_block(start, count) >> np.uint64(11)).astype(np.float64) * _U53

    def at(self, step: int) -> float:
        return float(self.uniform_block(step, 1)[0])

    def next(self) -> tuple[float, "RngStream"]:
        """Return the uniform at ``position`` and the advanced stream."""
        return self.at(self.position), RngStream(self.master_seed, self.stream_index, self.position + 1)


@dataclass(frozen=True)
class NoiseSpec:
    """A density on [-1, 1] with an inverse-CDF sampler.

    ``quantile`` maps uniforms in [0, 1) into [-1, 1]; it is vectorised.
    """

    kind: str
    density: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    quantile: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    cdf: Callable[[float], float] = field(repr=False)
    is_symmetric: bool
    mean: float
    second_moment: float
    params: tuple = ()

    @property
    def variance(self) -> float:
        return self.second_moment - self.mean ** 2

    def density_at(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        inside = np.abs(x) <= 1.0
        return np.where(inside, self.density(np.clip(x, -1.0, 1.0)), 0.0)

    def to_config(self):
        if self.kind in ("uniform", "symmetric_triangular"):
            return "uniform" if self.kind == "uniform" else "triangular"
        return {self.kind: dict(self.params)[self.kind]}


def uniform() -> NoiseSpec:
    return NoiseSpec(
        "uniform",
        lambda x: np.full(np.shape(x), 0.5),
        lambda u: 2.0 * u - 1.0,
        lambda x: min(1.0, max(0.0, (x + 1.0) / 2.0)),
        True, 0.0, 1.0 / 3.0,
    )


def triangular() -> NoiseSpec:
    """Density ``1 - |x|``."""

    def quantile(u):
        u = np.asarray(u, dtype=float)
        lo = np.sqrt(2.0 * u) - 1.0
        hi = 1.0 - np.sqrt(2.0 * (1.0 - u))
        return np.where(u < 0.5, lo, hi)

    def cdf(x):
        x = min(1.0, max(-1.0, x))
        return 0.5 * (1.0 + x) ** 2 if x < 0 else 1.0 - 0.5 * (1.0 - x) ** 2

    return NoiseSpec("symmetric_triangular", lambda x: 1.0 - np.abs(x), quantile, cdf, True, 0.0, 1.0 / 6.0)


def shifted_uniform(c: float) -> NoiseSpec:
    """Tilted density ``(1 + c x) / 2`` with ``|c| <= 1``; mean ``c/3``."""
    c = float(c)
    if not abs(c) <= 1.0:
        raise DomainError("shifted_uniform tilt must satisfy |c| <= 1")

    def quantile(u):
        # solve c x^2/4 + x/2 + 1/2 - c/4 - u = 0 in the cancellation-free form
        q = 0.5 - c / 4.0 - np.asarray(u, dtype=float)
        return np.clip(-2.0 * q / (0.5 + np.sqrt(np.maximum(0.25 - c * q, 0.0))), -1.0, 1.0)

    def cdf(x):
        x = min(1.0, max(-1.0, x))
        return (x + 1.0) / 2.0 + c * (x * x - 1.0) / 4.0

    return NoiseSpec("shifted_uniform", lambda x: 0.5 * (1.0 + c * x), quantile, cdf,
                     c == 0.0, c / 3.0, 1.0 / 3.0, (("shifted_uniform", c),))


def table(values: Sequence[float]) -> NoiseSpec:
    """Piecewise-linear density through ``values`` at equally spaced knots of [-1, 1].

    The table is normalised; moments and CDF are exact for the interpolant.
    """
    d = np.asarray([float(v) for v in values], dtype=np.float64)
    if d.size < 2:
        raise DomainError("density table needs at least two knots")
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise DomainError("density table must be finite and nonnegative")
    h = 2.0 / (d.size - 1)
    mass = h * float(np.sum(0.5 * (d[1:] + d[:-1])))
    if not mass > 0:
        raise DomainError("density table has zero mass")
    d = d / mass
    knots = np.linspace(-1.0, 1.0, d.size)
    seg = h * 0.5 * (d[1:] + d[:-1])
    cum = np.concatenate(([0.0], np.cumsum(seg)))
    cum /= cum[-1]

    # exact moments of a linear piece on [a, a+h]: Simpson is exact up to cubics
    mid = 0.5 * (d[1:] + d[:-1])
    xm = 0.5 * (knots[1:] + knots[:-1])
    a, b = knots[:-1], knots[1:]
    m1 = float(np.sum(h / 6.0 * (a * d[:-1] + 4.0 * xm * mid + b * d[1:])))
    m2 = float(np.sum(h / 6.0 * (a * a * d[:-1] + 4.0 * xm * xm * mid + b * b * d[1:])))
    sym = bool(np.allclose(d, d[::-1], rtol=0.0, atol=1e-12 * float(d.max())))
    if sym:
        m1 = 0.0

    def density(x):
        return np.interp(x, knots, d)

    def quantile(u):
        u = np.asarray(u, dtype=float)
        i = np.clip(np.searchsorted(cum, u, side="right") - 1, 0, d.size - 2)
        r = u - cum[i]
        d0, d1 = d[i], d[i + 1]
        disc = np.sqrt(np.maximum(d0 * d0 + 2.0 * (d1 - d0) * r / h, 0.0))
        denom = d0 + disc
        t = np.where(denom > 0, 2.0 * r / np.where(denom > 0, denom, 1.0), 0.0)
        return np.clip(knots[i] + t, knots[i], knots[i + 1])

    def cdf(x):
        x = min(1.0, max(-1.0, x))
        i = min(int((x + 1.0) / h), d.size - 2)
        t = x - knots[i]
        slope = (d[i + 1] - d[i]) / h
        return float(min(1.0, cum[i] + d[i] * t + 0.5 * slope * t * t))

    return NoiseSpec("table", density, quantile, cdf, sym, m1, m2, (("table", tuple(d.tolist())),))


def from_config(cfg: Any, where: str = "noise") -> NoiseSpec:
    if cfg is None or cfg == "uniform":
        return uniform()
    if cfg == "triangular" or cfg == "symmetric_triangular":
        return triangular()
    if isinstance(cfg, Mapping) and len(cfg) == 1:
        (kind, arg), = cfg.items()
        try:
            if kind == "table":
                if not isinstance(arg, list):
                    raise ConfigError(f"{where}.table", "expected a list of density values")
                return table(arg)
            if kind == "shifted_uniform":
                return shifted_uniform(float(arg))
        except ConfigError:
            raise
        except DomainError as exc:
            raise ConfigError(f"{where}.{kind}", str(exc)) from exc
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}.{kind}", str(exc)) from exc
    raise ConfigError(where, f"unknown noise specification {cfg!r}")


def sample(n: NoiseSpec, r: RngStream) -> tuple[float, RngStream]:
    """One draw from ``n`` and the advanced stream."""
    u, r2 = r.next()
    x = float(n.quantile(np.asarray([u]))[0])
    assert -1.0 <= x <= 1.0
    return x, r2


def samples(n: NoiseSpec, r: RngStream, start: int, count: int) -> np.ndarray:
    """Draws at steps ``start .. start+count-1`` of stream ``r``."""
    x = np.asarray(n.quantile(r.uniform_block(start, count)), dtype=np.float64)
    if x.size and (x.min() < -1.0 or x.max() > 1.0):
        raise AssertionError("noise sample outside [-1, 1]")
    return x


def run_probability(n: NoiseSpec, eps: float) -> float:
    """Mass of ``[1 - eps, 1]``."""
    if not 0.0 < eps < 1.0:
        raise DomainError("eps must lie in (0, 1)")
    return 1.0 - n.cdf(1.0 - eps)


def neg_part_l2_check(means, horizon: int) -> str:
    """Square-summability of the negative parts of a mean sequence.

    ``means`` is a perturbation-style sequence object (with ``values`` and an
    optional analytic ``l2`` tag) or a plain callable/array indexed from 1.
    Without an analytic answer the decision uses the growth of the partial
    sums between the last two decades: an ``n^-p`` tail has increment ratio
    ``10^(1-2p)`` there.
    """
    if horizon < 100:
        raise DomainError("horizon must be at least 100")
    if hasattr(means, "values") and hasattr(means, "family"):
        v = means.values(1, horizon + 1)
        fam = means.family
        if fam == "zero":
            return "in_l2"
        if fam == "power_law":
            eps, d = dict(means.params)["eps"], dict(means.params)["d"]
            if eps >= 0:
                return "in_l2"
            return "in_l2" if d > 0.5 else "not_l2"
    elif callable(means):
        v = np.asarray([float(means(k)) for k in range(1, horizon + 1)])
    else:
        v = np.asarray(means, dtype=float)[: horizon]
    neg = np.minimum(v, 0.0)
    sq = neg * neg
    if not np.any(sq > 0):
        return "in_l2"
    c = np.cumsum(sq)
    n = c.size
    i1, i2 = n // 100, n // 10
    inc_late = c[-1] - c[i2 - 1]
    inc_early = c[i2 - 1] - c[i1 - 1] if i1 >= 1 else c[i2 - 1]
    if inc_late == 0.0:
        return "in_l2"
    if inc_early <= 0.0:
        return "undetermined"
    p = 0.5 * (1.0 - math.log10(inc_late / inc_early))
    if p >= 0.6:
        return "in_l2"
    if p <= 0.52:
        return "not_l2"
    return "undetermined"
