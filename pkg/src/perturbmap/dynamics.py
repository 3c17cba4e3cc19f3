"""Orbit simulation for the clamped perturbed recursion, and trajectory-level checks."""
from __future__ import annotations

import csv
import enum
import io
from decimal import Decimal, localcontext
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, PreconditionError, SimulationOverflow
from .maps import MapSpec, invariant_margin
from .noise import NoiseSpec, RngStream, samples as noise_samples
from .perturbations import PerturbationSeq

CHUNK = 4096
OVERFLOW_FACTOR = 10.0


class Limit(str, enum.Enum):
    ToK = "ToK"
    ToZero = "ToZero"
    Undecided = "Undecided"


@dataclass(frozen=True)
class SimConfig:
    """Simulation and classification settings.

    The orbit starts with ``x[start] = x0`` and runs ``horizon`` steps.  When
    ``eps0`` is set the engine also tracks the interval ``[eps0, 2K - eps0]``
    from index ``n1`` on.
    """

    x0: float
    horizon: int = 100_000
    record_stride: int = 1
    tol_K: float = 1e-3
    tol_0: float = 1e-6
    window: int = 100
    start: int = 0
    eps0: float | None = None
    n1: int = 0

    def __post_init__(self):
        if not (self.x0 >= 0 and np.isfinite(self.x0)):
            raise ConfigError("sim.x0", "must be a finite nonnegative number")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ConfigError("sim.horizon", "must be an integer >= 1")
        if self.record_stride < 1:
            raise ConfigError("sim.record_stride", "must be >= 1")
        if self.window < 1:
            raise ConfigError("sim.window", "must be >= 1")
        if not 0 < self.tol_0 < self.tol_K:
            raise ConfigError("sim.tol_0", "need 0 < tol_0 < tol_K")
        if self.start < 0 or self.n1 < 0:
            raise ConfigError("sim.start", "indices must be nonnegative")
        if self.eps0 is not None and not self.eps0 > 0:
            raise ConfigError("sim.eps0", "must be positive")

    @property
    def final_index(self) -> int:
        return self.start + self.horizon

    @property
    def effective_window(self) -> int:
        return min(self.window, self.horizon + 1)

    def check_tolerances(self, K: float) -> None:
        if not self.tol_K < K / 2:
            raise ConfigError("sim.tol_K", f"must be below K/2 = {K / 2:g}")


@dataclass
class Trajectory:
    """One simulated orbit.

    ``n``, ``x``, ``perturbation`` and ``clamped`` hold the recorded points
    (every ``record_stride``-th index plus the final window).  The
    perturbation at index ``k`` is the additive term that produced ``x[k]``.
    """

    n: np.ndarray
    x: np.ndarray
    perturbation: np.ndarray
    clamped: np.ndarray
    final_value: float
    clamp_count: int
    window_values: np.ndarray
    classification: Limit | None = None
    entry_index: int | None = None
    exit_index: int | None = None
    peak: float = 0.0
    trough: float = 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "x", "perturbation", "clamped"])
        for k, xv, pv, cv in zip(self.n.tolist(), self.x.tolist(), self.perturbation.tolist(),
                                 self.clamped.tolist()):
            w.writerow([k, repr(float(xv)), repr(float(pv)), int(cv)])
        return buf.getvalue()


def read_trajectory_csv(text: str) -> dict[str, np.ndarray]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != ["n", "x", "perturbation", "clamped"]:
        raise ValueError("missing trajectory header")
    body = rows[1:]
    return {
        "n": np.array([int(r[0]) for r in body], dtype=np.int64),
        "x": np.array([float(r[1]) for r in body], dtype=np.float64),
        "perturbation": np.array([float(r[2]) for r in body], dtype=np.float64),
        "clamped": np.array([int(r[3]) for r in body], dtype=np.int8),
    }


def write_trajectory_csv(data: dict[str, np.ndarray]) -> str:
    t = Trajectory(data["n"], data["x"], data["perturbation"], data["clamped"], 0.0, 0, np.empty(0))
    return t.to_csv()


# ---------------------------------------------------------------------------
# batch engine

@dataclass
class BatchResult:
    """Per-run summaries of a batch of orbits sharing one configuration."""

    final: np.ndarray
    window: np.ndarray  # (W, runs)
    clamp_count: np.ndarray
    peak: np.ndarray
    trough: np.ndarray
    entry: np.ndarray  # -1 when never entered
    exit: np.ndarray  # -1 when never left after entry
    record: dict | None = field(default=None, repr=False)


Increments = Callable[[int, int], np.ndarray]


def simulate_batch(m: MapSpec, increments: Increments, runs: int, cfg: SimConfig,
                   K: float | None = None, record: bool = False,
                   x_max: float | None = None) -> BatchResult:
    """Iterate ``x_{k} = max(f(x_{k-1}) + inc_k, 0)`` for ``runs`` orbits at once.

    ``increments(lo, hi)`` returns the additive terms for target indices
    ``lo .. hi-1`` with shape ``(hi - lo, runs)`` or ``(hi - lo, 1)``.
    """
    limit = OVERFLOW_FACTOR * (x_max if x_max is not None else m.domain_hint)
    start, final = cfg.start, cfg.final_index
    W = cfg.effective_window
    win_lo = final - W + 1
    x = np.full(runs, float(cfg.x0))
    window = np.empty((W, runs))
    clamp_count = np.zeros(runs, dtype=np.int64)
    peak = x.copy()
    trough = x.copy()
    track = cfg.eps0 is not None
    if track:
        if K is None:
            raise PreconditionError("interval tracking needs the equilibrium K")
        lo_b, hi_b = cfg.eps0, 2.0 * K - cfg.eps0
    entry = np.full(runs, -1, dtype=np.int64)
    exit_ = np.full(runs, -1, dtype=np.int64)
    entered = np.zeros(runs, dtype=bool)

    def observe(idx, xv):
        if idx >= win_lo:
            window[idx - win_lo] = xv
        if track and idx >= cfg.n1:
            inside = (xv >= lo_b) & (xv <= hi_b)
            left = entered & ~inside & (exit_ < 0)
            exit_[left] = idx
            new = inside & ~entered
            entry[new] = idx
            entered[new] = True

    rec_n, rec_x, rec_p, rec_c = [], [], [], []
    if record:
        rec_n.append(start), rec_x.append(float(x[0])), rec_p.append(0.0), rec_c.append(0)
    observe(start, x)

    f = m.evaluate
    idx = start
    while idx < final:
        lo = idx + 1
        hi = min(final, idx + CHUNK) + 1
        inc = np.asarray(increments(lo, hi), dtype=np.float64)
        for j in range(hi - lo):
            y = f(x) + inc[j]
            neg = y < 0
            x = np.where(neg, 0.0, y)
            clamp_count += neg
            np.maximum(peak, x, out=peak)
            np.minimum(trough, x, out=trough)
            k = lo + j
            observe(k, x)
            if record and ((k - start) % cfg.record_stride == 0 or k >= win_lo):
                rec_n.append(k), rec_x.append(float(x[0])), rec_p.append(float(inc[j][0])), rec_c.append(int(neg[0]))
        if not np.all(peak <= limit):
            bad = int(np.flatnonzero(~(peak <= limit))[0])
            raise SimulationOverflow(f"run {bad} exceeded {limit:g} before index {hi - 1}")
        idx = hi - 1

    rec = None
    if record:
        rec = {"n": np.asarray(rec_n, dtype=np.int64), "x": np.asarray(rec_x),
               "perturbation": np.asarray(rec_p), "clamped": np.asarray(rec_c, dtype=np.int8)}
    return BatchResult(x, window, clamp_count, peak, trough, entry, exit_, rec)


def classify_window(window: np.ndarray, K: float, tol_K: float, tol_0: float) -> list[Limit]:
    """Classify each column of a final-window block."""
    dev = np.max(np.abs(window - K), axis=0)
    top = np.max(window, axis=0)
    out = []
    for d, t in zip(dev, top):
        if d <= tol_K:
            out.append(Limit.ToK)
        elif t <= tol_0:
            out.append(Limit.ToZero)
        else:
            out.append(Limit.Undecided)
    return out


def classify(t: Trajectory, K: float, cfg: SimConfig) -> Limit:
    if t.window_values.size < cfg.effective_window:
        raise PreconditionError("trajectory shorter than the classification window")
    return classify_window(t.window_values.reshape(-1, 1), K, cfg.tol_K, cfg.tol_0)[0]


def _trajectory(res: BatchResult, K: float | None, cfg: SimConfig) -> Trajectory:
    r = res.record
    t = Trajectory(r["n"], r["x"], r["perturbation"], r["clamped"], float(res.final[0]),
                   int(res.clamp_count[0]), res.window[:, 0].copy(),
                   entry_index=int(res.entry[0]) if res.entry[0] >= 0 else None,
                   exit_index=int(res.exit[0]) if res.exit[0] >= 0 else None,
                   peak=float(res.peak[0]), trough=float(res.trough[0]))
    if K is not None:
        t.classification = classify(t, K, cfg)
    return t


def deterministic_increments(g: PerturbationSeq) -> Increments:
    return lambda lo, hi: g.values(lo, hi)[:, None]


def stochastic_increments(s: PerturbationSeq, n: NoiseSpec, streams: list[RngStream]) -> Increments:
    """``sigma_{k-1} xi_k`` with ``xi_k`` drawn at counter ``k`` of each run's stream."""

    def inc(lo, hi):
        sig = s.values(lo - 1, hi - 1)
        xi = np.empty((hi - lo, len(streams)))
        for j, r in enumerate(streams):
            xi[:, j] = noise_samples(n, r, lo, hi - lo)
        return sig[:, None] * xi

    return inc


def _decimal_batch(m: MapSpec, g: PerturbationSeq, cfg: SimConfig, K: float | None,
                   precision: int) -> BatchResult:
    """Single orbit in ``precision``-digit decimal arithmetic, rounded to floats for output."""
    if m.evaluate_decimal is None or g.decimal_at is None:
        raise PreconditionError("extended precision needs decimal forms of both the map and the sequence")
    limit = OVERFLOW_FACTOR * m.domain_hint
    start, final = cfg.start, cfg.final_index
    xs, incs, cl = [float(cfg.x0)], [0.0], [0]
    with localcontext() as ctx:
        ctx.prec = precision
        f = m.evaluate_decimal
        x = Decimal(cfg.x0)
        for k in range(start + 1, final + 1):
            inc = g.decimal_at(k)
            y = f(x) + inc
            neg = y < 0
            x = Decimal(0) if neg else y
            xs.append(float(x)), incs.append(float(inc)), cl.append(int(neg))
            if not xs[-1] <= limit:
                raise SimulationOverflow(f"orbit exceeded {limit:g} at index {k}")
    n = np.arange(start, final + 1, dtype=np.int64)
    xa = np.asarray(xs)
    W = cfg.effective_window
    entry = exit_ = -1
    if cfg.eps0 is not None:
        if K is None:
            raise PreconditionError("interval tracking needs the equilibrium K")
        full = Trajectory(n, xa, np.asarray(incs), np.asarray(cl, dtype=np.int8), xs[-1], 0, xa[-W:])
        chk = check_invariant_interval(full, cfg.eps0, K, cfg.n1)
        entry = -1 if chk.entry_index is None else chk.entry_index
        exit_ = -1 if chk.violation_index is None else chk.violation_index
    keep = ((n - start) % cfg.record_stride == 0) | (n > final - W)
    rec = {"n": n[keep], "x": xa[keep], "perturbation": np.asarray(incs)[keep],
           "clamped": np.asarray(cl, dtype=np.int8)[keep]}
    one = lambda v, dt=np.float64: np.asarray([v], dtype=dt)
    return BatchResult(one(xs[-1]), xa[-W:].reshape(-1, 1), one(sum(cl), np.int64), one(xa.max()),
                       one(xa.min()), one(entry, np.int64), one(exit_, np.int64), rec)


def iterate_deterministic(m: MapSpec, g: PerturbationSeq, cfg: SimConfig,
                          K: float | None = None, precision: int | None = None) -> Trajectory:
    """Orbit of ``x_{n+1} = max(f(x_n) + g_{n+1}, 0)``; classified when ``K`` is given.

    With ``precision`` the recursion runs in that many significant decimal
    digits.  This matters for orbits that amplify rounding error, such as
    ones pinned to a decaying closed form by cancelling perturbations.
    """
    if K is not None:
        cfg.check_tolerances(K)
    if precision is not None:
        res = _decimal_batch(m, g, cfg, K, int(precision))
    else:
        res = simulate_batch(m, deterministic_increments(g), 1, cfg, K=K, record=True)
    return _trajectory(res, K, cfg)


def iterate_stochastic(m: MapSpec, s: PerturbationSeq, n: NoiseSpec, r: RngStream, cfg: SimConfig,
                       K: float | None = None) -> Trajectory:
    """Orbit of ``x_{n+1} = max(f(x_n) + s_n xi_{n+1}, 0)`` driven by stream ``r``."""
    if K is not None:
        cfg.check_tolerances(K)
    res = simulate_batch(m, stochastic_increments(s, n, [r]), 1, cfg, K=K, record=True)
    return _trajectory(res, K, cfg)


# ---------------------------------------------------------------------------
# trajectory checks

@dataclass(frozen=True)
class IntervalCheck:
    holds: bool
    entry_index: int | None
    violation_index: int | None

    def __bool__(self):
        return self.holds


def check_invariant_interval(t: Trajectory, eps0: float, K: float, n1: int = 0,
                             lam: float | None = None) -> IntervalCheck:
    """Once a recorded value at index ``>= n1`` lies in ``[eps0, 2K - eps0]``, all later ones do.

    With ``lam`` (a certified contraction witness) the admissibility of
    ``eps0`` is enforced first.
    """
    if lam is not None and not eps0 < invariant_margin(K, lam):
        raise PreconditionError(f"eps0={eps0:g} violates the margin {invariant_margin(K, lam):g}")
    sel = t.n >= n1
    ns, xs = t.n[sel], t.x[sel]
    inside = (xs >= eps0) & (xs <= 2.0 * K - eps0)
    hits = np.flatnonzero(inside)
    if hits.size == 0:
        return IntervalCheck(True, None, None)
    i0 = hits[0]
    out = np.flatnonzero(~inside[i0:])
    if out.size:
        return IntervalCheck(False, int(ns[i0]), int(ns[i0 + out[0]]))
    return IntervalCheck(True, int(ns[i0]), None)


@dataclass(frozen=True)
class PersistenceCheck:
    holds: bool
    violation_index: int | None
    minimum: float

    def __bool__(self):
        return self.holds


def check_persistence(t: Trajectory, b: float) -> PersistenceCheck:
    """True iff every recorded value exceeds ``b``."""
    bad = np.flatnonzero(~(t.x > b))
    return PersistenceCheck(bad.size == 0, int(t.n[bad[0]]) if bad.size else None, float(t.x.min()))
