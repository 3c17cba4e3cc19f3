"""Ensembles of noisy orbits and the side experiments on weighted noise sums."""
from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import zeta

from . import dynamics
from .dynamics import Limit, SimConfig
from .errors import DomainError, PreconditionError
from .maps import MapSpec, equilibrium
from .noise import NoiseSpec, RngStream, run_probability, samples as noise_samples
from .perturbations import PerturbationSeq, l2_classify
from .stats import ks_statistic, wilson_interval

RUN_BATCH = 500
SAMPLE_BATCH = 256
UNDECIDED_LIMIT = 0.10
TAIL_FRACTION = 1e-12
EXAMPLES_PER_CLASS = 5


def worker_count(requested: int | None = None) -> int:
    """Worker threads: ``requested`` (default 1), capped by ``PERTURBMAP_THREADS``."""
    n = 1 if requested is None else max(1, int(requested))
    cap = os.environ.get("PERTURBMAP_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return n


def _map_batches(fn, batches, workers):
    if workers <= 1 or len(batches) <= 1:
        return [fn(b) for b in batches]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, batches))


def _batches(total: int, size: int) -> list[tuple[int, int]]:
    return [(lo, min(total, lo + size)) for lo in range(0, total, size)]


# ---------------------------------------------------------------------------
# ensembles

@dataclass
class RunRecord:
    run_index: int
    seed: int
    classification: str
    final_x: float
    clamp_count: int
    peak: float
    entry_index: int | None = None
    exit_index: int | None = None


@dataclass
class EnsembleReport:
    runs: int
    master_seed: int
    counts: dict
    p_zero_hat: float | None
    ci95: tuple | None
    p_zero_hat_all: float
    ci95_all: tuple
    horizon_insufficient: bool
    examples: dict
    K: float
    max_peak: float
    interval: dict | None
    records: list = field(default_factory=list, repr=False)

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("records")
        return d

    def to_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True, indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["run_index", "seed", "classification", "final_x", "clamp_count"])
        for r in self.records:
            w.writerow([r.run_index, r.seed, r.classification, repr(float(r.final_x)), r.clamp_count])
        return buf.getvalue()


def run_ensemble(m: MapSpec, s: PerturbationSeq, n: NoiseSpec, cfg: SimConfig, runs: int,
                 master_seed: int, workers: int | None = None, K: float | None = None) -> EnsembleReport:
    """Simulate ``runs`` orbits; run ``i`` uses stream ``(master_seed, i)``."""
    if runs < 1:
        raise DomainError("runs must be >= 1")
    if K is None:
        K = equilibrium(m)
    cfg.check_tolerances(K)

    def one_batch(b):
        lo, hi = b
        streams = [RngStream(master_seed, i) for i in range(lo, hi)]
        res = dynamics.simulate_batch(m, dynamics.stochastic_increments(s, n, streams), hi - lo, cfg, K=K)
        cls = dynamics.classify_window(res.window, K, cfg.tol_K, cfg.tol_0)
        out = []
        for j, c in enumerate(cls):
            e, x = int(res.entry[j]), int(res.exit[j])
            out.append(RunRecord(lo + j, master_seed, c.value, float(res.final[j]), int(res.clamp_count[j]),
                                 float(res.peak[j]), e if e >= 0 else None, x if x >= 0 else None))
        return out

    parts = _map_batches(one_batch, _batches(runs, RUN_BATCH), worker_count(workers))
    records = [r for p in parts for r in p]
    return _aggregate(records, runs, master_seed, K, cfg)


def _aggregate(records, runs, master_seed, K, cfg) -> EnsembleReport:
    counts = {c.value: 0 for c in Limit}
    examples = {c.value: [] for c in Limit}
    for r in records:
        counts[r.classification] += 1
        if len(examples[r.classification]) < EXAMPLES_PER_CLASS:
            examples[r.classification].append(r.run_index)
    z, k = counts[Limit.ToZero.value], counts[Limit.ToK.value]
    decided = z + k
    p = z / decided if decided else None
    ci = wilson_interval(z, decided) if decided else None
    interval = None
    if cfg.eps0 is not None:
        interval = {
            "eps0": cfg.eps0,
            "n1": cfg.n1,
            "entered": sum(r.entry_index is not None for r in records),
            "violations": sum(r.exit_index is not None for r in records),
            "first_violation_run": next((r.run_index for r in records if r.exit_index is not None), None),
        }
    return EnsembleReport(
        runs=runs, master_seed=master_seed, counts=counts, p_zero_hat=p, ci95=ci,
        p_zero_hat_all=z / runs, ci95_all=wilson_interval(z, runs),
        horizon_insufficient=counts[Limit.Undecided.value] > UNDECIDED_LIMIT * runs,
        examples=examples, K=K, max_peak=max(r.peak for r in records), interval=interval, records=records,
    )


# ---------------------------------------------------------------------------
# weighted noise sums

@dataclass
class PartialSumStats:
    N: int
    truncation: int
    samples: int
    p_nonpos_hat: float | None = None
    se: float | None = None
    ci95: tuple | None = None
    ks_distance: float | None = None
    running_max_increase: float | None = None
    horizons: tuple | None = None
    variance_scale: float | None = None
    seed: int | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def truncation_index(s: PerturbationSeq, N: int, rel_tail: float = TAIL_FRACTION) -> int:
    """Smallest ``T >= N`` with ``sum_{i > T} s_i^2 < rel_tail * sum_{i >= N} s_i^2``."""
    p = dict(s.params)
    if s.family == "power_law":
        two_d = 2.0 * p["d"]
        total = (p["eps"] ** 2 if N == 0 else 0.0) + p["eps"] ** 2 * float(zeta(two_d, max(N, 1)))
        tail = lambda T: p["eps"] ** 2 * float(zeta(two_d, T + 1))
        lo, hi = N, max(N, 1)
        while tail(hi) >= rel_tail * total:
            lo, hi = hi, 2 * hi
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if tail(mid) < rel_tail * total:
                hi = mid
            else:
                lo = mid
        return hi if tail(lo) >= rel_tail * total else lo
    # generic: extend until the last doubling adds a negligible amount
    H = max(2 * N, 1024)
    while True:
        v = s.values(N, H + 1)
        c = np.cumsum(v * v)
        total = float(c[-1])
        if total == 0.0:
            return N
        half = c[(H - N) // 2]
        if total - half < rel_tail * total:
            break
        if H > 10**8:
            raise PreconditionError("amplitude tail does not settle; sequence may not be square summable")
        H *= 2
    T = N + int(np.searchsorted(c, (1.0 - rel_tail) * total, side="left"))
    return min(T, H)


def estimate_TN_sign(s: PerturbationSeq, n: NoiseSpec, N: int, samples: int, seed: int,
                     truncation: int | None = None, workers: int | None = None) -> PartialSumStats:
    """Fraction of draws of ``sum_{i=N}^{T} s_i xi_{i+1} <= 0``.

    Draw ``j`` uses stream ``(seed, j)`` with ``xi_{i+1}`` at counter ``i + 1``.
    """
    if l2_classify(s, max(N, 100)).verdict != "in_l2":
        raise PreconditionError("amplitudes are not certified square summable")
    if not n.is_symmetric:
        raise PreconditionError("noise density is not symmetric")
    if samples < 1:
        raise DomainError("samples must be >= 1")
    T = truncation_index(s, N) if truncation is None else int(truncation)
    sig = s.values(N, T + 1)

    def one_batch(b):
        lo, hi = b
        out = np.empty(hi - lo)
        for j in range(lo, hi):
            xi = noise_samples(n, RngStream(seed, j), N + 1, T - N + 1)
            out[j - lo] = float(np.dot(sig, xi))
        return out

    tn = np.concatenate(_map_batches(one_batch, _batches(samples, SAMPLE_BATCH * 16), worker_count(workers)))
    k = int(np.count_nonzero(tn <= 0.0))
    p = k / samples
    return PartialSumStats(N=N, truncation=T, samples=samples, p_nonpos_hat=p,
                           se=math.sqrt(max(p * (1 - p), 0.25 / samples) / samples) if samples else None,
                           ci95=wilson_interval(k, samples), seed=seed)


def normalized_sums(s: PerturbationSeq, n: NoiseSpec, n_max: int, samples: int, seed: int,
                    horizons: tuple[int, int] = (1000, 100_000), workers: int | None = None) -> PartialSumStats:
    """``S_k = sum_{i=1}^{k} s_i xi_{i+1}`` normalised by ``D_k``, with ``D_k^2 = Var(xi) sum s_i^2``.

    Reports the KS distance of ``S_{n_max} / D_{n_max}`` to the standard
    normal and the fraction of paths whose running maximum of ``S_k / D_k``
    is strictly larger at ``horizons[1]`` than at ``horizons[0]``.
    """
    if l2_classify(s, max(n_max, 100)).verdict != "not_l2":
        raise PreconditionError("amplitudes must not be square summable for the normalised sums")
    if abs(n.mean) > 1e-12:
        raise PreconditionError("noise must be centred")
    h0, h1 = int(horizons[0]), int(horizons[1])
    if not 1 <= h0 < h1:
        raise DomainError("horizons must satisfy 1 <= h0 < h1")
    L = max(n_max, h1)
    sig = s.values(1, L + 1)
    var = n.variance
    D = np.sqrt(var * np.cumsum(sig * sig))
    if not D[0] > 0:
        raise PreconditionError("first amplitude must be positive")

    def one_batch(b):
        lo, hi = b
        end = np.empty(hi - lo)
        inc = np.zeros(hi - lo, dtype=bool)
        for j in range(lo, hi):
            xi = noise_samples(n, RngStream(seed, j), 2, L)
            z = np.cumsum(sig * xi) / D
            end[j - lo] = z[n_max - 1]
            inc[j - lo] = z[h0:h1].max() > z[:h0].max()
        return end, inc

    parts = _map_batches(one_batch, _batches(samples, SAMPLE_BATCH * 16), worker_count(workers))
    end = np.concatenate([p[0] for p in parts])
    inc = np.concatenate([p[1] for p in parts])
    return PartialSumStats(N=1, truncation=n_max, samples=samples, ks_distance=ks_statistic(end),
                           running_max_increase=float(inc.mean()), horizons=(h0, h1),
                           variance_scale=var, seed=seed)


@dataclass
class RunLengthResult:
    occurrence: float
    p_eps: float
    block_bound: float
    eps: float
    J: int
    horizon: int
    samples: int
    seed: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def block_bound(p_eps: float, J: int, horizon: int) -> float:
    """Probability that some disjoint length-``J`` block is a full run."""
    return -math.expm1((horizon // J) * math.log1p(-(p_eps ** J))) if p_eps < 1 else 1.0


def run_length_experiment(n: NoiseSpec, eps: float, J: int, horizon: int, samples: int, seed: int,
                          workers: int | None = None) -> RunLengthResult:
    """Fraction of paths with ``J`` consecutive draws in ``[1 - eps, 1]`` among the first ``horizon``."""
    if J < 1:
        raise DomainError("J must be >= 1")
    p = run_probability(n, eps)
    thr = 1.0 - eps

    def one_batch(b):
        lo, hi = b
        hits = np.zeros(hi - lo, dtype=bool)
        for j in range(lo, hi):
            good = noise_samples(n, RngStream(seed, j), 1, horizon) >= thr
            c = np.concatenate(([0], np.cumsum(good, dtype=np.int64)))
            hits[j - lo] = horizon >= J and bool(np.any(c[J:] - c[:-J] == J))
        return hits

    hits = np.concatenate(_map_batches(one_batch, _batches(samples, SAMPLE_BATCH * 4), worker_count(workers)))
    return RunLengthResult(float(hits.mean()), p, block_bound(p, J, horizon), eps, J, horizon, samples, seed)
