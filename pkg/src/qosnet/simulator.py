"""Slot-level Monte Carlo of the typical link's fluid FIFO queue.

Per slot: ALOHA activity and Rayleigh fading are redrawn, the link offers
``N ln(1 + SIR)`` nats, a constant fluid of ``rho`` nats arrives early and
departures happen late in the slot.  Cumulative processes are stored with
``A[k]`` = arrivals in slots ``0..k-1`` (so ``A[0] = 0``).
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .geometry import (
    BipolarNetwork,
    NetworkParams,
    SlotDraw,
    realization_seed,
    sample_network,
    sir,
)
from .service_dist import instantaneous_capacity
from .snc_delay import kbps_to_nats_per_slot

CHUNK = 1024


class InsufficientSamples(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    net: NetworkParams = field(default_factory=NetworkParams)
    rho_kbps: float = 64.0
    T_ms: float = 1.0
    n_symbols: int = 100
    slots: int = 20000
    warmup: int | None = None
    realizations: int = 200
    master_seed: int = 0
    w_list: tuple = tuple(range(1, 11))

    def __post_init__(self) -> None:
        object.__setattr__(self, "w_list", tuple(int(w) for w in self.w_list))
        if self.warmup is None:
            object.__setattr__(self, "warmup", max(self.slots // 10, 10 * max(self.w_list, default=0)))
        errors = []
        if not self.rho_kbps >= 0:
            errors.append("rho_kbps must be nonnegative")
        if not self.T_ms > 0:
            errors.append("T_ms must be positive")
        if self.n_symbols < 1:
            errors.append("n_symbols must be >= 1")
        if not self.slots > self.warmup >= 0:
            errors.append("need slots > warmup >= 0")
        if self.realizations < 1:
            errors.append("realizations must be >= 1")
        if any(w < 0 for w in self.w_list):
            errors.append("w_list entries must be nonnegative")
        if self.slots - max(self.w_list, default=0) <= self.warmup:
            errors.append("horizon too short for the largest w after warmup")
        if errors:
            raise ValueError("; ".join(errors))

    @property
    def rho_nats(self) -> float:
        return kbps_to_nats_per_slot(self.rho_kbps, self.T_ms)

    @property
    def window(self) -> tuple[int, int]:
        """Arrival epochs t used for delay statistics: [warmup, slots - max w]."""
        return self.warmup, self.slots - max(self.w_list, default=0) + 1


@dataclass(frozen=True)
class QueueTrace:
    A: np.ndarray
    D: np.ndarray
    C: np.ndarray
    W: np.ndarray
    window: tuple[int, int]

    @property
    def backlog(self) -> np.ndarray:
        return self.A - self.D


@dataclass(frozen=True)
class ViolationEstimate:
    p: float
    stderr: float
    n: int


@dataclass
class RealizationResult:
    network: BipolarNetwork
    pv_empirical: dict
    stderr: dict = field(default_factory=dict)
    n_samples: int = 0
    ps_empirical: dict = field(default_factory=dict)
    mean_capacity: float = 0.0
    extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for v in list(self.pv_empirical.values()) + list(self.ps_empirical.values()):
            if not 0 <= v <= 1:
                raise ValueError("probabilities must lie in [0, 1]")


def simulate_sir(network: BipolarNetwork, slots: int, seed) -> np.ndarray:
    """Per-slot SIR with fresh fading and activity each slot."""
    rng = np.random.default_rng(seed)
    n = network.n_interferers
    p = network.params.p
    out = np.empty(slots)
    for start in range(0, slots, CHUNK):
        m = min(CHUNK, slots - start)
        fading = rng.standard_exponential((m, n + 1))
        active = rng.random((m, n)) < p
        out[start:start + m] = sir(network, SlotDraw(fading, active))
    return out


def delays(A: np.ndarray, D: np.ndarray) -> np.ndarray:
    """W(t) = min{u >= 1 : D[t+u] >= A[t]} for every epoch t.

    Epochs with nothing delivered yet (``A[t] = 0``) get 0; epochs whose
    crossing lies beyond the horizon are right-censored and marked ``inf``.
    """
    Dm = np.maximum.accumulate(D)
    k = np.searchsorted(Dm, A, side="left")
    t = np.arange(A.size)
    hit = np.maximum(k, t + 1)
    W = (hit - t).astype(float)
    W[hit >= A.size] = math.inf
    W[A <= 0] = 0.0
    return W


def queue_from_service(c: np.ndarray, rho: float, window: tuple[int, int]) -> QueueTrace:
    """Run B_{i+1} = max(B_i + a - c_i, 0), d_i = min(B_i + a, c_i)."""
    slots = c.size
    B = np.zeros(slots + 1)
    b = 0.0
    for i, ci in enumerate(c.tolist()):
        b = b + rho - ci
        if b < 0.0:
            b = 0.0
        B[i + 1] = b
    A = rho * np.arange(slots + 1, dtype=float)
    D = A - B
    return QueueTrace(A, D, c, delays(A, D), window)


def run_realization(network: BipolarNetwork, cfg: SimConfig, seed,
                    service: np.ndarray | Callable | None = None) -> QueueTrace:
    """Queue trace for one network.  ``service`` overrides the per-slot capacities."""
    if service is None:
        c = instantaneous_capacity(simulate_sir(network, cfg.slots, seed), cfg.n_symbols)
    elif callable(service):
        c = np.asarray(service(cfg.slots), dtype=float)
    else:
        c = np.asarray(service, dtype=float)
    if c.shape != (cfg.slots,):
        raise ValueError("service must provide one capacity per slot")
    return queue_from_service(c, cfg.rho_nats, cfg.window)


def delay_process(trace: QueueTrace) -> np.ndarray:
    """Delays of the arrival epochs inside the analysis window."""
    lo, hi = trace.window
    return trace.W[lo:hi]


def empirical_delay_violation(traces, w: float) -> ViolationEstimate:
    """Fraction of windowed epochs with W(t) > w, pooled over ``traces``."""
    if isinstance(traces, QueueTrace):
        traces = [traces]
    W = np.concatenate([delay_process(tr) if isinstance(tr, QueueTrace) else np.asarray(tr, dtype=float)
                        for tr in traces])
    n = W.size
    if n < 100:
        raise InsufficientSamples(f"only {n} delay samples")
    p = float(np.count_nonzero(W > w)) / n
    return ViolationEstimate(p, math.sqrt(p * (1 - p) / n), n)


def aggregate(results: Sequence[RealizationResult], w) -> tuple[float, Callable]:
    """Spatial mean of pv(w) and the empirical ccdf x -> fraction{pv(w) > x}."""
    if len(results) < 2:
        raise ValueError("aggregate needs at least two realizations")
    pv = np.sort(np.array([r.pv_empirical[w] for r in results]))

    def ccdf(x):
        x_arr = np.asarray(x, dtype=float)
        out = 1.0 - np.searchsorted(pv, x_arr, side="right") / pv.size
        return float(out) if out.ndim == 0 else out

    return float(pv.mean()), ccdf


def simulate_network(index: int, cfg: SimConfig, rhos_kbps: Sequence[float] | None = None,
                     xi_list: Sequence[float] = ()) -> list[RealizationResult]:
    """Realization ``index``: one network and one SIR sequence shared by all rates."""
    network = sample_network(cfg.net, realization_seed(cfg.master_seed, index, 0))
    sirs = simulate_sir(network, cfg.slots, realization_seed(cfg.master_seed, index, 1))
    c = instantaneous_capacity(sirs, cfg.n_symbols)
    ps = {xi: float(np.mean(sirs > xi)) for xi in xi_list}
    out = []
    for rho_kbps in (rhos_kbps if rhos_kbps is not None else [cfg.rho_kbps]):
        trace = queue_from_service(c, kbps_to_nats_per_slot(rho_kbps, cfg.T_ms), cfg.window)
        est = {w: empirical_delay_violation(trace, w) for w in cfg.w_list}
        out.append(RealizationResult(
            network=network,
            pv_empirical={w: e.p for w, e in est.items()},
            stderr={w: e.stderr for w, e in est.items()},
            n_samples=next(iter(est.values())).n if est else 0,
            ps_empirical=ps,
            mean_capacity=float(c.mean()),
            extra={"rho_kbps": rho_kbps, "index": index},
        ))
    return out


def map_realizations(fn: Callable, n: int, workers: int = 1) -> list:
    """``[fn(0), ..., fn(n-1)]`` in index order, optionally in worker processes."""
    if workers <= 1:
        return [fn(i) for i in range(n)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n), chunksize=max(1, n // (4 * workers))))
