"""Discrete-event simulator used to cross-check the analytical delay model.

Jobs arrive per request class as Poisson streams, walk their service chain by
sampling next hops from the routing policy, and queue FCFS at each
(server, service) group behind `N` exponential servers. Transmission,
communication, and return delays are the same deterministic values the
analytical model uses. The event queue is ordered by (time, sequence number)
and every request class draws from its own PRNG stream derived from the
master seed, so runs are bit-reproducible.
"""

from __future__ import annotations

import json
import math
import warnings
from collections import deque
from dataclasses import dataclass, field
from heapq import heappush, heappop

import numpy as np
from scipy import stats

from .delay import (
    DelayBreakdown,
    InfeasibleDelay,
    RoutingPolicy,
    hop_delay_matrix,
    propagate_arrivals,
    utilization,
)
from .errors import UnreachableStageError
from .model import DeploymentPlan, Scenario, transfer_seconds

_ARRIVE = 0
_DEPART = 1


@dataclass
class SimConfig:
    """Simulation run parameters.

    horizon counts total arrivals across all request classes; warmup_fraction
    of each class's earliest arrivals is excluded from statistics; batches
    sets the batch-means count for the 95% confidence interval.
    """

    horizon: int = 100_000
    warmup_fraction: float = 0.2
    seed: int = 0
    batches: int = 10

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must lie in [0, 1)")
        if self.batches < 2:
            raise ValueError("batches must be at least 2")


@dataclass
class ClassStats:
    mean: float
    ci_half: float | None
    n: int


@dataclass
class StationStats:
    arrivals: int
    util: float
    mean_jobs: float
    mean_sojourn: float


@dataclass
class EmpiricalReport:
    """Measured sojourn statistics of one simulation run."""

    per_request: dict[str, ClassStats]
    overall_mean: float | None
    overall_ci_half: float | None
    utilization: dict[str, float]
    stations: dict[str, StationStats]
    hop_counts: dict[str, int]
    unstable: bool
    total_jobs: int

    def to_json(self) -> str:
        def enc(obj):
            if isinstance(obj, (ClassStats, StationStats)):
                return obj.__dict__
            raise TypeError(type(obj).__name__)

        return json.dumps(self.__dict__, default=enc, sort_keys=True, indent=1)


def _arrival_counts(rates: list[float], horizon: int) -> list[int]:
    """Split `horizon` arrivals across classes proportionally (largest remainder)."""
    total = sum(rates)
    if total == 0:
        return [0] * len(rates)
    quotas = [horizon * r / total for r in rates]
    counts = [int(math.floor(q)) for q in quotas]
    remainder = horizon - sum(counts)
    order = sorted(range(len(rates)), key=lambda i: (counts[i] - quotas[i], i))
    for i in order[:remainder]:
        counts[i] += 1
    return counts


def _batch_ci(values: np.ndarray, batches: int) -> float | None:
    if len(values) < 2 * batches:
        return None
    chunks = np.array_split(values, batches)
    means = np.array([c.mean() for c in chunks])
    t = stats.t.ppf(0.975, batches - 1)
    return float(t * means.std(ddof=1) / math.sqrt(batches))


def simulate(
    plan: DeploymentPlan, routing: RoutingPolicy, scenario: Scenario, cfg: SimConfig
) -> EmpiricalReport:
    """Run the simulation and report per-class sojourn means with CIs.

    Requires a complete routing (every class reachable). If the analytical
    utilization is unstable the run still completes on the finite arrival
    horizon but the report is flagged `unstable`.
    """
    requests = scenario.requests
    for req in requests:
        if req.arrival_rate > 0 and routing.routing_for(req.id) is None:
            raise UnreachableStageError(req.id, routing.unreachable.get(req.id, 0))

    lambdas = propagate_arrivals(plan, routing, scenario)
    _, stable = utilization(lambdas, plan, scenario.services)
    if not stable:
        warnings.warn("offered load is unstable; reporting truncated estimates")

    rates = [req.arrival_rate for req in requests]
    n_per_class = _arrival_counts(rates, cfg.horizon)
    streams = [
        np.random.Generator(np.random.PCG64(ss))
        for ss in np.random.SeedSequence(cfg.seed).spawn(max(1, len(requests)))
    ]

    hops_delay = hop_delay_matrix(scenario)
    chains = scenario.chains_idx
    svc_scale = [1.0 / s.proc_rate for s in scenario.services]
    counts = plan.counts

    # Per-class precomputation: arrival times, entry choices, cumulative hop rows.
    arrivals: list[np.ndarray] = []
    entry_choice: list[np.ndarray] = []
    hop_cum: list[np.ndarray] = []
    t_transmit: list[float] = []
    t_return: list[np.ndarray] = []
    for r, req in enumerate(requests):
        n_k = n_per_class[r]
        rng = streams[r]
        gaps = rng.exponential(1.0 / req.arrival_rate, size=n_k) if n_k else np.empty(0)
        arrivals.append(np.cumsum(gaps))
        rr = routing.routing_for(req.id)
        entry_cum = np.cumsum(rr.entry)
        entry_cum /= entry_cum[-1]  # exact 1.0 tail so searchsorted stays in range
        entry_choice.append(np.searchsorted(entry_cum, rng.random(n_k), side="right"))
        cum = np.cumsum(rr.hops, axis=2)
        tail = cum[..., -1:]
        hop_cum.append(np.divide(cum, tail, out=cum, where=tail > 0))
        access = scenario.access_bw_vector(r)
        t_transmit.append(transfer_seconds(req.payload_mb, access[scenario.entry_idx[r]]))
        t_return.append(req.result_mb * 8.0 / (access * 1000.0))

    sojourns = [np.full(n, np.nan) for n in n_per_class]

    # Station state: [capacity, busy, queue, busy_integral, jobs_integral,
    #                 last_event_time, arrivals, sojourn_sum]
    stations: dict[tuple[int, int], list] = {}
    for i, j in zip(*np.nonzero(counts > 0)):
        stations[(int(i), int(j))] = [int(counts[i, j]), 0, deque(), 0.0, 0.0, 0.0, 0, 0.0]

    hop_counts: dict[tuple[int, int, int, int], int] = {}

    heap: list = []
    seq = 0
    for r in range(len(requests)):
        for a in range(n_per_class[r]):
            t_enter = arrivals[r][a] + t_transmit[r]
            heappush(heap, (t_enter, seq, _ARRIVE, r, a, 0, int(entry_choice[r][a]), t_enter))
            seq += 1

    def tick(st: list, now: float) -> None:
        dt = now - st[5]
        if dt > 0:
            st[3] += st[1] * dt
            st[4] += (st[1] + len(st[2])) * dt
            st[5] = now

    t_end = 0.0
    while heap:
        t, _, kind, r, a, k, i, t_arr = heappop(heap)
        t_end = t
        svc = int(chains[r][k])
        st = stations[(i, svc)]
        tick(st, t)
        if kind == _ARRIVE:
            st[6] += 1
            if st[1] < st[0]:
                st[1] += 1
                dur = streams[r].exponential(svc_scale[svc])
                heappush(heap, (t + dur, seq, _DEPART, r, a, k, i, t_arr))
                seq += 1
            else:
                st[2].append((r, a, k, t_arr))
        else:
            st[1] -= 1
            st[7] += t - t_arr
            if st[2]:
                r2, a2, k2, t_arr2 = st[2].popleft()
                st[1] += 1
                dur = streams[r2].exponential(svc_scale[int(chains[r2][k2])])
                heappush(heap, (t + dur, seq, _DEPART, r2, a2, k2, i, t_arr2))
                seq += 1
            if k == len(chains[r]) - 1:
                sojourns[r][a] = (t + t_return[r][i]) - arrivals[r][a]
            else:
                u = streams[r].random()
                j = int(np.searchsorted(hop_cum[r][k][i], u, side="right"))
                key = (r, k, i, j)
                hop_counts[key] = hop_counts.get(key, 0) + 1
                t_next = t + hops_delay[chains[r][k]][i, j]
                heappush(heap, (t_next, seq, _ARRIVE, r, a, k + 1, j, t_next))
                seq += 1

    per_request: dict[str, ClassStats] = {}
    pooled: list[tuple[float, float]] = []
    for r, req in enumerate(requests):
        n_k = n_per_class[r]
        warm = int(math.floor(cfg.warmup_fraction * n_k))
        vals = sojourns[r][warm:]
        if len(vals) == 0:
            continue
        per_request[req.id] = ClassStats(
            mean=float(vals.mean()), ci_half=_batch_ci(vals, cfg.batches), n=len(vals)
        )
        pooled.extend(zip(arrivals[r][warm:], vals))

    if pooled:
        pooled.sort()
        pooled_vals = np.array([v for _, v in pooled])
        overall_mean = float(pooled_vals.mean())
        overall_ci = _batch_ci(pooled_vals, cfg.batches)
    else:
        overall_mean = None
        overall_ci = None

    util_out: dict[str, float] = {}
    station_out: dict[str, StationStats] = {}
    for (i, j), st in sorted(stations.items()):
        tick(st, t_end)
        key = f"{scenario.topology.nodes[i].id}/{scenario.services[j].id}"
        span = t_end if t_end > 0 else 1.0
        util_out[key] = st[3] / (st[0] * span)
        station_out[key] = StationStats(
            arrivals=st[6],
            util=util_out[key],
            mean_jobs=st[4] / span,
            mean_sojourn=st[7] / st[6] if st[6] else 0.0,
        )

    hop_out = {
        f"{requests[r].id}:{k}:{scenario.topology.nodes[i].id}->{scenario.topology.nodes[j].id}": c
        for (r, k, i, j), c in sorted(hop_counts.items())
    }

    return EmpiricalReport(
        per_request=per_request,
        overall_mean=overall_mean,
        overall_ci_half=overall_ci,
        utilization=util_out,
        stations=station_out,
        hop_counts=hop_out,
        unstable=not stable,
        total_jobs=sum(n_per_class),
    )


@dataclass
class ComparisonVerdict:
    request_id: str
    analytic: float | None
    empirical: float | None
    ci_half: float | None
    passed: bool
    note: str = ""


def compare(
    analytic: dict[str, DelayBreakdown | InfeasibleDelay],
    empirical: EmpiricalReport,
    rel_tol: float = 0.05,
) -> list[ComparisonVerdict]:
    """Per-class verdicts: pass iff |analytic - empirical| <= max(rel_tol * analytic, CI)."""
    verdicts = []
    for req_id in sorted(analytic):
        value = analytic[req_id]
        emp = empirical.per_request.get(req_id)
        if isinstance(value, InfeasibleDelay):
            passed = empirical.unstable
            verdicts.append(
                ComparisonVerdict(
                    req_id, None, emp.mean if emp else None, None, passed,
                    note="analytic infeasible",
                )
            )
            continue
        if emp is None:
            verdicts.append(ComparisonVerdict(req_id, value.total, None, None, False,
                                              note="no empirical data"))
            continue
        ci = emp.ci_half if emp.ci_half is not None else 0.0
        threshold = max(rel_tol * value.total, ci)
        passed = abs(value.total - emp.mean) <= threshold
        verdicts.append(ComparisonVerdict(req_id, value.total, emp.mean, emp.ci_half, passed))
    return verdicts
