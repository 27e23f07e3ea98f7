"""Analytical end-to-end delay model over an open network of M/M/c groups.

Each (server, service) pair with instances forms one FCFS queueing group with
c = instance count homogeneous exponential servers. Requests enter at their
entry server, traverse their chain by probabilistic forwarding restricted to
adjacent servers, and all traffic that meets at a group pools into a single
Poisson stream. Expected per-request delay decomposes into transmission,
queueing+processing, inter-server communication, and result return; it is
evaluated by forward propagation of marginal visit probabilities over chain
stages, which equals full path enumeration by linearity of expectation
(enumeration is kept as a small-instance oracle).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import (
    ConservationError,
    StructuralError,
    UnreachableStageError,
    UnstableQueueError,
)
from .model import DeploymentPlan, Scenario, ServiceSpec, transfer_seconds

DEFAULT_PENALTY_SECONDS = 1e6
_MASS_TOL = 1e-9


class InfeasibleReason(Enum):
    UNSTABLE_QUEUE = "UNSTABLE_QUEUE"
    UNREACHABLE_STAGE = "UNREACHABLE_STAGE"


@dataclass(frozen=True)
class InfeasibleDelay:
    reason: InfeasibleReason
    penalty: float = DEFAULT_PENALTY_SECONDS


@dataclass
class DelayBreakdown:
    """Expected delay of one request class, split by phase (seconds)."""

    transmit: float
    queue_process: float
    communicate: float
    return_: float

    @property
    def total(self) -> float:
        return self.transmit + self.queue_process + self.communicate + self.return_


@dataclass
class RequestRouting:
    """Forwarding rule of one request: entry distribution + per-hop matrices.

    `entry[n]` is the probability the first chain stage runs on server n.
    `hops[k][i, j]` is the probability of forwarding from server i (stage k)
    to server j (stage k+1); rows of servers with positive visit mass sum
    to 1, other rows are zero.
    """

    entry: np.ndarray
    hops: np.ndarray  # shape (len(chain) - 1, N, N)

    def visit_probs(self) -> np.ndarray:
        """Marginal probability of each server per chain stage, shape (L, N)."""
        stages = [self.entry]
        for k in range(self.hops.shape[0]):
            stages.append(stages[-1] @ self.hops[k])
        return np.stack(stages)


@dataclass
class RoutingPolicy:
    """Per-request routing; unreachable requests carry the failing stage."""

    per_request: dict[str, RequestRouting | None]
    unreachable: dict[str, int] = field(default_factory=dict)

    def routing_for(self, request_id: str) -> RequestRouting | None:
        return self.per_request.get(request_id)


def proportional_routing(
    plan: DeploymentPlan, scenario: Scenario, *, strict: bool = True
) -> RoutingPolicy:
    """Instance-count-proportional forwarding over adjacent servers.

    From a source server, the next stage's instance on server j is chosen
    with probability N_j / sum over adjacent servers' counts. With
    strict=True an unreachable stage raises; otherwise the request is marked
    unreachable and skipped (used while plans are still under construction).
    """
    n = scenario.n_servers
    counts = plan.counts
    if counts.shape != (n, scenario.n_services):
        raise StructuralError("plan dimensions do not match scenario")
    adj = scenario.adj
    per_request: dict[str, RequestRouting | None] = {}
    unreachable: dict[str, int] = {}
    for r_idx, req in enumerate(scenario.requests):
        chain = scenario.chains_idx[r_idx]
        entry_weights = counts[:, chain[0]] * adj[scenario.entry_idx[r_idx]]
        total = entry_weights.sum()
        if total == 0:
            if strict:
                raise UnreachableStageError(req.id, 0)
            per_request[req.id] = None
            unreachable[req.id] = 0
            continue
        entry = entry_weights / total
        hops = np.zeros((len(chain) - 1, n, n))
        support = entry_weights > 0
        failed_stage = -1
        for k in range(len(chain) - 1):
            nxt = chain[k + 1]
            next_support = np.zeros(n, dtype=bool)
            for i in np.flatnonzero(support):
                w = counts[:, nxt] * adj[i]
                s = w.sum()
                if s == 0:
                    failed_stage = k + 1
                    break
                hops[k, i] = w / s
                next_support |= w > 0
            if failed_stage >= 0:
                break
            support = next_support
        if failed_stage >= 0:
            if strict:
                raise UnreachableStageError(req.id, failed_stage)
            per_request[req.id] = None
            unreachable[req.id] = failed_stage
            continue
        per_request[req.id] = RequestRouting(entry=entry, hops=hops)
    return RoutingPolicy(per_request=per_request, unreachable=unreachable)


def propagate_arrivals(
    plan: DeploymentPlan, routing: RoutingPolicy, scenario: Scenario
) -> np.ndarray:
    """Aggregate arrival rate per (server, service) group, shape (N, S).

    Stage-0 mass enters via the entry distribution; each later stage receives
    the forwarded mass of its predecessor. Streams of different requests and
    stages that share a group add up. Unreachable requests contribute no
    traffic. Raises ConservationError if any stage loses or gains mass.
    """
    lambdas = np.zeros((scenario.n_servers, scenario.n_services))
    for r_idx, req in enumerate(scenario.requests):
        rr = routing.routing_for(req.id)
        if rr is None:
            continue
        visits = rr.visit_probs()
        chain = scenario.chains_idx[r_idx]
        for k in range(len(chain)):
            stage_mass = visits[k].sum()
            if abs(stage_mass - 1.0) > _MASS_TOL:
                raise ConservationError(
                    f"request {req.id!r}: stage {k} carries mass {stage_mass!r}, expected 1"
                )
            lambdas[:, chain[k]] += req.arrival_rate * visits[k]
    return lambdas


def utilization(
    lambdas: np.ndarray, plan: DeploymentPlan, services: list[ServiceSpec]
) -> tuple[np.ndarray, bool]:
    """Service intensity rho = lambda / (c * mu) per group and a stability flag.

    Groups with no traffic report rho = 0. Positive traffic at a group with
    no instances raises UnreachableStageError.
    """
    counts = plan.counts
    if lambdas.shape != counts.shape:
        raise StructuralError("lambdas shape does not match plan")
    rho = np.zeros_like(lambdas)
    stable = True
    for i, j in zip(*np.nonzero(lambdas > 0)):
        if counts[i, j] == 0:
            raise UnreachableStageError(
                services[j].id, -1, f"traffic at ({i}, {services[j].id}) with no instances"
            )
        rho[i, j] = lambdas[i, j] / (counts[i, j] * services[j].proc_rate)
        if rho[i, j] >= 1.0:
            stable = False
    return rho, stable


def mmc_sojourn(lam: float, mu: float, c: int) -> float:
    """Expected time in system of an M/M/c queue (Erlang-C wait + service).

    Requires lam < c * mu; raises UnstableQueueError otherwise.
    """
    if mu <= 0:
        raise ValueError("mu must be positive")
    if c < 1:
        raise ValueError("c must be at least 1")
    if lam < 0:
        raise ValueError("lam must be non-negative")
    if lam >= c * mu:
        raise UnstableQueueError(f"lambda {lam} >= c*mu {c * mu}")
    if lam == 0.0:
        return 1.0 / mu
    a = lam / mu
    rho = a / c
    # term_k = a^k / k!, built iteratively to avoid overflow for moderate c
    term = 1.0
    partial = 0.0
    for k in range(c):
        partial += term
        term *= a / (k + 1)
    # term now equals a^c / c!
    erlang_c = term / ((1.0 - rho) * partial + term)
    wait = erlang_c / (c * mu - lam)
    return wait + 1.0 / mu


def hop_delay(scenario: Scenario, service_idx: int, src: int, dst: int) -> float:
    """Communication delay for one service's output between two servers.

    Zero on the same server; raises StructuralError for unlinked pairs.
    """
    if src == dst:
        return 0.0
    a = scenario.topology.nodes[src].id
    b = scenario.topology.nodes[dst].id
    bw = scenario.topology.bandwidth(a, b)
    return transfer_seconds(scenario.services[service_idx].output_size_mb, bw)


def hop_delay_matrix(scenario: Scenario) -> np.ndarray:
    """(S, N, N) communication delays; +inf marks unlinked pairs, 0 the diagonal."""
    bw = scenario.bandwidth_matrix()  # inf diagonal, 0 unlinked
    sizes = np.array([s.output_size_mb for s in scenario.services])
    with np.errstate(divide="ignore"):
        base = np.where(bw > 0, 8.0 / (bw * 1000.0), np.inf)
    np.fill_diagonal(base, 0.0)
    return sizes[:, None, None] * base


class _SojournCache:
    """Memoized M/M/c sojourn per (server, service) group; inf when unstable."""

    def __init__(self, lambdas: np.ndarray, plan: DeploymentPlan, services: list[ServiceSpec]):
        self.lambdas = lambdas
        self.counts = plan.counts
        self.services = services
        self._cache: dict[tuple[int, int], float] = {}

    def get(self, i: int, j: int) -> float:
        key = (i, j)
        if key not in self._cache:
            c = int(self.counts[i, j])
            if c == 0:
                self._cache[key] = math.inf
            else:
                try:
                    self._cache[key] = mmc_sojourn(
                        float(self.lambdas[i, j]), self.services[j].proc_rate, c
                    )
                except UnstableQueueError:
                    self._cache[key] = math.inf
        return self._cache[key]


def expected_request_delay(
    request_idx: int,
    plan: DeploymentPlan,
    routing: RoutingPolicy,
    scenario: Scenario,
    lambdas: np.ndarray,
    *,
    t_penalty: float = DEFAULT_PENALTY_SECONDS,
    _sojourns: _SojournCache | None = None,
    _hops: np.ndarray | None = None,
) -> DelayBreakdown | InfeasibleDelay:
    """Expected response delay of one request class under the given routing.

    Forward dynamic programming over chain stages: the queueing term sums
    marginal visit probability times group sojourn, the communication term
    sums edge-traversal probability times per-hop transfer time. Any visited
    unstable group makes the request infeasible.
    """
    req = scenario.requests[request_idx]
    rr = routing.routing_for(req.id)
    if rr is None:
        return InfeasibleDelay(InfeasibleReason.UNREACHABLE_STAGE, t_penalty)
    chain = scenario.chains_idx[request_idx]
    sojourns = _sojourns or _SojournCache(lambdas, plan, scenario.services)
    hops_delay = _hops if _hops is not None else hop_delay_matrix(scenario)

    access = scenario.access_bw_vector(request_idx)
    transmit = transfer_seconds(req.payload_mb, access[scenario.entry_idx[request_idx]])

    visits = rr.visit_probs()
    queue_process = 0.0
    for k in range(len(chain)):
        for i in np.flatnonzero(visits[k] > 0):
            w = sojourns.get(int(i), int(chain[k]))
            if not math.isfinite(w):
                return InfeasibleDelay(InfeasibleReason.UNSTABLE_QUEUE, t_penalty)
            queue_process += visits[k][i] * w

    communicate = 0.0
    for k in range(len(chain) - 1):
        delays = hops_delay[chain[k]]
        for i in np.flatnonzero(visits[k] > 0):
            row = rr.hops[k, i]
            for j in np.flatnonzero(row > 0):
                communicate += visits[k][i] * row[j] * delays[i, j]

    last = visits[-1]
    return_ = float(np.dot(last, req.result_mb * 8.0 / (access * 1000.0)))
    return DelayBreakdown(
        transmit=transmit, queue_process=queue_process, communicate=communicate, return_=return_
    )


def enumerate_paths(
    request_idx: int,
    routing: RoutingPolicy,
    scenario: Scenario,
    *,
    max_chain: int = 8,
    max_paths: int = 200_000,
) -> list[tuple[tuple[int, ...], float]]:
    """All routing paths of a request with their probabilities (oracle scale).

    Probabilities multiply per hop and sum to 1. Refuses chains longer than
    `max_chain` or instances branching beyond `max_paths` paths.
    """
    req = scenario.requests[request_idx]
    rr = routing.routing_for(req.id)
    if rr is None:
        raise UnreachableStageError(req.id, routing.unreachable.get(req.id, 0))
    chain = scenario.chains_idx[request_idx]
    if len(chain) > max_chain:
        raise StructuralError(f"chain length {len(chain)} exceeds enumeration cap {max_chain}")
    paths: list[tuple[tuple[int, ...], float]] = []
    stack: list[tuple[list[int], float]] = [
        ([int(i)], float(rr.entry[i])) for i in np.flatnonzero(rr.entry > 0)
    ]
    while stack:
        servers, prob = stack.pop()
        k = len(servers) - 1
        if k == len(chain) - 1:
            paths.append((tuple(servers), prob))
            if len(paths) > max_paths:
                raise StructuralError("path count exceeds enumeration cap")
            continue
        row = rr.hops[k, servers[-1]]
        for j in np.flatnonzero(row > 0):
            stack.append((servers + [int(j)], prob * float(row[j])))
    return paths


def path_delay(
    path: tuple[int, ...],
    request_idx: int,
    scenario: Scenario,
    sojourn_lookup,
    hops_delay: np.ndarray,
) -> float:
    """Deterministic delay along one concrete path (oracle helper)."""
    req = scenario.requests[request_idx]
    chain = scenario.chains_idx[request_idx]
    access = scenario.access_bw_vector(request_idx)
    total = transfer_seconds(req.payload_mb, access[scenario.entry_idx[request_idx]])
    for k, server in enumerate(path):
        total += sojourn_lookup(server, int(chain[k]))
    for k in range(len(path) - 1):
        total += hops_delay[chain[k]][path[k], path[k + 1]]
    total += transfer_seconds(req.result_mb, access[path[-1]])
    return total


def total_delay(
    plan: DeploymentPlan,
    routing: RoutingPolicy,
    scenario: Scenario,
    *,
    t_penalty: float = DEFAULT_PENALTY_SECONDS,
) -> float:
    """Objective: sum of expected delays over all request classes.

    Unreachable or unstable requests contribute `t_penalty` each, so the
    value stays finite on intermediate construction states.
    """
    lambdas = propagate_arrivals(plan, routing, scenario)
    sojourns = _SojournCache(lambdas, plan, scenario.services)
    hops = hop_delay_matrix(scenario)
    total = 0.0
    for r_idx in range(len(scenario.requests)):
        result = expected_request_delay(
            r_idx, plan, routing, scenario, lambdas,
            t_penalty=t_penalty, _sojourns=sojourns, _hops=hops,
        )
        total += result.penalty if isinstance(result, InfeasibleDelay) else result.total
    return total


def evaluate_plan(
    plan: DeploymentPlan,
    scenario: Scenario,
    *,
    t_penalty: float = DEFAULT_PENALTY_SECONDS,
) -> tuple[float, RoutingPolicy, dict[str, DelayBreakdown | InfeasibleDelay]]:
    """Build proportional routing for a plan and score it end to end."""
    routing = proportional_routing(plan, scenario, strict=False)
    lambdas = propagate_arrivals(plan, routing, scenario)
    sojourns = _SojournCache(lambdas, plan, scenario.services)
    hops = hop_delay_matrix(scenario)
    breakdowns: dict[str, DelayBreakdown | InfeasibleDelay] = {}
    total = 0.0
    for r_idx, req in enumerate(scenario.requests):
        result = expected_request_delay(
            r_idx, plan, routing, scenario, lambdas,
            t_penalty=t_penalty, _sojourns=sojourns, _hops=hops,
        )
        breakdowns[req.id] = result
        total += result.penalty if isinstance(result, InfeasibleDelay) else result.total
    return total, routing, breakdowns
