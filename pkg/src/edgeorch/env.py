"""Sequential placement environment.

An episode deploys a precomputed budget of service instances one at a time:
each step the agent picks a server for the pending instance, routing is
rebuilt proportionally, and the reward follows the two-stage scheme of
delay-difference shaping plus an end-of-round settlement against the
previous round and the best round seen so far.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .delay import DEFAULT_PENALTY_SECONDS, proportional_routing, propagate_arrivals, total_delay
from .errors import DeadlockError, SetupError, StructuralError
from .model import DeploymentPlan, Scenario, availability_mask

_EQ_TOL = 1e-9


@dataclass
class GraphData:
    """One graph observation: boolean adjacency plus per-node features."""

    adj: np.ndarray
    feats: np.ndarray


@dataclass
class EnvState:
    """Agent observation: two per-server vectors and three feature graphs.

    arrival_dist: current arrival rate of the pending service on each server.
    avail_mask:   1 where the server can still host the pending instance.
    deploy_graph: topology graph, node features = instance counts per service.
    route_graphs: one graph per request whose chain contains the pending
                  service; node features = marginal forwarding mass per service.
    invoke_graph: directed service-dependency graph with static service
                  features [id, cpu, gpu, mem, output_mb, proc_rate].
    """

    arrival_dist: np.ndarray
    avail_mask: np.ndarray
    deploy_graph: GraphData
    route_graphs: list[GraphData]
    invoke_graph: GraphData


@dataclass
class PendingSchedule:
    """Ordered placement slots (service index per step) and the cursor."""

    slots: tuple[int, ...]
    cursor: int = 0

    def __post_init__(self):
        if not 0 <= self.cursor <= len(self.slots):
            raise ValueError("cursor out of range")

    @property
    def total(self) -> int:
        return len(self.slots)

    @property
    def done(self) -> bool:
        return self.cursor >= len(self.slots)

    def pending(self) -> int:
        if self.done:
            raise StructuralError("schedule exhausted")
        return self.slots[self.cursor]


@dataclass
class RewardConfig:
    """Weights of the two-stage reward; alpha1 scales per-step delay deltas,
    c is the fixed reward for delay-neutral horizontal scaling, alpha2/alpha3
    weigh the final settlement."""

    alpha1: float = 1.0
    alpha2: float = 1.0
    alpha3: float = 1.0
    c: float = 0.1
    t_penalty: float = DEFAULT_PENALTY_SECONDS

    def __post_init__(self):
        if self.alpha1 <= 0:
            raise ValueError("alpha1 must be positive")


def instance_budget(scenario: Scenario, rho_target: float = 0.8) -> np.ndarray:
    """Instances to deploy per service: ceil(demand / (rho_target * mu)).

    Demand of a service is the total arrival mass of every chain stage that
    uses it. Services appearing in some chain get at least one instance;
    services referenced by no chain get zero.
    """
    if not 0 < rho_target < 1:
        raise ValueError("rho_target must lie in (0, 1)")
    demand = np.zeros(scenario.n_services)
    used = np.zeros(scenario.n_services, dtype=bool)
    for r_idx, req in enumerate(scenario.requests):
        for svc in scenario.chains_idx[r_idx]:
            demand[svc] += req.arrival_rate
            used[svc] = True
    budget = np.zeros(scenario.n_services, dtype=np.int64)
    for j in range(scenario.n_services):
        if not used[j]:
            continue
        alpha = rho_target * scenario.services[j].proc_rate
        budget[j] = max(1, math.ceil(demand[j] / alpha))
    return budget


def budget_capacity_check(scenario: Scenario, budget: np.ndarray) -> None:
    """Raise SetupError when aggregate budget demand exceeds cluster totals."""
    total_cpu = sum(n.cpu_capacity for n in scenario.topology.nodes)
    total_mem = sum(n.mem_capacity for n in scenario.topology.nodes)
    total_gpu = sum(n.gpu_capacity for n in scenario.topology.nodes)
    need_cpu = sum(b * s.cpu_req for b, s in zip(budget, scenario.services))
    need_mem = sum(b * s.mem_req for b, s in zip(budget, scenario.services))
    need_gpu = sum(b * s.gpu_req for b, s in zip(budget, scenario.services))
    if need_cpu > total_cpu:
        raise SetupError(f"budget needs {need_cpu} CPU, cluster has {total_cpu}")
    if need_mem > total_mem:
        raise SetupError(f"budget needs {need_mem} GB, cluster has {total_mem}")
    if need_gpu > total_gpu:
        raise SetupError(f"budget needs {need_gpu} GPUs, cluster has {total_gpu}")


def build_schedule(scenario: Scenario, budget: np.ndarray) -> PendingSchedule:
    """Deterministic slot order: earliest chain position first, ties by id."""
    first_pos: dict[int, tuple[int, str]] = {}
    for r_idx in range(len(scenario.requests)):
        for pos, svc in enumerate(scenario.chains_idx[r_idx]):
            key = (pos, scenario.services[svc].id)
            if svc not in first_pos or key < first_pos[svc]:
                first_pos[svc] = key
    order = sorted(
        (j for j in range(scenario.n_services) if budget[j] > 0),
        key=lambda j: first_pos.get(j, (10**9, scenario.services[j].id)),
    )
    slots: list[int] = []
    for j in order:
        slots.extend([j] * int(budget[j]))
    return PendingSchedule(slots=tuple(slots))


def build_state(
    plan: DeploymentPlan, routing, scenario: Scenario, pending: PendingSchedule
) -> EnvState:
    """Assemble the five observation components for the pending placement."""
    svc_idx = pending.pending()
    service = scenario.services[svc_idx]
    lambdas = propagate_arrivals(plan, routing, scenario)
    arrival_dist = lambdas[:, svc_idx].copy()
    avail = availability_mask(plan, scenario.topology, scenario.services, service).astype(float)

    deploy = GraphData(adj=scenario.adj.copy(), feats=plan.counts.astype(float))

    route_graphs: list[GraphData] = []
    n, s = scenario.n_servers, scenario.n_services
    for r_idx, req in enumerate(scenario.requests):
        chain = scenario.chains_idx[r_idx]
        if svc_idx not in chain:
            continue
        feats = np.zeros((n, s))
        adj = np.zeros((n, n), dtype=bool)
        rr = routing.routing_for(req.id)
        if rr is not None:
            visits = rr.visit_probs()
            for k in range(len(chain)):
                feats[:, chain[k]] += visits[k]
            for k in range(len(chain) - 1):
                for i in np.flatnonzero(visits[k] > 0):
                    adj[i] |= rr.hops[k, i] > 0
        route_graphs.append(GraphData(adj=adj, feats=feats))

    invoke_adj = np.zeros((s, s), dtype=bool)
    for r_idx in range(len(scenario.requests)):
        chain = scenario.chains_idx[r_idx]
        for k in range(len(chain) - 1):
            invoke_adj[chain[k], chain[k + 1]] = True
    invoke_feats = np.array(
        [
            [float(j), sv.cpu_req, float(sv.gpu_req), sv.mem_req, sv.output_size_mb, sv.proc_rate]
            for j, sv in enumerate(scenario.services)
        ]
    )
    invoke = GraphData(adj=invoke_adj, feats=invoke_feats)

    return EnvState(
        arrival_dist=arrival_dist,
        avail_mask=avail,
        deploy_graph=deploy,
        route_graphs=route_graphs,
        invoke_graph=invoke,
    )


def action_mask(state: EnvState) -> np.ndarray:
    """The pending instance's availability vector; all-zero means deadlock."""
    mask = state.avail_mask
    if not mask.any():
        raise DeadlockError("no server can host the pending instance")
    return mask


class OrchestrationEnv:
    """Stateful episode driver over one scenario.

    Round bookkeeping (previous round total and the best total seen) persists
    across reset() calls, feeding the final settlement reward.
    """

    def __init__(
        self,
        scenario: Scenario,
        reward: RewardConfig | None = None,
        rho_target: float = 0.8,
    ):
        self.scenario = scenario
        self.reward_cfg = reward or RewardConfig()
        self.budget = instance_budget(scenario, rho_target)
        budget_capacity_check(scenario, self.budget)
        self.plan = DeploymentPlan.empty(scenario.n_servers, scenario.n_services)
        self.schedule = build_schedule(scenario, self.budget)
        self.routing = None
        self.t_prev = 0.0
        self.round_index = 0
        self.t_prev_round: float | None = None
        self.t_min: float | None = None
        self.last_episode_total: float | None = None

    @property
    def total_steps(self) -> int:
        return self.schedule.total

    def reset(self) -> EnvState:
        self.plan = DeploymentPlan.empty(self.scenario.n_servers, self.scenario.n_services)
        self.schedule = PendingSchedule(slots=self.schedule.slots, cursor=0)
        self.routing = proportional_routing(self.plan, self.scenario, strict=False)
        self.t_prev = total_delay(
            self.plan, self.routing, self.scenario, t_penalty=self.reward_cfg.t_penalty
        )
        return build_state(self.plan, self.routing, self.scenario, self.schedule)

    def action_mask(self, state: EnvState) -> np.ndarray:
        return action_mask(state)

    def pending_service(self) -> int:
        return self.schedule.pending()

    def step(self, action: int) -> tuple[EnvState | None, float, bool]:
        """Place the pending instance on `action`; returns (state', reward, done)."""
        if self.schedule.done:
            raise StructuralError("episode already finished")
        state_mask = availability_mask(
            self.plan, self.scenario.topology, self.scenario.services,
            self.scenario.services[self.schedule.pending()],
        )
        if not state_mask[action]:
            raise StructuralError(f"action {action} is masked")
        cfg = self.reward_cfg
        self.plan = self.plan.with_instance(action, self.schedule.pending())
        self.routing = proportional_routing(self.plan, self.scenario, strict=False)
        t_now = total_delay(self.plan, self.routing, self.scenario, t_penalty=cfg.t_penalty)
        if abs(self.t_prev - t_now) <= _EQ_TOL:
            reward = cfg.c
        else:
            reward = cfg.alpha1 * (self.t_prev - t_now)
        self.t_prev = t_now
        self.schedule = PendingSchedule(self.schedule.slots, self.schedule.cursor + 1)
        done = self.schedule.done
        if done:
            reward += self._settlement(t_now)
            self.last_episode_total = t_now
            return None, reward, True
        state = build_state(self.plan, self.routing, self.scenario, self.schedule)
        return state, reward, False

    def _settlement(self, t_final: float) -> float:
        cfg = self.reward_cfg
        if self.round_index == 0:
            self.t_prev_round = t_final
            self.t_min = t_final
            self.round_index += 1
            return 0.0
        r2 = cfg.alpha2 * (self.t_prev_round - t_final) + cfg.alpha3 * (
            self.t_prev_round - self.t_min
        )
        self.t_min = min(self.t_min, t_final)
        self.t_prev_round = t_final
        self.round_index += 1
        return r2
