"""Comparison solvers: random placement, delay-greedy, and a genetic search.

All three place exactly the budgeted instance slots and are scored by the
same analytical objective as the learned policy. The genetic search uses a
placement-vector chromosome, tournament selection, one-point crossover,
per-gene mutation, capacity repair, and hill-climbing on the elite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .delay import DEFAULT_PENALTY_SECONDS, evaluate_plan
from .env import build_schedule, instance_budget
from .errors import InfeasiblePlanError
from .model import DeploymentPlan, Scenario, availability_mask, validate_plan


@dataclass
class GaConfig:
    population: int = 24
    generations: int = 40
    crossover_rate: float = 0.9
    mutation_rate: float = 0.08
    local_search_steps: int = 8
    elite: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.population < 2:
            raise ValueError("population must be at least 2")
        for rate in (self.crossover_rate, self.mutation_rate):
            if not 0.0 <= rate <= 1.0:
                raise ValueError("rates must lie in [0, 1]")


def _slots(scenario: Scenario, rho_target: float) -> tuple[int, ...]:
    return build_schedule(scenario, instance_budget(scenario, rho_target)).slots


def _plan_from_genes(scenario: Scenario, slots, genes) -> DeploymentPlan:
    counts = np.zeros((scenario.n_servers, scenario.n_services), dtype=np.int64)
    for svc, server in zip(slots, genes):
        counts[server, svc] += 1
    return DeploymentPlan(counts)


def random_place(
    scenario: Scenario, seed: int, rho_target: float = 0.8, max_retries: int = 100
) -> DeploymentPlan:
    """Place every budgeted slot uniformly among currently feasible servers."""
    rng = np.random.default_rng(seed)
    slots = _slots(scenario, rho_target)
    for _ in range(max_retries):
        plan = DeploymentPlan.empty(scenario.n_servers, scenario.n_services)
        ok = True
        for svc in slots:
            mask = availability_mask(
                plan, scenario.topology, scenario.services, scenario.services[svc]
            )
            options = np.flatnonzero(mask)
            if len(options) == 0:
                ok = False
                break
            plan = plan.with_instance(int(rng.choice(options)), svc)
        if ok:
            return plan
    raise InfeasiblePlanError("no feasible random placement found")


def greedy_aggregate(
    scenario: Scenario, rho_target: float = 0.8, t_penalty: float = DEFAULT_PENALTY_SECONDS
) -> DeploymentPlan:
    """Chain-order greedy: place each slot where the objective grows least.

    Chains are visited by descending arrival rate; each pass walks every
    chain stage and spends one budgeted instance of that stage's service if
    any remain. Ties prefer co-location with the stage's predecessor.
    """
    budget = instance_budget(scenario, rho_target).copy()
    order = sorted(
        range(len(scenario.requests)),
        key=lambda r: (-scenario.requests[r].arrival_rate, scenario.requests[r].id),
    )
    plan = DeploymentPlan.empty(scenario.n_servers, scenario.n_services)
    while budget.sum() > 0:
        placed_this_pass = 0
        for r_idx in order:
            chain = scenario.chains_idx[r_idx]
            prev_host: int | None = None
            for svc in chain:
                svc = int(svc)
                hosts = np.flatnonzero(plan.counts[:, svc] > 0)
                if budget[svc] <= 0:
                    prev_host = int(hosts[0]) if len(hosts) else prev_host
                    continue
                mask = availability_mask(
                    plan, scenario.topology, scenario.services, scenario.services[svc]
                )
                options = np.flatnonzero(mask)
                if len(options) == 0:
                    budget[svc] = 0  # nothing can host it; skip to avoid stalling
                    continue
                best_server = None
                best_key = None
                for server in options:
                    cand = plan.with_instance(int(server), svc)
                    total, _, _ = evaluate_plan(cand, scenario, t_penalty=t_penalty)
                    colocated = 0 if (prev_host is not None and server == prev_host) else 1
                    key = (total, colocated, int(server))
                    if best_key is None or key < best_key:
                        best_key = key
                        best_server = int(server)
                plan = plan.with_instance(best_server, svc)
                budget[svc] -= 1
                placed_this_pass += 1
                prev_host = best_server
        if placed_this_pass == 0:
            break
    return plan


def genetic_search(
    scenario: Scenario,
    cfg: GaConfig,
    rho_target: float = 0.8,
    t_penalty: float = DEFAULT_PENALTY_SECONDS,
) -> tuple[DeploymentPlan, int]:
    """Evolve placement chromosomes; returns (best feasible plan, evaluations).

    Fitness is 1/objective. Infeasible chromosomes are repaired by resampling
    violating genes among feasible servers (up to 10 attempts) and penalized
    if repair fails. Raises InfeasiblePlanError when no feasible individual
    ever appears.
    """
    rng = np.random.default_rng(cfg.seed)
    slots = _slots(scenario, rho_target)
    n_genes = len(slots)
    n_servers = scenario.n_servers
    evaluations = 0

    def repair(genes: np.ndarray) -> np.ndarray:
        for _ in range(10):
            plan = _plan_from_genes(scenario, slots, genes)
            report = validate_plan(plan, scenario.topology, scenario.services)
            if report.feasible:
                return genes
            bad_servers = {v.server_id for v in report.violations}
            bad_idx = [scenario.server_index[s] for s in bad_servers]
            for g in range(n_genes):
                if genes[g] in bad_idx:
                    genes[g] = int(rng.integers(n_servers))
        return genes

    def sample_individual() -> np.ndarray:
        plan = DeploymentPlan.empty(n_servers, scenario.n_services)
        genes = np.zeros(n_genes, dtype=np.int64)
        for i, svc in enumerate(slots):
            mask = availability_mask(
                plan, scenario.topology, scenario.services, scenario.services[svc]
            )
            options = np.flatnonzero(mask)
            genes[i] = int(rng.choice(options)) if len(options) else int(rng.integers(n_servers))
            if len(options):
                plan = plan.with_instance(int(genes[i]), svc)
        return genes

    def fitness(genes: np.ndarray) -> tuple[float, float, bool]:
        nonlocal evaluations
        evaluations += 1
        plan = _plan_from_genes(scenario, slots, genes)
        feasible = validate_plan(plan, scenario.topology, scenario.services).feasible
        total, _, _ = evaluate_plan(plan, scenario, t_penalty=t_penalty)
        if not feasible:
            total = t_penalty * (1.0 + total / t_penalty)
        return 1.0 / total, total, feasible

    population = [repair(sample_individual()) for _ in range(cfg.population)]
    scores = [fitness(g) for g in population]
    best_genes: np.ndarray | None = None
    best_total = np.inf

    def track_best():
        nonlocal best_genes, best_total
        for genes, (fit, total, feasible) in zip(population, scores):
            if feasible and total < best_total:
                best_total = total
                best_genes = genes.copy()

    track_best()
    for _ in range(cfg.generations):
        new_pop: list[np.ndarray] = []
        elite_order = np.argsort([-s[0] for s in scores])
        for e in elite_order[: cfg.elite]:
            new_pop.append(population[e].copy())
        while len(new_pop) < cfg.population:
            a = _tournament(population, scores, rng)
            b = _tournament(population, scores, rng)
            child = a.copy()
            if rng.random() < cfg.crossover_rate and n_genes > 1:
                cut = int(rng.integers(1, n_genes))
                child[cut:] = b[cut:]
            for g in range(n_genes):
                if rng.random() < cfg.mutation_rate:
                    child[g] = int(rng.integers(n_servers))
            new_pop.append(repair(child))
        population = new_pop
        scores = [fitness(g) for g in population]
        track_best()
        # hill climb on the current elite
        elite_idx = int(np.argmax([s[0] for s in scores]))
        genes = population[elite_idx].copy()
        fit, total, feasible = scores[elite_idx]
        for _ in range(cfg.local_search_steps):
            g = int(rng.integers(n_genes))
            alt = int(rng.integers(n_servers))
            if alt == genes[g]:
                continue
            cand = genes.copy()
            cand[g] = alt
            c_fit, c_total, c_feasible = fitness(cand)
            if c_fit > fit:
                genes, fit, total, feasible = cand, c_fit, c_total, c_feasible
        population[elite_idx] = genes
        scores[elite_idx] = (fit, total, feasible)
        track_best()

    if best_genes is None:
        raise InfeasiblePlanError("genetic search found no feasible individual")
    return _plan_from_genes(scenario, slots, best_genes), evaluations


def _tournament(population, scores, rng, k: int = 3) -> np.ndarray:
    idx = rng.integers(0, len(population), size=min(k, len(population)))
    best = max(idx, key=lambda i: scores[i][0])
    return population[best]


def exhaustive_optimum(
    scenario: Scenario, rho_target: float = 0.8, t_penalty: float = DEFAULT_PENALTY_SECONDS,
    cap: int = 300_000,
) -> tuple[DeploymentPlan, float]:
    """Brute-force best feasible plan over all placements (oracle scale)."""
    slots = _slots(scenario, rho_target)
    n = scenario.n_servers
    if n ** len(slots) > cap:
        raise InfeasiblePlanError(f"instance too large to enumerate: {n}^{len(slots)}")
    best_total = np.inf
    best_plan = None
    genes = np.zeros(len(slots), dtype=np.int64)
    while True:
        plan = _plan_from_genes(scenario, slots, genes)
        if validate_plan(plan, scenario.topology, scenario.services).feasible:
            total, _, _ = evaluate_plan(plan, scenario, t_penalty=t_penalty)
            if total < best_total:
                best_total = total
                best_plan = plan
        # odometer increment
        i = 0
        while i < len(genes):
            genes[i] += 1
            if genes[i] < n:
                break
            genes[i] = 0
            i += 1
        else:
            break
    if best_plan is None:
        raise InfeasiblePlanError("no feasible plan exists")
    return best_plan, float(best_total)
