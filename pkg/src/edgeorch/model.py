"""Domain model for the edge cluster: servers, services, requests, plans.

Servers come in two kinds: UCS nodes offer CPU and memory only, HAC nodes
additionally carry GPUs. AI services may only run on HAC nodes. A deployment
plan is an integer matrix of instance counts indexed (server, service).
All types here are plain values; query functions never mutate their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import StructuralError


class ServerKind(Enum):
    UCS = "UCS"
    HAC = "HAC"


class ServiceKind(Enum):
    MICRO = "MICRO"
    AI = "AI"


@dataclass(frozen=True)
class ServerNode:
    """One edge server with its resource capacities.

    Attributes:
        id: Unique server identifier.
        kind: UCS (no GPUs) or HAC (GPUs present).
        cpu_capacity: CPU cores available.
        gpu_capacity: GPU devices available (0 on UCS).
        mem_capacity: Memory in GB.
    """

    id: str
    kind: ServerKind
    cpu_capacity: float
    gpu_capacity: int
    mem_capacity: float

    def __post_init__(self):
        if self.cpu_capacity < 0 or self.gpu_capacity < 0 or self.mem_capacity < 0:
            raise ValueError(f"server {self.id!r}: capacities must be non-negative")
        if self.kind == ServerKind.UCS and self.gpu_capacity != 0:
            raise ValueError(f"server {self.id!r}: UCS servers carry no GPUs")
        if self.kind == ServerKind.HAC and self.gpu_capacity <= 0:
            raise ValueError(f"server {self.id!r}: HAC servers must carry GPUs")


@dataclass(frozen=True)
class ServiceSpec:
    """One service type and its per-instance demand.

    Attributes:
        id: Unique service identifier.
        kind: MICRO or AI.
        cpu_req: CPU cores per instance.
        gpu_req: GPU devices per instance (0 for MICRO).
        mem_req: Memory in GB per instance.
        output_size_mb: Result data size handed to the next chain stage.
        proc_rate: Service rate in requests per second per instance server.
    """

    id: str
    kind: ServiceKind
    cpu_req: float
    gpu_req: int
    mem_req: float
    output_size_mb: float
    proc_rate: float

    def __post_init__(self):
        if self.kind == ServiceKind.MICRO and self.gpu_req != 0:
            raise ValueError(f"service {self.id!r}: microservices never require GPUs")
        if self.proc_rate <= 0:
            raise ValueError(f"service {self.id!r}: proc_rate must be positive")
        if self.output_size_mb < 0 or self.cpu_req < 0 or self.gpu_req < 0 or self.mem_req < 0:
            raise ValueError(f"service {self.id!r}: demands must be non-negative")


@dataclass(frozen=True)
class RequestClass:
    """One request class: an ordered service chain fed by a Poisson stream.

    Attributes:
        id: Unique request identifier.
        chain: Ordered tuple of service ids to traverse.
        entry_server: Server id where the request enters the cluster.
        arrival_rate: Poisson arrival rate in requests per second.
        payload_mb: Upload size of the request packet.
        result_mb: Download size of the final result.
    """

    id: str
    chain: tuple[str, ...]
    entry_server: str
    arrival_rate: float
    payload_mb: float
    result_mb: float

    def __post_init__(self):
        if len(self.chain) == 0:
            raise ValueError(f"request {self.id!r}: chain must be non-empty")
        if self.arrival_rate <= 0:
            raise ValueError(f"request {self.id!r}: arrival_rate must be positive")
        if self.payload_mb < 0 or self.result_mb < 0:
            raise ValueError(f"request {self.id!r}: payload sizes must be non-negative")


def _canonical_pair(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


@dataclass
class NetworkTopology:
    """Undirected server graph with link and access bandwidths.

    `links` maps an unordered server-id pair to its bandwidth in Gbps
    (symmetric by construction). `access_default` gives each server's access
    bandwidth toward users; `access_overrides` may refine it per
    (server, request-class) pair. Two servers are *adjacent* when linked or
    identical (self-adjacency is always on).
    """

    nodes: list[ServerNode]
    links: dict[tuple[str, str], float]
    access_default: dict[str, float]
    access_overrides: dict[tuple[str, str], float] = field(default_factory=dict)

    def __post_init__(self):
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate server ids in topology")
        known = set(ids)
        canon: dict[tuple[str, str], float] = {}
        for (a, b), bw in self.links.items():
            if a not in known or b not in known:
                raise ValueError(f"link ({a!r}, {b!r}) references unknown server")
            if a == b:
                raise ValueError(f"self-link on {a!r} is implicit, do not declare it")
            if bw <= 0:
                raise ValueError(f"link ({a!r}, {b!r}): bandwidth must be positive")
            key = _canonical_pair(a, b)
            if key in canon and canon[key] != bw:
                raise ValueError(f"asymmetric bandwidth declared for link {key}")
            canon[key] = bw
        self.links = canon
        for sid in ids:
            if sid not in self.access_default:
                raise ValueError(f"server {sid!r} has no access bandwidth")

    @property
    def server_ids(self) -> list[str]:
        return [n.id for n in self.nodes]

    def linked(self, a: str, b: str) -> bool:
        return a == b or _canonical_pair(a, b) in self.links

    def bandwidth(self, a: str, b: str) -> float:
        """Link bandwidth in Gbps; raises for unlinked distinct pairs."""
        if a == b:
            raise StructuralError("no link bandwidth defined for a server with itself")
        key = _canonical_pair(a, b)
        if key not in self.links:
            raise StructuralError(f"servers {a!r} and {b!r} are not linked")
        return self.links[key]

    def access_bandwidth(self, server_id: str, request_id: str) -> float:
        """Access bandwidth B(server, request) in Gbps."""
        return self.access_overrides.get((server_id, request_id), self.access_default[server_id])

    def adjacency_matrix(self) -> np.ndarray:
        """Boolean adjacency with self-loops (adjacent := linked or identical)."""
        n = len(self.nodes)
        index = {sid: i for i, sid in enumerate(self.server_ids)}
        adj = np.eye(n, dtype=bool)
        for (a, b) in self.links:
            adj[index[a], index[b]] = True
            adj[index[b], index[a]] = True
        return adj


@dataclass
class DeploymentPlan:
    """Instance-count matrix, rows = servers, columns = services."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2:
            raise StructuralError("plan counts must be a 2-D matrix")
        if not np.issubdtype(counts.dtype, np.integer):
            if not np.all(counts == np.floor(counts)):
                raise StructuralError("plan counts must be integers")
            counts = counts.astype(np.int64)
        if np.any(counts < 0):
            raise StructuralError("plan counts must be non-negative")
        self.counts = counts.astype(np.int64)

    @classmethod
    def empty(cls, n_servers: int, n_services: int) -> "DeploymentPlan":
        return cls(np.zeros((n_servers, n_services), dtype=np.int64))

    def copy(self) -> "DeploymentPlan":
        return DeploymentPlan(self.counts.copy())

    def with_instance(self, server_idx: int, service_idx: int) -> "DeploymentPlan":
        """A new plan with one more instance at (server, service)."""
        counts = self.counts.copy()
        counts[server_idx, service_idx] += 1
        return DeploymentPlan(counts)

    def occupancy(self) -> np.ndarray:
        """Binary occupancy indicator: 1 iff at least one instance present."""
        return (self.counts > 0).astype(np.int64)


@dataclass(frozen=True)
class Violation:
    server_id: str
    resource: str  # "cpu" | "gpu" | "mem" | "placement"
    used: float
    capacity: float


@dataclass
class ConstraintReport:
    feasible: bool
    violations: list[Violation]


@dataclass
class Scenario:
    """A fully resolved problem instance: topology, catalog, and workload.

    Index maps and the adjacency matrix are derived once; the delay engine
    and the environment work on integer indices throughout.
    """

    scenario_id: str
    topology: NetworkTopology
    services: list[ServiceSpec]
    requests: list[RequestClass]

    server_index: dict[str, int] = field(init=False)
    service_index: dict[str, int] = field(init=False)
    adj: np.ndarray = field(init=False)
    chains_idx: list[np.ndarray] = field(init=False)
    entry_idx: list[int] = field(init=False)

    def __post_init__(self):
        self.server_index = {n.id: i for i, n in enumerate(self.topology.nodes)}
        self.service_index = {s.id: i for i, s in enumerate(self.services)}
        if len(self.service_index) != len(self.services):
            raise ValueError("duplicate service ids")
        if len({r.id for r in self.requests}) != len(self.requests):
            raise ValueError("duplicate request ids")
        self.adj = self.topology.adjacency_matrix()
        self.chains_idx = []
        self.entry_idx = []
        for req in self.requests:
            for sid in req.chain:
                if sid not in self.service_index:
                    raise ValueError(f"request {req.id!r} references unknown service {sid!r}")
            if req.entry_server not in self.server_index:
                raise ValueError(f"request {req.id!r} enters at unknown server {req.entry_server!r}")
            self.chains_idx.append(
                np.array([self.service_index[sid] for sid in req.chain], dtype=np.int64)
            )
            self.entry_idx.append(self.server_index[req.entry_server])

    @property
    def n_servers(self) -> int:
        return len(self.topology.nodes)

    @property
    def n_services(self) -> int:
        return len(self.services)

    def is_ai_request(self, request_idx: int) -> bool:
        chain = self.chains_idx[request_idx]
        return any(self.services[s].kind == ServiceKind.AI for s in chain)

    def access_bw_vector(self, request_idx: int) -> np.ndarray:
        """B(server, request) for every server, Gbps."""
        req = self.requests[request_idx]
        return np.array(
            [self.topology.access_bandwidth(sid, req.id) for sid in self.topology.server_ids]
        )

    def bandwidth_matrix(self) -> np.ndarray:
        """Gbps per linked pair, +inf on the diagonal, 0 where unlinked."""
        n = self.n_servers
        bw = np.zeros((n, n))
        np.fill_diagonal(bw, np.inf)
        for (a, b), gbps in self.topology.links.items():
            i, j = self.server_index[a], self.server_index[b]
            bw[i, j] = gbps
            bw[j, i] = gbps
        return bw


def transfer_seconds(size_mb: float, bandwidth_gbps: float) -> float:
    """Time to push `size_mb` megabytes through a `bandwidth_gbps` pipe."""
    return size_mb * 8.0 / (bandwidth_gbps * 1000.0)


def _check_dims(plan: DeploymentPlan, topo: NetworkTopology, services: list[ServiceSpec]) -> None:
    n, s = plan.counts.shape
    if n != len(topo.nodes) or s != len(services):
        raise StructuralError(
            f"plan shape {plan.counts.shape} does not match "
            f"{len(topo.nodes)} servers x {len(services)} services"
        )


def validate_plan(
    plan: DeploymentPlan, topo: NetworkTopology, services: list[ServiceSpec]
) -> ConstraintReport:
    """Check per-server resource sums and the AI-on-HAC placement rule."""
    _check_dims(plan, topo, services)
    cpu = np.array([s.cpu_req for s in services])
    gpu = np.array([s.gpu_req for s in services], dtype=float)
    mem = np.array([s.mem_req for s in services])
    violations: list[Violation] = []
    for i, node in enumerate(topo.nodes):
        row = plan.counts[i]
        used_cpu = float(row @ cpu)
        used_gpu = float(row @ gpu)
        used_mem = float(row @ mem)
        if used_cpu > node.cpu_capacity:
            violations.append(Violation(node.id, "cpu", used_cpu, node.cpu_capacity))
        if used_gpu > node.gpu_capacity:
            violations.append(Violation(node.id, "gpu", used_gpu, node.gpu_capacity))
        if used_mem > node.mem_capacity:
            violations.append(Violation(node.id, "mem", used_mem, node.mem_capacity))
        if node.kind != ServerKind.HAC:
            for j, svc in enumerate(services):
                if svc.kind == ServiceKind.AI and row[j] > 0:
                    violations.append(Violation(node.id, "placement", float(row[j]), 0.0))
    return ConstraintReport(feasible=not violations, violations=violations)


def resource_usage(
    plan: DeploymentPlan, services: list[ServiceSpec]
) -> tuple[float, float, float]:
    """Total (cpu, gpu, mem) consumed across all servers."""
    if plan.counts.shape[1] != len(services):
        raise StructuralError("plan service dimension does not match catalog")
    per_service = plan.counts.sum(axis=0)
    cpu = float(sum(c * s.cpu_req for c, s in zip(per_service, services)))
    gpu = float(sum(c * s.gpu_req for c, s in zip(per_service, services)))
    mem = float(sum(c * s.mem_req for c, s in zip(per_service, services)))
    return cpu, gpu, mem


def availability_mask(
    plan: DeploymentPlan,
    topo: NetworkTopology,
    services: list[ServiceSpec],
    service: ServiceSpec,
) -> np.ndarray:
    """Per-server 0/1 vector: can this server still host one more `service`?

    A server qualifies when its remaining CPU, GPU, and memory all cover the
    service's demand triple; AI services additionally require a HAC server.
    """
    _check_dims(plan, topo, services)
    cpu = np.array([s.cpu_req for s in services])
    gpu = np.array([s.gpu_req for s in services], dtype=float)
    mem = np.array([s.mem_req for s in services])
    mask = np.zeros(len(topo.nodes), dtype=np.int64)
    for i, node in enumerate(topo.nodes):
        row = plan.counts[i]
        ok = (
            node.cpu_capacity - float(row @ cpu) >= service.cpu_req
            and node.gpu_capacity - float(row @ gpu) >= service.gpu_req
            and node.mem_capacity - float(row @ mem) >= service.mem_req
        )
        if service.kind == ServiceKind.AI and node.kind != ServerKind.HAC:
            ok = False
        mask[i] = 1 if ok else 0
    return mask
