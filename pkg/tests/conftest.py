import numpy as np
import pytest

from edgeorch.model import (
    NetworkTopology,
    RequestClass,
    Scenario,
    ServerKind,
    ServerNode,
    ServiceKind,
    ServiceSpec,
)


def make_server(sid, kind=ServerKind.UCS, cpu=20.0, gpu=0, mem=250.0):
    return ServerNode(id=sid, kind=kind, cpu_capacity=cpu, gpu_capacity=gpu, mem_capacity=mem)


def make_micro(sid, mu=8.0, out_mb=100.0, cpu=1.0, mem=13.0):
    return ServiceSpec(
        id=sid, kind=ServiceKind.MICRO, cpu_req=cpu, gpu_req=0, mem_req=mem,
        output_size_mb=out_mb, proc_rate=mu,
    )


def make_ai(sid, mu=20.0, out_mb=300.0, cpu=3.0, gpu=1, mem=65.0):
    return ServiceSpec(
        id=sid, kind=ServiceKind.AI, cpu_req=cpu, gpu_req=gpu, mem_req=mem,
        output_size_mb=out_mb, proc_rate=mu,
    )


def line_topology(n, bw=2.0, access=2.0, kinds=None):
    """Servers n0..n{n-1} linked in a path."""
    kinds = kinds or [ServerKind.UCS] * n
    nodes = [
        make_server(
            f"n{i}",
            kinds[i],
            gpu=5 if kinds[i] == ServerKind.HAC else 0,
            cpu=30.0 if kinds[i] == ServerKind.HAC else 20.0,
            mem=500.0 if kinds[i] == ServerKind.HAC else 250.0,
        )
        for i in range(n)
    ]
    links = {(f"n{i}", f"n{i + 1}"): bw for i in range(n - 1)}
    return NetworkTopology(
        nodes=nodes, links=links, access_default={f"n{i}": access for i in range(n)}
    )


def full_mesh(n, bw=2.0, access=2.0, kinds=None):
    kinds = kinds or [ServerKind.UCS] * n
    nodes = [
        make_server(
            f"n{i}",
            kinds[i],
            gpu=5 if kinds[i] == ServerKind.HAC else 0,
            cpu=30.0 if kinds[i] == ServerKind.HAC else 20.0,
            mem=500.0 if kinds[i] == ServerKind.HAC else 250.0,
        )
        for i in range(n)
    ]
    links = {(f"n{i}", f"n{j}"): bw for i in range(n) for j in range(i + 1, n)}
    return NetworkTopology(
        nodes=nodes, links=links, access_default={f"n{i}": access for i in range(n)}
    )


def make_request(rid, chain, entry="n0", rate=1.0, payload=10.0, result=10.0):
    return RequestClass(
        id=rid, chain=tuple(chain), entry_server=entry, arrival_rate=rate,
        payload_mb=payload, result_mb=result,
    )


def simple_scenario(**kw):
    """One server, one service, one request; the smallest closed loop."""
    topo = line_topology(1, access=kw.pop("access", 0.16))
    services = [make_micro("s0", mu=kw.pop("mu", 2.0), out_mb=kw.pop("out_mb", 100.0))]
    requests = [make_request("sc0", ["s0"], rate=kw.pop("rate", 1.0))]
    return Scenario(scenario_id="simple", topology=topo, services=services, requests=requests)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
