"""Scenario generation and JSON config I/O.

`generate_scenario` draws a cluster, service catalog, and workload from a
parameter block, deterministically under a seed, and rejects any draw whose
instance budget cannot fit the cluster. Configs are plain JSON validated
against an embedded schema; AI services may either state their processing
rate directly or carry a transformer profile from which rate and memory
demand are derived at load time.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import jsonschema
import numpy as np

from .env import budget_capacity_check, instance_budget
from .errors import ConfigError, SetupError, StructuralError
from .llm_cost import GpuProfile, LlmProfile, ai_service_memory, ai_service_rate
from .model import (
    DeploymentPlan,
    NetworkTopology,
    RequestClass,
    Scenario,
    ServerKind,
    ServerNode,
    ServiceKind,
    ServiceSpec,
)

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["scenario_id", "seed", "servers", "links", "services", "requests"],
    "additionalProperties": False,
    "properties": {
        "scenario_id": {"type": "string"},
        "seed": {"type": "integer"},
        "servers": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "kind", "cpu", "gpu", "mem", "access_gbps"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "string"},
                    "kind": {"enum": ["UCS", "HAC"]},
                    "cpu": {"type": "number", "minimum": 0},
                    "gpu": {"type": "integer", "minimum": 0},
                    "mem": {"type": "number", "minimum": 0},
                    "access_gbps": {"type": "number", "exclusiveMinimum": 0},
                },
            },
        },
        "links": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["a", "b", "gbps"],
                "additionalProperties": False,
                "properties": {
                    "a": {"type": "string"},
                    "b": {"type": "string"},
                    "gbps": {"type": "number", "exclusiveMinimum": 0},
                },
            },
        },
        "services": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "kind", "cpu", "gpu", "output_mb"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "string"},
                    "kind": {"enum": ["MICRO", "AI"]},
                    "cpu": {"type": "number", "minimum": 0},
                    "gpu": {"type": "integer", "minimum": 0},
                    "mem": {"type": "number", "minimum": 0},
                    "output_mb": {"type": "number", "minimum": 0},
                    "proc_rate": {"type": "number", "exclusiveMinimum": 0},
                    "gpu_flops": {"type": "number", "exclusiveMinimum": 0},
                    "llm": {
                        "type": "object",
                        "required": [
                            "hidden_dim", "n_heads", "n_kv_groups",
                            "ffn_multiplier", "n_layers", "seq_in", "seq_out",
                        ],
                        "additionalProperties": False,
                        "properties": {
                            "hidden_dim": {"type": "integer", "minimum": 1},
                            "n_heads": {"type": "integer", "minimum": 1},
                            "n_kv_groups": {"type": "integer", "minimum": 1},
                            "ffn_multiplier": {"type": "number", "minimum": 0},
                            "n_layers": {"type": "integer", "minimum": 1},
                            "seq_in": {"type": "integer", "minimum": 1},
                            "seq_out": {"type": "integer", "minimum": 1},
                            "bytes_per_param": {"type": "number", "exclusiveMinimum": 0},
                        },
                    },
                },
            },
        },
        "requests": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "chain", "entry", "arrival_rate", "payload_mb", "result_mb"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "string"},
                    "chain": {"type": "array", "minItems": 1, "items": {"type": "string"}},
                    "entry": {"type": "string"},
                    "arrival_rate": {"type": "number", "exclusiveMinimum": 0},
                    "payload_mb": {"type": "number", "minimum": 0},
                    "result_mb": {"type": "number", "minimum": 0},
                },
            },
        },
    },
}

PLAN_SCHEMA = {
    "type": "object",
    "required": ["servers", "services", "counts"],
    "additionalProperties": False,
    "properties": {
        "servers": {"type": "array", "items": {"type": "string"}},
        "services": {"type": "array", "items": {"type": "string"}},
        "counts": {
            "type": "array",
            "items": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        },
    },
}


@dataclass
class GenParams:
    """Knobs of the scenario generator; see `paper_preset` and `desk_preset`."""

    name: str = "custom"
    n_ucs: int = 7
    n_hac: int = 3
    ucs_cpu: float = 20.0
    ucs_mem: float = 250.0
    ucs_bw: tuple[float, float] = (2.0, 3.0)
    hac_cpu: float = 30.0
    hac_mem: float = 500.0
    hac_gpu: tuple[int, int] = (5, 6)
    hac_bw: tuple[float, float] = (4.0, 6.0)
    extra_link_prob: float = 0.3
    n_micro: int = 12
    n_ai: int = 3
    micro_cpu: float = 1.0
    micro_mem: float = 13.0
    micro_out_mb: float = 100.0
    micro_rate: tuple[float, float] = (7.0, 10.0)
    ai_cpu: float = 3.0
    ai_gpu: int = 1
    ai_mem: float = 65.0
    ai_out_mb: float = 300.0
    ai_rate: tuple[float, float] = (15.0, 25.0)
    n_requests: int = 30
    n_ai_requests: int = 10
    chain_len: tuple[int, int] = (4, 7)
    arrival: tuple[float, float] = (2.0, 4.0)
    payload_mb: float = 10.0
    result_mb: float = 10.0
    rho_target: float = 0.8
    llm: dict | None = None  # when set, AI services derive rate/mem from this profile


def paper_preset(**overrides) -> GenParams:
    return GenParams(name="paper", **overrides)


def desk_preset(**overrides) -> GenParams:
    """Scaled-down instance for fast tests: 4 servers, 4 services, 6 requests."""
    defaults = dict(
        name="desk",
        n_ucs=3, n_hac=1,
        n_micro=3, n_ai=1,
        n_requests=6, n_ai_requests=2,
        chain_len=(2, 3),
        extra_link_prob=0.5,
    )
    defaults.update(overrides)
    return GenParams(**defaults)


def _round(x: float) -> float:
    return round(float(x), 4)


def generate_scenario(params: GenParams, seed: int) -> dict:
    """Draw one scenario config; deterministic per (params, seed).

    Raises SetupError when the drawn workload's instance budget cannot fit
    the cluster, and ConfigError if the result fails schema validation
    (which would indicate a generator bug).
    """
    if params.n_ai_requests > params.n_requests:
        raise ValueError("n_ai_requests cannot exceed n_requests")
    if params.chain_len[0] < 1 or params.chain_len[1] < params.chain_len[0]:
        raise ValueError("invalid chain_len range")
    if params.n_ai_requests > 0 and params.n_ai == 0:
        raise ValueError("AI requests need at least one AI service")
    if params.chain_len[1] > params.n_micro + 1:
        raise ValueError("chain_len exceeds available distinct services")

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n_servers = params.n_ucs + params.n_hac

    kinds = ["UCS"] * params.n_ucs + ["HAC"] * params.n_hac
    rng.shuffle(kinds)
    servers = []
    for i, kind in enumerate(kinds):
        if kind == "UCS":
            bw = _round(rng.uniform(*params.ucs_bw))
            servers.append(
                {"id": f"n{i}", "kind": "UCS", "cpu": params.ucs_cpu, "gpu": 0,
                 "mem": params.ucs_mem, "access_gbps": bw}
            )
        else:
            bw = _round(rng.uniform(*params.hac_bw))
            servers.append(
                {"id": f"n{i}", "kind": "HAC", "cpu": params.hac_cpu,
                 "gpu": int(rng.integers(params.hac_gpu[0], params.hac_gpu[1] + 1)),
                 "mem": params.hac_mem, "access_gbps": bw}
            )

    links = []
    seen = set()
    for i in range(1, n_servers):
        j = int(rng.integers(0, i))
        seen.add((j, i))
    for i in range(n_servers):
        for j in range(i + 1, n_servers):
            if (i, j) not in seen and rng.random() < params.extra_link_prob:
                seen.add((i, j))
    for i, j in sorted(seen):
        gbps = _round(min(servers[i]["access_gbps"], servers[j]["access_gbps"]))
        links.append({"a": f"n{i}", "b": f"n{j}", "gbps": gbps})

    services = []
    for k in range(params.n_micro):
        services.append(
            {"id": f"ms{k}", "kind": "MICRO", "cpu": params.micro_cpu, "gpu": 0,
             "mem": params.micro_mem, "output_mb": params.micro_out_mb,
             "proc_rate": _round(rng.uniform(*params.micro_rate))}
        )
    for k in range(params.n_ai):
        entry = {"id": f"ai{k}", "kind": "AI", "cpu": params.ai_cpu, "gpu": params.ai_gpu,
                 "output_mb": params.ai_out_mb}
        if params.llm is not None:
            entry["llm"] = dict(params.llm)
            entry["gpu_flops"] = float(params.llm.get("gpu_flops", 1e12))
            entry["llm"].pop("gpu_flops", None)
        else:
            entry["mem"] = params.ai_mem
            entry["proc_rate"] = _round(rng.uniform(*params.ai_rate))
        services.append(entry)

    micro_ids = [f"ms{k}" for k in range(params.n_micro)]
    ai_ids = [f"ai{k}" for k in range(params.n_ai)]
    requests = []
    for r in range(params.n_requests):
        length = int(rng.integers(params.chain_len[0], params.chain_len[1] + 1))
        is_ai = r < params.n_ai_requests
        if is_ai:
            ai_svc = ai_ids[int(rng.integers(len(ai_ids)))]
            micro = list(rng.choice(micro_ids, size=length - 1, replace=False))
            pos = int(rng.integers(0, length))
            chain = micro[:pos] + [ai_svc] + micro[pos:]
        else:
            chain = list(rng.choice(micro_ids, size=length, replace=False))
        prefix = "ai" if is_ai else "co"
        requests.append(
            {"id": f"sc-{prefix}{r}", "chain": chain,
             "entry": f"n{int(rng.integers(n_servers))}",
             "arrival_rate": _round(rng.uniform(*params.arrival)),
             "payload_mb": params.payload_mb, "result_mb": params.result_mb}
        )

    config = {
        "scenario_id": f"{params.name}-s{seed}",
        "seed": seed,
        "servers": servers,
        "links": links,
        "services": services,
        "requests": requests,
    }
    validate_config(config)
    scenario = build_scenario(config)
    budget_capacity_check(scenario, instance_budget(scenario, params.rho_target))
    return config


def validate_config(config: dict) -> None:
    try:
        jsonschema.validate(config, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config failed schema validation: {exc.message}") from exc
    for svc in config["services"]:
        if "llm" in svc:
            if "gpu_flops" not in svc:
                raise ConfigError(f"service {svc['id']!r}: llm profile requires gpu_flops")
        elif "proc_rate" not in svc or "mem" not in svc:
            raise ConfigError(f"service {svc['id']!r}: needs proc_rate and mem (or an llm block)")


def build_scenario(config: dict) -> Scenario:
    """Resolve a validated config dict into a Scenario."""
    validate_config(config)
    try:
        nodes = [
            ServerNode(
                id=s["id"], kind=ServerKind[s["kind"]], cpu_capacity=s["cpu"],
                gpu_capacity=s["gpu"], mem_capacity=s["mem"],
            )
            for s in config["servers"]
        ]
        links = {(l["a"], l["b"]): l["gbps"] for l in config["links"]}
        access = {s["id"]: s["access_gbps"] for s in config["servers"]}
        topo = NetworkTopology(nodes=nodes, links=links, access_default=access)
        services = []
        for s in config["services"]:
            if "llm" in s:
                llm_cfg = dict(s["llm"])
                bytes_per_param = llm_cfg.pop("bytes_per_param", 2.0)
                profile = LlmProfile(**llm_cfg)
                rate = ai_service_rate(profile, GpuProfile(s["gpu_flops"]))
                mem = s.get("mem", ai_service_memory(profile, bytes_per_param))
            else:
                rate = s["proc_rate"]
                mem = s["mem"]
            services.append(
                ServiceSpec(
                    id=s["id"], kind=ServiceKind[s["kind"]], cpu_req=s["cpu"],
                    gpu_req=s["gpu"], mem_req=mem, output_size_mb=s["output_mb"],
                    proc_rate=rate,
                )
            )
        requests = [
            RequestClass(
                id=r["id"], chain=tuple(r["chain"]), entry_server=r["entry"],
                arrival_rate=r["arrival_rate"], payload_mb=r["payload_mb"],
                result_mb=r["result_mb"],
            )
            for r in config["requests"]
        ]
        return Scenario(
            scenario_id=config["scenario_id"], topology=topo,
            services=services, requests=requests,
        )
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"config is inconsistent: {exc}") from exc


def config_to_json(config: dict) -> str:
    return json.dumps(config, sort_keys=True, indent=2) + "\n"


def save_config(config: dict, path: str | Path) -> None:
    Path(path).write_text(config_to_json(config))


def load_config(path: str | Path) -> dict:
    try:
        config = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    validate_config(config)
    return config


def load_scenario(path: str | Path) -> Scenario:
    return build_scenario(load_config(path))


def save_plan(plan: DeploymentPlan, scenario: Scenario, path: str | Path) -> None:
    doc = {
        "servers": scenario.topology.server_ids,
        "services": [s.id for s in scenario.services],
        "counts": plan.counts.tolist(),
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def load_plan(path: str | Path, scenario: Scenario) -> DeploymentPlan:
    try:
        doc = json.loads(Path(path).read_text())
        jsonschema.validate(doc, PLAN_SCHEMA)
    except FileNotFoundError as exc:
        raise ConfigError(f"plan file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"plan is not valid JSON: {exc}") from exc
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"plan failed schema validation: {exc.message}") from exc
    if doc["servers"] != scenario.topology.server_ids:
        raise ConfigError("plan server list does not match scenario")
    if doc["services"] != [s.id for s in scenario.services]:
        raise ConfigError("plan service list does not match scenario")
    counts = np.array(doc["counts"], dtype=np.int64)
    if counts.shape != (scenario.n_servers, scenario.n_services):
        raise ConfigError("plan counts matrix has wrong shape")
    return DeploymentPlan(counts)
