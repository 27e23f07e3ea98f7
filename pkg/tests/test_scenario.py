import json

import numpy as np
import pytest

from edgeorch.env import budget_capacity_check, instance_budget
from edgeorch.errors import ConfigError, SetupError
from edgeorch.model import DeploymentPlan, ServiceKind, validate_plan
from edgeorch.scenario import (
    GenParams,
    build_scenario,
    config_to_json,
    desk_preset,
    generate_scenario,
    load_config,
    load_plan,
    paper_preset,
    save_config,
    save_plan,
)


def test_paper_preset_counts():
    cfg = generate_scenario(paper_preset(), seed=0)
    assert len(cfg["servers"]) == 10
    kinds = [s["kind"] for s in cfg["servers"]]
    assert kinds.count("UCS") == 7 and kinds.count("HAC") == 3
    assert len(cfg["services"]) == 15
    svc_kinds = [s["kind"] for s in cfg["services"]]
    assert svc_kinds.count("MICRO") == 12 and svc_kinds.count("AI") == 3
    assert len(cfg["requests"]) == 30
    scenario = build_scenario(cfg)
    ai_reqs = [r for r in range(30) if scenario.is_ai_request(r)]
    assert len(ai_reqs) == 10
    for r_idx, req in enumerate(scenario.requests):
        assert 4 <= len(req.chain) <= 7
        assert 2.0 <= req.arrival_rate <= 4.0
        assert len(set(req.chain)) == len(req.chain)


def test_paper_preset_capacity_ranges():
    cfg = generate_scenario(paper_preset(), seed=3)
    for s in cfg["servers"]:
        if s["kind"] == "UCS":
            assert s["cpu"] == 20 and s["mem"] == 250 and 2.0 <= s["access_gbps"] <= 3.0
        else:
            assert s["cpu"] == 30 and s["mem"] == 500 and 4.0 <= s["access_gbps"] <= 6.0
            assert s["gpu"] in (5, 6)
    for s in cfg["services"]:
        if s["kind"] == "MICRO":
            assert 7.0 <= s["proc_rate"] <= 10.0 and s["output_mb"] == 100.0
        else:
            assert 15.0 <= s["proc_rate"] <= 25.0 and s["output_mb"] == 300.0
            assert s["mem"] == 65.0 and s["gpu"] == 1


def test_same_seed_byte_identical():
    a = config_to_json(generate_scenario(desk_preset(), seed=5))
    b = config_to_json(generate_scenario(desk_preset(), seed=5))
    assert a == b
    c = config_to_json(generate_scenario(desk_preset(), seed=6))
    assert a != c


def test_desk_preset_fits_capacity():
    for seed in range(8):
        cfg = generate_scenario(desk_preset(), seed=seed)
        scenario = build_scenario(cfg)
        budget = instance_budget(scenario)
        budget_capacity_check(scenario, budget)  # does not raise
        assert scenario.n_servers == 4 and scenario.n_services == 4


def test_topology_connected():
    cfg = generate_scenario(desk_preset(), seed=1)
    scenario = build_scenario(cfg)
    adj = scenario.adj
    reach = np.linalg.matrix_power(adj.astype(int), scenario.n_servers) > 0
    assert reach.all()


def test_ai_chain_classification():
    cfg = generate_scenario(desk_preset(), seed=2)
    scenario = build_scenario(cfg)
    for r_idx, req in enumerate(scenario.requests):
        has_ai = any(
            scenario.services[scenario.service_index[s]].kind == ServiceKind.AI
            for s in req.chain
        )
        assert has_ai == scenario.is_ai_request(r_idx)
        assert has_ai == req.id.startswith("sc-ai")


def test_llm_config_derives_rate_and_memory():
    llm = {
        "hidden_dim": 4096, "n_heads": 32, "n_kv_groups": 8, "ffn_multiplier": 3.5,
        "n_layers": 32, "seq_in": 256, "seq_out": 256, "gpu_flops": 5e14,
    }
    cfg = generate_scenario(desk_preset(llm=llm), seed=0)
    ai_entries = [s for s in cfg["services"] if s["kind"] == "AI"]
    assert all("llm" in s and "proc_rate" not in s for s in ai_entries)
    scenario = build_scenario(cfg)
    ai_specs = [s for s in scenario.services if s.kind == ServiceKind.AI]
    for spec in ai_specs:
        assert spec.proc_rate > 0
        assert spec.mem_req > 10.0  # derived weights + cache footprint


def test_config_roundtrip_and_validation(tmp_path):
    cfg = generate_scenario(desk_preset(), seed=4)
    path = tmp_path / "cfg.json"
    save_config(cfg, path)
    again = load_config(path)
    assert again == cfg
    bad = dict(cfg)
    bad.pop("servers")
    bad_path = tmp_path / "bad.json"
    bad_path.write_text(json.dumps(bad))
    with pytest.raises(ConfigError):
        load_config(bad_path)
    bad_path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad_path)


def test_unknown_reference_rejected(tmp_path):
    cfg = generate_scenario(desk_preset(), seed=4)
    cfg["requests"][0]["chain"] = ["ghost"]
    with pytest.raises(ConfigError):
        build_scenario(cfg)


def test_capacity_rejection():
    params = desk_preset(arrival=(200.0, 220.0))  # demand far beyond 4 servers
    with pytest.raises(SetupError):
        generate_scenario(params, seed=0)


def test_plan_roundtrip(tmp_path):
    cfg = generate_scenario(desk_preset(), seed=7)
    scenario = build_scenario(cfg)
    plan = DeploymentPlan.empty(scenario.n_servers, scenario.n_services)
    plan = plan.with_instance(0, 0).with_instance(1, 1)
    path = tmp_path / "plan.json"
    save_plan(plan, scenario, path)
    loaded = load_plan(path, scenario)
    np.testing.assert_array_equal(loaded.counts, plan.counts)
    doc = json.loads(path.read_text())
    doc["services"] = doc["services"][::-1]
    path.write_text(json.dumps(doc))
    with pytest.raises(ConfigError):
        load_plan(path, scenario)


def test_budget_rules():
    cfg = generate_scenario(desk_preset(), seed=9)
    scenario = build_scenario(cfg)
    budget = instance_budget(scenario, rho_target=0.8)
    demand = np.zeros(scenario.n_services)
    for r_idx, req in enumerate(scenario.requests):
        for svc in scenario.chains_idx[r_idx]:
            demand[svc] += req.arrival_rate
    for j in range(scenario.n_services):
        if demand[j] == 0:
            continue
        alpha = 0.8 * scenario.services[j].proc_rate
        assert budget[j] == max(1, int(np.ceil(demand[j] / alpha)))
