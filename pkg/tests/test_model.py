import numpy as np
import pytest
from hypothesis import given, strategies as st

from edgeorch.errors import StructuralError
from edgeorch.model import (
    DeploymentPlan,
    ServerKind,
    availability_mask,
    resource_usage,
    validate_plan,
)

from conftest import full_mesh, line_topology, make_ai, make_micro, make_server


def test_server_invariants():
    with pytest.raises(ValueError):
        make_server("bad", ServerKind.UCS, gpu=1)
    with pytest.raises(ValueError):
        make_server("bad", ServerKind.HAC, gpu=0)


def test_service_invariants():
    with pytest.raises(ValueError):
        make_micro("bad").__class__(
            id="bad", kind=make_micro("x").kind, cpu_req=1, gpu_req=1, mem_req=1,
            output_size_mb=1, proc_rate=1,
        )
    with pytest.raises(ValueError):
        make_micro("bad", mu=0.0)


def test_empty_plan_feasible():
    topo = line_topology(2)
    services = [make_micro("s0")]
    plan = DeploymentPlan.empty(2, 1)
    report = validate_plan(plan, topo, services)
    assert report.feasible and not report.violations


def test_cpu_boundary_violation():
    topo = line_topology(1)  # 20 cores
    services = [make_micro("s0", cpu=1.0, mem=1.0)]
    ok = DeploymentPlan(np.array([[20]]))
    assert validate_plan(ok, topo, services).feasible
    over = DeploymentPlan(np.array([[21]]))
    report = validate_plan(over, topo, services)
    assert not report.feasible
    assert [v.resource for v in report.violations] == ["cpu"]
    assert report.violations[0].server_id == "n0"


def test_ai_on_ucs_rejected():
    topo = line_topology(1)
    services = [make_ai("a0")]
    plan = DeploymentPlan(np.array([[1]]))
    report = validate_plan(plan, topo, services)
    assert not report.feasible
    assert {"gpu", "placement"} == {v.resource for v in report.violations}


def test_dimension_mismatch():
    topo = line_topology(2)
    with pytest.raises(StructuralError):
        validate_plan(DeploymentPlan.empty(3, 1), topo, [make_micro("s0")])


def test_resource_usage_examples():
    services = [make_micro("s0", cpu=1.0, mem=13.0), make_ai("a0", cpu=3.0, mem=65.0)]
    assert resource_usage(DeploymentPlan.empty(2, 2), services) == (0.0, 0.0, 0.0)
    plan = DeploymentPlan(np.array([[2, 0], [0, 0]]))
    assert resource_usage(plan, services) == (2.0, 0.0, 26.0)
    plan = DeploymentPlan(np.array([[1, 0], [0, 1]]))
    assert resource_usage(plan, services) == (4.0, 1.0, 78.0)


def test_availability_mask_examples():
    topo = line_topology(2, kinds=[ServerKind.UCS, ServerKind.HAC])
    services = [make_micro("s0"), make_ai("a0")]
    plan = DeploymentPlan.empty(2, 2)
    np.testing.assert_array_equal(
        availability_mask(plan, topo, services, services[1]), [0, 1]
    )
    tight = make_micro("big", mem=13.0)
    small_node = make_server("n0", ServerKind.UCS, cpu=20.0, mem=0.5)
    topo2 = line_topology(1)
    topo2.nodes[0] = small_node
    assert availability_mask(DeploymentPlan.empty(1, 1), topo2, [tight], tight)[0] == 0


@given(st.integers(0, 5), st.integers(0, 5), st.integers(0, 3))
def test_monotone_feasibility(a, b, c):
    """Removing an instance from a feasible plan keeps it feasible."""
    topo = full_mesh(2, kinds=[ServerKind.UCS, ServerKind.HAC])
    services = [make_micro("s0"), make_micro("s1", cpu=2.0), make_ai("a0")]
    counts = np.array([[a, b, 0], [b, a, c]])
    plan = DeploymentPlan(counts)
    if not validate_plan(plan, topo, services).feasible:
        return
    for i, j in zip(*np.nonzero(counts)):
        fewer = counts.copy()
        fewer[i, j] -= 1
        assert validate_plan(DeploymentPlan(fewer), topo, services).feasible


@given(st.integers(0, 20), st.integers(0, 20))
def test_mask_agrees_with_incremented_plan(a, b):
    topo = line_topology(2)
    services = [make_micro("s0")]
    plan = DeploymentPlan(np.array([[a], [b]]))
    if not validate_plan(plan, topo, services).feasible:
        return
    mask = availability_mask(plan, topo, services, services[0])
    for i in range(2):
        grown = plan.with_instance(i, 0)
        assert bool(mask[i]) == validate_plan(grown, topo, services).feasible


@given(st.integers(0, 4), st.integers(0, 4), st.integers(1, 3))
def test_resource_usage_linear(a, b, k):
    services = [make_micro("s0"), make_micro("s1", cpu=2.0, mem=7.0)]
    base = np.array([[a, b]])
    u1 = resource_usage(DeploymentPlan(base), services)
    uk = resource_usage(DeploymentPlan(base * k), services)
    assert uk == tuple(k * x for x in u1)
