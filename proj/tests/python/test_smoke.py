"""Smoke tests for the python bindings."""

import math

import pytest

import lmroute


def chain(n, drop=0.0):
    return {
        "n": n,
        "sink": n - 1,
        "links": [{"from": i, "to": i + 1, "drop": drop} for i in range(n - 1)],
    }


def test_random_topology_is_deterministic():
    a = lmroute.random_topology(20, seed=7)
    b = lmroute.random_topology(20, seed=7)
    assert a == b
    assert a["n"] == 20


def test_theta_for_epsilon_formula():
    topo = {
        "n": 3,
        "sink": 2,
        "links": [
            {"from": 0, "to": 1, "drop": 0.1},
            {"from": 0, "to": 2, "drop": 0.1},
            {"from": 1, "to": 2, "drop": 0.1},
        ],
    }
    theta, clamped = lmroute.theta_for_epsilon(0.04, topo)
    assert math.isclose(theta, 0.01)
    assert not clamped


def test_solve_lossless_chain():
    out = lmroute.solve(chain(4), theta=0.05)
    assert out["states"] == 4 + 3 + 1
    assert all(0.0 <= m <= 1.0 for m in out["measures"])
    assert all(math.isclose(r, 1.0, abs_tol=1e-12) for r in out["rho"])


def test_distributed_matches_centralized():
    topo = lmroute.random_topology(15, max_degree=4, seed=3)
    central = lmroute.solve(topo, theta=0.05)
    dist = lmroute.distribute(topo, theta=0.05)
    assert dist["converged"]
    for a, b in zip(central["measures"], dist["measures"]):
        assert abs(a - b) < 1e-9


def test_simulation_tracks_performance():
    topo = lmroute.random_topology(10, max_degree=3, seed=5)
    dist = lmroute.distribute(topo, theta=0.05)
    rho = lmroute.performance(topo, dist["forwarding"])
    source = max(
        (i for i in range(topo["n"]) if i != topo["sink"]), key=lambda i: rho[i]
    )
    sim = lmroute.simulate_packets(topo, dist["forwarding"], [source], 40000, seed=1)
    expected = rho[source]
    sigma = math.sqrt(max(expected * (1 - expected), 1e-12) / 40000)
    assert abs(sim["delivery_rate"][0] - expected) <= 3 * sigma + 1e-9


def test_validation_error_surfaces():
    bad = {"n": 2, "sink": 0, "links": [{"from": 0, "to": 1, "drop": 1.5}]}
    with pytest.raises(lmroute.ValidationError):
        lmroute.solve(bad, theta=0.1)


def test_enumeration_envelope_dominates():
    topo = lmroute.random_topology(5, max_degree=2, seed=3)
    theta, _ = lmroute.theta_for_epsilon(0.05, topo)
    out = lmroute.solve(topo, theta=theta)
    rho = lmroute.performance(topo, out["enabled"])
    sweep = lmroute.enumerate_policies(topo)
    for env, mine in zip(sweep["envelope"], rho):
        assert env >= mine - 1e-12
        assert env - mine <= 0.05
