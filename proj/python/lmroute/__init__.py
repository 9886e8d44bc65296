"""Lossy ad-hoc network routing via distributed measure propagation."""

from ._lmroute import (
    ContractError,
    NumericError,
    ValidationError,
    distribute,
    enumerate_policies,
    performance,
    random_topology,
    simulate_packets,
    solve,
    theta_for_epsilon,
)

__all__ = [
    "ContractError",
    "NumericError",
    "ValidationError",
    "distribute",
    "enumerate_policies",
    "performance",
    "random_topology",
    "simulate_packets",
    "solve",
    "theta_for_epsilon",
]
