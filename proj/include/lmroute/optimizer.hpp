// optimizer.hpp -- centralized oracles: the measure-maximizing supervision
// fixpoint, exact policy performance, and exhaustive policy enumeration.
//
// A policy is the per-node set of enabled neighbors; its performance vector
// rho gives, per node, the probability that a packet injected there
// eventually reaches the sink. The fixpoint repeatedly disables every
// controllable fan-out whose virtual-node measure falls strictly below the
// source measure and re-enables the rest, until the disabling set is stable.

#pragma once

#include <string>
#include <vector>

#include "lmroute/network.hpp"

namespace lmroute {

struct Policy {
    std::vector<std::vector<NodeId>> enabled;  // sorted neighbor ids per node

    static Policy all_enabled(const NetworkTopology& topo);
    bool allows(NodeId from, NodeId to) const;
    std::size_t enabled_count() const;

    bool operator==(const Policy&) const = default;
};

// Enabled sets must be subsets of the topology's neighbor lists.
void validate_policy(const Policy& policy, const NetworkTopology& topo);

DisablingSet policy_to_disabling(const Policy& policy, const NetworkPfsa& net);
Policy disabling_to_policy(const DisablingSet& d, const NetworkPfsa& net);

struct PerformanceVector {
    std::vector<double> rho;  // one entry per physical node
};

struct OptimizeResult {
    Policy policy;           // enabled-for-propagation sets at the fixpoint
    DisablingSet disabling;
    MeasureVector measure;   // over all automaton states
    std::size_t iterations = 0;
    std::vector<Eigen::VectorXd> measure_history;  // one vector per iteration
};

// Iterates {solve the measure on the current controlled chain; disable each
// controllable transition whose virtual-node measure is strictly below its
// source's, enable otherwise} until the disabling set repeats. The measure
// vector is elementwise non-decreasing across iterations. Guarded at
// 10*|controllable| iterations.
OptimizeResult optimize_centralized(const NetworkPfsa& net, double theta);

// Applies the policy, makes the sink row absorbing, and solves first-step
// absorption. Nodes that cannot reach the sink in the controlled chain
// (including stranded all-disabled islands) score rho = 0.
PerformanceVector performance_vector(const NetworkPfsa& net, const Policy& policy);

struct EnumerationResult {
    PerformanceVector envelope;        // elementwise max over all policies
    std::vector<Policy> argmax;        // per node, one policy attaining its max
    std::size_t policies_evaluated = 0;
};

// Exhaustive sweep over all 2^|controllable| disabling subsets. Refused above
// 24 controllable transitions.
EnumerationResult enumerate_policies(const NetworkPfsa& net);

inline constexpr std::size_t kEnumerationCap = 24;

struct ThetaChoice {
    double theta = 0.0;
    bool clamped = false;  // degenerate zero-degree topology
};

// theta = epsilon / m^2 with m the maximum node degree; clamped to 0.5 when
// the topology has no links at all.
ThetaChoice theta_for_epsilon(double epsilon, const NetworkTopology& topo);

nlohmann::json policy_to_json(const Policy& policy);
Policy policy_from_json(const nlohmann::json& j);

// CSV with header "node_id,rho"
std::string performance_to_csv(const PerformanceVector& perf);

}  // namespace lmroute
