// engine.hpp -- per-node state machines running the distributed
// measure-propagation protocol over a simulated message layer.
//
// Each update of a node: (a1) read every neighbor's reported measure and the
// local link drop estimate, (a2) disable the fan-out toward any neighbor
// whose virtual-node measure (1-theta)(1-lambda)*reported falls strictly
// below the node's own measure, re-enable the rest, (a3) recompute the
// virtual-node measures, (a4) recompute the own measure as
//   sum_enabled (1-theta)*(1/m)*nu_virtual + (1-theta)*Pi_ii*nu_self + theta*chi
// with Pi_ii = (#disabled)/m recomputed from scratch each step. Forwarding
// bits are a separate, strictly-greater comparison on reported neighbor
// measures; packets only ever flow uphill in measure.
//
// The engine is logically concurrent but deterministically simulated: a node
// update reads immutable snapshots of neighbor reports and writes only its
// own state.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lmroute/network.hpp"
#include "lmroute/optimizer.hpp"
#include "lmroute/rng.hpp"

namespace lmroute {

struct NeighborEntry {
    NodeId id = 0;
    double last_seen_measure = 0.0;  // neighbor's reported (zeta-scaled) value
    double drop_prob = 0.0;          // local estimate for the link to `id`
    bool forwarding = false;         // strict rule: last_seen > self
    bool enabled = false;            // propagation rule: virtual >= self
};

struct NodeState {
    NodeId self_id = 0;
    double self_measure = 0.0;
    double chi = 0.0;   // 1 at the sink, 0 elsewhere
    double zeta = 1.0;  // reported-measure attenuation
    std::vector<NeighborEntry> neighbors;
};

struct NeighborReport {
    NodeId id = 0;
    double reported_measure = 0.0;
    double drop_prob = 0.0;
};

// zeta * self_measure; neighbors only ever see this value.
double reported_measure(const NodeState& state);

struct NodeStepResult {
    NodeState state;
    std::size_t forwarding_changes = 0;
};

// One protocol update. Reports must cover exactly the neighbor table, in
// table order.
NodeStepResult node_step(const NodeState& state,
                         std::span<const NeighborReport> reports, double theta);

enum class ScheduleMode { synchronous, permutation, poisson };

struct Schedule {
    ScheduleMode mode = ScheduleMode::synchronous;
    std::uint64_t seed = 0;
};

ScheduleMode schedule_mode_from_string(const std::string& name);

struct ConvergenceCriterion {
    double tol = 1e-12;
    std::size_t quiet_rounds = 3;
};

struct RoundStats {
    double max_delta = 0.0;
    NodeId max_delta_node = 0;
    std::size_t forwarding_changes = 0;
};

class Engine {
public:
    Engine(const NetworkTopology& topo, double theta, Schedule schedule);

    void set_initial_measures(const std::vector<double>& per_node);

    // One full round: every node updates at least once (synchronous and
    // permutation modes exactly once; poisson mode fires N random clocks and
    // force-updates any node older than 3N firings).
    RoundStats step_round();

    std::size_t rounds() const { return round_; }
    double theta() const { return theta_; }
    NodeId sink() const { return sink_; }
    const std::vector<NodeState>& states() const { return states_; }
    std::vector<double> measures() const;
    const std::vector<std::size_t>& last_round_changes() const {
        return last_round_changes_;
    }

    Policy forwarding_policy() const;   // strict forwarding bits
    Policy propagation_policy() const;  // enabled-for-propagation sets

    void set_drop_estimate(NodeId from, NodeId to, double value);
    void set_zeta(NodeId node, double zeta);
    void move_sink(NodeId new_sink);

private:
    void update_node(NodeId i, const std::vector<double>& reported,
                     RoundStats& stats);

    double theta_;
    Schedule schedule_;
    NodeId sink_;
    std::vector<NodeState> states_;
    std::vector<double> reported_;  // live zeta-scaled measures, kept in sync
    std::vector<std::size_t> last_round_changes_;
    Rng rng_;
    std::uint64_t firing_count_ = 0;
    std::vector<std::uint64_t> last_fired_;
    std::size_t round_ = 0;
};

struct RunOptions {
    std::size_t round_cap = 10'000'000;
    bool record_trace = true;
    std::optional<std::vector<double>> init;  // per-node, values in [0,1]
};

struct ConvergenceTrace {
    std::size_t rounds_used = 0;   // rounds until the last change, quiet tail excluded
    std::size_t rounds_total = 0;  // rounds actually executed
    bool converged = false;
    // recorded per round when requested: physical-node measures and per-node
    // forwarding-bit changes
    std::vector<std::vector<double>> measures;
    std::vector<std::vector<std::size_t>> changes;
    std::vector<std::size_t> corrections;  // per-round totals, always recorded
    std::vector<double> final_measures;
    Policy forwarding;   // strict rule
    Policy propagation;  // non-strict rule; induces the final controlled chain
};

ConvergenceTrace run_to_convergence(const NetworkTopology& topo, double theta,
                                    const Schedule& schedule,
                                    const ConvergenceCriterion& criterion,
                                    const RunOptions& options = {});

// Forwarding sets from a consistent collection of node states (strictly
// greater reported measure than self).
Policy extract_policy(std::span<const NodeState> states);

struct ProfileRow {
    std::size_t nodes = 0;
    double epsilon = 0.0;
    double mean_rounds = 0.0;
    std::size_t min_rounds = 0;
    std::size_t max_rounds = 0;
};

struct ProfileConfig {
    std::size_t max_degree = 5;
    double drop_lo = 0.05;
    double drop_hi = 0.6;
    double connectivity = 0.3;
    ConvergenceCriterion criterion{};
    Schedule schedule{};
};

// For each (n, epsilon) grid point, generates `trials` random topologies,
// runs the engine with theta = epsilon/m^2 and records the rounds used.
std::vector<ProfileRow> convergence_rounds_profile(
    const std::vector<std::size_t>& n_values, const std::vector<double>& epsilon_values,
    std::size_t trials, std::uint64_t seed, const ProfileConfig& config = {});

// CSV with header "round,node_id,measure,num_forwarding_changes"; requires a
// trace recorded with record_trace = true.
std::string trace_to_csv(const ConvergenceTrace& trace);

// CSV with header "n,epsilon,mean_rounds,min_rounds,max_rounds"
std::string profile_to_csv(const std::vector<ProfileRow>& rows);

}  // namespace lmroute
