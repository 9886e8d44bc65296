#include "lmroute/engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace lmroute {

namespace {

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

double reported_measure(const NodeState& state) {
    if (state.zeta < 0.0 || state.zeta > 1.0) {
        throw ContractError("reported_measure: zeta outside [0,1]");
    }
    return state.zeta * state.self_measure;
}

NodeStepResult node_step(const NodeState& state,
                         std::span<const NeighborReport> reports, double theta) {
    if (!(theta > 0.0 && theta < 1.0)) {
        throw ContractError("node_step: theta must lie in (0,1)");
    }
    if (reports.size() != state.neighbors.size()) {
        throw ProtocolError("node_step: report count does not match neighbor table");
    }
    NodeStepResult result{state, 0};
    NodeState& next = result.state;
    const std::size_t m = state.neighbors.size();

    std::vector<double> virtual_measure(m, 0.0);
    std::size_t disabled = 0;
    for (std::size_t k = 0; k < m; ++k) {
        const auto& report = reports[k];
        auto& entry = next.neighbors[k];
        if (report.id != entry.id) {
            throw ProtocolError("node_step: report for node " +
                                std::to_string(report.id) +
                                " does not match table entry " +
                                std::to_string(entry.id));
        }
        entry.last_seen_measure = report.reported_measure;
        entry.drop_prob = report.drop_prob;
        virtual_measure[k] =
            (1.0 - theta) * (1.0 - entry.drop_prob) * entry.last_seen_measure;
        entry.enabled = virtual_measure[k] >= state.self_measure;
        if (!entry.enabled) ++disabled;
    }

    if (m == 0) {
        // neighbor-less node: its row is a bare self-loop whose measure
        // fixpoint is chi itself, so jump straight there
        next.self_measure = state.chi;
    } else {
        const double inv_m = 1.0 / static_cast<double>(m);
        const double selfloop = static_cast<double>(disabled) * inv_m;
        double acc = 0.0;
        for (std::size_t k = 0; k < m; ++k) {
            if (next.neighbors[k].enabled) acc += virtual_measure[k];
        }
        next.self_measure = (1.0 - theta) * (inv_m * acc + selfloop * state.self_measure) +
                            theta * state.chi;
    }

    for (std::size_t k = 0; k < m; ++k) {
        auto& entry = next.neighbors[k];
        const bool forwarding = entry.last_seen_measure > next.self_measure;
        if (forwarding != entry.forwarding) ++result.forwarding_changes;
        entry.forwarding = forwarding;
    }
    return result;
}

ScheduleMode schedule_mode_from_string(const std::string& name) {
    if (name == "sync") return ScheduleMode::synchronous;
    if (name == "perm") return ScheduleMode::permutation;
    if (name == "poisson") return ScheduleMode::poisson;
    throw ValidationError("unknown schedule mode '" + name + "'");
}

Engine::Engine(const NetworkTopology& topo, double theta, Schedule schedule)
    : theta_(theta), schedule_(schedule), sink_(topo.sink), rng_(schedule.seed) {
    if (!(theta > 0.0 && theta < 1.0)) {
        throw ContractError("engine: theta must lie in (0,1)");
    }
    validate(topo);
    const std::size_t n = topo.node_count();
    states_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto& state = states_[i];
        state.self_id = static_cast<NodeId>(i);
        state.chi = (i == sink_) ? 1.0 : 0.0;
        for (const auto& link : topo.nodes[i]) {
            state.neighbors.push_back({link.to, 0.0, link.drop, false, true});
        }
    }
    last_round_changes_.assign(n, 0);
    last_fired_.assign(n, 0);
    reported_.assign(n, 0.0);
}

void Engine::set_initial_measures(const std::vector<double>& per_node) {
    if (per_node.size() != states_.size()) {
        throw ContractError("engine: initial measure vector size mismatch");
    }
    for (double v : per_node) {
        if (v < 0.0 || v > 1.0) {
            throw ContractError("engine: initial measures must lie in [0,1]");
        }
    }
    for (std::size_t i = 0; i < states_.size(); ++i) {
        states_[i].self_measure = per_node[i];
        reported_[i] = reported_measure(states_[i]);
    }
}

std::vector<double> Engine::measures() const {
    std::vector<double> out(states_.size());
    for (std::size_t i = 0; i < states_.size(); ++i) {
        out[i] = states_[i].self_measure;
    }
    return out;
}

void Engine::update_node(NodeId i, const std::vector<double>& reported,
                         RoundStats& stats) {
    auto& state = states_[i];
    std::vector<NeighborReport> reports;
    reports.reserve(state.neighbors.size());
    for (const auto& entry : state.neighbors) {
        reports.push_back({entry.id, reported[entry.id], entry.drop_prob});
    }
    const double before = state.self_measure;
    auto result = node_step(state, reports, theta_);
    const double delta = std::abs(result.state.self_measure - before);
    if (delta > stats.max_delta) {
        stats.max_delta = delta;
        stats.max_delta_node = i;
    }
    stats.forwarding_changes += result.forwarding_changes;
    last_round_changes_[i] += result.forwarding_changes;
    states_[i] = std::move(result.state);
    reported_[i] = reported_measure(states_[i]);
}

RoundStats Engine::step_round() {
    const std::size_t n = states_.size();
    RoundStats stats;
    std::fill(last_round_changes_.begin(), last_round_changes_.end(), 0);

    switch (schedule_.mode) {
        case ScheduleMode::synchronous: {
            // all reads go through the previous round's snapshot
            const std::vector<double> snapshot = reported_;
            for (std::size_t i = 0; i < n; ++i) {
                update_node(static_cast<NodeId>(i), snapshot, stats);
            }
            break;
        }
        case ScheduleMode::permutation: {
            std::vector<NodeId> order(n);
            std::iota(order.begin(), order.end(), 0);
            rng_.shuffle(order);
            for (NodeId i : order) {
                update_node(i, reported_, stats);
            }
            break;
        }
        case ScheduleMode::poisson: {
            for (std::size_t k = 0; k < n; ++k) {
                const auto i = static_cast<NodeId>(rng_.next_below(n));
                update_node(i, reported_, stats);
                last_fired_[i] = ++firing_count_;
            }
            // fairness fallback: no node may lag more than 3N firings behind
            for (std::size_t i = 0; i < n; ++i) {
                if (firing_count_ - last_fired_[i] >= 3 * n) {
                    update_node(static_cast<NodeId>(i), reported_, stats);
                    last_fired_[i] = ++firing_count_;
                }
            }
            break;
        }
    }
    ++round_;
    return stats;
}

Policy Engine::forwarding_policy() const {
    return extract_policy(states_);
}

Policy Engine::propagation_policy() const {
    Policy policy;
    policy.enabled.resize(states_.size());
    for (std::size_t i = 0; i < states_.size(); ++i) {
        for (const auto& entry : states_[i].neighbors) {
            if (entry.enabled) policy.enabled[i].push_back(entry.id);
        }
        std::sort(policy.enabled[i].begin(), policy.enabled[i].end());
    }
    return policy;
}

void Engine::set_drop_estimate(NodeId from, NodeId to, double value) {
    if (value < 0.0 || value > 1.0) {
        throw ContractError("engine: drop estimate outside [0,1]");
    }
    for (auto& entry : states_[from].neighbors) {
        if (entry.id == to) {
            entry.drop_prob = value;
            return;
        }
    }
    throw ContractError("engine: no link " + std::to_string(from) + " -> " +
                        std::to_string(to));
}

void Engine::set_zeta(NodeId node, double zeta) {
    if (zeta < 0.0 || zeta > 1.0) {
        throw ContractError("engine: zeta outside [0,1]");
    }
    states_[node].zeta = zeta;
    reported_[node] = reported_measure(states_[node]);
}

void Engine::move_sink(NodeId new_sink) {
    if (new_sink >= states_.size()) {
        throw ContractError("engine: unknown sink " + std::to_string(new_sink));
    }
    states_[sink_].chi = 0.0;
    states_[new_sink].chi = 1.0;
    sink_ = new_sink;
}

ConvergenceTrace run_to_convergence(const NetworkTopology& topo, double theta,
                                    const Schedule& schedule,
                                    const ConvergenceCriterion& criterion,
                                    const RunOptions& options) {
    if (criterion.tol <= 0.0 || criterion.quiet_rounds == 0) {
        throw ContractError("run_to_convergence: invalid convergence criterion");
    }
    Engine engine(topo, theta, schedule);
    if (options.init) engine.set_initial_measures(*options.init);

    ConvergenceTrace trace;
    std::size_t quiet = 0;
    while (true) {
        const auto stats = engine.step_round();
        trace.corrections.push_back(stats.forwarding_changes);
        if (options.record_trace) {
            trace.measures.push_back(engine.measures());
            trace.changes.push_back(engine.last_round_changes());
        }
        quiet = (stats.max_delta < criterion.tol) ? quiet + 1 : 0;
        if (quiet >= criterion.quiet_rounds) {
            trace.converged = true;
            break;
        }
        if (engine.rounds() >= options.round_cap) {
            throw NumericError(
                "run_to_convergence: round cap " + std::to_string(options.round_cap) +
                " exceeded; worst oscillating node " +
                std::to_string(stats.max_delta_node) + " (last delta " +
                fmt_double(stats.max_delta) + ")");
        }
    }
    // the trailing quiet window is detection overhead, not convergence time
    trace.rounds_total = engine.rounds();
    trace.rounds_used = engine.rounds() - criterion.quiet_rounds;
    trace.final_measures = engine.measures();
    trace.forwarding = engine.forwarding_policy();
    trace.propagation = engine.propagation_policy();
    return trace;
}

Policy extract_policy(std::span<const NodeState> states) {
    Policy policy;
    policy.enabled.resize(states.size());
    for (std::size_t i = 0; i < states.size(); ++i) {
        if (states[i].self_id != i) {
            throw ProtocolError("extract_policy: node states out of order");
        }
        for (const auto& entry : states[i].neighbors) {
            if (entry.id >= states.size()) {
                throw ProtocolError("extract_policy: neighbor id out of range");
            }
            if (entry.last_seen_measure > states[i].self_measure) {
                policy.enabled[i].push_back(entry.id);
            }
        }
        std::sort(policy.enabled[i].begin(), policy.enabled[i].end());
    }
    return policy;
}

std::vector<ProfileRow> convergence_rounds_profile(
    const std::vector<std::size_t>& n_values, const std::vector<double>& epsilon_values,
    std::size_t trials, std::uint64_t seed, const ProfileConfig& config) {
    if (n_values.empty() || epsilon_values.empty() || trials == 0) {
        throw ValidationError("convergence_rounds_profile: empty grid");
    }
    std::vector<ProfileRow> rows;
    for (std::size_t n : n_values) {
        for (double epsilon : epsilon_values) {
            ProfileRow row{n, epsilon, 0.0, 0, 0};
            std::size_t total = 0;
            for (std::size_t t = 0; t < trials; ++t) {
                // topology seeds ignore epsilon so the epsilon grid is paired
                const std::uint64_t salt =
                    (static_cast<std::uint64_t>(n) << 32) ^ t;
                RandomTopologyConfig gen;
                gen.nodes = n;
                gen.max_degree = config.max_degree;
                gen.drop_lo = config.drop_lo;
                gen.drop_hi = config.drop_hi;
                gen.connectivity = config.connectivity;
                gen.seed = derive_seed(seed, salt);
                const auto topo = random_topology(gen);
                const auto theta = theta_for_epsilon(epsilon, topo);
                Schedule schedule = config.schedule;
                schedule.seed = derive_seed(seed, salt ^ 0xabcdef);
                RunOptions options;
                options.record_trace = false;
                const auto trace = run_to_convergence(topo, theta.theta, schedule,
                                                      config.criterion, options);
                total += trace.rounds_used;
                row.min_rounds = (t == 0) ? trace.rounds_used
                                          : std::min(row.min_rounds, trace.rounds_used);
                row.max_rounds = std::max(row.max_rounds, trace.rounds_used);
            }
            row.mean_rounds = static_cast<double>(total) / static_cast<double>(trials);
            rows.push_back(row);
        }
    }
    return rows;
}

std::string trace_to_csv(const ConvergenceTrace& trace) {
    if (trace.measures.empty() || trace.measures.size() != trace.changes.size()) {
        throw ContractError("trace_to_csv: trace was not recorded");
    }
    std::string out = "round,node_id,measure,num_forwarding_changes\n";
    for (std::size_t r = 0; r < trace.measures.size(); ++r) {
        for (std::size_t i = 0; i < trace.measures[r].size(); ++i) {
            out += std::to_string(r + 1) + "," + std::to_string(i) + "," +
                   fmt_double(trace.measures[r][i]) + "," +
                   std::to_string(trace.changes[r][i]) + "\n";
        }
    }
    return out;
}

std::string profile_to_csv(const std::vector<ProfileRow>& rows) {
    std::string out = "n,epsilon,mean_rounds,min_rounds,max_rounds\n";
    for (const auto& row : rows) {
        out += std::to_string(row.nodes) + "," + fmt_double(row.epsilon) + "," +
               fmt_double(row.mean_rounds) + "," + std::to_string(row.min_rounds) +
               "," + std::to_string(row.max_rounds) + "\n";
    }
    return out;
}

}  // namespace lmroute
