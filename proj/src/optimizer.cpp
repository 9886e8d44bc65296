#include "lmroute/optimizer.hpp"

#include <algorithm>
#include <cstdio>
#include <deque>

namespace lmroute {

namespace {

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

Policy Policy::all_enabled(const NetworkTopology& topo) {
    Policy policy;
    policy.enabled.resize(topo.node_count());
    for (std::size_t i = 0; i < topo.node_count(); ++i) {
        for (const auto& link : topo.nodes[i]) policy.enabled[i].push_back(link.to);
        std::sort(policy.enabled[i].begin(), policy.enabled[i].end());
    }
    return policy;
}

bool Policy::allows(NodeId from, NodeId to) const {
    const auto& row = enabled[from];
    return std::binary_search(row.begin(), row.end(), to);
}

std::size_t Policy::enabled_count() const {
    std::size_t count = 0;
    for (const auto& row : enabled) count += row.size();
    return count;
}

void validate_policy(const Policy& policy, const NetworkTopology& topo) {
    if (policy.enabled.size() != topo.node_count()) {
        throw ValidationError("policy: node count mismatch");
    }
    for (std::size_t i = 0; i < topo.node_count(); ++i) {
        for (NodeId j : policy.enabled[i]) {
            if (!topo.drop(static_cast<NodeId>(i), j)) {
                throw ValidationError("policy: node " + std::to_string(i) +
                                      " enables non-neighbor " + std::to_string(j));
            }
        }
    }
}

DisablingSet policy_to_disabling(const Policy& policy, const NetworkPfsa& net) {
    DisablingSet d;
    for (const auto& [state, symbol] : net.pfsa.controllable) {
        const auto entry = net.index.classify(net.index.physical_count() + symbol);
        // link symbols are indexed like the virtual states they lead to
        if (!policy.allows(entry.from, entry.to)) d.disabled.insert({state, symbol});
    }
    return d;
}

Policy disabling_to_policy(const DisablingSet& d, const NetworkPfsa& net) {
    Policy policy;
    policy.enabled.resize(net.index.physical_count());
    for (const auto& [state, symbol] : net.pfsa.controllable) {
        if (d.contains(state, symbol)) continue;
        const auto entry = net.index.classify(net.index.physical_count() + symbol);
        policy.enabled[entry.from].push_back(entry.to);
    }
    for (auto& row : policy.enabled) std::sort(row.begin(), row.end());
    return policy;
}

OptimizeResult optimize_centralized(const NetworkPfsa& net, double theta) {
    if (!(theta > 0.0 && theta < 1.0)) {
        throw ContractError("optimize_centralized: theta must lie in (0,1)");
    }
    const auto& links = net.index.virtual_links();
    const std::size_t guard = 10 * std::max<std::size_t>(links.size(), 1);
    const Eigen::VectorXd chi = net.pfsa.chi();

    DisablingSet disabling;
    std::vector<Eigen::VectorXd> history;
    for (std::size_t iter = 1; iter <= guard; ++iter) {
        const auto controlled = apply_disabling(net.pfsa, disabling);
        const auto pi = build_transition_matrix(controlled);
        auto nu = compute_measure(pi, chi, theta);
        history.push_back(nu.values);

        DisablingSet next;
        for (const auto& [from, to] : links) {
            const StateId source = net.index.physical(from);
            const StateId virt = net.index.virtual_state(from, to);
            if (nu.at(virt) < nu.at(source)) {
                const auto symbol = static_cast<SymbolId>(virt - net.index.physical_count());
                next.disabled.insert({source, symbol});
            }
        }
        if (next == disabling) {
            return OptimizeResult{disabling_to_policy(disabling, net),
                                  std::move(disabling), std::move(nu), iter,
                                  std::move(history)};
        }
        disabling = std::move(next);
    }
    throw NumericError("optimize_centralized: no fixpoint within " +
                       std::to_string(guard) + " iterations");
}

PerformanceVector performance_vector(const NetworkPfsa& net, const Policy& policy) {
    const std::size_t n = net.index.physical_count();
    if (policy.enabled.size() != n) {
        throw ValidationError("performance_vector: policy size mismatch");
    }
    const auto controlled = apply_disabling(net.pfsa, policy_to_disabling(policy, net));
    Eigen::MatrixXd m = build_transition_matrix(controlled).matrix();

    const StateId sink_state = net.index.physical(net.sink);
    const auto dim = static_cast<Eigen::Index>(net.index.total());
    m.row(static_cast<Eigen::Index>(sink_state)).setZero();
    m(static_cast<Eigen::Index>(sink_state), static_cast<Eigen::Index>(sink_state)) = 1.0;

    // states with no path to the sink are closed off as self-loop islands;
    // they absorb in place and score 0 at the sink
    std::vector<char> reaches(net.index.total(), 0);
    std::deque<StateId> queue{sink_state};
    reaches[sink_state] = 1;
    while (!queue.empty()) {
        const StateId v = queue.front();
        queue.pop_front();
        for (Eigen::Index u = 0; u < dim; ++u) {
            if (!reaches[u] && m(u, static_cast<Eigen::Index>(v)) > 0.0) {
                reaches[u] = 1;
                queue.push_back(static_cast<StateId>(u));
            }
        }
    }
    for (Eigen::Index i = 0; i < dim; ++i) {
        if (!reaches[i]) {
            m.row(i).setZero();
            m(i, i) = 1.0;
        }
    }

    const StochasticMatrix controlled_pi{std::move(m)};
    const auto result = absorption_probabilities(
        controlled_pi, pure_selfloop_states(controlled_pi));

    PerformanceVector perf;
    perf.rho.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        perf.rho[i] = result.at(net.index.physical(static_cast<NodeId>(i)), sink_state);
    }
    return perf;
}

EnumerationResult enumerate_policies(const NetworkPfsa& net) {
    const auto& links = net.index.virtual_links();
    if (links.size() > kEnumerationCap) {
        throw ValidationError("enumerate_policies: " + std::to_string(links.size()) +
                              " controllable transitions exceed the cap of " +
                              std::to_string(kEnumerationCap));
    }
    const std::size_t n = net.index.physical_count();
    const std::uint64_t total = 1ULL << links.size();

    EnumerationResult result;
    result.envelope.rho.assign(n, 0.0);
    result.argmax.resize(n);

    for (std::uint64_t mask = 0; mask < total; ++mask) {
        Policy policy;
        policy.enabled.resize(n);
        for (std::size_t k = 0; k < links.size(); ++k) {
            if ((mask >> k & 1) == 0) {
                policy.enabled[links[k].first].push_back(links[k].second);
            }
        }
        for (auto& row : policy.enabled) std::sort(row.begin(), row.end());

        const auto perf = performance_vector(net, policy);
        for (std::size_t i = 0; i < n; ++i) {
            if (mask == 0 || perf.rho[i] > result.envelope.rho[i]) {
                result.envelope.rho[i] = perf.rho[i];
                result.argmax[i] = policy;
            }
        }
        ++result.policies_evaluated;
    }
    return result;
}

ThetaChoice theta_for_epsilon(double epsilon, const NetworkTopology& topo) {
    if (!(epsilon > 0.0 && epsilon < 1.0)) {
        throw ContractError("theta_for_epsilon: epsilon must lie in (0,1)");
    }
    validate(topo);
    const std::size_t m = topo.max_degree();
    if (m == 0) return {0.5, true};
    return {epsilon / static_cast<double>(m * m), false};
}

nlohmann::json policy_to_json(const Policy& policy) {
    nlohmann::json enabled = nlohmann::json::array();
    for (const auto& row : policy.enabled) enabled.push_back(row);
    return {{"n", policy.enabled.size()}, {"enabled", enabled}};
}

Policy policy_from_json(const nlohmann::json& j) {
    Policy policy;
    try {
        const auto n = j.at("n").get<std::size_t>();
        policy.enabled.resize(n);
        const auto& enabled = j.at("enabled");
        if (enabled.size() != n) throw ValidationError("policy json: size mismatch");
        for (std::size_t i = 0; i < n; ++i) {
            policy.enabled[i] = enabled[i].get<std::vector<NodeId>>();
            std::sort(policy.enabled[i].begin(), policy.enabled[i].end());
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("policy json: ") + e.what());
    }
    return policy;
}

std::string performance_to_csv(const PerformanceVector& perf) {
    std::string out = "node_id,rho\n";
    for (std::size_t i = 0; i < perf.rho.size(); ++i) {
        out += std::to_string(i) + "," + fmt_double(perf.rho[i]) + "\n";
    }
    return out;
}

}  // namespace lmroute
