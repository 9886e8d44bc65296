#include "lmroute/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <memory>
#include <numeric>

namespace lmroute {

namespace {

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double l2_norm(const std::vector<double>& v) {
    double acc = 0.0;
    for (double x : v) acc += x * x;
    return std::sqrt(acc);
}

// hop distances to the sink along directed links (BFS over reversed edges)
std::vector<std::optional<std::size_t>> sink_distances(const NetworkTopology& topo) {
    const std::size_t n = topo.node_count();
    std::vector<std::vector<NodeId>> reverse(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (const auto& link : topo.nodes[i]) {
            reverse[link.to].push_back(static_cast<NodeId>(i));
        }
    }
    std::vector<std::optional<std::size_t>> dist(n);
    std::deque<NodeId> queue{topo.sink};
    dist[topo.sink] = 0;
    while (!queue.empty()) {
        const NodeId v = queue.front();
        queue.pop_front();
        for (NodeId u : reverse[v]) {
            if (!dist[u]) {
                dist[u] = *dist[v] + 1;
                queue.push_back(u);
            }
        }
    }
    return dist;
}

}  // namespace

bool policy_is_loop_free(const Policy& policy, const NetworkTopology& topo) {
    validate_policy(policy, topo);
    const std::size_t n = topo.node_count();
    std::vector<std::size_t> indeg(n, 0);
    for (const auto& row : policy.enabled) {
        for (NodeId j : row) ++indeg[j];
    }
    std::deque<NodeId> queue;
    for (std::size_t i = 0; i < n; ++i) {
        if (indeg[i] == 0) queue.push_back(static_cast<NodeId>(i));
    }
    std::size_t removed = 0;
    while (!queue.empty()) {
        const NodeId v = queue.front();
        queue.pop_front();
        ++removed;
        for (NodeId j : policy.enabled[v]) {
            if (--indeg[j] == 0) queue.push_back(j);
        }
    }
    return removed == n;
}

SimulationResult simulate_packets(const NetworkTopology& topo, const Policy& policy,
                                  const std::vector<NodeId>& sources,
                                  std::size_t n_packets, std::uint64_t seed,
                                  bool record_outcomes) {
    if (n_packets == 0) throw ContractError("simulate_packets: need n_packets >= 1");
    for (NodeId s : sources) {
        if (s >= topo.node_count()) {
            throw ContractError("simulate_packets: unknown source " + std::to_string(s));
        }
    }
    if (!policy_is_loop_free(policy, topo)) {
        throw ContractError("simulate_packets: policy forwarding graph has a cycle");
    }

    Rng rng(seed);
    SimulationResult result;
    result.sources = sources;
    result.delivery_rate.resize(sources.size(), 0.0);

    for (std::size_t s = 0; s < sources.size(); ++s) {
        std::size_t delivered = 0;
        for (std::size_t p = 0; p < n_packets; ++p) {
            PacketOutcome outcome;
            outcome.source = sources[s];
            outcome.path.push_back(sources[s]);
            NodeId cur = sources[s];
            while (cur != topo.sink) {
                const auto& enabled = policy.enabled[cur];
                if (enabled.empty()) break;  // stranded: scored undelivered
                const NodeId next = enabled[rng.next_below(enabled.size())];
                const double lambda = *topo.drop(cur, next);
                if (rng.bernoulli(lambda)) break;  // hop drop destroys the packet
                cur = next;
                outcome.path.push_back(cur);
            }
            outcome.delivered = (cur == topo.sink);
            outcome.hops = outcome.path.size() - 1;
            delivered += outcome.delivered ? 1 : 0;
            if (record_outcomes) result.outcomes.push_back(std::move(outcome));
        }
        result.delivery_rate[s] =
            static_cast<double>(delivered) / static_cast<double>(n_packets);
    }
    return result;
}

std::vector<double> reduced_performance(const NetworkTopology& topo,
                                        const Policy& policy) {
    validate_policy(policy, topo);
    const std::size_t n = topo.node_count();
    const NodeId sink = topo.sink;

    // reachability to the sink over enabled, non-dead (lambda < 1) links
    std::vector<std::vector<NodeId>> reverse(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (NodeId j : policy.enabled[i]) {
            if (1.0 - *topo.drop(static_cast<NodeId>(i), j) > 0.0) {
                reverse[j].push_back(static_cast<NodeId>(i));
            }
        }
    }
    std::vector<char> reaches(n, 0);
    std::deque<NodeId> queue{sink};
    reaches[sink] = 1;
    while (!queue.empty()) {
        const NodeId v = queue.front();
        queue.pop_front();
        for (NodeId u : reverse[v]) {
            if (!reaches[u]) {
                reaches[u] = 1;
                queue.push_back(u);
            }
        }
    }

    std::vector<NodeId> solve_nodes;
    std::vector<Eigen::Index> col_of(n, -1);
    for (std::size_t i = 0; i < n; ++i) {
        if (reaches[i] && i != sink) {
            col_of[i] = static_cast<Eigen::Index>(solve_nodes.size());
            solve_nodes.push_back(static_cast<NodeId>(i));
        }
    }

    std::vector<double> rho(n, 0.0);
    rho[sink] = 1.0;
    if (!solve_nodes.empty()) {
        const auto dim = static_cast<Eigen::Index>(solve_nodes.size());
        Eigen::MatrixXd a = Eigen::MatrixXd::Identity(dim, dim);
        Eigen::VectorXd b = Eigen::VectorXd::Zero(dim);
        for (Eigen::Index row = 0; row < dim; ++row) {
            const NodeId i = solve_nodes[static_cast<std::size_t>(row)];
            const auto& enabled = policy.enabled[i];
            const double inv_e = 1.0 / static_cast<double>(enabled.size());
            for (NodeId j : enabled) {
                const double deliver = (1.0 - *topo.drop(i, j)) * inv_e;
                if (j == sink) {
                    b(row) += deliver;
                } else if (col_of[j] >= 0) {
                    a(row, col_of[j]) -= deliver;
                }
            }
        }
        const Eigen::VectorXd h = a.partialPivLu().solve(b);
        for (Eigen::Index row = 0; row < dim; ++row) {
            rho[solve_nodes[static_cast<std::size_t>(row)]] = h(row);
        }
    }
    return rho;
}

DropEstimator::DropEstimator(std::size_t window, std::size_t min_samples)
    : window_(window), min_samples_(min_samples) {
    if (window_ == 0) throw ContractError("drop estimator: window must be >= 1");
}

void DropEstimator::record(NodeId from, NodeId to, bool dropped) {
    auto& state = links_[{from, to}];
    state.window.push_back(dropped ? 1 : 0);
    state.drops += dropped ? 1 : 0;
    state.total_seen += 1;
    if (state.window.size() > window_) {
        state.drops -= state.window.front();
        state.window.pop_front();
    }
}

double DropEstimator::estimate(NodeId from, NodeId to) const {
    const auto it = links_.find({from, to});
    if (it == links_.end() || it->second.total_seen < min_samples_) return 0.5;
    return static_cast<double>(it->second.drops) /
           static_cast<double>(it->second.window.size());
}

std::size_t DropEstimator::samples(NodeId from, NodeId to) const {
    const auto it = links_.find({from, to});
    return it == links_.end() ? 0 : it->second.total_seen;
}

std::map<std::pair<NodeId, NodeId>, double> estimate_drops(
    const std::map<std::pair<NodeId, NodeId>, std::vector<bool>>& outcomes,
    std::size_t window) {
    if (window == 0) throw ContractError("estimate_drops: window must be >= 1");
    std::map<std::pair<NodeId, NodeId>, double> out;
    for (const auto& [link, stream] : outcomes) {
        const std::size_t take = std::min(window, stream.size());
        if (take == 0) {
            out[link] = 0.5;
            continue;
        }
        std::size_t drops = 0;
        for (std::size_t k = stream.size() - take; k < stream.size(); ++k) {
            drops += stream[k] ? 1 : 0;
        }
        out[link] = static_cast<double>(drops) / static_cast<double>(take);
    }
    return out;
}

void validate_script(const ScenarioScript& script, const NetworkTopology& topo) {
    if (script.horizon == 0) throw ValidationError("scenario: horizon must be >= 1");
    std::size_t prev = 0;
    for (const auto& event : script.events) {
        if (event.round < prev) {
            throw ValidationError("scenario: event times must be non-decreasing");
        }
        prev = event.round;
        switch (event.type) {
            case ScenarioEvent::Type::move_sink:
                if (event.node >= topo.node_count()) {
                    throw ValidationError("scenario: move_sink target out of range");
                }
                break;
            case ScenarioEvent::Type::set_drop_noise:
                if (event.value < 0.0) {
                    throw ValidationError("scenario: noise sigma must be >= 0");
                }
                break;
            case ScenarioEvent::Type::kill_nodes:
                if (event.fraction &&
                    (*event.fraction < 0.0 || *event.fraction > 1.0)) {
                    throw ValidationError("scenario: kill fraction outside [0,1]");
                }
                for (NodeId v : event.nodes) {
                    if (v >= topo.node_count()) {
                        throw ValidationError("scenario: kill target out of range");
                    }
                    if (v == topo.sink) {
                        throw ValidationError("scenario: refusing to kill the sink");
                    }
                }
                if (!event.fraction && event.nodes.empty()) {
                    throw ValidationError("scenario: kill_nodes without victims");
                }
                break;
            case ScenarioEvent::Type::set_zeta:
                if (event.node >= topo.node_count()) {
                    throw ValidationError("scenario: set_zeta target out of range");
                }
                if (event.value < 0.0 || event.value > 1.0) {
                    throw ValidationError("scenario: zeta outside [0,1]");
                }
                break;
            case ScenarioEvent::Type::inject_traffic:
                for (NodeId s : event.sources) {
                    if (s >= topo.node_count()) {
                        throw ValidationError("scenario: traffic source out of range");
                    }
                }
                if (event.packets_per_round == 0 || event.sources.empty()) {
                    throw ValidationError("scenario: inject_traffic needs sources and packets");
                }
                break;
        }
    }
}

namespace {

const char* event_name(ScenarioEvent::Type type) {
    switch (type) {
        case ScenarioEvent::Type::move_sink: return "move_sink";
        case ScenarioEvent::Type::set_drop_noise: return "set_drop_noise";
        case ScenarioEvent::Type::kill_nodes: return "kill_nodes";
        case ScenarioEvent::Type::set_zeta: return "set_zeta";
        case ScenarioEvent::Type::inject_traffic: return "inject_traffic";
    }
    return "?";
}

ScenarioEvent::Type event_type_from_string(const std::string& name) {
    if (name == "move_sink") return ScenarioEvent::Type::move_sink;
    if (name == "set_drop_noise") return ScenarioEvent::Type::set_drop_noise;
    if (name == "kill_nodes") return ScenarioEvent::Type::kill_nodes;
    if (name == "set_zeta") return ScenarioEvent::Type::set_zeta;
    if (name == "inject_traffic") return ScenarioEvent::Type::inject_traffic;
    throw ValidationError("scenario: unknown event type '" + name + "'");
}

}  // namespace

ScenarioScript scenario_from_json(const nlohmann::json& j) {
    ScenarioScript script;
    try {
        script.horizon = j.at("horizon").get<std::size_t>();
        script.seed = j.value("seed", 0ULL);
        for (const auto& e : j.value("events", nlohmann::json::array())) {
            ScenarioEvent event;
            event.round = e.at("round").get<std::size_t>();
            event.type = event_type_from_string(e.at("type").get<std::string>());
            switch (event.type) {
                case ScenarioEvent::Type::move_sink:
                    event.node = e.at("node").get<NodeId>();
                    break;
                case ScenarioEvent::Type::set_drop_noise:
                    event.value = e.at("sigma").get<double>();
                    break;
                case ScenarioEvent::Type::kill_nodes:
                    if (e.contains("fraction")) {
                        event.fraction = e.at("fraction").get<double>();
                        event.cluster_size = e.value("cluster_size", std::size_t{1});
                    }
                    if (e.contains("nodes")) {
                        event.nodes = e.at("nodes").get<std::vector<NodeId>>();
                    }
                    break;
                case ScenarioEvent::Type::set_zeta:
                    event.node = e.at("node").get<NodeId>();
                    event.value = e.at("value").get<double>();
                    break;
                case ScenarioEvent::Type::inject_traffic:
                    event.sources = e.at("sources").get<std::vector<NodeId>>();
                    event.packets_per_round = e.at("packets_per_round").get<std::size_t>();
                    break;
            }
            script.events.push_back(std::move(event));
        }
    } catch (const nlohmann::json::exception& ex) {
        throw ValidationError(std::string("scenario json: ") + ex.what());
    }
    return script;
}

nlohmann::json scenario_to_json(const ScenarioScript& script) {
    nlohmann::json events = nlohmann::json::array();
    for (const auto& event : script.events) {
        nlohmann::json e{{"round", event.round}, {"type", event_name(event.type)}};
        switch (event.type) {
            case ScenarioEvent::Type::move_sink: e["node"] = event.node; break;
            case ScenarioEvent::Type::set_drop_noise: e["sigma"] = event.value; break;
            case ScenarioEvent::Type::kill_nodes:
                if (event.fraction) {
                    e["fraction"] = *event.fraction;
                    e["cluster_size"] = event.cluster_size;
                }
                if (!event.nodes.empty()) e["nodes"] = event.nodes;
                break;
            case ScenarioEvent::Type::set_zeta:
                e["node"] = event.node;
                e["value"] = event.value;
                break;
            case ScenarioEvent::Type::inject_traffic:
                e["sources"] = event.sources;
                e["packets_per_round"] = event.packets_per_round;
                break;
        }
        events.push_back(std::move(e));
    }
    return {{"horizon", script.horizon}, {"seed", script.seed}, {"events", events}};
}

ScenarioScript load_scenario(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open scenario file " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("scenario file " + path.string() + ": " + e.what());
    }
    return scenario_from_json(j);
}

namespace {

// mutable state threaded through a scenario run
struct ScenarioState {
    NetworkTopology current;                       // true link drops
    std::vector<NodeId> orig_of;                   // current id -> original id
    std::vector<std::optional<NodeId>> cur_of;     // original id -> current id
    std::unique_ptr<Engine> engine;
    double noise_sigma = 0.0;
    std::map<std::pair<NodeId, NodeId>, double> round_lambda;  // noisy, this round
    std::optional<std::pair<std::vector<NodeId>, std::size_t>> traffic;  // orig ids
};

void seed_estimator_with_truth(DropEstimator& estimator, const ScenarioState& st,
                               std::size_t samples, Rng& rng) {
    for (std::size_t i = 0; i < st.current.node_count(); ++i) {
        for (const auto& link : st.current.nodes[i]) {
            const NodeId oi = st.orig_of[i];
            const NodeId oj = st.orig_of[link.to];
            for (std::size_t k = 0; k < samples; ++k) {
                estimator.record(oi, oj, rng.bernoulli(link.drop));
            }
        }
    }
}

}  // namespace

ScenarioResult run_scenario(const ScenarioScript& script, const NetworkTopology& topo,
                            double epsilon, const ScenarioOptions& options) {
    validate(topo);
    validate_script(script, topo);
    const double theta = theta_for_epsilon(epsilon, topo).theta;

    // probes: maximal hop distance to the sink, never scripted victims
    std::vector<char> scripted_victim(topo.node_count(), 0);
    for (const auto& event : script.events) {
        for (NodeId v : event.nodes) scripted_victim[v] = 1;
    }
    const auto dist = sink_distances(topo);
    std::vector<NodeId> candidates;
    for (std::size_t i = 0; i < topo.node_count(); ++i) {
        if (i != topo.sink && dist[i] && !scripted_victim[i]) {
            candidates.push_back(static_cast<NodeId>(i));
        }
    }
    std::sort(candidates.begin(), candidates.end(), [&](NodeId a, NodeId b) {
        if (*dist[a] != *dist[b]) return *dist[a] > *dist[b];
        return a < b;
    });
    if (candidates.size() > options.probe_count) {
        candidates.resize(options.probe_count);
    }

    ScenarioResult result;
    result.probes = candidates;

    ScenarioState st;
    st.current = topo;
    st.orig_of.resize(topo.node_count());
    std::iota(st.orig_of.begin(), st.orig_of.end(), 0);
    st.cur_of.resize(topo.node_count());
    for (std::size_t i = 0; i < topo.node_count(); ++i) {
        st.cur_of[i] = static_cast<NodeId>(i);
    }
    st.engine = std::make_unique<Engine>(st.current, theta,
                                         Schedule{ScheduleMode::synchronous,
                                                  derive_seed(script.seed, 1)});
    Rng rng(derive_seed(script.seed, 2));
    DropEstimator estimator(options.estimator_window, options.estimator_min_samples);

    const auto map_node = [&](NodeId original, const char* what) {
        if (original >= st.cur_of.size() || !st.cur_of[original]) {
            throw ValidationError(std::string("scenario: ") + what + " target " +
                                  std::to_string(original) + " is dead");
        }
        return *st.cur_of[original];
    };

    const auto apply_kill = [&](const ScenarioEvent& event, std::size_t round) {
        std::set<NodeId> victims;  // current ids
        std::vector<char> protected_node(st.current.node_count(), 0);
        protected_node[st.current.sink] = 1;
        for (NodeId p : result.probes) {
            if (st.cur_of[p]) protected_node[*st.cur_of[p]] = 1;
        }
        for (NodeId v : event.nodes) {
            victims.insert(map_node(v, "kill_nodes"));
        }
        if (event.fraction) {
            const auto want = static_cast<std::size_t>(
                *event.fraction * static_cast<double>(st.current.node_count()));
            // undirected adjacency for breadth-first kill balls
            std::vector<std::vector<NodeId>> adj(st.current.node_count());
            for (std::size_t i = 0; i < st.current.node_count(); ++i) {
                for (const auto& link : st.current.nodes[i]) {
                    adj[i].push_back(link.to);
                    adj[link.to].push_back(static_cast<NodeId>(i));
                }
            }
            std::vector<NodeId> killable;
            for (std::size_t i = 0; i < st.current.node_count(); ++i) {
                if (!protected_node[i]) killable.push_back(static_cast<NodeId>(i));
            }
            std::size_t stuck = 0;
            while (victims.size() < want && victims.size() < killable.size() &&
                   stuck < 10 * killable.size()) {
                const NodeId center = killable[rng.next_below(killable.size())];
                if (victims.count(center)) {
                    ++stuck;
                    continue;
                }
                std::deque<NodeId> ball{center};
                std::set<NodeId> in_ball{center};
                while (!ball.empty() && in_ball.size() < event.cluster_size) {
                    const NodeId v = ball.front();
                    ball.pop_front();
                    for (NodeId u : adj[v]) {
                        if (in_ball.size() >= event.cluster_size) break;
                        if (!protected_node[u] && !victims.count(u) &&
                            in_ball.insert(u).second) {
                            ball.push_back(u);
                        }
                    }
                }
                for (NodeId v : in_ball) {
                    if (victims.size() < want) victims.insert(v);
                }
            }
        }
        if (victims.empty()) return;

        const auto measures = st.engine->measures();
        std::vector<double> zetas(st.current.node_count());
        for (std::size_t i = 0; i < st.current.node_count(); ++i) {
            zetas[i] = st.engine->states()[i].zeta;
        }

        auto killres = kill_nodes(st.current, victims);
        std::vector<double> new_measures(killres.new_to_old.size());
        std::vector<NodeId> new_orig(killres.new_to_old.size());
        for (std::size_t k = 0; k < killres.new_to_old.size(); ++k) {
            new_measures[k] = measures[killres.new_to_old[k]];
            new_orig[k] = st.orig_of[killres.new_to_old[k]];
        }
        std::vector<std::optional<NodeId>> new_cur(st.cur_of.size());
        for (std::size_t orig = 0; orig < st.cur_of.size(); ++orig) {
            if (st.cur_of[orig] && killres.old_to_new[*st.cur_of[orig]]) {
                new_cur[orig] = *killres.old_to_new[*st.cur_of[orig]];
            }
        }

        st.current = std::move(killres.topology);
        st.orig_of = std::move(new_orig);
        st.cur_of = std::move(new_cur);
        st.engine = std::make_unique<Engine>(
            st.current, theta,
            Schedule{ScheduleMode::synchronous,
                     derive_seed(script.seed, 3000 + round)});
        st.engine->set_initial_measures(new_measures);
        for (std::size_t k = 0; k < st.current.node_count(); ++k) {
            st.engine->set_zeta(static_cast<NodeId>(k),
                                zetas[killres.new_to_old[k]]);
        }
    };

    std::size_t event_idx = 0;
    for (std::size_t round = 0; round < script.horizon; ++round) {
        std::string tag;
        while (event_idx < script.events.size() &&
               script.events[event_idx].round == round) {
            const auto& event = script.events[event_idx];
            if (!tag.empty()) tag += ";";
            tag += event_name(event.type);
            switch (event.type) {
                case ScenarioEvent::Type::move_sink: {
                    const NodeId cur = map_node(event.node, "move_sink");
                    st.engine->move_sink(cur);
                    st.current.sink = cur;
                    break;
                }
                case ScenarioEvent::Type::set_drop_noise:
                    st.noise_sigma = event.value;
                    if (st.noise_sigma > 0.0) {
                        seed_estimator_with_truth(estimator, st,
                                                  options.estimator_min_samples, rng);
                    } else {
                        // noise off: estimates return to the true drops
                        for (std::size_t i = 0; i < st.current.node_count(); ++i) {
                            for (const auto& link : st.current.nodes[i]) {
                                st.engine->set_drop_estimate(static_cast<NodeId>(i),
                                                             link.to, link.drop);
                            }
                        }
                    }
                    break;
                case ScenarioEvent::Type::kill_nodes:
                    apply_kill(event, round);
                    break;
                case ScenarioEvent::Type::set_zeta:
                    st.engine->set_zeta(map_node(event.node, "set_zeta"), event.value);
                    break;
                case ScenarioEvent::Type::inject_traffic: {
                    st.traffic = {{event.sources}, event.packets_per_round};
                    break;
                }
            }
            ++event_idx;
        }

        st.round_lambda.clear();
        if (st.noise_sigma > 0.0) {
            for (std::size_t i = 0; i < st.current.node_count(); ++i) {
                for (const auto& link : st.current.nodes[i]) {
                    const double noisy =
                        std::clamp(link.drop + st.noise_sigma * rng.gaussian(),
                                   kNoiseDropFloor, kNoiseDropCeil);
                    st.round_lambda[{static_cast<NodeId>(i), link.to}] = noisy;
                    const NodeId oi = st.orig_of[i];
                    const NodeId oj = st.orig_of[link.to];
                    for (std::size_t k = 0; k < options.obs_per_round; ++k) {
                        estimator.record(oi, oj, rng.bernoulli(noisy));
                    }
                    st.engine->set_drop_estimate(static_cast<NodeId>(i), link.to,
                                                 estimator.estimate(oi, oj));
                }
            }
        }

        if (st.traffic) {
            const auto policy = st.engine->forwarding_policy();
            for (NodeId source_orig : st.traffic->first) {
                if (!st.cur_of[source_orig]) continue;
                const NodeId source = *st.cur_of[source_orig];
                for (std::size_t p = 0; p < st.traffic->second; ++p) {
                    PacketOutcome outcome;
                    outcome.source = source_orig;
                    outcome.path.push_back(source_orig);
                    NodeId cur = source;
                    while (cur != st.current.sink) {
                        const auto& enabled = policy.enabled[cur];
                        if (enabled.empty()) break;
                        const NodeId next = enabled[rng.next_below(enabled.size())];
                        const auto it = st.round_lambda.find({cur, next});
                        const double lambda = (it != st.round_lambda.end())
                                                  ? it->second
                                                  : *st.current.drop(cur, next);
                        const bool dropped = rng.bernoulli(lambda);
                        if (options.closed_loop) {
                            estimator.record(st.orig_of[cur], st.orig_of[next], dropped);
                            st.engine->set_drop_estimate(
                                cur, next, estimator.estimate(st.orig_of[cur],
                                                              st.orig_of[next]));
                        }
                        if (dropped) break;
                        cur = next;
                        outcome.path.push_back(st.orig_of[cur]);
                    }
                    outcome.delivered = (cur == st.current.sink);
                    outcome.hops = outcome.path.size() - 1;
                    result.packet_log.push_back(std::move(outcome));
                }
            }
        }

        const auto stats = st.engine->step_round();

        const bool sample = (round % options.metrics_stride == 0) || !tag.empty() ||
                            round + 1 == script.horizon;
        if (sample) {
            const auto policy = st.engine->forwarding_policy();
            const auto rho = reduced_performance(st.current, policy);
            MetricsRow row;
            row.round = round;
            row.event_tag = tag;
            row.rho_norm = l2_norm(rho);
            row.corrections = stats.forwarding_changes;
            row.loop_free = policy_is_loop_free(policy, st.current);
            for (NodeId p : result.probes) {
                row.probe_rho.push_back(st.cur_of[p] ? rho[*st.cur_of[p]] : 0.0);
            }
            result.rows.push_back(std::move(row));
        }
    }
    result.rounds_run = script.horizon;
    return result;
}

NoiseRunResult noise_robustness_run(const NetworkTopology& topo, double epsilon,
                                    double noise_sigma, std::size_t rounds,
                                    const ScenarioOptions& options) {
    if (noise_sigma < 0.0) {
        throw ContractError("noise_robustness_run: sigma must be >= 0");
    }
    validate(topo);
    const double theta = theta_for_epsilon(epsilon, topo).theta;

    // converge quietly first, then run under noise
    Engine engine(topo, theta, Schedule{ScheduleMode::synchronous, 0});
    ConvergenceCriterion criterion;
    std::size_t quiet = 0;
    while (quiet < criterion.quiet_rounds) {
        const auto stats = engine.step_round();
        quiet = (stats.max_delta < criterion.tol) ? quiet + 1 : 0;
        if (engine.rounds() > 10'000'000) {
            throw NumericError("noise_robustness_run: warmup did not converge");
        }
    }

    Rng rng(derive_seed(42, rounds));
    DropEstimator estimator(options.estimator_window, options.estimator_min_samples);
    if (noise_sigma > 0.0) {
        for (std::size_t i = 0; i < topo.node_count(); ++i) {
            for (const auto& link : topo.nodes[i]) {
                for (std::size_t k = 0; k < options.estimator_min_samples; ++k) {
                    estimator.record(static_cast<NodeId>(i), link.to,
                                     rng.bernoulli(link.drop));
                }
            }
        }
    }

    NoiseRunResult result;
    for (std::size_t round = 0; round < rounds; ++round) {
        if (noise_sigma > 0.0) {
            for (std::size_t i = 0; i < topo.node_count(); ++i) {
                for (const auto& link : topo.nodes[i]) {
                    const double noisy =
                        std::clamp(link.drop + noise_sigma * rng.gaussian(),
                                   kNoiseDropFloor, kNoiseDropCeil);
                    for (std::size_t k = 0; k < options.obs_per_round; ++k) {
                        estimator.record(static_cast<NodeId>(i), link.to,
                                         rng.bernoulli(noisy));
                    }
                    engine.set_drop_estimate(
                        static_cast<NodeId>(i), link.to,
                        estimator.estimate(static_cast<NodeId>(i), link.to));
                }
            }
        }
        const auto stats = engine.step_round();
        result.corrections.push_back(stats.forwarding_changes);
        result.rho_norm.push_back(
            l2_norm(reduced_performance(topo, engine.forwarding_policy())));
    }

    const std::size_t warmup = rounds / 4;
    if (result.rho_norm.size() > warmup + 1) {
        double mean = 0.0;
        for (std::size_t k = warmup; k < result.rho_norm.size(); ++k) {
            mean += result.rho_norm[k];
        }
        mean /= static_cast<double>(result.rho_norm.size() - warmup);
        double var = 0.0;
        for (std::size_t k = warmup; k < result.rho_norm.size(); ++k) {
            var += (result.rho_norm[k] - mean) * (result.rho_norm[k] - mean);
        }
        var /= static_cast<double>(result.rho_norm.size() - warmup);
        result.rho_norm_cv = (mean > 0.0) ? std::sqrt(var) / mean : 0.0;
    }
    return result;
}

std::string metrics_to_csv(const ScenarioResult& result) {
    std::string out = "round,event_tag,rho_norm,corrections,loop_free";
    for (NodeId p : result.probes) out += ",probe_" + std::to_string(p);
    out += "\n";
    for (const auto& row : result.rows) {
        out += std::to_string(row.round) + "," + row.event_tag + "," +
               fmt_double(row.rho_norm) + "," + std::to_string(row.corrections) +
               "," + std::to_string(row.loop_free ? 1 : 0);
        for (double v : row.probe_rho) out += "," + fmt_double(v);
        out += "\n";
    }
    return out;
}

std::string outcomes_to_jsonl(std::span<const PacketOutcome> outcomes) {
    std::string out;
    for (const auto& o : outcomes) {
        nlohmann::json j{{"source", o.source},
                         {"delivered", o.delivered},
                         {"hops", o.hops},
                         {"path", o.path}};
        out += j.dump() + "\n";
    }
    return out;
}

}  // namespace lmroute
