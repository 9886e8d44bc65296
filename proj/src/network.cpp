#include "lmroute/network.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <set>
#include <sstream>

#include "lmroute/rng.hpp"

namespace lmroute {

std::optional<double> NetworkTopology::drop(NodeId from, NodeId to) const {
    for (const auto& link : nodes[from]) {
        if (link.to == to) return link.drop;
    }
    return std::nullopt;
}

std::size_t NetworkTopology::link_count() const {
    std::size_t count = 0;
    for (const auto& links : nodes) count += links.size();
    return count;
}

std::size_t NetworkTopology::max_degree() const {
    std::size_t m = 0;
    for (const auto& links : nodes) m = std::max(m, links.size());
    return m;
}

void validate(const NetworkTopology& topo) {
    const std::size_t n = topo.node_count();
    if (n == 0) throw ValidationError("topology: no nodes");
    if (topo.sink >= n) throw ValidationError("topology: sink id out of range");
    for (std::size_t i = 0; i < n; ++i) {
        std::set<NodeId> seen;
        for (const auto& link : topo.nodes[i]) {
            if (link.to >= n) {
                throw ValidationError("topology: node " + std::to_string(i) +
                                      " links to unknown node " +
                                      std::to_string(link.to));
            }
            if (link.to == i) {
                throw ValidationError("topology: node " + std::to_string(i) +
                                      " lists itself as neighbor");
            }
            if (!seen.insert(link.to).second) {
                throw ValidationError("topology: duplicate link " +
                                      std::to_string(i) + " -> " +
                                      std::to_string(link.to));
            }
            if (link.drop < 0.0 || link.drop > 1.0) {
                throw ValidationError("topology: drop probability of link " +
                                      std::to_string(i) + " -> " +
                                      std::to_string(link.to) + " outside [0,1]");
            }
        }
    }
}

NetworkTopology topology_from_json(const nlohmann::json& j) {
    NetworkTopology topo;
    try {
        const auto n = j.at("n").get<std::size_t>();
        topo.nodes.resize(n);
        topo.sink = j.at("sink").get<NodeId>();
        for (const auto& link : j.at("links")) {
            const auto from = link.at("from").get<NodeId>();
            if (from >= n) {
                throw ValidationError("topology: link from unknown node " +
                                      std::to_string(from));
            }
            topo.nodes[from].push_back(
                {link.at("to").get<NodeId>(), link.at("drop").get<double>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("topology json: ") + e.what());
    }
    validate(topo);
    return topo;
}

nlohmann::json topology_to_json(const NetworkTopology& topo) {
    nlohmann::json links = nlohmann::json::array();
    for (std::size_t i = 0; i < topo.node_count(); ++i) {
        for (const auto& link : topo.nodes[i]) {
            links.push_back({{"from", i}, {"to", link.to}, {"drop", link.drop}});
        }
    }
    return {{"n", topo.node_count()}, {"sink", topo.sink}, {"links", links}};
}

NetworkTopology load_topology(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open topology file " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("topology file " + path.string() + ": " + e.what());
    }
    return topology_from_json(j);
}

void save_topology(const NetworkTopology& topo, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write topology file " + path.string());
    out << topology_to_json(topo).dump(2) << "\n";
}

StateIndex StateIndex::build(const NetworkTopology& topo) {
    StateIndex index;
    index.physical_count_ = topo.node_count();
    for (std::size_t i = 0; i < topo.node_count(); ++i) {
        for (const auto& link : topo.nodes[i]) {
            index.links_.emplace_back(static_cast<NodeId>(i), link.to);
        }
    }
    std::sort(index.links_.begin(), index.links_.end());
    return index;
}

StateId StateIndex::physical(NodeId i) const {
    if (i >= physical_count_) throw ContractError("state index: unknown node");
    return i;
}

StateId StateIndex::virtual_state(NodeId from, NodeId to) const {
    const auto it =
        std::lower_bound(links_.begin(), links_.end(), std::make_pair(from, to));
    if (it == links_.end() || *it != std::make_pair(from, to)) {
        throw ContractError("state index: no virtual state for link " +
                            std::to_string(from) + " -> " + std::to_string(to));
    }
    return physical_count_ + static_cast<std::size_t>(it - links_.begin());
}

StateIndex::Entry StateIndex::classify(StateId state) const {
    if (state < physical_count_) {
        return {Kind::physical, static_cast<NodeId>(state), 0};
    }
    if (state < physical_count_ + links_.size()) {
        const auto& link = links_[state - physical_count_];
        return {Kind::virtual_link, link.first, link.second};
    }
    if (state == dump()) return {Kind::dump, 0, 0};
    throw ContractError("state index: state out of range");
}

NetworkPfsa build_pfsa(const NetworkTopology& topo) {
    validate(topo);
    auto index = StateIndex::build(topo);
    const auto& links = index.virtual_links();

    Pfsa pfsa;
    pfsa.rows.resize(index.total());
    pfsa.characteristic.assign(index.total(), 0.0);
    pfsa.state_names.resize(index.total());

    // symbols: one per directed link (lex order), then the drop symbol, then
    // an idle symbol only if some node has no neighbors
    bool has_isolated = false;
    for (const auto& row : topo.nodes) {
        if (row.empty()) has_isolated = true;
    }
    for (const auto& [from, to] : links) {
        pfsa.symbol_names.push_back("s" + std::to_string(from) + "_" +
                                    std::to_string(to));
    }
    const SymbolId drop_symbol = pfsa.symbol_names.size();
    pfsa.symbol_names.push_back("drop");
    const SymbolId idle_symbol = pfsa.symbol_names.size();
    if (has_isolated) pfsa.symbol_names.push_back("idle");

    const auto link_symbol = [&](NodeId from, NodeId to) {
        return static_cast<SymbolId>(index.virtual_state(from, to) -
                                     index.physical_count());
    };

    for (std::size_t i = 0; i < topo.node_count(); ++i) {
        const auto node = static_cast<NodeId>(i);
        pfsa.state_names[i] = "n" + std::to_string(i);
        const auto& row = topo.nodes[i];
        if (row.empty()) {
            pfsa.rows[i].push_back({idle_symbol, i, 1.0});
            continue;
        }
        const double share = 1.0 / static_cast<double>(row.size());
        for (const auto& link : row) {
            const SymbolId symbol = link_symbol(node, link.to);
            pfsa.rows[i].push_back({symbol, index.virtual_state(node, link.to), share});
            pfsa.controllable.insert({i, symbol});
        }
    }
    for (std::size_t k = 0; k < links.size(); ++k) {
        const auto [from, to] = links[k];
        const StateId state = index.physical_count() + k;
        const double lambda = *topo.drop(from, to);
        pfsa.state_names[state] =
            "v" + std::to_string(from) + "_" + std::to_string(to);
        pfsa.rows[state].push_back(
            {static_cast<SymbolId>(k), index.physical(to), 1.0 - lambda});
        pfsa.rows[state].push_back({drop_symbol, index.dump(), lambda});
    }
    pfsa.state_names[index.dump()] = "dump";
    pfsa.rows[index.dump()].push_back({drop_symbol, index.dump(), 1.0});
    pfsa.characteristic[index.physical(topo.sink)] = 1.0;

    validate(pfsa);
    return NetworkPfsa{std::move(pfsa), std::move(index), topo.sink};
}

namespace {

std::vector<NodeId> nodes_not_reaching_sink(const NetworkTopology& topo) {
    const std::size_t n = topo.node_count();
    std::vector<std::vector<NodeId>> reverse(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (const auto& link : topo.nodes[i]) {
            reverse[link.to].push_back(static_cast<NodeId>(i));
        }
    }
    std::vector<char> seen(n, 0);
    std::deque<NodeId> queue{topo.sink};
    seen[topo.sink] = 1;
    while (!queue.empty()) {
        const NodeId v = queue.front();
        queue.pop_front();
        for (NodeId u : reverse[v]) {
            if (!seen[u]) {
                seen[u] = 1;
                queue.push_back(u);
            }
        }
    }
    std::vector<NodeId> out;
    for (std::size_t i = 0; i < n; ++i) {
        if (!seen[i]) out.push_back(static_cast<NodeId>(i));
    }
    return out;
}

}  // namespace

NetworkTopology random_topology(const RandomTopologyConfig& config) {
    if (config.nodes == 0) throw ValidationError("random_topology: need nodes >= 1");
    if (!(config.drop_lo >= 0.0 && config.drop_lo <= config.drop_hi &&
          config.drop_hi <= 1.0)) {
        throw ValidationError("random_topology: drop range must satisfy 0 <= lo <= hi <= 1");
    }
    if (config.connectivity < 0.0 || config.connectivity > 1.0) {
        throw ValidationError("random_topology: connectivity outside [0,1]");
    }
    if (config.max_degree == 0 && config.nodes > 1) {
        throw ValidationError(
            "random_topology: impossible constraints (max_degree 0 with n > 1)");
    }

    Rng rng(config.seed);
    const std::size_t n = config.nodes;
    const auto draw_drop = [&] {
        return rng.uniform(config.drop_lo, config.drop_hi);
    };

    for (int attempt = 0; attempt < 100; ++attempt) {
        NetworkTopology topo;
        topo.nodes.resize(n);
        topo.sink = static_cast<NodeId>(rng.next_below(n));
        if (n > 1) {
            // random tree oriented toward the sink: every node gets a directed
            // path to it
            std::vector<NodeId> order;
            for (std::size_t i = 0; i < n; ++i) {
                if (i != topo.sink) order.push_back(static_cast<NodeId>(i));
            }
            rng.shuffle(order);
            std::vector<NodeId> connected{topo.sink};
            for (NodeId v : order) {
                const NodeId u = connected[rng.next_below(connected.size())];
                topo.nodes[v].push_back({u, draw_drop()});
                connected.push_back(v);
            }
            // extra links, at most max_degree attempts per node
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t att = 0;
                     att < config.max_degree && topo.nodes[i].size() < config.max_degree;
                     ++att) {
                    const bool accept = rng.bernoulli(config.connectivity);
                    const auto j = static_cast<NodeId>(rng.next_below(n));
                    if (accept && j != i &&
                        !topo.drop(static_cast<NodeId>(i), j).has_value()) {
                        topo.nodes[i].push_back({j, draw_drop()});
                    }
                }
            }
        }
        const auto unreachable = nodes_not_reaching_sink(topo);
        if (unreachable.empty()) {
            validate(topo);
            return topo;
        }
        if (attempt == 99) {
            std::ostringstream msg;
            msg << "random_topology: sink unreachable from nodes {";
            for (std::size_t k = 0; k < unreachable.size(); ++k) {
                msg << (k ? "," : "") << unreachable[k];
            }
            msg << "}";
            throw ValidationError(msg.str());
        }
    }
    throw ValidationError("random_topology: generation failed");
}

KillResult kill_nodes(const NetworkTopology& topo, const std::set<NodeId>& victims) {
    if (victims.count(topo.sink) > 0) {
        throw ContractError("kill_nodes: refusing to kill the sink");
    }
    for (NodeId v : victims) {
        if (v >= topo.node_count()) {
            throw ContractError("kill_nodes: unknown node " + std::to_string(v));
        }
    }
    KillResult result;
    result.old_to_new.assign(topo.node_count(), std::nullopt);
    for (std::size_t i = 0; i < topo.node_count(); ++i) {
        if (victims.count(static_cast<NodeId>(i)) == 0) {
            result.old_to_new[i] = static_cast<NodeId>(result.new_to_old.size());
            result.new_to_old.push_back(static_cast<NodeId>(i));
        }
    }
    result.topology.nodes.resize(result.new_to_old.size());
    result.topology.sink = *result.old_to_new[topo.sink];
    for (std::size_t i = 0; i < topo.node_count(); ++i) {
        const auto new_from = result.old_to_new[i];
        if (!new_from) continue;
        for (const auto& link : topo.nodes[i]) {
            const auto new_to = result.old_to_new[link.to];
            if (new_to) {
                result.topology.nodes[*new_from].push_back({*new_to, link.drop});
            }
        }
    }
    validate(result.topology);
    return result;
}

}  // namespace lmroute
