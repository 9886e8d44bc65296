// network.hpp -- physical topologies and their compilation into automata.
//
// A topology is a set of nodes with directed lossy links; each link carries a
// drop probability lambda in [0,1] (not required symmetric). Compilation
// expands every directed link into a virtual "attempt" state that delivers
// with probability 1-lambda or drops into an absorbing dump state, yielding
// N + sum_i |neighbors(i)| + 1 automaton states. The sink has characteristic
// weight 1, everything else 0; the controllable transitions are exactly the
// physical-node fan-outs into virtual states.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lmroute/pfsa.hpp"

namespace lmroute {

using NodeId = std::uint32_t;

struct Link {
    NodeId to;
    double drop;

    bool operator==(const Link&) const = default;
};

struct NetworkTopology {
    std::vector<std::vector<Link>> nodes;  // ordered neighbor lists
    NodeId sink = 0;

    std::size_t node_count() const { return nodes.size(); }
    const std::vector<Link>& neighbors(NodeId i) const { return nodes[i]; }
    std::optional<double> drop(NodeId from, NodeId to) const;
    std::size_t link_count() const;
    std::size_t max_degree() const;

    bool operator==(const NetworkTopology&) const = default;
};

// No self-neighbors, no duplicate neighbor entries, drops in [0,1], sink < N.
void validate(const NetworkTopology& topo);

// Topology file format:
//   {"n": int, "sink": int, "links": [{"from": int, "to": int, "drop": float}]}
NetworkTopology topology_from_json(const nlohmann::json& j);
nlohmann::json topology_to_json(const NetworkTopology& topo);
NetworkTopology load_topology(const std::filesystem::path& path);
void save_topology(const NetworkTopology& topo, const std::filesystem::path& path);

// Bijection between automaton states and {physical node, virtual link, dump}.
// States are indexed physical-first (by node id), then virtual links in
// lexicographic (from,to) order, then the dump state last.
class StateIndex {
public:
    enum class Kind { physical, virtual_link, dump };
    struct Entry {
        Kind kind;
        NodeId from = 0;  // physical node, or link tail
        NodeId to = 0;    // link head (virtual links only)
    };

    static StateIndex build(const NetworkTopology& topo);

    StateId physical(NodeId i) const;
    StateId virtual_state(NodeId from, NodeId to) const;
    StateId dump() const { return total() - 1; }
    std::size_t total() const { return physical_count_ + links_.size() + 1; }
    std::size_t physical_count() const { return physical_count_; }
    const std::vector<std::pair<NodeId, NodeId>>& virtual_links() const {
        return links_;
    }
    Entry classify(StateId state) const;

private:
    std::size_t physical_count_ = 0;
    std::vector<std::pair<NodeId, NodeId>> links_;  // sorted lexicographically
};

struct NetworkPfsa {
    Pfsa pfsa;
    StateIndex index;
    NodeId sink = 0;
};

// Def.-style compilation. Isolated nodes (no neighbors) get a dedicated idle
// self-loop so every row stays stochastic; they can never reach the sink and
// their measure is 0 unless they are the sink itself.
NetworkPfsa build_pfsa(const NetworkTopology& topo);

struct RandomTopologyConfig {
    std::size_t nodes = 1;
    std::size_t max_degree = 4;
    double drop_lo = 0.05;
    double drop_hi = 0.6;
    double connectivity = 0.3;  // acceptance probability for extra links
    std::uint64_t seed = 0;
};

// Reproducible generator. Builds a random directed tree oriented toward a
// seed-chosen sink (guaranteeing sink reachability from every node), then
// sprinkles extra links up to max_degree. Drops are uniform in [lo, hi].
NetworkTopology random_topology(const RandomTopologyConfig& config);

struct KillResult {
    NetworkTopology topology;
    std::vector<std::optional<NodeId>> old_to_new;
    std::vector<NodeId> new_to_old;
};

// Removes victims from the roster and every neighbor list; survivors are
// re-indexed densely. Killing the sink is refused.
KillResult kill_nodes(const NetworkTopology& topo, const std::set<NodeId>& victims);

}  // namespace lmroute
