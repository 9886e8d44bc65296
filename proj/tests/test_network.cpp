#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "lmroute/network.hpp"
#include "oracle_helpers.hpp"

using namespace lmroute;

namespace {

// six nodes, sixteen directed links: a ring both ways plus two chords each way
NetworkTopology six_node_sixteen_links() {
    NetworkTopology topo;
    topo.nodes.resize(6);
    topo.sink = 5;
    const auto add = [&](NodeId a, NodeId b) { topo.nodes[a].push_back({b, 0.2}); };
    for (NodeId i = 0; i < 6; ++i) {
        add(i, (i + 1) % 6);
        add((i + 1) % 6, i);
    }
    add(0, 3);
    add(3, 0);
    add(1, 4);
    add(4, 1);
    return topo;
}

}  // namespace

TEST_CASE("six-node network with sixteen links compiles to 23 states") {
    const auto topo = six_node_sixteen_links();
    REQUIRE(topo.link_count() == 16);
    const auto net = build_pfsa(topo);
    CHECK(net.index.total() == 23);  // 6 physical + 16 virtual + 1 dump
    CHECK(net.pfsa.controllable.size() == 16);
    CHECK(net.pfsa.characteristic[net.index.physical(5)] == 1.0);
}

TEST_CASE("a linkless network compiles to N+1 states with only the sink weighted") {
    NetworkTopology topo;
    topo.nodes.resize(4);
    topo.sink = 2;
    const auto net = build_pfsa(topo);
    CHECK(net.index.total() == 5);
    const auto pi = build_transition_matrix(net.pfsa);
    const auto nu = compute_measure(pi, net.pfsa.chi(), 0.3);
    for (StateId i = 0; i < 4; ++i) {
        if (i == 2) {
            CHECK(nu.at(i) == doctest::Approx(1.0).epsilon(1e-12));
        } else {
            CHECK(nu.at(i) == 0.0);
        }
    }
}

TEST_CASE("a fully connected four-node network has 4 + 12 + 1 states") {
    NetworkTopology topo;
    topo.nodes.resize(4);
    topo.sink = 0;
    for (NodeId i = 0; i < 4; ++i) {
        for (NodeId j = 0; j < 4; ++j) {
            if (i != j) topo.nodes[i].push_back({j, 0.1});
        }
    }
    const auto net = build_pfsa(topo);
    CHECK(net.index.total() == 17);
}

TEST_CASE("state count identity holds on generated topologies") {
    for (std::uint64_t seed = 0; seed < 15; ++seed) {
        RandomTopologyConfig gen;
        gen.nodes = 3 + seed * 2;
        gen.max_degree = 1 + seed % 5;
        gen.seed = seed;
        const auto topo = random_topology(gen);
        const auto net = build_pfsa(topo);
        CHECK(net.index.total() == topo.node_count() + topo.link_count() + 1);
        // rows are stochastic by construction
        CHECK_NOTHROW(build_transition_matrix(net.pfsa));
    }
}

TEST_CASE("build_pfsa is deterministic") {
    const auto topo = six_node_sixteen_links();
    const auto a = build_transition_matrix(build_pfsa(topo).pfsa);
    const auto b = build_transition_matrix(build_pfsa(topo).pfsa);
    CHECK(a.matrix() == b.matrix());
}

TEST_CASE("topology validation") {
    NetworkTopology topo;
    topo.nodes.resize(2);
    topo.sink = 0;
    SUBCASE("self-neighbor is rejected") {
        topo.nodes[1].push_back({1, 0.5});
        CHECK_THROWS_AS(validate(topo), ValidationError);
    }
    SUBCASE("drop outside [0,1] is rejected") {
        topo.nodes[1].push_back({0, 1.5});
        CHECK_THROWS_AS(validate(topo), ValidationError);
        CHECK_THROWS_AS(build_pfsa(topo), ValidationError);
    }
    SUBCASE("sink out of range is rejected") {
        topo.sink = 9;
        CHECK_THROWS_AS(validate(topo), ValidationError);
    }
}

TEST_CASE("state index classifies its own states") {
    const auto topo = six_node_sixteen_links();
    const auto index = StateIndex::build(topo);
    for (NodeId i = 0; i < 6; ++i) {
        const auto entry = index.classify(index.physical(i));
        CHECK(entry.kind == StateIndex::Kind::physical);
        CHECK(entry.from == i);
    }
    for (const auto& [from, to] : index.virtual_links()) {
        const auto entry = index.classify(index.virtual_state(from, to));
        CHECK(entry.kind == StateIndex::Kind::virtual_link);
        CHECK(entry.from == from);
        CHECK(entry.to == to);
    }
    CHECK(index.classify(index.dump()).kind == StateIndex::Kind::dump);
}

TEST_CASE("random topology generator") {
    SUBCASE("n=1 gives a single node and no links") {
        RandomTopologyConfig gen;
        gen.nodes = 1;
        gen.seed = 3;
        const auto topo = random_topology(gen);
        CHECK(topo.node_count() == 1);
        CHECK(topo.link_count() == 0);
    }
    SUBCASE("equal seeds give equal topologies") {
        RandomTopologyConfig gen;
        gen.nodes = 20;
        gen.max_degree = 4;
        gen.seed = 17;
        CHECK(random_topology(gen) == random_topology(gen));
    }
    SUBCASE("different seeds differ") {
        RandomTopologyConfig gen;
        gen.nodes = 20;
        gen.max_degree = 4;
        gen.seed = 17;
        auto other = gen;
        other.seed = 18;
        CHECK_FALSE(random_topology(gen) == random_topology(other));
    }
    SUBCASE("the sink is reachable from every node") {
        RandomTopologyConfig gen;
        gen.nodes = 50;
        gen.max_degree = 5;
        gen.seed = 7;
        const auto topo = random_topology(gen);
        CHECK(testing::all_reach_sink(topo));
        CHECK(topo.max_degree() <= 5);
    }
    SUBCASE("drops fall inside the requested range") {
        RandomTopologyConfig gen;
        gen.nodes = 30;
        gen.max_degree = 4;
        gen.drop_lo = 0.2;
        gen.drop_hi = 0.4;
        gen.seed = 5;
        const auto topo = random_topology(gen);
        for (const auto& links : topo.nodes) {
            for (const auto& link : links) {
                CHECK(link.drop >= 0.2);
                CHECK(link.drop <= 0.4);
            }
        }
    }
    SUBCASE("impossible constraints are refused") {
        RandomTopologyConfig gen;
        gen.nodes = 5;
        gen.max_degree = 0;
        CHECK_THROWS_AS(random_topology(gen), ValidationError);
    }
}

TEST_CASE("kill_nodes") {
    RandomTopologyConfig gen;
    gen.nodes = 12;
    gen.max_degree = 4;
    gen.seed = 23;
    const auto topo = random_topology(gen);

    SUBCASE("an empty victim set changes nothing") {
        const auto result = kill_nodes(topo, {});
        CHECK(result.topology == topo);
        for (std::size_t i = 0; i < topo.node_count(); ++i) {
            CHECK(*result.old_to_new[i] == i);
        }
    }
    SUBCASE("killing the sink is refused") {
        CHECK_THROWS_AS(kill_nodes(topo, {topo.sink}), ContractError);
    }
    SUBCASE("translation maps are mutually inverse") {
        std::set<NodeId> victims{1, 4, 7};
        victims.erase(topo.sink);
        const auto result = kill_nodes(topo, victims);
        for (std::size_t k = 0; k < result.new_to_old.size(); ++k) {
            CHECK(*result.old_to_new[result.new_to_old[k]] == k);
        }
        for (NodeId v : victims) CHECK_FALSE(result.old_to_new[v].has_value());
    }
    SUBCASE("a node whose neighbors all died has measure 0") {
        // 0 -> 1 -> 2 (sink); kill node 1, leaving 0 isolated
        NetworkTopology chain;
        chain.nodes.resize(3);
        chain.sink = 2;
        chain.nodes[0].push_back({1, 0.1});
        chain.nodes[1].push_back({2, 0.1});
        const auto result = kill_nodes(chain, {1});
        CHECK(result.topology.node_count() == 2);
        CHECK(result.topology.nodes[*result.old_to_new[0]].empty());
        const auto net = build_pfsa(result.topology);
        const auto nu = compute_measure(build_transition_matrix(net.pfsa),
                                        net.pfsa.chi(), 0.1);
        CHECK(nu.at(net.index.physical(*result.old_to_new[0])) == 0.0);
    }
    SUBCASE("killing half of a larger network leaves a valid topology") {
        RandomTopologyConfig big;
        big.nodes = 100;
        big.max_degree = 5;
        big.seed = 31;
        const auto large = random_topology(big);
        std::set<NodeId> victims;
        for (NodeId v = 0; victims.size() < 50 && v < 100; ++v) {
            if (v != large.sink) victims.insert(v);
        }
        const auto result = kill_nodes(large, victims);
        CHECK(result.topology.node_count() == 50);
        CHECK_NOTHROW(validate(result.topology));
        CHECK_NOTHROW(build_pfsa(result.topology));
    }
}

TEST_CASE("topology json round trip is lossless") {
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        RandomTopologyConfig gen;
        gen.nodes = 5 + seed * 3;
        gen.max_degree = 3;
        gen.seed = seed + 100;
        const auto topo = random_topology(gen);
        CHECK(topology_from_json(topology_to_json(topo)) == topo);
    }
}

TEST_CASE("topology file save/load round trip") {
    const auto topo = six_node_sixteen_links();
    const auto path = std::filesystem::temp_directory_path() / "lmroute_topo_test.json";
    save_topology(topo, path);
    CHECK(load_topology(path) == topo);
    std::filesystem::remove(path);
}

TEST_CASE("malformed topology files are validation errors") {
    const auto path = std::filesystem::temp_directory_path() / "lmroute_bad_topo.json";
    {
        std::FILE* f = std::fopen(path.c_str(), "w");
        std::fputs("{\"n\": 2, \"sink\": 0, \"links\": [{\"from\":0,\"to\":1,\"drop\":1.7}]}",
                   f);
        std::fclose(f);
    }
    CHECK_THROWS_AS(load_topology(path), ValidationError);
    std::filesystem::remove(path);
}
