#include <doctest.h>

#include "lmroute/engine.hpp"
#include "lmroute/optimizer.hpp"
#include "oracle_helpers.hpp"

using namespace lmroute;

namespace {

NodeState make_node(NodeId id, double measure, double chi,
                    std::vector<NeighborEntry> neighbors) {
    NodeState state;
    state.self_id = id;
    state.self_measure = measure;
    state.chi = chi;
    state.neighbors = std::move(neighbors);
    return state;
}

RandomTopologyConfig small_random(std::uint64_t seed, std::size_t nodes = 15) {
    RandomTopologyConfig gen;
    gen.nodes = nodes;
    gen.max_degree = 4;
    gen.seed = seed;
    return gen;
}

std::vector<double> centralized_measures(const NetworkTopology& topo, double theta) {
    const auto net = build_pfsa(topo);
    const auto result = optimize_centralized(net, theta);
    std::vector<double> out(topo.node_count());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = result.measure.at(net.index.physical(static_cast<NodeId>(i)));
    }
    return out;
}

}  // namespace

TEST_CASE("node_step") {
    const double theta = 0.01;
    SUBCASE("the sink's first update from zero lands at theta") {
        auto sink = make_node(0, 0.0, 1.0,
                              {{1, 0.0, 0.3, false, true}, {2, 0.0, 0.4, false, true}});
        std::vector<NeighborReport> reports{{1, 0.0, 0.3}, {2, 0.0, 0.4}};
        const auto result = node_step(sink, reports, theta);
        CHECK(result.state.self_measure == doctest::Approx(theta).epsilon(1e-15));
    }
    SUBCASE("a neighbor report of 0.5 through lambda 0.2 contributes the (a3) value") {
        // virtual measure 0.99 * 0.8 * 0.5 = 0.396; with a single neighbor the
        // new self measure is (1-theta) * 0.396
        auto node = make_node(0, 0.0, 0.0, {{1, 0.0, 0.2, false, true}});
        std::vector<NeighborReport> reports{{1, 0.5, 0.2}};
        const auto result = node_step(node, reports, theta);
        CHECK(result.state.self_measure ==
              doctest::Approx(0.99 * 0.396).epsilon(1e-15));
        CHECK(result.state.neighbors[0].enabled);
        CHECK(result.state.neighbors[0].forwarding);  // 0.5 > new self measure
    }
    SUBCASE("all-zero reports with zero chi stay at zero") {
        auto node = make_node(0, 0.0, 0.0, {{1, 0.0, 0.2, false, true}});
        std::vector<NeighborReport> reports{{1, 0.0, 0.2}};
        const auto result = node_step(node, reports, theta);
        CHECK(result.state.self_measure == 0.0);
    }
    SUBCASE("a lagging virtual measure disables the fan-out") {
        auto node = make_node(0, 0.6, 0.0, {{1, 0.0, 0.1, false, true}});
        std::vector<NeighborReport> reports{{1, 0.3, 0.1}};  // virtual 0.267 < 0.6
        const auto result = node_step(node, reports, theta);
        CHECK_FALSE(result.state.neighbors[0].enabled);
        // the disabled row self-loops: (1-theta) * 0.6
        CHECK(result.state.self_measure == doctest::Approx(0.99 * 0.6).epsilon(1e-15));
    }
    SUBCASE("report set mismatches are protocol errors") {
        auto node = make_node(0, 0.0, 0.0, {{1, 0.0, 0.2, false, true}});
        std::vector<NeighborReport> wrong_id{{2, 0.0, 0.2}};
        CHECK_THROWS_AS(node_step(node, wrong_id, theta), ProtocolError);
        std::vector<NeighborReport> wrong_count;
        CHECK_THROWS_AS(node_step(node, wrong_count, theta), ProtocolError);
    }
    SUBCASE("a neighbor-less node jumps to its self-loop fixpoint") {
        auto isolated_sink = make_node(0, 0.0, 1.0, {});
        const auto result = node_step(isolated_sink, {}, theta);
        CHECK(result.state.self_measure == 1.0);
    }
}

TEST_CASE("reported measure applies the zeta attenuation") {
    auto node = make_node(0, 0.8, 0.0, {});
    CHECK(reported_measure(node) == 0.8);
    node.zeta = 0.5;
    CHECK(reported_measure(node) == 0.4);
    node.zeta = 0.0;
    CHECK(reported_measure(node) == 0.0);
    node.zeta = 1.5;
    CHECK_THROWS_AS(reported_measure(node), ContractError);
}

TEST_CASE("zeta 0.5 on a strong relay clears the neighbor's forwarding bit") {
    // relay reports 0.4 instead of 0.8; the neighbor at 0.41 was forwarding
    const double theta = 0.01;
    auto node = make_node(0, 0.41, 0.0, {{1, 0.8, 0.0, true, true}});
    std::vector<NeighborReport> reports{{1, 0.4, 0.0}};  // attenuated report
    const auto result = node_step(node, reports, theta);
    // virtual measure 0.99*0.4 = 0.396 < 0.41: propagation disabled, and the
    // new self measure 0.99*0.41 = 0.4059 still exceeds the 0.4 report
    CHECK_FALSE(result.state.neighbors[0].enabled);
    CHECK_FALSE(result.state.neighbors[0].forwarding);
    CHECK(result.forwarding_changes == 1);
}

TEST_CASE("bounds and monotonicity from zero init on every schedule") {
    for (const auto mode : {ScheduleMode::synchronous, ScheduleMode::permutation,
                            ScheduleMode::poisson}) {
        const auto topo = random_topology(small_random(5));
        const auto trace = run_to_convergence(topo, 0.05, Schedule{mode, 77}, {});
        REQUIRE(trace.converged);
        std::vector<double> prev(topo.node_count(), 0.0);
        for (const auto& round : trace.measures) {
            for (std::size_t i = 0; i < round.size(); ++i) {
                CHECK(round[i] >= -1e-15);
                CHECK(round[i] <= 1.0 + 1e-12);
                CHECK(round[i] >= prev[i] - 1e-12);
            }
            prev = round;
        }
    }
}

TEST_CASE("bounds hold under random initialization too") {
    const auto topo = random_topology(small_random(6));
    Rng rng(99);
    std::vector<double> init(topo.node_count());
    for (auto& v : init) v = rng.next_double();
    RunOptions options;
    options.init = init;
    const auto trace =
        run_to_convergence(topo, 0.05, Schedule{ScheduleMode::synchronous, 0}, {},
                           options);
    for (const auto& round : trace.measures) {
        for (double v : round) {
            CHECK(v >= -1e-15);
            CHECK(v <= 1.0 + 1e-12);
        }
    }
}

TEST_CASE("the distributed limit matches the centralized fixpoint") {
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
        const auto topo = random_topology(small_random(seed, 20));
        for (double theta : {0.1, 0.01}) {
            const auto trace = run_to_convergence(
                topo, theta, Schedule{ScheduleMode::synchronous, seed}, {});
            const auto central = centralized_measures(topo, theta);
            for (std::size_t i = 0; i < central.size(); ++i) {
                CHECK(trace.final_measures[i] ==
                      doctest::Approx(central[i]).epsilon(1e-9));
            }
        }
    }
}

TEST_CASE("a 50-node run satisfies the fixpoint equation on its final chain") {
    const auto topo = random_topology(small_random(42, 50));
    const double theta = 0.01;
    const auto trace =
        run_to_convergence(topo, theta, Schedule{ScheduleMode::synchronous, 42}, {});
    const auto net = build_pfsa(topo);
    const auto controlled =
        apply_disabling(net.pfsa, policy_to_disabling(trace.propagation, net));
    const auto nu =
        compute_measure(build_transition_matrix(controlled), net.pfsa.chi(), theta);
    for (std::size_t i = 0; i < topo.node_count(); ++i) {
        CHECK(trace.final_measures[i] ==
              doctest::Approx(nu.at(net.index.physical(static_cast<NodeId>(i))))
                  .epsilon(1e-9));
    }
}

TEST_CASE("schedules agree on the limit") {
    const auto topo = random_topology(small_random(9, 18));
    const double theta = 0.02;
    const auto sync =
        run_to_convergence(topo, theta, Schedule{ScheduleMode::synchronous, 1}, {});
    const auto perm =
        run_to_convergence(topo, theta, Schedule{ScheduleMode::permutation, 2}, {});
    const auto poisson =
        run_to_convergence(topo, theta, Schedule{ScheduleMode::poisson, 3}, {});
    for (std::size_t i = 0; i < topo.node_count(); ++i) {
        CHECK(sync.final_measures[i] ==
              doctest::Approx(perm.final_measures[i]).epsilon(1e-8));
        CHECK(sync.final_measures[i] ==
              doctest::Approx(poisson.final_measures[i]).epsilon(1e-8));
    }
}

TEST_CASE("initialization independence") {
    const auto topo = random_topology(small_random(12, 16));
    const double theta = 0.05;
    const auto zero =
        run_to_convergence(topo, theta, Schedule{ScheduleMode::synchronous, 4}, {});

    Rng rng(2718);
    std::vector<double> alpha(topo.node_count());
    double alpha_l1 = 0.0;
    for (auto& v : alpha) {
        v = rng.next_double();
        alpha_l1 += v;
    }
    RunOptions options;
    options.init = alpha;
    const auto seeded = run_to_convergence(
        topo, theta, Schedule{ScheduleMode::synchronous, 4}, {}, options);

    SUBCASE("limits agree") {
        for (std::size_t i = 0; i < topo.node_count(); ++i) {
            CHECK(zero.final_measures[i] ==
                  doctest::Approx(seeded.final_measures[i]).epsilon(1e-8));
        }
    }
    SUBCASE("the initialization's footprint decays geometrically") {
        for (std::size_t k : {std::size_t{1}, std::size_t{5}, std::size_t{20}}) {
            REQUIRE(zero.measures.size() > k);
            REQUIRE(seeded.measures.size() > k);
            const double bound = std::pow(1.0 - theta, static_cast<double>(k)) * alpha_l1;
            for (std::size_t i = 0; i < topo.node_count(); ++i) {
                const double dev =
                    std::abs(seeded.measures[k - 1][i] - zero.measures[k - 1][i]);
                CHECK(dev <= bound + 1e-12);
            }
        }
    }
}

TEST_CASE("extract_policy uses the strict rule") {
    SUBCASE("equal measures forward nowhere") {
        std::vector<NodeState> states;
        states.push_back(make_node(0, 0.5, 0.0, {{1, 0.5, 0.1, false, true}}));
        states.push_back(make_node(1, 0.5, 0.0, {{0, 0.5, 0.1, false, true}}));
        const auto policy = extract_policy(states);
        CHECK(policy.enabled[0].empty());
        CHECK(policy.enabled[1].empty());
    }
    SUBCASE("a converged chain forwards toward the sink only") {
        NetworkTopology topo;
        topo.nodes.resize(3);
        topo.sink = 2;
        topo.nodes[0].push_back({1, 0.2});
        topo.nodes[1].push_back({2, 0.2});
        topo.nodes[1].push_back({0, 0.2});
        const auto trace =
            run_to_convergence(topo, 0.05, Schedule{ScheduleMode::synchronous, 0}, {});
        CHECK(trace.forwarding.enabled[0] == std::vector<NodeId>{1});
        CHECK(trace.forwarding.enabled[1] == std::vector<NodeId>{2});
    }
    SUBCASE("a converged diamond keeps both uphill branches") {
        NetworkTopology topo;
        topo.nodes.resize(4);
        topo.sink = 3;
        topo.nodes[0] = {{1, 0.2}, {2, 0.2}};
        topo.nodes[1] = {{3, 0.1}};
        topo.nodes[2] = {{3, 0.1}};
        const auto trace =
            run_to_convergence(topo, 0.01, Schedule{ScheduleMode::synchronous, 0}, {});
        CHECK(trace.forwarding.enabled[0] == std::vector<NodeId>{1, 2});
        // and the centralized fixpoint keeps the same transitions enabled
        const auto net = build_pfsa(topo);
        const auto central = optimize_centralized(net, 0.01);
        CHECK(central.policy.allows(0, 1));
        CHECK(central.policy.allows(0, 2));
    }
}

TEST_CASE("zeta 0 makes a node invisible to forwarding") {
    NetworkTopology topo;
    topo.nodes.resize(4);
    topo.sink = 3;
    topo.nodes[0] = {{1, 0.2}, {2, 0.2}};
    topo.nodes[1] = {{3, 0.2}};
    topo.nodes[2] = {{3, 0.2}};
    Engine engine(topo, 0.05, Schedule{ScheduleMode::synchronous, 0});
    for (int r = 0; r < 400; ++r) engine.step_round();
    REQUIRE(engine.forwarding_policy().allows(0, 1));

    engine.set_zeta(1, 0.0);
    for (int r = 0; r < 400; ++r) engine.step_round();
    const auto policy = engine.forwarding_policy();
    CHECK_FALSE(policy.allows(0, 1));  // relay 1 now looks dead
    CHECK(policy.allows(0, 2));
}

TEST_CASE("round cap violations raise a numeric error naming a node") {
    const auto topo = random_topology(small_random(3, 12));
    RunOptions options;
    options.round_cap = 2;
    CHECK_THROWS_AS(run_to_convergence(topo, 0.01,
                                       Schedule{ScheduleMode::synchronous, 0}, {},
                                       options),
                    NumericError);
}

TEST_CASE("convergence profile") {
    SUBCASE("a single-node network converges immediately") {
        const auto rows = convergence_rounds_profile({1}, {0.1}, 2, 7);
        REQUIRE(rows.size() == 1);
        CHECK(rows[0].max_rounds <= 2);
    }
    SUBCASE("halving epsilon roughly doubles the rounds") {
        ProfileConfig config;
        config.max_degree = 4;
        const auto rows = convergence_rounds_profile({30}, {0.08, 0.04}, 3, 11, config);
        REQUIRE(rows.size() == 2);
        const double ratio = rows[1].mean_rounds / rows[0].mean_rounds;
        CHECK(ratio >= 1.5);
        CHECK(ratio <= 3.0);
    }
    SUBCASE("empty grids are refused") {
        CHECK_THROWS_AS(convergence_rounds_profile({}, {0.1}, 1, 0), ValidationError);
        CHECK_THROWS_AS(convergence_rounds_profile({5}, {}, 1, 0), ValidationError);
    }
}

TEST_CASE("trace csv has one row per node per round") {
    NetworkTopology topo;
    topo.nodes.resize(2);
    topo.sink = 1;
    topo.nodes[0].push_back({1, 0.5});
    const auto trace =
        run_to_convergence(topo, 0.1, Schedule{ScheduleMode::synchronous, 0}, {});
    const auto csv = trace_to_csv(trace);
    const auto lines = std::count(csv.begin(), csv.end(), '\n');
    CHECK(lines == static_cast<long>(1 + 2 * trace.rounds_total));
    CHECK(csv.rfind("round,node_id,measure,num_forwarding_changes\n", 0) == 0);
}
