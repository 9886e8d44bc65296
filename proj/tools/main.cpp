// lmroute -- command line front end.
//
// Subcommands: solve (centralized fixpoint), distribute (per-node protocol),
// enumerate (exhaustive policy sweep), scenario (timed event battery),
// sweep (convergence-rounds grid), check (one-shot property battery).
//
// Exit codes: 0 success, 2 input/validation error, 3 numeric error,
// 4 property failure.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lmroute/engine.hpp"
#include "lmroute/optimizer.hpp"
#include "lmroute/sim.hpp"

namespace fs = std::filesystem;
using namespace lmroute;

namespace {

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct CommonOptions {
    std::string topology_path;
    std::string scenario_path;
    std::optional<double> epsilon;
    std::optional<double> theta;
    std::string schedule = "sync";
    std::uint64_t seed = 0;
    std::string out_dir = ".";
    std::string format = "csv";
};

void add_rate_flags(CLI::App* cmd, CommonOptions& opts) {
    auto* group = cmd->add_option_group("rate", "exactly one of epsilon/theta");
    group->add_option("--epsilon", opts.epsilon, "optimality slack; theta = epsilon/m^2");
    group->add_option("--theta", opts.theta, "discount parameter, direct");
    group->require_option(1);
}

// resolves (epsilon|theta) against a topology; prints the derivation
double resolve_theta(const CommonOptions& opts, const NetworkTopology& topo) {
    if (opts.theta) {
        std::cout << "theta=" << fmt_double(*opts.theta) << " (direct)\n";
        return *opts.theta;
    }
    const auto choice = theta_for_epsilon(*opts.epsilon, topo);
    std::cout << "theta=" << fmt_double(choice.theta)
              << " (epsilon=" << fmt_double(*opts.epsilon)
              << ", m=" << topo.max_degree() << ")";
    if (choice.clamped) std::cout << " [clamped: topology has no links]";
    std::cout << "\n";
    return choice.theta;
}

double resolve_epsilon(const CommonOptions& opts, const NetworkTopology& topo) {
    if (opts.epsilon) return *opts.epsilon;
    const auto m = static_cast<double>(std::max<std::size_t>(topo.max_degree(), 1));
    return *opts.theta * m * m;
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << content;
}

std::string measures_csv(const std::vector<double>& measures) {
    std::string out = "node_id,measure\n";
    for (std::size_t i = 0; i < measures.size(); ++i) {
        out += std::to_string(i) + "," + fmt_double(measures[i]) + "\n";
    }
    return out;
}

nlohmann::json measures_json(const std::vector<double>& measures) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < measures.size(); ++i) {
        rows.push_back({{"node_id", i}, {"measure", measures[i]}});
    }
    return rows;
}

std::vector<double> physical_measures(const MeasureVector& nu, const NetworkPfsa& net) {
    std::vector<double> out(net.index.physical_count());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = nu.at(net.index.physical(static_cast<NodeId>(i)));
    }
    return out;
}

void print_model_header(const NetworkTopology& topo, const NetworkPfsa& net) {
    std::cout << "nodes=" << topo.node_count() << " links=" << topo.link_count()
              << " sink=" << topo.sink << " states=" << net.index.total()
              << " (" << net.index.virtual_links().size() << " virtual, "
              << topo.node_count() << " physical, 1 dump)\n";
}

int cmd_solve(const CommonOptions& opts) {
    const auto topo = load_topology(opts.topology_path);
    const auto net = build_pfsa(topo);
    print_model_header(topo, net);
    const double theta = resolve_theta(opts, topo);

    const auto result = optimize_centralized(net, theta);
    const auto perf = performance_vector(net, result.policy);
    const auto node_measures = physical_measures(result.measure, net);
    std::cout << "fixpoint after " << result.iterations << " iterations, "
              << result.disabling.size() << " transitions disabled\n";

    const fs::path out(opts.out_dir);
    fs::create_directories(out);
    if (opts.format == "json") {
        write_file(out / "measures.json", measures_json(node_measures).dump(2) + "\n");
        nlohmann::json rho = nlohmann::json::array();
        for (std::size_t i = 0; i < perf.rho.size(); ++i) {
            rho.push_back({{"node_id", i}, {"rho", perf.rho[i]}});
        }
        write_file(out / "rho.json", rho.dump(2) + "\n");
    } else {
        write_file(out / "measures.csv", measures_csv(node_measures));
        write_file(out / "rho.csv", performance_to_csv(perf));
    }
    write_file(out / "policy.json", policy_to_json(result.policy).dump(2) + "\n");
    return 0;
}

// --init zero (default) or random:SEED
std::optional<std::vector<double>> parse_init(const std::string& init,
                                              std::size_t nodes) {
    if (init.empty() || init == "zero") return std::nullopt;
    if (init.rfind("random", 0) == 0) {
        std::uint64_t seed = 0;
        if (init.size() > 7 && init[6] == ':') {
            seed = std::stoull(init.substr(7));
        } else if (init != "random") {
            throw ValidationError("bad --init value '" + init + "'");
        }
        Rng rng(seed);
        std::vector<double> values(nodes);
        for (auto& v : values) v = rng.next_double();
        return values;
    }
    throw ValidationError("bad --init value '" + init + "' (want zero|random[:seed])");
}

int cmd_distribute(const CommonOptions& opts, const std::string& init) {
    const auto topo = load_topology(opts.topology_path);
    const auto net = build_pfsa(topo);
    print_model_header(topo, net);
    const double theta = resolve_theta(opts, topo);

    Schedule schedule{schedule_mode_from_string(opts.schedule), opts.seed};
    ConvergenceCriterion criterion;
    RunOptions run_options;
    run_options.init = parse_init(init, topo.node_count());
    const auto trace = run_to_convergence(topo, theta, schedule, criterion, run_options);
    std::cout << "converged in " << trace.rounds_used << " rounds\n";

    // oracle gaps for the report
    const auto central = optimize_centralized(net, theta);
    const auto central_measures = physical_measures(central.measure, net);
    double gap = 0.0;
    for (std::size_t i = 0; i < central_measures.size(); ++i) {
        gap = std::max(gap, std::abs(trace.final_measures[i] - central_measures[i]));
    }
    const auto controlled =
        apply_disabling(net.pfsa, policy_to_disabling(trace.propagation, net));
    const auto nu = compute_measure(build_transition_matrix(controlled),
                                    net.pfsa.chi(), theta);
    double residual = 0.0;
    for (std::size_t i = 0; i < central_measures.size(); ++i) {
        residual = std::max(residual,
                            std::abs(trace.final_measures[i] -
                                     nu.at(net.index.physical(static_cast<NodeId>(i)))));
    }

    const fs::path out(opts.out_dir);
    fs::create_directories(out);
    write_file(out / "trace.csv", trace_to_csv(trace));
    write_file(out / "policy.json", policy_to_json(trace.forwarding).dump(2) + "\n");
    nlohmann::json report{{"rounds_used", trace.rounds_used},
                          {"converged", trace.converged},
                          {"theta", theta},
                          {"schedule", opts.schedule},
                          {"seed", opts.seed},
                          {"tol", criterion.tol},
                          {"quiet_rounds", criterion.quiet_rounds},
                          {"max_gap_vs_centralized", gap},
                          {"fixpoint_residual", residual}};
    write_file(out / "convergence_report.json", report.dump(2) + "\n");
    std::cout << "max gap vs centralized: " << fmt_double(gap) << "\n";
    return 0;
}

int cmd_enumerate(const CommonOptions& opts) {
    const auto topo = load_topology(opts.topology_path);
    const auto net = build_pfsa(topo);
    print_model_header(topo, net);

    const auto result = enumerate_policies(net);
    std::cout << "evaluated " << result.policies_evaluated << " policies\n";

    const fs::path out(opts.out_dir);
    fs::create_directories(out);
    write_file(out / "envelope.csv", performance_to_csv(result.envelope));
    nlohmann::json argmax = nlohmann::json::array();
    for (const auto& policy : result.argmax) argmax.push_back(policy_to_json(policy));
    write_file(out / "argmax_policies.json", argmax.dump(2) + "\n");
    return 0;
}

int cmd_scenario(const CommonOptions& opts) {
    const auto topo = load_topology(opts.topology_path);
    const auto script = load_scenario(opts.scenario_path);
    const auto net = build_pfsa(topo);
    print_model_header(topo, net);
    const double epsilon = resolve_epsilon(opts, topo);
    std::cout << "epsilon=" << fmt_double(epsilon) << " horizon=" << script.horizon
              << " events=" << script.events.size() << "\n";

    const auto result = run_scenario(script, topo, epsilon);
    std::cout << "probes:";
    for (NodeId p : result.probes) std::cout << " " << p;
    std::cout << "\n";

    const fs::path out(opts.out_dir);
    fs::create_directories(out);
    if (opts.format == "json") {
        nlohmann::json rows = nlohmann::json::array();
        for (const auto& row : result.rows) {
            rows.push_back({{"round", row.round},
                            {"event_tag", row.event_tag},
                            {"rho_norm", row.rho_norm},
                            {"corrections", row.corrections},
                            {"loop_free", row.loop_free},
                            {"probe_rho", row.probe_rho}});
        }
        write_file(out / "metrics.json",
                   nlohmann::json{{"probes", result.probes}, {"rows", rows}}.dump(2) +
                       "\n");
    } else {
        write_file(out / "metrics.csv", metrics_to_csv(result));
    }
    if (!result.packet_log.empty()) {
        write_file(out / "packets.jsonl", outcomes_to_jsonl(result.packet_log));
    }
    return 0;
}

int cmd_sweep(const CommonOptions& opts, const std::vector<std::size_t>& grid_n,
              const std::vector<double>& grid_eps, std::size_t trials) {
    if (grid_n.empty() || grid_eps.empty()) {
        throw ValidationError("sweep: --grid-n and --grid-eps must be non-empty");
    }
    if (trials == 0) throw ValidationError("sweep: --trials must be >= 1");
    std::cout << "sweep over " << grid_n.size() << " sizes x " << grid_eps.size()
              << " epsilons, " << trials << " trials each\n";
    const auto rows = convergence_rounds_profile(grid_n, grid_eps, trials, opts.seed);
    const fs::path out(opts.out_dir);
    fs::create_directories(out);
    if (opts.format == "json") {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& row : rows) {
            j.push_back({{"n", row.nodes},
                         {"epsilon", row.epsilon},
                         {"mean_rounds", row.mean_rounds},
                         {"min_rounds", row.min_rounds},
                         {"max_rounds", row.max_rounds}});
        }
        write_file(out / "sweep.json", j.dump(2) + "\n");
    } else {
        write_file(out / "sweep.csv", profile_to_csv(rows));
    }
    for (const auto& row : rows) {
        std::cout << "n=" << row.nodes << " eps=" << fmt_double(row.epsilon)
                  << " mean_rounds=" << fmt_double(row.mean_rounds)
                  << " min=" << row.min_rounds << " max=" << row.max_rounds << "\n";
    }
    return 0;
}

struct PropertyOutcome {
    std::string name;
    bool passed;
    std::uint64_t seed;
    std::string detail;
};

int cmd_check(const CommonOptions& opts) {
    if (!opts.topology_path.empty()) {
        // surfaces validation failures in user fixtures with exit 2
        const auto topo = load_topology(opts.topology_path);
        std::cout << "fixture " << opts.topology_path << " validates ("
                  << topo.node_count() << " nodes)\n";
    }
    std::vector<PropertyOutcome> outcomes;
    const std::uint64_t base_seed = opts.seed;

    // bounds, monotonicity and oracle equivalence over a small battery
    {
        bool bounds_ok = true, mono_ok = true, oracle_ok = true, loops_ok = true,
             spectral_ok = true;
        std::string detail;
        for (std::uint64_t t = 0; t < 5 && detail.empty(); ++t) {
            const std::uint64_t seed = derive_seed(base_seed, 100 + t);
            RandomTopologyConfig gen;
            gen.nodes = 6 + 5 * t;
            gen.max_degree = 4;
            gen.seed = seed;
            const auto topo = random_topology(gen);
            const auto net = build_pfsa(topo);
            for (double theta : {0.1, 0.01}) {
                const auto trace = run_to_convergence(
                    topo, theta, Schedule{ScheduleMode::synchronous, seed}, {});
                for (const auto& round : trace.measures) {
                    for (double v : round) {
                        if (v < -1e-15 || v > 1.0 + 1e-12) bounds_ok = false;
                    }
                }
                for (std::size_t i = 0; i < topo.node_count(); ++i) {
                    double prev = 0.0;
                    for (const auto& round : trace.measures) {
                        if (round[i] < prev - 1e-12) mono_ok = false;
                        prev = round[i];
                    }
                }
                const auto central = optimize_centralized(net, theta);
                for (std::size_t i = 0; i < topo.node_count(); ++i) {
                    const double c =
                        central.measure.at(net.index.physical(static_cast<NodeId>(i)));
                    if (std::abs(trace.final_measures[i] - c) > 1e-8) oracle_ok = false;
                }
                if (!policy_is_loop_free(trace.forwarding, topo)) loops_ok = false;
                const auto controlled = apply_disabling(
                    net.pfsa, policy_to_disabling(trace.propagation, net));
                const auto pi = build_transition_matrix(controlled);
                if (is_strongly_absorbing(pi).strongly_absorbing) {
                    if (!spectral_bound_report(pi).bound_holds) spectral_ok = false;
                }
                if (!(bounds_ok && mono_ok && oracle_ok && loops_ok && spectral_ok)) {
                    detail = "seed " + std::to_string(seed) +
                             " theta " + fmt_double(theta);
                }
            }
        }
        outcomes.push_back({"bounds [0,1]", bounds_ok, base_seed, ""});
        outcomes.push_back({"monotone from zero init", mono_ok, base_seed, ""});
        outcomes.push_back({"distributed = centralized", oracle_ok, base_seed, detail});
        outcomes.push_back({"loop-free forwarding", loops_ok, base_seed, ""});
        outcomes.push_back({"spectral bound", spectral_ok, base_seed, ""});
    }

    // epsilon-optimality on enumerable instances
    {
        bool ok = true;
        for (std::uint64_t t = 0; t < 2; ++t) {
            const std::uint64_t seed = derive_seed(base_seed, 200 + t);
            RandomTopologyConfig gen;
            gen.nodes = 5;
            gen.max_degree = 2;
            gen.connectivity = 0.3;
            gen.seed = seed;
            const auto topo = random_topology(gen);
            const auto net = build_pfsa(topo);
            if (net.index.virtual_links().size() > 12) continue;
            const double epsilon = 0.05;
            const double theta = theta_for_epsilon(epsilon, topo).theta;
            const auto fixpoint = optimize_centralized(net, theta);
            const auto rho = performance_vector(net, fixpoint.policy);
            const auto sweep = enumerate_policies(net);
            for (std::size_t i = 0; i < rho.rho.size(); ++i) {
                if (sweep.envelope.rho[i] - rho.rho[i] > epsilon) ok = false;
            }
        }
        outcomes.push_back({"epsilon-optimality (enumerable)", ok, base_seed, ""});
    }

    // enumeration cap refusal
    {
        RandomTopologyConfig gen;
        gen.nodes = 30;
        gen.max_degree = 6;
        gen.connectivity = 0.9;
        gen.seed = derive_seed(base_seed, 300);
        const auto topo = random_topology(gen);
        const auto net = build_pfsa(topo);
        bool refused = false;
        if (net.index.virtual_links().size() > kEnumerationCap) {
            try {
                enumerate_policies(net);
            } catch (const ValidationError&) {
                refused = true;
            }
        }
        outcomes.push_back({"enumeration cap refusal", refused, base_seed, ""});
    }

    bool all_ok = true;
    for (const auto& outcome : outcomes) {
        std::cout << (outcome.passed ? "[PASS] " : "[FAIL] ") << outcome.name
                  << " (seed=" << outcome.seed << ")";
        if (!outcome.detail.empty()) std::cout << " " << outcome.detail;
        std::cout << "\n";
        all_ok = all_ok && outcome.passed;
    }
    return all_ok ? 0 : 4;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"lossy ad-hoc network routing via distributed measure propagation"};
    app.require_subcommand(1);

    CommonOptions opts;
    std::vector<std::size_t> grid_n;
    std::vector<double> grid_eps;
    std::size_t trials = 5;
    std::string init = "zero";

    auto* solve = app.add_subcommand("solve", "centralized fixpoint solve");
    solve->add_option("--topology", opts.topology_path, "topology JSON")->required();
    add_rate_flags(solve, opts);

    auto* distribute =
        app.add_subcommand("distribute", "distributed per-node protocol run");
    distribute->add_option("--topology", opts.topology_path, "topology JSON")->required();
    add_rate_flags(distribute, opts);
    distribute->add_option("--schedule", opts.schedule, "sync|perm|poisson")
        ->check(CLI::IsMember({"sync", "perm", "poisson"}));
    distribute->add_option("--init", init, "zero|random[:seed] initial measures");

    auto* enumerate = app.add_subcommand("enumerate", "exhaustive policy sweep");
    enumerate->add_option("--topology", opts.topology_path, "topology JSON")->required();

    auto* scenario = app.add_subcommand("scenario", "timed event battery");
    scenario->add_option("--topology", opts.topology_path, "topology JSON")->required();
    scenario->add_option("--scenario", opts.scenario_path, "scenario JSON")->required();
    add_rate_flags(scenario, opts);

    auto* sweep = app.add_subcommand("sweep", "convergence rounds over (n, epsilon) grid");
    sweep->add_option("--grid-n", grid_n, "network sizes")->delimiter(',');
    sweep->add_option("--grid-eps", grid_eps, "epsilon values")->delimiter(',');
    sweep->add_option("--trials", trials, "trials per grid point");

    auto* check = app.add_subcommand("check", "one-shot property battery");
    check->add_option("--topology", opts.topology_path,
                      "optional fixture to validate first");

    for (auto* cmd : {solve, distribute, enumerate, scenario, sweep, check}) {
        cmd->add_option("--seed", opts.seed, "random seed");
        cmd->add_option("--out", opts.out_dir, "output directory");
        cmd->add_option("--format", opts.format, "csv|json")
            ->check(CLI::IsMember({"csv", "json"}));
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (solve->parsed()) return cmd_solve(opts);
        if (distribute->parsed()) return cmd_distribute(opts, init);
        if (enumerate->parsed()) return cmd_enumerate(opts);
        if (scenario->parsed()) return cmd_scenario(opts);
        if (sweep->parsed()) return cmd_sweep(opts, grid_n, grid_eps, trials);
        if (check->parsed()) return cmd_check(opts);
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
