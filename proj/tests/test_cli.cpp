#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lmroute/network.hpp"

using namespace lmroute;
namespace fs = std::filesystem;

namespace {

std::string binary() {
    const char* bin = std::getenv("LMROUTE_BIN");
    REQUIRE(bin != nullptr);
    return bin;
}

int run(const std::string& args) {
    const std::string cmd = binary() + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string run_capture(const std::string& args, const fs::path& capture) {
    const std::string cmd =
        binary() + " " + args + " > " + capture.string() + " 2>&1";
    REQUIRE(WEXITSTATUS(std::system(cmd.c_str())) == 0);
    std::ifstream in(capture);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name)
        : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

NetworkTopology lossless_chain(std::size_t n) {
    NetworkTopology topo;
    topo.nodes.resize(n);
    topo.sink = static_cast<NodeId>(n - 1);
    for (NodeId i = 0; i + 1 < n; ++i) topo.nodes[i].push_back({i + 1, 0.0});
    return topo;
}

}  // namespace

TEST_CASE("solve on a lossless chain emits an all-ones rho") {
    TempDir dir("lmroute_cli_solve");
    const auto topo_path = dir.path / "topo.json";
    save_topology(lossless_chain(4), topo_path);
    const int code = run("solve --topology " + topo_path.string() +
                         " --epsilon 0.05 --out " + dir.path.string());
    CHECK(code == 0);
    const auto rho = slurp(dir.path / "rho.csv");
    CHECK(rho == "node_id,rho\n0,1\n1,1\n2,1\n3,1\n");
    CHECK(fs::exists(dir.path / "measures.csv"));
    CHECK(fs::exists(dir.path / "policy.json"));
}

TEST_CASE("solve output is byte-identical across runs") {
    TempDir dir("lmroute_cli_determinism");
    RandomTopologyConfig gen;
    gen.nodes = 12;
    gen.max_degree = 4;
    gen.seed = 5;
    save_topology(random_topology(gen), dir.path / "topo.json");

    const auto out1 = dir.path / "run1";
    const auto out2 = dir.path / "run2";
    REQUIRE(run("solve --topology " + (dir.path / "topo.json").string() +
                " --epsilon 0.04 --out " + out1.string()) == 0);
    REQUIRE(run("solve --topology " + (dir.path / "topo.json").string() +
                " --epsilon 0.04 --out " + out2.string()) == 0);
    CHECK(slurp(out1 / "measures.csv") == slurp(out2 / "measures.csv"));
    CHECK(slurp(out1 / "rho.csv") == slurp(out2 / "rho.csv"));
    CHECK(slurp(out1 / "policy.json") == slurp(out2 / "policy.json"));
}

TEST_CASE("distribute reports a tiny gap against the centralized oracle") {
    TempDir dir("lmroute_cli_distribute");
    RandomTopologyConfig gen;
    gen.nodes = 15;
    gen.max_degree = 4;
    gen.seed = 9;
    save_topology(random_topology(gen), dir.path / "topo.json");
    REQUIRE(run("distribute --topology " + (dir.path / "topo.json").string() +
                " --theta 0.05 --out " + dir.path.string()) == 0);
    nlohmann::json report;
    std::ifstream(dir.path / "convergence_report.json") >> report;
    CHECK(report.at("max_gap_vs_centralized").get<double>() <= 1e-9);
    CHECK(report.at("fixpoint_residual").get<double>() <= 1e-9);
    CHECK(report.at("converged").get<bool>());
    CHECK(fs::exists(dir.path / "trace.csv"));
}

TEST_CASE("sync and poisson schedules reach the same limits") {
    TempDir dir("lmroute_cli_sched");
    RandomTopologyConfig gen;
    gen.nodes = 10;
    gen.max_degree = 3;
    gen.seed = 4;
    save_topology(random_topology(gen), dir.path / "topo.json");
    const auto out_sync = dir.path / "sync";
    const auto out_poisson = dir.path / "poisson";
    REQUIRE(run("distribute --topology " + (dir.path / "topo.json").string() +
                " --theta 0.05 --schedule sync --out " + out_sync.string()) == 0);
    REQUIRE(run("distribute --topology " + (dir.path / "topo.json").string() +
                " --theta 0.05 --schedule poisson --seed 2 --out " +
                out_poisson.string()) == 0);
    // both land within 1e-9 of the same centralized limit
    nlohmann::json a, b;
    std::ifstream(out_sync / "convergence_report.json") >> a;
    std::ifstream(out_poisson / "convergence_report.json") >> b;
    CHECK(a.at("max_gap_vs_centralized").get<double>() <= 1e-9);
    CHECK(b.at("max_gap_vs_centralized").get<double>() <= 1e-9);
    CHECK(slurp(out_sync / "policy.json") == slurp(out_poisson / "policy.json"));
}

TEST_CASE("the run header reports the expanded state count") {
    TempDir dir("lmroute_cli_header");
    // six nodes with sixteen directed links expand to 23 automaton states
    NetworkTopology topo;
    topo.nodes.resize(6);
    topo.sink = 5;
    for (NodeId i = 0; i < 6; ++i) {
        topo.nodes[i].push_back({static_cast<NodeId>((i + 1) % 6), 0.2});
        topo.nodes[(i + 1) % 6].push_back({i, 0.2});
    }
    topo.nodes[0].push_back({3, 0.2});
    topo.nodes[3].push_back({0, 0.2});
    topo.nodes[1].push_back({4, 0.2});
    topo.nodes[4].push_back({1, 0.2});
    REQUIRE(topo.link_count() == 16);
    save_topology(topo, dir.path / "topo.json");
    const auto header = run_capture("solve --topology " +
                                        (dir.path / "topo.json").string() +
                                        " --epsilon 0.05 --out " + dir.path.string(),
                                    dir.path / "stdout.txt");
    CHECK(header.find("states=23") != std::string::npos);
}

TEST_CASE("random initialization converges to the zero-init policy") {
    TempDir dir("lmroute_cli_init");
    RandomTopologyConfig gen;
    gen.nodes = 14;
    gen.max_degree = 4;
    gen.seed = 27;
    save_topology(random_topology(gen), dir.path / "topo.json");
    const auto out_zero = dir.path / "zero";
    const auto out_random = dir.path / "random";
    REQUIRE(run("distribute --topology " + (dir.path / "topo.json").string() +
                " --theta 0.05 --out " + out_zero.string()) == 0);
    REQUIRE(run("distribute --topology " + (dir.path / "topo.json").string() +
                " --theta 0.05 --init random:42 --out " + out_random.string()) == 0);
    CHECK(slurp(out_zero / "policy.json") == slurp(out_random / "policy.json"));
    nlohmann::json report;
    std::ifstream(out_random / "convergence_report.json") >> report;
    CHECK(report.at("max_gap_vs_centralized").get<double>() <= 1e-8);
}

TEST_CASE("exactly one of epsilon and theta is accepted") {
    TempDir dir("lmroute_cli_rate");
    save_topology(lossless_chain(3), dir.path / "topo.json");
    const auto topo = (dir.path / "topo.json").string();
    CHECK(run("solve --topology " + topo) == 2);
    CHECK(run("solve --topology " + topo + " --epsilon 0.1 --theta 0.1") == 2);
}

TEST_CASE("validation failures exit with code 2") {
    TempDir dir("lmroute_cli_bad");
    {
        std::ofstream out(dir.path / "bad.json");
        out << R"({"n": 2, "sink": 0, "links": [{"from": 0, "to": 1, "drop": 1.5}]})";
    }
    CHECK(run("solve --topology " + (dir.path / "bad.json").string() +
              " --epsilon 0.1") == 2);
    CHECK(run("check --topology " + (dir.path / "bad.json").string()) == 2);
    CHECK(run("solve --topology " + (dir.path / "missing.json").string() +
              " --epsilon 0.1") == 2);
}

TEST_CASE("sweep requires a non-empty grid") {
    CHECK(run("sweep --trials 1") == 2);
}

TEST_CASE("sweep emits plot-ready columns") {
    TempDir dir("lmroute_cli_sweep");
    REQUIRE(run("sweep --grid-n 8 --grid-eps 0.2,0.1 --trials 2 --seed 3 --out " +
                dir.path.string()) == 0);
    const auto csv = slurp(dir.path / "sweep.csv");
    CHECK(csv.rfind("n,epsilon,mean_rounds,min_rounds,max_rounds\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}

TEST_CASE("scenario command writes metrics") {
    TempDir dir("lmroute_cli_scenario");
    RandomTopologyConfig gen;
    gen.nodes = 12;
    gen.max_degree = 3;
    gen.seed = 6;
    save_topology(random_topology(gen), dir.path / "topo.json");
    {
        std::ofstream out(dir.path / "scenario.json");
        out << R"({"horizon": 120, "seed": 4, "events":
                   [{"round": 60, "type": "set_drop_noise", "sigma": 0.1}]})";
    }
    REQUIRE(run("scenario --topology " + (dir.path / "topo.json").string() +
                " --scenario " + (dir.path / "scenario.json").string() +
                " --epsilon 0.3 --out " + dir.path.string()) == 0);
    const auto csv = slurp(dir.path / "metrics.csv");
    CHECK(csv.rfind("round,event_tag,rho_norm,corrections,loop_free", 0) == 0);
}

TEST_CASE("enumerate refuses oversized instances with exit 2") {
    TempDir dir("lmroute_cli_enumerate");
    RandomTopologyConfig gen;
    gen.nodes = 20;
    gen.max_degree = 6;
    gen.connectivity = 0.9;
    gen.seed = 8;
    const auto topo = random_topology(gen);
    REQUIRE(topo.link_count() > 24);
    save_topology(topo, dir.path / "topo.json");
    CHECK(run("enumerate --topology " + (dir.path / "topo.json").string() +
              " --out " + dir.path.string()) == 2);
}

TEST_CASE("enumerate writes the envelope for small instances") {
    TempDir dir("lmroute_cli_enum_small");
    save_topology(lossless_chain(3), dir.path / "topo.json");
    REQUIRE(run("enumerate --topology " + (dir.path / "topo.json").string() +
                " --out " + dir.path.string()) == 0);
    const auto csv = slurp(dir.path / "envelope.csv");
    CHECK(csv == "node_id,rho\n0,1\n1,1\n2,1\n");
}

TEST_CASE("the check battery passes on default seeds") {
    CHECK(run("check") == 0);
}
