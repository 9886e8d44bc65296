// sim.hpp -- packet-level discrete-event simulation over converged (or
// converging) policies: empirical delivery statistics, windowed
// drop-probability estimation, and the timed scenario battery (sink moves,
// drop noise, cluster kills, zeta modulation, traffic injection).

#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lmroute/engine.hpp"

namespace lmroute {

struct PacketOutcome {
    NodeId source = 0;
    std::vector<NodeId> path;  // physical nodes visited, starting at source
    bool delivered = false;
    std::size_t hops = 0;
};

struct SimulationResult {
    std::vector<NodeId> sources;
    std::vector<double> delivery_rate;  // aligned with sources
    std::vector<PacketOutcome> outcomes;
};

// Routes n_packets per source: each hop picks uniformly among the enabled
// neighbors and survives with probability 1-lambda. A hop drop destroys the
// packet (retries are folded into lambda). The policy must be loop-free.
SimulationResult simulate_packets(const NetworkTopology& topo, const Policy& policy,
                                  const std::vector<NodeId>& sources,
                                  std::size_t n_packets, std::uint64_t seed,
                                  bool record_outcomes = true);

// Whether the policy's forwarding graph is acyclic.
bool policy_is_loop_free(const Policy& policy, const NetworkTopology& topo);

// Exact per-node probability of reaching the sink under a policy, solved on
// the virtual-node-eliminated chain over physical nodes. Algebraically equal
// to performance_vector; cheap enough to evaluate every round.
std::vector<double> reduced_performance(const NetworkTopology& topo,
                                        const Policy& policy);

// Sliding-window drop estimator; reports the 0.5 prior until a link has seen
// min_samples outcomes.
class DropEstimator {
public:
    explicit DropEstimator(std::size_t window, std::size_t min_samples = 5);

    void record(NodeId from, NodeId to, bool dropped);
    double estimate(NodeId from, NodeId to) const;
    std::size_t samples(NodeId from, NodeId to) const;

private:
    struct WindowState {
        std::deque<char> window;
        std::size_t drops = 0;
        std::size_t total_seen = 0;
    };
    std::size_t window_;
    std::size_t min_samples_;
    std::map<std::pair<NodeId, NodeId>, WindowState> links_;
};

// Batch form: sliding-window mean of the last `window` outcomes per link.
std::map<std::pair<NodeId, NodeId>, double> estimate_drops(
    const std::map<std::pair<NodeId, NodeId>, std::vector<bool>>& outcomes,
    std::size_t window);

struct ScenarioEvent {
    enum class Type { move_sink, set_drop_noise, kill_nodes, set_zeta, inject_traffic };

    std::size_t round = 0;
    Type type = Type::move_sink;
    NodeId node = 0;                  // move_sink, set_zeta
    double value = 0.0;               // set_drop_noise sigma, set_zeta value
    std::optional<double> fraction;   // kill_nodes
    std::size_t cluster_size = 1;     // kill_nodes
    std::vector<NodeId> nodes;        // kill_nodes explicit victims
    std::vector<NodeId> sources;      // inject_traffic
    std::size_t packets_per_round = 0;
};

struct ScenarioScript {
    std::vector<ScenarioEvent> events;  // times non-decreasing
    std::size_t horizon = 0;            // total engine rounds to run
    std::uint64_t seed = 0;
};

void validate_script(const ScenarioScript& script, const NetworkTopology& topo);
ScenarioScript scenario_from_json(const nlohmann::json& j);
nlohmann::json scenario_to_json(const ScenarioScript& script);
ScenarioScript load_scenario(const std::filesystem::path& path);

struct MetricsRow {
    std::size_t round = 0;
    std::string event_tag;          // empty when no event fired this round
    double rho_norm = 0.0;          // ||rho||_2 on the true link drops
    std::size_t corrections = 0;    // forwarding-bit changes this round
    bool loop_free = true;          // snapshot forwarding graph acyclicity
    std::vector<double> probe_rho;  // aligned with ScenarioResult::probes
};

struct ScenarioOptions {
    std::size_t metrics_stride = 1;    // evaluate rho every k rounds
    std::size_t probe_count = 5;       // nodes at maximal sink distance
    bool closed_loop = false;          // let traffic observations drive estimates
    std::size_t obs_per_round = 4;     // noise-mode observations per link
    std::size_t estimator_window = 32;
    std::size_t estimator_min_samples = 5;
};

struct ScenarioResult {
    std::vector<MetricsRow> rows;
    std::vector<NodeId> probes;  // original (pre-kill) node ids
    std::size_t rounds_run = 0;
    std::vector<PacketOutcome> packet_log;  // from inject_traffic events
};

// Interleaves engine rounds with timed events. Probes are picked at maximal
// hop distance from the initial sink, excluding any explicitly scripted
// victims; cluster kills never remove the sink or a probe.
ScenarioResult run_scenario(const ScenarioScript& script, const NetworkTopology& topo,
                            double epsilon, const ScenarioOptions& options = {});

struct NoiseRunResult {
    std::vector<std::size_t> corrections;
    std::vector<double> rho_norm;
    double rho_norm_cv = 0.0;  // std/mean over the post-warmup window
};

// Converges the engine, then perturbs every link drop with clipped zero-mean
// Gaussian noise each round, re-estimates the drops through the sliding
// window and keeps updating; reports forwarding-correction and rho-norm
// series plus the rho-norm coefficient of variation after warmup.
NoiseRunResult noise_robustness_run(const NetworkTopology& topo, double epsilon,
                                    double noise_sigma, std::size_t rounds,
                                    const ScenarioOptions& options = {});

// clip bounds for noisy drops; keeps every chain strongly absorbing
inline constexpr double kNoiseDropFloor = 0.01;
inline constexpr double kNoiseDropCeil = 0.99;

// CSV with header "round,event_tag,rho_norm,corrections,probe_<id>..."
std::string metrics_to_csv(const ScenarioResult& result);

// one JSON object per line
std::string outcomes_to_jsonl(std::span<const PacketOutcome> outcomes);

}  // namespace lmroute
