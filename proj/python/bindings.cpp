// bindings.cpp -- pybind11 module exposing the main operations: topology
// handling, the centralized solve, the distributed engine, policy
// enumeration and packet simulation.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "lmroute/engine.hpp"
#include "lmroute/optimizer.hpp"
#include "lmroute/sim.hpp"

namespace py = pybind11;
using namespace lmroute;

namespace {

NetworkTopology topology_from_dict(const py::dict& d) {
    nlohmann::json j;
    j["n"] = d["n"].cast<std::size_t>();
    j["sink"] = d["sink"].cast<NodeId>();
    j["links"] = nlohmann::json::array();
    for (const auto& item : d["links"]) {
        const auto link = item.cast<py::dict>();
        j["links"].push_back({{"from", link["from"].cast<NodeId>()},
                              {"to", link["to"].cast<NodeId>()},
                              {"drop", link["drop"].cast<double>()}});
    }
    return topology_from_json(j);
}

py::dict topology_to_dict(const NetworkTopology& topo) {
    py::dict out;
    out["n"] = topo.node_count();
    out["sink"] = topo.sink;
    py::list links;
    for (std::size_t i = 0; i < topo.node_count(); ++i) {
        for (const auto& link : topo.nodes[i]) {
            py::dict entry;
            entry["from"] = i;
            entry["to"] = link.to;
            entry["drop"] = link.drop;
            links.append(entry);
        }
    }
    out["links"] = links;
    return out;
}

Policy policy_from_lists(const std::vector<std::vector<NodeId>>& enabled) {
    Policy policy;
    policy.enabled = enabled;
    for (auto& row : policy.enabled) std::sort(row.begin(), row.end());
    return policy;
}

}  // namespace

PYBIND11_MODULE(_lmroute, m) {
    m.doc() = "lossy ad-hoc network routing via distributed measure propagation";

    py::register_exception<ValidationError>(m, "ValidationError");
    py::register_exception<ContractError>(m, "ContractError");
    py::register_exception<NumericError>(m, "NumericError");

    m.def("random_topology",
          [](std::size_t n, std::size_t max_degree, double drop_lo, double drop_hi,
             double connectivity, std::uint64_t seed) {
              RandomTopologyConfig config{n, max_degree, drop_lo, drop_hi,
                                          connectivity, seed};
              return topology_to_dict(random_topology(config));
          },
          py::arg("n"), py::arg("max_degree") = 4, py::arg("drop_lo") = 0.05,
          py::arg("drop_hi") = 0.6, py::arg("connectivity") = 0.3,
          py::arg("seed") = 0,
          "Reproducible random topology with the sink reachable from every node.");

    m.def("theta_for_epsilon",
          [](double epsilon, const py::dict& topology) {
              const auto choice =
                  theta_for_epsilon(epsilon, topology_from_dict(topology));
              return py::make_tuple(choice.theta, choice.clamped);
          },
          py::arg("epsilon"), py::arg("topology"),
          "theta = epsilon / m^2 for the topology's maximum degree m.");

    m.def("solve",
          [](const py::dict& topology, double theta) {
              const auto topo = topology_from_dict(topology);
              const auto net = build_pfsa(topo);
              const auto result = optimize_centralized(net, theta);
              const auto perf = performance_vector(net, result.policy);
              py::dict out;
              std::vector<double> measures(topo.node_count());
              for (std::size_t i = 0; i < measures.size(); ++i) {
                  measures[i] =
                      result.measure.at(net.index.physical(static_cast<NodeId>(i)));
              }
              out["measures"] = measures;
              out["rho"] = perf.rho;
              out["enabled"] = result.policy.enabled;
              out["iterations"] = result.iterations;
              out["states"] = net.index.total();
              return out;
          },
          py::arg("topology"), py::arg("theta"),
          "Centralized measure-maximizing fixpoint; returns measures, rho and "
          "the enabled-neighbor policy.");

    m.def("distribute",
          [](const py::dict& topology, double theta, const std::string& schedule,
             std::uint64_t seed, double tol, std::size_t quiet_rounds) {
              const auto topo = topology_from_dict(topology);
              Schedule sched{schedule_mode_from_string(schedule), seed};
              ConvergenceCriterion criterion{tol, quiet_rounds};
              RunOptions options;
              options.record_trace = false;
              const auto trace =
                  run_to_convergence(topo, theta, sched, criterion, options);
              py::dict out;
              out["measures"] = trace.final_measures;
              out["rounds_used"] = trace.rounds_used;
              out["forwarding"] = trace.forwarding.enabled;
              out["propagation"] = trace.propagation.enabled;
              out["converged"] = trace.converged;
              return out;
          },
          py::arg("topology"), py::arg("theta"), py::arg("schedule") = "sync",
          py::arg("seed") = 0, py::arg("tol") = 1e-12, py::arg("quiet_rounds") = 3,
          "Distributed per-node protocol run to convergence.");

    m.def("performance",
          [](const py::dict& topology, const std::vector<std::vector<NodeId>>& enabled) {
              const auto topo = topology_from_dict(topology);
              const auto net = build_pfsa(topo);
              return performance_vector(net, policy_from_lists(enabled)).rho;
          },
          py::arg("topology"), py::arg("enabled"),
          "Per-node probability of reaching the sink under a policy.");

    m.def("enumerate_policies",
          [](const py::dict& topology) {
              const auto topo = topology_from_dict(topology);
              const auto result = enumerate_policies(build_pfsa(topo));
              py::dict out;
              out["envelope"] = result.envelope.rho;
              out["policies_evaluated"] = result.policies_evaluated;
              return out;
          },
          py::arg("topology"),
          "Exhaustive policy sweep; returns the utopian envelope.");

    m.def("simulate_packets",
          [](const py::dict& topology, const std::vector<std::vector<NodeId>>& enabled,
             const std::vector<NodeId>& sources, std::size_t n_packets,
             std::uint64_t seed) {
              const auto topo = topology_from_dict(topology);
              const auto result = simulate_packets(topo, policy_from_lists(enabled),
                                                   sources, n_packets, seed, false);
              py::dict out;
              out["sources"] = result.sources;
              out["delivery_rate"] = result.delivery_rate;
              return out;
          },
          py::arg("topology"), py::arg("enabled"), py::arg("sources"),
          py::arg("n_packets"), py::arg("seed") = 0,
          "Monte-Carlo packet routing under a loop-free policy.");
}
