#include "lmroute/measure.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <sstream>

namespace lmroute {

namespace {

// adjacency over positive entries, self-loops excluded
std::vector<std::vector<StateId>> distinct_edges(const Eigen::MatrixXd& m) {
    const auto n = static_cast<std::size_t>(m.rows());
    std::vector<std::vector<StateId>> adj(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i != j && m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) > 0.0) {
                adj[i].push_back(j);
            }
        }
    }
    return adj;
}

// states from which no state in `targets` is reachable
std::vector<StateId> unreachable_from(const Eigen::MatrixXd& m,
                                      const std::vector<StateId>& targets) {
    const auto n = static_cast<std::size_t>(m.rows());
    std::vector<char> seen(n, 0);
    std::deque<StateId> queue;
    for (StateId t : targets) {
        if (!seen[t]) {
            seen[t] = 1;
            queue.push_back(t);
        }
    }
    while (!queue.empty()) {
        const StateId v = queue.front();
        queue.pop_front();
        for (std::size_t u = 0; u < n; ++u) {
            if (!seen[u] &&
                m(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(v)) > 0.0) {
                seen[u] = 1;
                queue.push_back(u);
            }
        }
    }
    std::vector<StateId> out;
    for (std::size_t i = 0; i < n; ++i) {
        if (!seen[i]) out.push_back(i);
    }
    return out;
}

}  // namespace

StochasticMatrix::StochasticMatrix(Eigen::MatrixXd m) : m_(std::move(m)) {
    if (m_.rows() != m_.cols()) {
        throw ValidationError("stochastic matrix must be square");
    }
    for (Eigen::Index i = 0; i < m_.rows(); ++i) {
        double sum = 0.0;
        for (Eigen::Index j = 0; j < m_.cols(); ++j) {
            const double v = m_(i, j);
            if (v < 0.0 || v > 1.0 + 1e-15) {
                throw ValidationError("stochastic matrix entry (" + std::to_string(i) +
                                      "," + std::to_string(j) + ") outside [0,1]");
            }
            sum += v;
        }
        if (std::abs(sum - 1.0) > kRowSumTol) {
            throw ValidationError("stochastic matrix row " + std::to_string(i) +
                                  " sums to " + std::to_string(sum) + ", not 1");
        }
    }
}

MeasureVector compute_measure(const StochasticMatrix& pi, const Eigen::VectorXd& chi,
                              double theta) {
    if (!(theta > 0.0 && theta <= 1.0)) {
        throw ContractError("compute_measure: theta must lie in (0,1], got " +
                            std::to_string(theta));
    }
    const auto n = static_cast<Eigen::Index>(pi.dimension());
    if (chi.size() != n) {
        throw ContractError("compute_measure: chi has wrong dimension");
    }
    const Eigen::MatrixXd a =
        Eigen::MatrixXd::Identity(n, n) - (1.0 - theta) * pi.matrix();
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
    Eigen::VectorXd nu = lu.solve(theta * chi);
    // one refinement pass keeps the residual near machine precision even for
    // small theta, where the system is poorly scaled
    nu += lu.solve(theta * chi - a * nu);
    const double residual = ((a * nu) / theta - chi).cwiseAbs().maxCoeff();
    if (!(residual < kResidualTol)) {
        throw NumericError("compute_measure: residual " + std::to_string(residual) +
                           " exceeds tolerance (rcond estimate " +
                           std::to_string(lu.rcond()) + ")");
    }
    return MeasureVector{theta, std::move(nu)};
}

double AbsorptionResult::at(StateId state, StateId target) const {
    const auto it = std::lower_bound(targets.begin(), targets.end(), target);
    if (it == targets.end() || *it != target) {
        throw ContractError("absorption: state " + std::to_string(target) +
                            " is not an absorbing target");
    }
    const auto col = static_cast<Eigen::Index>(it - targets.begin());
    return probabilities(static_cast<Eigen::Index>(state), col);
}

AbsorptionResult absorption_probabilities(const StochasticMatrix& pi,
                                          const std::vector<StateId>& absorbing) {
    const std::size_t n = pi.dimension();
    std::vector<StateId> targets = absorbing;
    std::sort(targets.begin(), targets.end());
    targets.erase(std::unique(targets.begin(), targets.end()), targets.end());
    if (targets.empty()) {
        throw ContractError("absorption: empty absorbing set");
    }
    for (StateId a : targets) {
        if (a >= n || pi(a, a) < 1.0 - kRowSumTol) {
            throw ContractError("absorption: state " + std::to_string(a) +
                                " is not a pure self-loop row");
        }
    }
    const auto dead = unreachable_from(pi.matrix(), targets);
    if (!dead.empty()) {
        throw ValidationError("absorption: state " + std::to_string(dead.front()) +
                              " cannot reach any absorbing state");
    }

    std::vector<char> is_target(n, 0);
    for (StateId a : targets) is_target[a] = 1;
    std::vector<StateId> transient;
    for (std::size_t i = 0; i < n; ++i) {
        if (!is_target[i]) transient.push_back(i);
    }

    const auto nt = static_cast<Eigen::Index>(transient.size());
    const auto na = static_cast<Eigen::Index>(targets.size());
    Eigen::MatrixXd t(nt, nt), r(nt, na);
    for (Eigen::Index row = 0; row < nt; ++row) {
        for (Eigen::Index col = 0; col < nt; ++col) {
            t(row, col) = pi(transient[row], transient[col]);
        }
        for (Eigen::Index col = 0; col < na; ++col) {
            r(row, col) = pi(transient[row], targets[col]);
        }
    }
    Eigen::MatrixXd h;
    if (nt > 0) {
        const Eigen::MatrixXd sys = Eigen::MatrixXd::Identity(nt, nt) - t;
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(sys);
        h = lu.solve(r);
        h += lu.solve(r - sys * h);
    }

    Eigen::MatrixXd probs =
        Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), na);
    for (Eigen::Index col = 0; col < na; ++col) {
        probs(static_cast<Eigen::Index>(targets[col]), col) = 1.0;
    }
    for (Eigen::Index row = 0; row < nt; ++row) {
        probs.row(static_cast<Eigen::Index>(transient[row])) = h.row(row);
    }
    for (std::size_t i = 0; i < n; ++i) {
        const double sum = probs.row(static_cast<Eigen::Index>(i)).sum();
        if (std::abs(sum - 1.0) > kAbsorptionSumTol) {
            throw NumericError("absorption: probabilities from state " +
                               std::to_string(i) + " sum to " + std::to_string(sum));
        }
    }
    return AbsorptionResult{std::move(targets), std::move(probs)};
}

std::vector<StateId> pure_selfloop_states(const StochasticMatrix& pi) {
    std::vector<StateId> out;
    for (std::size_t i = 0; i < pi.dimension(); ++i) {
        if (pi(i, i) >= 1.0 - kRowSumTol) out.push_back(i);
    }
    return out;
}

AbsorbingCheck is_strongly_absorbing(const StochasticMatrix& pi) {
    const auto absorbing = pure_selfloop_states(pi);
    if (absorbing.empty()) {
        return {false, 1, "no pure-self-loop (absorbing) state exists"};
    }
    const auto dead = unreachable_from(pi.matrix(), absorbing);
    if (!dead.empty()) {
        return {false, 2,
                "state " + std::to_string(dead.front()) +
                    " cannot reach any absorbing state"};
    }
    // Kahn's algorithm on inter-state edges, self-loops excluded
    const auto adj = distinct_edges(pi.matrix());
    const std::size_t n = pi.dimension();
    std::vector<std::size_t> indeg(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        for (StateId j : adj[i]) ++indeg[j];
    }
    std::deque<StateId> queue;
    for (std::size_t i = 0; i < n; ++i) {
        if (indeg[i] == 0) queue.push_back(i);
    }
    std::size_t removed = 0;
    while (!queue.empty()) {
        const StateId v = queue.front();
        queue.pop_front();
        ++removed;
        for (StateId u : adj[v]) {
            if (--indeg[u] == 0) queue.push_back(u);
        }
    }
    if (removed != n) {
        StateId witness = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (indeg[i] > 0) {
                witness = i;
                break;
            }
        }
        return {false, 3,
                "directed cycle among distinct states (state " +
                    std::to_string(witness) + " is on one)"};
    }
    return {true, 0, ""};
}

namespace {

// dgebal-style permutation phase: peel off rows/columns with no off-diagonal
// coupling, whose diagonal entries are exact eigenvalues, and run the QR
// eigensolver only on the remaining coupled block. Without this, defective
// repeated eigenvalues of triangular chains come back with O(eps^(1/k))
// error, far beyond the certification tolerance.
std::vector<double> eigenvalue_magnitudes(const Eigen::MatrixXd& m) {
    const auto n = m.rows();
    std::vector<double> magnitudes;
    std::vector<char> active(static_cast<std::size_t>(n), 1);
    bool changed = true;
    while (changed) {
        changed = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (!active[static_cast<std::size_t>(i)]) continue;
            bool row_coupled = false, col_coupled = false;
            for (Eigen::Index j = 0; j < n; ++j) {
                if (j == i || !active[static_cast<std::size_t>(j)]) continue;
                if (m(i, j) != 0.0) row_coupled = true;
                if (m(j, i) != 0.0) col_coupled = true;
            }
            if (!row_coupled || !col_coupled) {
                magnitudes.push_back(std::abs(m(i, i)));
                active[static_cast<std::size_t>(i)] = 0;
                changed = true;
            }
        }
    }
    std::vector<Eigen::Index> rest;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (active[static_cast<std::size_t>(i)]) rest.push_back(i);
    }
    if (!rest.empty()) {
        Eigen::MatrixXd block(rest.size(), rest.size());
        for (std::size_t a = 0; a < rest.size(); ++a) {
            for (std::size_t b = 0; b < rest.size(); ++b) {
                block(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
                    m(rest[a], rest[b]);
            }
        }
        Eigen::EigenSolver<Eigen::MatrixXd> solver(block, false);
        if (solver.info() != Eigen::Success) {
            throw NumericError("eigenvalue_magnitudes: eigensolver failed");
        }
        for (Eigen::Index k = 0; k < solver.eigenvalues().size(); ++k) {
            magnitudes.push_back(std::abs(solver.eigenvalues()(k)));
        }
    }
    return magnitudes;
}

}  // namespace

SpectralReport spectral_bound_report(const StochasticMatrix& pi) {
    const auto check = is_strongly_absorbing(pi);
    if (!check.strongly_absorbing) {
        throw ContractError("spectral_bound_report: chain is not strongly absorbing: " +
                            check.diagnostic);
    }
    SpectralReport report;
    for (const double mag : eigenvalue_magnitudes(pi.matrix())) {
        if (mag < 1.0 - kUnityEigTol) {
            report.max_nonunity_eigenvalue =
                std::max(report.max_nonunity_eigenvalue, mag);
        }
    }
    for (std::size_t i = 0; i < pi.dimension(); ++i) {
        const double d = pi(i, i);
        if (d < 1.0 - kUnityEigTol) {
            report.max_nonunity_diagonal = std::max(report.max_nonunity_diagonal, d);
        }
    }
    report.bound_holds = report.max_nonunity_eigenvalue <=
                         report.max_nonunity_diagonal + kUnityEigTol;
    return report;
}

Eigen::MatrixXd cesaro_from_absorption(const StochasticMatrix& pi) {
    const auto targets = pure_selfloop_states(pi);
    const auto result = absorption_probabilities(pi, targets);
    const auto n = static_cast<Eigen::Index>(pi.dimension());
    Eigen::MatrixXd cesaro = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t col = 0; col < result.targets.size(); ++col) {
        cesaro.col(static_cast<Eigen::Index>(result.targets[col])) =
            result.probabilities.col(static_cast<Eigen::Index>(col));
    }
    return cesaro;
}

Eigen::MatrixXd cesaro_power_average(const StochasticMatrix& pi,
                                     std::size_t max_powers, double tol) {
    const auto n = static_cast<Eigen::Index>(pi.dimension());
    Eigen::MatrixXd power = Eigen::MatrixXd::Identity(n, n);
    Eigen::MatrixXd sum = power;
    Eigen::MatrixXd prev_avg = power;
    for (std::size_t k = 1; k <= max_powers; ++k) {
        power = power * pi.matrix();
        sum += power;
        const Eigen::MatrixXd avg = sum / static_cast<double>(k + 1);
        if ((avg - prev_avg).cwiseAbs().maxCoeff() < tol) return avg;
        prev_avg = avg;
    }
    throw NumericError("cesaro_power_average: no convergence within " +
                       std::to_string(max_powers) + " powers");
}

CesaroDeviationReport cesaro_deviation_bound_check(const StochasticMatrix& pi,
                                                   double theta) {
    if (!(theta > 0.0 && theta < 1.0)) {
        throw ContractError("cesaro_deviation_bound_check: theta must lie in (0,1)");
    }
    const auto check = is_strongly_absorbing(pi);
    if (!check.strongly_absorbing) {
        throw ContractError("cesaro_deviation_bound_check: " + check.diagnostic);
    }
    const auto n = static_cast<Eigen::Index>(pi.dimension());
    const Eigen::MatrixXd resolvent =
        theta * (Eigen::MatrixXd::Identity(n, n) - (1.0 - theta) * pi.matrix())
                    .partialPivLu()
                    .inverse();
    const Eigen::MatrixXd cesaro = cesaro_from_absorption(pi);
    const auto spectral = spectral_bound_report(pi);
    CesaroDeviationReport report;
    report.lhs = (resolvent - cesaro).cwiseAbs().maxCoeff();
    report.rhs = theta / (1.0 - spectral.max_nonunity_eigenvalue);
    report.holds = report.lhs <= report.rhs + kUnityEigTol;
    return report;
}

nlohmann::json debug_dump(const StochasticMatrix& pi, const Eigen::VectorXd& chi,
                          const MeasureVector& nu) {
    nlohmann::json j;
    j["n"] = pi.dimension();
    j["theta"] = nu.theta;
    std::vector<double> flat;
    flat.reserve(pi.dimension() * pi.dimension());
    for (std::size_t i = 0; i < pi.dimension(); ++i) {
        for (std::size_t k = 0; k < pi.dimension(); ++k) flat.push_back(pi(i, k));
    }
    j["pi"] = flat;
    j["chi"] = std::vector<double>(chi.data(), chi.data() + chi.size());
    j["nu"] = std::vector<double>(nu.values.data(), nu.values.data() + nu.values.size());
    return j;
}

}  // namespace lmroute
