// measure.hpp -- stochastic matrices, the theta-parameterized state measure,
// absorbing-chain solvers and the structural/spectral checks built on them.
//
// The central quantity is the measure vector
//     nu = theta * [I - (1-theta)*Pi]^-1 * chi
// which aggregates discounted, probability-weighted future visits to
// chi-weighted states. As theta -> 0+ it approaches P*chi, where P is the
// Cesaro limit of Pi (rows = absorption distributions for absorbing chains).

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "lmroute/errors.hpp"

namespace lmroute {

using StateId = std::size_t;

// tolerances used across the numeric checks
inline constexpr double kRowSumTol = 1e-12;
inline constexpr double kUnityEigTol = 1e-9;
inline constexpr double kResidualTol = 1e-10;
inline constexpr double kAbsorptionSumTol = 1e-10;

// Square non-negative matrix with rows summing to 1 (checked on construction).
class StochasticMatrix {
public:
    explicit StochasticMatrix(Eigen::MatrixXd m);

    std::size_t dimension() const { return static_cast<std::size_t>(m_.rows()); }
    const Eigen::MatrixXd& matrix() const { return m_; }
    double operator()(StateId i, StateId j) const {
        return m_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }

private:
    Eigen::MatrixXd m_;
};

struct MeasureVector {
    double theta = 0.0;
    Eigen::VectorXd values;

    double at(StateId i) const { return values(static_cast<Eigen::Index>(i)); }
};

// nu = theta * [I - (1-theta)*Pi]^-1 * chi via a dense LU solve with one step
// of iterative refinement. Requires theta in (0, 1]; the residual
// ||(I-(1-theta)Pi)nu/theta - chi||_inf must come out below kResidualTol.
MeasureVector compute_measure(const StochasticMatrix& pi, const Eigen::VectorXd& chi,
                              double theta);

struct AbsorptionResult {
    std::vector<StateId> targets;     // absorbing states, ascending
    Eigen::MatrixXd probabilities;    // dimension x targets.size()

    double at(StateId state, StateId target) const;
};

// First-step absorption probabilities. Every listed absorbing state must be a
// pure self-loop row and every state must reach at least one of them.
AbsorptionResult absorption_probabilities(const StochasticMatrix& pi,
                                          const std::vector<StateId>& absorbing);

// All states whose row is a unit self-loop.
std::vector<StateId> pure_selfloop_states(const StochasticMatrix& pi);

struct AbsorbingCheck {
    bool strongly_absorbing = false;
    int failed_condition = 0;  // 0 when none; else 1, 2 or 3
    std::string diagnostic;
};

// A chain is strongly absorbing when (1) it has at least one pure-self-loop
// state, (2) every state reaches some absorbing state, and (3) the directed
// graph of inter-state edges (self-loops excluded) has no cycle among
// distinct states. The diagnostic names the first violated condition.
AbsorbingCheck is_strongly_absorbing(const StochasticMatrix& pi);

struct SpectralReport {
    double max_nonunity_eigenvalue = 0.0;  // largest |mu| classified non-unity
    double max_nonunity_diagonal = 0.0;    // largest diagonal entry below 1
    bool bound_holds = false;              // |mu| <= diagonal bound + tol
};

// Dense eigensolve over a strongly absorbing chain; eigenvalue magnitudes are
// classified unity with tolerance kUnityEigTol.
SpectralReport spectral_bound_report(const StochasticMatrix& pi);

// Cesaro limit lifted from the absorption solve: row i carries the absorption
// distribution of state i over the pure-self-loop states.
Eigen::MatrixXd cesaro_from_absorption(const StochasticMatrix& pi);

// Diagnostic fallback for chains that are not strongly absorbing: running
// average of matrix powers, stopped when successive averages differ by less
// than tol in the max-entry norm.
Eigen::MatrixXd cesaro_power_average(const StochasticMatrix& pi,
                                     std::size_t max_powers = 100000,
                                     double tol = 1e-8);

struct CesaroDeviationReport {
    double lhs = 0.0;   // max-entry deviation of theta*[I-(1-theta)Pi]^-1 from P
    double rhs = 0.0;   // theta / (1 - |mu|)
    bool holds = false;
};

// Numerical check of the resolvent-vs-Cesaro deviation bound. Both sides are
// computed exactly as reported; callers decide what to assert.
CesaroDeviationReport cesaro_deviation_bound_check(const StochasticMatrix& pi,
                                                   double theta);

// Debug dump of (Pi, chi, nu) as JSON with a row-major matrix, for golden
// file tests.
nlohmann::json debug_dump(const StochasticMatrix& pi, const Eigen::VectorXd& chi,
                          const MeasureVector& nu);

}  // namespace lmroute
