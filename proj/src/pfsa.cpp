#include "lmroute/pfsa.hpp"

#include <cmath>

namespace lmroute {

const PfsaEdge* Pfsa::find_edge(StateId state, SymbolId symbol) const {
    for (const auto& e : rows[state]) {
        if (e.symbol == symbol) return &e;
    }
    return nullptr;
}

Eigen::VectorXd Pfsa::chi() const {
    Eigen::VectorXd v(static_cast<Eigen::Index>(characteristic.size()));
    for (std::size_t i = 0; i < characteristic.size(); ++i) {
        v(static_cast<Eigen::Index>(i)) = characteristic[i];
    }
    return v;
}

void validate(const Pfsa& pfsa) {
    const std::size_t n = pfsa.state_count();
    if (pfsa.state_names.size() != n || pfsa.characteristic.size() != n) {
        throw ValidationError("pfsa: state_names/characteristic size mismatch");
    }
    for (std::size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        for (const auto& e : pfsa.rows[i]) {
            if (e.symbol >= pfsa.symbol_count()) {
                throw ValidationError("pfsa: state " + pfsa.state_names[i] +
                                      " uses an unknown symbol");
            }
            if (e.target >= n) {
                throw ValidationError("pfsa: state " + pfsa.state_names[i] +
                                      " transitions to an unknown state");
            }
            if (e.prob < 0.0 || e.prob > 1.0) {
                throw ValidationError("pfsa: state " + pfsa.state_names[i] +
                                      " has a morph probability outside [0,1]");
            }
            sum += e.prob;
        }
        if (std::abs(sum - 1.0) > kRowSumTol) {
            throw ValidationError("pfsa: morph row of state " + pfsa.state_names[i] +
                                  " sums to " + std::to_string(sum) + ", not 1");
        }
        if (pfsa.characteristic[i] < -1.0 || pfsa.characteristic[i] > 1.0) {
            throw ValidationError("pfsa: characteristic of state " +
                                  pfsa.state_names[i] + " outside [-1,1]");
        }
    }
    for (const auto& [state, symbol] : pfsa.controllable) {
        if (state >= n || pfsa.find_edge(state, symbol) == nullptr) {
            throw ValidationError(
                "pfsa: controllable pair refers to an undefined transition");
        }
    }
}

StochasticMatrix build_transition_matrix(const Pfsa& pfsa) {
    validate(pfsa);
    const auto n = static_cast<Eigen::Index>(pfsa.state_count());
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t i = 0; i < pfsa.state_count(); ++i) {
        for (const auto& e : pfsa.rows[i]) {
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(e.target)) +=
                e.prob;
        }
    }
    return StochasticMatrix(std::move(m));
}

Pfsa apply_disabling(const Pfsa& pfsa, const DisablingSet& d) {
    for (const auto& key : d.disabled) {
        if (pfsa.controllable.count(key) == 0) {
            throw ContractError("apply_disabling: transition (" +
                                std::to_string(key.first) + ", " +
                                std::to_string(key.second) +
                                ") is not controllable");
        }
    }
    Pfsa out = pfsa;
    for (std::size_t i = 0; i < out.state_count(); ++i) {
        for (auto& e : out.rows[i]) {
            if (d.contains(i, e.symbol)) e.target = i;
        }
    }
    return out;
}

}  // namespace lmroute
