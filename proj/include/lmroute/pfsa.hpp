// pfsa.hpp -- probabilistic finite state automata.
//
// An automaton is a sextuple: states, alphabet, (partial) transition map,
// per-state symbol generation probabilities (the morph rows), per-state
// characteristic weights in [-1,1], and the set of controllable transitions.
// Transition map and morph rows are fused into per-state edge lists.

#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "lmroute/measure.hpp"

namespace lmroute {

using SymbolId = std::size_t;
using TransitionKey = std::pair<StateId, SymbolId>;

struct PfsaEdge {
    SymbolId symbol;
    StateId target;
    double prob;
};

struct Pfsa {
    std::vector<std::string> state_names;
    std::vector<std::string> symbol_names;
    std::vector<std::vector<PfsaEdge>> rows;  // defined symbols per state
    std::vector<double> characteristic;       // one weight per state, in [-1,1]
    std::set<TransitionKey> controllable;

    std::size_t state_count() const { return rows.size(); }
    std::size_t symbol_count() const { return symbol_names.size(); }

    const PfsaEdge* find_edge(StateId state, SymbolId symbol) const;

    Eigen::VectorXd chi() const;
};

// Checks the automaton invariants: morph rows sum to 1 within kRowSumTol,
// probabilities in [0,1], every controllable pair is a defined transition,
// characteristics in [-1,1]. Throws ValidationError naming the first bad state.
void validate(const Pfsa& pfsa);

// Set of disabled controllable transitions. Disabling replaces a transition
// with a self-loop of identical occurrence probability.
struct DisablingSet {
    std::set<TransitionKey> disabled;

    bool contains(StateId state, SymbolId symbol) const {
        return disabled.count({state, symbol}) > 0;
    }
    std::size_t size() const { return disabled.size(); }
    bool operator==(const DisablingSet&) const = default;
};

// Pi_ij = sum of morph probabilities of symbols carrying state i to state j.
StochasticMatrix build_transition_matrix(const Pfsa& pfsa);

// Redirects each disabled transition to a self-loop; everything else is
// untouched. Throws ContractError if the set is not within `controllable`.
Pfsa apply_disabling(const Pfsa& pfsa, const DisablingSet& d);

}  // namespace lmroute
