#pragma once

#include <string>
#include <vector>

#include "structlm/model.hpp"

namespace structlm {

// Largest model the finite-difference suite accepts.
inline constexpr std::size_t kGradCheckMaxHidden = 32;
inline constexpr std::size_t kGradCheckMaxLayers = 2;

struct GradCheckGroup {
    std::string name;          // parameter array name
    double max_rel_error = 0;  // over every loss that reaches the group
    std::size_t checked = 0;   // elements compared
    std::vector<std::string> losses;
};

struct GradCheckReport {
    std::vector<GradCheckGroup> groups;  // one per parameter array, in Parameters::named() order
    double tolerance = 1e-4;
    bool passed() const;
    std::string render() const;
};

// Central finite differences against reverse mode on a fresh init of `config`
// for the composed MVLM+CPC loss and the tagging, QA and classification
// losses, over one synthetic form page. `config.vocab_size` is replaced by the
// size of the vocabulary built from that page. Embedding tables are checked
// on the rows the inputs reference plus every row with a nonzero gradient.
// Throws config_error when the model exceeds the size limits.
GradCheckReport run_grad_check(ModelConfig config, std::uint64_t seed, double tolerance = 1e-4);

}  // namespace structlm
