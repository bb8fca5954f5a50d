#pragma once

#include <functional>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace sscm::train {

struct GradInput {
    std::string name;
    Tensor<double> tensor; // leaf; perturbed in place
};

// Recomputes the output from the current contents of the inputs.
using GradFunction = std::function<Tensor<double>()>;

struct GradcheckResult {
    std::string name;
    double max_rel_error = 0; // worst input
    std::string worst_input;
    std::size_t points = 0;
};

/// Central-difference check of fn against its tape gradient, using the scalar
/// loss sum(w * fn()) with random weights w drawn from `seed`. Each input's
/// error is ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-7) with
/// step 1e-5 * max(1, |theta|).
GradcheckResult check_gradients(const std::string& name, const std::vector<GradInput>& inputs, const GradFunction& fn,
                                std::uint64_t seed);

struct GradcheckOptions {
    std::vector<std::uint64_t> seeds{1, 2, 3};
    double tolerance = 1e-4;
    bool include_model = true; // tiny end-to-end model
    std::string only;          // run only entries whose name contains this
};

struct GradcheckReport {
    struct Entry {
        std::string name;
        double max_rel_error = 0; // over seeds
        std::string worst_input;
        bool passed = true;
    };
    double tolerance = 1e-4;
    double seconds = 0;
    std::vector<Entry> entries;

    bool passed() const;
    std::string format() const;
};

// Every differentiable primitive and module, plus the tiny model.
GradcheckReport run_gradcheck_suite(const GradcheckOptions& options = {});

} // namespace sscm::train
