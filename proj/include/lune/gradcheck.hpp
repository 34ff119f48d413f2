#pragma once

#include "lune/tensor.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace lune {

// Builds a scalar loss from the given leaf tensors.
using LossBuilder = std::function<Tensor(const std::vector<Tensor>&)>;

// Relative error ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-12)
// between autograd gradients and central differences of step h, over every
// entry of every input with requires_grad set.
double gradient_rel_error(const LossBuilder& loss, std::vector<Tensor> inputs, double h = 1e-5);

struct GradCheckResult {
    std::string op;
    std::size_t instances = 0;
    double max_rel_error = 0.0;
    bool passed = false;
};

struct GradCheckCase {
    std::string op;
    // Draws a random instance: leaf inputs and the loss over them.
    std::function<std::pair<std::vector<Tensor>, LossBuilder>(std::uint64_t seed)> make;
};

// Every differentiable primitive plus the composed LoRA layer.
std::vector<GradCheckCase> standard_gradcheck_cases();

std::vector<GradCheckResult> run_gradcheck(const std::vector<GradCheckCase>& cases,
                                           std::uint64_t seed, std::size_t instances = 20,
                                           double tolerance = 1e-4, double h = 1e-5);

}  // namespace lune
