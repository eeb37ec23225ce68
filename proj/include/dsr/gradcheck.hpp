#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dsr {

struct GradcheckCase {
    std::string name;
    std::uint64_t seed = 0;
    double rel_error = 0.0;
    bool passed = false;
};

struct GradcheckReport {
    double tolerance = 1e-5;
    std::vector<GradcheckCase> cases;

    bool passed() const;
    double worst() const;
};

/// Central finite differences (h = 1e-6, 64-bit) against the analytic
/// gradients of: conv (3x3 ReLU, 5x5 linear), MSE, a 2-layer unit, an r=2
/// stage, a 2-stage deep-supervised cascade and the same cascade with fusion.
/// Relative error is ||analytic - numeric||_2 / max(||analytic||_2, ||numeric||_2).
GradcheckReport run_gradcheck(std::uint64_t base_seed = 1, int seeds = 20, double tolerance = 1e-5);

} // namespace dsr
