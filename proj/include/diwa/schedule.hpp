#pragma once

#include <vector>

namespace diwa {

/// Linear noise schedule. Index 0 of each array corresponds to t=1; t runs
/// 1..T everywhere in this codebase.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;   // beta_t = 1 - alpha_t
    std::vector<double> alpha;  // alpha_t
    std::vector<double> gamma;  // gamma_t = prod_{i<=t} alpha_i
};

/// beta_t = beta_start + (t-1)/(T-1) * (beta_end - beta_start); for T=1 the
/// single beta is beta_start. Requires T >= 1 and 0 < beta_start <= beta_end < 1.
NoiseSchedule build_linear_schedule(int T, double beta_start, double beta_end);

/// Precomputed cumulative product at 1-based t; throws std::out_of_range.
double gamma_at(const NoiseSchedule& s, int t);

}  // namespace diwa
