#include "diwa/schedule.hpp"

#include <stdexcept>
#include <string>

namespace diwa {

NoiseSchedule build_linear_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw std::invalid_argument("schedule: T must be >= 1, got " + std::to_string(T));
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
        throw std::invalid_argument("schedule: need 0 < beta_start <= beta_end < 1, got [" +
                                    std::to_string(beta_start) + ", " + std::to_string(beta_end) +
                                    "]");
    NoiseSchedule s;
    s.T = T;
    s.beta.resize(static_cast<size_t>(T));
    s.alpha.resize(static_cast<size_t>(T));
    s.gamma.resize(static_cast<size_t>(T));
    double running = 1.0;
    for (int t = 1; t <= T; ++t) {
        const double frac = (T == 1) ? 0.0 : static_cast<double>(t - 1) / (T - 1);
        const double b = beta_start + frac * (beta_end - beta_start);
        s.beta[t - 1] = b;
        s.alpha[t - 1] = 1.0 - b;
        running *= s.alpha[t - 1];
        s.gamma[t - 1] = running;
    }
    return s;
}

double gamma_at(const NoiseSchedule& s, int t) {
    if (t < 1 || t > s.T)
        throw std::out_of_range("gamma_at: t=" + std::to_string(t) + " outside 1.." +
                                std::to_string(s.T));
    return s.gamma[t - 1];
}

}  // namespace diwa
