#ifndef ATTNSEG_SCHEDULER_HPP
#define ATTNSEG_SCHEDULER_HPP

#include <cmath>
#include <stdexcept>
#include <vector>

namespace attnseg {

// Linear-beta DDPM forward process. alpha_bar[0] = 1, so t = 0 is the clean
// latent; x_t = sqrt(alpha_bar[t]) * x0 + sqrt(1 - alpha_bar[t]) * eps.
class DdpmScheduler {
public:
    DdpmScheduler(int t_max = 1000, double beta_start = 1e-4, double beta_end = 0.02)
        : t_max_(t_max), alpha_bar_(static_cast<size_t>(t_max) + 1) {
        alpha_bar_[0] = 1.0;
        double prod = 1.0;
        for (int t = 1; t <= t_max; ++t) {
            double beta = beta_start + (beta_end - beta_start) * (t - 1) / (t_max - 1);
            prod *= 1.0 - beta;
            alpha_bar_[static_cast<size_t>(t)] = prod;
        }
    }

    int t_max() const { return t_max_; }

    double alpha_bar(int t) const {
        if (t < 0 || t > t_max_) throw std::out_of_range("timestep outside scheduler range");
        return alpha_bar_[static_cast<size_t>(t)];
    }
    double signal_coeff(int t) const { return std::sqrt(alpha_bar(t)); }
    double noise_coeff(int t) const { return std::sqrt(1.0 - alpha_bar(t)); }

private:
    int t_max_;
    std::vector<double> alpha_bar_;
};

}  // namespace attnseg

#endif
