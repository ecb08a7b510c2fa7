#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "crdt/tensor.hpp"

namespace crdt {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adaptive-moment optimizer with bias correction. Moments are keyed by
// parameter name so state survives checkpointing.
class Adam {
public:
    explicit Adam(AdamConfig cfg = {});

    // Applies one update from each parameter's accumulated .grad and clears
    // the gradients. Throws std::runtime_error naming the parameter if a
    // gradient is not finite.
    void step(ParamStore& params);

    std::uint64_t step_count() const { return step_count_; }
    const AdamConfig& config() const { return cfg_; }

    // Moment accumulators exposed for checkpoint save/restore.
    struct Moments {
        std::vector<double> m;
        std::vector<double> v;
    };
    const std::map<std::string, Moments>& moments() const { return moments_; }
    void restore(std::uint64_t step_count, std::map<std::string, Moments> moments);

private:
    AdamConfig cfg_;
    std::uint64_t step_count_ = 0;
    std::map<std::string, Moments> moments_;
};

void zero_grads(ParamStore& params);

}  // namespace crdt
