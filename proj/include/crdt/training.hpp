#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace crdt {

// Mini-batch settings shared by the treatment and outcome model trainers.
struct FitConfig {
    std::size_t steps = 800;
    std::size_t batch_size = 32;
    double lr = 1e-3;
};

// Per-step loss curve; persisted as "step,loss" CSV.
struct TrainLog {
    std::vector<double> losses;
    void write_csv(const std::string& path, const std::string& value_name = "loss") const;
};

}  // namespace crdt
