#include "crdt/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace crdt {

Adam::Adam(AdamConfig cfg) : cfg_(cfg) {}

void Adam::step(ParamStore& params) {
    step_count_ += 1;
    const double t = static_cast<double>(step_count_);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
    for (auto& [name, p] : params) {
        if (!p.requires_grad) continue;
        p.ensure_grad();
        if (p.grad.size() != p.data.size()) {
            throw std::runtime_error("optimizer: gradient shape mismatch for " + name);
        }
        Moments& mom = moments_[name];
        if (mom.m.size() != p.data.size()) {
            mom.m.assign(p.data.size(), 0.0);
            mom.v.assign(p.data.size(), 0.0);
        }
        for (std::size_t i = 0; i < p.data.size(); ++i) {
            const double g = p.grad[i];
            if (!std::isfinite(g)) {
                throw std::runtime_error("optimizer: non-finite gradient in parameter " + name);
            }
            mom.m[i] = cfg_.beta1 * mom.m[i] + (1.0 - cfg_.beta1) * g;
            mom.v[i] = cfg_.beta2 * mom.v[i] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = mom.m[i] / bc1;
            const double vhat = mom.v[i] / bc2;
            p.data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
        p.zero_grad();
    }
}

void Adam::restore(std::uint64_t step_count, std::map<std::string, Moments> moments) {
    step_count_ = step_count;
    moments_ = std::move(moments);
}

void zero_grads(ParamStore& params) {
    for (auto& [name, p] : params) {
        (void)name;
        if (p.requires_grad) p.zero_grad();
    }
}

}  // namespace crdt
