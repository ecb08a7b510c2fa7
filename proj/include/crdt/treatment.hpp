#pragma once

#include <vector>

#include "crdt/envs.hpp"
#include "crdt/rng.hpp"
#include "crdt/seqmodel.hpp"
#include "crdt/training.hpp"

namespace crdt {

// Conditional action distribution at one step: categorical probabilities
// for discrete spaces, independent per-dimension gaussians for continuous.
struct ActionDistribution {
    std::vector<double> probs;     // discrete: n_actions, sums to 1
    std::vector<double> mean;      // continuous: d_a
    std::vector<double> variance;  // continuous: d_a, strictly positive

    bool is_discrete() const { return !probs.empty(); }
};

// Mean negative log probability of the true actions, probabilities floored
// at 1e-12. Plain-value route, independent of the training tape.
double ce_loss(const std::vector<ActionDistribution>& dists,
               const std::vector<std::size_t>& true_actions);

// Mean over steps of the per-dimension gaussian negative log likelihood
// (t - mu)^2 / (2 s2) + 0.5 log(2 pi s2), summed over dimensions.
double gaussian_nll_loss(const std::vector<ActionDistribution>& dists,
                         const std::vector<std::vector<double>>& true_actions);

// The treatment estimator: models p(a_t | h_{t-1}, s_t, g_t). The current
// step's action slot never influences its own prediction (causal mask plus
// s-token readout anchoring).
class TreatmentModel {
public:
    explicit TreatmentModel(ModelConfig cfg);
    explicit TreatmentModel(SequenceModel model);

    SequenceModel& model() { return model_; }
    const SequenceModel& model() const { return model_; }
    const ModelConfig& config() const { return model_.config(); }

    // Distribution for the current (last) step of the context. Contexts
    // longer than K are truncated to the most recent K steps.
    ActionDistribution distribution(const ContextWindow& ctx);
    // One distribution per valid step (training diagnostics, oracles).
    std::vector<ActionDistribution> distribution_per_step(const ContextWindow& ctx);

    // Mini-batch training on uniformly sampled context windows. Minimizes
    // cross-entropy (discrete) or gaussian NLL (continuous). Throws
    // std::runtime_error with diagnostics if the loss goes non-finite.
    TrainLog fit(const TrajectoryDataset& dataset, const FitConfig& cfg, Rng& rng);

    void save(const std::string& path) const { model_.save(path); }
    static TreatmentModel load(const std::string& path);

private:
    SequenceModel model_;
};

// Truncation helper: keeps the most recent `max_steps` steps of a window.
ContextWindow truncate_to_recent(const ContextWindow& ctx, std::size_t max_steps);

}  // namespace crdt
