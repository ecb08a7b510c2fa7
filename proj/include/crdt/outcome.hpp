#pragma once

#include <vector>

#include "crdt/envs.hpp"
#include "crdt/rng.hpp"
#include "crdt/seqmodel.hpp"
#include "crdt/training.hpp"

namespace crdt {

struct OutcomePrediction {
    std::vector<double> state;  // predicted next state, d_s
    double rtg = 0.0;           // predicted next returns-to-go
};

// m dropout-active predictions of the same next step.
struct McSampleMatrix {
    std::size_t passes = 0;     // m >= 2
    std::size_t state_dim = 0;
    std::vector<double> states; // passes x state_dim
    std::vector<double> rtgs;   // passes (logged, not gated)
};

// Per-dimension unbiased sample variance (the diagonal of the covariance of
// the rows), maximized over dimensions.
double max_variance(const McSampleMatrix& samples);

// Running record of accepted per-step max variances since reasoning start.
struct UncertaintyLedger {
    double threshold = 0.0;  // alpha
    std::vector<double> entries;
    double total = 0.0;

    void append(double value);
    bool unfamiliar() const { return total > threshold; }  // strict, per the gate
};

// Appends and reports: true = Unfamiliar (accumulated variance exceeds the
// threshold), false = Familiar.
bool uncertainty_gate(UncertaintyLedger& ledger, double new_variance);

// Squared state error plus squared returns-to-go error for a single
// prediction; the training loss is the mean of this over steps.
double mse_loss(const OutcomePrediction& pred, const std::vector<double>& state_target,
                double rtg_target);

// The outcome estimator: predicts (s_{t+1}, g_{t+1}) from a history ending
// in a complete (g_t, s_t, a_t) triple. Readouts are residual: the head
// learns the per-step change of state and returns-to-go.
class OutcomeModel {
public:
    explicit OutcomeModel(ModelConfig cfg);
    explicit OutcomeModel(SequenceModel model);

    SequenceModel& model() { return model_; }
    const ModelConfig& config() const { return model_.config(); }

    // Deterministic prediction, dropout off. The context's final triple must
    // be complete (last_action_valid).
    OutcomePrediction predict(const ContextWindow& ctx);
    // m independent dropout-active passes.
    McSampleMatrix mc_sample(const ContextWindow& ctx, std::size_t passes, Rng& rng);

    TrainLog fit(const TrajectoryDataset& dataset, const FitConfig& cfg, Rng& rng);
    // Mean prediction loss over `samples` random windows (held-out check).
    double eval_loss(const TrajectoryDataset& dataset, std::size_t samples, Rng& rng);

    void save(const std::string& path) const { model_.save(path); }
    static OutcomeModel load(const std::string& path);

private:
    SequenceModel model_;
    void check_complete(const ContextWindow& ctx) const;
};

// Default variance budget (alpha) calibration: the 90th percentile of the
// accumulated max variance along factual trajectory suffixes, sampled from
// the dataset with the trained outcome model.
double calibrate_variance_budget(OutcomeModel& model, const TrajectoryDataset& dataset,
                                 std::size_t mc_passes, std::size_t rollouts, Rng& rng);

}  // namespace crdt
