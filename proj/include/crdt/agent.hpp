#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crdt/counterfactual.hpp"
#include "crdt/envs.hpp"
#include "crdt/rng.hpp"
#include "crdt/seqmodel.hpp"
#include "crdt/training.hpp"

namespace crdt {

struct TrainConfig {
    std::size_t batch_per_source = 32;  // equal batches from each data source
    std::size_t steps = 1200;
    double lr = 1e-3;
    double eval_target_return = 1.0;
    std::size_t eval_episodes = 50;
};

struct EvalConfig {
    double target_return = 1.0;
    std::size_t episodes = 50;
    // Gridworld episodes start uniformly over corridor cells within this
    // manhattan distance of the nominal start (monotone toward the
    // waypoint); 0 pins every episode to the spec start.
    std::size_t start_jitter = 4;
};

struct EvalReport {
    std::vector<double> episode_returns;
    double success_rate = 0.0;
    double mean_return = 0.0;
    double std_return = 0.0;
    std::uint64_t seed = 0;
    double target_return = 0.0;

    std::string to_json() const;
};

struct AgentTrainResult {
    TrainLog total;       // combined loss per step
    TrainLog env_only;    // environment-batch loss per step
    TrainLog buffer_only; // counterfactual-batch loss per step (zeros when unused)
};

// The decision-transformer policy: next-action prediction conditioned on
// returns-to-go, trained on the environment dataset plus (optionally) the
// counterfactual buffer with equal batches from each source, the combined
// loss being the sum of the two. An empty buffer degrades to the plain
// backbone: the buffer path draws nothing from the RNG, so the loss trace
// is bitwise identical to a run without a buffer.
class AgentModel {
public:
    explicit AgentModel(ModelConfig cfg);
    explicit AgentModel(SequenceModel model);

    SequenceModel& model() { return model_; }
    const ModelConfig& config() const { return model_.config(); }

    AgentTrainResult train(const TrajectoryDataset& env_data,
                           const CounterfactualBuffer* buffer, const TrainConfig& cfg,
                           Rng& rng);

    // Greedy decode: discrete argmax (ties to the lowest id); continuous
    // head output as-is. The context's current-step action slot is ignored.
    std::size_t predict_action_discrete(const ContextWindow& ctx);
    std::vector<double> predict_action_continuous(const ContextWindow& ctx);

    // Return-conditioned rollouts. `stats_source` supplies the state
    // normalization recorded with the training dataset.
    EvalReport evaluate(const GridworldSpec& spec, const TrajectoryDataset& stats_source,
                        const EvalConfig& cfg, Rng& rng);
    EvalReport evaluate(const PointMassSpec& spec, const TrajectoryDataset& stats_source,
                        const EvalConfig& cfg, Rng& rng);

    void save(const std::string& path) const { model_.save(path); }
    static AgentModel load(const std::string& path);

private:
    SequenceModel model_;
    Var batch_loss(Tape& tape, const TrajectoryDataset& data, const WindowSampler& sampler,
                   std::size_t batch, Rng& batch_rng, Rng& drop_rng);
};

// Plain-value loss routes for tests and diagnostics (the training path uses
// the tape ops): discrete expects per-step probabilities.
double dt_loss_discrete(const std::vector<std::vector<double>>& probs,
                        const std::vector<std::size_t>& labels);
double dt_loss_continuous(const std::vector<std::vector<double>>& predicted,
                          const std::vector<std::vector<double>>& target);

}  // namespace crdt
