#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "crdt/autodiff.hpp"
#include "crdt/rng.hpp"
#include "crdt/tensor.hpp"

namespace crdt {

enum class ActionSpace { discrete, continuous };

// Which readout the model carries on top of the shared trunk.
enum class HeadKind {
    action_logits,    // agent, discrete: logits over n_actions
    action_vector,    // agent, continuous: d_a action values
    action_gaussian,  // treatment, continuous: (mu, log variance) per dim
    outcome,          // outcome model: next-state and next-rtg deltas
};

struct ModelConfig {
    std::size_t d_model = 32;
    std::size_t layers = 2;
    std::size_t heads = 1;
    double dropout_rate = 0.1;
    std::size_t context_steps = 10;  // K
    ActionSpace action_space = ActionSpace::discrete;
    std::size_t n_actions = 4;   // discrete spaces
    std::size_t action_dim = 2;  // continuous spaces
    std::size_t state_dim = 2;
    std::size_t max_timestep = 512;

    void validate() const;  // throws std::invalid_argument on bad combinations
    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
};

// The last (up to K) steps of (returns-to-go, state, action) presented to a
// sequence model, left-aligned: entry 0 is the oldest step, entry steps-1
// the current one. `step_valid` masks padded or deliberately hidden steps
// out of both attention and losses. During rollout the current step's
// action slot holds a placeholder; `last_action_valid=false` masks that
// token so nothing can read it.
struct ContextWindow {
    std::size_t steps = 0;
    std::vector<double> rtg;
    std::vector<double> states;  // steps x state_dim, row-major
    std::vector<std::size_t> actions_discrete;
    std::vector<double> actions_continuous;  // steps x action_dim
    std::vector<std::size_t> timesteps;
    std::vector<std::uint8_t> step_valid;
    bool last_action_valid = true;

    void check_against(const ModelConfig& cfg) const;
};

// GPT-style trunk over interleaved (g, s, a) token triples: per-stream
// linear embeddings plus a shared learned timestep embedding, pre-LN
// blocks of causal self-attention and a GELU MLP, final layer norm.
// Action readouts anchor at s-token rows (they may not see the current
// action); outcome readouts anchor at a-token rows.
class SequenceModel {
public:
    SequenceModel(ModelConfig cfg, HeadKind head, std::string name);

    void init_params(Rng& rng);

    const std::string& name() const { return name_; }
    const ModelConfig& config() const { return cfg_; }
    HeadKind head() const { return head_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    // Hidden states (3*steps x d_model) for one window. Dropout draws from
    // rng only when active.
    Var encode(Tape& tape, const ContextWindow& ctx, bool dropout_active, Rng& rng);

    // Readouts over the hidden states of a window with `steps` steps.
    Var action_logits(Tape& tape, Var hidden, std::size_t steps);   // (steps, n_actions)
    Var action_vector(Tape& tape, Var hidden, std::size_t steps);   // (steps, d_a)
    // (mu, logvar) pair; logvar clipped to [-10, 4].
    std::pair<Var, Var> action_gaussian(Tape& tape, Var hidden, std::size_t steps);
    // Residual outcome readout: predicted next state is s_t + ds, predicted
    // next returns-to-go is g_t + dg. Returns (next_state (steps, d_s),
    // next_rtg (steps, 1)) with the residuals already applied.
    std::pair<Var, Var> outcome(Tape& tape, Var hidden, const ContextWindow& ctx);

    // Row indices of s-tokens / a-tokens inside the hidden matrix.
    static std::vector<std::size_t> state_token_rows(std::size_t steps);
    static std::vector<std::size_t> action_token_rows(std::size_t steps);

    // Checkpoint support: parameters plus config metadata.
    void save(const std::string& path) const;
    static SequenceModel load(const std::string& path);

private:
    ModelConfig cfg_;
    HeadKind head_;
    std::string name_;
    ParamStore params_;

    Tensor& p(const std::string& key);
    Var pvar(Tape& tape, const std::string& key);
    Var linear(Tape& tape, Var x, const std::string& prefix);
};

}  // namespace crdt
