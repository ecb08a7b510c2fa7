#include "crdt/agent.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "crdt/optimizer.hpp"

namespace crdt {

using nlohmann::json;

namespace {

constexpr double kProbFloor = 1e-12;

HeadKind head_for(const ModelConfig& cfg) {
    return cfg.action_space == ActionSpace::discrete ? HeadKind::action_logits
                                                     : HeadKind::action_vector;
}

TrajectoryDataset dataset_view(const CounterfactualBuffer& buffer,
                               const TrajectoryDataset& like) {
    TrajectoryDataset ds;
    ds.state_dim = like.state_dim;
    ds.action_dim = like.action_dim;
    ds.n_actions = like.n_actions;
    ds.env_kind = like.env_kind;
    ds.env_json = like.env_json;
    ds.normalized = like.normalized;
    ds.state_mean = like.state_mean;
    ds.state_std = like.state_std;
    ds.trajectories = buffer.trajectories;
    return ds;
}

}  // namespace

std::string EvalReport::to_json() const {
    json j;
    j["episode_returns"] = episode_returns;
    j["success_rate"] = success_rate;
    j["mean_return"] = mean_return;
    j["std_return"] = std_return;
    j["seed"] = seed;
    j["target_return"] = target_return;
    j["episodes"] = episode_returns.size();
    return j.dump();
}

double dt_loss_discrete(const std::vector<std::vector<double>>& probs,
                        const std::vector<std::size_t>& labels) {
    if (probs.empty() || probs.size() != labels.size()) {
        throw std::invalid_argument("dt loss: prediction/label count mismatch");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (labels[i] >= probs[i].size()) {
            throw std::invalid_argument("dt loss: label out of range");
        }
        total -= std::log(std::max(probs[i][labels[i]], kProbFloor));
    }
    return total / static_cast<double>(probs.size());
}

double dt_loss_continuous(const std::vector<std::vector<double>>& predicted,
                          const std::vector<std::vector<double>>& target) {
    if (predicted.empty() || predicted.size() != target.size()) {
        throw std::invalid_argument("dt loss: prediction/target count mismatch");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        if (predicted[i].size() != target[i].size()) {
            throw std::invalid_argument("dt loss: action dimension mismatch");
        }
        for (std::size_t d = 0; d < predicted[i].size(); ++d) {
            const double diff = predicted[i][d] - target[i][d];
            total += diff * diff;
        }
    }
    return total / static_cast<double>(predicted.size());
}

AgentModel::AgentModel(ModelConfig cfg) : model_(cfg, head_for(cfg), "agent") {}

AgentModel::AgentModel(SequenceModel model) : model_(std::move(model)) {
    if (model_.head() != head_for(model_.config())) {
        throw std::invalid_argument("agent model: checkpoint has the wrong head kind");
    }
}

AgentModel AgentModel::load(const std::string& path) {
    return AgentModel(SequenceModel::load(path));
}

Var AgentModel::batch_loss(Tape& tape, const TrajectoryDataset& data,
                           const WindowSampler& sampler, std::size_t batch, Rng& batch_rng,
                           Rng& drop_rng) {
    const std::size_t K = config().context_steps;
    Var total{};
    std::size_t total_valid = 0;
    std::vector<std::pair<Var, std::size_t>> window_losses;
    for (std::size_t b = 0; b < batch; ++b) {
        const auto [ti, si] = sampler.sample(batch_rng);
        const Trajectory& traj = data.trajectories[ti];
        ContextWindow ctx = make_context_window(traj, si, K);
        Var hidden = model_.encode(tape, ctx, true, drop_rng);
        const std::vector<std::uint8_t> valid(ctx.steps, 1);
        Var loss{};
        if (config().action_space == ActionSpace::discrete) {
            Var logits = model_.action_logits(tape, hidden, ctx.steps);
            loss = tape.cross_entropy_logits(logits, ctx.actions_discrete, valid);
        } else {
            Var pred = model_.action_vector(tape, hidden, ctx.steps);
            Tensor target = Tensor::zeros({ctx.steps, config().action_dim});
            target.data = ctx.actions_continuous;
            loss = tape.mse_rows(pred, target, valid);
        }
        window_losses.emplace_back(loss, ctx.steps);
        total_valid += ctx.steps;
    }
    for (const auto& [loss, count] : window_losses) {
        Var weighted =
            tape.scale(loss, static_cast<double>(count) / static_cast<double>(total_valid));
        total = total.valid() ? tape.add(total, weighted) : weighted;
    }
    return total;
}

AgentTrainResult AgentModel::train(const TrajectoryDataset& env_data,
                                   const CounterfactualBuffer* buffer, const TrainConfig& cfg,
                                   Rng& rng) {
    if (env_data.trajectories.empty()) {
        throw std::invalid_argument("agent train: empty environment dataset");
    }
    const bool use_buffer = buffer != nullptr && !buffer->trajectories.empty();
    WindowSampler env_sampler(env_data);
    TrajectoryDataset buffer_data;
    std::optional<WindowSampler> buffer_sampler;
    if (use_buffer) {
        buffer_data = dataset_view(*buffer, env_data);
        buffer_sampler.emplace(buffer_data);
    }
    Adam opt(AdamConfig{.lr = cfg.lr});
    Rng batch_rng = rng.split("batches");
    Rng drop_rng = rng.split("dropout");
    AgentTrainResult result;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        Tape tape;
        Var env_loss = batch_loss(tape, env_data, env_sampler, cfg.batch_per_source,
                                  batch_rng, drop_rng);
        Var total = env_loss;
        double buffer_value = 0.0;
        if (use_buffer) {
            Var buf_loss = batch_loss(tape, buffer_data, *buffer_sampler, cfg.batch_per_source,
                                      batch_rng, drop_rng);
            buffer_value = tape.value(buf_loss).data[0];
            total = tape.add(env_loss, buf_loss);
        }
        const double env_value = tape.value(env_loss).data[0];
        const double total_value = tape.value(total).data[0];
        if (!std::isfinite(total_value)) {
            throw std::runtime_error("agent train: non-finite loss at step " +
                                     std::to_string(step));
        }
        tape.backward(total);
        opt.step(model_.params());
        result.total.losses.push_back(total_value);
        result.env_only.losses.push_back(env_value);
        result.buffer_only.losses.push_back(buffer_value);
    }
    return result;
}

std::size_t AgentModel::predict_action_discrete(const ContextWindow& ctx) {
    if (config().action_space != ActionSpace::discrete) {
        throw std::logic_error("agent: discrete prediction on a continuous model");
    }
    Tape tape;
    Rng no_dropout(0);
    Var hidden = model_.encode(tape, ctx, false, no_dropout);
    Var logits = model_.action_logits(tape, hidden, ctx.steps);
    const Tensor& lg = tape.value(logits);
    const std::size_t n = config().n_actions;
    const double* row = lg.data.data() + (ctx.steps - 1) * n;
    std::size_t best = 0;  // ties break to the lowest action id
    for (std::size_t a = 1; a < n; ++a) {
        if (row[a] > row[best]) best = a;
    }
    return best;
}

std::vector<double> AgentModel::predict_action_continuous(const ContextWindow& ctx) {
    if (config().action_space != ActionSpace::continuous) {
        throw std::logic_error("agent: continuous prediction on a discrete model");
    }
    Tape tape;
    Rng no_dropout(0);
    Var hidden = model_.encode(tape, ctx, false, no_dropout);
    Var pred = model_.action_vector(tape, hidden, ctx.steps);
    const Tensor& p = tape.value(pred);
    return {p.data.end() - static_cast<std::ptrdiff_t>(config().action_dim), p.data.end()};
}

namespace {

// Rolling context assembled during an episode; the current step's action
// slot is a masked placeholder until the policy picks it.
struct RolloutContext {
    std::size_t K;
    std::size_t state_dim;
    std::size_t action_dim;  // 0 = discrete
    std::vector<double> rtg;
    std::vector<double> states;
    std::vector<std::size_t> actions_d;
    std::vector<double> actions_c;
    std::vector<std::size_t> timesteps;

    void push_current(double g, const std::vector<double>& s, std::size_t t) {
        rtg.push_back(g);
        states.insert(states.end(), s.begin(), s.end());
        actions_d.push_back(0);
        actions_c.insert(actions_c.end(), action_dim, 0.0);
        timesteps.push_back(t);
    }
    void set_action(std::size_t a) { actions_d.back() = a; }
    void set_action(const std::vector<double>& a) {
        std::copy(a.begin(), a.end(), actions_c.end() - static_cast<std::ptrdiff_t>(action_dim));
    }

    ContextWindow window() const {
        const std::size_t len = rtg.size();
        const std::size_t n = std::min(K, len);
        const std::size_t begin = len - n;
        ContextWindow ctx;
        ctx.steps = n;
        ctx.rtg.assign(rtg.begin() + static_cast<std::ptrdiff_t>(begin), rtg.end());
        ctx.states.assign(states.begin() + static_cast<std::ptrdiff_t>(begin * state_dim),
                          states.end());
        if (action_dim == 0) {
            ctx.actions_discrete.assign(
                actions_d.begin() + static_cast<std::ptrdiff_t>(begin), actions_d.end());
        } else {
            ctx.actions_continuous.assign(
                actions_c.begin() + static_cast<std::ptrdiff_t>(begin * action_dim),
                actions_c.end());
        }
        ctx.timesteps.assign(timesteps.begin() + static_cast<std::ptrdiff_t>(begin),
                             timesteps.end());
        ctx.step_valid.assign(n, 1);
        ctx.last_action_valid = false;
        return ctx;
    }
};

void check_normalized(const TrajectoryDataset& stats_source) {
    if (!stats_source.normalized || stats_source.state_mean.empty()) {
        throw std::invalid_argument(
            "evaluate: stats source must be a normalized dataset (state stats required)");
    }
}

void finish_report(EvalReport& report) {
    double mean = 0.0;
    std::size_t wins = 0;
    for (double r : report.episode_returns) {
        mean += r;
        if (r > 0.0) ++wins;
    }
    const double n = static_cast<double>(report.episode_returns.size());
    mean /= n;
    double var = 0.0;
    for (double r : report.episode_returns) var += (r - mean) * (r - mean);
    report.mean_return = mean;
    report.std_return = std::sqrt(var / n);
    report.success_rate = static_cast<double>(wins) / n;
}

}  // namespace

EvalReport AgentModel::evaluate(const GridworldSpec& spec,
                                const TrajectoryDataset& stats_source, const EvalConfig& cfg,
                                Rng& rng) {
    check_normalized(stats_source);
    spec.validate();
    EvalReport report;
    report.seed = rng.seed();
    report.target_return = cfg.target_return;

    // Jittered start cells: monotone offsets from the nominal start toward
    // the corridor waypoint, within the configured manhattan distance.
    std::vector<GridCell> starts;
    const int sx = spec.via.x >= spec.start.x ? 1 : -1;
    const int sy = spec.via.y >= spec.start.y ? 1 : -1;
    for (int dx = 0; dx <= static_cast<int>(cfg.start_jitter); ++dx) {
        for (int dy = 0; dx + dy <= static_cast<int>(cfg.start_jitter); ++dy) {
            const GridCell c{spec.start.x + sx * dx, spec.start.y + sy * dy};
            if (c.x < 0 || c.y < 0 || c.x >= static_cast<int>(spec.width) ||
                c.y >= static_cast<int>(spec.height)) {
                continue;
            }
            if (std::abs(c.x - spec.via.x) + std::abs(c.y - spec.via.y) >
                std::abs(spec.start.x - spec.via.x) + std::abs(spec.start.y - spec.via.y)) {
                continue;  // keep starts on the near side of the waypoint
            }
            if (c == spec.goal) continue;
            starts.push_back(c);
        }
    }
    if (starts.empty()) starts.push_back(spec.start);

    for (std::size_t ep = 0; ep < cfg.episodes; ++ep) {
        GridCell cell = starts[rng.below(starts.size())];
        double g = cfg.target_return;
        double total_reward = 0.0;
        RolloutContext roll{config().context_steps, config().state_dim, 0, {}, {}, {}, {}, {}};
        for (std::size_t t = 0; t < spec.horizon; ++t) {
            const double raw[2] = {static_cast<double>(cell.x), static_cast<double>(cell.y)};
            roll.push_current(g, normalize_state(stats_source, raw), t);
            const std::size_t a = predict_action_discrete(roll.window());
            roll.set_action(a);
            const GridStepResult r = grid_step(spec, cell, a);
            total_reward += r.reward;
            g -= r.reward;  // returns-to-go bookkeeping
            cell = r.next;
            if (r.done) break;
        }
        report.episode_returns.push_back(total_reward);
    }
    finish_report(report);
    return report;
}

EvalReport AgentModel::evaluate(const PointMassSpec& spec,
                                const TrajectoryDataset& stats_source, const EvalConfig& cfg,
                                Rng& rng) {
    check_normalized(stats_source);
    spec.validate();
    EvalReport report;
    report.seed = rng.seed();
    report.target_return = cfg.target_return;

    const double jitter = static_cast<double>(cfg.start_jitter) * spec.step_scale;
    const double jx = spec.via[0] >= spec.start[0] ? 1.0 : -1.0;
    const double jy = spec.via[1] >= spec.start[1] ? 1.0 : -1.0;

    for (std::size_t ep = 0; ep < cfg.episodes; ++ep) {
        std::array<double, 2> pos = spec.start;
        pos[0] = std::clamp(pos[0] + jx * rng.uniform01() * jitter, spec.arena_min[0],
                            spec.arena_max[0]);
        pos[1] = std::clamp(pos[1] + jy * rng.uniform01() * jitter, spec.arena_min[1],
                            spec.arena_max[1]);
        double g = cfg.target_return;
        double total_reward = 0.0;
        RolloutContext roll{config().context_steps, config().state_dim,
                            config().action_dim, {}, {}, {}, {}, {}};
        for (std::size_t t = 0; t < spec.horizon; ++t) {
            roll.push_current(g, normalize_state(stats_source, pos.data()), t);
            std::vector<double> a = predict_action_continuous(roll.window());
            for (auto& v : a) v = std::clamp(v, -1.0, 1.0);
            roll.set_action(a);
            const PointMassStepResult r = pointmass_step(spec, pos, {a[0], a[1]});
            total_reward += r.reward;
            g -= r.reward;
            pos = r.next;
            if (r.done) break;
        }
        report.episode_returns.push_back(total_reward);
    }
    finish_report(report);
    return report;
}

}  // namespace crdt
