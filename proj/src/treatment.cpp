#include "crdt/treatment.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "crdt/optimizer.hpp"

namespace crdt {

namespace {

constexpr double kProbFloor = 1e-12;

HeadKind head_for(const ModelConfig& cfg) {
    return cfg.action_space == ActionSpace::discrete ? HeadKind::action_logits
                                                     : HeadKind::action_gaussian;
}

}  // namespace

void TrainLog::write_csv(const std::string& path, const std::string& value_name) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("train log: cannot write " + path);
    out << "step," << value_name << "\n";
    out.precision(17);
    for (std::size_t i = 0; i < losses.size(); ++i) {
        out << i << "," << losses[i] << "\n";
    }
}

double ce_loss(const std::vector<ActionDistribution>& dists,
               const std::vector<std::size_t>& true_actions) {
    if (dists.empty() || dists.size() != true_actions.size()) {
        throw std::invalid_argument("ce_loss: distribution/label count mismatch");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < dists.size(); ++i) {
        if (!dists[i].is_discrete()) {
            throw std::invalid_argument("ce_loss: requires discrete distributions");
        }
        if (true_actions[i] >= dists[i].probs.size()) {
            throw std::invalid_argument("ce_loss: action id out of range");
        }
        total -= std::log(std::max(dists[i].probs[true_actions[i]], kProbFloor));
    }
    return total / static_cast<double>(dists.size());
}

double gaussian_nll_loss(const std::vector<ActionDistribution>& dists,
                         const std::vector<std::vector<double>>& true_actions) {
    if (dists.empty() || dists.size() != true_actions.size()) {
        throw std::invalid_argument("gaussian_nll_loss: distribution/label count mismatch");
    }
    const double log2pi = std::log(2.0 * M_PI);
    double total = 0.0;
    for (std::size_t i = 0; i < dists.size(); ++i) {
        const auto& d = dists[i];
        if (d.is_discrete() || d.mean.size() != true_actions[i].size() ||
            d.variance.size() != d.mean.size()) {
            throw std::invalid_argument("gaussian_nll_loss: requires matching gaussians");
        }
        for (std::size_t k = 0; k < d.mean.size(); ++k) {
            const double diff = true_actions[i][k] - d.mean[k];
            const double s2 = d.variance[k];
            total += diff * diff / (2.0 * s2) + 0.5 * (std::log(s2) + log2pi);
        }
    }
    return total / static_cast<double>(dists.size());
}

ContextWindow truncate_to_recent(const ContextWindow& ctx, std::size_t max_steps) {
    if (ctx.steps <= max_steps) return ctx;
    const std::size_t drop = ctx.steps - max_steps;
    ContextWindow out;
    out.steps = max_steps;
    out.rtg.assign(ctx.rtg.begin() + static_cast<std::ptrdiff_t>(drop), ctx.rtg.end());
    const std::size_t ds = ctx.states.size() / ctx.steps;
    out.states.assign(ctx.states.begin() + static_cast<std::ptrdiff_t>(drop * ds),
                      ctx.states.end());
    if (!ctx.actions_discrete.empty()) {
        out.actions_discrete.assign(
            ctx.actions_discrete.begin() + static_cast<std::ptrdiff_t>(drop),
            ctx.actions_discrete.end());
    }
    if (!ctx.actions_continuous.empty()) {
        const std::size_t da = ctx.actions_continuous.size() / ctx.steps;
        out.actions_continuous.assign(
            ctx.actions_continuous.begin() + static_cast<std::ptrdiff_t>(drop * da),
            ctx.actions_continuous.end());
    }
    out.timesteps.assign(ctx.timesteps.begin() + static_cast<std::ptrdiff_t>(drop),
                         ctx.timesteps.end());
    out.step_valid.assign(ctx.step_valid.begin() + static_cast<std::ptrdiff_t>(drop),
                          ctx.step_valid.end());
    out.last_action_valid = ctx.last_action_valid;
    return out;
}

TreatmentModel::TreatmentModel(ModelConfig cfg)
    : model_(cfg, head_for(cfg), "treatment") {}

TreatmentModel::TreatmentModel(SequenceModel model) : model_(std::move(model)) {
    if (model_.head() != head_for(model_.config())) {
        throw std::invalid_argument("treatment model: checkpoint has the wrong head kind");
    }
}

TreatmentModel TreatmentModel::load(const std::string& path) {
    return TreatmentModel(SequenceModel::load(path));
}

std::vector<ActionDistribution> TreatmentModel::distribution_per_step(const ContextWindow& raw) {
    ContextWindow ctx = truncate_to_recent(raw, config().context_steps);
    // The prediction at each s-token cannot see that step's action token, so
    // leaving stored actions in place is harmless; the final step's slot is
    // masked anyway when the caller marks it invalid.
    Tape tape;
    Rng no_dropout(0);
    Var hidden = model_.encode(tape, ctx, false, no_dropout);
    std::vector<ActionDistribution> out(ctx.steps);
    if (config().action_space == ActionSpace::discrete) {
        Var logits = model_.action_logits(tape, hidden, ctx.steps);
        std::vector<std::uint8_t> all(ctx.steps * config().n_actions, 1);
        Var probs = tape.softmax_rows_masked(logits, all);
        const Tensor& p = tape.value(probs);
        for (std::size_t i = 0; i < ctx.steps; ++i) {
            out[i].probs.assign(p.data.begin() + static_cast<std::ptrdiff_t>(i * config().n_actions),
                                p.data.begin() +
                                    static_cast<std::ptrdiff_t>((i + 1) * config().n_actions));
        }
    } else {
        auto [mu, logvar] = model_.action_gaussian(tape, hidden, ctx.steps);
        const Tensor& m = tape.value(mu);
        const Tensor& lv = tape.value(logvar);
        for (std::size_t i = 0; i < ctx.steps; ++i) {
            out[i].mean.resize(config().action_dim);
            out[i].variance.resize(config().action_dim);
            for (std::size_t k = 0; k < config().action_dim; ++k) {
                out[i].mean[k] = m.at(i, k);
                out[i].variance[k] = std::exp(lv.at(i, k));
            }
        }
    }
    return out;
}

ActionDistribution TreatmentModel::distribution(const ContextWindow& ctx) {
    return distribution_per_step(ctx).back();
}

TrainLog TreatmentModel::fit(const TrajectoryDataset& dataset, const FitConfig& cfg, Rng& rng) {
    if (dataset.trajectories.empty()) {
        throw std::invalid_argument("treatment fit: empty dataset");
    }
    WindowSampler sampler(dataset);
    Adam opt(AdamConfig{.lr = cfg.lr});
    Rng batch_rng = rng.split("batches");
    Rng drop_rng = rng.split("dropout");
    TrainLog log;
    const std::size_t K = config().context_steps;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        Tape tape;
        Var total{};
        std::size_t total_valid = 0;
        std::vector<std::pair<Var, std::size_t>> window_losses;
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            const auto [ti, si] = sampler.sample(batch_rng);
            const Trajectory& traj = dataset.trajectories[ti];
            ContextWindow ctx = make_context_window(traj, si, K);
            Var hidden = model_.encode(tape, ctx, true, drop_rng);
            const std::vector<std::uint8_t> valid(ctx.steps, 1);
            Var loss{};
            if (config().action_space == ActionSpace::discrete) {
                Var logits = model_.action_logits(tape, hidden, ctx.steps);
                loss = tape.cross_entropy_logits(logits, ctx.actions_discrete, valid);
            } else {
                auto [mu, logvar] = model_.action_gaussian(tape, hidden, ctx.steps);
                Tensor target = Tensor::zeros({ctx.steps, config().action_dim});
                target.data = ctx.actions_continuous;
                loss = tape.gaussian_nll_rows(mu, logvar, target, valid);
            }
            window_losses.emplace_back(loss, ctx.steps);
            total_valid += ctx.steps;
        }
        // Mean over all valid steps in the batch: weight each window loss by
        // its share of steps.
        for (const auto& [loss, count] : window_losses) {
            Var weighted =
                tape.scale(loss, static_cast<double>(count) / static_cast<double>(total_valid));
            total = total.valid() ? tape.add(total, weighted) : weighted;
        }
        const double loss_value = tape.value(total).data[0];
        if (!std::isfinite(loss_value)) {
            throw std::runtime_error("treatment fit: non-finite loss at step " +
                                     std::to_string(step));
        }
        tape.backward(total);
        opt.step(model_.params());
        log.losses.push_back(loss_value);
    }
    return log;
}

}  // namespace crdt
