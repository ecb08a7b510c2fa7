#include "crdt/outcome.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "crdt/optimizer.hpp"
#include "crdt/treatment.hpp"

namespace crdt {

double max_variance(const McSampleMatrix& samples) {
    if (samples.passes < 2) {
        throw std::invalid_argument("max_variance: needs at least two passes");
    }
    const std::size_t m = samples.passes, d = samples.state_dim;
    double best = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < m; ++i) mean += samples.states[i * d + j];
        mean /= static_cast<double>(m);
        double ss = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            const double diff = samples.states[i * d + j] - mean;
            ss += diff * diff;
        }
        // Unbiased (m-1) denominator.
        best = std::max(best, ss / static_cast<double>(m - 1));
    }
    return best;
}

void UncertaintyLedger::append(double value) {
    if (value < 0.0) throw std::invalid_argument("uncertainty ledger: negative variance");
    entries.push_back(value);
    total += value;
}

bool uncertainty_gate(UncertaintyLedger& ledger, double new_variance) {
    ledger.append(new_variance);
    return ledger.unfamiliar();
}

double mse_loss(const OutcomePrediction& pred, const std::vector<double>& state_target,
                double rtg_target) {
    if (pred.state.size() != state_target.size()) {
        throw std::invalid_argument("outcome mse: state dimension mismatch");
    }
    double total = 0.0;
    for (std::size_t d = 0; d < pred.state.size(); ++d) {
        const double diff = pred.state[d] - state_target[d];
        total += diff * diff;
    }
    const double gdiff = pred.rtg - rtg_target;
    return total + gdiff * gdiff;
}

OutcomeModel::OutcomeModel(ModelConfig cfg) : model_(cfg, HeadKind::outcome, "outcome") {}

OutcomeModel::OutcomeModel(SequenceModel model) : model_(std::move(model)) {
    if (model_.head() != HeadKind::outcome) {
        throw std::invalid_argument("outcome model: checkpoint has the wrong head kind");
    }
}

OutcomeModel OutcomeModel::load(const std::string& path) {
    return OutcomeModel(SequenceModel::load(path));
}

void OutcomeModel::check_complete(const ContextWindow& ctx) const {
    if (ctx.steps == 0 || !ctx.last_action_valid) {
        throw std::invalid_argument(
            "outcome model: context must end with a complete (g, s, a) triple");
    }
}

OutcomePrediction OutcomeModel::predict(const ContextWindow& raw) {
    check_complete(raw);
    ContextWindow ctx = truncate_to_recent(raw, config().context_steps);
    Tape tape;
    Rng no_dropout(0);
    Var hidden = model_.encode(tape, ctx, false, no_dropout);
    auto [ns, ng] = model_.outcome(tape, hidden, ctx);
    OutcomePrediction out;
    const Tensor& s = tape.value(ns);
    out.state.assign(s.data.end() - static_cast<std::ptrdiff_t>(config().state_dim),
                     s.data.end());
    out.rtg = tape.value(ng).data.back();
    return out;
}

McSampleMatrix OutcomeModel::mc_sample(const ContextWindow& raw, std::size_t passes, Rng& rng) {
    if (passes < 2) {
        throw std::invalid_argument("mc_sample: needs at least two passes");
    }
    check_complete(raw);
    ContextWindow ctx = truncate_to_recent(raw, config().context_steps);
    McSampleMatrix out;
    out.passes = passes;
    out.state_dim = config().state_dim;
    out.states.reserve(passes * out.state_dim);
    out.rtgs.reserve(passes);
    for (std::size_t i = 0; i < passes; ++i) {
        Tape tape;
        Var hidden = model_.encode(tape, ctx, true, rng);
        auto [ns, ng] = model_.outcome(tape, hidden, ctx);
        const Tensor& s = tape.value(ns);
        out.states.insert(out.states.end(),
                          s.data.end() - static_cast<std::ptrdiff_t>(out.state_dim),
                          s.data.end());
        out.rtgs.push_back(tape.value(ng).data.back());
    }
    return out;
}

namespace {

// Target (s_{t+1}, g_{t+1}) for global step t. The last step targets the
// stored final state and the remaining return g_T - r_T.
void step_target(const Trajectory& traj, std::size_t t, double* state_out, double& rtg_out) {
    if (t + 1 < traj.length()) {
        for (std::size_t d = 0; d < traj.state_dim; ++d) state_out[d] = traj.state_at(t + 1)[d];
        rtg_out = traj.returns_to_go[t + 1];
    } else {
        for (std::size_t d = 0; d < traj.state_dim; ++d) state_out[d] = traj.final_state[d];
        rtg_out = traj.returns_to_go[t] - traj.rewards[t];
    }
}

}  // namespace

TrainLog OutcomeModel::fit(const TrajectoryDataset& dataset, const FitConfig& cfg, Rng& rng) {
    if (dataset.trajectories.empty()) {
        throw std::invalid_argument("outcome fit: empty dataset");
    }
    WindowSampler sampler(dataset);
    Adam opt(AdamConfig{.lr = cfg.lr});
    Rng batch_rng = rng.split("batches");
    Rng drop_rng = rng.split("dropout");
    TrainLog log;
    const std::size_t K = config().context_steps;
    const std::size_t ds = config().state_dim;
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
            auto [ns, ng] = model_.outcome(tape, hidden, ctx);
            Var pred = tape.concat_cols({ns, ng});
            Tensor target = Tensor::zeros({ctx.steps, ds + 1});
            for (std::size_t i = 0; i < ctx.steps; ++i) {
                double g = 0.0;
                step_target(traj, si + i, target.data.data() + i * (ds + 1), g);
                target.data[i * (ds + 1) + ds] = g;
            }
            const std::vector<std::uint8_t> valid(ctx.steps, 1);
            Var loss = tape.mse_rows(pred, target, valid);
            window_losses.emplace_back(loss, ctx.steps);
            total_valid += ctx.steps;
        }
        for (const auto& [loss, count] : window_losses) {
            Var weighted =
                tape.scale(loss, static_cast<double>(count) / static_cast<double>(total_valid));
            total = total.valid() ? tape.add(total, weighted) : weighted;
        }
        const double loss_value = tape.value(total).data[0];
        if (!std::isfinite(loss_value)) {
            throw std::runtime_error("outcome fit: non-finite loss at step " +
                                     std::to_string(step));
        }
        tape.backward(total);
        opt.step(model_.params());
        log.losses.push_back(loss_value);
    }
    return log;
}

double OutcomeModel::eval_loss(const TrajectoryDataset& dataset, std::size_t samples, Rng& rng) {
    WindowSampler sampler(dataset);
    const std::size_t K = config().context_steps;
    double total = 0.0;
    for (std::size_t i = 0; i < samples; ++i) {
        const auto [ti, si] = sampler.sample(rng);
        const Trajectory& traj = dataset.trajectories[ti];
        // Window ending at si with a complete final triple.
        const std::size_t begin = si + 1 >= K ? si + 1 - K : 0;
        ContextWindow ctx = make_context_window(traj, begin, si - begin + 1);
        OutcomePrediction pred = predict(ctx);
        std::vector<double> state_target(config().state_dim);
        double rtg_target = 0.0;
        step_target(traj, si, state_target.data(), rtg_target);
        total += mse_loss(pred, state_target, rtg_target);
    }
    return total / static_cast<double>(samples);
}

double calibrate_variance_budget(OutcomeModel& model, const TrajectoryDataset& dataset,
                                 std::size_t mc_passes, std::size_t rollouts, Rng& rng) {
    if (dataset.trajectories.empty()) {
        throw std::invalid_argument("variance calibration: empty dataset");
    }
    const std::size_t K = model.config().context_steps;
    std::vector<double> accumulated;
    accumulated.reserve(rollouts);
    for (std::size_t i = 0; i < rollouts; ++i) {
        const std::size_t ti = rng.below(dataset.trajectories.size());
        const Trajectory& traj = dataset.trajectories[ti];
        if (traj.length() < 2) continue;
        const std::size_t t0 = rng.below(traj.length() - 1);
        double sum = 0.0;
        for (std::size_t t = t0; t < traj.length(); ++t) {
            const std::size_t begin = t + 1 >= K ? t + 1 - K : 0;
            ContextWindow ctx = make_context_window(traj, begin, t - begin + 1);
            Rng mc_rng = rng.split(i * 1000 + t);
            sum += max_variance(model.mc_sample(ctx, mc_passes, mc_rng));
        }
        accumulated.push_back(sum);
    }
    if (accumulated.empty()) {
        throw std::runtime_error("variance calibration: no usable rollouts");
    }
    std::sort(accumulated.begin(), accumulated.end());
    // Nearest-rank 90th percentile.
    const std::size_t idx = std::min(
        accumulated.size() - 1,
        static_cast<std::size_t>(std::ceil(0.9 * static_cast<double>(accumulated.size()))) - 1);
    return accumulated[idx];
}

}  // namespace crdt
