#include "crdt/counterfactual.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace crdt {

using nlohmann::json;

double standard_normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        throw std::invalid_argument("normal quantile: argument must be in (0, 1), got " +
                                    std::to_string(p));
    }
    // Acklam's rational approximation, |relative error| < 1.2e-9.
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    constexpr double plow = 0.02425;
    double q, r, x;
    if (p < plow) {
        q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - plow) {
        q = p - 0.5;
        r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    return x;
}

void SelectionConfig::validate() const {
    if (!(prob_threshold > 0.0 && prob_threshold < 1.0)) {
        throw std::invalid_argument("selection config: prob_threshold must be in (0, 1)");
    }
    if (candidate_count < 1) {
        throw std::invalid_argument("selection config: candidate_count must be >= 1");
    }
    if (quantile_step <= 0.0) {
        throw std::invalid_argument("selection config: quantile_step must be > 0");
    }
    if (0.08 - static_cast<double>(candidate_count) * quantile_step <= 0.0) {
        throw std::invalid_argument(
            "selection config: 0.08 - candidate_count * quantile_step must stay positive");
    }
    if (mc_passes < 2) {
        throw std::invalid_argument("selection config: mc_passes must be >= 2");
    }
    if (variance_budget < 0.0) {
        throw std::invalid_argument("selection config: variance_budget must be >= 0");
    }
    if (bin_width <= 0.0) {
        throw std::invalid_argument("selection config: bin_width must be > 0");
    }
    if (constant_encounters < 2.0) {
        throw std::invalid_argument("selection config: constant_encounters must be >= 2");
    }
}

namespace {

const char* ablation_name(AblationMode m) {
    switch (m) {
        case AblationMode::none: return "none";
        case AblationMode::no_rtg_comparison: return "no-g";
        case AblationMode::no_uncertainty_gate: return "no-gate";
        case AblationMode::sample_action: return "sample";
        case AblationMode::sample_action_noise: return "sample-noise";
    }
    return "none";
}

AblationMode ablation_from(const std::string& s) {
    if (s == "none") return AblationMode::none;
    if (s == "no-g") return AblationMode::no_rtg_comparison;
    if (s == "no-gate") return AblationMode::no_uncertainty_gate;
    if (s == "sample") return AblationMode::sample_action;
    if (s == "sample-noise") return AblationMode::sample_action_noise;
    throw std::invalid_argument("unknown ablation mode: " + s);
}

}  // namespace

std::string SelectionConfig::to_json() const {
    json j;
    j["prob_threshold"] = prob_threshold;
    j["candidate_count"] = candidate_count;
    j["quantile_step"] = quantile_step;
    j["mirror_tails"] = mirror_tails;
    j["estimator"] = estimator == EncounterEstimator::binned ? "binned" : "constant";
    j["bin_width"] = bin_width;
    j["constant_encounters"] = constant_encounters;
    j["mc_passes"] = mc_passes;
    j["variance_budget"] = variance_budget;
    if (max_rewrite_steps == std::numeric_limits<std::size_t>::max()) {
        j["max_rewrite_steps"] = nullptr;
    } else {
        j["max_rewrite_steps"] = max_rewrite_steps;
    }
    j["strict_rtg_improvement"] = strict_rtg_improvement;
    j["ablation"] = ablation_name(ablation);
    return j.dump();
}

SelectionConfig SelectionConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    SelectionConfig c;
    c.prob_threshold = j.value("prob_threshold", c.prob_threshold);
    c.candidate_count = j.value("candidate_count", c.candidate_count);
    c.quantile_step = j.value("quantile_step", c.quantile_step);
    c.mirror_tails = j.value("mirror_tails", c.mirror_tails);
    if (j.value("estimator", "binned") == std::string("constant")) {
        c.estimator = EncounterEstimator::constant;
    }
    c.bin_width = j.value("bin_width", c.bin_width);
    c.constant_encounters = j.value("constant_encounters", c.constant_encounters);
    c.mc_passes = j.value("mc_passes", c.mc_passes);
    c.variance_budget = j.value("variance_budget", c.variance_budget);
    if (j.contains("max_rewrite_steps") && !j["max_rewrite_steps"].is_null()) {
        c.max_rewrite_steps = j["max_rewrite_steps"].get<std::size_t>();
    }
    c.strict_rtg_improvement = j.value("strict_rtg_improvement", c.strict_rtg_improvement);
    c.ablation = ablation_from(j.value("ablation", "none"));
    c.validate();
    return c;
}

std::vector<std::size_t> select_discrete(const ActionDistribution& dist, double prob_threshold,
                                         std::size_t factual_action) {
    if (!dist.is_discrete()) {
        throw std::invalid_argument("select_discrete: distribution is not categorical");
    }
    std::vector<std::size_t> out;
    for (std::size_t a = 0; a < dist.probs.size(); ++a) {
        if (a == factual_action) continue;
        if (dist.probs[a] < prob_threshold) out.push_back(a);
    }
    return out;
}

std::vector<ContinuousCandidate> select_continuous(const std::vector<double>& mean,
                                                   const std::vector<double>& stddev,
                                                   double encounter_count,
                                                   const SelectionConfig& cfg) {
    cfg.validate();
    if (mean.size() != stddev.size() || mean.empty()) {
        throw std::invalid_argument("select_continuous: mean/stddev size mismatch");
    }
    for (double s : stddev) {
        if (!(s > 0.0)) throw std::invalid_argument("select_continuous: stddev must be > 0");
    }
    if (encounter_count < 2.0) {
        throw std::invalid_argument("select_continuous: encounter count must be >= 2");
    }
    const double spread = std::sqrt(std::log(encounter_count));
    std::vector<ContinuousCandidate> out;
    for (std::size_t j = 0; j <= cfg.candidate_count; ++j) {
        const double q = 0.08 - static_cast<double>(j) * cfg.quantile_step;
        const double coeff = -standard_normal_quantile(q);  // positive, grows with j
        ContinuousCandidate upper;
        upper.selection_index = j;
        upper.tail_sign = +1;
        upper.action.resize(mean.size());
        for (std::size_t d = 0; d < mean.size(); ++d) {
            upper.action[d] = mean[d] + coeff * stddev[d] * spread;
        }
        out.push_back(std::move(upper));
        if (cfg.mirror_tails) {
            ContinuousCandidate lower;
            lower.selection_index = j;
            lower.tail_sign = -1;
            lower.action.resize(mean.size());
            for (std::size_t d = 0; d < mean.size(); ++d) {
                lower.action[d] = mean[d] - coeff * stddev[d] * spread;
            }
            out.push_back(std::move(lower));
        }
    }
    return out;
}

EncounterIndex::EncounterIndex(const TrajectoryDataset& dataset, double bin_width)
    : bin_width_(bin_width), state_dim_(dataset.state_dim) {
    for (const auto& t : dataset.trajectories) {
        for (std::size_t i = 0; i < t.length(); ++i) {
            counts_[key(t.state_at(i), state_dim_, t.returns_to_go[i])] += 1;
        }
    }
}

std::vector<long> EncounterIndex::key(const double* state, std::size_t dim, double rtg) const {
    std::vector<long> k(dim + 1);
    for (std::size_t d = 0; d < dim; ++d) {
        k[d] = static_cast<long>(std::floor(state[d] / bin_width_));
    }
    k[dim] = static_cast<long>(std::floor(rtg / bin_width_));
    return k;
}

double EncounterIndex::estimate(const std::vector<double>& state, double rtg) const {
    const auto it = counts_.find(key(state.data(), state_dim_, rtg));
    const std::size_t n = it == counts_.end() ? 0 : it->second;
    return std::max<double>(static_cast<double>(n), 2.0);
}

std::string failure_name(ReasonFailure f) {
    switch (f) {
        case ReasonFailure::none: return "none";
        case ReasonFailure::empty_selection: return "empty_selection";
        case ReasonFailure::all_filtered_by_return: return "all_filtered_by_return";
        case ReasonFailure::uncertainty_gate: return "uncertainty_gate";
        case ReasonFailure::horizon: return "horizon";
    }
    return "unknown";
}

std::string BufferStats::to_json() const {
    json j;
    j["attempts"] = attempts;
    j["successes"] = successes;
    j["success_rate"] = success_rate();
    j["failures"] = failure_counts;
    return j.dump();
}

std::optional<std::size_t> filter_candidates(std::vector<CounterfactualCandidate>& candidates,
                                             double factual_next_rtg,
                                             const UncertaintyLedger& ledger,
                                             const SelectionConfig& cfg) {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        auto& c = candidates[i];
        c.passed_rtg = cfg.ablation == AblationMode::no_rtg_comparison ||
                       (cfg.strict_rtg_improvement ? c.next_rtg < factual_next_rtg
                                                   : c.next_rtg <= factual_next_rtg);
        c.passed_gate = cfg.ablation == AblationMode::no_uncertainty_gate ||
                        ledger.total + c.step_variance <= ledger.threshold;
        if (!c.passed_rtg || !c.passed_gate) continue;
        if (!best) {
            best = i;
            continue;
        }
        const auto& b = candidates[*best];
        if (c.next_rtg != b.next_rtg) {
            if (c.next_rtg < b.next_rtg) best = i;
            continue;
        }
        if (std::abs(c.selection_index) != std::abs(b.selection_index)) {
            if (std::abs(c.selection_index) < std::abs(b.selection_index)) best = i;
            continue;
        }
        if (c.action.empty()) {
            if (c.action_id < b.action_id) best = i;
        } else if (std::lexicographical_compare(c.action.begin(), c.action.end(),
                                                b.action.begin(), b.action.end())) {
            best = i;
        }
    }
    return best;
}

CounterfactualEngine::CounterfactualEngine(TreatmentModel& treatment, OutcomeModel& outcome,
                                           const TrajectoryDataset& dataset, SelectionConfig cfg)
    : treatment_(treatment), outcome_(outcome), dataset_(dataset), cfg_(cfg) {
    cfg_.validate();
    const bool continuous = treatment_.config().action_space == ActionSpace::continuous;
    if (continuous && cfg_.estimator == EncounterEstimator::binned) {
        encounters_.emplace(dataset_, cfg_.bin_width);
    }
}

std::vector<CounterfactualCandidate> CounterfactualEngine::propose(const ContextWindow& ctx,
                                                                   const Trajectory& working,
                                                                   std::size_t t,
                                                                   Rng& rng) const {
    const bool discrete = treatment_.config().action_space == ActionSpace::discrete;
    std::vector<CounterfactualCandidate> out;
    const ActionDistribution dist = treatment_.distribution(ctx);

    auto push_discrete = [&](std::size_t a) {
        CounterfactualCandidate c;
        c.action_id = a;
        c.selection_index = static_cast<int>(a);
        out.push_back(std::move(c));
    };
    auto push_continuous = [&](std::vector<double> a, int j, int tail) {
        CounterfactualCandidate c;
        c.action = std::move(a);
        c.selection_index = j;
        c.tail_sign = tail;
        out.push_back(std::move(c));
    };

    switch (cfg_.ablation) {
        case AblationMode::none:
        case AblationMode::no_rtg_comparison:
        case AblationMode::no_uncertainty_gate: {
            if (discrete) {
                for (std::size_t a :
                     select_discrete(dist, cfg_.prob_threshold, working.actions_discrete[t])) {
                    push_discrete(a);
                }
            } else {
                std::vector<double> stddev(dist.variance.size());
                for (std::size_t d = 0; d < stddev.size(); ++d) {
                    stddev[d] = std::sqrt(dist.variance[d]);
                }
                std::vector<double> state(working.state_at(t),
                                          working.state_at(t) + working.state_dim);
                const double n_enc = cfg_.estimator == EncounterEstimator::binned
                                         ? encounters_->estimate(state, working.returns_to_go[t])
                                         : cfg_.constant_encounters;
                for (auto& cand : select_continuous(dist.mean, stddev, n_enc, cfg_)) {
                    push_continuous(std::move(cand.action), static_cast<int>(cand.selection_index),
                                    cand.tail_sign);
                }
            }
            break;
        }
        case AblationMode::sample_action: {
            // Draw one action from the treatment distribution as-is.
            if (discrete) {
                const double u = rng.uniform01();
                double acc = 0.0;
                std::size_t pick = dist.probs.size() - 1;
                for (std::size_t a = 0; a < dist.probs.size(); ++a) {
                    acc += dist.probs[a];
                    if (u < acc) {
                        pick = a;
                        break;
                    }
                }
                push_discrete(pick);
            } else {
                std::vector<double> a(dist.mean.size());
                for (std::size_t d = 0; d < a.size(); ++d) {
                    a[d] = rng.normal(dist.mean[d], std::sqrt(dist.variance[d]));
                }
                push_continuous(std::move(a), 0, +1);
            }
            break;
        }
        case AblationMode::sample_action_noise: {
            // Factual action plus a small perturbation in [0.01, 0.05] per
            // dimension with random sign; for discrete spaces this becomes a
            // uniformly drawn different action.
            if (discrete) {
                const std::size_t n = treatment_.config().n_actions;
                std::size_t pick = rng.below(n - 1);
                if (pick >= working.actions_discrete[t]) pick += 1;
                push_discrete(pick);
            } else {
                std::vector<double> a(working.actions_continuous.begin() +
                                          static_cast<std::ptrdiff_t>(t * working.action_dim),
                                      working.actions_continuous.begin() +
                                          static_cast<std::ptrdiff_t>((t + 1) * working.action_dim));
                for (auto& v : a) {
                    const double eps = rng.uniform(0.01, 0.05);
                    v += rng.bernoulli(0.5) ? eps : -eps;
                }
                push_continuous(std::move(a), 0, +1);
            }
            break;
        }
    }
    return out;
}

CounterfactualEngine::StepOutcome CounterfactualEngine::rewrite_step(Trajectory& working,
                                                                     const Trajectory& source,
                                                                     std::size_t t,
                                                                     UncertaintyLedger& ledger,
                                                                     Rng& rng) const {
    StepOutcome out;
    const std::size_t K = treatment_.config().context_steps;
    const std::size_t begin = t + 1 >= K ? t + 1 - K : 0;
    ContextWindow ctx = make_context_window(working, begin, t - begin + 1);
    ctx.last_action_valid = false;  // the model must not see a_t while proposing

    std::vector<CounterfactualCandidate> candidates = propose(ctx, working, t, rng);
    if (candidates.empty()) {
        out.failure = ReasonFailure::empty_selection;
        return out;
    }

    const bool discrete = treatment_.config().action_space == ActionSpace::discrete;
    const bool gated = cfg_.ablation != AblationMode::no_uncertainty_gate;
    for (auto& cand : candidates) {
        ContextWindow probe = ctx;
        probe.last_action_valid = true;
        if (discrete) {
            probe.actions_discrete.back() = cand.action_id;
        } else {
            std::copy(cand.action.begin(), cand.action.end(),
                      probe.actions_continuous.end() -
                          static_cast<std::ptrdiff_t>(working.action_dim));
        }
        if (gated) {
            cand.step_variance = max_variance(outcome_.mc_sample(probe, cfg_.mc_passes, rng));
        }
        OutcomePrediction pred = outcome_.predict(probe);
        cand.next_state = std::move(pred.state);
        cand.next_rtg = pred.rtg;
    }

    const std::size_t len = source.length();
    const double factual_next_rtg =
        t + 1 < len ? source.returns_to_go[t + 1]
                    : source.returns_to_go[len - 1] - source.rewards[len - 1];

    const auto best = filter_candidates(candidates, factual_next_rtg, ledger, cfg_);
    if (!best) {
        bool any_rtg_pass = false;
        for (const auto& c : candidates) any_rtg_pass = any_rtg_pass || c.passed_rtg;
        out.failure = any_rtg_pass ? ReasonFailure::uncertainty_gate
                                   : ReasonFailure::all_filtered_by_return;
        return out;
    }
    out.ok = true;
    out.chosen = candidates[*best];
    ledger.append(out.chosen.step_variance);
    return out;
}

ReasonResult CounterfactualEngine::reason(std::size_t source_index, std::size_t t0,
                                          Rng rng) const {
    if (source_index >= dataset_.trajectories.size()) {
        throw std::invalid_argument("reason: source index out of range");
    }
    const Trajectory& source = dataset_.trajectories[source_index];
    const std::size_t len = source.length();
    if (len < 2 || t0 >= len - 1) {
        throw std::invalid_argument("reason: rewrite start must satisfy 0 <= t0 < length-1");
    }
    ReasonResult res;
    res.rewrite_start = t0;
    res.ledger.threshold = cfg_.variance_budget;

    const std::size_t cap_steps = std::min<std::size_t>(len - t0, cfg_.max_rewrite_steps);
    if (cap_steps == 0) {
        res.failure = ReasonFailure::horizon;
        return res;
    }

    Trajectory working = source;
    working.provenance = CfProvenance{source_index, t0, rng.seed()};

    for (std::size_t t = t0; t < t0 + cap_steps; ++t) {
        StepOutcome step = rewrite_step(working, source, t, res.ledger, rng);
        if (!step.ok) {
            res.failure = step.failure;
            return res;
        }
        // Splice: the chosen action and its predicted outcome replace the
        // stored values and feed the next iteration.
        if (working.action_dim == 0) {
            working.actions_discrete[t] = step.chosen.action_id;
        } else {
            std::copy(step.chosen.action.begin(), step.chosen.action.end(),
                      working.actions_continuous.begin() +
                          static_cast<std::ptrdiff_t>(t * working.action_dim));
        }
        if (t + 1 < len) {
            std::copy(step.chosen.next_state.begin(), step.chosen.next_state.end(),
                      working.states.begin() +
                          static_cast<std::ptrdiff_t>((t + 1) * working.state_dim));
            working.returns_to_go[t + 1] = step.chosen.next_rtg;
        } else {
            working.final_state = step.chosen.next_state;
        }
    }

    const std::size_t cap_len = t0 + cap_steps;
    if (cap_len < len) {
        // Horizon-capped rewrite: the trajectory ends where reasoning ended.
        working.final_state.assign(working.state_at(cap_len),
                                   working.state_at(cap_len) + working.state_dim);
        working.states.resize(cap_len * working.state_dim);
        if (working.action_dim == 0) {
            working.actions_discrete.resize(cap_len);
        } else {
            working.actions_continuous.resize(cap_len * working.action_dim);
        }
        working.rewards.resize(cap_len);
        working.returns_to_go.resize(cap_len);
        working.timesteps.resize(cap_len);
    }

    res.success = true;
    res.steps_rewritten = cap_steps;
    res.trajectory = std::move(working);
    return res;
}

std::pair<CounterfactualBuffer, BufferStats> CounterfactualEngine::populate(
    std::size_t capacity, std::size_t attempt_budget, Rng& rng) const {
    CounterfactualBuffer buffer;
    buffer.capacity = capacity;
    BufferStats stats;
    for (std::size_t attempt = 0; attempt < attempt_budget; ++attempt) {
        if (buffer.trajectories.size() >= capacity) break;
        Rng attempt_rng = rng.split(attempt);
        const std::size_t ti = attempt_rng.below(dataset_.trajectories.size());
        const std::size_t len = dataset_.trajectories[ti].length();
        if (len < 2) continue;
        const std::size_t t0 = attempt_rng.below(len - 1);
        stats.attempts += 1;
        ReasonResult res = reason(ti, t0, attempt_rng.split("reason"));
        if (res.success) {
            stats.successes += 1;
            buffer.trajectories.push_back(std::move(res.trajectory));
            buffer.ledgers.push_back(std::move(res.ledger));
        } else {
            stats.failure_counts[failure_name(res.failure)] += 1;
        }
    }
    return {std::move(buffer), std::move(stats)};
}

std::vector<std::string> CounterfactualEngine::audit(const Trajectory& stored) const {
    std::vector<std::string> violations;
    if (!stored.provenance) {
        violations.push_back("missing provenance");
        return violations;
    }
    const auto& prov = *stored.provenance;
    if (prov.source_index >= dataset_.trajectories.size()) {
        violations.push_back("provenance source index out of range");
        return violations;
    }
    const Trajectory& source = dataset_.trajectories[prov.source_index];

    // 1. Replay the attempt from its recorded seed.
    ReasonResult replay = reason(prov.source_index, prov.rewrite_start, Rng(prov.attempt_seed));
    if (!replay.success) {
        violations.push_back("replay failed with reason " + failure_name(replay.failure));
        return violations;
    }
    const Trajectory& re = replay.trajectory;
    if (re.states != stored.states || re.returns_to_go != stored.returns_to_go ||
        re.actions_discrete != stored.actions_discrete ||
        re.actions_continuous != stored.actions_continuous ||
        re.final_state != stored.final_state) {
        violations.push_back("replay does not reproduce the stored trajectory");
    }

    // 2. Accumulated variance stayed within the budget.
    if (cfg_.ablation != AblationMode::no_uncertainty_gate &&
        replay.ledger.total > cfg_.variance_budget) {
        violations.push_back("accumulated variance exceeds the budget");
    }

    // 3. Per rewritten step: the rtg splice respects the factual bound and,
    // for discrete spaces, the chosen action was below the probability
    // threshold at selection time.
    const std::size_t K = treatment_.config().context_steps;
    const std::size_t len = stored.length();
    for (std::size_t t = prov.rewrite_start; t < len; ++t) {
        if (t + 1 < len && t + 1 < source.length() &&
            cfg_.ablation != AblationMode::no_rtg_comparison) {
            const double factual = source.returns_to_go[t + 1];
            const bool ok = cfg_.strict_rtg_improvement ? stored.returns_to_go[t + 1] < factual
                                                        : stored.returns_to_go[t + 1] <= factual;
            if (!ok) {
                violations.push_back("rtg splice above factual at step " + std::to_string(t));
            }
        }
        if (stored.action_dim == 0 && cfg_.ablation == AblationMode::none) {
            const std::size_t begin = t + 1 >= K ? t + 1 - K : 0;
            ContextWindow ctx = make_context_window(stored, begin, t - begin + 1);
            ctx.last_action_valid = false;
            const ActionDistribution dist = treatment_.distribution(ctx);
            if (dist.probs[stored.actions_discrete[t]] >= cfg_.prob_threshold) {
                violations.push_back("selected action not below the probability threshold at step " +
                                     std::to_string(t));
            }
        }
    }
    return violations;
}

}  // namespace crdt
