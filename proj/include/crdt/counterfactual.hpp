#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "crdt/envs.hpp"
#include "crdt/outcome.hpp"
#include "crdt/treatment.hpp"

namespace crdt {

// Inverse standard normal CDF (rational approximation, |relative error|
// well under 1e-8). Argument must lie strictly inside (0, 1).
double standard_normal_quantile(double p);

enum class EncounterEstimator { binned, constant };

enum class AblationMode {
    none,
    no_rtg_comparison,    // drop the returns-to-go filter criterion
    no_uncertainty_gate,  // drop the accumulated-variance gate
    sample_action,        // draw from the treatment distribution instead of outliers
    sample_action_noise,  // factual action plus small noise
};

struct SelectionConfig {
    // Discrete spaces: counterfactual actions have probability < prob_threshold.
    double prob_threshold = 0.1;  // gamma
    // Continuous spaces: candidates sit at and beyond the gaussian-max bound,
    // a(j) = mu - quantile(0.08 - j*step) * sigma * sqrt(ln n_enc), j=0..count.
    std::size_t candidate_count = 4;  // n_a
    double quantile_step = 0.015;     // beta
    bool mirror_tails = true;         // also emit the opposite tail

    // Encounter count (n_enc) estimation.
    EncounterEstimator estimator = EncounterEstimator::binned;
    double bin_width = 0.25;            // on (state, rtg), normalized units
    double constant_encounters = 100.0; // constant-estimator value

    // Outcome uncertainty.
    std::size_t mc_passes = 10;     // m
    double variance_budget = 0.05;  // alpha
    // Rewrite horizon cap (xi); steps rewritten per attempt are
    // min(remaining steps, max_rewrite_steps).
    std::size_t max_rewrite_steps = std::numeric_limits<std::size_t>::max();

    // Filtering: candidate passes when predicted g_{t+1} <= factual (or <
    // when strict).
    bool strict_rtg_improvement = false;

    AblationMode ablation = AblationMode::none;

    void validate() const;
    std::string to_json() const;
    static SelectionConfig from_json(const std::string& text);
};

// All actions whose treatment probability is below the threshold, the
// factual action excluded. Ascending action id order.
std::vector<std::size_t> select_discrete(const ActionDistribution& dist, double prob_threshold,
                                         std::size_t factual_action);

struct ContinuousCandidate {
    std::vector<double> action;
    std::size_t selection_index = 0;  // j
    int tail_sign = +1;               // +1: the literal bound tail, -1: mirrored
};

// Quantile-walk candidates per dimension with a shared j. Per dimension,
// |a - mu| >= -quantile(0.08) * sigma * sqrt(ln n_enc), strictly increasing
// in j.
std::vector<ContinuousCandidate> select_continuous(const std::vector<double>& mean,
                                                   const std::vector<double>& stddev,
                                                   double encounter_count,
                                                   const SelectionConfig& cfg);

// Counts training steps per discretized (state, returns-to-go) bin;
// estimates how often the models saw a given input. Floored at 2 so
// ln(n_enc) stays positive.
class EncounterIndex {
public:
    EncounterIndex(const TrajectoryDataset& dataset, double bin_width);
    double estimate(const std::vector<double>& state, double rtg) const;
    std::size_t bins() const { return counts_.size(); }

private:
    double bin_width_;
    std::map<std::vector<long>, std::size_t> counts_;
    std::vector<long> key(const double* state, std::size_t dim, double rtg) const;
    std::size_t state_dim_;
};

// One evaluated counterfactual action with its predicted outcome.
struct CounterfactualCandidate {
    std::size_t action_id = 0;         // discrete
    std::vector<double> action;        // continuous
    int selection_index = 0;           // j (discrete: the action id)
    int tail_sign = +1;
    std::vector<double> next_state;
    double next_rtg = 0.0;
    double step_variance = 0.0;
    bool passed_rtg = false;
    bool passed_gate = false;
};

enum class ReasonFailure {
    none,
    empty_selection,
    all_filtered_by_return,
    uncertainty_gate,
    horizon,
};

std::string failure_name(ReasonFailure f);

struct ReasonResult {
    bool success = false;
    ReasonFailure failure = ReasonFailure::none;
    Trajectory trajectory;      // valid on success
    UncertaintyLedger ledger;   // accepted per-step variances
    std::size_t rewrite_start = 0;
    std::size_t steps_rewritten = 0;
};

struct BufferStats {
    std::size_t attempts = 0;
    std::size_t successes = 0;
    std::map<std::string, std::size_t> failure_counts;
    double success_rate() const {
        return attempts == 0 ? 0.0 : static_cast<double>(successes) / static_cast<double>(attempts);
    }
    std::string to_json() const;
};

struct CounterfactualBuffer {
    std::vector<Trajectory> trajectories;
    std::vector<UncertaintyLedger> ledgers;  // parallel to trajectories
    std::size_t capacity = 0;                // n_e
};

// The iterative rewriting engine: treatment proposes outlier actions,
// outcome predicts their consequences, filtering keeps the best admissible
// candidate, and the splice feeds the next step.
class CounterfactualEngine {
public:
    CounterfactualEngine(TreatmentModel& treatment, OutcomeModel& outcome,
                         const TrajectoryDataset& dataset, SelectionConfig cfg);

    const SelectionConfig& config() const { return cfg_; }

    // Single reasoning attempt over source[t0..]. The rng must be dedicated
    // to this attempt; replaying with the same rng reproduces the result
    // bitwise.
    ReasonResult reason(std::size_t source_index, std::size_t t0, Rng rng) const;

    // Fills a buffer of up to `capacity` rewrites, sampling (trajectory, t0)
    // uniformly per attempt, stopping when full or after `attempt_budget`
    // attempts.
    std::pair<CounterfactualBuffer, BufferStats> populate(std::size_t capacity,
                                                          std::size_t attempt_budget,
                                                          Rng& rng) const;

    // Replay audit: re-runs the attempt recorded in the trajectory's
    // provenance and verifies (a) it succeeds, (b) it reproduces the stored
    // trajectory bitwise, (c) every rewritten step satisfies the selection
    // and filtering criteria. Returns a human-readable violation list
    // (empty = clean).
    std::vector<std::string> audit(const Trajectory& stored) const;

private:
    TreatmentModel& treatment_;
    OutcomeModel& outcome_;
    const TrajectoryDataset& dataset_;
    SelectionConfig cfg_;
    std::optional<EncounterIndex> encounters_;

    struct StepOutcome {
        bool ok = false;
        ReasonFailure failure = ReasonFailure::none;
        CounterfactualCandidate chosen;
    };
    StepOutcome rewrite_step(Trajectory& working, const Trajectory& source, std::size_t t,
                             UncertaintyLedger& ledger, Rng& rng) const;
    std::vector<CounterfactualCandidate> propose(const ContextWindow& ctx,
                                                 const Trajectory& working, std::size_t t,
                                                 Rng& rng) const;
};

// Best admissible candidate: drops candidates with predicted next rtg above
// the factual value (unless ablated), drops candidates whose variance would
// push the ledger past its threshold (unless ablated), then picks the
// minimal predicted rtg; ties break to smaller |selection_index|, then
// lexicographic action order. Marks pass/fail flags on all candidates.
std::optional<std::size_t> filter_candidates(std::vector<CounterfactualCandidate>& candidates,
                                             double factual_next_rtg,
                                             const UncertaintyLedger& ledger,
                                             const SelectionConfig& cfg);

}  // namespace crdt
