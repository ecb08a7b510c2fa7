#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "crdt/rng.hpp"
#include "crdt/seqmodel.hpp"

namespace crdt {

// ---------------------------------------------------------------------------
// Toy environments: two corridors crossing at a waypoint. The biased dataset
// holds many failing trajectories along one corridor (start -> via ->
// far corner) and few successful ones along the other (opposite corner ->
// via -> goal). Reaching the goal is the only reward.
// ---------------------------------------------------------------------------

// Action ids are clockwise; documented tie-break order everywhere.
enum class GridAction : std::size_t { up = 0, right = 1, down = 2, left = 3 };
constexpr std::size_t kGridActionCount = 4;

struct GridCell {
    int x = 0;
    int y = 0;
    bool operator==(const GridCell&) const = default;
};

struct GridworldSpec {
    std::size_t width = 8;
    std::size_t height = 8;
    GridCell start{0, 0};
    GridCell goal{7, 0};
    std::size_t horizon = 32;  // 2 * (width + height)
    // Corridor geometry (config knob): both corridors pass through `via`.
    GridCell via{3, 3};
    GridCell bad_corridor_end{7, 7};
    GridCell good_corridor_start{0, 7};

    void validate() const;
    std::string to_json() const;
    static GridworldSpec from_json(const std::string& text);
};

struct GridStepResult {
    GridCell next;
    double reward = 0.0;
    bool done = false;
};

// Deterministic move clipped at walls; reward 1 and done iff the move ends
// on the goal. Throws std::invalid_argument for an action id >= 4.
GridStepResult grid_step(const GridworldSpec& spec, GridCell state, std::size_t action);

struct PointMassSpec {
    std::array<double, 2> arena_min{0.0, 0.0};
    std::array<double, 2> arena_max{1.0, 1.0};
    std::array<double, 2> start{0.05, 0.05};
    std::array<double, 2> goal{0.95, 0.05};
    double goal_radius = 0.08;
    std::size_t horizon = 48;
    double step_scale = 0.07;
    std::array<double, 2> via{0.5, 0.5};
    std::array<double, 2> bad_end{0.95, 0.95};
    std::array<double, 2> good_start{0.05, 0.95};

    void validate() const;
    std::string to_json() const;
    static PointMassSpec from_json(const std::string& text);
};

struct PointMassStepResult {
    std::array<double, 2> next{};
    double reward = 0.0;
    bool done = false;
    bool action_clipped = false;  // caller-visible warning counter input
};

// state += step_scale * action (action clipped into [-1,1]^2), clipped to
// the arena box; reward 1 and done iff within goal_radius of the goal.
PointMassStepResult pointmass_step(const PointMassSpec& spec, std::array<double, 2> state,
                                   std::array<double, 2> action);

// ---------------------------------------------------------------------------
// Trajectories and datasets
// ---------------------------------------------------------------------------

// Provenance of a counterfactual rewrite, carried by buffer trajectories.
struct CfProvenance {
    std::size_t source_index = 0;
    std::size_t rewrite_start = 0;   // t0
    std::uint64_t attempt_seed = 0;  // RNG stream of the reasoning attempt
};

struct Trajectory {
    std::size_t state_dim = 2;
    std::size_t action_dim = 0;  // 0 => discrete action ids
    std::vector<double> states;  // length() x state_dim
    std::vector<std::size_t> actions_discrete;
    std::vector<double> actions_continuous;  // length() x action_dim
    std::vector<double> rewards;
    std::vector<double> returns_to_go;
    std::vector<std::size_t> timesteps;
    bool done = false;
    // State after the final step; gives the outcome model a target for the
    // last step (its remaining return is returns_to_go.back() - rewards.back()).
    std::vector<double> final_state;
    std::optional<CfProvenance> provenance;

    std::size_t length() const { return rewards.size(); }
    double total_return() const;
    const double* state_at(std::size_t t) const { return states.data() + t * state_dim; }
    // Throws std::logic_error if lengths disagree or g_t != r_t + g_{t+1}.
    void validate() const;
};

// Suffix sums: g_t = sum of rewards from t to the end. Empty input throws.
std::vector<double> compute_returns_to_go(const std::vector<double>& rewards);

struct DatasetStats {
    std::vector<double> state_mean;
    std::vector<double> state_std;
    double return_mean = 0.0;
    double return_max = 0.0;
    std::size_t n_success = 0;  // trajectories with positive total return
};

struct TrajectoryDataset {
    std::vector<Trajectory> trajectories;
    std::size_t state_dim = 2;
    std::size_t action_dim = 0;
    std::size_t n_actions = 4;
    // provenance
    std::string env_kind = "gridworld";
    std::string env_json = "{}";
    std::size_t ratio = 0;
    std::size_t n_good = 0;
    std::uint64_t seed = 0;
    bool normalized = false;
    std::vector<double> state_mean;  // set once normalized
    std::vector<double> state_std;

    std::size_t size() const { return trajectories.size(); }
    DatasetStats stats() const;
};

// n_good goal-reaching trajectories along the good corridor plus
// ratio * n_good failing ones along the bad corridor. Only the ratios the
// study uses are accepted.
TrajectoryDataset generate_biased_dataset(const GridworldSpec& spec, std::size_t ratio,
                                          std::size_t n_good, Rng& rng);
TrajectoryDataset generate_biased_dataset(const PointMassSpec& spec, std::size_t ratio,
                                          std::size_t n_good, Rng& rng);

// Per-dimension zero mean / unit variance over all states (std floored at
// 1e-6). Returns the normalized copy; stats are recorded in the dataset for
// the inverse transform at rollout time.
TrajectoryDataset normalize_states(const TrajectoryDataset& dataset);
std::vector<double> normalize_state(const TrajectoryDataset& dataset, const double* raw);
std::vector<double> denormalize_state(const TrajectoryDataset& dataset, const double* norm);

// ---------------------------------------------------------------------------
// Context windows and sampling
// ---------------------------------------------------------------------------

// Window of up to `max_steps` steps of traj starting at `start`. The rtg
// and action entries are the stored ones; states pass through unmodified.
ContextWindow make_context_window(const Trajectory& traj, std::size_t start,
                                  std::size_t max_steps);

// Uniform sampling over all (trajectory, start-index) pairs.
class WindowSampler {
public:
    explicit WindowSampler(const TrajectoryDataset& dataset);
    std::pair<std::size_t, std::size_t> sample(Rng& rng) const;  // (traj, start)
    std::size_t total_pairs() const { return total_; }

private:
    std::vector<std::size_t> cumulative_;
    std::size_t total_ = 0;
};

// ---------------------------------------------------------------------------
// Persistence: newline-delimited JSON, one header record then one record
// per trajectory.
// ---------------------------------------------------------------------------

void write_trajectories(const std::string& path, const TrajectoryDataset& dataset);
TrajectoryDataset read_trajectories(const std::string& path);

}  // namespace crdt
