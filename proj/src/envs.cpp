#include "crdt/envs.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace crdt {

using nlohmann::json;

namespace {

json cell_json(const GridCell& c) { return json::array({c.x, c.y}); }
GridCell cell_from(const json& j) { return GridCell{j.at(0).get<int>(), j.at(1).get<int>()}; }

json arr2_json(const std::array<double, 2>& a) { return json::array({a[0], a[1]}); }
std::array<double, 2> arr2_from(const json& j) {
    return {j.at(0).get<double>(), j.at(1).get<double>()};
}

}  // namespace

void GridworldSpec::validate() const {
    if (width < 2 || height < 2) throw std::invalid_argument("gridworld: grid too small");
    auto inside = [&](GridCell c) {
        return c.x >= 0 && c.y >= 0 && c.x < static_cast<int>(width) &&
               c.y < static_cast<int>(height);
    };
    for (const GridCell& c : {start, goal, via, bad_corridor_end, good_corridor_start}) {
        if (!inside(c)) throw std::invalid_argument("gridworld: cell outside grid");
    }
    if (start == goal) throw std::invalid_argument("gridworld: start equals goal");
    if (horizon == 0) throw std::invalid_argument("gridworld: zero horizon");
}

std::string GridworldSpec::to_json() const {
    json j;
    j["width"] = width;
    j["height"] = height;
    j["start"] = cell_json(start);
    j["goal"] = cell_json(goal);
    j["horizon"] = horizon;
    j["via"] = cell_json(via);
    j["bad_corridor_end"] = cell_json(bad_corridor_end);
    j["good_corridor_start"] = cell_json(good_corridor_start);
    return j.dump();
}

GridworldSpec GridworldSpec::from_json(const std::string& text) {
    json j = json::parse(text);
    GridworldSpec s;
    s.width = j.at("width").get<std::size_t>();
    s.height = j.at("height").get<std::size_t>();
    s.start = cell_from(j.at("start"));
    s.goal = cell_from(j.at("goal"));
    s.horizon = j.at("horizon").get<std::size_t>();
    s.via = cell_from(j.at("via"));
    s.bad_corridor_end = cell_from(j.at("bad_corridor_end"));
    s.good_corridor_start = cell_from(j.at("good_corridor_start"));
    s.validate();
    return s;
}

GridStepResult grid_step(const GridworldSpec& spec, GridCell state, std::size_t action) {
    static constexpr int dx[] = {0, 1, 0, -1};  // up, right, down, left
    static constexpr int dy[] = {1, 0, -1, 0};
    if (action >= kGridActionCount) {
        throw std::invalid_argument("gridworld: invalid action id " + std::to_string(action));
    }
    GridStepResult r;
    r.next.x = std::clamp(state.x + dx[action], 0, static_cast<int>(spec.width) - 1);
    r.next.y = std::clamp(state.y + dy[action], 0, static_cast<int>(spec.height) - 1);
    if (r.next == spec.goal) {
        r.reward = 1.0;
        r.done = true;
    }
    return r;
}

void PointMassSpec::validate() const {
    if (goal_radius <= 0.0) throw std::invalid_argument("pointmass: goal radius must be > 0");
    const double dx = start[0] - goal[0], dy = start[1] - goal[1];
    if (std::sqrt(dx * dx + dy * dy) <= goal_radius) {
        throw std::invalid_argument("pointmass: start inside goal radius");
    }
    if (arena_min[0] >= arena_max[0] || arena_min[1] >= arena_max[1]) {
        throw std::invalid_argument("pointmass: empty arena");
    }
    if (horizon == 0 || step_scale <= 0.0) {
        throw std::invalid_argument("pointmass: bad horizon or step scale");
    }
}

std::string PointMassSpec::to_json() const {
    json j;
    j["arena_min"] = arr2_json(arena_min);
    j["arena_max"] = arr2_json(arena_max);
    j["start"] = arr2_json(start);
    j["goal"] = arr2_json(goal);
    j["goal_radius"] = goal_radius;
    j["horizon"] = horizon;
    j["step_scale"] = step_scale;
    j["via"] = arr2_json(via);
    j["bad_end"] = arr2_json(bad_end);
    j["good_start"] = arr2_json(good_start);
    return j.dump();
}

PointMassSpec PointMassSpec::from_json(const std::string& text) {
    json j = json::parse(text);
    PointMassSpec s;
    s.arena_min = arr2_from(j.at("arena_min"));
    s.arena_max = arr2_from(j.at("arena_max"));
    s.start = arr2_from(j.at("start"));
    s.goal = arr2_from(j.at("goal"));
    s.goal_radius = j.at("goal_radius").get<double>();
    s.horizon = j.at("horizon").get<std::size_t>();
    s.step_scale = j.at("step_scale").get<double>();
    s.via = arr2_from(j.at("via"));
    s.bad_end = arr2_from(j.at("bad_end"));
    s.good_start = arr2_from(j.at("good_start"));
    s.validate();
    return s;
}

PointMassStepResult pointmass_step(const PointMassSpec& spec, std::array<double, 2> state,
                                   std::array<double, 2> action) {
    PointMassStepResult r;
    for (int d = 0; d < 2; ++d) {
        double a = action[static_cast<std::size_t>(d)];
        if (a < -1.0 || a > 1.0) {
            r.action_clipped = true;
            a = std::clamp(a, -1.0, 1.0);
        }
        r.next[static_cast<std::size_t>(d)] =
            std::clamp(state[static_cast<std::size_t>(d)] + spec.step_scale * a,
                       spec.arena_min[static_cast<std::size_t>(d)],
                       spec.arena_max[static_cast<std::size_t>(d)]);
    }
    const double dx = r.next[0] - spec.goal[0], dy = r.next[1] - spec.goal[1];
    if (std::sqrt(dx * dx + dy * dy) <= spec.goal_radius) {
        r.reward = 1.0;
        r.done = true;
    }
    return r;
}

double Trajectory::total_return() const {
    double s = 0.0;
    for (double r : rewards) s += r;
    return s;
}

void Trajectory::validate() const {
    const std::size_t n = rewards.size();
    if (n == 0) throw std::logic_error("trajectory: empty");
    if (returns_to_go.size() != n || timesteps.size() != n ||
        states.size() != n * state_dim || final_state.size() != state_dim) {
        throw std::logic_error("trajectory: per-step sequence lengths disagree");
    }
    if (action_dim == 0) {
        if (actions_discrete.size() != n) throw std::logic_error("trajectory: action count");
    } else if (actions_continuous.size() != n * action_dim) {
        throw std::logic_error("trajectory: continuous action buffer size");
    }
    for (std::size_t t = 0; t + 1 < n; ++t) {
        if (returns_to_go[t] != rewards[t] + returns_to_go[t + 1]) {
            throw std::logic_error("trajectory: returns-to-go inconsistent at step " +
                                   std::to_string(t));
        }
    }
    if (returns_to_go[n - 1] != rewards[n - 1]) {
        throw std::logic_error("trajectory: terminal returns-to-go != terminal reward");
    }
}

std::vector<double> compute_returns_to_go(const std::vector<double>& rewards) {
    if (rewards.empty()) {
        throw std::invalid_argument("returns-to-go: empty reward sequence");
    }
    std::vector<double> rtg(rewards.size());
    double acc = 0.0;
    for (std::size_t i = rewards.size(); i-- > 0;) {
        acc += rewards[i];
        rtg[i] = acc;
    }
    return rtg;
}

DatasetStats TrajectoryDataset::stats() const {
    DatasetStats s;
    s.state_mean.assign(state_dim, 0.0);
    s.state_std.assign(state_dim, 0.0);
    std::size_t count = 0;
    for (const auto& t : trajectories) {
        for (std::size_t i = 0; i < t.length(); ++i) {
            for (std::size_t d = 0; d < state_dim; ++d) {
                s.state_mean[d] += t.state_at(i)[d];
            }
            ++count;
        }
        for (std::size_t d = 0; d < state_dim; ++d) s.state_mean[d] += t.final_state[d];
        ++count;
        const double ret = t.total_return();
        s.return_mean += ret;
        s.return_max = std::max(s.return_max, ret);
        if (ret > 0.0) s.n_success += 1;
    }
    if (count > 0) {
        for (auto& m : s.state_mean) m /= static_cast<double>(count);
        for (const auto& t : trajectories) {
            for (std::size_t i = 0; i < t.length(); ++i) {
                for (std::size_t d = 0; d < state_dim; ++d) {
                    const double diff = t.state_at(i)[d] - s.state_mean[d];
                    s.state_std[d] += diff * diff;
                }
            }
            for (std::size_t d = 0; d < state_dim; ++d) {
                const double diff = t.final_state[d] - s.state_mean[d];
                s.state_std[d] += diff * diff;
            }
        }
        for (auto& v : s.state_std) {
            v = std::max(std::sqrt(v / static_cast<double>(count)), 1e-6);
        }
    }
    if (!trajectories.empty()) s.return_mean /= static_cast<double>(trajectories.size());
    return s;
}

namespace {

void check_ratio(std::size_t ratio) {
    if (ratio != 10 && ratio != 20 && ratio != 50) {
        throw std::invalid_argument("dataset: ratio must be one of 10, 20, 50 (got " +
                                    std::to_string(ratio) + ")");
    }
}

// Random monotone lattice walk from `from` to `to`: the required moves in
// shuffled order. This is the per-trajectory step-ordering noise.
std::vector<std::size_t> monotone_moves(GridCell from, GridCell to, Rng& rng) {
    std::vector<std::size_t> moves;
    const int dx = to.x - from.x, dy = to.y - from.y;
    moves.insert(moves.end(), static_cast<std::size_t>(std::abs(dx)),
                 static_cast<std::size_t>(dx >= 0 ? GridAction::right : GridAction::left));
    moves.insert(moves.end(), static_cast<std::size_t>(std::abs(dy)),
                 static_cast<std::size_t>(dy >= 0 ? GridAction::up : GridAction::down));
    // Fisher-Yates
    for (std::size_t i = moves.size(); i > 1; --i) {
        std::swap(moves[i - 1], moves[rng.below(i)]);
    }
    return moves;
}

Trajectory roll_grid(const GridworldSpec& spec, GridCell start,
                     const std::vector<std::size_t>& plan, bool pad_to_horizon, Rng& rng) {
    Trajectory traj;
    traj.state_dim = 2;
    traj.action_dim = 0;
    GridCell cur = start;
    std::size_t t = 0;
    auto push_step = [&](std::size_t action) -> bool {
        const GridStepResult r = grid_step(spec, cur, action);
        traj.states.push_back(static_cast<double>(cur.x));
        traj.states.push_back(static_cast<double>(cur.y));
        traj.actions_discrete.push_back(action);
        traj.rewards.push_back(r.reward);
        traj.timesteps.push_back(t++);
        cur = r.next;
        return r.done;
    };
    bool done = false;
    for (std::size_t a : plan) {
        done = push_step(a);
        if (done || t >= spec.horizon) break;
    }
    // Failing corridors run on until the horizon, bumping into the walls at
    // the corridor end.
    while (pad_to_horizon && !done && t < spec.horizon) {
        const std::size_t a = rng.bernoulli(0.5) ? static_cast<std::size_t>(GridAction::up)
                                                 : static_cast<std::size_t>(GridAction::right);
        done = push_step(a);
    }
    traj.done = true;
    traj.final_state = {static_cast<double>(cur.x), static_cast<double>(cur.y)};
    traj.returns_to_go = compute_returns_to_go(traj.rewards);
    return traj;
}

}  // namespace

TrajectoryDataset generate_biased_dataset(const GridworldSpec& spec, std::size_t ratio,
                                          std::size_t n_good, Rng& rng) {
    check_ratio(ratio);
    if (n_good == 0) throw std::invalid_argument("dataset: n_good must be >= 1");
    spec.validate();
    TrajectoryDataset ds;
    ds.state_dim = 2;
    ds.action_dim = 0;
    ds.n_actions = kGridActionCount;
    ds.env_kind = "gridworld";
    ds.env_json = spec.to_json();
    ds.ratio = ratio;
    ds.n_good = n_good;
    ds.seed = rng.seed();

    Rng good_rng = rng.split("good");
    for (std::size_t i = 0; i < n_good; ++i) {
        auto plan = monotone_moves(spec.good_corridor_start, spec.via, good_rng);
        auto tail = monotone_moves(spec.via, spec.goal, good_rng);
        plan.insert(plan.end(), tail.begin(), tail.end());
        Trajectory t = roll_grid(spec, spec.good_corridor_start, plan, false, good_rng);
        if (t.total_return() != 1.0) {
            throw std::logic_error("dataset: good corridor failed to reach the goal");
        }
        ds.trajectories.push_back(std::move(t));
    }
    Rng bad_rng = rng.split("bad");
    for (std::size_t i = 0; i < ratio * n_good; ++i) {
        auto plan = monotone_moves(spec.start, spec.via, bad_rng);
        auto tail = monotone_moves(spec.via, spec.bad_corridor_end, bad_rng);
        plan.insert(plan.end(), tail.begin(), tail.end());
        Trajectory t = roll_grid(spec, spec.start, plan, true, bad_rng);
        if (t.total_return() != 0.0) {
            throw std::logic_error("dataset: bad corridor unexpectedly hit the goal");
        }
        ds.trajectories.push_back(std::move(t));
    }
    return ds;
}

TrajectoryDataset generate_biased_dataset(const PointMassSpec& spec, std::size_t ratio,
                                          std::size_t n_good, Rng& rng) {
    check_ratio(ratio);
    if (n_good == 0) throw std::invalid_argument("dataset: n_good must be >= 1");
    spec.validate();
    TrajectoryDataset ds;
    ds.state_dim = 2;
    ds.action_dim = 2;
    ds.n_actions = 0;
    ds.env_kind = "pointmass";
    ds.env_json = spec.to_json();
    ds.ratio = ratio;
    ds.n_good = n_good;
    ds.seed = rng.seed();

    auto steer = [&](std::array<double, 2> cur, std::array<double, 2> target,
                     Rng& r) -> std::array<double, 2> {
        const double dx = target[0] - cur[0], dy = target[1] - cur[1];
        const double norm = std::max(std::sqrt(dx * dx + dy * dy), 1e-9);
        std::array<double, 2> a{dx / norm + 0.25 * r.normal(), dy / norm + 0.25 * r.normal()};
        a[0] = std::clamp(a[0], -1.0, 1.0);
        a[1] = std::clamp(a[1], -1.0, 1.0);
        return a;
    };
    auto near = [&](std::array<double, 2> a, std::array<double, 2> b, double tol) {
        const double dx = a[0] - b[0], dy = a[1] - b[1];
        return std::sqrt(dx * dx + dy * dy) <= tol;
    };
    auto roll = [&](std::array<double, 2> from, std::array<double, 2> waypoint,
                    std::array<double, 2> target, bool expect_goal, Rng& r) {
        Trajectory traj;
        traj.state_dim = 2;
        traj.action_dim = 2;
        std::array<double, 2> cur = from;
        bool via_passed = false;
        for (std::size_t t = 0; t < spec.horizon; ++t) {
            if (!via_passed && near(cur, waypoint, 1.5 * spec.step_scale)) via_passed = true;
            const auto aim = via_passed ? target : waypoint;
            const auto act = steer(cur, aim, r);
            const auto sr = pointmass_step(spec, cur, act);
            traj.states.push_back(cur[0]);
            traj.states.push_back(cur[1]);
            traj.actions_continuous.push_back(act[0]);
            traj.actions_continuous.push_back(act[1]);
            traj.rewards.push_back(expect_goal ? sr.reward : 0.0);
            traj.timesteps.push_back(t);
            cur = sr.next;
            if (expect_goal && sr.done) break;
        }
        traj.done = true;
        traj.final_state = {cur[0], cur[1]};
        traj.returns_to_go = compute_returns_to_go(traj.rewards);
        return traj;
    };

    Rng good_rng = rng.split("good");
    for (std::size_t i = 0; i < n_good; ++i) {
        Trajectory t = roll(spec.good_start, spec.via, spec.goal, true, good_rng);
        ds.trajectories.push_back(std::move(t));
    }
    Rng bad_rng = rng.split("bad");
    for (std::size_t i = 0; i < ratio * n_good; ++i) {
        Trajectory t = roll(spec.start, spec.via, spec.bad_end, false, bad_rng);
        ds.trajectories.push_back(std::move(t));
    }
    return ds;
}

TrajectoryDataset normalize_states(const TrajectoryDataset& dataset) {
    if (dataset.trajectories.empty()) {
        throw std::invalid_argument("normalize_states: empty dataset");
    }
    if (dataset.normalized) {
        throw std::invalid_argument("normalize_states: dataset already normalized");
    }
    DatasetStats st = dataset.stats();
    TrajectoryDataset out = dataset;
    out.normalized = true;
    out.state_mean = st.state_mean;
    out.state_std = st.state_std;
    auto apply = [&](std::vector<double>& flat) {
        for (std::size_t i = 0; i < flat.size(); ++i) {
            const std::size_t d = i % dataset.state_dim;
            flat[i] = (flat[i] - st.state_mean[d]) / st.state_std[d];
        }
    };
    for (auto& t : out.trajectories) {
        apply(t.states);
        apply(t.final_state);
    }
    return out;
}

std::vector<double> normalize_state(const TrajectoryDataset& dataset, const double* raw) {
    std::vector<double> out(dataset.state_dim);
    for (std::size_t d = 0; d < dataset.state_dim; ++d) {
        out[d] = (raw[d] - dataset.state_mean[d]) / dataset.state_std[d];
    }
    return out;
}

std::vector<double> denormalize_state(const TrajectoryDataset& dataset, const double* norm) {
    std::vector<double> out(dataset.state_dim);
    for (std::size_t d = 0; d < dataset.state_dim; ++d) {
        out[d] = norm[d] * dataset.state_std[d] + dataset.state_mean[d];
    }
    return out;
}

ContextWindow make_context_window(const Trajectory& traj, std::size_t start,
                                  std::size_t max_steps) {
    if (start >= traj.length()) {
        throw std::invalid_argument("context window: start index past trajectory end");
    }
    const std::size_t n = std::min(max_steps, traj.length() - start);
    ContextWindow ctx;
    ctx.steps = n;
    ctx.rtg.assign(traj.returns_to_go.begin() + static_cast<std::ptrdiff_t>(start),
                   traj.returns_to_go.begin() + static_cast<std::ptrdiff_t>(start + n));
    ctx.states.assign(traj.states.begin() + static_cast<std::ptrdiff_t>(start * traj.state_dim),
                      traj.states.begin() + static_cast<std::ptrdiff_t>((start + n) * traj.state_dim));
    if (traj.action_dim == 0) {
        ctx.actions_discrete.assign(
            traj.actions_discrete.begin() + static_cast<std::ptrdiff_t>(start),
            traj.actions_discrete.begin() + static_cast<std::ptrdiff_t>(start + n));
    } else {
        ctx.actions_continuous.assign(
            traj.actions_continuous.begin() + static_cast<std::ptrdiff_t>(start * traj.action_dim),
            traj.actions_continuous.begin() +
                static_cast<std::ptrdiff_t>((start + n) * traj.action_dim));
    }
    ctx.timesteps.assign(traj.timesteps.begin() + static_cast<std::ptrdiff_t>(start),
                         traj.timesteps.begin() + static_cast<std::ptrdiff_t>(start + n));
    ctx.step_valid.assign(n, 1);
    return ctx;
}

WindowSampler::WindowSampler(const TrajectoryDataset& dataset) {
    cumulative_.reserve(dataset.trajectories.size());
    for (const auto& t : dataset.trajectories) {
        total_ += t.length();
        cumulative_.push_back(total_);
    }
    if (total_ == 0) throw std::invalid_argument("window sampler: empty dataset");
}

std::pair<std::size_t, std::size_t> WindowSampler::sample(Rng& rng) const {
    const std::size_t pick = rng.below(total_);
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), pick);
    const std::size_t traj = static_cast<std::size_t>(it - cumulative_.begin());
    const std::size_t before = traj == 0 ? 0 : cumulative_[traj - 1];
    return {traj, pick - before};
}

namespace {

json trajectory_to_json(const Trajectory& t) {
    json j;
    json states = json::array();
    for (std::size_t i = 0; i < t.length(); ++i) {
        json row = json::array();
        for (std::size_t d = 0; d < t.state_dim; ++d) row.push_back(t.state_at(i)[d]);
        states.push_back(std::move(row));
    }
    j["states"] = std::move(states);
    if (t.action_dim == 0) {
        j["actions"] = t.actions_discrete;
    } else {
        json acts = json::array();
        for (std::size_t i = 0; i < t.length(); ++i) {
            json row = json::array();
            for (std::size_t d = 0; d < t.action_dim; ++d) {
                row.push_back(t.actions_continuous[i * t.action_dim + d]);
            }
            acts.push_back(std::move(row));
        }
        j["actions"] = std::move(acts);
    }
    j["rewards"] = t.rewards;
    j["returns_to_go"] = t.returns_to_go;
    j["timesteps"] = t.timesteps;
    j["done"] = t.done;
    j["final_state"] = t.final_state;
    if (t.provenance) {
        j["provenance"] = {{"source_index", t.provenance->source_index},
                           {"rewrite_start", t.provenance->rewrite_start},
                           {"attempt_seed", t.provenance->attempt_seed}};
    }
    return j;
}

Trajectory trajectory_from_json(const json& j, std::size_t state_dim, std::size_t action_dim) {
    Trajectory t;
    t.state_dim = state_dim;
    t.action_dim = action_dim;
    for (const auto& row : j.at("states")) {
        for (const auto& v : row) t.states.push_back(v.get<double>());
    }
    if (action_dim == 0) {
        t.actions_discrete = j.at("actions").get<std::vector<std::size_t>>();
    } else {
        for (const auto& row : j.at("actions")) {
            for (const auto& v : row) t.actions_continuous.push_back(v.get<double>());
        }
    }
    t.rewards = j.at("rewards").get<std::vector<double>>();
    t.returns_to_go = j.at("returns_to_go").get<std::vector<double>>();
    t.timesteps = j.at("timesteps").get<std::vector<std::size_t>>();
    t.done = j.at("done").get<bool>();
    t.final_state = j.at("final_state").get<std::vector<double>>();
    if (j.contains("provenance")) {
        CfProvenance p;
        p.source_index = j["provenance"].at("source_index").get<std::size_t>();
        p.rewrite_start = j["provenance"].at("rewrite_start").get<std::size_t>();
        p.attempt_seed = j["provenance"].at("attempt_seed").get<std::uint64_t>();
        t.provenance = p;
    }
    return t;
}

}  // namespace

void write_trajectories(const std::string& path, const TrajectoryDataset& dataset) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("dataset: cannot write " + path);
    json header;
    header["format"] = "crdt-trajectories";
    header["version"] = 1;
    header["env_kind"] = dataset.env_kind;
    header["env"] = json::parse(dataset.env_json);
    header["ratio"] = dataset.ratio;
    header["n_good"] = dataset.n_good;
    header["seed"] = dataset.seed;
    header["state_dim"] = dataset.state_dim;
    header["action_dim"] = dataset.action_dim;
    header["n_actions"] = dataset.n_actions;
    header["count"] = dataset.trajectories.size();
    header["normalized"] = dataset.normalized;
    header["state_mean"] = dataset.state_mean;
    header["state_std"] = dataset.state_std;
    out << header.dump() << "\n";
    for (const auto& t : dataset.trajectories) {
        out << trajectory_to_json(t).dump() << "\n";
    }
    if (!out) throw std::runtime_error("dataset: write failed for " + path);
}

TrajectoryDataset read_trajectories(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("dataset: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("dataset: empty file " + path);
    json header = json::parse(line);
    if (header.value("format", "") != "crdt-trajectories" || header.value("version", 0) != 1) {
        throw std::runtime_error("dataset: unrecognized header in " + path);
    }
    TrajectoryDataset ds;
    ds.env_kind = header.at("env_kind").get<std::string>();
    ds.env_json = header.at("env").dump();
    ds.ratio = header.at("ratio").get<std::size_t>();
    ds.n_good = header.at("n_good").get<std::size_t>();
    ds.seed = header.at("seed").get<std::uint64_t>();
    ds.state_dim = header.at("state_dim").get<std::size_t>();
    ds.action_dim = header.at("action_dim").get<std::size_t>();
    ds.n_actions = header.at("n_actions").get<std::size_t>();
    ds.normalized = header.value("normalized", false);
    ds.state_mean = header.value("state_mean", std::vector<double>{});
    ds.state_std = header.value("state_std", std::vector<double>{});
    const std::size_t count = header.at("count").get<std::size_t>();
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ds.trajectories.push_back(
            trajectory_from_json(json::parse(line), ds.state_dim, ds.action_dim));
    }
    if (ds.trajectories.size() != count) {
        throw std::runtime_error("dataset: header count does not match records in " + path);
    }
    return ds;
}

}  // namespace crdt
