#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "crdt/envs.hpp"

using namespace crdt;

TEST_CASE("grid step") {
    GridworldSpec spec;  // defaults: 8x8, goal (7,0)
    spec.validate();

    SUBCASE("moving onto the goal rewards and terminates") {
        auto r = grid_step(spec, {6, 0}, static_cast<std::size_t>(GridAction::right));
        CHECK(r.next == GridCell{7, 0});
        CHECK(r.reward == 1.0);
        CHECK(r.done);
        r = grid_step(spec, {7, 1}, static_cast<std::size_t>(GridAction::down));
        CHECK(r.reward == 1.0);
        CHECK(r.done);
    }
    SUBCASE("walls clip movement") {
        auto r = grid_step(spec, {0, 0}, static_cast<std::size_t>(GridAction::left));
        CHECK(r.next == GridCell{0, 0});
        CHECK(r.reward == 0.0);
        CHECK_FALSE(r.done);
        r = grid_step(spec, {7, 7}, static_cast<std::size_t>(GridAction::up));
        CHECK(r.next == GridCell{7, 7});
    }
    SUBCASE("every non-goal transition has zero reward") {
        for (int x = 0; x < 8; ++x) {
            for (int y = 0; y < 8; ++y) {
                for (std::size_t a = 0; a < kGridActionCount; ++a) {
                    auto r = grid_step(spec, {x, y}, a);
                    if (r.next == spec.goal) {
                        CHECK(r.reward == 1.0);
                    } else {
                        CHECK(r.reward == 0.0);
                    }
                }
            }
        }
    }
    SUBCASE("invalid action id") {
        CHECK_THROWS_AS(grid_step(spec, {3, 3}, 4), std::invalid_argument);
    }
}

TEST_CASE("returns-to-go suffix sums") {
    CHECK(compute_returns_to_go({0, 0, 1}) == std::vector<double>{1, 1, 1});
    CHECK(compute_returns_to_go({0, 0, 0}) == std::vector<double>{0, 0, 0});
    CHECK(compute_returns_to_go({1, 0, 1}) == std::vector<double>{2, 1, 1});
    CHECK_THROWS_AS(compute_returns_to_go({}), std::invalid_argument);
}

TEST_CASE("biased gridworld dataset") {
    GridworldSpec spec;
    Rng rng(2024);

    SUBCASE("ratio 10 with 50 good trajectories") {
        auto ds = generate_biased_dataset(spec, 10, 50, rng);
        CHECK(ds.size() == 550);
        std::size_t winners = 0;
        for (const auto& t : ds.trajectories) {
            if (t.total_return() == 1.0) ++winners;
        }
        CHECK(winners == 50);
        // bias fraction is exactly 1/(ratio+1)
        CHECK(static_cast<double>(winners) / static_cast<double>(ds.size()) ==
              doctest::Approx(1.0 / 11.0));
    }
    SUBCASE("ratio 50 with 20 good trajectories") {
        auto ds = generate_biased_dataset(spec, 50, 20, rng);
        CHECK(ds.size() == 1020);
    }
    SUBCASE("unsupported ratio is rejected") {
        CHECK_THROWS_AS(generate_biased_dataset(spec, 7, 10, rng), std::invalid_argument);
        CHECK_THROWS_AS(generate_biased_dataset(spec, 10, 0, rng), std::invalid_argument);
    }
    SUBCASE("corridor structure") {
        auto ds = generate_biased_dataset(spec, 10, 20, rng);
        auto visits = [&](const Trajectory& t, GridCell c) {
            for (std::size_t i = 0; i < t.length(); ++i) {
                if (t.state_at(i)[0] == c.x && t.state_at(i)[1] == c.y) return true;
            }
            return t.final_state[0] == c.x && t.final_state[1] == c.y;
        };
        std::set<std::pair<std::size_t, std::size_t>> shapes;
        for (std::size_t i = 0; i < ds.size(); ++i) {
            const auto& t = ds.trajectories[i];
            t.validate();  // lengths and exact rtg identity
            CHECK(visits(t, spec.via));  // both corridors cross the waypoint
            if (t.total_return() == 1.0) {
                CHECK(t.final_state == std::vector<double>{7.0, 0.0});
            } else {
                CHECK_FALSE(visits(t, spec.goal));
                CHECK(t.length() == spec.horizon);  // failing runs end by timeout
            }
            shapes.insert({i < 20 ? 0u : 1u, t.actions_discrete.size()});
        }
        // step-ordering noise: not all good trajectories share one action sequence
        std::set<std::vector<std::size_t>> seqs;
        for (std::size_t i = 0; i < 20; ++i) seqs.insert(ds.trajectories[i].actions_discrete);
        CHECK(seqs.size() > 1);
    }
}

TEST_CASE("point mass step") {
    PointMassSpec spec;
    spec.validate();

    SUBCASE("zero action stands still") {
        auto r = pointmass_step(spec, {0.3, 0.4}, {0.0, 0.0});
        CHECK(r.next == std::array<double, 2>{0.3, 0.4});
        CHECK(r.reward == 0.0);
        CHECK_FALSE(r.done);
    }
    SUBCASE("at the goal center any stand-still is terminal") {
        auto r = pointmass_step(spec, spec.goal, {0.0, 0.0});
        CHECK(r.reward == 1.0);
        CHECK(r.done);
    }
    SUBCASE("arena clipping keeps the state inside bounds") {
        auto r = pointmass_step(spec, {0.0, 0.0}, {-1.0, -1.0});
        CHECK(r.next[0] >= spec.arena_min[0]);
        CHECK(r.next[1] >= spec.arena_min[1]);
    }
    SUBCASE("out-of-range action is clipped and flagged") {
        auto r = pointmass_step(spec, {0.5, 0.5}, {2.0, 0.0});
        CHECK(r.action_clipped);
        CHECK(r.next[0] == doctest::Approx(0.5 + spec.step_scale));
    }
}

TEST_CASE("biased point mass dataset") {
    PointMassSpec spec;
    Rng rng(7);
    auto ds = generate_biased_dataset(spec, 10, 10, rng);
    CHECK(ds.size() == 110);
    std::size_t winners = 0;
    for (const auto& t : ds.trajectories) {
        t.validate();
        if (t.total_return() > 0.0) ++winners;
    }
    CHECK(winners == 10);
    CHECK(ds.action_dim == 2);
}

TEST_CASE("state normalization") {
    GridworldSpec spec;
    Rng rng(5);
    auto ds = generate_biased_dataset(spec, 10, 10, rng);

    SUBCASE("normalized data has zero mean unit variance") {
        auto normed = normalize_states(ds);
        auto st = normed.stats();
        CHECK(st.state_mean[0] == doctest::Approx(0.0).epsilon(1e-9));
        CHECK(st.state_mean[1] == doctest::Approx(0.0).epsilon(1e-9));
        CHECK(st.state_std[0] == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(st.state_std[1] == doctest::Approx(1.0).epsilon(1e-9));
        CHECK_THROWS_AS(normalize_states(normed), std::invalid_argument);
    }
    SUBCASE("constant dimension maps to zero with floored std") {
        TrajectoryDataset flat = ds;
        for (auto& t : flat.trajectories) {
            for (std::size_t i = 1; i < t.states.size(); i += 2) t.states[i] = 3.0;
            t.final_state[1] = 3.0;
        }
        auto normed = normalize_states(flat);
        CHECK(normed.state_std[1] == doctest::Approx(1e-6));
        for (const auto& t : normed.trajectories) {
            for (std::size_t i = 1; i < t.states.size(); i += 2) CHECK(t.states[i] == 0.0);
        }
    }
    SUBCASE("normalize / denormalize round trip") {
        auto normed = normalize_states(ds);
        const auto& t0 = ds.trajectories[0];
        for (std::size_t i = 0; i < t0.length(); ++i) {
            auto n = normalize_state(normed, t0.state_at(i));
            auto back = denormalize_state(normed, n.data());
            CHECK(back[0] == doctest::Approx(t0.state_at(i)[0]).epsilon(1e-9));
            CHECK(back[1] == doctest::Approx(t0.state_at(i)[1]).epsilon(1e-9));
        }
    }
}

TEST_CASE("context windows and sampling") {
    GridworldSpec spec;
    Rng rng(6);
    auto ds = generate_biased_dataset(spec, 10, 5, rng);
    const auto& t = ds.trajectories[0];

    ContextWindow ctx = make_context_window(t, 2, 4);
    CHECK(ctx.steps == 4);
    CHECK(ctx.rtg[0] == t.returns_to_go[2]);
    CHECK(ctx.timesteps[3] == t.timesteps[5]);
    // truncates at trajectory end
    ContextWindow tail = make_context_window(t, t.length() - 2, 10);
    CHECK(tail.steps == 2);
    CHECK_THROWS_AS(make_context_window(t, t.length(), 4), std::invalid_argument);

    WindowSampler sampler(ds);
    std::size_t total = 0;
    for (const auto& tr : ds.trajectories) total += tr.length();
    CHECK(sampler.total_pairs() == total);
    for (int i = 0; i < 200; ++i) {
        auto [ti, si] = sampler.sample(rng);
        CHECK(ti < ds.size());
        CHECK(si < ds.trajectories[ti].length());
    }
}

TEST_CASE("trajectory file round trip") {
    GridworldSpec spec;
    Rng rng(9);
    auto ds = generate_biased_dataset(spec, 10, 5, rng);
    ds.trajectories[0].provenance = CfProvenance{3, 7, 12345};

    const std::string path = "test_envs_io.jsonl";
    write_trajectories(path, ds);
    auto back = read_trajectories(path);
    std::filesystem::remove(path);

    REQUIRE(back.size() == ds.size());
    CHECK(back.ratio == ds.ratio);
    CHECK(back.seed == ds.seed);
    CHECK(back.env_kind == "gridworld");
    for (std::size_t i = 0; i < ds.size(); ++i) {
        CHECK(back.trajectories[i].states == ds.trajectories[i].states);
        CHECK(back.trajectories[i].actions_discrete == ds.trajectories[i].actions_discrete);
        CHECK(back.trajectories[i].rewards == ds.trajectories[i].rewards);
        CHECK(back.trajectories[i].returns_to_go == ds.trajectories[i].returns_to_go);
        CHECK(back.trajectories[i].final_state == ds.trajectories[i].final_state);
    }
    REQUIRE(back.trajectories[0].provenance.has_value());
    CHECK(back.trajectories[0].provenance->source_index == 3);
    CHECK(back.trajectories[0].provenance->rewrite_start == 7);
    CHECK(back.trajectories[0].provenance->attempt_seed == 12345);
    // same spec parses back
    auto spec_back = GridworldSpec::from_json(back.env_json);
    CHECK(spec_back.goal == spec.goal);
}
