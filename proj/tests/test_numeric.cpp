#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "crdt/autodiff.hpp"
#include "crdt/checkpoint.hpp"
#include "crdt/optimizer.hpp"
#include "crdt/rng.hpp"
#include "crdt/tensor.hpp"
#include "test_util.hpp"

using namespace crdt;

namespace {

Tensor random_tensor(Rng& rng, std::vector<std::size_t> shape, double scale = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& v : t.data) v = rng.normal() * scale;
    return t;
}

}  // namespace

TEST_CASE("scalar square forward and backward") {
    Tape tape;
    Var x = tape.variable(Tensor::row({3.0}));
    Var y = tape.mul(x, x);
    CHECK(tape.value(y).data[0] == doctest::Approx(9.0));
    tape.backward(y);
    CHECK(tape.grad(x)[0] == doctest::Approx(6.0));
}

TEST_CASE("constant has zero gradient") {
    Tape tape;
    Var x = tape.variable(Tensor::row({2.0}));
    Var c = tape.constant(Tensor::row({5.0}));
    Var y = tape.add(x, c);
    tape.backward(y);
    CHECK(tape.grad(x)[0] == doctest::Approx(1.0));
    CHECK(tape.grad(c).empty());  // nothing flowed into the constant
}

TEST_CASE("matmul with identity is identity") {
    Rng rng(3);
    Tensor v = random_tensor(rng, {4, 1});
    Tensor eye = Tensor::zeros({4, 4});
    for (std::size_t i = 0; i < 4; ++i) eye.at(i, i) = 1.0;
    Tape tape;
    Var out = tape.matmul(tape.constant(eye), tape.constant(v));
    CHECK(tape.value(out).data == v.data);
}

TEST_CASE("masked softmax of zeros is uniform") {
    Tape tape;
    Var x = tape.constant(Tensor::matrix(1, 3, {0.0, 0.0, 0.0}));
    Var p = tape.softmax_rows_masked(x, {1, 1, 1});
    for (double v : tape.value(p).data) CHECK(v == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("masked softmax ignores disallowed entries") {
    Tape tape;
    Var x = tape.constant(Tensor::matrix(1, 3, {100.0, 0.0, 0.0}));
    Var p = tape.softmax_rows_masked(x, {0, 1, 1});
    const auto& v = tape.value(p).data;
    CHECK(v[0] == 0.0);
    CHECK(v[1] == doctest::Approx(0.5));
    CHECK(v[2] == doctest::Approx(0.5));
}

TEST_CASE("shape mismatch raises a structured error") {
    Tape tape;
    Var a = tape.constant(Tensor::zeros({2, 3}));
    Var b = tape.constant(Tensor::zeros({2, 3}));
    CHECK_THROWS_WITH_AS(tape.matmul(a, b),
                         doctest::Contains("matmul"), std::invalid_argument);
    CHECK_THROWS_AS(tape.add(a, tape.constant(Tensor::zeros({3, 2}))), std::invalid_argument);
}

TEST_CASE("backward requires a scalar and runs once") {
    Tape tape;
    Var x = tape.variable(Tensor::zeros({2, 2}));
    CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);
    Var s = tape.sum_all(x);
    tape.backward(s);
    CHECK_THROWS_AS(tape.backward(s), std::logic_error);
}

TEST_CASE("three layer perceptron gradients match finite differences") {
    Rng rng(17);
    const std::size_t batch = 3, din = 4, dh = 8, dout = 2;
    std::vector<Tensor> params;
    params.push_back(random_tensor(rng, {din, dh}, 0.5));
    params.push_back(random_tensor(rng, {dh}, 0.1));
    params.push_back(random_tensor(rng, {dh, dh}, 0.5));
    params.push_back(random_tensor(rng, {dh}, 0.1));
    params.push_back(random_tensor(rng, {dh, dout}, 0.5));
    params.push_back(random_tensor(rng, {dout}, 0.1));
    const Tensor x = random_tensor(rng, {batch, din});
    const Tensor target = random_tensor(rng, {batch, dout});
    const std::vector<std::uint8_t> valid(batch, 1);

    auto loss_with = [&](const std::vector<Tensor>& ps, Tape& tape,
                         std::vector<Var>* vars) -> Var {
        std::vector<Var> vs;
        for (const auto& p : ps) vs.push_back(tape.variable(p));
        Var h = tape.constant(x);
        h = tape.gelu(tape.add_bias(tape.matmul(h, vs[0]), vs[1]));
        h = tape.gelu(tape.add_bias(tape.matmul(h, vs[2]), vs[3]));
        h = tape.add_bias(tape.matmul(h, vs[4]), vs[5]);
        if (vars) *vars = vs;
        return tape.mse_rows(h, target, valid);
    };

    Tape tape;
    std::vector<Var> vars;
    Var loss = loss_with(params, tape, &vars);
    tape.backward(loss);
    std::vector<std::vector<double>> grads;
    for (Var v : vars) grads.push_back(tape.grad(v));

    auto eval = [&](const std::vector<Tensor>& ps) {
        Tape t2;
        return t2.value(loss_with(ps, t2, nullptr)).data[0];
    };
    auto report = crdt_test::fd_compare(eval, params, grads);
    CAPTURE(report.where);
    CHECK(report.max_rel_err <= 1e-4);
}

TEST_CASE("composed-op gradients match finite differences at random points") {
    // Exercises every differentiable op in one graph, repeated from random
    // parameter points.
    Rng master(91);
    for (int trial = 0; trial < 10; ++trial) {
        Rng rng = master.split(static_cast<std::uint64_t>(trial));
        const std::size_t t_steps = 4, d = 6;
        const std::size_t tokens = 3 * t_steps;
        std::vector<Tensor> params;
        params.push_back(random_tensor(rng, {t_steps, d}));      // stream a
        params.push_back(random_tensor(rng, {t_steps, d}));      // stream b
        params.push_back(random_tensor(rng, {t_steps, d}));      // stream c
        params.push_back(random_tensor(rng, {d, tokens}, 0.4));  // score weight
        params.push_back(random_tensor(rng, {d, d}, 0.4));       // mix weight
        params.push_back(random_tensor(rng, {d}, 0.1));          // mix bias
        params.push_back(random_tensor(rng, {d}, 0.3));          // layer-norm gain
        params.push_back(random_tensor(rng, {d}, 0.1));          // layer-norm bias
        const Tensor target = random_tensor(rng, {tokens, 2});
        std::vector<std::uint8_t> valid(tokens, 1);
        valid[0] = 0;  // one masked row
        std::vector<std::uint8_t> allowed(tokens * tokens, 0);
        for (std::size_t i = 0; i < tokens; ++i) {
            for (std::size_t j = 0; j <= i; ++j) allowed[i * tokens + j] = 1;
        }
        const Tensor wproj = random_tensor(rng, {d, 2}, 0.4);

        auto build = [&](const std::vector<Tensor>& ps, Tape& tape,
                         std::vector<Var>* vars) -> Var {
            std::vector<Var> vs;
            for (const auto& p : ps) vs.push_back(tape.variable(p));
            Var tok = tape.interleave3(vs[0], vs[1], vs[2]);
            Var normed = tape.layer_norm(tok, vs[6], vs[7]);
            Var att = tape.softmax_rows_masked(tape.matmul(normed, vs[3]), allowed);
            Var mixed = tape.add(tok, tape.matmul(att, normed));
            Var out = tape.add_bias(tape.matmul(tape.gelu(mixed), vs[4]), vs[5]);
            Var picked = tape.select_rows(out, {0, 2, 5, 7});
            Var sliced = tape.slice_cols(picked, 1, 3);
            Var cat = tape.concat_cols({sliced, sliced});
            Var clipped = tape.clip(cat, -2.5, 2.5);
            Var pooled = tape.sum_all(tape.mul(clipped, clipped));
            Var proj = tape.matmul(out, tape.constant(wproj));
            Var loss1 = tape.mse_rows(proj, target, valid);
            if (vars) *vars = vs;
            return tape.add(loss1, tape.scale(pooled, 0.01));
        };

        Tape tape;
        std::vector<Var> vars;
        Var loss = build(params, tape, &vars);
        tape.backward(loss);
        std::vector<std::vector<double>> grads;
        for (Var v : vars) {
            auto g = tape.grad(v);
            if (g.empty()) g.assign(tape.value(v).size(), 0.0);
            grads.push_back(std::move(g));
        }
        auto eval = [&](const std::vector<Tensor>& ps) {
            Tape t2;
            return t2.value(build(ps, t2, nullptr)).data[0];
        };
        auto report = crdt_test::fd_compare(eval, params, grads);
        CAPTURE(trial);
        CAPTURE(report.where);
        CHECK(report.max_rel_err <= 1e-4);
    }
}

TEST_CASE("unused parameters get zero gradients") {
    Tape tape;
    Var used = tape.variable(Tensor::row({2.0}));
    Tensor unused_t = Tensor::row({7.0});
    unused_t.requires_grad = true;
    Tensor used_t = Tensor::row({1.0});
    used_t.requires_grad = true;
    Var pu = tape.param(&used_t);
    Var punused = tape.param(&unused_t);
    (void)punused;
    Var loss = tape.sum_all(tape.mul(used, pu));
    tape.backward(loss);
    CHECK(used_t.grad == std::vector<double>{2.0});
    CHECK(unused_t.grad.empty());  // no flow; semantically zero
}

TEST_CASE("dropout") {
    Rng rng(123);
    Tensor x = random_tensor(rng, {10, 10});

    SUBCASE("inactive is exactly the identity") {
        Tape tape;
        Var vx = tape.variable(x);
        Rng r2(1);
        Var y = tape.dropout(vx, 0.5, false, r2);
        CHECK(y.id == vx.id);  // same node, not a copy
        CHECK(tape.value(y).data == x.data);
    }
    SUBCASE("rate zero is the identity") {
        Tape tape;
        Var vx = tape.variable(x);
        Rng r2(1);
        Var y = tape.dropout(vx, 0.0, true, r2);
        CHECK(tape.value(y).data == x.data);
    }
    SUBCASE("rate one is rejected") {
        Tape tape;
        Var vx = tape.variable(x);
        Rng r2(1);
        CHECK_THROWS_AS(tape.dropout(vx, 1.0, true, r2), std::invalid_argument);
    }
    SUBCASE("zeroed fraction matches the rate") {
        const std::size_t n = 100000;
        Tensor big = Tensor::full({n}, 1.0);
        Tape tape;
        Rng r2(77);
        Var y = tape.dropout(tape.constant(big), 0.5, true, r2);
        std::size_t zeros = 0;
        for (double v : tape.value(y).data) {
            if (v == 0.0) {
                ++zeros;
            } else {
                CHECK(v == doctest::Approx(2.0));  // survivor scaling 1/(1-rate)
            }
        }
        const double frac = static_cast<double>(zeros) / static_cast<double>(n);
        CHECK(frac > 0.49);
        CHECK(frac < 0.51);
    }
}

TEST_CASE("optimizer") {
    SUBCASE("zero gradient leaves parameters unchanged") {
        ParamStore params;
        params["w"] = Tensor::row({1.5, -2.0});
        params["w"].requires_grad = true;
        params["w"].ensure_grad();
        Adam opt;
        opt.step(params);
        CHECK(params["w"].data == std::vector<double>{1.5, -2.0});
        CHECK(opt.step_count() == 1);
    }
    SUBCASE("positive gradient decreases the parameter") {
        ParamStore params;
        params["w"] = Tensor::row({1.0});
        params["w"].requires_grad = true;
        params["w"].ensure_grad();
        params["w"].grad[0] = 1.0;
        Adam opt(AdamConfig{.lr = 0.1});
        opt.step(params);
        CHECK(params["w"].data[0] < 1.0);
    }
    SUBCASE("non-finite gradient raises an error naming the parameter") {
        ParamStore params;
        params["layer.weight"] = Tensor::row({1.0});
        params["layer.weight"].requires_grad = true;
        params["layer.weight"].ensure_grad();
        params["layer.weight"].grad[0] = std::nan("");
        Adam opt;
        CHECK_THROWS_WITH_AS(opt.step(params), doctest::Contains("layer.weight"),
                             std::runtime_error);
    }
    SUBCASE("identical seeds give bitwise identical trajectories") {
        auto run = [](std::uint64_t seed) {
            Rng rng(seed);
            ParamStore params;
            params["w"] = Tensor::zeros({4, 4});
            params["w"].requires_grad = true;
            for (auto& v : params["w"].data) v = rng.normal();
            Adam opt(AdamConfig{.lr = 1e-2});
            for (int i = 0; i < 25; ++i) {
                Tape tape;
                Var w = tape.param(&params["w"]);
                Tensor x = Tensor::zeros({4, 4});
                for (auto& v : x.data) v = rng.normal();
                Var loss = tape.sum_all(tape.mul(tape.matmul(w, tape.constant(x)),
                                                 tape.matmul(w, tape.constant(x))));
                tape.backward(loss);
                opt.step(params);
            }
            return params["w"].data;
        };
        CHECK(run(99) == run(99));
        CHECK(run(99) != run(100));
    }
}

TEST_CASE("rng streams") {
    Rng a(7), b(7);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c = a.split("stream-one");
    Rng d = a.split("stream-two");
    CHECK(c.next_u64() != d.next_u64());
    // splitting is a pure function of parent seed + label
    Rng e = b.split("stream-one");
    Rng f = b.split("stream-one");
    CHECK(e.next_u64() == f.next_u64());
    // uniform01 stays in [0,1)
    for (int i = 0; i < 1000; ++i) {
        const double u = a.uniform01();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
    // normals have roughly zero mean, unit variance
    double sum = 0.0, sq = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double z = a.normal();
        sum += z;
        sq += z * z;
    }
    CHECK(std::fabs(sum / n) < 0.03);
    CHECK(std::fabs(sq / n - 1.0) < 0.05);
}

TEST_CASE("checkpoint round trip is bit exact") {
    Rng rng(31);
    Checkpoint ckpt;
    ckpt.tensors["enc.weight"] = random_tensor(rng, {5, 3});
    ckpt.tensors["enc.weight"].requires_grad = true;
    ckpt.tensors["enc.bias"] = random_tensor(rng, {3});
    ckpt.meta_json = R"({"model": "test", "d_model": 3})";
    ckpt.opt_step_count = 42;
    Adam::Moments mom;
    mom.m = {0.1, -0.5, 3.0};
    mom.v = {1e-9, 2e-17, 0.25};
    ckpt.opt_moments["enc.bias"] = mom;

    const std::string path = "test_ckpt_roundtrip.json";
    save_checkpoint(path, ckpt);
    Checkpoint back = load_checkpoint(path);
    std::filesystem::remove(path);

    CHECK(back.tensors.at("enc.weight").data == ckpt.tensors.at("enc.weight").data);
    CHECK(back.tensors.at("enc.weight").shape == ckpt.tensors.at("enc.weight").shape);
    CHECK(back.tensors.at("enc.weight").requires_grad);
    CHECK(back.tensors.at("enc.bias").data == ckpt.tensors.at("enc.bias").data);
    CHECK(back.opt_step_count == 42);
    CHECK(back.opt_moments.at("enc.bias").m == mom.m);
    CHECK(back.opt_moments.at("enc.bias").v == mom.v);
}

TEST_CASE("checkpoint rejects unknown formats") {
    const std::string path = "test_ckpt_bad.json";
    {
        std::FILE* f = std::fopen(path.c_str(), "w");
        std::fputs(R"({"format": "other", "version": 1, "tensors": {}})", f);
        std::fclose(f);
    }
    CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
    std::filesystem::remove(path);
}
