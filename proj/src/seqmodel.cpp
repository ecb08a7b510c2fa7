#include "crdt/seqmodel.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "crdt/checkpoint.hpp"

namespace crdt {

using nlohmann::json;

void ModelConfig::validate() const {
    if (d_model == 0 || layers == 0 || heads == 0 || context_steps == 0) {
        throw std::invalid_argument("model config: zero-sized dimension");
    }
    if (d_model % heads != 0) {
        throw std::invalid_argument("model config: d_model " + std::to_string(d_model) +
                                    " not divisible by heads " + std::to_string(heads));
    }
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
        throw std::invalid_argument("model config: dropout rate out of [0, 1)");
    }
    if (state_dim == 0) throw std::invalid_argument("model config: state_dim must be positive");
    if (action_space == ActionSpace::discrete && n_actions < 2) {
        throw std::invalid_argument("model config: discrete space needs n_actions >= 2");
    }
    if (action_space == ActionSpace::continuous && action_dim == 0) {
        throw std::invalid_argument("model config: continuous space needs action_dim >= 1");
    }
}

std::string ModelConfig::to_json() const {
    json j;
    j["d_model"] = d_model;
    j["layers"] = layers;
    j["heads"] = heads;
    j["dropout_rate"] = dropout_rate;
    j["context_steps"] = context_steps;
    j["action_space"] = action_space == ActionSpace::discrete ? "discrete" : "continuous";
    j["n_actions"] = n_actions;
    j["action_dim"] = action_dim;
    j["state_dim"] = state_dim;
    j["max_timestep"] = max_timestep;
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    ModelConfig cfg;
    cfg.d_model = j.at("d_model").get<std::size_t>();
    cfg.layers = j.at("layers").get<std::size_t>();
    cfg.heads = j.at("heads").get<std::size_t>();
    cfg.dropout_rate = j.at("dropout_rate").get<double>();
    cfg.context_steps = j.at("context_steps").get<std::size_t>();
    cfg.action_space =
        j.at("action_space").get<std::string>() == "discrete" ? ActionSpace::discrete
                                                              : ActionSpace::continuous;
    cfg.n_actions = j.at("n_actions").get<std::size_t>();
    cfg.action_dim = j.at("action_dim").get<std::size_t>();
    cfg.state_dim = j.at("state_dim").get<std::size_t>();
    cfg.max_timestep = j.at("max_timestep").get<std::size_t>();
    cfg.validate();
    return cfg;
}

void ContextWindow::check_against(const ModelConfig& cfg) const {
    if (steps == 0) throw std::invalid_argument("context window: empty");
    if (steps > cfg.context_steps) {
        throw std::invalid_argument("context window: " + std::to_string(steps) +
                                    " steps exceed K=" + std::to_string(cfg.context_steps));
    }
    if (rtg.size() != steps || timesteps.size() != steps || step_valid.size() != steps) {
        throw std::invalid_argument("context window: per-step sequence length mismatch");
    }
    if (states.size() != steps * cfg.state_dim) {
        throw std::invalid_argument("context window: state buffer size mismatch");
    }
    if (cfg.action_space == ActionSpace::discrete) {
        if (actions_discrete.size() != steps) {
            throw std::invalid_argument("context window: discrete action length mismatch");
        }
        for (auto a : actions_discrete) {
            if (a >= cfg.n_actions) {
                throw std::invalid_argument("context window: action id " + std::to_string(a) +
                                            " out of range");
            }
        }
    } else if (actions_continuous.size() != steps * cfg.action_dim) {
        throw std::invalid_argument("context window: continuous action buffer size mismatch");
    }
    for (auto t : timesteps) {
        if (t >= cfg.max_timestep) {
            throw std::invalid_argument("context window: timestep " + std::to_string(t) +
                                        " exceeds embedding table");
        }
    }
}

SequenceModel::SequenceModel(ModelConfig cfg, HeadKind head, std::string name)
    : cfg_(cfg), head_(head), name_(std::move(name)) {
    cfg_.validate();
    const std::size_t d = cfg_.d_model;
    auto weight = [&](const std::string& key, std::size_t r, std::size_t c) {
        params_[key] = Tensor::zeros({r, c}, true);
    };
    auto vec = [&](const std::string& key, std::size_t n, double fill = 0.0) {
        params_[key] = Tensor::full({n}, fill);
        params_[key].requires_grad = true;
        params_[key].ensure_grad();
    };
    weight("embed.rtg.w", 1, d);
    vec("embed.rtg.b", d);
    weight("embed.state.w", cfg_.state_dim, d);
    vec("embed.state.b", d);
    if (cfg_.action_space == ActionSpace::discrete) {
        weight("embed.action.table", cfg_.n_actions, d);
    } else {
        weight("embed.action.w", cfg_.action_dim, d);
        vec("embed.action.b", d);
    }
    weight("embed.timestep.table", cfg_.max_timestep, d);
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
        const std::string lp = "layer" + std::to_string(l) + ".";
        vec(lp + "ln1.gain", d, 1.0);
        vec(lp + "ln1.bias", d);
        for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) {
            weight(lp + w, d, d);
        }
        for (const char* b : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"}) {
            vec(lp + b, d);
        }
        vec(lp + "ln2.gain", d, 1.0);
        vec(lp + "ln2.bias", d);
        weight(lp + "mlp.w1", d, 4 * d);
        vec(lp + "mlp.b1", 4 * d);
        weight(lp + "mlp.w2", 4 * d, d);
        vec(lp + "mlp.b2", d);
    }
    vec("final.ln.gain", d, 1.0);
    vec("final.ln.bias", d);
    switch (head_) {
        case HeadKind::action_logits:
            weight("head.action.w", d, cfg_.n_actions);
            vec("head.action.b", cfg_.n_actions);
            break;
        case HeadKind::action_vector:
            weight("head.action.w", d, cfg_.action_dim);
            vec("head.action.b", cfg_.action_dim);
            break;
        case HeadKind::action_gaussian:
            weight("head.action.w", d, 2 * cfg_.action_dim);
            vec("head.action.b", 2 * cfg_.action_dim);
            break;
        case HeadKind::outcome:
            weight("head.state.w", d, cfg_.state_dim);
            vec("head.state.b", cfg_.state_dim);
            weight("head.rtg.w", d, 1);
            vec("head.rtg.b", 1);
            break;
    }
}

void SequenceModel::init_params(Rng& rng) {
    // Trunk weights get small gaussian init; layer norms stay (1, 0); all
    // head weights stay zero so untrained readouts are neutral (uniform
    // logits, identity outcome residuals).
    for (auto& [key, t] : params_) {
        if (key.rfind("head.", 0) == 0) continue;
        if (key.find(".ln") != std::string::npos || key.find("final.ln") != std::string::npos) {
            continue;
        }
        if (t.rank() == 2) {
            for (auto& v : t.data) v = rng.normal(0.0, 0.02);
        }
    }
}

Tensor& SequenceModel::p(const std::string& key) {
    auto it = params_.find(key);
    if (it == params_.end()) {
        throw std::logic_error("sequence model: missing parameter " + key);
    }
    return it->second;
}

Var SequenceModel::pvar(Tape& tape, const std::string& key) {
    return tape.param(&p(key));
}

Var SequenceModel::linear(Tape& tape, Var x, const std::string& prefix) {
    return tape.add_bias(tape.matmul(x, pvar(tape, prefix + ".w")), pvar(tape, prefix + ".b"));
}

std::vector<std::size_t> SequenceModel::state_token_rows(std::size_t steps) {
    std::vector<std::size_t> rows(steps);
    for (std::size_t i = 0; i < steps; ++i) rows[i] = 3 * i + 1;
    return rows;
}

std::vector<std::size_t> SequenceModel::action_token_rows(std::size_t steps) {
    std::vector<std::size_t> rows(steps);
    for (std::size_t i = 0; i < steps; ++i) rows[i] = 3 * i + 2;
    return rows;
}

Var SequenceModel::encode(Tape& tape, const ContextWindow& ctx, bool dropout_active, Rng& rng) {
    ctx.check_against(cfg_);
    const std::size_t n = ctx.steps;
    const std::size_t d = cfg_.d_model;
    const std::size_t tokens = 3 * n;

    Tensor rtg_in = Tensor::zeros({n, 1});
    rtg_in.data = ctx.rtg;
    Tensor state_in = Tensor::zeros({n, cfg_.state_dim});
    state_in.data = ctx.states;

    Var g_tok = tape.add_bias(tape.matmul(tape.constant(std::move(rtg_in)),
                                          pvar(tape, "embed.rtg.w")),
                              pvar(tape, "embed.rtg.b"));
    Var s_tok = tape.add_bias(tape.matmul(tape.constant(std::move(state_in)),
                                          pvar(tape, "embed.state.w")),
                              pvar(tape, "embed.state.b"));
    Var a_tok;
    if (cfg_.action_space == ActionSpace::discrete) {
        a_tok = tape.embedding_rows(pvar(tape, "embed.action.table"), ctx.actions_discrete);
    } else {
        Tensor act_in = Tensor::zeros({n, cfg_.action_dim});
        act_in.data = ctx.actions_continuous;
        a_tok = tape.add_bias(tape.matmul(tape.constant(std::move(act_in)),
                                          pvar(tape, "embed.action.w")),
                              pvar(tape, "embed.action.b"));
    }
    Var ts = tape.embedding_rows(pvar(tape, "embed.timestep.table"), ctx.timesteps);
    g_tok = tape.add(g_tok, ts);
    s_tok = tape.add(s_tok, ts);
    a_tok = tape.add(a_tok, ts);

    Var x = tape.interleave3(g_tok, s_tok, a_tok);
    x = tape.dropout(x, cfg_.dropout_rate, dropout_active, rng);

    // Causal mask over tokens; masked tokens are unreadable as keys.
    std::vector<std::uint8_t> token_valid(tokens, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t v = ctx.step_valid[i] ? 1 : 0;
        token_valid[3 * i + 0] = v;
        token_valid[3 * i + 1] = v;
        token_valid[3 * i + 2] = v;
    }
    if (!ctx.last_action_valid) token_valid[3 * (n - 1) + 2] = 0;
    std::vector<std::uint8_t> allowed(tokens * tokens, 0);
    for (std::size_t i = 0; i < tokens; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            allowed[i * tokens + j] = token_valid[j];
        }
    }

    const std::size_t head_dim = d / cfg_.heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
        const std::string lp = "layer" + std::to_string(l) + ".";
        Var h = tape.layer_norm(x, pvar(tape, lp + "ln1.gain"), pvar(tape, lp + "ln1.bias"));
        Var q = tape.add_bias(tape.matmul(h, pvar(tape, lp + "attn.wq")),
                              pvar(tape, lp + "attn.bq"));
        Var k = tape.add_bias(tape.matmul(h, pvar(tape, lp + "attn.wk")),
                              pvar(tape, lp + "attn.bk"));
        Var v = tape.add_bias(tape.matmul(h, pvar(tape, lp + "attn.wv")),
                              pvar(tape, lp + "attn.bv"));
        Var mixed;
        if (cfg_.heads == 1) {
            Var scores = tape.scale(tape.matmul_nt(q, k), att_scale);
            Var probs = tape.softmax_rows_masked(scores, allowed);
            probs = tape.dropout(probs, cfg_.dropout_rate, dropout_active, rng);
            mixed = tape.matmul(probs, v);
        } else {
            std::vector<Var> parts;
            parts.reserve(cfg_.heads);
            for (std::size_t hh = 0; hh < cfg_.heads; ++hh) {
                Var qh = tape.slice_cols(q, hh * head_dim, head_dim);
                Var kh = tape.slice_cols(k, hh * head_dim, head_dim);
                Var vh = tape.slice_cols(v, hh * head_dim, head_dim);
                Var scores = tape.scale(tape.matmul_nt(qh, kh), att_scale);
                Var probs = tape.softmax_rows_masked(scores, allowed);
                probs = tape.dropout(probs, cfg_.dropout_rate, dropout_active, rng);
                parts.push_back(tape.matmul(probs, vh));
            }
            mixed = tape.concat_cols(parts);
        }
        Var att_out = tape.add_bias(tape.matmul(mixed, pvar(tape, lp + "attn.wo")),
                                    pvar(tape, lp + "attn.bo"));
        att_out = tape.dropout(att_out, cfg_.dropout_rate, dropout_active, rng);
        x = tape.add(x, att_out);

        Var h2 = tape.layer_norm(x, pvar(tape, lp + "ln2.gain"), pvar(tape, lp + "ln2.bias"));
        Var m = tape.gelu(tape.add_bias(tape.matmul(h2, pvar(tape, lp + "mlp.w1")),
                                        pvar(tape, lp + "mlp.b1")));
        m = tape.add_bias(tape.matmul(m, pvar(tape, lp + "mlp.w2")), pvar(tape, lp + "mlp.b2"));
        m = tape.dropout(m, cfg_.dropout_rate, dropout_active, rng);
        x = tape.add(x, m);
    }
    return tape.layer_norm(x, pvar(tape, "final.ln.gain"), pvar(tape, "final.ln.bias"));
}

Var SequenceModel::action_logits(Tape& tape, Var hidden, std::size_t steps) {
    if (head_ != HeadKind::action_logits) {
        throw std::logic_error("sequence model " + name_ + ": wrong head for action logits");
    }
    Var at_states = tape.select_rows(hidden, state_token_rows(steps));
    return linear(tape, at_states, "head.action");
}

Var SequenceModel::action_vector(Tape& tape, Var hidden, std::size_t steps) {
    if (head_ != HeadKind::action_vector) {
        throw std::logic_error("sequence model " + name_ + ": wrong head for action vector");
    }
    Var at_states = tape.select_rows(hidden, state_token_rows(steps));
    return linear(tape, at_states, "head.action");
}

std::pair<Var, Var> SequenceModel::action_gaussian(Tape& tape, Var hidden, std::size_t steps) {
    if (head_ != HeadKind::action_gaussian) {
        throw std::logic_error("sequence model " + name_ + ": wrong head for gaussian action");
    }
    Var at_states = tape.select_rows(hidden, state_token_rows(steps));
    Var both = linear(tape, at_states, "head.action");
    Var mu = tape.slice_cols(both, 0, cfg_.action_dim);
    // Log-variance clipped to keep exp() tame in both directions.
    Var logvar = tape.clip(tape.slice_cols(both, cfg_.action_dim, cfg_.action_dim), -10.0, 4.0);
    return {mu, logvar};
}

std::pair<Var, Var> SequenceModel::outcome(Tape& tape, Var hidden, const ContextWindow& ctx) {
    if (head_ != HeadKind::outcome) {
        throw std::logic_error("sequence model " + name_ + ": wrong head for outcome");
    }
    const std::size_t n = ctx.steps;
    Var at_actions = tape.select_rows(hidden, action_token_rows(n));
    Var ds = linear(tape, at_actions, "head.state");
    Var dg = linear(tape, at_actions, "head.rtg");
    // Residual parameterization: the head predicts the per-step change, so
    // "nothing happens" is the zero default and the rtg drop generalizes as
    // a function of (state, action) rather than of the absolute g level.
    Tensor s_now = Tensor::zeros({n, cfg_.state_dim});
    s_now.data = ctx.states;
    Tensor g_now = Tensor::zeros({n, 1});
    g_now.data = ctx.rtg;
    Var next_state = tape.add(ds, tape.constant(std::move(s_now)));
    Var next_rtg = tape.add(dg, tape.constant(std::move(g_now)));
    return {next_state, next_rtg};
}

void SequenceModel::save(const std::string& path) const {
    Checkpoint ckpt;
    ckpt.tensors = params_;
    nlohmann::json meta;
    meta["kind"] = "sequence-model";
    meta["name"] = name_;
    meta["head"] = static_cast<int>(head_);
    meta["config"] = nlohmann::json::parse(cfg_.to_json());
    ckpt.meta_json = meta.dump();
    save_checkpoint(path, ckpt);
}

SequenceModel SequenceModel::load(const std::string& path) {
    Checkpoint ckpt = load_checkpoint(path);
    nlohmann::json meta = nlohmann::json::parse(ckpt.meta_json);
    if (meta.value("kind", "") != "sequence-model") {
        throw std::runtime_error("sequence model: " + path + " is not a model checkpoint");
    }
    ModelConfig cfg = ModelConfig::from_json(meta.at("config").dump());
    SequenceModel model(cfg, static_cast<HeadKind>(meta.at("head").get<int>()),
                        meta.at("name").get<std::string>());
    for (auto& [key, t] : model.params_) {
        auto it = ckpt.tensors.find(key);
        if (it == ckpt.tensors.end()) {
            throw std::runtime_error("sequence model: checkpoint missing parameter " + key);
        }
        if (it->second.shape != t.shape) {
            throw std::runtime_error("sequence model: checkpoint shape mismatch for " + key);
        }
        t.data = it->second.data;
    }
    return model;
}

}  // namespace crdt
