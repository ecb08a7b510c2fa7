#include "crdt/config.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace crdt {

using nlohmann::json;

const char* kVersionString = "crdt-0.1.0";

ExperimentConfig::ExperimentConfig() {
    // Desk-scale defaults sized so the full reproduction run stays within a
    // CPU time budget. All three models share the trunk dimensions.
    ModelConfig base;
    base.d_model = 32;
    base.layers = 2;
    base.heads = 1;
    base.dropout_rate = 0.1;
    base.context_steps = 10;
    base.action_space = ActionSpace::discrete;
    base.n_actions = kGridActionCount;
    base.action_dim = 2;
    base.state_dim = 2;
    base.max_timestep = 64;
    agent_model = base;
    treatment_model = base;
    outcome_model = base;

    treatment_fit.steps = 700;
    treatment_fit.batch_size = 32;
    treatment_fit.lr = 1e-3;
    outcome_fit = treatment_fit;

    agent_train.steps = 1200;
    agent_train.batch_per_source = 32;
    agent_train.lr = 1e-3;

    selection.max_rewrite_steps = 8;

    eval.target_return = 1.0;
    eval.episodes = 50;
    eval.start_jitter = 4;
}

void ExperimentConfig::validate() const {
    if (env_kind != "gridworld" && env_kind != "pointmass") {
        throw std::invalid_argument("config: env_kind must be gridworld or pointmass");
    }
    if (env_kind == "gridworld") {
        grid.validate();
    } else {
        pointmass.validate();
    }
    agent_model.validate();
    treatment_model.validate();
    outcome_model.validate();
    selection.validate();
    if (n_good == 0) throw std::invalid_argument("config: n_good must be >= 1");
    if (eval_seeds == 0) throw std::invalid_argument("config: eval_seeds must be >= 1");
    if (calibration_holdout < 0.0 || calibration_holdout >= 1.0) {
        throw std::invalid_argument("config: calibration_holdout must be in [0, 1)");
    }
    const bool continuous = env_kind == "pointmass";
    const ActionSpace want = continuous ? ActionSpace::continuous : ActionSpace::discrete;
    if (agent_model.action_space != want || treatment_model.action_space != want ||
        outcome_model.action_space != want) {
        throw std::invalid_argument("config: model action spaces must match the environment");
    }
}

namespace {

json fit_json(const FitConfig& f) {
    return {{"steps", f.steps}, {"batch_size", f.batch_size}, {"lr", f.lr}};
}

FitConfig fit_from(const json& j, FitConfig base) {
    base.steps = j.value("steps", base.steps);
    base.batch_size = j.value("batch_size", base.batch_size);
    base.lr = j.value("lr", base.lr);
    return base;
}

}  // namespace

std::string ExperimentConfig::to_json() const {
    json j;
    j["env_kind"] = env_kind;
    j["grid"] = json::parse(grid.to_json());
    j["pointmass"] = json::parse(pointmass.to_json());
    j["dataset"] = {{"ratio", ratio}, {"n_good", n_good}, {"seed", seed}};
    j["models"] = {{"agent", json::parse(agent_model.to_json())},
                   {"treatment", json::parse(treatment_model.to_json())},
                   {"outcome", json::parse(outcome_model.to_json())}};
    j["treatment_fit"] = fit_json(treatment_fit);
    j["outcome_fit"] = fit_json(outcome_fit);
    j["selection"] = json::parse(selection.to_json());
    j["agent_train"] = {{"batch_per_source", agent_train.batch_per_source},
                        {"steps", agent_train.steps},
                        {"lr", agent_train.lr}};
    j["eval"] = {{"target_return", eval.target_return},
                 {"episodes", eval.episodes},
                 {"start_jitter", eval.start_jitter}};
    j["buffer"] = {{"capacity", buffer_capacity},
                   {"attempt_budget", attempt_budget},
                   {"calibrate_variance_budget", calibrate_variance_budget},
                   {"calibration_holdout", calibration_holdout}};
    j["eval_seeds"] = eval_seeds;
    j["output_dir"] = output_dir;
    return j.dump(2);
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    ExperimentConfig cfg;
    cfg.env_kind = j.value("env_kind", cfg.env_kind);
    if (j.contains("grid")) cfg.grid = GridworldSpec::from_json(j["grid"].dump());
    if (j.contains("pointmass")) {
        cfg.pointmass = PointMassSpec::from_json(j["pointmass"].dump());
    }
    if (j.contains("dataset")) {
        cfg.ratio = j["dataset"].value("ratio", cfg.ratio);
        cfg.n_good = j["dataset"].value("n_good", cfg.n_good);
        cfg.seed = j["dataset"].value("seed", cfg.seed);
    }
    if (j.contains("models")) {
        const json& m = j["models"];
        if (m.contains("agent")) cfg.agent_model = ModelConfig::from_json(m["agent"].dump());
        if (m.contains("treatment")) {
            cfg.treatment_model = ModelConfig::from_json(m["treatment"].dump());
        }
        if (m.contains("outcome")) cfg.outcome_model = ModelConfig::from_json(m["outcome"].dump());
    }
    if (j.contains("treatment_fit")) {
        cfg.treatment_fit = fit_from(j["treatment_fit"], cfg.treatment_fit);
    }
    if (j.contains("outcome_fit")) cfg.outcome_fit = fit_from(j["outcome_fit"], cfg.outcome_fit);
    if (j.contains("selection")) cfg.selection = SelectionConfig::from_json(j["selection"].dump());
    if (j.contains("agent_train")) {
        const json& a = j["agent_train"];
        cfg.agent_train.batch_per_source =
            a.value("batch_per_source", cfg.agent_train.batch_per_source);
        cfg.agent_train.steps = a.value("steps", cfg.agent_train.steps);
        cfg.agent_train.lr = a.value("lr", cfg.agent_train.lr);
    }
    if (j.contains("eval")) {
        const json& e = j["eval"];
        cfg.eval.target_return = e.value("target_return", cfg.eval.target_return);
        cfg.eval.episodes = e.value("episodes", cfg.eval.episodes);
        cfg.eval.start_jitter = e.value("start_jitter", cfg.eval.start_jitter);
    }
    if (j.contains("buffer")) {
        const json& b = j["buffer"];
        cfg.buffer_capacity = b.value("capacity", cfg.buffer_capacity);
        cfg.attempt_budget = b.value("attempt_budget", cfg.attempt_budget);
        cfg.calibrate_variance_budget =
            b.value("calibrate_variance_budget", cfg.calibrate_variance_budget);
        cfg.calibration_holdout = b.value("calibration_holdout", cfg.calibration_holdout);
    }
    cfg.eval_seeds = j.value("eval_seeds", cfg.eval_seeds);
    cfg.output_dir = j.value("output_dir", cfg.output_dir);
    return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    ExperimentConfig cfg = from_json(ss.str());
    apply_env_overrides(cfg);
    return cfg;
}

void ExperimentConfig::apply_env_overrides(ExperimentConfig& cfg) {
    if (const char* s = std::getenv("CRDT_SEED")) {
        cfg.seed = static_cast<std::uint64_t>(std::strtoull(s, nullptr, 10));
    }
    if (const char* s = std::getenv("CRDT_OUTPUT_DIR")) {
        cfg.output_dir = s;
    }
}

std::string fnv1a_hex(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex;
    for (int i = 15; i >= 0; --i) {
        os << ((h >> (i * 4)) & 0xF);
    }
    return os.str();
}

std::string file_checksum(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checksum: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return fnv1a_hex(ss.str());
}

std::string ExperimentConfig::config_hash() const {
    return fnv1a_hex(to_json()).substr(0, 12);
}

namespace {

std::string manifest_path(const std::string& run_dir) { return run_dir + "/manifest.jsonl"; }

std::string iso_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t tt = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&tt));
    return buf;
}

}  // namespace

void manifest_append(const std::string& run_dir, const std::string& artifact,
                     const std::string& path) {
    json j;
    j["artifact"] = artifact;
    j["path"] = path;
    j["checksum"] = file_checksum(path);
    j["timestamp"] = iso_timestamp();
    j["version"] = kVersionString;
    std::ofstream out(manifest_path(run_dir), std::ios::app);
    if (!out) throw std::runtime_error("manifest: cannot append in " + run_dir);
    out << j.dump() << "\n";
}

std::vector<ManifestEntry> manifest_read(const std::string& run_dir) {
    std::vector<ManifestEntry> entries;
    std::ifstream in(manifest_path(run_dir));
    if (!in) return entries;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        entries.push_back({j.at("artifact").get<std::string>(), j.at("path").get<std::string>(),
                           j.at("checksum").get<std::string>(),
                           j.at("timestamp").get<std::string>(),
                           j.at("version").get<std::string>()});
    }
    return entries;
}

std::vector<std::string> manifest_verify(const std::string& run_dir) {
    std::vector<std::string> problems;
    for (const auto& e : manifest_read(run_dir)) {
        if (!std::filesystem::exists(e.path)) {
            problems.push_back("missing artifact: " + e.path);
            continue;
        }
        if (file_checksum(e.path) != e.checksum) {
            problems.push_back("checksum mismatch: " + e.path);
        }
    }
    return problems;
}

}  // namespace crdt
