#include "crdt/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "crdt/outcome.hpp"
#include "crdt/treatment.hpp"

namespace crdt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Rng stage_rng(const ExperimentConfig& cfg, const std::string& stage) {
    return Rng(cfg.seed).split(cfg.ratio).split(stage);
}

bool exists(const std::string& path) { return fs::exists(path); }

void ensure_dir(const std::string& dir) { fs::create_directories(dir); }

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("pipeline: cannot write " + path);
    out << text;
}

// Dataset as the models see it: per-dimension standardized states.
TrajectoryDataset load_normalized(const std::string& path) {
    TrajectoryDataset raw = read_trajectories(path);
    return raw.normalized ? raw : normalize_states(raw);
}

// Stride split for the variance calibration: every k-th trajectory is held
// out of treatment/outcome training.
std::pair<TrajectoryDataset, TrajectoryDataset> calibration_split(
    const TrajectoryDataset& full, double holdout_fraction) {
    TrajectoryDataset train = full;
    TrajectoryDataset held = full;
    train.trajectories.clear();
    held.trajectories.clear();
    const std::size_t stride =
        holdout_fraction <= 0.0
            ? 0
            : static_cast<std::size_t>(std::llround(1.0 / holdout_fraction));
    for (std::size_t i = 0; i < full.trajectories.size(); ++i) {
        if (stride > 0 && i % stride == 0) {
            held.trajectories.push_back(full.trajectories[i]);
        } else {
            train.trajectories.push_back(full.trajectories[i]);
        }
    }
    if (train.trajectories.empty()) train.trajectories = full.trajectories;
    if (held.trajectories.empty()) held.trajectories = full.trajectories;
    return {std::move(train), std::move(held)};
}

ModelConfig adapted(const ModelConfig& base, const ExperimentConfig& cfg) {
    ModelConfig m = base;
    if (cfg.env_kind == "pointmass") {
        m.action_space = ActionSpace::continuous;
    } else {
        m.action_space = ActionSpace::discrete;
        m.n_actions = kGridActionCount;
    }
    return m;
}

void append_results_row(const std::string& csv_path, std::size_t ratio,
                        const std::string& method, std::uint64_t seed,
                        const EvalReport& report) {
    const bool fresh = !fs::exists(csv_path);
    std::ofstream out(csv_path, std::ios::app);
    if (!out) throw std::runtime_error("pipeline: cannot append " + csv_path);
    if (fresh) out << "ratio,method,seed,success_rate,mean_return,std_return,episodes\n";
    out.precision(17);
    out << ratio << "," << method << "," << seed << "," << report.success_rate << ","
        << report.mean_return << "," << report.std_return << ","
        << report.episode_returns.size() << "\n";
}

}  // namespace

std::string run_dir_for(const ExperimentConfig& cfg) {
    // Ratio and seed vary within one experiment; exclude them from the hash
    // so all artifacts of a sweep share one directory.
    ExperimentConfig canon = cfg;
    canon.ratio = 0;
    canon.seed = 0;
    return cfg.output_dir + "/" + canon.config_hash();
}

std::string RunPaths::agent_ckpt(bool with_counterfactuals) const {
    return run_dir + "/agent_" + (with_counterfactuals ? "crdt" : "dt") + "_" + tag_ + ".json";
}

std::string RunPaths::agent_loss_csv(bool with_counterfactuals, const std::string& which) const {
    return run_dir + "/agent_" + (with_counterfactuals ? "crdt" : "dt") + "_" + tag_ + "_loss_" +
           which + ".csv";
}

std::string RunPaths::eval_report(bool with_counterfactuals) const {
    return run_dir + "/eval_" + (with_counterfactuals ? "crdt" : "dt") + "_" + tag_ + ".json";
}

RunPaths run_paths(const ExperimentConfig& cfg) {
    RunPaths p;
    p.run_dir = run_dir_for(cfg);
    p.tag_ = "r" + std::to_string(cfg.ratio) + "_s" + std::to_string(cfg.seed);
    const std::string t = p.tag_;
    p.dataset = p.run_dir + "/dataset_" + t + ".jsonl";
    p.treatment_ckpt = p.run_dir + "/treatment_" + t + ".json";
    p.outcome_ckpt = p.run_dir + "/outcome_" + t + ".json";
    p.treatment_loss_csv = p.run_dir + "/treatment_" + t + "_loss.csv";
    p.outcome_loss_csv = p.run_dir + "/outcome_" + t + "_loss.csv";
    p.buffer = p.run_dir + "/buffer_" + t + ".jsonl";
    p.buffer_stats = p.run_dir + "/buffer_" + t + "_stats.json";
    p.ledgers_csv = p.run_dir + "/buffer_" + t + "_ledgers.csv";
    p.results_csv = p.run_dir + "/results.csv";
    p.table_txt = p.run_dir + "/table.txt";
    return p;
}

std::string cmd_gen_data(const ExperimentConfig& cfg) {
    cfg.validate();
    RunPaths paths = run_paths(cfg);
    ensure_dir(paths.run_dir);
    const std::string cfg_path = paths.run_dir + "/config.json";
    if (!exists(cfg_path)) {
        ExperimentConfig canon = cfg;
        canon.ratio = 0;
        canon.seed = 0;
        write_text(cfg_path, canon.to_json());
        manifest_append(paths.run_dir, "config", cfg_path);
    }
    if (exists(paths.dataset)) return paths.dataset;

    Rng rng = stage_rng(cfg, "dataset");
    TrajectoryDataset ds = cfg.env_kind == "gridworld"
                               ? generate_biased_dataset(cfg.grid, cfg.ratio, cfg.n_good, rng)
                               : generate_biased_dataset(cfg.pointmass, cfg.ratio, cfg.n_good, rng);
    write_trajectories(paths.dataset, ds);
    manifest_append(paths.run_dir, "dataset", paths.dataset);
    return paths.dataset;
}

ModelArtifacts cmd_train_models(const ExperimentConfig& cfg) {
    RunPaths paths = run_paths(cfg);
    if (!exists(paths.dataset)) {
        throw std::runtime_error("train-models: dataset missing, run gen-data first (" +
                                 paths.dataset + ")");
    }
    ModelArtifacts out{paths.treatment_ckpt, paths.outcome_ckpt};
    if (exists(paths.treatment_ckpt) && exists(paths.outcome_ckpt)) return out;

    TrajectoryDataset full = load_normalized(paths.dataset);
    auto [train_split, held] = calibration_split(full, cfg.calibration_holdout);
    (void)held;

    if (!exists(paths.treatment_ckpt)) {
        TreatmentModel treatment(adapted(cfg.treatment_model, cfg));
        Rng init = stage_rng(cfg, "treatment-init");
        treatment.model().init_params(init);
        Rng fit_rng = stage_rng(cfg, "treatment-fit");
        TrainLog log = treatment.fit(train_split, cfg.treatment_fit, fit_rng);
        treatment.save(paths.treatment_ckpt);
        log.write_csv(paths.treatment_loss_csv);
        manifest_append(paths.run_dir, "treatment", paths.treatment_ckpt);
        manifest_append(paths.run_dir, "treatment_loss", paths.treatment_loss_csv);
    }
    if (!exists(paths.outcome_ckpt)) {
        OutcomeModel outcome(adapted(cfg.outcome_model, cfg));
        Rng init = stage_rng(cfg, "outcome-init");
        outcome.model().init_params(init);
        Rng fit_rng = stage_rng(cfg, "outcome-fit");
        TrainLog log = outcome.fit(train_split, cfg.outcome_fit, fit_rng);
        outcome.save(paths.outcome_ckpt);
        log.write_csv(paths.outcome_loss_csv);
        manifest_append(paths.run_dir, "outcome", paths.outcome_ckpt);
        manifest_append(paths.run_dir, "outcome_loss", paths.outcome_loss_csv);
    }
    return out;
}

CfArtifacts cmd_gen_cf(const ExperimentConfig& cfg) {
    RunPaths paths = run_paths(cfg);
    if (!exists(paths.treatment_ckpt) || !exists(paths.outcome_ckpt)) {
        throw std::runtime_error("gen-cf: model checkpoints missing, run train-models first");
    }
    CfArtifacts out;
    out.buffer = paths.buffer;
    out.stats = paths.buffer_stats;
    out.ledgers = paths.ledgers_csv;
    if (exists(paths.buffer) && exists(paths.buffer_stats)) {
        json stats = json::parse(std::ifstream(paths.buffer_stats));
        out.variance_budget_used = stats.value("variance_budget", 0.0);
        out.buffer_size = stats.value("buffer_size", std::size_t{0});
        return out;
    }

    TrajectoryDataset full = load_normalized(paths.dataset);
    auto [train_split, held] = calibration_split(full, cfg.calibration_holdout);
    (void)train_split;
    TreatmentModel treatment = TreatmentModel::load(paths.treatment_ckpt);
    OutcomeModel outcome = OutcomeModel::load(paths.outcome_ckpt);

    SelectionConfig sel = cfg.selection;
    if (cfg.calibrate_variance_budget && sel.ablation != AblationMode::no_uncertainty_gate) {
        Rng alpha_rng = stage_rng(cfg, "alpha-calibration");
        sel.variance_budget =
            calibrate_variance_budget(outcome, held, sel.mc_passes, 40, alpha_rng);
    }
    out.variance_budget_used = sel.variance_budget;

    CounterfactualEngine engine(treatment, outcome, full, sel);
    Rng pop_rng = stage_rng(cfg, "populate");
    auto [buffer, stats] = engine.populate(cfg.buffer_capacity, cfg.attempt_budget, pop_rng);
    out.buffer_size = buffer.trajectories.size();
    if (buffer.trajectories.empty()) {
        std::cerr << "gen-cf: warning: no successful rewrites within the attempt budget; "
                     "agent training will degrade to the plain backbone\n";
    }

    TrajectoryDataset buf_ds = full;
    buf_ds.trajectories = buffer.trajectories;
    write_trajectories(paths.buffer, buf_ds);
    manifest_append(paths.run_dir, "buffer", paths.buffer);

    json stats_json = json::parse(stats.to_json());
    stats_json["variance_budget"] = sel.variance_budget;
    stats_json["buffer_size"] = buffer.trajectories.size();
    stats_json["capacity"] = cfg.buffer_capacity;
    stats_json["ablation"] = json::parse(sel.to_json())["ablation"];
    stats_json["selection"] = json::parse(sel.to_json());
    write_text(paths.buffer_stats, stats_json.dump(2));
    manifest_append(paths.run_dir, "buffer_stats", paths.buffer_stats);

    std::ostringstream ledgers;
    ledgers << "buffer_index,step_offset,variance,cumulative\n";
    ledgers.precision(17);
    for (std::size_t i = 0; i < buffer.ledgers.size(); ++i) {
        double cum = 0.0;
        for (std::size_t k = 0; k < buffer.ledgers[i].entries.size(); ++k) {
            cum += buffer.ledgers[i].entries[k];
            ledgers << i << "," << k << "," << buffer.ledgers[i].entries[k] << "," << cum << "\n";
        }
    }
    write_text(paths.ledgers_csv, ledgers.str());
    manifest_append(paths.run_dir, "buffer_ledgers", paths.ledgers_csv);
    return out;
}

std::string cmd_train_agent(const ExperimentConfig& cfg, bool with_counterfactuals) {
    RunPaths paths = run_paths(cfg);
    if (!exists(paths.dataset)) {
        throw std::runtime_error("train-agent: dataset missing, run gen-data first");
    }
    const std::string ckpt = paths.agent_ckpt(with_counterfactuals);
    if (exists(ckpt)) return ckpt;

    TrajectoryDataset full = load_normalized(paths.dataset);
    CounterfactualBuffer buffer;
    if (with_counterfactuals) {
        if (!exists(paths.buffer)) {
            throw std::runtime_error("train-agent: buffer missing, run gen-cf first (or pass "
                                     "--no-cf for the plain backbone)");
        }
        TrajectoryDataset buf = read_trajectories(paths.buffer);
        buffer.trajectories = std::move(buf.trajectories);
        buffer.capacity = cfg.buffer_capacity;
    }

    AgentModel agent(adapted(cfg.agent_model, cfg));
    Rng init = stage_rng(cfg, "agent-init");
    agent.model().init_params(init);
    Rng train_rng = stage_rng(cfg, "agent-train");
    AgentTrainResult result =
        agent.train(full, with_counterfactuals ? &buffer : nullptr, cfg.agent_train, train_rng);
    agent.save(ckpt);
    manifest_append(paths.run_dir, with_counterfactuals ? "agent_crdt" : "agent_dt", ckpt);
    result.total.write_csv(paths.agent_loss_csv(with_counterfactuals, "total"));
    result.env_only.write_csv(paths.agent_loss_csv(with_counterfactuals, "env"));
    result.buffer_only.write_csv(paths.agent_loss_csv(with_counterfactuals, "crdt"));
    return ckpt;
}

EvalArtifacts cmd_eval(const ExperimentConfig& cfg, bool with_counterfactuals) {
    RunPaths paths = run_paths(cfg);
    const std::string ckpt = paths.agent_ckpt(with_counterfactuals);
    if (!exists(ckpt)) {
        throw std::runtime_error("eval: agent checkpoint missing: " + ckpt);
    }
    EvalArtifacts out;
    out.report_path = paths.eval_report(with_counterfactuals);
    if (exists(out.report_path)) {
        json j = json::parse(std::ifstream(out.report_path));
        out.report.episode_returns = j.at("episode_returns").get<std::vector<double>>();
        out.report.success_rate = j.at("success_rate").get<double>();
        out.report.mean_return = j.at("mean_return").get<double>();
        out.report.std_return = j.at("std_return").get<double>();
        out.report.seed = j.at("seed").get<std::uint64_t>();
        out.report.target_return = j.at("target_return").get<double>();
        return out;
    }

    TrajectoryDataset full = load_normalized(paths.dataset);
    AgentModel agent = AgentModel::load(ckpt);
    Rng eval_rng = stage_rng(cfg, "eval");
    out.report = cfg.env_kind == "gridworld"
                     ? agent.evaluate(cfg.grid, full, cfg.eval, eval_rng)
                     : agent.evaluate(cfg.pointmass, full, cfg.eval, eval_rng);
    write_text(out.report_path, out.report.to_json());
    manifest_append(paths.run_dir, with_counterfactuals ? "eval_crdt" : "eval_dt",
                    out.report_path);
    append_results_row(paths.results_csv, cfg.ratio,
                       with_counterfactuals ? "crdt" : "dt", cfg.seed, out.report);
    return out;
}

const ToyTableCell* ToyTable::cell(std::size_t ratio, const std::string& method) const {
    for (const auto& c : cells) {
        if (c.ratio == ratio && c.method == method) return &c;
    }
    return nullptr;
}

ToyTable cmd_repro_toy(const ExperimentConfig& base_cfg) {
    const auto t_start = std::chrono::steady_clock::now();
    ToyTable table;
    const std::size_t ratios[] = {10, 20, 50};
    for (std::size_t ratio : ratios) {
        ToyTableCell dt_cell{ratio, "dt", {}, 0.0, 0.0};
        ToyTableCell crdt_cell{ratio, "crdt", {}, 0.0, 0.0};
        for (std::size_t s = 0; s < base_cfg.eval_seeds; ++s) {
            ExperimentConfig cfg = base_cfg;
            cfg.ratio = ratio;
            cfg.seed = base_cfg.seed + s;
            const std::string stage_tag =
                "ratio " + std::to_string(ratio) + " seed " + std::to_string(cfg.seed);
            auto run_stage = [&](const char* name, auto&& fn) {
                try {
                    fn();
                } catch (const std::exception& e) {
                    throw std::runtime_error("repro-toy: stage " + std::string(name) + " (" +
                                             stage_tag + ") failed: " + e.what());
                }
            };
            run_stage("gen-data", [&] { cmd_gen_data(cfg); });
            run_stage("train-models", [&] { cmd_train_models(cfg); });
            run_stage("gen-cf", [&] { cmd_gen_cf(cfg); });
            run_stage("train-agent", [&] { cmd_train_agent(cfg, true); });
            run_stage("train-agent-baseline", [&] { cmd_train_agent(cfg, false); });
            run_stage("eval", [&] {
                crdt_cell.per_seed_success.push_back(cmd_eval(cfg, true).report.success_rate);
                dt_cell.per_seed_success.push_back(cmd_eval(cfg, false).report.success_rate);
            });
            std::cout << "repro-toy: finished " << stage_tag << " (crdt "
                      << crdt_cell.per_seed_success.back() << ", dt "
                      << dt_cell.per_seed_success.back() << ")\n";
        }
        for (ToyTableCell* cell : {&dt_cell, &crdt_cell}) {
            double mean = 0.0;
            for (double v : cell->per_seed_success) mean += v;
            mean /= static_cast<double>(cell->per_seed_success.size());
            double var = 0.0;
            for (double v : cell->per_seed_success) var += (v - mean) * (v - mean);
            cell->mean = mean;
            cell->stddev = std::sqrt(var / static_cast<double>(cell->per_seed_success.size()));
        }
        table.cells.push_back(std::move(dt_cell));
        table.cells.push_back(std::move(crdt_cell));
    }
    table.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

    ExperimentConfig cfg = base_cfg;
    RunPaths paths = run_paths(cfg);
    ensure_dir(paths.run_dir);
    write_text(paths.table_txt, format_toy_table(table));
    return table;
}

std::string format_toy_table(const ToyTable& table) {
    std::ostringstream os;
    os << "Dataset Ratio |     DT (mean+-std) |   CRDT (mean+-std)\n";
    os << "--------------+--------------------+-------------------\n";
    for (std::size_t ratio : {10u, 20u, 50u}) {
        const ToyTableCell* dt = table.cell(ratio, "dt");
        const ToyTableCell* crdt = table.cell(ratio, "crdt");
        if (!dt || !crdt) continue;
        char line[128];
        std::snprintf(line, sizeof(line), "%9zu:1   |    %.2f +- %.2f     |    %.2f +- %.2f\n",
                      ratio, dt->mean, dt->stddev, crdt->mean, crdt->stddev);
        os << line;
    }
    char wc[64];
    std::snprintf(wc, sizeof(wc), "wall clock: %.1f s\n", table.wall_clock_seconds);
    os << wc;
    return os.str();
}

}  // namespace crdt
